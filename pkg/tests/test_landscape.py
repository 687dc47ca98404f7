import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from semiflat.embedding import (
    EmbedKind,
    EmbedSpec,
    build_reparam_basis,
    embed,
    reparam_jacobian,
    to_reparam,
)
from semiflat.errors import KinkHit, NotStationary, NotZeroError, ZeroEigenvalueG
from semiflat.landscape import (
    HessianReport,
    ProbeConfig,
    Verdict,
    assemble_embedded_hessian,
    classify,
    classify_unit_replication_M1,
    compute_GF,
    compute_flat_radius,
    count_signs,
    make_report,
    probe_flat_subspace,
    probe_surplus_box,
    reparam_hessian,
    surplus_hessian_blocks,
    verify_stationary,
)
from semiflat.linalg import kron, sym_eig
from semiflat.network import Dataset, NetworkParams, forward

from .conftest import random_data, random_net
from .test_network import ref

# G and F of unit 1 of the reference net, from tools/oracle_values.py
REF_G = [
    [-0.26085442945701320224, 0.099667342146712630914, 0.68353411932853992117],
    [0.099667342146712630914, -0.10042347345198342849, -0.079709762117000388012],
    [0.68353411932853992117, -0.079709762117000388012, -2.1352141817497059527],
]
REF_F = [[-0.31140249396986931106, -0.022932006953459924528, 1.3050449034521628939]]


def spectrum_report(eigs):
    m = np.diag(np.asarray(eigs, dtype=float))
    return HessianReport("original", m, sym_eig(m), None, None, np.eye(len(eigs)))


def interpolated(rng, d, h, m, act="tanh", n=6):
    net = random_net(rng, d, h, m, act)
    x = rng.uniform(-1, 1, size=(n, d))
    return net, Dataset(x, forward(net, x))


class TestGF:
    def test_frozen_reference(self):
        net, data = ref()
        gf = compute_GF(net, data, unit=1)
        np.testing.assert_allclose(gf.G, REF_G, rtol=1e-13)
        np.testing.assert_allclose(gf.F, REF_F, rtol=1e-13)

    def test_zero_error(self, rng):
        net, data = interpolated(rng, 2, 3, 2)
        gf = compute_GF(net, data)
        assert np.abs(gf.G).max() == 0.0 and np.abs(gf.F).max() == 0.0

    def test_relu_g_zero(self, rng):
        net = random_net(rng, 2, 3, 1, "relu")
        gf = compute_GF(net, random_data(rng, 6, 2, 1))
        assert np.abs(gf.G).max() == 0.0

    def test_relu_kink(self):
        net = NetworkParams("relu", [[1.0, 0.0]], [[1.0]])
        with pytest.raises(KinkHit):
            compute_GF(net, Dataset([[0.0]], [[1.0]]))

    @given(st.integers(0, 10**6))
    def test_blocks_match_fd(self, seed):
        # at any embedded point the eta/eta and xi/eta blocks are gram (x) G and gram (x) F
        rng = np.random.default_rng(seed)
        narrow = random_net(rng, 1, 2, 2)
        data = random_data(rng, 5, 1, 2)
        spec = EmbedSpec(EmbedKind.REPLICATE, 4, lam=[0.6, -0.3, 0.7], unit=0).resolved(2)
        basis = build_reparam_basis(spec, 2)
        h = reparam_hessian(embed(narrow, spec), data, basis, "fd")
        gf = compute_GF(narrow, data, 0)
        n0 = 2 * (2 + 2)
        nx = 2 * 2
        scale = 1.0 + np.abs(h).max()
        assert np.abs(h[n0 + nx:, n0 + nx:] - kron(basis.gram(), gf.G)).max() <= 1e-4 * scale
        assert np.abs(h[n0:n0 + nx, n0 + nx:] - kron(basis.gram(), gf.F)).max() <= 1e-4 * scale


class TestAssembly:
    def test_half_half_scaling(self, rng):
        net = random_net(rng, 1, 1, 1)
        x = rng.uniform(-1, 1, (4, 1))
        rep = assemble_embedded_hessian(net, Dataset(x, forward(net, x)),
                                        EmbedSpec(EmbedKind.REPLICATE, 2, lam=[0.5, 0.5]))
        assert rep.blocks["gram"].shape == (1, 1)
        assert rep.blocks["gram"][0, 0] == pytest.approx(0.5, rel=1e-15)
        np.testing.assert_allclose(rep.blocks["tildeG"], 0.5 * rep.blocks["G"], rtol=1e-15)
        np.testing.assert_allclose(rep.blocks["tildeF"], 0.5 * rep.blocks["F"], rtol=1e-15)

    def test_zero_error_layout(self, rng):
        net, data = interpolated(rng, 2, 2, 2)
        rep = assemble_embedded_hessian(net, data, EmbedSpec(EmbedKind.REPLICATE, 4))
        lo = rep.layout["xi"][0]
        assert np.abs(rep.full[lo:, lo:]).max() <= 1e-8
        assert np.abs(rep.full[:lo, lo:]).max() == 0.0

    def test_matches_fd(self, rng):
        net, data = interpolated(rng, 2, 2, 1)
        spec = EmbedSpec(EmbedKind.REPLICATE, 3, lam=[0.2, 0.8]).resolved(2)
        rep = assemble_embedded_hessian(net, data, spec)
        fd = reparam_hessian(rep.point, data, build_reparam_basis(spec, 2), "fd")
        assert np.abs(fd - rep.full).max() <= 1e-4 * (1 + np.abs(fd).max())

    def test_not_stationary(self, rng):
        net = random_net(rng, 1, 2, 1)
        with pytest.raises(NotStationary):
            assemble_embedded_hessian(net, random_data(rng, 5, 1, 1), EmbedSpec(EmbedKind.REPLICATE, 3))

    def test_report_dict(self, rng):
        net, data = interpolated(rng, 1, 2, 1)
        out = make_report(net, data).to_dict()
        assert out["coords"] == "original" and out["dim"] == net.n_params


class TestStationary:
    def test_interpolant(self, rng):
        net, data = interpolated(rng, 2, 2, 1)
        st_ = verify_stationary(embed(net, EmbedSpec(EmbedKind.REPLICATE, 4)), data)
        assert st_.passed and st_.loss == pytest.approx(0.0, abs=1e-25)

    def test_random_point_fails(self, rng):
        assert not verify_stationary(random_net(rng, 1, 2, 1), random_data(rng, 5, 1, 1)).passed


class TestClassify:
    def test_saddle(self):
        assert classify(spectrum_report([1.0, -1.0])).verdict is Verdict.SADDLE

    def test_minimum(self):
        v = classify(spectrum_report([0.1, 0.5, 3.0]))
        assert v.verdict is Verdict.MINIMUM and v.n_pos == 3

    def test_degenerate_negative(self):
        assert classify(spectrum_report([-1.0, -2.0])).verdict is Verdict.DEGENERATE

    def test_counts(self):
        n_pos, n_neg, n_zero, eps = count_signs([1.0, 1e-10, -1e-10, -3.0])
        assert (n_pos, n_neg, n_zero) == (1, 1, 2) and eps == pytest.approx(3e-8)

    def test_scale_invariant(self, rng):
        m = rng.normal(size=(5, 5))
        m = m + m.T
        for c in (1e-3, 1.0, 7.0, 1e6):
            v = classify(spectrum_report(np.linalg.eigvalsh(c * m)))
            assert v.verdict is Verdict.SADDLE

    def test_relu_inactive_semiflat(self, rng):
        net, data = interpolated(rng, 1, 2, 1, "relu")
        x = data.inputs / np.abs(data.inputs).max()
        data = Dataset(x, forward(net, x))
        if np.any(np.abs(np.hstack([x, -np.ones_like(x)]) @ net.w.T) < 1e-3):
            pytest.skip("sample near a kink")
        wide = embed(net, EmbedSpec(EmbedKind.INACTIVE_UNITS_RELU, 4, v_extra=[[0.3], [-2.0]]))
        v = classify(make_report(wide, data))
        assert v.verdict is Verdict.SEMI_FLAT_MINIMUM
        assert v.n_zero >= 2 * (1 + 1 + 1)


class TestCaseTable:
    def test_1a(self):
        assert classify_unit_replication_M1(np.eye(2), [0.3, 0.7]) is Verdict.MINIMUM

    def test_1b(self):
        assert classify_unit_replication_M1(np.eye(2), [1.5, -0.5]) is Verdict.SADDLE

    def test_2a_2b(self):
        assert classify_unit_replication_M1(-np.eye(2), [1.5, -0.5]) is Verdict.MINIMUM
        assert classify_unit_replication_M1(-np.eye(2), [0.3, 0.7]) is Verdict.SADDLE

    def test_3(self):
        for lam in ([0.3, 0.7], [1.5, -0.5], [0.2, 0.2, 0.6]):
            assert classify_unit_replication_M1(np.diag([1.0, -1.0]), lam) is Verdict.SADDLE

    def test_singular(self):
        with pytest.raises(ZeroEigenvalueG):
            classify_unit_replication_M1(np.diag([1.0, 0.0]), [0.5, 0.5])


class TestFlatProbes:
    def relu_case(self):
        narrow = NetworkParams("relu", [[1.0, -0.5]], [[2.0]])
        data = Dataset([[0.0]], [[1.0]])
        spec = EmbedSpec(EmbedKind.REPLICATE_RELU, 2).resolved(1)
        return narrow, data, spec, build_reparam_basis(spec, 1)

    def test_radius_bound(self):
        narrow, data, spec, basis = self.relu_case()
        assert np.abs(basis.A).sum(axis=0).max() <= np.sqrt(2)
        assert compute_flat_radius(embed(narrow, spec), data, basis) >= 0.35

    def test_probe_inside_and_outside(self):
        narrow, data, spec, basis = self.relu_case()
        wide = embed(narrow, spec)
        delta = compute_flat_radius(wide, data, basis)
        rep = assemble_embedded_hessian(narrow, data, spec)
        lo, hi = rep.layout["eta"]
        dirs = rep.transform[:, lo:hi]
        assert probe_flat_subspace(wide, data, dirs, 0.99 * delta) <= 1e-12
        assert probe_flat_subspace(wide, data, dirs, 10 * delta, samples=64) > 0.0

    def test_kink_error(self):
        narrow = NetworkParams("relu", [[1.0, 0.0]], [[2.0]])
        spec = EmbedSpec(EmbedKind.REPLICATE_RELU, 2).resolved(1)
        with pytest.raises(KinkHit):
            compute_flat_radius(embed(narrow, spec), Dataset([[0.0]], [[0.0]]),
                                build_reparam_basis(spec, 1))

    def test_xi_flat(self, rng):
        narrow = random_net(rng, 2, 2, 1)
        data = random_data(rng, 5, 2, 1)
        spec = EmbedSpec(EmbedKind.REPLICATE, 4, lam=[0.5, 0.9, -0.4]).resolved(2)
        wide = embed(narrow, spec)
        t = reparam_jacobian(build_reparam_basis(spec, 2), wide)
        n0 = 2 * 4
        dirs = t[:, n0:n0 + 2]
        assert probe_flat_subspace(wide, data, dirs, 0.5) <= 1e-12 * (1 + 10)

    def test_tanh_eta_curved(self, rng):
        narrow, data = interpolated(rng, 1, 2, 1)
        data = Dataset(data.inputs, data.targets + 0.3)
        spec = EmbedSpec(EmbedKind.REPLICATE, 3).resolved(2)
        wide = embed(narrow, spec)
        t = reparam_jacobian(build_reparam_basis(spec, 2), wide)
        assert probe_flat_subspace(wide, data, t[:, -2:], 1e-2) > 0.0

    def test_relu_box(self, rng):
        narrow = random_net(rng, 2, 2, 1, "relu")
        x = rng.normal(size=(8, 2))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        data = random_data(rng, 8, 2, 1)
        data = Dataset(x, data.targets)
        wide = embed(narrow, EmbedSpec(EmbedKind.INACTIVE_UNITS_RELU, 5))
        assert probe_surplus_box(wide, data, 2, 2.0) <= 1e-12

    def test_probe_config_default(self):
        assert ProbeConfig().radius == 1e-3 and ProbeConfig().samples == 32


class TestSurplusBlocks:
    def test_relu_inactive_zero(self, rng):
        net, data = interpolated(rng, 1, 2, 1, "relu")
        x = data.inputs / np.abs(data.inputs).max()
        data = Dataset(x, forward(net, x))
        wide = embed(net, EmbedSpec(EmbedKind.INACTIVE_UNITS_RELU, 4, v_extra=[[1.0], [2.0]]))
        blocks = surplus_hessian_blocks(wide, data, EmbedKind.INACTIVE_UNITS_RELU, 2)
        assert blocks.pattern == "zero" and blocks.violation <= 1e-8

    def test_tanh_inactive_units_s1(self, rng):
        net, data = interpolated(rng, 2, 2, 1)
        wide = embed(net, EmbedSpec(EmbedKind.INACTIVE_UNITS, 4, v_extra=[[1.0], [-0.5]]))
        blocks = surplus_hessian_blocks(wide, data, EmbedKind.INACTIVE_UNITS, 2, method="fd")
        assert blocks.pattern == "S1"
        assert blocks.violation <= 1e-8
        assert np.abs(blocks.ww).max() > 1e-3
        assert blocks.predicted_error <= 1e-5

    def test_tanh_inactive_prop_s2(self, rng):
        net, data = interpolated(rng, 2, 2, 1)
        w_extra = rng.normal(size=(2, 3))
        wide = embed(net, EmbedSpec(EmbedKind.INACTIVE_PROP, 4, w_extra=w_extra))
        blocks = surplus_hessian_blocks(wide, data, EmbedKind.INACTIVE_PROP, 2)
        phi = np.tanh(np.hstack([data.inputs, -np.ones((6, 1))]) @ w_extra.T)
        np.testing.assert_allclose(blocks.vv, phi.T @ phi, atol=1e-12)
        assert np.linalg.eigvalsh(blocks.vv).min() >= -1e-12

    def test_not_zero_error(self, rng):
        wide = embed(random_net(rng, 1, 2, 1), EmbedSpec(EmbedKind.INACTIVE_BOTH, 3))
        with pytest.raises(NotZeroError):
            surplus_hessian_blocks(wide, random_data(rng, 4, 1, 1), EmbedKind.INACTIVE_BOTH, 2)

    def test_replication_zero(self, rng):
        net, data = interpolated(rng, 1, 2, 1)
        wide = embed(net, EmbedSpec(EmbedKind.REPLICATE, 3))
        assert to_reparam(wide, build_reparam_basis(EmbedSpec(EmbedKind.REPLICATE, 3), 2)).xi.shape == (1, 1)
        blocks = surplus_hessian_blocks(wide, data, EmbedKind.REPLICATE, 2)
        assert blocks.violation <= 1e-8
