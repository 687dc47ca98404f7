"""Landscape demonstrations on generated instances.

Each ``check_*`` function builds its own seeded instances, runs the relevant
verdicts and returns a :class:`CheckResult` with the evidence. Instance
generators draw candidates from ``stream(seed, tag, i)`` for ``i = 0, 1, ...``
and keep the ones meeting their requirements, so the selection is
reproducible.
"""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .embedding import (
    EmbedKind,
    EmbedSpec,
    build_reparam_basis,
    embed,
    verify_function_equality,
)
from .errors import SemiflatError, SpecInvariantViolated
from .landscape import (
    ProbeConfig,
    Verdict,
    assemble_embedded_hessian,
    classify,
    classify_unit_replication_M1,
    compute_GF,
    compute_flat_radius,
    count_signs,
    line_search_decrease,
    make_report,
    probe_flat_subspace,
    probe_surplus_box,
    reparam_hessian,
    schur_direction,
    surplus_hessian_blocks,
    verify_stationary,
)
from .linalg import sym_eig
from .network import (
    Activation,
    Dataset,
    LossKind,
    NetworkParams,
    forward,
    hessian,
    kink_mask,
    output_jacobian,
)
from .pacbayes import PacBayesConfig, gaussian_kl, kl_relu, kl_smooth
from .rng import stream
from .trainer import TrainConfig, init_params, train

MAX_CANDIDATES = 400
F_NONZERO_TOL = 1e-8
FD_MAX_PARAM = 10.0


@dataclass(frozen=True, eq=False)
class CheckResult:
    name: str
    passed: bool
    evidence: dict = field(default_factory=dict)

    def to_dict(self):
        return {"name": self.name, "passed": bool(self.passed), "evidence": self.evidence}


@dataclass(frozen=True, eq=False)
class Instance:
    net: NetworkParams
    data: Dataset
    tag: int


def unit_ball(rng, n, d):
    """``n`` points uniform in the closed unit ball of ``R^d``."""
    g = rng.normal(size=(n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * rng.uniform(size=(n, 1)) ** (1.0 / d)


def _narrow_pd(net, data):
    ev = sym_eig(hessian(net, data)).eigenvalues
    _, n_neg, n_zero, _ = count_signs(ev)
    return n_neg == 0 and n_zero == 0


def _live(net, data):
    """Every ReLU unit is active on some sample and carries output weight."""
    z = data.inputs @ net.w[:, :-1].T - net.w[:, -1]
    return bool(np.all(np.any(z > 0.0, axis=0)) and np.all(np.any(net.v != 0.0, axis=1)))


def trained_minima(seed, tag, activation, count, dims, n_range, ball=False,
                   accept=lambda net, data: True, train_cfg=None):
    """First ``count`` trained minima passing ``accept``.

    ``dims(rng)`` returns ``(D, H0, M)``. Inputs are uniform on the cube or,
    with ``ball``, in the unit ball. Targets come from a random three-unit
    teacher plus ``N(0, 0.01)`` noise, so the fits keep a nonzero residual.
    """
    out = []
    for i in range(MAX_CANDIDATES):
        if len(out) == count:
            break
        rng = stream(seed, tag, i)
        d, h0, m = dims(rng)
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        x = unit_ball(rng, n, d) if ball else rng.uniform(-1.0, 1.0, size=(n, d))
        teacher = init_params(d, 3, m, activation, seed, scale=2.0, stream_id=50_000 + i)
        y = forward(teacher, x) + 0.1 * rng.normal(size=(n, m))
        data = Dataset(x, y, LossKind.SQUARED)
        cfg = train_cfg or TrainConfig(seed=i, restarts=2, max_iters=1000)
        try:
            res = train(init_params(d, h0, m, activation, seed, stream_id=10_000 + i), data, cfg)
        except SemiflatError:
            continue
        if not verify_stationary(res.params, data).passed:
            continue
        if accept(res.params, data):
            out.append(Instance(res.params, data, i))
    return out


def _g_pattern(g):
    n_pos, n_neg, n_zero, _ = count_signs(sym_eig(g).eigenvalues)
    if n_zero:
        return None
    return "indef" if n_pos and n_neg else ("pos" if n_pos else "neg")


def _g_of_residual(net, x, unit, r):
    return compute_GF(net, Dataset(x, forward(net, x) - r, LossKind.SQUARED), unit).G


def _steer(gs, sign, rng, iters=300):
    """Null-space weights pushing ``sign * sum_k c_k G_k`` toward definiteness.

    Projected subgradient ascent on the smallest eigenvalue over the unit
    sphere; returns the best weights and their normalized margin.
    """
    c = rng.normal(size=len(gs))
    c /= np.linalg.norm(c)
    best, best_margin = c, -np.inf
    for _ in range(iters):
        g = sign * np.tensordot(c, gs, axes=1)
        ev, vec = np.linalg.eigh(g)
        margin = ev[0] / max(np.abs(ev).max(), 1e-300)
        if margin > best_margin:
            best, best_margin = c.copy(), margin
        grad = np.array([sign * vec[:, 0] @ gk @ vec[:, 0] for gk in gs])
        c = c + 0.1 * grad / max(np.linalg.norm(grad), 1e-300)
        c /= np.linalg.norm(c)
    return best, best_margin


def planted_minimum(seed, key, d, h0, m, n, want, unit=None, size=0.05, tries=50):
    """Smooth minimum with a prescribed sign pattern of ``G`` at ``unit``.

    Residuals ``r`` in the null space of the output Jacobian transpose make a
    network exactly stationary for targets ``f(x) - r``. ``G`` is linear in
    ``r``; a definite ``G`` needs the replicated unit to be steep, so its
    input weights are drawn larger, and the null-space weights are steered
    toward the wanted pattern (pos, neg, indef or any). Scaling ``r`` to
    ``size`` keeps the Gauss-Newton term dominant. Draws come from
    ``stream(seed, *key)``. Returns ``None`` if no draw fits.
    """
    from scipy.linalg import null_space

    rng = stream(seed, *key)
    unit = h0 - 1 if unit is None else unit
    for _ in range(tries):
        w = rng.uniform(-1.5, 1.5, size=(h0, d + 1))
        w[unit] = rng.uniform(-4.0, 4.0, size=d + 1)
        net = NetworkParams(Activation.TANH, w, rng.uniform(-1.5, 1.5, size=(h0, m)))
        x = rng.uniform(-1.0, 1.0, size=(n, d))
        basis = null_space(output_jacobian(net, x).reshape(n * m, -1).T)
        if basis.shape[1] == 0:
            return None
        cols = [basis[:, k].reshape(n, m) for k in range(basis.shape[1])]
        gs = np.array([_g_of_residual(net, x, unit, r) for r in cols])
        if want in ("pos", "neg"):
            c, margin = _steer(gs, 1.0 if want == "pos" else -1.0, rng)
            if margin < 1e-3:
                continue
        else:
            c = rng.normal(size=len(cols))
        r = (basis @ c).reshape(n, m)
        r *= size / np.abs(r).max()
        data = Dataset(x, forward(net, x) - r, LossKind.SQUARED)
        gf = compute_GF(net, data, unit)
        if want != "any" and _g_pattern(gf.G) != want:
            continue
        if m > 1 and float(np.abs(gf.F).max()) <= F_NONZERO_TOL:
            continue
        if _narrow_pd(net, data) and verify_stationary(net, data).passed:
            return Instance(net, data, unit)
    return None


def zero_error_minima(seed, tag, activation, count):
    """Interpolating minima of small single-output problems."""
    out = []
    relu = Activation(activation) is Activation.RELU
    for i in range(MAX_CANDIDATES):
        if len(out) == count:
            break
        rng = stream(seed, tag, i)
        d = 1 if relu else int(rng.integers(1, 3))
        n = 4
        h0 = 4 if relu else 3
        x = rng.uniform(-1.0, 1.0, size=(n, d))
        data = Dataset(x, rng.normal(size=(n, 1)), LossKind.SQUARED)
        cfg = TrainConfig(target_loss=1e-26, require_target=True, seed=i, restarts=5,
                          relu_pattern_init=True)
        try:
            res = train(init_params(d, h0, 1, activation, seed, stream_id=10_000 + i), data, cfg)
        except SemiflatError:
            continue
        out.append(Instance(res.params, data, i))
    return out


def _random_lambda(rng, k):
    lam = rng.uniform(0.2, 1.0, size=k) * rng.choice([-1.0, 1.0], size=k)
    lam[-1] = 1.0 - lam[:-1].sum()
    if abs(lam[-1]) < 0.1:
        lam[-1] += 0.5
        lam[0] -= 0.5
    return lam


def _random_gamma_beta(rng, k):
    beta = rng.uniform(0.5, 2.0, size=k)
    gamma = rng.uniform(0.2, 1.0, size=k)
    return gamma / float(gamma @ beta), beta


def _small_dims(rng):
    return int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 4))


def check_function_equality(seed=0, nets=50, probes=64):
    """Every valid kind and activation pair reproduces the narrow function."""
    worst = 0.0
    combos = 0
    for act, kind in itertools.product(Activation, EmbedKind):
        if kind.relu_only and act is not Activation.RELU:
            continue
        combos += 1
        for i in range(nets):
            rng = stream(seed, 20, combos, i)
            d, h0, m = _small_dims(rng)
            k = int(rng.integers(1, 4))
            narrow = init_params(d, h0, m, act, seed, stream_id=20_000 + 100 * combos + i)
            kw = {}
            if kind is EmbedKind.REPLICATE:
                kw["lam"] = _random_lambda(rng, k + 1)
            elif kind is EmbedKind.REPLICATE_RELU:
                kw["gamma"], kw["beta"] = _random_gamma_beta(rng, k + 1)
            elif kind in (EmbedKind.INACTIVE_UNITS, EmbedKind.INACTIVE_UNITS_RELU):
                kw["v_extra"] = rng.normal(size=(k, m))
            elif kind is EmbedKind.INACTIVE_PROP:
                kw["w_extra"] = rng.normal(size=(k, d + 1))
            kw["unit"] = int(rng.integers(0, h0))
            wide = embed(narrow, EmbedSpec(kind, h0 + k, **kw))
            worst = max(worst, verify_function_equality(narrow, wide, probes, seed=i))
    return CheckResult("function_equality", worst <= 1e-12,
                       {"combinations": combos, "nets": nets, "max_deviation": worst})


def check_stationarity(seed=0, count=20):
    """Replication and inactive-both embeddings of smooth minima stay stationary."""
    insts = trained_minima(seed, 21, Activation.TANH, count, _small_dims, (6, 14))
    worst = 0.0
    all_pass = True
    for inst in insts:
        rng = stream(seed, 22, inst.tag)
        h0 = inst.net.hidden
        k = int(rng.integers(1, 6 - h0)) if h0 < 5 else 1
        specs = [
            EmbedSpec(EmbedKind.REPLICATE, h0 + k, lam=_random_lambda(rng, k + 1),
                      unit=int(rng.integers(0, h0))),
            EmbedSpec(EmbedKind.INACTIVE_BOTH, h0 + k),
        ]
        for spec in specs:
            st = verify_stationary(embed(inst.net, spec), inst.data)
            worst = max(worst, st.grad_norm)
            all_pass = all_pass and st.passed
    # nonzero residuals make the zero-weight unit's input gradient nonzero
    planted = planted_minimum(seed, (22, 10**6), 1, 1, 1, 12, "any")
    counter = None
    if planted is not None:
        wide = embed(planted.net, EmbedSpec(EmbedKind.INACTIVE_UNITS, planted.net.hidden + 1,
                                            v_extra=np.ones((1, planted.net.output_dim))))
        counter = verify_stationary(wide, planted.data)
    passed = (len(insts) == count and all_pass and counter is not None
              and not counter.passed)
    return CheckResult("stationarity", passed, {
        "instances": len(insts),
        "max_grad": worst,
        "inactive_units_grad": None if counter is None else counter.grad_norm,
    })


def _wide_dims(rng):
    d, m = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    return d, int(rng.integers(1, 4)), m


def check_hessian_assembly(seed=0, count=20):
    """Block assembly against brute-force Hessians in reparameterized coordinates."""
    # the fixed relative FD step loses accuracy on very steep units
    moderate = lambda net, data: float(np.abs(net.flat()).max()) <= FD_MAX_PARAM
    insts = trained_minima(seed, 23, Activation.TANH, count, _wide_dims, (6, 14),
                           accept=moderate)
    worst_rel = 0.0
    worst_cross = 0.0
    for inst in insts:
        rng = stream(seed, 24, inst.tag)
        h0 = inst.net.hidden
        k = int(rng.integers(1, 6 - h0)) if h0 < 5 else 1
        spec = EmbedSpec(EmbedKind.REPLICATE, h0 + k, lam=_random_lambda(rng, k + 1),
                         unit=int(rng.integers(0, h0))).resolved(h0)
        rep = assemble_embedded_hessian(inst.net, inst.data, spec)
        basis = build_reparam_basis(spec, h0)
        fd = reparam_hessian(rep.point, inst.data, basis, "fd")
        scale = 1.0 + float(np.abs(fd).max())
        worst_rel = max(worst_rel, float(np.abs(fd - rep.full).max()) / scale)
        exact = reparam_hessian(rep.point, inst.data, basis, "analytic")
        n0 = rep.layout["narrow"][1]
        worst_cross = max(worst_cross, float(np.abs(exact[:n0, n0:]).max(initial=0.0)))
    passed = len(insts) == count and worst_rel <= 1e-4 and worst_cross <= 1e-8
    return CheckResult("hessian_assembly", passed, {
        "instances": len(insts), "max_rel_error_fd": worst_rel, "max_cross_block": worst_cross,
    })


def _f_nonzero(net, data, r):
    f = compute_GF(net, data, r).F
    return float(np.abs(f).max()) > F_NONZERO_TOL


def check_saddle_creation(seed=0, count=5):
    """Replicating a unit with positive definite G and nonzero F gives a saddle."""
    rows = []
    for i in range(count):
        rng = stream(seed, 25, i)
        d, h0 = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        inst = planted_minimum(seed, (25, i), d, h0, 2, 16, "pos")
        if inst is None:
            rows.append({"index": i, "found": False})
            continue
        spec = EmbedSpec(EmbedKind.REPLICATE, h0 + 1, unit=inst.tag)
        rep = assemble_embedded_hessian(inst.net, inst.data, spec)
        verdict = classify(rep).verdict
        direction, value = schur_direction(rep)
        change = line_search_decrease(rep, direction, 1e-3)
        rows.append({"index": i, "found": True, "D": d, "H0": h0, "verdict": verdict.value,
                     "schur_eigenvalue": value, "loss_change": change})
    passed = all(row["found"] and row["verdict"] == Verdict.SADDLE.value
                 and row["loss_change"] < 0.0 for row in rows)
    return CheckResult("saddle_creation", passed, {"instances": rows})


M1_CASES = (
    ("1a", "pos", (0.6, 0.4)),
    ("1b", "pos", (1.5, -0.5)),
    ("2a", "neg", (1.5, -0.5)),
    ("2b", "neg", (0.6, 0.4)),
    ("3", "indef", (0.6, 0.4)),
)


def check_single_output_cases(seed=0):
    """Case table for single-output replication against numerical verdicts."""
    rows = []
    for i, (name, want, lam) in enumerate(M1_CASES):
        inst = planted_minimum(seed, (26, i), 1, 2, 1, 16, want)
        if inst is None:
            rows.append({"case": name, "found": False, "match": False})
            continue
        g = compute_GF(inst.net, inst.data, inst.tag).G
        predicted = classify_unit_replication_M1(g, lam)
        spec = EmbedSpec(EmbedKind.REPLICATE, inst.net.hidden + len(lam) - 1, lam=lam,
                         unit=inst.tag)
        verdict = classify(assemble_embedded_hessian(inst.net, inst.data, spec)).verdict
        match = (verdict.is_minimum if predicted.is_minimum else verdict is Verdict.SADDLE)
        rows.append({"case": name, "found": True, "predicted": predicted.value,
                     "numerical": verdict.value, "match": match})
    passed = all(row["match"] for row in rows)
    return CheckResult("single_output_cases", passed, {"cases": rows})


def _relu_dims(rng):
    return int(rng.integers(1, 3)), int(rng.integers(2, 4)), int(rng.integers(1, 3))


def check_relu_inactive_flat(seed=0, count=10, K=2.0):
    """ReLU inactive units: semi-flat verdict and a flat surplus box."""
    accept = lambda net, data: _live(net, data) and not np.any(kink_mask(net, data.inputs))
    insts = trained_minima(seed, 27, Activation.RELU, count, _relu_dims, (6, 12), ball=True,
                           accept=accept)
    rows = []
    for inst in insts:
        rng = stream(seed, 28, inst.tag)
        k = int(rng.integers(1, 4))
        wide = embed(inst.net, EmbedSpec(EmbedKind.INACTIVE_UNITS_RELU, inst.net.hidden + k,
                                         K=K, v_extra=rng.normal(size=(k, inst.net.output_dim))))
        v = classify(make_report(wide, inst.data))
        box = probe_surplus_box(wide, inst.data, inst.net.hidden, K, seed=inst.tag)
        rows.append({"tag": inst.tag, "verdict": v.verdict.value,
                     "probe_residual": v.probe_residual, "box_residual": box})
    passed = len(rows) == count and all(
        row["verdict"] == Verdict.SEMI_FLAT_MINIMUM.value and row["probe_residual"] <= 1e-12
        and row["box_residual"] <= 1e-12 for row in rows)
    return CheckResult("relu_inactive_flat", passed, {"instances": rows})


def check_relu_replication(seed=0, count=5):
    """Certified flat radius for eta moves and saddles when F is nonzero."""

    def accept(net, data):
        return (_live(net, data) and not np.any(kink_mask(net, data.inputs))
                and _f_nonzero(net, data, net.hidden - 1))

    dims = lambda rng: (int(rng.integers(1, 3)), int(rng.integers(2, 4)), 2)
    insts = trained_minima(seed, 29, Activation.RELU, count, dims, (6, 12), ball=True,
                           accept=accept)
    rows = []
    for inst in insts:
        rng = stream(seed, 30, inst.tag)
        k = int(rng.integers(1, 3))
        gamma, beta = _random_gamma_beta(rng, k + 1)
        spec = EmbedSpec(EmbedKind.REPLICATE_RELU, inst.net.hidden + k, gamma=gamma, beta=beta)
        rep = assemble_embedded_hessian(inst.net, inst.data, spec)
        basis = build_reparam_basis(spec.resolved(inst.net.hidden), inst.net.hidden)
        radius = compute_flat_radius(rep.point, inst.data, basis)
        lo, hi = rep.layout["eta"]
        eta_dirs = rep.transform[:, lo:hi]
        inside = probe_flat_subspace(rep.point, inst.data, eta_dirs, 0.99 * radius, seed=inst.tag)
        outside = probe_flat_subspace(rep.point, inst.data, eta_dirs, 10.0 * radius, seed=inst.tag)
        probe = ProbeConfig(radius=min(1e-3, 0.5 * radius))
        rows.append({"tag": inst.tag, "radius": radius, "inside_residual": inside,
                     "outside_residual": outside, "verdict": classify(rep, probe).verdict.value})
    passed = len(rows) == count and all(
        row["inside_residual"] <= 1e-12 and row["verdict"] == Verdict.SADDLE.value for row in rows)
    return CheckResult("relu_replication", passed, {"instances": rows})


ZERO_ERROR_KINDS = {
    Activation.TANH: (EmbedKind.INACTIVE_UNITS, EmbedKind.INACTIVE_PROP, EmbedKind.REPLICATE),
    Activation.RELU: (EmbedKind.INACTIVE_UNITS_RELU, EmbedKind.INACTIVE_PROP,
                      EmbedKind.REPLICATE_RELU),
}


def check_zero_error_blocks(seed=0, count=3):
    """Surplus Hessian blocks of zero-error embeddings follow their predicted pattern."""
    rows = []
    for act, kinds in ZERO_ERROR_KINDS.items():
        for inst in zero_error_minima(seed, 31, act, count):
            rng = stream(seed, 32, inst.tag)
            for kind in kinds:
                k = 2
                kw = {}
                if kind in (EmbedKind.INACTIVE_UNITS, EmbedKind.INACTIVE_UNITS_RELU):
                    kw["v_extra"] = rng.normal(size=(k, 1))
                elif kind is EmbedKind.INACTIVE_PROP:
                    kw["w_extra"] = rng.normal(size=(k, inst.net.input_dim + 1))
                spec = EmbedSpec(kind, inst.net.hidden + k, **kw)
                sb = surplus_hessian_blocks(embed(inst.net, spec), inst.data, spec, inst.net.hidden)
                scale = 1.0 if sb.predicted is None else 1.0 + float(np.abs(sb.predicted).max())
                rows.append({"activation": act.value, "kind": kind.value, "pattern": sb.pattern,
                             "violation": sb.violation,
                             "predicted_error": sb.predicted_error / scale,
                             "predicted_max": None if sb.predicted is None
                             else float(np.abs(sb.predicted).max())})
    patterns = {row["pattern"] for row in rows}
    passed = (len(rows) == 6 * count and {"S1", "S2", "S3", "zero"} <= patterns and all(
        row["violation"] <= 1e-8 and row["predicted_error"] <= 1e-8 for row in rows))
    return CheckResult("zero_error_blocks", passed, {"instances": rows})


def check_kl_oracle(seed=0, count=5, cfg=PacBayesConfig()):
    """Both KL pipelines against full-covariance Gaussian KL."""
    from scipy.linalg import block_diag

    rng = stream(seed, 33)
    worst = 0.0
    for _ in range(count):
        d0, dv, d1 = (int(rng.integers(2, 8)) for _ in range(3))
        h = _spd(rng, d0, 0.1, 10.0)
        s = _spd(rng, d1, 0.1, 10.0)
        theta = rng.normal(size=d0 + dv + d1)
        cov_q = block_diag(cfg.tau ** 2 * np.linalg.inv(h), cfg.sigma ** 2 * np.eye(dv),
                           cfg.tau ** 2 * np.linalg.inv(s))
        prior = cfg.sigma ** 2 * np.eye(theta.size)
        oracle = gaussian_kl(theta, cov_q, np.zeros_like(theta), prior)
        got = kl_smooth(h, s, float(np.linalg.norm(theta)), cfg=cfg).total
        worst = max(worst, abs(got - oracle) / abs(oracle))
        g = d0 + dv
        oracle = gaussian_kl(theta[:g], cov_q[:g, :g], np.zeros(g), prior[:g, :g])
        got = kl_relu(h, float(np.linalg.norm(theta[:g])), cfg=cfg).total
        worst = max(worst, abs(got - oracle) / abs(oracle))
    return CheckResult("kl_oracle", worst <= 1e-8, {"instances": count, "max_rel_error": worst})


def _spd(rng, d, lo, hi):
    q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    ev = np.exp(rng.uniform(math.log(lo), math.log(hi), size=d))
    m = (q * ev) @ q.T
    return 0.5 * (m + m.T)


def check_tampered_spec():
    """A replication weight of zero is rejected as a spec violation."""
    spec = EmbedSpec(EmbedKind.REPLICATE, 4, lam=(0.5, 0.5, 0.0))
    try:
        spec.validate(2, strict=True)
    except SpecInvariantViolated as exc:
        return CheckResult("tampered_spec", True, {"error": exc.code, "detail": exc.detail})
    return CheckResult("tampered_spec", False, {"error": None})


CHECKS = (
    check_function_equality,
    check_stationarity,
    check_hessian_assembly,
    check_saddle_creation,
    check_single_output_cases,
    check_relu_inactive_flat,
    check_relu_replication,
    check_zero_error_blocks,
    check_kl_oracle,
)
