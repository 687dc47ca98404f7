"""Hessian structure, stationarity and critical-point classification at embedded points.

At a replicated embedding, the Hessian in the ``(narrow, xi, eta)``
coordinates of :mod:`semiflat.embedding` is block diagonal::

    [ H_narrow   0     0  ]
    [    0       0     F~ ]
    [    0      F~^T   G~ ]

with ``F~ = (A diag(w) A^T) kron F`` and ``G~ = (A diag(w) A^T) kron G`` built
from the narrow model alone. The functions below build that matrix, compare
it with brute-force Hessians, and classify points by their spectra backed by
exact flatness probes.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .embedding import EmbedKind, build_reparam_basis, embed, reparam_jacobian
from .errors import (
    KinkHit,
    NotStationary,
    NotZeroError,
    SpecInvariantViolated,
    ZeroEigenvalueG,
)
from .linalg import kron, sym_eig
from .network import (
    Activation,
    augment,
    backprop,
    fd_hessian,
    forward,
    hessian,
    kink_mask,
    loss_derivatives,
    loss_total,
)
from .rng import stream

EIG_REL_TOL = 1e-8
STATIONARY_TOL = 1e-7
FLAT_TOL = 1e-12
ZERO_LOSS = 1e-20


class Verdict(str, Enum):
    MINIMUM = "Minimum"
    SEMI_FLAT_MINIMUM = "SemiFlatMinimum"
    SADDLE = "Saddle"
    DEGENERATE = "Degenerate"

    @property
    def is_minimum(self):
        return self in (Verdict.MINIMUM, Verdict.SEMI_FLAT_MINIMUM)


@dataclass(frozen=True)
class GFPair:
    G: np.ndarray  # (D+1, D+1)
    F: np.ndarray  # (M, D+1)


def compute_GF(narrow, data, unit=None):
    """The matrices G and F of the replicated unit at a narrow point.

    ``G = sum_nu (l'_nu . zeta) phi''(u . x~_nu) x~ x~^T`` and
    ``F = sum_nu l'_nu (phi'(u . x~_nu) x~_nu)^T``.
    """
    r = narrow.hidden - 1 if unit is None else unit
    u, zeta = narrow.w[r], narrow.v[r]
    xa = augment(data.inputs)
    if narrow.activation is Activation.RELU and np.any(kink_mask(narrow, data.inputs)[:, r]):
        raise KinkHit(f"replicated unit {r} has a sample on its kink")
    z = xa @ u
    d1, _ = loss_derivatives(forward(narrow, data.inputs), data)
    act = narrow.activation
    g = (xa * ((d1 @ zeta) * act.ddphi(z))[:, None]).T @ xa
    f = d1.T @ (xa * act.dphi(z)[:, None])
    return GFPair(0.5 * (g + g.T), f)


@dataclass(frozen=True, eq=False)
class StationarityCheck:
    grad_norm: float
    loss: float
    passed: bool


def verify_stationary(net, data, tol=STATIONARY_TOL):
    """Pass when ``max |grad| <= tol * (1 + loss)``."""
    rep = backprop(net, data)
    gnorm = float(np.max(np.abs(rep.grad)))
    return StationarityCheck(gnorm, rep.loss, gnorm <= tol * (1.0 + rep.loss))


def _loss_hessian(net, data, method):
    if method == "analytic":
        return hessian(net, data)
    if method == "fd":
        return fd_hessian(net, data)
    raise ValueError(f"unknown Hessian method {method!r}")


@dataclass(frozen=True, eq=False)
class HessianReport:
    """A Hessian with its spectrum and the point it was taken at.

    ``transform`` maps report coordinates to flat parameters of ``point``
    (identity for ``coords == "original"``). ``blocks`` holds named pieces:
    ``narrow_hessian``, ``tildeF``, ``tildeG``, ``gram``, ``G``, ``F``.
    """

    coords: str
    full: np.ndarray
    eig: object
    point: object
    data: object
    transform: np.ndarray
    blocks: dict = field(default_factory=dict)
    layout: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "coords": self.coords,
            "dim": int(self.full.shape[0]),
            "eigenvalues": self.eig.eigenvalues,
            "layout": self.layout,
        }


def make_report(net, data, method="analytic"):
    """Hessian report in the original flat coordinates of ``net``."""
    h = _loss_hessian(net, data, method)
    return HessianReport("original", h, sym_eig(h), net, data, np.eye(h.shape[0]))


def assemble_embedded_hessian(narrow, data, spec, narrow_method="analytic", tol=STATIONARY_TOL):
    """Block Hessian of a replicated embedding from narrow-model quantities.

    The narrow block comes from :func:`semiflat.network.hessian` (or its
    finite-difference oracle when ``narrow_method == "fd"``); the remaining
    blocks are analytic Kronecker products.
    """
    if not spec.kind.replicates:
        raise SpecInvariantViolated(f"{spec.kind.value} is not a replication")
    st = verify_stationary(narrow, data, tol)
    if not st.passed:
        raise NotStationary(f"max |grad| = {st.grad_norm:.3e} at loss {st.loss:.3e}")
    spec = spec.resolved(narrow.hidden)
    basis = build_reparam_basis(spec, narrow.hidden)
    wide = embed(narrow, spec)
    gf = compute_GF(narrow, data, spec.unit)
    gram = basis.gram()
    tg = kron(gram, gf.G)
    tf = kron(gram, gf.F)
    hn = _loss_hessian(narrow, data, narrow_method)
    n0, nx, ne = hn.shape[0], tf.shape[0], tg.shape[0]
    full = np.zeros((n0 + nx + ne,) * 2)
    full[:n0, :n0] = hn
    full[n0:n0 + nx, n0 + nx:] = tf
    full[n0 + nx:, n0:n0 + nx] = tf.T
    full[n0 + nx:, n0 + nx:] = tg
    blocks = {"narrow_hessian": hn, "tildeF": tf, "tildeG": tg, "gram": gram,
              "G": gf.G, "F": gf.F}
    layout = {"narrow": [0, n0], "xi": [n0, n0 + nx], "eta": [n0 + nx, n0 + nx + ne]}
    return HessianReport("reparam", full, sym_eig(full), wide, data,
                         reparam_jacobian(basis, wide), blocks, layout)


def reparam_hessian(wide, data, basis, method="fd"):
    """Hessian of the wide loss carried into reparameterized coordinates.

    ``T^T H T`` with ``T`` from :func:`semiflat.embedding.reparam_jacobian`;
    exact because the coordinate change is linear.
    """
    t = reparam_jacobian(basis, wide)
    return t.T @ _loss_hessian(wide, data, method) @ t


@dataclass(frozen=True, eq=False)
class ProbeConfig:
    """Flat-probe settings for :func:`classify`.

    ``directions`` are columns in report coordinates (default: the detected
    zero eigenvectors). ``rescale`` additionally moves ReLU units along their
    exact rescaling orbits (default: on for ReLU points).
    """

    directions: np.ndarray = None
    radius: float = 1e-3
    samples: int = 32
    seed: int = 0
    tol: float = FLAT_TOL
    rescale: bool = None


@dataclass(frozen=True, eq=False)
class LandscapeVerdict:
    verdict: Verdict
    n_pos: int
    n_neg: int
    n_zero: int
    eps: float
    flat_basis: np.ndarray
    probe_residual: float = None

    def to_dict(self):
        return {
            "class": self.verdict.value,
            "n_pos": self.n_pos,
            "n_neg": self.n_neg,
            "n_zero": self.n_zero,
            "eps": self.eps,
            "probe_residual": self.probe_residual,
        }


def count_signs(eigenvalues, rel=EIG_REL_TOL):
    eigenvalues = np.asarray(eigenvalues)
    eps = rel * max(1.0, float(np.max(np.abs(eigenvalues)))) if eigenvalues.size else rel
    n_pos = int(np.sum(eigenvalues > eps))
    n_neg = int(np.sum(eigenvalues < -eps))
    return n_pos, n_neg, eigenvalues.size - n_pos - n_neg, eps


def _rescalable_units(net):
    return [j for j in range(net.hidden) if np.any(net.w[j] != 0.0)]


def probe_flat_subspace(net, data, directions, radius, samples=32, seed=0, rescale_units=()):
    """Largest loss change over random points ``theta + directions @ c``.

    ``c`` is uniform on the sphere of the given radius in coefficient space,
    so the columns need not be orthonormal. Units listed in ``rescale_units``
    are then moved along their ReLU rescaling orbits
    ``(e^s w_j, e^-s v_j)`` with ``|s| <= radius``.
    """
    directions = np.asarray(directions, dtype=np.float64)
    if directions.ndim == 1:
        directions = directions[:, None]
    if not radius > 0.0:
        raise ValueError("radius must be positive")
    base = loss_total(net, data)
    theta = net.flat()
    if directions.shape[1] == 0 and not rescale_units:
        return 0.0
    rng = stream(seed, 2)
    worst = 0.0
    for _ in range(samples):
        if directions.shape[1]:
            c = rng.normal(size=directions.shape[1])
            c *= radius / np.linalg.norm(c)
            moved = net.with_flat(theta + directions @ c)
        else:
            moved = net
        if rescale_units:
            s = rng.uniform(-radius, radius, size=len(rescale_units))
            w, v = moved.w.copy(), moved.v.copy()
            for j, sj in zip(rescale_units, s):
                w[j] *= np.exp(sj)
                v[j] *= np.exp(-sj)
            moved = moved.replace(w=w, v=v)
        worst = max(worst, abs(loss_total(moved, data) - base))
    return worst


def probe_surplus_box(net, data, narrow_hidden, K, samples=32, seed=0, v_scale=10.0):
    """Largest loss change with the surplus units redrawn inside the ReLU box.

    Each surplus unit gets ``||w_wgt|| <= K`` (uniform in the ball),
    ``K <= w_bias <= 3K`` and output weights ``N(0, v_scale^2)``. With every
    input in the unit ball these units stay silent on the data.
    """
    base = loss_total(net, data)
    k = net.hidden - narrow_hidden
    if k <= 0:
        return 0.0
    d, m = net.input_dim, net.output_dim
    rng = stream(seed, 3)
    worst = 0.0
    for _ in range(samples):
        g = rng.normal(size=(k, d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        r = K * rng.uniform(size=(k, 1)) ** (1.0 / d)
        w_new = np.hstack([g * r, rng.uniform(K, 3.0 * K, size=(k, 1))])
        v_new = v_scale * rng.normal(size=(k, m))
        moved = net.replace(w=np.vstack([net.w[:narrow_hidden], w_new]),
                            v=np.vstack([net.v[:narrow_hidden], v_new]))
        worst = max(worst, abs(loss_total(moved, data) - base))
    return worst


def _symmetry_tangents(net, units):
    p = net.n_params
    cols = []
    for j in units:
        t = np.zeros(p)
        t[net.w_slice(j)] = net.w[j]
        t[net.v_slice(j)] = -net.v[j]
        cols.append(t / np.linalg.norm(t))
    return np.array(cols).T.reshape(p, len(cols))


def _complement_in_span(z, s):
    """Orthonormal basis of span(z) with the directions of span(s) removed."""
    if s.shape[1] == 0 or z.shape[1] == 0:
        return z
    q, _ = np.linalg.qr(s)
    resid = z - q @ (q.T @ z)
    u, sv, _ = np.linalg.svd(resid, full_matrices=False)
    keep = sv > 1e-6 * max(1.0, sv.max(initial=0.0))
    return u[:, keep]


def classify(report, flat_probe=None):
    """Verdict from the spectrum of ``report`` plus an exact flatness probe.

    Eigenvalues within ``eps = 1e-8 * max(1, max|eig|)`` of zero count as
    zero. Mixed signs give Saddle, a positive definite spectrum gives
    Minimum. With zeros and no negatives, the zero directions are probed:
    SemiFlatMinimum if the loss stays within ``tol * (1 + L)``, otherwise
    Degenerate. Only negative and zero eigenvalues also give Degenerate.
    """
    eig = report.eig
    n_pos, n_neg, n_zero, eps = count_signs(eig.eigenvalues)
    flat = eig.eigenvectors[:, np.abs(eig.eigenvalues) <= eps]
    if n_neg and n_pos:
        return LandscapeVerdict(Verdict.SADDLE, n_pos, n_neg, n_zero, eps, flat)
    if n_neg:
        return LandscapeVerdict(Verdict.DEGENERATE, n_pos, n_neg, n_zero, eps, flat)
    if n_zero == 0:
        return LandscapeVerdict(Verdict.MINIMUM, n_pos, n_neg, n_zero, eps, flat)

    cfg = flat_probe or ProbeConfig()
    net, data = report.point, report.data
    dirs = report.transform @ (flat if cfg.directions is None else cfg.directions)
    rescale = cfg.rescale
    if rescale is None:
        rescale = net.activation is Activation.RELU
    units = _rescalable_units(net) if rescale else []
    if units:
        # orbit directions are probed exactly along the orbit, not the tangent
        dirs = _complement_in_span(dirs, _symmetry_tangents(net, units))
    resid = probe_flat_subspace(net, data, dirs, cfg.radius, cfg.samples, cfg.seed, units)
    base = loss_total(net, data)
    ok = resid <= cfg.tol * (1.0 + base)
    verdict = Verdict.SEMI_FLAT_MINIMUM if ok else Verdict.DEGENERATE
    return LandscapeVerdict(verdict, n_pos, n_neg, n_zero, eps, flat, resid)


def classify_unit_replication_M1(G, lam, narrow_hessian_pd=True):
    """Case table for a single-output replicated minimum.

    Returns Minimum or Saddle from the sign pattern of ``G`` and ``lam``.
    """
    lam = np.asarray(lam, dtype=np.float64)
    if abs(lam.sum() - 1.0) > 1e-12 or np.any(lam == 0.0):
        raise SpecInvariantViolated("lambda must sum to 1 with nonzero entries")
    if not narrow_hessian_pd:
        raise SpecInvariantViolated("the case table needs a positive definite narrow Hessian")
    n_pos, n_neg, n_zero, _ = count_signs(sym_eig(G).eigenvalues)
    if n_zero:
        raise ZeroEigenvalueG(f"G has {n_zero} eigenvalues at the zero threshold")
    if n_pos and n_neg:
        return Verdict.SADDLE
    positives = int(np.sum(lam > 0))
    if n_pos:
        return Verdict.MINIMUM if positives == lam.size else Verdict.SADDLE
    return Verdict.MINIMUM if positives == 1 else Verdict.SADDLE


def schur_direction(report):
    """Descent direction of a replicated saddle, in report coordinates.

    ``xi = s`` with ``s`` the most negative eigenvector of
    ``-F~ G~^{-1} F~^T`` and ``eta = -G~^{-1} F~^T s``. The quadratic form
    along it equals that eigenvalue.
    """
    tf, tg = report.blocks["tildeF"], report.blocks["tildeG"]
    schur = -tf @ np.linalg.solve(tg, tf.T)
    e = sym_eig(schur)
    s = e.eigenvectors[:, 0]
    eta = -np.linalg.solve(tg, tf.T @ s)
    d = np.zeros(report.full.shape[0])
    lo, mid = report.layout["xi"]
    d[lo:mid] = s
    d[mid:] = eta
    return d / np.linalg.norm(d), float(e.eigenvalues[0])


def line_search_decrease(report, direction, step=1e-3):
    """Loss change after moving ``step`` along a report-coordinate direction."""
    net = report.point
    moved = net.with_flat(net.flat() + step * (report.transform @ direction))
    return loss_total(moved, report.data) - loss_total(net, report.data)


def compute_flat_radius(wide, data, basis):
    """Certified radius for eta moves that keep every ReLU sign pattern.

    ``min over samples nu and block units j`` of
    ``|u . x~_nu| / (||x~_nu|| * sum_c |A[c, j]|)`` where ``u`` is the common
    direction of the replicated block.
    """
    from .embedding import to_reparam

    coords = to_reparam(wide, basis)
    u = coords.b
    xa = augment(data.inputs)
    z = np.abs(xa @ u)
    norms = np.linalg.norm(xa, axis=1)
    if np.any(z <= 1e-12 * (1.0 + norms * np.linalg.norm(u))):
        raise KinkHit("a sample lies on the replicated unit's kink")
    col = np.abs(basis.A).sum(axis=0)
    col = col[col > 0.0]
    if col.size == 0:
        return float("inf")
    # shave a relative ulp-scale margin so the bound stays strict
    return float(np.min(z / norms) / col.max() * (1.0 - 1e-12))


@dataclass(frozen=True, eq=False)
class SurplusBlocks:
    """Hessian over the surplus parameters, split into v and w parts.

    ``predicted`` is the closed-form nonzero block where one exists, and
    ``violation`` the largest entry among the blocks predicted to vanish.
    """

    vv: np.ndarray
    vw: np.ndarray
    ww: np.ndarray
    pattern: str
    predicted: np.ndarray
    violation: float
    predicted_error: float


def _surplus_index(net, units):
    w_idx = np.concatenate([np.arange(net.w_slice(j).start, net.w_slice(j).stop) for j in units])
    v_idx = np.concatenate([np.arange(net.v_slice(j).start, net.v_slice(j).stop) for j in units])
    return v_idx, w_idx


def surplus_hessian_blocks(wide, data, kind, narrow_hidden, method="analytic", zero_loss=ZERO_LOSS):
    """Surplus Hessian blocks of a zero-error embedding and their zero pattern.

    ``kind`` is an :class:`EmbedKind` or, for replication with non-default
    weights, the :class:`EmbedSpec` used. Inactive kinds use the trailing
    ``wide.hidden - narrow_hidden`` units in the original coordinates.
    Replication kinds use the ``(xi, eta)`` coordinates, where every block is
    predicted zero.
    """
    from .embedding import EmbedSpec

    spec = kind if isinstance(kind, EmbedSpec) else EmbedSpec(kind, wide.hidden)
    kind = spec.kind
    loss = loss_total(wide, data)
    if loss > zero_loss:
        raise NotZeroError(f"training loss {loss:.3e} exceeds {zero_loss:.1e}")
    surplus = wide.hidden - narrow_hidden
    act = wide.activation

    if kind.replicates:
        basis = build_reparam_basis(spec, narrow_hidden)
        h = reparam_hessian(wide, data, basis, method)
        m, d1 = wide.output_dim, wide.input_dim + 1
        n0 = narrow_hidden * (m + d1)
        nx = surplus * m
        vv, vw, ww = h[n0:n0 + nx, n0:n0 + nx], h[n0:n0 + nx, n0 + nx:], h[n0 + nx:, n0 + nx:]
        viol = max(np.abs(vv).max(initial=0.0), np.abs(vw).max(initial=0.0),
                   np.abs(ww).max(initial=0.0))
        return SurplusBlocks(vv, vw, ww, "zero", None, float(viol), 0.0)

    h = _loss_hessian(wide, data, method)
    units = list(range(narrow_hidden, wide.hidden))
    v_idx, w_idx = _surplus_index(wide, units)
    vv, vw, ww = h[np.ix_(v_idx, v_idx)], h[np.ix_(v_idx, w_idx)], h[np.ix_(w_idx, w_idx)]
    xa = augment(data.inputs)
    m = wide.output_dim
    _, d2 = loss_derivatives(forward(wide, data.inputs), data)

    def gram_vv():
        phi = act.phi(xa @ wide.w[units].T)  # (n, k)
        return np.einsum("nj,nab,nk->jakb", phi, d2, phi).reshape(len(units) * m, -1)

    def block_ww():
        dphi = act.dphi(xa @ wide.w[units].T)
        vs = wide.v[units]
        coef = np.einsum("ja,nab,kb->njk", vs, d2, vs) * dphi[:, :, None] * dphi[:, None, :]
        return np.einsum("njk,np,nq->jpkq", coef, xa, xa).reshape(ww.shape)

    if kind is EmbedKind.INACTIVE_BOTH:
        pattern, pred, zeros = "zero", None, [vv, vw, ww]
    elif kind is EmbedKind.INACTIVE_PROP:
        pattern = "S2" if act.smooth else "S3"
        pred, zeros = gram_vv(), [vw, ww]
    elif act.smooth:
        pattern, pred, zeros = "S1", block_ww(), [vv, vw]
    else:
        pattern, pred, zeros = "zero", None, [vv, vw, ww]
    viol = max(float(np.abs(b).max(initial=0.0)) for b in zeros)
    target = {"S1": ww, "S2": vv, "S3": vv}.get(pattern)
    err = 0.0 if pred is None else float(np.abs(pred - target).max(initial=0.0))
    return SurplusBlocks(vv, vw, ww, pattern, pred, viol, err)
