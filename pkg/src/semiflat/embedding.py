"""Function-preserving embeddings of a narrow network into a wider one.

Six constructions are supported:

* ``replicate``: copy one unit ``u`` into ``k`` slots with output weights
  ``lambda_j * zeta`` (``sum(lambda) == 1``).
* ``replicate_relu``: copies ``beta_j * u`` with output weights
  ``gamma_j * zeta`` (``beta > 0``, ``sum(gamma * beta) == 1``); ReLU only.
* ``inactive_units``: surplus units with input weight zero.
* ``inactive_units_relu``: surplus units with ``w_wgt = 0`` and bias ``2K``,
  so they are silent on every input with ``||x|| <= 1``; ReLU only.
* ``inactive_prop``: surplus units with output weight zero.
* ``inactive_both``: surplus units with zero input and output weights.

Replication places the non-replicated units first (in narrow order) and the
``k`` copies last. The inactive kinds append the surplus units after the
narrow ones.
"""

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .errors import (
    ActivationMismatch,
    BadIndex,
    DimMismatch,
    SpecInvariantViolated,
    ZeroWeight,
)
from .linalg import null_space_complement
from .network import Activation, NetworkParams, forward
from .rng import stream

SUM_TOL = 1e-12


class EmbedKind(str, Enum):
    REPLICATE = "replicate"
    REPLICATE_RELU = "replicate_relu"
    INACTIVE_UNITS = "inactive_units"
    INACTIVE_UNITS_RELU = "inactive_units_relu"
    INACTIVE_PROP = "inactive_prop"
    INACTIVE_BOTH = "inactive_both"

    @property
    def relu_only(self):
        return self in (EmbedKind.REPLICATE_RELU, EmbedKind.INACTIVE_UNITS_RELU)

    @property
    def replicates(self):
        return self in (EmbedKind.REPLICATE, EmbedKind.REPLICATE_RELU)


def _opt_vec(x):
    return None if x is None else np.array(x, dtype=np.float64).ravel()


def _opt_rows(x):
    return None if x is None else np.array(x, dtype=np.float64, ndmin=2)


@dataclass(frozen=True, eq=False)
class EmbedSpec:
    """How to widen a network.

    ``unit`` is the 0-based index of the replicated narrow unit; ``None``
    means the last one. Weight vectors left as ``None`` get defaults once the
    narrow width is known: uniform ``lam`` and ``gamma``, unit ``beta``.
    ``v_extra`` / ``w_extra`` override the surplus output / input weights of
    the inactive kinds (defaults are zero).
    """

    kind: EmbedKind
    target_hidden: int
    lam: np.ndarray = None
    gamma: np.ndarray = None
    beta: np.ndarray = None
    K: float = 2.0
    unit: int = None
    v_extra: np.ndarray = field(default=None, repr=False)
    w_extra: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", EmbedKind(self.kind))
        object.__setattr__(self, "target_hidden", int(self.target_hidden))
        object.__setattr__(self, "K", float(self.K))
        for name in ("lam", "gamma", "beta"):
            object.__setattr__(self, name, _opt_vec(getattr(self, name)))
        for name in ("v_extra", "w_extra"):
            object.__setattr__(self, name, _opt_rows(getattr(self, name)))

    def block_size(self, h0):
        """Number of units the construction writes: copies or surplus units."""
        surplus = self.target_hidden - h0
        return surplus + 1 if self.kind.replicates else surplus

    def resolved(self, h0, check=True):
        """Copy with defaults filled in for a narrow width ``h0``.

        The result is validated unless ``check`` is false.
        """
        if self.target_hidden < h0:
            raise SpecInvariantViolated(f"target_hidden {self.target_hidden} < narrow width {h0}")
        unit = h0 - 1 if self.unit is None else int(self.unit)
        if not 0 <= unit < h0:
            raise BadIndex(f"unit {unit} outside 0..{h0 - 1}")
        k = self.block_size(h0)
        spec = replace(self, unit=unit)
        if self.kind is EmbedKind.REPLICATE and spec.lam is None:
            spec = replace(spec, lam=np.full(k, 1.0 / k))
        if self.kind is EmbedKind.REPLICATE_RELU:
            if spec.beta is None:
                spec = replace(spec, beta=np.ones(k))
            if spec.gamma is None:
                spec = replace(spec, gamma=np.full(k, 1.0 / np.sum(spec.beta)))
        if check:
            spec.validate(h0)
        return spec

    def validate(self, h0, strict=False):
        """Check the spec invariants for a narrow width ``h0``.

        ``strict`` also requires nonzero replication weights, which the
        saddle and minimum results assume.
        """
        k = self.block_size(h0)
        if self.kind is EmbedKind.REPLICATE:
            lam = self.lam
            if lam is None or lam.size != k:
                raise SpecInvariantViolated(f"lambda needs {k} entries")
            if abs(lam.sum() - 1.0) > SUM_TOL:
                raise SpecInvariantViolated(f"sum(lambda) = {float(lam.sum())!r}, need 1")
            if strict and np.any(lam == 0.0):
                raise SpecInvariantViolated("lambda has a zero entry")
        elif self.kind is EmbedKind.REPLICATE_RELU:
            g, b = self.gamma, self.beta
            if g is None or b is None or g.size != k or b.size != k:
                raise SpecInvariantViolated(f"gamma and beta need {k} entries")
            if np.any(b <= 0.0):
                raise SpecInvariantViolated("beta must be positive")
            if abs(np.dot(g, b) - 1.0) > SUM_TOL:
                raise SpecInvariantViolated(f"sum(gamma*beta) = {float(np.dot(g, b))!r}, need 1")
            if strict and np.any(g == 0.0):
                raise SpecInvariantViolated("gamma has a zero entry")
        elif self.kind is EmbedKind.INACTIVE_UNITS_RELU and not self.K > 1.0:
            raise SpecInvariantViolated(f"K = {self.K!r}, need K > 1")
        for name in ("lam", "gamma", "beta"):
            vec = getattr(self, name)
            if vec is not None and not np.all(np.isfinite(vec)):
                raise SpecInvariantViolated(f"{name} has non-finite entries")


def _surplus_rows(extra, k, width, name):
    if extra is None:
        return np.zeros((k, width))
    if extra.shape != (k, width):
        raise SpecInvariantViolated(f"{name} has shape {extra.shape}, need {(k, width)}")
    return extra


def embed(narrow, spec):
    """Wide network realizing the same function as ``narrow``."""
    h0 = narrow.hidden
    spec = spec.resolved(h0)
    if spec.kind.relu_only and narrow.activation is not Activation.RELU:
        raise ActivationMismatch(f"{spec.kind.value} needs a ReLU network")
    k = spec.block_size(h0)
    d1 = narrow.input_dim + 1
    m = narrow.output_dim
    w0, v0 = narrow.w, narrow.v

    if spec.kind.replicates:
        r = spec.unit
        keep = [i for i in range(h0) if i != r]
        u, zeta = w0[r], v0[r]
        if spec.kind is EmbedKind.REPLICATE:
            w_scale, v_scale = np.ones(k), spec.lam
        else:
            w_scale, v_scale = spec.beta, spec.gamma
        w = np.vstack([w0[keep], np.outer(w_scale, u)])
        v = np.vstack([v0[keep], np.outer(v_scale, zeta)])
        return narrow.replace(w=w, v=v)

    if spec.kind is EmbedKind.INACTIVE_UNITS:
        w_new = np.zeros((k, d1))
        v_new = _surplus_rows(spec.v_extra, k, m, "v_extra")
    elif spec.kind is EmbedKind.INACTIVE_UNITS_RELU:
        w_new = np.zeros((k, d1))
        w_new[:, -1] = 2.0 * spec.K
        v_new = _surplus_rows(spec.v_extra, k, m, "v_extra")
    elif spec.kind is EmbedKind.INACTIVE_PROP:
        w_new = _surplus_rows(spec.w_extra, k, d1, "w_extra")
        v_new = np.zeros((k, m))
    else:
        w_new = np.zeros((k, d1))
        v_new = np.zeros((k, m))
    return narrow.replace(w=np.vstack([w0, w_new]), v=np.vstack([v0, v_new]))


def verify_function_equality(narrow, wide, probes=64, seed=0, inputs=None):
    """Max abs output difference between two networks.

    Evaluates at ``probes`` points uniform on ``[-1, 1]^D`` drawn from
    ``seed``, or at the given ``inputs`` instead.
    """
    if narrow.input_dim != wide.input_dim or narrow.output_dim != wide.output_dim:
        raise DimMismatch("networks have different input or output dimensions")
    if inputs is None:
        inputs = stream(seed, 0).uniform(-1.0, 1.0, size=(probes, narrow.input_dim))
    diff = forward(wide, inputs) - forward(narrow, inputs)
    return float(np.max(np.abs(diff))) if diff.size else 0.0


@dataclass(frozen=True, eq=False)
class ReparamBasis:
    """Linear change of coordinates on a replicated block.

    Block unit ``j`` is ``w_j = w_scale[j] * (b + sum_c A[c, j] eta_c)`` and
    ``v_j = v_scale[j] * (a + sum_c A[c, j] xi_c)``. ``weights`` is
    ``v_scale * w_scale`` and every row of ``A`` is orthogonal to it.
    """

    weights: np.ndarray
    A: np.ndarray
    v_scale: np.ndarray
    w_scale: np.ndarray
    narrow_hidden: int
    unit: int

    @property
    def block_size(self):
        return self.weights.size

    @property
    def wide_hidden(self):
        return self.narrow_hidden + self.block_size - 1

    def stack(self):
        """The invertible matrix ``[1^T; A]``."""
        return np.vstack([np.ones((1, self.block_size)), self.A])

    def gram(self):
        """``A diag(weights) A^T``, the factor multiplying G and F."""
        return (self.A * self.weights) @ self.A.T


def build_reparam_basis(spec, narrow_hidden=None):
    """Reparameterization basis of a replication spec.

    Only what the coordinate change needs is checked: nonzero weights with a
    nonzero sum, and positive ``beta``. The sum-to-one condition of
    :meth:`EmbedSpec.validate` is not required here. ``narrow_hidden`` is
    needed only when the spec relies on default weights.
    """
    if not spec.kind.replicates:
        raise SpecInvariantViolated(f"{spec.kind.value} has no replicated block")
    if narrow_hidden is None:
        vec = spec.lam if spec.kind is EmbedKind.REPLICATE else spec.gamma
        if vec is None:
            raise SpecInvariantViolated("weights not given and narrow width unknown")
        narrow_hidden = spec.target_hidden - vec.size + 1
    spec = spec.resolved(narrow_hidden, check=False)
    k = spec.block_size(narrow_hidden)
    if spec.kind is EmbedKind.REPLICATE:
        v_scale, w_scale = spec.lam, np.ones(k)
    else:
        v_scale, w_scale = spec.gamma, spec.beta
        if w_scale.size != k or np.any(w_scale <= 0.0):
            raise SpecInvariantViolated(f"beta needs {k} positive entries")
    if v_scale.size != k or not np.all(np.isfinite(v_scale)):
        raise SpecInvariantViolated(f"replication weights need {k} finite entries")
    weights = v_scale * w_scale
    if np.any(v_scale == 0.0):
        raise ZeroWeight("a replication coefficient is zero")
    a = null_space_complement(weights)
    return ReparamBasis(weights, a, v_scale, w_scale, narrow_hidden, spec.unit)


@dataclass(frozen=True, eq=False)
class ReparamCoords:
    """Coordinates ``(a, b, xi, eta)`` of the block plus the untouched units.

    ``narrow_w`` / ``narrow_v`` hold the narrow-shaped parameters with ``b``
    and ``a`` in the replicated unit's row.
    """

    narrow_w: np.ndarray
    narrow_v: np.ndarray
    xi: np.ndarray
    eta: np.ndarray
    unit: int

    @property
    def a(self):
        return self.narrow_v[self.unit]

    @property
    def b(self):
        return self.narrow_w[self.unit]

    def flat(self):
        """``(narrow w, narrow v, xi, eta)`` flattened row-major."""
        return np.concatenate(
            [self.narrow_w.ravel(), self.narrow_v.ravel(), self.xi.ravel(), self.eta.ravel()]
        )


def _check_wide(wide, basis):
    if wide.hidden != basis.wide_hidden:
        raise DimMismatch(f"wide net has {wide.hidden} units, basis expects {basis.wide_hidden}")


def to_reparam(wide, basis):
    _check_wide(wide, basis)
    k = basis.block_size
    keep = wide.hidden - k
    st = basis.stack()
    wb = np.linalg.solve(st.T, wide.w[keep:] / basis.w_scale[:, None])
    vb = np.linalg.solve(st.T, wide.v[keep:] / basis.v_scale[:, None])
    r = basis.unit
    narrow_w = np.insert(wide.w[:keep], r, wb[0], axis=0)
    narrow_v = np.insert(wide.v[:keep], r, vb[0], axis=0)
    return ReparamCoords(narrow_w, narrow_v, vb[1:], wb[1:], r)


def from_reparam(coords, basis, template):
    """Wide network for ``coords``; ``template`` supplies the activation."""
    _check_wide(template, basis)
    st = basis.stack()
    r = coords.unit
    keep = [i for i in range(basis.narrow_hidden) if i != r]
    wb = st.T @ np.vstack([coords.b[None, :], coords.eta]) * basis.w_scale[:, None]
    vb = st.T @ np.vstack([coords.a[None, :], coords.xi]) * basis.v_scale[:, None]
    w = np.vstack([coords.narrow_w[keep], wb])
    v = np.vstack([coords.narrow_v[keep], vb])
    return template.replace(w=w, v=v)


def coords_from_flat(flat, basis, template):
    """Inverse of :meth:`ReparamCoords.flat` for a wide ``template`` shape."""
    h0, k = basis.narrow_hidden, basis.block_size
    d1, m = template.input_dim + 1, template.output_dim
    sizes = [h0 * d1, h0 * m, (k - 1) * m, (k - 1) * d1]
    parts = np.split(np.asarray(flat, dtype=np.float64), np.cumsum(sizes)[:-1])
    return ReparamCoords(
        parts[0].reshape(h0, d1),
        parts[1].reshape(h0, m),
        parts[2].reshape(k - 1, m),
        parts[3].reshape(k - 1, d1),
        basis.unit,
    )


def reparam_jacobian(basis, template):
    """Matrix ``T`` with ``wide.flat() == T @ coords.flat()``.

    The map is linear, so ``T`` also carries Hessians between the two
    coordinate systems by congruence.
    """
    p = template.n_params
    t = np.empty((p, p))
    for i in range(p):
        e = np.zeros(p)
        e[i] = 1.0
        t[:, i] = from_reparam(coords_from_flat(e, basis, template), basis, template).flat()
    return t


def embedding_norm(wide):
    """Euclidean norm of the full parameter vector."""
    return float(np.linalg.norm(wide.flat()))


def spec_to_dict(spec):
    out = {"kind": spec.kind.value, "target_hidden": spec.target_hidden}
    for key, val in (("lambda", spec.lam), ("gamma", spec.gamma), ("beta", spec.beta)):
        if val is not None:
            out[key] = val.tolist()
    if spec.kind is EmbedKind.INACTIVE_UNITS_RELU:
        out["K"] = spec.K
    if spec.unit is not None:
        out["unit"] = spec.unit
    return out


def spec_from_dict(d):
    try:
        return EmbedSpec(
            kind=d["kind"],
            target_hidden=d["target_hidden"],
            lam=d.get("lambda"),
            gamma=d.get("gamma"),
            beta=d.get("beta"),
            K=d.get("K", 2.0),
            unit=d.get("unit"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SpecInvariantViolated(f"malformed embed spec: {exc}") from exc
