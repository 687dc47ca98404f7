"""Three-layer networks ``f(x) = sum_j v_j phi(w_j . x~)`` with a linear output.

Parameters are stored per hidden unit: ``w[j] = (weights..., bias)`` acting on
the augmented input ``x~ = (x, -1)`` so ``w . x~ = w_wgt . x - w_bias``, and
``v[j]`` is the unit's M-dimensional outgoing weight. The flat parameter
vector used by gradients and Hessians is ``concat(w.ravel(), v.ravel())``.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DimMismatch, KinkHit, KinkNeighborhood, LogisticRange

KINK_REL_TOL = 1e-12


class Activation(str, Enum):
    TANH = "tanh"
    RELU = "relu"

    @property
    def smooth(self):
        return self is Activation.TANH

    def phi(self, z):
        if self is Activation.TANH:
            return np.tanh(z)
        return np.maximum(z, 0.0)

    def dphi(self, z):
        if self is Activation.TANH:
            return 1.0 - np.tanh(z) ** 2
        # phi'(0) := 0 at the kink
        return (z > 0.0).astype(np.float64)

    def ddphi(self, z):
        if self is Activation.TANH:
            t = np.tanh(z)
            return -2.0 * t * (1.0 - t * t)
        return np.zeros_like(z, dtype=np.float64)


class LossKind(str, Enum):
    SQUARED = "squared"
    LOGISTIC = "logistic"


def _frozen(a, ndim):
    a = np.array(a, dtype=np.float64)
    if a.ndim != ndim:
        raise DimMismatch(f"expected {ndim}-d array, got shape {a.shape}")
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class NetworkParams:
    activation: Activation
    w: np.ndarray  # (H, D+1)
    v: np.ndarray  # (H, M)

    def __post_init__(self):
        object.__setattr__(self, "activation", Activation(self.activation))
        w = _frozen(self.w, 2)
        v = _frozen(self.v, 2)
        if w.shape[0] != v.shape[0]:
            raise DimMismatch(f"w has {w.shape[0]} units, v has {v.shape[0]}")
        if w.shape[0] < 1 or w.shape[1] < 2 or v.shape[1] < 1:
            raise DimMismatch(f"need H, D, M >= 1; got w {w.shape}, v {v.shape}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(v))):
            raise DimMismatch("parameters must be finite")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "v", v)

    @property
    def input_dim(self):
        return self.w.shape[1] - 1

    @property
    def hidden(self):
        return self.w.shape[0]

    @property
    def output_dim(self):
        return self.v.shape[1]

    @property
    def n_params(self):
        return self.w.size + self.v.size

    def flat(self):
        return np.concatenate([self.w.ravel(), self.v.ravel()])

    def with_flat(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise DimMismatch(f"flat vector has shape {theta.shape}, need ({self.n_params},)")
        nw = self.w.size
        return NetworkParams(
            self.activation,
            theta[:nw].reshape(self.w.shape),
            theta[nw:].reshape(self.v.shape),
        )

    def replace(self, w=None, v=None, activation=None):
        return NetworkParams(
            self.activation if activation is None else activation,
            self.w if w is None else w,
            self.v if v is None else v,
        )

    def w_slice(self, j):
        """Flat-vector indices of unit ``j``'s input weights."""
        k = self.input_dim + 1
        return slice(j * k, (j + 1) * k)

    def v_slice(self, j):
        """Flat-vector indices of unit ``j``'s output weights."""
        off = self.w.size
        m = self.output_dim
        return slice(off + j * m, off + (j + 1) * m)


@dataclass(frozen=True, eq=False)
class Dataset:
    inputs: np.ndarray  # (n, D)
    targets: np.ndarray  # (n, M)
    loss: LossKind = LossKind.SQUARED

    def __post_init__(self):
        object.__setattr__(self, "loss", LossKind(self.loss))
        x = _frozen(self.inputs, 2)
        y = _frozen(self.targets, 2)
        if x.shape[0] != y.shape[0] or x.shape[0] < 1:
            raise DimMismatch(f"{x.shape[0]} inputs vs {y.shape[0]} targets")
        if self.loss is LossKind.LOGISTIC:
            if y.shape[1] != 1 or not np.all((y == 0.0) | (y == 1.0)):
                raise LogisticRange("logistic loss needs M == 1 and targets in {0, 1}")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", y)

    @property
    def n(self):
        return self.inputs.shape[0]

    @property
    def input_dim(self):
        return self.inputs.shape[1]

    @property
    def output_dim(self):
        return self.targets.shape[1]


@dataclass(frozen=True)
class GradReport:
    loss: float
    grad: np.ndarray


def augment(x):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return np.hstack([x, -np.ones((x.shape[0], 1))])


def _check_dims(net, data):
    if net.input_dim != data.input_dim or net.output_dim != data.output_dim:
        raise DimMismatch(
            f"network is {net.input_dim}->{net.output_dim}, "
            f"data is {data.input_dim}->{data.output_dim}"
        )


def preactivations(net, x):
    """``z[nu, j] = w_j . x~_nu`` for a batch of inputs."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != net.input_dim:
        raise DimMismatch(f"input has {x.shape[1]} features, network expects {net.input_dim}")
    return augment(x) @ net.w.T


def forward(net, x):
    """Network output for one input vector (returns ``(M,)``) or a batch ``(n, D)``."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single and x.shape[0] != net.input_dim:
        raise DimMismatch(f"input has {x.shape[0]} features, network expects {net.input_dim}")
    out = net.activation.phi(preactivations(net, x)) @ net.v
    return out[0] if single else out


def kink_mask(net, x):
    """Boolean ``(n, H)`` mask of ReLU pre-activations lying on the kink."""
    xa = augment(x)
    z = xa @ net.w.T
    scale = 1.0 + np.outer(np.linalg.norm(xa, axis=1), np.linalg.norm(net.w, axis=1))
    return np.abs(z) <= KINK_REL_TOL * scale


def check_kinks(net, x):
    if net.activation is Activation.RELU:
        hits = kink_mask(net, x)
        if hits.any():
            nu, j = np.argwhere(hits)[0]
            raise KinkHit(f"sample {nu} sits on the kink of unit {j}")


def _sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def sample_losses(out, data):
    """Per-sample losses for network outputs ``out`` of shape ``(n, M)``."""
    y = data.targets
    if data.loss is LossKind.SQUARED:
        r = out - y
        return 0.5 * np.sum(r * r, axis=1)
    z = out[:, 0]
    # softplus(z) - y z, the logistic loss of sigmoid(z)
    return np.logaddexp(0.0, z) - y[:, 0] * z


def loss_derivatives(out, data):
    """First and second derivatives of the per-sample loss w.r.t. the output.

    Returns ``(d1, d2)`` with shapes ``(n, M)`` and ``(n, M, M)``.
    """
    n, m = out.shape
    if data.loss is LossKind.SQUARED:
        return out - data.targets, np.broadcast_to(np.eye(m), (n, m, m)).copy()
    p = _sigmoid(out)
    return p - data.targets, (p * (1.0 - p))[:, :, None]


def loss_total(net, data):
    """Un-normalized training loss, the sum of per-sample losses."""
    _check_dims(net, data)
    return float(np.sum(sample_losses(forward(net, data.inputs), data)))


def backprop(net, data, allow_kinks=False):
    """Loss and gradient by the delta rule.

    ReLU points with a sample on a kink raise :class:`KinkHit` unless
    ``allow_kinks`` is set, in which case ``phi'(0) = 0`` is used.
    """
    _check_dims(net, data)
    if not allow_kinks:
        check_kinks(net, data.inputs)
    xa = augment(data.inputs)
    z = xa @ net.w.T
    h = net.activation.phi(z)
    out = h @ net.v
    delta, _ = loss_derivatives(out, data)
    grad_v = h.T @ delta
    back = (delta @ net.v.T) * net.activation.dphi(z)
    grad_w = back.T @ xa
    loss = float(np.sum(sample_losses(out, data)))
    return GradReport(loss, np.concatenate([grad_w.ravel(), grad_v.ravel()]))


def output_jacobian(net, x):
    """``J[nu, m, p] = d f_m(x_nu) / d theta_p`` for the flat parameter vector."""
    xa = augment(x)
    z = xa @ net.w.T
    n, hdim = z.shape
    m = net.output_dim
    k = xa.shape[1]
    h = net.activation.phi(z)
    dh = net.activation.dphi(z)
    jw = net.v.T[None, :, :, None] * dh[:, None, :, None] * xa[:, None, None, :]
    jv = np.zeros((n, m, hdim, m))
    for mm in range(m):
        jv[:, mm, :, mm] = h
    return np.concatenate([jw.reshape(n, m, hdim * k), jv.reshape(n, m, hdim * m)], axis=2)


def hessian(net, data, allow_kinks=False):
    """Exact Hessian of the training loss in the flat parameter order.

    Gauss-Newton part ``sum J^T l'' J`` plus the residual-weighted second
    derivatives of the network output, which are nonzero only in the
    ``(w_j, w_j)`` and ``(w_j, v_j)`` blocks of each unit.
    """
    _check_dims(net, data)
    if not allow_kinks:
        check_kinks(net, data.inputs)
    xa = augment(data.inputs)
    z = xa @ net.w.T
    out = net.activation.phi(z) @ net.v
    d1, d2 = loss_derivatives(out, data)
    jac = output_jacobian(net, data.inputs)
    hess = np.einsum("nap,nab,nbq->pq", jac, d2, jac)

    hdim, k = net.w.shape
    m = net.output_dim
    nw = hdim * k
    dh = net.activation.dphi(z)
    ddh = net.activation.ddphi(z)
    coef_ww = (d1 @ net.v.T) * ddh  # (n, H)
    for j in range(hdim):
        sw = slice(j * k, (j + 1) * k)
        sv = slice(nw + j * m, nw + (j + 1) * m)
        hess[sw, sw] += (xa * coef_ww[:, j, None]).T @ xa
        cross = (xa * dh[:, j, None]).T @ d1  # (k, M)
        hess[sw, sv] += cross
        hess[sv, sw] += cross.T
    return 0.5 * (hess + hess.T)


def _default_steps(theta, rel):
    return rel * (1.0 + np.abs(theta))


def fd_gradient(net, data, h=None):
    """Central-difference gradient of :func:`loss_total`.

    ``h`` is either ``None`` (steps ``1e-5 * (1 + |theta_i|)``) or a fixed
    absolute step.
    """
    theta = net.flat()
    steps = _default_steps(theta, 1e-5) if h is None else np.full(theta.size, float(h))
    grad = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = steps[i]
        lp = loss_total(net.with_flat(theta + e), data)
        lm = loss_total(net.with_flat(theta - e), data)
        grad[i] = (lp - lm) / (2.0 * steps[i])
    return grad


def _check_kink_neighborhood(net, data, steps):
    if net.activation is not Activation.RELU:
        return
    xa = augment(data.inputs)
    z = xa @ net.w.T
    k = xa.shape[1]
    hmax = np.array([steps[j * k:(j + 1) * k].max() for j in range(net.hidden)])
    reach = 2.0 * np.outer(np.abs(xa).max(axis=1), hmax)
    if np.any(np.abs(z) <= reach):
        nu, j = np.argwhere(np.abs(z) <= reach)[0]
        raise KinkNeighborhood(f"kink of unit {j} within the stencil at sample {nu}")


def fd_hessian(net, data, h=None):
    """Symmetrized central second differences of :func:`loss_total`.

    Default steps are ``3e-4 * (1 + |theta_i|)``; a float ``h`` gives a fixed
    absolute step. ReLU networks must have every pre-activation farther from
    the kink than the stencil reaches.
    """
    theta = net.flat()
    p = theta.size
    steps = _default_steps(theta, 3e-4) if h is None else np.full(p, float(h))
    _check_kink_neighborhood(net, data, steps)

    def loss_at(delta):
        return loss_total(net.with_flat(theta + delta), data)

    hess = np.empty((p, p))
    base = loss_at(np.zeros(p))
    for i in range(p):
        ei = np.zeros(p)
        ei[i] = steps[i]
        hess[i, i] = (loss_at(2 * ei) - 2.0 * base + loss_at(-2 * ei)) / (4.0 * steps[i] ** 2)
        for j in range(i + 1, p):
            ej = np.zeros(p)
            ej[j] = steps[j]
            val = (
                loss_at(ei + ej) - loss_at(ei - ej) - loss_at(-ei + ej) + loss_at(-ei - ej)
            ) / (4.0 * steps[i] * steps[j])
            hess[i, j] = hess[j, i] = val
    return hess
