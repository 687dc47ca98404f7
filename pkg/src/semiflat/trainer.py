"""Full-batch training to high-precision stationary points.

Gradient descent with Armijo backtracking runs first. Under squared loss it is
followed by Levenberg-Marquardt on the residual vector, which is what makes
training errors near machine precision reachable.
"""

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import Diverged, KinkHit, NotConverged
from .network import (
    Activation,
    LossKind,
    NetworkParams,
    backprop,
    check_kinks,
    forward,
    hessian,
    output_jacobian,
)
from .rng import stream

LM_DAMP_MIN = 1e-12
LM_DAMP_MAX = 1e12
GD_GRAD_TOL = 1e-6
# longest parameter move per GD step; big jumps can switch off every ReLU unit
GD_MAX_MOVE = 0.5


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer settings.

    ``require_target`` makes a run count as converged only when the loss is
    at or below ``target_loss``; otherwise a small gradient also suffices.
    ``relu_pattern_init`` lets single-input ReLU fits under squared loss start
    from :func:`relu_pattern_fit_1d` when it finds an interpolant.
    """

    max_iters: int = 2000
    gd_step: float = 1.0
    lm_lambda0: float = 1e-3
    lm_max_iters: int = 1000
    target_loss: float = 1e-12
    grad_tol: float = 1e-10
    seed: int = 0
    restarts: int = 20
    init_scale: float = 1.0
    require_target: bool = False
    relu_pattern_init: bool = False

    def __post_init__(self):
        if not self.target_loss >= 0.0:
            raise ValueError("target_loss must be >= 0")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")


@dataclass(frozen=True, eq=False)
class TrainResult:
    params: NetworkParams
    final_loss: float
    grad_norm: float
    iters: int
    converged: bool
    restarts_used: int


def init_params(input_dim, hidden, output_dim, activation, seed, scale=1.0, stream_id=0):
    """Random network with entries uniform on ``(-scale, scale)``.

    ReLU biases are drawn from ``(-scale/2, scale/2)`` so most units are
    active somewhere on ``[-1, 1]^D``.
    """
    if not scale > 0.0:
        raise ValueError("scale must be positive")
    act = Activation(activation)
    rng = stream(seed, 1, stream_id)
    w = rng.uniform(-scale, scale, size=(hidden, input_dim + 1))
    v = rng.uniform(-scale, scale, size=(hidden, output_dim))
    if act is Activation.RELU:
        w[:, -1] = rng.uniform(-0.5 * scale, 0.5 * scale, size=hidden)
    return NetworkParams(act, w, v)


def relu_pattern_fit_1d(data, hidden, tol=1e-10):
    """Exact interpolant of single-input, single-output data by enumeration.

    Each unit is assigned a gap between sorted inputs for its kink and a
    side on which it is active. With the pattern fixed, a kink placed at the
    middle of its gap leaves the outputs linear in the output weights; if
    that fails, the outputs are still linear in each unit's active-side slope
    and intercept, and the solve decides whether an interpolant with kinks in
    the assigned gaps exists. Returns the first hit in a fixed enumeration
    order (every unit active on at least one input), or ``None``.
    """
    if data.input_dim != 1 or data.output_dim != 1:
        return None
    x = data.inputs[:, 0]
    y = data.targets[:, 0]
    xs = np.sort(x)
    edges = np.concatenate([[-np.inf], xs, [np.inf]])
    mids = np.concatenate([[xs[0] - 1.0], 0.5 * (xs[:-1] + xs[1:]), [xs[-1] + 1.0]])
    # (gap, side): side +1 is active right of the kink, -1 left of it
    options = [(g, s) for g in range(xs.size + 1) for s in (1, -1)
               if not (s == 1 and g == xs.size) and not (s == -1 and g == 0)]
    cols = {}
    for g, s in options:
        act = (x > edges[g]) if s == 1 else (x < edges[g + 1])
        cols[(g, s)] = (act * x, act.astype(np.float64))

    def solves(a):
        sol, _, rank, _ = np.linalg.lstsq(a, y, rcond=None)
        ok = rank == min(a.shape) and np.max(np.abs(a @ sol - y)) <= tol
        return sol if ok else None

    for combo in itertools.combinations(options, hidden):
        side = np.array([s for _, s in combo], dtype=np.float64)
        t = mids[[g for g, _ in combo]]
        fixed = solves(np.maximum(side * (x[:, None] - t), 0.0))
        if fixed is not None and np.all(fixed != 0.0):
            w = np.stack([side, side * t], axis=1)
            return NetworkParams(Activation.RELU, w, fixed[:, None])
        a = np.empty((x.size, 2 * hidden))
        for j, key in enumerate(combo):
            a[:, 2 * j], a[:, 2 * j + 1] = cols[key]
        sol = solves(a)
        if sol is None:
            continue
        p, q = sol[0::2], sol[1::2]
        if np.any(p == 0.0):
            continue
        t = -q / p
        if all(edges[g] < tj < edges[g + 1] for (g, _), tj in zip(combo, t)):
            w = np.stack([side, side * t], axis=1)
            return NetworkParams(Activation.RELU, w, (p * side)[:, None])
    return None


def _loss_grad(net, data):
    rep = backprop(net, data, allow_kinks=True)
    return rep.loss, rep.grad


def _gradient_descent(net, data, cfg):
    loss, grad = _loss_grad(net, data)
    step = cfg.gd_step
    it = 0
    while it < cfg.max_iters:
        if not np.isfinite(loss):
            raise Diverged(f"loss {loss!r} at GD iteration {it}")
        gn2 = float(grad @ grad)
        if np.sqrt(gn2) < GD_GRAD_TOL or loss <= cfg.target_loss:
            break
        theta = net.flat()
        accepted = False
        step = min(step, GD_MAX_MOVE / np.sqrt(gn2))
        while step > 1e-20:
            cand = net.with_flat(theta - step * grad)
            c_loss, c_grad = _loss_grad(cand, data)
            if np.isfinite(c_loss) and c_loss <= loss - 1e-4 * step * gn2:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        net, loss, grad = cand, c_loss, c_grad
        step = min(2.0 * step, 1e6)
        it += 1
    return net, it


def _residuals(net, data):
    return (forward(net, data.inputs) - data.targets).ravel()


def _levenberg_marquardt(net, data, cfg):
    r = _residuals(net, data)
    loss = 0.5 * float(r @ r)
    damp = cfg.lm_lambda0
    p = net.n_params
    it = 0
    stalls = 0
    while it < cfg.lm_max_iters and loss > cfg.target_loss:
        jac = output_jacobian(net, data.inputs).reshape(-1, p)
        # damped least squares without forming J^T J
        lhs = np.vstack([jac, np.sqrt(damp) * np.eye(p)])
        rhs = np.concatenate([-r, np.zeros(p)])
        delta = np.linalg.lstsq(lhs, rhs, rcond=None)[0]
        cand = net.with_flat(net.flat() + delta)
        c_r = _residuals(cand, data)
        c_loss = 0.5 * float(c_r @ c_r)
        it += 1
        if np.isfinite(c_loss) and c_loss < loss:
            net, r, loss = cand, c_r, c_loss
            damp = max(damp / 10.0, LM_DAMP_MIN)
            stalls = 0
        else:
            damp = min(damp * 10.0, LM_DAMP_MAX)
            stalls += 1
            if damp >= LM_DAMP_MAX or stalls > 30:
                break
    return net, it


def _newton_polish(net, data, cfg, max_iters=20):
    """Newton steps accepted while they shrink the gradient.

    Near a nonzero-residual minimum the loss is flat to rounding, so
    progress is judged on the gradient instead.
    """
    loss, grad = _loss_grad(net, data)
    it = 0
    while it < max_iters and np.max(np.abs(grad)) > cfg.grad_tol and loss > cfg.target_loss:
        h = hessian(net, data, allow_kinks=True)
        delta = np.linalg.lstsq(h, -grad, rcond=None)[0]
        cand = net.with_flat(net.flat() + delta)
        c_loss, c_grad = _loss_grad(cand, data)
        it += 1
        if not (np.isfinite(c_loss) and c_loss <= loss + 1e-12 * (1.0 + abs(loss))
                and np.max(np.abs(c_grad)) < np.max(np.abs(grad))):
            break
        net, loss, grad = cand, c_loss, c_grad
    return net, it


def _attempt(init, data, cfg):
    net, iters = _gradient_descent(init, data, cfg)
    if data.loss is LossKind.SQUARED:
        net, lm_iters = _levenberg_marquardt(net, data, cfg)
        iters += lm_iters
    net, nt_iters = _newton_polish(net, data, cfg)
    iters += nt_iters
    loss, grad = _loss_grad(net, data)
    if not np.isfinite(loss):
        raise Diverged(f"loss {loss!r} after training")
    gnorm = float(np.max(np.abs(grad)))
    ok = loss <= cfg.target_loss or (not cfg.require_target and gnorm <= cfg.grad_tol)
    if ok and net.activation is Activation.RELU:
        try:
            check_kinks(net, data.inputs)
        except KinkHit:
            ok = False
    return TrainResult(net, loss, gnorm, iters, ok, 0)


def train(init, data, cfg=TrainConfig()):
    """Train ``init`` on ``data``; re-initialize from seeded streams on failure.

    Restart ``i >= 1`` starts from ``init_params(..., seed=cfg.seed,
    stream_id=i)``. With ``cfg.relu_pattern_init`` the first attempt starts
    from the enumerated interpolant instead of ``init`` when one exists. The
    first converged attempt is returned. ReLU results
    with a sample on a kink count as failures.
    """
    best = None
    diverged = 0
    pattern = None
    if (cfg.relu_pattern_init and init.activation is Activation.RELU
            and data.loss is LossKind.SQUARED):
        pattern = relu_pattern_fit_1d(data, init.hidden)
    for attempt in range(cfg.restarts):
        if attempt == 0:
            start = init if pattern is None else pattern
        else:
            start = init_params(
                init.input_dim, init.hidden, init.output_dim, init.activation,
                cfg.seed, cfg.init_scale, stream_id=attempt,
            )
        try:
            res = _attempt(start, data, cfg)
        except Diverged:
            diverged += 1
            continue
        res = TrainResult(res.params, res.final_loss, res.grad_norm, res.iters,
                          res.converged, attempt)
        if res.converged:
            return res
        if best is None or res.final_loss < best.final_loss:
            best = res
    if best is None and diverged:
        raise Diverged(f"all {cfg.restarts} attempts diverged")
    raise NotConverged(
        f"best loss {best.final_loss:.3e}, grad {best.grad_norm:.3e} after {cfg.restarts} attempts"
    )
