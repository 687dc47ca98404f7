"""PAC-Bayes bound terms for embedded zero-error minima.

Both pipelines use the prior ``N(0, sigma^2 I)`` on the Gaussian parameter
blocks. The smooth posterior is ``N(theta, tau^2 H^-1)`` on the narrow copy,
``N(theta, sigma^2 I)`` on the surplus output weights and
``N(theta, tau^2 S^-1)`` on the surplus input weights. The ReLU posterior
replaces the last factor by the same uniform box distribution as its prior,
so that block contributes nothing.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BadRange, SingularCovariance
from .linalg import sym_eig

log = logging.getLogger(__name__)

EIG_REL_TOL = 1e-8


@dataclass(frozen=True)
class PacBayesConfig:
    sigma: float = 1e3
    tau: float = 1e-2
    K: float = 2.0
    delta: float = 0.05

    def __post_init__(self):
        if not self.sigma > self.tau > 0.0:
            raise BadRange(f"need sigma > tau > 0, got sigma={self.sigma!r} tau={self.tau!r}")
        if not self.K > 1.0:
            raise BadRange(f"need K > 1, got {self.K!r}")
        if not 0.0 < self.delta <= 1.0:
            raise BadRange(f"need 0 < delta <= 1, got {self.delta!r}")

    @property
    def log_ratio(self):
        """``log(sigma^2 / tau^2)``."""
        return 2.0 * math.log(self.sigma / self.tau)


@dataclass(frozen=True)
class KLBreakdown:
    total: float
    terms: dict = field(default_factory=dict)

    def to_dict(self):
        return {"total": self.total, "terms": dict(self.terms)}


def _pd_spectrum(m, name, floor):
    """Eigenvalues of a symmetric matrix checked (or floored) for definiteness."""
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    if m.size == 0:
        return np.zeros(0)
    ev = sym_eig(m).eigenvalues
    eps = EIG_REL_TOL * max(1.0, float(np.max(np.abs(ev))))
    if np.any(ev < -eps):
        raise SingularCovariance(f"{name} has eigenvalue {ev[0]:.3e} < 0")
    small = ev <= eps
    if np.any(small):
        if not floor:
            raise SingularCovariance(f"{name} has {int(small.sum())} eigenvalues within {eps:.1e} of 0")
        log.warning("%s: flooring %d eigenvalues at %.3e", name, int(small.sum()), eps)
        ev = np.where(small, eps, ev)
    return ev


def _check_dim(m, d, name):
    if d is not None and np.atleast_2d(m).shape[0] != d:
        raise BadRange(f"{name} is {np.atleast_2d(m).shape[0]}-dimensional, got d={d}")


def kl_smooth(narrow_hessian, S, theta_norm, d0=None, d1=None, cfg=PacBayesConfig(), floor=False):
    """KL divergence of the smooth-activation posterior from its prior.

    ``theta_norm`` is the Euclidean norm of the whole embedded parameter.
    ``d0`` and ``d1`` default to the sizes of ``narrow_hessian`` and ``S``
    and must match them when given. With ``floor`` set, eigenvalues at the
    zero threshold are raised to it (with a logged warning) instead of
    raising :class:`SingularCovariance`.
    """
    _check_dim(narrow_hessian, d0, "narrow Hessian")
    _check_dim(S, d1, "S")
    eh = _pd_spectrum(narrow_hessian, "narrow Hessian", floor)
    es = _pd_spectrum(S, "S", floor)
    d0, d1 = eh.size, es.size
    r = (cfg.tau / cfg.sigma) ** 2
    terms = {
        "dim_log_ratio_core": 0.5 * d0 * cfg.log_ratio,
        "dim_log_ratio_surplus": 0.5 * d1 * cfg.log_ratio,
        "logdet_H": 0.5 * float(np.sum(np.log(eh))),
        "logdet_S": 0.5 * float(np.sum(np.log(es))),
        "trace_term": 0.5 * r * float(np.sum(1.0 / eh) + np.sum(1.0 / es)),
        "norm_term": 0.5 * (theta_norm / cfg.sigma) ** 2,
        "dim_offset": -0.5 * (d0 + d1),
    }
    return KLBreakdown(math.fsum(terms.values()), terms)


def kl_relu(narrow_hessian, theta_norm, d0=None, cfg=PacBayesConfig(), floor=False):
    """KL divergence of the ReLU posterior from its prior.

    ``theta_norm`` covers the Gaussian blocks: the narrow copy and the
    surplus output weights. The box factor is shared by prior and posterior.
    """
    _check_dim(narrow_hessian, d0, "narrow Hessian")
    eh = _pd_spectrum(narrow_hessian, "narrow Hessian", floor)
    d0 = eh.size
    r = (cfg.tau / cfg.sigma) ** 2
    terms = {
        "dim_log_ratio_core": 0.5 * d0 * cfg.log_ratio,
        "logdet_H": 0.5 * float(np.sum(np.log(eh))),
        "trace_term": 0.5 * r * float(np.sum(1.0 / eh)),
        "norm_term": 0.5 * (theta_norm / cfg.sigma) ** 2,
        "dim_offset": -0.5 * d0,
    }
    return KLBreakdown(math.fsum(terms.values()), terms)


def pac_bayes_bound(train_loss_mean, kl, n, cfg=PacBayesConfig()):
    """``train + 2 sqrt(2 (KL + ln(n / delta)) / (n - 1))``.

    ``train_loss_mean`` must already lie in ``[0, 1]``; see
    :func:`bounded_loss`.
    """
    total = kl.total if isinstance(kl, KLBreakdown) else float(kl)
    if n < 2:
        raise BadRange(f"need n >= 2, got {n}")
    if not 0.0 <= train_loss_mean <= 1.0:
        raise BadRange(f"training loss {train_loss_mean!r} outside [0, 1]")
    inner = total + math.log(n / cfg.delta)
    if inner < 0.0:
        raise BadRange(f"KL + ln(n/delta) = {inner!r} < 0")
    return train_loss_mean + 2.0 * math.sqrt(2.0 * inner / (n - 1))


def bounded_loss(loss):
    """Map a nonnegative loss into ``[0, 1)`` by ``l / (1 + l)``."""
    return loss / (1.0 + loss)


def optimal_posterior_covariance(narrow_hessian, tau):
    """``tau^2 H^-1`` for a positive definite ``H``."""
    e = sym_eig(narrow_hessian)
    _pd_spectrum(narrow_hessian, "Hessian", floor=False)
    q = e.eigenvectors
    cov = (q / e.eigenvalues) @ q.T * tau**2
    return 0.5 * (cov + cov.T)


def gaussian_kl(mean_q, cov_q, mean_p, cov_p):
    """``KL(N(mean_q, cov_q) || N(mean_p, cov_p))`` from full covariance matrices."""
    mean_q, mean_p = np.asarray(mean_q, float), np.asarray(mean_p, float)
    cov_q, cov_p = np.atleast_2d(cov_q), np.atleast_2d(cov_p)
    d = mean_q.size
    _, ld_q = np.linalg.slogdet(cov_q)
    _, ld_p = np.linalg.slogdet(cov_p)
    diff = mean_p - mean_q
    tr = np.trace(np.linalg.solve(cov_p, cov_q))
    quad = diff @ np.linalg.solve(cov_p, diff)
    return 0.5 * (ld_p - ld_q + tr + quad - d)
