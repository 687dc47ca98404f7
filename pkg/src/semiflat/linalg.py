"""Dense matrix helpers: Jacobi eigensolver, Kronecker product, null-space rows."""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateStack, NoConvergence, NonFinite, NonSquare, ZeroVector

JACOBI_REL_TOL = 1e-14
JACOBI_MAX_SWEEPS = 100


@dataclass(frozen=True)
class SymEig:
    """Eigenvalues in ascending order and orthonormal eigenvectors as columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self):
        q = self.eigenvectors
        return (q * self.eigenvalues) @ q.T


def _as_finite_matrix(m):
    m = np.array(m, dtype=np.float64, ndmin=2)
    if m.ndim != 2:
        raise NonSquare(f"expected a 2-d array, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise NonFinite("matrix has non-finite entries")
    return m


def _off_norm(a):
    off = a - np.diag(np.diag(a))
    return np.linalg.norm(off)


def sym_eig(m, max_sweeps=JACOBI_MAX_SWEEPS):
    """Eigendecomposition of a real symmetric matrix by cyclic Jacobi rotations.

    The input is symmetrized as ``(m + m.T) / 2``. Iteration stops once the
    off-diagonal Frobenius norm drops below ``1e-14 * ||m||_F``. Eigenvector
    signs are fixed so the largest-magnitude entry of each column is positive.
    """
    m = _as_finite_matrix(m)
    n, k = m.shape
    if n != k:
        raise NonSquare(f"matrix is {n}x{k}")
    scale = np.max(np.abs(m)) if m.size else 0.0
    if np.max(np.abs(m - m.T), initial=0.0) > 1e-9 * (1.0 + scale):
        raise NonSquare("matrix is not symmetric")
    a = 0.5 * (m + m.T)
    v = np.eye(n)
    tol = JACOBI_REL_TOL * np.linalg.norm(a)

    sweep = 0
    while _off_norm(a) > tol:
        if sweep == max_sweeps:
            raise NoConvergence(f"off-diagonal norm {_off_norm(a):.3e} after {sweep} sweeps")
        sweep += 1
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                app, aqq = a[p, p], a[q, q]
                diff = aqq - app
                if abs(diff) > 1e150 * abs(apq):
                    # theta^2 would overflow; tan of the angle is apq / diff
                    t = apq / diff
                else:
                    theta = diff / (2.0 * apq)
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                    if theta == 0.0:
                        t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q]
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :]
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q]
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
                rotated = True
        if not rotated:
            break

    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    w = w[order]
    v = v[:, order]
    if n:
        idx = np.argmax(np.abs(v), axis=0)
        signs = np.sign(v[idx, np.arange(n)])
        signs[signs == 0] = 1.0
        v = v * signs
    return SymEig(w, v)


def kron(a, b):
    """Kronecker product; ``out[i*p + k, j*q + l] = a[i, j] * b[k, l]``."""
    a = _as_finite_matrix(a)
    b = _as_finite_matrix(b)
    return np.kron(a, b)


def null_space_complement(v):
    """Orthonormal rows spanning the orthogonal complement of ``v``.

    Returns a ``(k-1, k)`` matrix ``A`` with ``A @ v == 0``. The rows come
    from Gram-Schmidt on the standard basis against ``v``, skipping the basis
    vector most aligned with ``v``. Because the rows span exactly ``v``'s
    complement, ``[1^T; A]`` is invertible iff ``v . 1 != 0``; a
    :class:`DegenerateStack` is raised otherwise.
    """
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size == 0:
        raise ZeroVector("empty vector")
    if not np.all(np.isfinite(v)):
        raise NonFinite("vector has non-finite entries")
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise ZeroVector("vector is zero")
    k = v.size
    if abs(v.sum()) <= 1e-12 * norm * np.sqrt(k):
        raise DegenerateStack(f"v . 1 = {v.sum():.3e}; ones row is in the span of A")

    u0 = v / norm
    basis = [u0]
    skip = int(np.argmax(np.abs(v)))
    rows = []
    for i in range(k):
        if i == skip:
            continue
        e = np.zeros(k)
        e[i] = 1.0
        # two passes keep the rows orthogonal to machine precision
        for _ in range(2):
            for b in basis:
                e = e - (b @ e) * b
        e /= np.linalg.norm(e)
        basis.append(e)
        rows.append(e)
    return np.array(rows).reshape(k - 1, k)
