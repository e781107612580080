"""Dense symmetric eigen solvers and matrix square roots."""

import numpy as np
import scipy.linalg as sla

from .errors import ConvergenceError, InvalidArgumentError

__all__ = ["jacobi_eigh", "sym_eig", "spd_sqrt", "round_robin_pairs"]

KERNELS = ("lapack", "jacobi")


def round_robin_pairs(n):
    """Rounds of disjoint index pairs covering every pair of ``range(n)`` once.

    ``n`` must be even. Circle method: player 0 stays, the others rotate.
    """
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        half = n // 2
        p = np.array(players[:half])
        q = np.array(players[half:][::-1])
        rounds.append((np.minimum(p, q), np.maximum(p, q)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def jacobi_eigh(a, tol=1e-14, max_sweeps=60):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Each sweep visits every off-diagonal pair once, grouped into rounds of
    disjoint pairs so that one round is a single vectorized update. Iteration
    stops when the off-diagonal Frobenius norm drops below ``tol`` times the
    Frobenius norm of ``a``.

    Returns
    -------
    w : (n,) ndarray
        Eigenvalues in ascending order.
    v : (n, n) ndarray
        Orthonormal eigenvectors as columns.
    """
    a = np.array(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidArgumentError("expected a square matrix")
    n0 = a.shape[0]
    if not np.all(np.isfinite(a)):
        raise InvalidArgumentError("matrix has nonfinite entries")
    a = 0.5 * (a + a.T)
    if n0 == 1:
        return a[0].copy(), np.ones((1, 1))
    n = n0 + (n0 % 2)
    if n != n0:
        # decoupled zero row/column, never rotated since its couplings vanish
        a = np.pad(a, ((0, 1), (0, 1)))
    v = np.eye(n)
    scale = np.linalg.norm(a)
    if scale == 0.0:
        return np.zeros(n0), np.eye(n0)
    rounds = round_robin_pairs(n)

    def off_norm(m):
        return np.linalg.norm(m - np.diag(np.diag(m)))

    for _sweep in range(max_sweeps):
        if off_norm(a) <= tol * scale:
            break
        for p, q in rounds:
            apq = a[p, q]
            active = apq != 0.0
            if not np.any(active):
                continue
            app, aqq = a[p, p], a[q, q]
            with np.errstate(divide="ignore", invalid="ignore"):
                tau = np.where(active, (aqq - app) / (2.0 * apq), 0.0)
            sgn = np.where(tau >= 0.0, 1.0, -1.0)
            t = np.where(active, sgn / (np.abs(tau) + np.hypot(1.0, tau)), 0.0)
            c = 1.0 / np.hypot(1.0, t)
            s = t * c
            ap, aq = a[:, p].copy(), a[:, q].copy()
            a[:, p] = c * ap - s * aq
            a[:, q] = s * ap + c * aq
            ap, aq = a[p, :].copy(), a[q, :].copy()
            a[p, :] = c[:, None] * ap - s[:, None] * aq
            a[q, :] = s[:, None] * ap + c[:, None] * aq
            a[p, q] = 0.0
            a[q, p] = 0.0
            vp, vq = v[:, p].copy(), v[:, q].copy()
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
    else:
        if off_norm(a) > tol * scale:
            raise ConvergenceError(
                "Jacobi sweeps did not converge", residual=off_norm(a) / scale, iterations=max_sweeps
            )
    w = np.diag(a).copy()
    if n != n0:
        w = w[:n0]
        v = v[:n0, :n0]
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def sym_eig(a, kernel="lapack"):
    """Eigenpairs of a symmetric matrix sorted by decreasing eigenvalue."""
    if kernel == "lapack":
        w, v = sla.eigh(0.5 * (a + a.T))
    elif kernel == "jacobi":
        w, v = jacobi_eigh(a)
    else:
        raise InvalidArgumentError(f"unknown eigen kernel {kernel!r}, expected one of {KERNELS}")
    return w[::-1].copy(), v[:, ::-1].copy()


def spd_sqrt(w, kernel="lapack"):
    """``W^(1/2)`` and ``W^(-1/2)`` of a symmetric positive definite matrix."""
    w = np.asarray(w.toarray() if hasattr(w, "toarray") else w, dtype=float)
    evals, evecs = sym_eig(w, kernel)
    if evals[-1] <= 0.0:
        raise InvalidArgumentError("weight matrix is not positive definite")
    root = np.sqrt(evals)
    return (evecs * root) @ evecs.T, (evecs / root) @ evecs.T
