"""Smallest eigenpairs of the sparse symmetric pencil M u = mu K u.

Strategy:

* small systems go straight to dense LAPACK;
* the common path is shift-invert Lanczos at a small negative shift, so the
  factored matrix M - sigma K is positive definite and the smallest
  eigenvalues converge in a handful of Krylov steps;
* if the factorization or ARPACK fails, a preconditioned block solver
  (LOBPCG, Jacobi preconditioning of M + delta K) takes over.

Every path ends with a Rayleigh-Ritz cleanup in the computed subspace, so
returned eigenvectors are K-orthonormal and eigenvalues ascend regardless
of backend. Results are deterministic for a fixed seed: the shift-invert
start vector is the constant, and the LOBPCG block is drawn from a seeded
generator.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg, sparse
from scipy.sparse.linalg import eigsh, lobpcg, splu

DENSE_CUTOFF = 600


class ConvergenceError(RuntimeError):
    """Eigensolver failed to reach the requested residual tolerance."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


@dataclass
class EigenResult:
    """Ascending eigenvalues with K-orthonormal eigenvectors (columns)."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residuals: np.ndarray
    iterations: int = 0

    def __iter__(self):
        yield self.eigenvalues
        yield self.eigenvectors


def _rayleigh_ritz(M, K, X):
    """Project the pencil on span(X); returns ascending K-orthonormal pairs."""
    A = X.T @ (M @ X)
    G = X.T @ (K @ X)
    A = 0.5 * (A + A.T)
    G = 0.5 * (G + G.T)
    w, Y = linalg.eigh(A, G)
    return w, X @ Y


def _residuals(M, K, w, U):
    """Per-pair residuals: relative to ||Ku|| and as backward error.

    The backward error ||Mu - mu Ku|| / (||Mu|| + |mu| ||Ku||) is the
    convergence gate; it stays meaningful when K is scaled nearly singular
    (tiny regularization), where the plain ||Ku|| normalization is not
    attainable in floating point.
    """
    norm_m = sparse.linalg.norm(M, 1) if sparse.issparse(M) else np.linalg.norm(M, 1)
    norm_k = sparse.linalg.norm(K, 1) if sparse.issparse(K) else np.linalg.norm(K, 1)
    r = np.empty(len(w))
    back = np.empty(len(w))
    for i in range(len(w)):
        ku = K @ U[:, i]
        res = np.linalg.norm(M @ U[:, i] - w[i] * ku)
        r[i] = res / max(np.linalg.norm(ku), 1e-300)
        scale = (norm_m + abs(w[i]) * norm_k) * np.linalg.norm(U[:, i])
        back[i] = res / max(scale, 1e-300)
    return r, back


DENSE_LAST_RESORT = 4000


def solve_smallest(system, count: int, tol: float = 1e-9, seed: int = 0,
                   maxiter: int = 5000) -> EigenResult:
    """The ``count`` algebraically smallest eigenpairs of (M, K).

    Backends are tried in order (shift-invert Lanczos, LOBPCG, dense when
    affordable); the first candidate meeting the backward-error gate and
    K-orthonormality wins, so one backend's bad day on a poorly scaled
    pencil is not fatal.

    Parameters
    ----------
    system : SparseSymSystem
        Assembled pencil; K must be positive definite.
    count : int
        Number of eigenpairs, 1 <= count <= dimension.
    tol : float
        Backward-error target per pair (see ``_residuals``).
    seed : int
        Seed for the block solver's initial subspace.
    maxiter : int
        Iteration cap for the block solver.
    """
    M = system.stiffness.tocsc()
    K = system.mass.tocsc()
    n = M.shape[0]
    if not (1 <= count <= n):
        raise ValueError(f"count={count} out of range for dimension {n}")

    dK = K.diagonal()
    if np.any(dK <= 0.0):
        raise ConvergenceError("mass matrix is not positive definite (assembly contract)")
    scale = M.diagonal().sum() / dK.sum()

    def dense():
        w, U = linalg.eigh(M.toarray(), K.toarray(), subset_by_index=[0, count - 1])
        return w, U, 0

    def shift_invert():
        w, U = eigsh(M, k=count, M=K, sigma=-1e-3 * scale, which="LM",
                     v0=np.ones(n), tol=0)
        return w, U, 0

    def lobpcg_block():
        return _lobpcg_fallback(M, K, count, scale, tol, seed, maxiter)

    if n <= DENSE_CUTOFF or count > n // 4:
        attempts = [dense]
    else:
        attempts = [shift_invert, lobpcg_block]
        if n <= DENSE_LAST_RESORT:
            attempts.append(dense)

    shifted_lu = None

    def refine(X):
        """Shift-invert subspace iteration at M + cK, Rayleigh-Ritz in (M, K).

        A few sweeps at the well-conditioned shifted operator repair any
        backend's rough subspace; in particular they recover the accuracy
        the dense path loses when K is scaled nearly singular.
        """
        nonlocal shifted_lu
        if shifted_lu is None:
            shifted_lu = splu((M + (1e-3 * scale) * K).tocsc())
        X = shifted_lu.solve(K @ X)
        return _rayleigh_ritz(M, K, X)

    best = None
    for attempt in attempts:
        try:
            w, U, iterations = attempt()
            w, U = _rayleigh_ritz(M, K, U)
        except Exception:
            continue
        for _ in range(4):
            res, back = _residuals(M, K, w, U)
            gram_err = np.abs(U.T @ (K @ U) - np.eye(count)).max()
            if back.max() <= tol and gram_err <= 1e-8:
                return EigenResult(w, U, res, iterations)
            if best is None or back.max() < best[0]:
                best = (back.max(), res)
            try:
                w, U = refine(U)
            except Exception:
                break

    raise ConvergenceError(
        f"no backend met tol {tol:.1e}; best backward error "
        f"{best[0]:.3e}" if best else "all eigensolver backends failed",
        residuals=best[1] if best else None,
    )


def _lobpcg_fallback(M, K, count, scale, tol, seed, maxiter):
    delta = 1e-3 * scale
    prec = sparse.diags(1.0 / (M.diagonal() + delta * K.diagonal()))
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((M.shape[0], count))
    # capture the constant exactly; remaining columns orthogonalized against it
    X[:, 0] = 1.0
    X[:, 1:] -= np.outer(np.ones(M.shape[0]), X[:, 1:].mean(axis=0))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        w, U, hist = lobpcg(M, X, B=K, M=prec, largest=False, tol=tol,
                            maxiter=maxiter, retResidualNormsHistory=True)
    return w, U, len(hist)
