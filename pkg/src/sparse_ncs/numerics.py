"""Small dense linear-algebra kernels shared by the rest of the package.

Everything here operates on plain ``numpy`` arrays of modest size (tens of
rows), so the implementations favour robustness over speed and delegate to
LAPACK through numpy/scipy.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla

SYM_TOL = 1e-10


class NumericsError(ValueError):
    """Raised when a kernel's precondition is violated."""


class NotPositiveDefiniteError(NumericsError):
    def __init__(self, minor: int):
        super().__init__(f"matrix is not positive definite: leading minor of order {minor} fails")
        self.minor = minor


class NoHyperbolicSplittingError(NumericsError):
    pass


class DivergenceError(ArithmeticError):
    def __init__(self, step: int, message: str = ""):
        super().__init__(message or f"trajectory diverged at step {step}")
        self.step = step


def symmetry_defect(M: np.ndarray) -> float:
    M = np.asarray(M, dtype=float)
    return float(np.max(np.abs(M - M.T))) if M.size else 0.0


def symmetrize(M: np.ndarray, tol: float = SYM_TOL) -> np.ndarray:
    """Return ``(M + M.T)/2`` after checking the asymmetry is within ``tol * ||M||``."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise NumericsError(f"expected a square matrix, got shape {M.shape}")
    defect = symmetry_defect(M)
    scale = max(np.max(np.abs(M)) if M.size else 0.0, 1.0)
    if defect > tol * scale:
        raise NumericsError(f"matrix is not symmetric: max |M - M^T| = {defect:.3e}")
    return 0.5 * (M + M.T)


def sym_eig_extremes(M: np.ndarray) -> tuple[float, float]:
    """Smallest and largest eigenvalue of a symmetric matrix."""
    w = np.linalg.eigvalsh(symmetrize(M))
    return float(w[0]), float(w[-1])


def lambda_min(M: np.ndarray) -> float:
    return sym_eig_extremes(M)[0]


def lambda_max(M: np.ndarray) -> float:
    return sym_eig_extremes(M)[1]


def sigma_max(M: np.ndarray) -> float:
    """Largest singular value (induced 2-norm); zero for empty matrices."""
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0.0
    return float(np.linalg.svd(M, compute_uv=False)[0])


def spd_solve(M: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve ``M X = B`` for symmetric positive definite ``M`` via Cholesky."""
    M = symmetrize(M)
    c, info = sla.lapack.dpotrf(M, lower=1, clean=1)
    if info > 0:
        raise NotPositiveDefiniteError(int(info))
    if info < 0:
        raise NumericsError(f"dpotrf: illegal argument {-info}")
    return sla.cho_solve((c, True), np.asarray(B, dtype=float))


def spd_inverse(M: np.ndarray) -> np.ndarray:
    return spd_solve(M, np.eye(np.shape(M)[0]))


def spectral_abscissa(M: np.ndarray) -> float:
    """Largest real part over the eigenvalues of a square matrix."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise NumericsError(f"expected a square matrix, got shape {M.shape}")
    if M.size == 0:
        return -np.inf
    try:
        w = np.linalg.eigvals(M)
    except np.linalg.LinAlgError as exc:
        # LAPACK's dhseqr gives up after 30 * n sweeps.
        raise NumericsError(
            f"eigenvalue iteration did not converge within {30 * M.shape[0]} QR sweeps"
        ) from exc
    return float(np.max(w.real))


def stable_invariant_subspace(M: np.ndarray, dim: int, tol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis (n x dim) of the invariant subspace of the open left half plane.

    Uses an ordered real Schur decomposition. Raises
    :class:`NoHyperbolicSplittingError` if an eigenvalue sits on the imaginary
    axis (relative to ``tol * ||M||``) or the stable dimension is not ``dim``.
    """
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    w = np.linalg.eigvals(M)
    scale = max(np.linalg.norm(M, 1), 1.0)
    if np.any(np.abs(w.real) <= tol * scale):
        raise NoHyperbolicSplittingError(
            "no hyperbolic splitting: eigenvalue on the imaginary axis "
            f"(min |Re| = {np.min(np.abs(w.real)):.3e})"
        )
    T, Q, sdim = sla.schur(M, output="real", sort="lhp")
    if sdim != dim:
        raise NoHyperbolicSplittingError(
            f"stable subspace has dimension {sdim}, expected {dim} (n = {n})"
        )
    return Q[:, :dim]


def rk4_step_matrix(A: np.ndarray, dt: float) -> np.ndarray:
    """Propagator of one classical RK4 step for the linear field x' = A x.

    For linear fields the four stages collapse to the degree-4 Taylor
    polynomial I + hA + (hA)^2/2 + (hA)^3/6 + (hA)^4/24.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    hA = dt * A
    T = np.eye(n)
    term = np.eye(n)
    for k in range(1, 5):
        term = term @ hA / k
        T = T + term
    return T


def rk4_integrate(
    A: np.ndarray,
    x0: np.ndarray,
    dt: float,
    steps: int,
    blowup: float = np.inf,
) -> np.ndarray:
    """Fixed-step RK4 trajectory of x' = A x; returns an array of shape (steps + 1, n).

    Raises :class:`DivergenceError` with the offending step index when the
    state becomes non-finite or its norm exceeds ``blowup * max(1, ||x0||)``.
    """
    if not dt > 0:
        raise NumericsError(f"dt must be positive, got {dt}")
    x = np.asarray(x0, dtype=float).copy()
    T = rk4_step_matrix(A, dt)
    out = np.empty((steps + 1, x.size))
    out[0] = x
    limit = blowup * max(1.0, float(np.linalg.norm(x)))
    for k in range(1, steps + 1):
        x = T @ x
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > limit:
            err = DivergenceError(k)
            err.partial = out[:k]
            raise err
        out[k] = x
    return out
