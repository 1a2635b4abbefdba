"""Dense complex linear-algebra helpers shared by the rest of the package.

Every matrix handled here is small (order a few dozen at most), so the
routines are LAPACK-backed via numpy and verify their own post-conditions
instead of chasing speed. All functions are pure; inputs are never mutated.
"""

from __future__ import annotations

import numpy as np

from .errors import EigenError, NearSingularError

__all__ = [
    "check_finite",
    "hermitianize",
    "hermitian_eig",
    "max_eig_general",
    "kron",
    "vec",
    "unvec",
    "solve_hpd",
]

# Max allowed |A - A^H| entry (relative to max(1, |A|_max)) before a matrix
# is rejected as non-Hermitian.
HERMITIAN_TOL = 1e-12


def check_finite(a, name="array"):
    """Return ``a`` as an ndarray, rejecting NaN/Inf entries."""
    a = np.asarray(a)
    if a.size and not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def hermitianize(a, tol=HERMITIAN_TOL, name="matrix"):
    """Validate near-Hermitian symmetry and return the exact Hermitian part.

    The deviation max|A - A^H| must not exceed ``tol * max(1, |A|_max)``;
    the returned matrix is (A + A^H)/2, which satisfies A(i,j) = conj(A(j,i))
    exactly.
    """
    a = np.asarray(a, dtype=complex)
    check_finite(a, name)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    if a.size == 0:
        return a
    scale = max(1.0, float(np.max(np.abs(a))))
    dev = float(np.max(np.abs(a - a.conj().T)))
    if dev > tol * scale:
        raise ValueError(
            f"{name} is not Hermitian: max asymmetry {dev:.3e} exceeds "
            f"{tol:.1e} * {scale:.3e}"
        )
    return 0.5 * (a + a.conj().T)


def hermitian_eig(a, tol=1e-10):
    """Eigendecomposition of a Hermitian matrix.

    Returns ``(w, v)`` with real eigenvalues ``w`` in ascending order and a
    unitary eigenvector matrix ``v`` (columns). The reconstruction residual
    max_k ||A v_k - w_k v_k|| is checked against ``tol * ||A||_2``.
    """
    a = hermitianize(a)
    if a.shape[0] < 1:
        raise ValueError("matrix order must be at least 1")
    try:
        w, v = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        raise EigenError(f"Hermitian eigensolver did not converge: {exc}") from exc
    norm_a = float(np.max(np.abs(w))) if w.size else 0.0
    resid = float(np.max(np.linalg.norm(a @ v - v * w, axis=0)))
    if resid > tol * max(norm_a, 1e-300):
        raise EigenError(
            f"eigendecomposition residual {resid:.3e} exceeds "
            f"{tol:.1e} * ||A|| = {tol * norm_a:.3e}"
        )
    return w, v


def max_eig_general(a):
    """Eigenvalue of largest modulus of a general square complex matrix.

    Ties in modulus are broken in favour of the larger real part.
    """
    a = check_finite(np.asarray(a, dtype=complex), "matrix")
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix must be square, got shape {a.shape}")
    try:
        evals = np.linalg.eigvals(a)
    except np.linalg.LinAlgError as exc:
        raise EigenError(f"general eigensolver did not converge: {exc}") from exc
    order = np.lexsort((evals.real, np.abs(evals)))
    return complex(evals[order[-1]])


def kron(a, b):
    """Kronecker product with dimensions (rA*rB) x (cA*cB)."""
    a = np.atleast_2d(np.asarray(a, dtype=complex))
    b = np.atleast_2d(np.asarray(b, dtype=complex))
    return np.kron(a, b)


def vec(a):
    """Stack the columns of a matrix into one column vector."""
    return np.asarray(a, dtype=complex).reshape(-1, order="F")


def unvec(x, shape):
    """Inverse of :func:`vec` for the given (rows, cols) shape."""
    return np.asarray(x, dtype=complex).reshape(shape, order="F")


def solve_hpd(a, b, rel_gap=1e-12, resid_tol=1e-10):
    """Solve A x = b for Hermitian positive definite A.

    Raises :class:`NearSingularError` (carrying a condition estimate) when
    the smallest eigenvalue is below ``rel_gap`` times the largest. The
    residual ||A x - b|| is verified against ``resid_tol * ||b||``.
    """
    a = hermitianize(a)
    b = check_finite(np.asarray(b, dtype=complex), "rhs")
    if b.shape[0] != a.shape[0]:
        raise ValueError(f"shape mismatch: A is {a.shape}, b is {b.shape}")
    w = np.linalg.eigvalsh(a)
    w_min, w_max = float(w[0]), float(w[-1])
    if w_max <= 0.0 or w_min <= rel_gap * w_max:
        cond = float("inf") if w_min <= 0.0 else w_max / w_min
        raise NearSingularError(
            f"matrix is not safely positive definite "
            f"(min eig {w_min:.3e}, max eig {w_max:.3e}, cond ~ {cond:.3e})",
            cond=cond,
        )
    x = np.linalg.solve(a, b)
    resid = float(np.linalg.norm(a @ x - b))
    if resid > resid_tol * max(float(np.linalg.norm(b)), 1e-300):
        raise NearSingularError(
            f"solve residual {resid:.3e} exceeds {resid_tol:.1e} * ||b||",
            cond=w_max / w_min,
        )
    return x
