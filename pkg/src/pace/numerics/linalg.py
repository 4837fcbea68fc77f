"""Dense float64 linear algebra with validated contracts.

Arrays are plain numpy ndarrays; these wrappers add the shape and
symmetry checks the rest of the package relies on and normalize the
error types. Eigendecomposition returns eigenvalues in descending order
because every caller (subspace energy cut, spectra reports) wants the
dominant directions first.
"""

import numpy as np
import scipy.linalg

from ..errors import NumericalError, ShapeError

# symmetry slack for sym_eig input checks; callers symmetrize upstream
SYM_ATOL = 1e-9


def ensure_matrix(a, name: str = "array") -> np.ndarray:
    """Coerce to a 2-D float64 ndarray, rejecting anything else."""
    out = np.asarray(a, dtype=np.float64)
    if out.ndim != 2:
        raise ShapeError(f"{name}: expected 2-D, got shape {out.shape}")
    return out


def matmul(a, b) -> np.ndarray:
    a = ensure_matrix(a, "a")
    b = ensure_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims disagree ({a.shape} @ {b.shape})")
    return a @ b


def sym_eig(s) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix.

    Returns (eigenvalues descending, eigenvectors as columns in matching
    order). Input must be square and symmetric within SYM_ATOL.
    """
    s = ensure_matrix(s, "s")
    if s.shape[0] != s.shape[1]:
        raise ShapeError(f"sym_eig: matrix not square {s.shape}")
    if s.size and np.max(np.abs(s - s.T)) > SYM_ATOL:
        raise ShapeError("sym_eig: matrix not symmetric within 1e-9")
    w, v = np.linalg.eigh(s)
    order = np.arange(w.shape[0] - 1, -1, -1)
    return w[order], v[:, order]


def solve_spd(s, b) -> np.ndarray:
    """Solve s @ x = b for symmetric positive definite s via Cholesky."""
    s = ensure_matrix(s, "s")
    b = ensure_matrix(b, "b")
    if s.shape[0] != s.shape[1]:
        raise ShapeError(f"solve_spd: matrix not square {s.shape}")
    if s.shape[0] != b.shape[0]:
        raise ShapeError(f"solve_spd: rhs rows {b.shape[0]} != n {s.shape[0]}")
    try:
        factor = scipy.linalg.cho_factor(s, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise NumericalError(f"solve_spd: matrix not positive definite ({exc})") from exc
    return scipy.linalg.cho_solve(factor, b, check_finite=False)
