"""Dense real linear algebra on float64 numpy arrays.

Matrices are plain ``np.ndarray`` objects; :func:`as_matrix` is the single
entry point that validates shape and finiteness.
"""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ModelError, NumericError

EIG_TOL = 1e-12
EIG_MAX_SWEEPS = 100
PINV_RTOL = 1e-12
PIVOT_RTOL = 1e-13
SYMMETRY_RTOL = 1e-12
EPS = np.finfo(np.float64).eps


def as_matrix(a, name="matrix"):
    """Return ``a`` as a C-contiguous 2-D float64 array with finite entries."""
    arr = np.array(a, dtype=np.float64, copy=True, order="C")
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ModelError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ModelError(f"{name} has non-finite entries")
    return arr


def check_symmetric(a, name="matrix", rtol=SYMMETRY_RTOL):
    a = as_matrix(a, name)
    if a.shape[0] != a.shape[1]:
        raise ModelError(f"{name} must be square, got {a.shape}")
    scale = np.abs(a).max() if a.size else 0.0
    if scale > 0 and np.abs(a - a.T).max() > rtol * scale:
        raise ModelError(f"{name} is not symmetric")
    return a


@dataclass(frozen=True)
class EigResult:
    vectors: np.ndarray
    values: np.ndarray


def sym_eig(a, jit=None):
    """Eigendecomposition of a real symmetric matrix by cyclic Jacobi rotations.

    Eigenvalues come back in descending order.  Each eigenvector is signed so
    that its entry of largest magnitude (first one, on ties) is positive.
    """
    a = check_symmetric(a, "A")
    a = 0.5 * (a + a.T)
    n = a.shape[0]
    if n == 0:
        return EigResult(np.zeros((0, 0)), np.zeros(0))
    values, vectors, sweeps = kernels.get("jacobi", jit)(a, EIG_TOL, EIG_MAX_SWEEPS)
    if sweeps < 0:
        raise NumericError(f"Jacobi iteration did not converge in {EIG_MAX_SWEEPS} sweeps")
    order = np.argsort(-values, kind="stable")
    values = values[order]
    vectors = vectors[:, order]
    pivots = np.argmax(np.abs(vectors), axis=0)
    signs = np.where(vectors[pivots, np.arange(n)] < 0, -1.0, 1.0)
    return EigResult(np.ascontiguousarray(vectors * signs), values)


def cholesky(a, name="A", jit=None):
    """Lower Cholesky factor; a pivot below 1e-13*max|A| is an error."""
    a = check_symmetric(a, name)
    scale = np.abs(a).max() if a.size else 0.0
    L, bad = kernels.get("cholesky", jit)(a, PIVOT_RTOL * scale)
    if bad >= 0:
        raise NumericError(f"{name} is not positive definite: pivot {bad} is non-positive or negligible")
    return L


def solve_spd(a, b, jit=None):
    """Solve ``A X = B`` for symmetric positive definite ``A``."""
    L = cholesky(a, jit=jit)
    b = np.asarray(b, dtype=np.float64)
    vec = b.ndim == 1
    B = as_matrix(b, "B")
    if B.shape[0] != L.shape[0]:
        raise ModelError(f"dimension mismatch: A is {L.shape}, B has {B.shape[0]} rows")
    X = kernels.get("cho_solve", jit)(L, B)
    return X[:, 0] if vec else X


def inv_sqrt_spd(a):
    """Symmetric inverse square root ``M`` with ``M A M = I``."""
    eig = sym_eig(a)
    if eig.values.size and eig.values[-1] <= 0:
        raise NumericError(f"matrix is not positive definite (smallest eigenvalue {eig.values[-1]:.3e})")
    V = eig.vectors
    M = (V / np.sqrt(eig.values)) @ V.T
    return 0.5 * (M + M.T)


def sqrt_psd(a):
    """Symmetric square root of a PSD matrix; tiny negative eigenvalues are zeroed."""
    eig = sym_eig(a)
    w = eig.values
    scale = max(abs(w[0]), abs(w[-1])) if w.size else 0.0
    if w.size and w[-1] < -1e-10 * max(scale, 1.0):
        raise NumericError(f"matrix is not positive semidefinite (eigenvalue {w[-1]:.3e})")
    V = eig.vectors
    S = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
    return 0.5 * (S + S.T)


def svd_jacobi(a, jit=None):
    """Thin SVD ``a = U diag(s) V^T`` by one-sided Jacobi, ``s`` descending.

    The rotations are exactly those of the cyclic Jacobi method applied to
    ``a^T a`` (or ``a a^T`` when that is smaller), but the Gram matrix is
    never formed, so small singular values keep full relative accuracy.
    """
    a = as_matrix(a, "A")
    r, c = a.shape
    if c > r:
        U, s, V = svd_jacobi(a.T, jit)
        return V, s, U
    if a.size == 0:
        return np.zeros((r, c)), np.zeros(c), np.eye(c)
    B, V, sweeps = kernels.get("hestenes", jit)(np.ascontiguousarray(a), max(r, 1) * EPS, EIG_MAX_SWEEPS)
    if sweeps < 0:
        raise NumericError(f"one-sided Jacobi did not converge in {EIG_MAX_SWEEPS} sweeps")
    s = np.sqrt(np.einsum("ij,ij->j", B, B))
    order = np.argsort(-s, kind="stable")
    s, B, V = s[order], B[:, order], V[:, order]
    nz = s > 0
    U = np.zeros_like(B)
    U[:, nz] = B[:, nz] / s[nz]
    return U, s, V


def pinv(a, tol=PINV_RTOL):
    """Moore-Penrose pseudoinverse from the Jacobi eigendecomposition of the smaller Gram matrix.

    Singular values below ``tol * s_max`` are treated as zero.
    """
    a = as_matrix(a, "A")
    if a.size == 0:
        return np.zeros((a.shape[1], a.shape[0]))
    U, s, V = svd_jacobi(a)
    keep = s > tol * s[0]
    return (V[:, keep] / s[keep]) @ U[:, keep].T


def numerical_rank(a, rtol=1e-10):
    """Rank of ``a`` counted from singular values above ``rtol * s_max``."""
    a = as_matrix(a, "A")
    if a.size == 0:
        return 0
    s = svd_jacobi(a)[1]
    if s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))
