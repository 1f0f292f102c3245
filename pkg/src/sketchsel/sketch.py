"""Closed-form sketches, their mean-squared errors, and the relaxed selection objective.

Notation: ``H`` is the m x n operator, ``R_x`` and ``R_w`` the signal and
noise covariances, and a :class:`Selection` of p node indices defines the
p x n selection matrix ``C``.  In the *direct* problem the target is
``y = H x``; in the *inverse* problem the observed signal is ``x = H^T y``
and the target is the least-squares estimate ``A_LS x``.
"""
import json
import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import kernels
from .errors import ModelError, NumericError, RankDeficiencyError
from .linalg import as_matrix, check_symmetric, cholesky, numerical_rank, pinv, solve_spd, sym_eig

log = logging.getLogger(__name__)

DIRECT = "direct"
INVERSE = "inverse"
OBJECTIVE_FLOOR = 1e-9


@dataclass(frozen=True)
class Selection:
    """An ordered set of ``p`` distinct node indices out of ``n``."""

    n: int
    indices: tuple

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if len(set(idx)) != len(idx):
            raise ModelError(f"duplicate indices in selection {idx}")
        if any(i < 0 or i >= self.n for i in idx):
            raise ModelError(f"selection {idx} out of range for n={self.n}")
        object.__setattr__(self, "indices", idx)

    @classmethod
    def from_mask(cls, c):
        c = np.asarray(c)
        return cls(c.size, tuple(np.flatnonzero(c)))

    @property
    def p(self):
        return len(self.indices)

    @property
    def array(self):
        return np.array(self.indices, dtype=np.intp)

    @property
    def mask(self):
        c = np.zeros(self.n)
        c[list(self.indices)] = 1.0
        return c

    def matrix(self):
        return selection_matrix(self)


def selection_matrix(sel):
    C = np.zeros((sel.p, sel.n))
    C[np.arange(sel.p), sel.array] = 1.0
    return C


def _check_binary(c, n=None):
    c = np.asarray(c, dtype=np.float64).ravel()
    if not np.all((c == 0.0) | (c == 1.0)):
        raise ModelError("selection vector must be binary")
    if n is not None and c.size != n:
        raise ModelError(f"selection vector has length {c.size}, expected {n}")
    return c


def _clamp(value, scale):
    tol = OBJECTIVE_FLOOR * max(1.0, scale)
    if value < -tol:
        raise NumericError(f"objective {value:.3e} is negative beyond round-off")
    return max(float(value), 0.0)


# ---------------------------------------------------------------------------
# Noiseless sketches
# ---------------------------------------------------------------------------

def _sampled_basis_pinv(V_k, sel):
    CV = as_matrix(V_k, "V_k")[sel.array]
    k = CV.shape[1]
    rank = numerical_rank(CV)
    if rank < k:
        raise RankDeficiencyError(
            f"C V_k has rank {rank} < k={k} (deficiency {k - rank}); the selection cannot recover the band",
            deficiency=k - rank)
    return pinv(CV)


def sketch_direct_noiseless(H, V_k, sel):
    """``H V_k (C V_k)^+``: exact output for every signal in span(V_k)."""
    H = as_matrix(H, "H")
    return H @ as_matrix(V_k, "V_k") @ _sampled_basis_pinv(V_k, sel)


def ls_operator(H):
    """Least-squares operator ``(H H^T)^{-1} H`` of a full-row-rank ``H``."""
    H = as_matrix(H, "H")
    try:
        return solve_spd(H @ H.T, H)
    except NumericError as exc:
        raise RankDeficiencyError(f"H is not full row rank: {exc}") from exc


def sketch_inverse_noiseless(H, V_k, sel):
    """``A_LS V_k (C V_k)^+``: reproduces the LS estimate on span(V_k)."""
    return ls_operator(H) @ as_matrix(V_k, "V_k") @ _sampled_basis_pinv(V_k, sel)


# ---------------------------------------------------------------------------
# Noisy sketches and their MSE
# ---------------------------------------------------------------------------

def _wiener(target, R_x, R_w, sel):
    # Returns (B, X) with B = C R_x T^T and X = (C (R_x+R_w) C^T)^{-1} B.
    idx = sel.array
    R = R_x + R_w
    B = (R_x @ target.T)[idx]
    try:
        X = solve_spd(R[np.ix_(idx, idx)], B)
    except NumericError as exc:
        raise NumericError(f"C (R_x + R_w) C^T is singular for selection {sel.indices}: {exc}") from exc
    return B, X


def _check_cov(H, R_x, R_w):
    H = as_matrix(H, "H")
    R_x = check_symmetric(R_x, "R_x")
    R_w = check_symmetric(R_w, "R_w")
    n = H.shape[1]
    if R_x.shape != (n, n) or R_w.shape != (n, n):
        raise ModelError(f"covariances must be {n}x{n}")
    return H, R_x, R_w


def sketch_direct(H, R_x, R_w, sel):
    """Optimal noisy sketch ``H R_x C^T (C (R_x + R_w) C^T)^{-1}``."""
    H, R_x, R_w = _check_cov(H, R_x, R_w)
    return _wiener(H, R_x, R_w, sel)[1].T


def objective_direct(H, R_x, R_w, sel):
    """MSE of the optimal direct sketch for ``sel``."""
    H, R_x, R_w = _check_cov(H, R_x, R_w)
    B, X = _wiener(H, R_x, R_w, sel)
    base = float(np.trace(H @ R_x @ H.T))
    return _clamp(base - float(np.sum(B * X)), base)


def sketch_inverse(H, R_x, R_w, sel):
    """Optimal noisy inverse sketch ``A_LS R_x C^T (C (R_x + R_w) C^T)^{-1}``."""
    H, R_x, R_w = _check_cov(H, R_x, R_w)
    return _wiener(ls_operator(H), R_x, R_w, sel)[1].T


def projector_from_ls(H):
    """``G = H^T A_LS``, the orthogonal projector onto the row space of ``H``."""
    H = as_matrix(H, "H")
    G = H.T @ ls_operator(H)
    return 0.5 * (G + G.T)


def objective_inverse(H, R_x, R_w, sel):
    """``E||H^T y_hat - x||^2`` for the optimal inverse sketch."""
    H, R_x, R_w = _check_cov(H, R_x, R_w)
    B, X = _wiener(projector_from_ls(H), R_x, R_w, sel)
    base = float(np.trace(R_x))
    return _clamp(base - float(np.sum(B * X)), base)


def _column_terms(K, R_x, R_w, c):
    # tr[K C R_x] and tr[C (R_x+R_w) C K] for C = diag(c) and symmetric K.
    lin = float(c @ np.einsum("ij,ji->i", R_x, K))
    quad = float(c @ (((R_x + R_w) * K) @ c))
    return lin, quad


def objective_column_direct(H, R_x, R_w, c):
    """MSE of the column-sampled sketch ``H_s = H C^T`` for the direct problem."""
    H, R_x, R_w = _check_cov(H, R_x, R_w)
    c = _check_binary(c, H.shape[1])
    base = float(np.trace(H @ R_x @ H.T))
    lin, quad = _column_terms(H.T @ H, R_x, R_w, c)
    return _clamp(base - 2.0 * lin + quad, base)


def objective_column_inverse(H, R_x, R_w, c):
    """MSE of ``x_hat = H^T H C^T C (x + w)`` against ``x``."""
    H, R_x, R_w = _check_cov(H, R_x, R_w)
    c = _check_binary(c, H.shape[1])
    Hbar = H.T @ H
    base = float(np.trace(R_x))
    lin = float(c @ np.einsum("ij,ji->i", R_x, Hbar))
    quad = float(c @ (((R_x + R_w) * (Hbar @ Hbar)) @ c))
    return _clamp(base - 2.0 * lin + quad, base)


def apply_sketch(H_s, sel, x_observed, jit=None):
    """``H_s (C x)``: gather the p sampled entries and multiply; no O(n) work."""
    H_s = np.ascontiguousarray(H_s, dtype=np.float64)
    X = np.asarray(x_observed, dtype=np.float64)
    vec = X.ndim == 1
    X = X.reshape(X.shape[0], -1) if vec else X
    if H_s.shape[1] != sel.p or X.shape[0] != sel.n:
        raise ModelError(f"sketch {H_s.shape}, selection p={sel.p} n={sel.n}, signals {X.shape} do not match")
    Y = kernels.get("gather_apply", jit)(H_s, sel.array, X)
    return Y[:, 0] if vec else Y


# ---------------------------------------------------------------------------
# Problem container
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SketchProblem:
    """Everything needed to score a selection: operator, covariances, budget."""

    direction: str
    H: np.ndarray
    R_x: np.ndarray
    R_w: np.ndarray
    p: int
    constrained: bool = False
    basis_k: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.direction not in (DIRECT, INVERSE):
            raise ModelError(f"direction must be {DIRECT!r} or {INVERSE!r}")
        H, R_x, R_w = _check_cov(self.H, self.R_x, self.R_w)
        for name, val in (("H", H), ("R_x", R_x), ("R_w", R_w)):
            object.__setattr__(self, name, val)
        cholesky(R_w, "R_w")
        if not 1 <= self.p <= self.n:
            raise ModelError(f"budget p={self.p} outside [1, {self.n}]")
        if self.direction == INVERSE and numerical_rank(H) < H.shape[0]:
            raise RankDeficiencyError("inverse problems need H with full row rank")

    @property
    def n(self):
        return self.H.shape[1]

    @property
    def m(self):
        return self.H.shape[0]

    @cached_property
    def A_ls(self):
        return ls_operator(self.H)

    @cached_property
    def G(self):
        return projector_from_ls(self.H)

    @cached_property
    def target(self):
        """Operator whose output the sketch approximates (``H`` or ``A_LS``)."""
        return self.H if self.direction == DIRECT else self.A_ls

    @cached_property
    def score_matrix(self):
        """``M = R_x H^T`` (direct) or ``R_x G^T`` (inverse); rows score the nodes."""
        other = self.H if self.direction == DIRECT else self.G
        return self.R_x @ other.T

    @cached_property
    def base_trace(self):
        if self.direction == DIRECT:
            return float(np.trace(self.H @ self.R_x @ self.H.T))
        return float(np.trace(self.R_x))

    @cached_property
    def _column_K(self):
        if self.direction == DIRECT:
            K = self.H.T @ self.H
            return K, K
        Hbar = self.H.T @ self.H
        return Hbar, Hbar @ Hbar

    @cached_property
    def _column_cache(self):
        lin_K, quad_K = self._column_K
        lin = np.einsum("ij,ji->i", self.R_x, lin_K)
        quad = (self.R_x + self.R_w) * quad_K
        return lin, quad

    def objective(self, sel):
        """Exact MSE of the sketch this problem pairs with ``sel``."""
        if self.constrained:
            lin, quad = self._column_cache
            idx = sel.array
            val = self.base_trace - 2.0 * lin[idx].sum() + quad[np.ix_(idx, idx)].sum()
            return _clamp(val, self.base_trace)
        idx = sel.array
        B = self.score_matrix[idx]
        try:
            X = solve_spd(self._R_total[np.ix_(idx, idx)], B)
        except NumericError as exc:
            raise NumericError(f"C (R_x + R_w) C^T is singular for selection {sel.indices}: {exc}") from exc
        return _clamp(self.base_trace - float(np.sum(B * X)), self.base_trace)

    @cached_property
    def _R_total(self):
        return self.R_x + self.R_w

    def sketch(self, sel):
        """Sketch matrix ``H_s`` (m x p) for ``sel``."""
        if self.constrained:
            return np.ascontiguousarray(self.H[:, sel.array])
        return _wiener(self.target, self.R_x, self.R_w, sel)[1].T

    @cached_property
    def _total_spectrum(self):
        return sym_eig(self._R_total).values

    @property
    def lambda_min(self):
        return float(self._total_spectrum[-1])

    def default_alpha(self):
        return 0.5 * self.lambda_min

    def check_alpha(self, alpha):
        lam = self.lambda_min
        if not (alpha > 0 and alpha < lam - 1e-12):
            raise ModelError(
                f"alpha={alpha!r} invalid: need 0 < alpha < lambda_min(R_x + R_w) = {lam:.6e}")
        cond = (self._total_spectrum[0] - alpha) / (lam - alpha)
        log.debug("relaxation alpha=%.3e, cond(R_x + R_w - alpha I)=%.3e", alpha, cond)
        return float(alpha)


def make_problem(direction, H, R_x, R_w, p, constrained=False, ridge=0.0, basis_k=None):
    R_w = as_matrix(R_w, "R_w")
    if ridge:
        R_w = R_w + ridge * np.eye(R_w.shape[0])
    return SketchProblem(direction, H, R_x, R_w, int(p), bool(constrained), basis_k)


# ---------------------------------------------------------------------------
# Relaxed objective over c in [0,1]^n
# ---------------------------------------------------------------------------

def _relaxed_parts(problem, c, alpha):
    c = np.asarray(c, dtype=np.float64).ravel()
    if c.size != problem.n or np.any(c < -1e-12) or np.any(c > 1 + 1e-12):
        raise ModelError("relaxed selection vector must lie in [0, 1]^n")
    c = np.clip(c, 0.0, 1.0)
    alpha = problem.check_alpha(problem.default_alpha() if alpha is None else alpha)
    Rbar = problem.R_x + problem.R_w - alpha * np.eye(problem.n)
    M = problem.score_matrix.T  # m x n; M = H R_x or G R_x
    s = np.sqrt(c / alpha)
    W = np.eye(problem.n) + s[:, None] * Rbar * s[None, :]
    Q = solve_spd(W, np.diag(s))  # W^{-1} S
    SWS = s[:, None] * Q  # S W^{-1} S = (D^{-1} + Rbar)^{-1}
    return c, alpha, Rbar, M, s, Q, SWS


def relaxed_objective(problem, c_frac, alpha=None):
    """Smooth relaxation of the selection objective.

    Evaluates ``tr[R_y - M D M^T + M D (Rbar^{-1} + D)^{-1} D M^T]`` with
    ``D = diag(c)/alpha`` and ``Rbar = R_x + R_w - alpha I``.  The inner
    combination is computed as ``S (I + S Rbar S)^{-1} S`` with
    ``S = D^{1/2}``, which needs no inverse of ``Rbar``.  At binary ``c`` it
    equals the exact objective for every admissible ``alpha``.
    """
    if problem.constrained:
        return column_relaxed_objective(problem, c_frac)
    _, _, _, M, _, _, SWS = _relaxed_parts(problem, c_frac, alpha)
    return float(problem.base_trace - np.sum((M @ SWS) * M))


def relaxed_gradient(problem, c_frac, alpha=None):
    """Gradient of :func:`relaxed_objective` with respect to ``c``.

    With ``P = I - Rbar S W^{-1} S`` the derivative is
    ``-(P K P^T)_ii / alpha`` for ``K = M^T M``.
    """
    if problem.constrained:
        return column_relaxed_gradient(problem, c_frac)
    _, alpha, Rbar, M, _, _, SWS = _relaxed_parts(problem, c_frac, alpha)
    P = np.eye(problem.n) - Rbar @ SWS
    PM = P @ M.T  # n x m
    return -np.sum(PM * PM, axis=1) / alpha


def column_relaxed_objective(problem, c_frac):
    """Column-sampling objective with ``diag(c)`` fractional (a convex quadratic)."""
    c = np.clip(np.asarray(c_frac, dtype=np.float64).ravel(), 0.0, 1.0)
    lin, quad = problem._column_cache
    return float(problem.base_trace - 2.0 * lin @ c + c @ quad @ c)


def column_relaxed_gradient(problem, c_frac):
    c = np.clip(np.asarray(c_frac, dtype=np.float64).ravel(), 0.0, 1.0)
    lin, quad = problem._column_cache
    return -2.0 * lin + 2.0 * (quad @ c)


# ---------------------------------------------------------------------------
# Design outcome
# ---------------------------------------------------------------------------

@dataclass
class DesignOutcome:
    selection: Selection
    H_s: np.ndarray
    objective: float
    method: str
    wall_time: float = 0.0
    direction: str = DIRECT
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.objective < 0:
            raise NumericError(f"negative objective {self.objective}")

    def to_dict(self, H_s_path=None):
        out = {
            "method": self.method,
            "n": self.selection.n,
            "p": self.selection.p,
            "direction": self.direction,
            "indices": list(self.selection.indices),
            "objective": self.objective,
            "wall_time_s": self.wall_time,
        }
        out["H_s"] = H_s_path if H_s_path is not None else self.H_s.tolist()
        for key, val in self.extras.items():
            out.setdefault(key, val)
        return out

    def to_json(self, **kw):
        return json.dumps(self.to_dict(**kw), indent=2)

    @classmethod
    def from_dict(cls, d, base_dir=None):
        from .matrix_io import read_matrix
        import os

        H_s = d["H_s"]
        if isinstance(H_s, str):
            path = H_s if base_dir is None or os.path.isabs(H_s) else os.path.join(base_dir, H_s)
            H_s = read_matrix(path)
        else:
            H_s = np.array(H_s, dtype=np.float64).reshape(-1, int(d["p"]))
        known = {"method", "n", "p", "direction", "indices", "objective", "wall_time_s", "H_s"}
        return cls(Selection(int(d["n"]), tuple(d["indices"])), H_s, float(d["objective"]),
                   d["method"], float(d.get("wall_time_s") or 0.0), d.get("direction", DIRECT),
                   {k: v for k, v in d.items() if k not in known})
