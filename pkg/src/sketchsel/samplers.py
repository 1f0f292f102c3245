"""Sample-selection strategies.

Every ``*_select`` function taking a :class:`~sketchsel.sketch.SketchProblem`
returns a :class:`~sketchsel.sketch.DesignOutcome` whose sketch and objective
are the exact ones for the chosen nodes.  Ties always break toward the lowest
node index.
"""
import itertools
import logging
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels, rng
from .errors import ModelError
from .linalg import inv_sqrt_spd, sym_eig
from .sketch import DesignOutcome, Selection

log = logging.getLogger(__name__)

EXHAUSTIVE_LIMIT = 10**6

METHODS = ("exhaustive", "greedy", "nbh", "nah", "relax-thresh", "relax-random",
           "eds-1", "eds-2", "eds-inf", "uniform")
RANDOMIZED = {"relax-random", "eds-1", "eds-2", "eds-inf", "uniform"}


@dataclass
class RelaxParams:
    max_iters: int = 500
    step_init: float = 1.0
    tol: float = 1e-6
    alpha: float = None


@dataclass
class SamplerSpec:
    method: str
    seed: int = None
    params: RelaxParams = field(default_factory=RelaxParams)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ModelError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if self.method in RANDOMIZED and self.seed is None:
            raise ModelError(f"method {self.method!r} is randomized and needs a seed")


def _top(scores, p):
    return tuple(int(i) for i in np.argsort(-np.asarray(scores), kind="stable")[:p])


def _outcome(problem, indices, method, started, **extras):
    sel = Selection(problem.n, tuple(indices))
    return DesignOutcome(sel, problem.sketch(sel), problem.objective(sel), method,
                         time.perf_counter() - started, problem.direction, extras)


def _budget(problem, p):
    p = problem.p if p is None else int(p)
    if not 1 <= p <= problem.n:
        raise ModelError(f"budget p={p} outside [1, {problem.n}]")
    return p


def exhaustive_select(problem, p=None):
    """Global optimum over all p-subsets, scanned in lexicographic order."""
    started = time.perf_counter()
    p = _budget(problem, p)
    total = math.comb(problem.n, p)
    if total > EXHAUSTIVE_LIMIT:
        raise ModelError(f"C({problem.n},{p}) = {total} subsets exceeds the {EXHAUSTIVE_LIMIT} guard")
    best, best_val = None, math.inf
    for combo in itertools.combinations(range(problem.n), p):
        val = problem.objective(Selection(problem.n, combo))
        if val < best_val:
            best, best_val = combo, val
    return _outcome(problem, best, "exhaustive", started)


def greedy_select(problem, p=None):
    """Add, one at a time, the node whose inclusion lowers the exact objective the most."""
    started = time.perf_counter()
    p = _budget(problem, p)
    chosen, history = [], []
    remaining = list(range(problem.n))
    for _ in range(p):
        best_j, best_val = None, math.inf
        for j in remaining:
            val = problem.objective(Selection(problem.n, tuple(chosen) + (j,)))
            if val < best_val:
                best_j, best_val = j, val
        chosen.append(best_j)
        remaining.remove(best_j)
        history.append(best_val)
    return _outcome(problem, chosen, "greedy", started, history=history)


def nbh_select(problem, p=None):
    """Noise-blind heuristic: largest row norms of ``R_x H^T`` (``R_x G^T`` for inverse)."""
    started = time.perf_counter()
    p = _budget(problem, p)
    scores = np.linalg.norm(problem.score_matrix, axis=1)
    return _outcome(problem, sorted(_top(scores, p)), "nbh", started)


def nah_select(problem, p=None):
    """Noise-aware heuristic: row norms whitened by ``(R_x + R_w)^{-1/2}``."""
    started = time.perf_counter()
    p = _budget(problem, p)
    whitened = inv_sqrt_spd(problem.R_x + problem.R_w) @ problem.score_matrix
    scores = np.linalg.norm(whitened, axis=1)
    return _outcome(problem, sorted(_top(scores, p)), "nah", started)


def project_capped_simplex(v, p, iters=200, jit=None):
    """Euclidean projection of ``v`` onto ``{c in [0,1]^n : sum(c) = p}``."""
    v = np.ascontiguousarray(v, dtype=np.float64).ravel()
    n = v.size
    if not 0 <= p <= n:
        raise ModelError(f"capped simplex needs 0 <= p <= n, got p={p}, n={n}")
    if p == 0:
        return np.zeros(n)
    if p == n:
        return np.ones(n)
    return kernels.get("capped_simplex", jit)(v, float(p), iters)


def _stationary(c, g, p, fc, tol):
    # Projected-gradient step at the scale 1/||g||_inf: stationary when it
    # barely moves or promises a first-order gain below 1e-8 * |f|.
    gmax = np.abs(g).max()
    if gmax == 0:
        return True
    d = project_capped_simplex(c - g / gmax, p) - c
    return np.abs(d).max() <= tol or -float(g @ d) <= 1e-8 * abs(fc)


def minimize_relaxation(problem, p, params=None):
    """Projected gradient with Armijo backtracking on the relaxed objective.

    Returns ``(c_best, f_best, iterations)``.
    """
    from .sketch import relaxed_gradient, relaxed_objective

    params = params or RelaxParams()
    alpha = None
    if not problem.constrained:
        alpha = problem.default_alpha() if params.alpha is None else params.alpha
        problem.check_alpha(alpha)

    def f(c):
        return relaxed_objective(problem, c, alpha)

    def grad(c):
        return relaxed_gradient(problem, c, alpha)

    n = problem.n
    c = np.full(n, p / n)
    fc = f(c)
    best_c, best_f = c, fc
    g = grad(c)
    gmax = np.abs(g).max()
    step = params.step_init / gmax if gmax > 0 else params.step_init
    stalled = 0
    it = 0
    for it in range(1, params.max_iters + 1):
        t = step
        first_move = None
        accepted = False
        for _ in range(60):
            trial = project_capped_simplex(c - t * g, p)
            if first_move is None:
                first_move = np.abs(trial - c).max()
            f_trial = f(trial)
            if f_trial <= fc + 1e-4 * g @ (trial - c):
                accepted = True
                break
            t *= 0.5
        if accepted and f_trial < fc:
            stalled = 0
            move = np.abs(trial - c).max()
            c, fc = trial, f_trial
            if fc < best_f:
                best_c, best_f = c, fc
            if move <= params.tol:
                break
            g = grad(c)
            step = 2.0 * t
        elif first_move <= params.tol or _stationary(c, g, p, fc, params.tol):
            break
        else:
            stalled += 1
        if stalled >= 10:
            warnings.warn("relaxation stalled for 10 backtracked steps; returning best iterate",
                          RuntimeWarning, stacklevel=2)
            break
    return best_c, best_f, it


def relax_select(problem, p=None, params=None, rounding="threshold", seed=None):
    """Solve the box relaxation, then round to ``p`` nodes.

    ``rounding='threshold'`` keeps the ``p`` largest entries; ``'random'``
    draws ``p`` distinct nodes from ``c / ||c||_1``.
    """
    started = time.perf_counter()
    p = _budget(problem, p)
    c, relaxed_value, iters = minimize_relaxation(problem, p, params)
    if rounding == "threshold":
        idx = sorted(_top(c, p))
        method = "relax-thresh"
    elif rounding == "random":
        if seed is None:
            raise ModelError("random rounding needs a seed")
        idx = sorted(rng.weighted_without_replacement(rng.substream(seed, "relax-round"), c, p))
        method = "relax-random"
    else:
        raise ModelError(f"unknown rounding {rounding!r}")
    return _outcome(problem, idx, method, started, relaxed_value=float(relaxed_value),
                    iterations=iters, c_relaxed=c.tolist())


def eds_weights(V_k, norm):
    """Row norms of ``V_k``: ``norm`` is 1, 2 or ``inf``."""
    ord_ = {1: 1, 2: 2, "1": 1, "2": 2, "inf": np.inf, math.inf: np.inf}.get(norm)
    if ord_ is None:
        raise ModelError(f"EDS norm must be 1, 2 or inf, got {norm!r}")
    return np.linalg.norm(np.asarray(V_k, dtype=np.float64), ord=ord_, axis=1)


def eds_select(V_k, p, norm, seed):
    """Experimental-design sampling: draw rows of ``V_k`` in proportion to their norm."""
    V_k = np.asarray(V_k, dtype=np.float64)
    n = V_k.shape[0]
    if not 1 <= p <= n:
        raise ModelError(f"p={p} outside [1, {n}]")
    w = eds_weights(V_k, norm)
    picks = rng.weighted_without_replacement(rng.substream(seed, "eds", str(norm)), w, p)
    return Selection(n, tuple(picks))


def uniform_random_select(n, p, seed):
    if not 0 <= p <= n:
        raise ModelError(f"p={p} outside [0, {n}]")
    perm = rng.substream(seed, "uniform").permutation(n)
    return Selection(n, tuple(sorted(int(i) for i in perm[:p])))


def problem_basis(problem, k=None):
    """``V_k`` for EDS: the problem's own basis, or the top eigenvectors of ``R_x``."""
    if problem.basis_k is not None:
        return problem.basis_k
    eig = sym_eig(problem.R_x)
    if k is None:
        w = eig.values
        k = max(1, int(np.sum(w > 1e-10 * max(w[0], 0.0))))
    return eig.vectors[:, :k]


def select(problem, method, p=None, seed=None, params=None):
    """Run ``method`` on ``problem`` and return its :class:`DesignOutcome`."""
    spec = SamplerSpec(method, seed, params or RelaxParams())
    p = _budget(problem, p)
    started = time.perf_counter()
    if method == "exhaustive":
        return exhaustive_select(problem, p)
    if method == "greedy":
        return greedy_select(problem, p)
    if method == "nbh":
        return nbh_select(problem, p)
    if method == "nah":
        return nah_select(problem, p)
    if method == "relax-thresh":
        return relax_select(problem, p, spec.params, "threshold")
    if method == "relax-random":
        return relax_select(problem, p, spec.params, "random", seed)
    if method.startswith("eds-"):
        sel = eds_select(problem_basis(problem), p, method[4:], seed)
        return _outcome(problem, sorted(sel.indices), method, started)
    sel = uniform_random_select(problem.n, p, seed)
    return _outcome(problem, sel.indices, method, started)
