"""
Hot numerical kernels, compiled with numba when available.

Every kernel exists twice: a ``*_nb`` loop version meant for ``numba.njit``
and a ``*_np`` version written with vectorized numpy.  The public names at
the bottom of the module resolve to one or the other once, at import time.

Set ``SKETCHSEL_DISABLE_NUMBA=1`` to force the numpy path (useful for
debugging, coverage, or platforms without numba).  ``benchmarks/`` compares
both paths.
"""
import math
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is an optional accelerator
    numba = None


def _env_disabled():
    flag = os.environ.get("SKETCHSEL_DISABLE_NUMBA", "").strip().lower()
    return flag in ("1", "true", "yes", "on")


USE_NUMBA = numba is not None and not _env_disabled()


def _jit(func):
    if numba is None:
        return func
    return numba.njit(cache=True, nogil=True)(func)


# ---------------------------------------------------------------------------
# Cyclic Jacobi eigenvalue iteration
# ---------------------------------------------------------------------------

def _rotation(app, aqq, apq):
    """Return (c, s) of the Jacobi rotation that zeroes ``a[p, q]``."""
    theta = (aqq - app) / (2.0 * apq)
    if abs(theta) > 1e150:
        t = 0.5 / theta
    else:
        t = 1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0))
        if theta < 0.0:
            t = -t
    c = 1.0 / math.sqrt(t * t + 1.0)
    return c, t * c


_rotation_nb = _jit(_rotation)


def _jacobi_nb(a, tol, max_sweeps):
    n = a.shape[0]
    a = a.copy()
    v = np.eye(n)
    fro = math.sqrt(np.sum(a * a))
    thresh = tol * fro
    for sweep in range(max_sweeps + 1):
        off = 0.0
        for i in range(n):
            for j in range(n):
                if i != j:
                    off += a[i, j] * a[i, j]
        if math.sqrt(off) <= thresh:
            return np.diag(a).copy(), v, sweep
        if sweep == max_sweeps:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                c, s = _rotation_nb(a[p, p], a[q, q], apq)
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
    return np.diag(a).copy(), v, -1


def _round_robin(n):
    """Pairings of a round-robin tournament; each round is a set of disjoint pairs."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(p, q), max(p, q)) for p, q in pairs if p < n and q < n]
        rounds.append((np.array([p for p, _ in pairs], dtype=np.intp),
                       np.array([q for _, q in pairs], dtype=np.intp)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _jacobi_np(a, tol, max_sweeps):
    # Parallel-order Jacobi: rotations on disjoint pairs commute, so a whole
    # round is applied with a handful of vectorized updates.
    n = a.shape[0]
    a = a.copy()
    v = np.eye(n)
    thresh = tol * math.sqrt(np.sum(a * a))
    rounds = _round_robin(n)
    offdiag = ~np.eye(n, dtype=bool)
    for sweep in range(max_sweeps + 1):
        off = math.sqrt(np.sum(a[offdiag] ** 2))
        if off <= thresh:
            return np.diag(a).copy(), v, sweep
        if sweep == max_sweeps:
            break
        for P, Q in rounds:
            if P.size == 0:
                continue
            apq = a[P, Q]
            active = apq != 0.0
            if not active.any():
                continue
            P, Q, apq = P[active], Q[active], apq[active]
            theta = (a[Q, Q] - a[P, P]) / (2.0 * apq)
            big = np.abs(theta) > 1e150
            safe = np.where(big, 1.0, theta)
            t = np.where(big, 0.5 / np.where(big, theta, 1.0),
                         np.sign(safe) / (np.abs(safe) + np.sqrt(safe * safe + 1.0)))
            t = np.where((~big) & (theta == 0.0), 1.0, t)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            colp, colq = a[:, P], a[:, Q]
            a[:, P] = c * colp - s * colq
            a[:, Q] = s * colp + c * colq
            rowp, rowq = a[P, :], a[Q, :]
            a[P, :] = c[:, None] * rowp - s[:, None] * rowq
            a[Q, :] = s[:, None] * rowp + c[:, None] * rowq
            vp, vq = v[:, P], v[:, Q]
            v[:, P] = c * vp - s * vq
            v[:, Q] = s * vp + c * vq
    return np.diag(a).copy(), v, -1


# ---------------------------------------------------------------------------
# Cholesky factorization and triangular solves
# ---------------------------------------------------------------------------

def _cholesky_nb(a, pivot_floor):
    n = a.shape[0]
    L = np.zeros((n, n))
    for j in range(n):
        d = a[j, j]
        for k in range(j):
            d -= L[j, k] * L[j, k]
        if not d > pivot_floor:
            return L, j
        ljj = math.sqrt(d)
        L[j, j] = ljj
        for i in range(j + 1, n):
            s = a[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s / ljj
    return L, -1


def _cholesky_np(a, pivot_floor):
    n = a.shape[0]
    L = np.zeros((n, n))
    for j in range(n):
        row = L[j, :j]
        d = a[j, j] - row @ row
        if not d > pivot_floor:
            return L, j
        ljj = math.sqrt(d)
        L[j, j] = ljj
        L[j + 1:, j] = (a[j + 1:, j] - L[j + 1:, :j] @ row) / ljj
    return L, -1


def _cho_solve_nb(L, b):
    n, r = b.shape
    y = np.empty((n, r))
    for c in range(r):
        for i in range(n):
            s = b[i, c]
            for k in range(i):
                s -= L[i, k] * y[k, c]
            y[i, c] = s / L[i, i]
        for i in range(n - 1, -1, -1):
            s = y[i, c]
            for k in range(i + 1, n):
                s -= L[k, i] * y[k, c]
            y[i, c] = s / L[i, i]
    return y


def _cho_solve_np(L, b):
    n = b.shape[0]
    y = np.empty_like(b)
    for i in range(n):
        y[i] = (b[i] - L[i, :i] @ y[:i]) / L[i, i]
    for i in range(n - 1, -1, -1):
        y[i] = (y[i] - L[i + 1:, i] @ y[i + 1:]) / L[i, i]
    return y


# ---------------------------------------------------------------------------
# Projection onto the capped simplex {c in [0,1]^n : sum(c) = p}
# ---------------------------------------------------------------------------

def _capped_simplex_nb(v, p, iters):
    n = v.shape[0]
    lo = v.min() - 1.0
    hi = v.max()
    for _ in range(iters):
        tau = 0.5 * (lo + hi)
        if tau == lo or tau == hi:
            break
        total = 0.0
        for i in range(n):
            x = v[i] - tau
            if x > 1.0:
                x = 1.0
            elif x < 0.0:
                x = 0.0
            total += x
        if total > p:
            lo = tau
        else:
            hi = tau
    tau = 0.5 * (lo + hi)
    out = np.empty(n)
    for i in range(n):
        x = v[i] - tau
        out[i] = min(1.0, max(0.0, x))
    return out


def _capped_simplex_np(v, p, iters):
    lo = v.min() - 1.0
    hi = v.max()
    for _ in range(iters):
        tau = 0.5 * (lo + hi)
        if tau == lo or tau == hi:
            break
        if np.clip(v - tau, 0.0, 1.0).sum() > p:
            lo = tau
        else:
            hi = tau
    return np.clip(v - 0.5 * (lo + hi), 0.0, 1.0)


# ---------------------------------------------------------------------------
# Sketch application: gather the selected rows, multiply by the sketch
# ---------------------------------------------------------------------------

def _gather_rows_nb(idx, X):
    # contiguous copy of the sampled rows; the m x p product then goes to BLAS,
    # which beats a hand loop for any batch worth timing
    p = idx.size
    T = X.shape[1]
    G = np.empty((p, T))
    for r in range(p):
        src = idx[r]
        for t in range(T):
            G[r, t] = X[src, t]
    return G


def _gather_apply_nb(Hs, idx, X):
    return Hs @ _gather_rows_nb(idx, X)


def _gather_apply_np(Hs, idx, X):
    return Hs @ X[idx]


if numba is not None:
    _jacobi_nb = _jit(_jacobi_nb)
    _cholesky_nb = _jit(_cholesky_nb)
    _cho_solve_nb = _jit(_cho_solve_nb)
    _capped_simplex_nb = _jit(_capped_simplex_nb)
    _gather_rows_nb = _jit(_gather_rows_nb)

# ---------------------------------------------------------------------------
# One-sided (Hestenes) Jacobi: implicit eigendecomposition of A^T A
# ---------------------------------------------------------------------------

def _hestenes_nb(a, tol, max_sweeps):
    # Rotates column pairs of U = A V until they are mutually orthogonal.
    # Each rotation is the Jacobi rotation of the Gram matrix A^T A, formed
    # from fresh dot products, so squared singular values are never rounded.
    r, c = a.shape
    U = a.copy()
    V = np.eye(c)
    for sweep in range(max_sweeps):
        rotated = False
        for i in range(c - 1):
            for j in range(i + 1, c):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for t in range(r):
                    alpha += U[t, i] * U[t, i]
                    beta += U[t, j] * U[t, j]
                    gamma += U[t, i] * U[t, j]
                if gamma == 0.0 or abs(gamma) <= tol * math.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                tan = math.copysign(1.0, zeta) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                cs = 1.0 / math.sqrt(1.0 + tan * tan)
                sn = cs * tan
                for t in range(r):
                    ui = U[t, i]
                    uj = U[t, j]
                    U[t, i] = cs * ui - sn * uj
                    U[t, j] = sn * ui + cs * uj
                for t in range(c):
                    vi = V[t, i]
                    vj = V[t, j]
                    V[t, i] = cs * vi - sn * vj
                    V[t, j] = sn * vi + cs * vj
        if not rotated:
            return U, V, sweep + 1
    return U, V, -1


def _hestenes_np(a, tol, max_sweeps):
    r, c = a.shape
    U = a.copy()
    V = np.eye(c)
    for sweep in range(max_sweeps):
        rotated = False
        for i in range(c - 1):
            for j in range(i + 1, c):
                ui, uj = U[:, i], U[:, j]
                alpha, beta, gamma = ui @ ui, uj @ uj, ui @ uj
                if gamma == 0.0 or abs(gamma) <= tol * math.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                tan = math.copysign(1.0, zeta) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                cs = 1.0 / math.sqrt(1.0 + tan * tan)
                sn = cs * tan
                rot = np.array([[cs, sn], [-sn, cs]])
                U[:, [i, j]] = U[:, [i, j]] @ rot
                V[:, [i, j]] = V[:, [i, j]] @ rot
        if not rotated:
            return U, V, sweep + 1
    return U, V, -1


_hestenes_nb = _jit(_hestenes_nb)


IMPLEMENTATIONS = {
    "jacobi": (_jacobi_nb, _jacobi_np),
    "hestenes": (_hestenes_nb, _hestenes_np),
    "cholesky": (_cholesky_nb, _cholesky_np),
    "cho_solve": (_cho_solve_nb, _cho_solve_np),
    "capped_simplex": (_capped_simplex_nb, _capped_simplex_np),
    "gather_apply": (_gather_apply_nb, _gather_apply_np),
}


def get(name, jit=None):
    """Return kernel ``name``; ``jit`` overrides the module-wide choice."""
    use = USE_NUMBA if jit is None else (jit and numba is not None)
    nb, npy = IMPLEMENTATIONS[name]
    return nb if use else npy


jacobi = get("jacobi")
hestenes = get("hestenes")
cholesky = get("cholesky")
cho_solve = get("cho_solve")
capped_simplex = get("capped_simplex")
gather_apply = get("gather_apply")
