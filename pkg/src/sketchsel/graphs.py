"""Random graph ensembles and their spectral bases."""
import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import GenerationError, ModelError
from .linalg import as_matrix, check_symmetric, sym_eig


@dataclass(frozen=True)
class Graph:
    """Undirected weighted graph stored as a dense symmetric weight matrix."""

    weights: np.ndarray

    def __post_init__(self):
        w = check_symmetric(self.weights, "weights", rtol=0.0)
        if np.any(np.diag(w) != 0):
            raise ModelError("weights must have a zero diagonal")
        if np.any(w < 0):
            raise ModelError("weights must be nonnegative")
        object.__setattr__(self, "weights", w)

    @property
    def n(self):
        return self.weights.shape[0]

    @property
    def adjacency(self):
        return self.weights

    def laplacian(self):
        return np.diag(self.weights.sum(axis=1)) - self.weights

    def edge_count(self):
        return int(np.count_nonzero(np.triu(self.weights, 1)))

    def is_connected(self):
        n = self.n
        if n == 0:
            return True
        seen = np.zeros(n, dtype=bool)
        seen[0] = True
        frontier = [0]
        while frontier:
            nbrs = np.flatnonzero(self.weights[frontier].any(axis=0) & ~seen)
            seen[nbrs] = True
            frontier = nbrs.tolist()
        return bool(seen.all())


def _from_upper(mask_or_weights):
    upper = np.triu(mask_or_weights, 1).astype(np.float64)
    return Graph(upper + upper.T)


def _check_prob(name, value):
    if not 0.0 <= value <= 1.0:
        raise ModelError(f"{name} must lie in [0, 1], got {value}")


def gen_sbm(n, community_sizes, p_in, p_out, seed):
    """Stochastic block model: edge probability ``p_in`` within a community, ``p_out`` across."""
    sizes = [int(s) for s in community_sizes]
    if sum(sizes) != n or any(s <= 0 for s in sizes):
        raise ModelError(f"community sizes {sizes} do not sum to n={n}")
    _check_prob("p_in", p_in)
    _check_prob("p_out", p_out)
    labels = np.repeat(np.arange(len(sizes)), sizes)
    prob = np.where(labels[:, None] == labels[None, :], p_in, p_out)
    u = rng.substream(seed, "sbm").random((n, n))
    return _from_upper(u < prob)


def gen_er(n, p_edge, seed):
    """Erdos-Renyi graph with independent edges of probability ``p_edge``."""
    _check_prob("p_edge", p_edge)
    u = rng.substream(seed, "er").random((n, n))
    return _from_upper(u < p_edge)


def ring_degree(n, p_e):
    """Even ring-lattice degree matching edge density ``p_e`` (at least 2)."""
    half = int(math.floor(p_e * (n - 1) / 2.0 + 0.5))
    k = 2 * max(1, half)
    return min(k, n - 1 if (n - 1) % 2 == 0 else n - 2)


def _watts_strogatz(n, k_ring, p_r, gen):
    adj = np.zeros((n, n), dtype=bool)
    for j in range(1, k_ring // 2 + 1):
        idx = np.arange(n)
        adj[idx, (idx + j) % n] = True
        adj[(idx + j) % n, idx] = True
    for j in range(1, k_ring // 2 + 1):
        for i in range(n):
            t = (i + j) % n
            if gen.random() >= p_r or not adj[i, t]:
                continue
            free = np.flatnonzero(~adj[i])
            free = free[free != i]
            if free.size == 0:
                continue
            new = int(free[int(gen.random() * free.size)])
            adj[i, t] = adj[t, i] = False
            adj[i, new] = adj[new, i] = True
    return adj


def gen_smallworld(n, p_e, p_r, seed, max_tries=10):
    """Watts-Strogatz small world: ring lattice of density ~``p_e``, rewiring prob ``p_r``.

    Retries with fresh substreams until the graph is connected.
    """
    _check_prob("p_e", p_e)
    _check_prob("p_r", p_r)
    if n < 3:
        raise ModelError("small-world graphs need n >= 3")
    k_ring = ring_degree(n, p_e)
    for attempt in range(max_tries):
        gen = rng.substream(seed, "sw", attempt)
        g = Graph(_watts_strogatz(n, k_ring, p_r, gen).astype(np.float64))
        if g.is_connected():
            return g
    raise GenerationError(f"no connected small-world graph after {max_tries} tries")


def sensor_kernel(points):
    """Gaussian kernel weights over all pairs, scaled to span [0.01, 1]."""
    diff = points[:, None, :] - points[None, :, :]
    d2 = np.sum(diff * diff, axis=-1)
    off = ~np.eye(len(points), dtype=bool)
    lo, hi = d2[off].min(), d2[off].max()
    if lo <= 1e-14 or hi - lo <= 1e-12:
        return None
    beta = math.log(100.0) / (hi - lo)
    alpha = math.exp(beta * lo)
    w = alpha * np.exp(-beta * d2)
    w[~off] = 0.0
    return w


def gen_sensor_knn(n, knn, seed, max_tries=10):
    """Sensor network: uniform points in the unit square, Gaussian weights, kNN sparsified."""
    if not 0 < knn < n:
        raise ModelError(f"need 0 < knn < n, got knn={knn}, n={n}")
    for attempt in range(max_tries):
        pts = rng.substream(seed, "sensor", attempt).random((n, 2))
        w = sensor_kernel(pts)
        if w is None:
            continue
        d = np.where(np.eye(n, dtype=bool), np.inf, -w)
        nearest = np.argsort(d, axis=1, kind="stable")[:, :knn]
        keep = np.zeros((n, n), dtype=bool)
        keep[np.repeat(np.arange(n), knn), nearest.ravel()] = True
        keep |= keep.T
        return Graph(np.where(keep, w, 0.0))
    raise GenerationError(f"degenerate sensor placement after {max_tries} tries")


def read_edge_list(path, n=None):
    """Load ``i,j,w`` lines (0-indexed) into a symmetric graph."""
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) not in (2, 3):
                raise ModelError(f"bad edge line: {line!r}")
            w = float(parts[2]) if len(parts) == 3 else 1.0
            rows.append((int(parts[0]), int(parts[1]), w))
    size = n if n is not None else (1 + max(max(i, j) for i, j, _ in rows) if rows else 0)
    W = np.zeros((size, size))
    for i, j, w in rows:
        if i == j:
            raise ModelError(f"self loop at node {i}")
        W[i, j] = W[j, i] = w
    return Graph(W)


@dataclass(frozen=True)
class SpectralBasis:
    V: np.ndarray
    lam: np.ndarray
    k: int

    @property
    def n(self):
        return self.V.shape[0]

    @property
    def V_k(self):
        return self.V[:, :self.k]

    def gft(self, x):
        return self.V.T @ x

    def igft(self, xf):
        return self.V @ xf


ORDERS = ("desc", "asc", "abs-desc")


def spectral_basis(shift, k, order="desc"):
    """Eigenbasis of a symmetric shift with the first ``k`` columns as the active band.

    ``order`` picks which eigenvalues count as "first": largest value
    (``desc``), smallest (``asc``) or largest magnitude (``abs-desc``).
    """
    shift = as_matrix(shift, "shift")
    n = shift.shape[0]
    if not 1 <= k <= n:
        raise ModelError(f"bandwidth k={k} outside [1, {n}]")
    eig = sym_eig(shift)
    if order == "desc":
        perm = np.arange(n)
    elif order == "asc":
        perm = np.arange(n)[::-1]
    elif order == "abs-desc":
        perm = np.argsort(-np.abs(eig.values), kind="stable")
    else:
        raise ModelError(f"unknown eigenvalue order {order!r}; choose from {ORDERS}")
    return SpectralBasis(np.ascontiguousarray(eig.vectors[:, perm]), eig.values[perm], int(k))
