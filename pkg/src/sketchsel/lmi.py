"""Semidefinite formulations of the selection problem and SDPA export.

The decision vector is ``x = (c_1, ..., c_n, y)`` where ``y`` packs the upper
triangle of the symmetric slack ``Y`` row by row; off-diagonal entries carry
a factor sqrt(2) so that ``<Y, Z>`` equals the dot product of the packed
vectors.  Every block is affine in ``x``: ``F(x) = F0 + sum_i x_i F_i``.
"""
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ModelError
from .linalg import solve_spd
from .matrix_io import atomic_write, format_value
from .sketch import DIRECT, INVERSE

VARIANTS = ("direct", "inverse", "col-direct", "col-inverse")
SQRT2 = math.sqrt(2.0)


@dataclass
class LmiBlock:
    constant: np.ndarray
    coeffs: np.ndarray  # (n_vars, d, d)
    diagonal: bool = False

    @property
    def size(self):
        return self.constant.shape[0]

    def evaluate(self, x):
        return self.constant + np.tensordot(np.asarray(x, dtype=np.float64), self.coeffs, axes=1)


@dataclass
class LmiProblem:
    """``min objective . x`` subject to every block ``F0 + sum x_i F_i`` being PSD."""

    objective: np.ndarray
    blocks: list
    meta: dict = field(default_factory=dict)

    @property
    def n_vars(self):
        return self.objective.size

    @property
    def psd_blocks(self):
        return [b for b in self.blocks if not b.diagonal]

    def pack(self, c, Y):
        return np.concatenate([np.asarray(c, dtype=np.float64), pack_symmetric(Y)])

    def evaluate(self, x):
        return [b.evaluate(x) for b in self.blocks]


def sym_var_count(d):
    return d * (d + 1) // 2


def _sym_basis(d):
    """Coefficient matrices of the packed symmetric variable, in packing order."""
    out = []
    for j in range(d):
        for l in range(j, d):
            E = np.zeros((d, d))
            if j == l:
                E[j, j] = 1.0
            else:
                E[j, l] = E[l, j] = 1.0 / SQRT2
            out.append(E)
    return out


def pack_symmetric(Y):
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    d = Y.shape[0]
    iu = np.triu_indices(d)
    scale = np.where(iu[0] == iu[1], 1.0, SQRT2)
    return Y[iu] * scale


def _variant_of(problem):
    if problem.constrained:
        return "col-direct" if problem.direction == DIRECT else "col-inverse"
    return problem.direction


def build_lmi(problem, alpha=None, variant=None):
    """Exact affine LMI data for ``problem``.

    The semidefinite block has the Schur-complement form whose feasible
    ``Y`` satisfy ``Y >= (residual error covariance)``; minimizing
    ``tr[Y]`` at a binary ``c`` recovers the exact MSE.  The constraints
    ``sum(c) = p`` and ``0 <= c <= 1`` become two diagonal blocks.
    """
    variant = variant or _variant_of(problem)
    if variant not in VARIANTS:
        raise ModelError(f"unknown LMI variant {variant!r}")
    n = problem.n
    R_x, R = problem.R_x, problem.R_x + problem.R_w
    inverse = variant in ("inverse", "col-inverse")
    if inverse and problem.direction != INVERSE:
        problem = type(problem)(INVERSE, problem.H, problem.R_x, problem.R_w, problem.p, problem.constrained)
    H = problem.H
    meta = {"variant": variant, "n": n, "m": problem.m, "p": problem.p}

    if variant in ("direct", "inverse"):
        alpha = problem.check_alpha(problem.default_alpha() if alpha is None else alpha)
        meta["alpha"] = alpha
        M = problem.score_matrix.T  # H R_x or G R_x
        base = H @ R_x @ H.T if variant == "direct" else R_x
        lower = solve_spd(R - alpha * np.eye(n), np.eye(n))
        top_c = [np.outer(M[:, i], M[:, i]) / alpha for i in range(n)]
        off_c = [np.outer(M[:, i], np.eye(n)[i]) / alpha for i in range(n)]
        low_c = [np.diag(np.eye(n)[i]) / alpha for i in range(n)]
    else:
        if variant == "col-direct":
            base = H @ R_x @ H.T
            left, right = H, H @ R_x  # columns h_i and r_i
            off_src = H
        else:
            Hbar = H.T @ H
            base = R_x
            left, right = Hbar, R_x
            off_src = Hbar
        lower = solve_spd(R, np.eye(n))
        top_c = [np.outer(left[:, i], right[:, i]) + np.outer(right[:, i], left[:, i]) for i in range(n)]
        off_c = [np.outer(off_src[:, i], np.eye(n)[i]) for i in range(n)]
        low_c = [np.zeros((n, n)) for _ in range(n)]

    d = base.shape[0]
    size = d + n
    ny = sym_var_count(d)
    n_vars = n + ny
    F0 = np.zeros((size, size))
    F0[:d, :d] = -base
    F0[d:, d:] = 0.5 * (lower + lower.T)
    coeffs = np.zeros((n_vars, size, size))
    for i in range(n):
        coeffs[i, :d, :d] = top_c[i]
        coeffs[i, :d, d:] = off_c[i]
        coeffs[i, d:, :d] = off_c[i].T
        coeffs[i, d:, d:] = low_c[i]
    for v, E in enumerate(_sym_basis(d)):
        coeffs[n + v, :d, :d] = E
    psd = LmiBlock(F0, coeffs)

    box_c = np.zeros((n_vars, 2 * n, 2 * n))
    box0 = np.zeros((2 * n, 2 * n))
    for i in range(n):
        box_c[i, i, i] = 1.0
        box_c[i, n + i, n + i] = -1.0
        box0[n + i, n + i] = 1.0
    eq_c = np.zeros((n_vars, 2, 2))
    eq_c[:n, 0, 0] = 1.0
    eq_c[:n, 1, 1] = -1.0
    eq0 = np.diag([-float(problem.p), float(problem.p)])

    objective = np.zeros(n_vars)
    iu = np.triu_indices(d)
    objective[n + np.flatnonzero(iu[0] == iu[1])] = 1.0
    return LmiProblem(objective, [psd, LmiBlock(box0, box_c, True), LmiBlock(eq0, eq_c, True)], meta)


# ---------------------------------------------------------------------------
# SDPA sparse format
# ---------------------------------------------------------------------------

def sdpa_text(lmi):
    """SDPA sparse text: ``min c.x  s.t.  sum x_i F_i - F_0 >= 0``.

    Our blocks read ``F0 + sum x_i F_i``, so the constant is written negated.
    """
    meta = " ".join(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}" for k, v in lmi.meta.items())
    lines = [
        f'"sketchsel LMI export {meta}'.rstrip(),
        '"linear constraints sum(c)=p and 0<=c<=1 are encoded as diagonal blocks (negative block sizes)',
        f"{lmi.n_vars} = mDIM",
        f"{len(lmi.blocks)} = nBLOCK",
        " ".join(str(-b.size if b.diagonal else b.size) for b in lmi.blocks) + " = bLOCKsTRUCT",
        " ".join(format_value(v) for v in lmi.objective),
    ]
    for bno, block in enumerate(lmi.blocks, start=1):
        mats = [(0, -block.constant)] + [(v + 1, block.coeffs[v]) for v in range(lmi.n_vars)]
        for matno, F in mats:
            rows, cols = np.nonzero(np.triu(F))
            for i, j in zip(rows, cols):
                if block.diagonal and i != j:
                    continue
                lines.append(f"{matno} {bno} {i + 1} {j + 1} {format_value(F[i, j])}")
    return "\n".join(lines) + "\n"


def write_sdpa(lmi, path):
    text = sdpa_text(lmi)
    with atomic_write(path) as fh:
        fh.write(text)


def _parse_meta(comment):
    meta = {}
    for key, val in re.findall(r"(\w+)=(\S+)", comment):
        for cast in (int, float):
            try:
                meta[key] = cast(val)
                break
            except ValueError:
                continue
        else:
            meta[key] = val
    return meta


def read_sdpa(path):
    """Parse a file written by :func:`write_sdpa` back into an :class:`LmiProblem`."""
    with open(path) as fh:
        raw = fh.read().splitlines()
    meta = {}
    body = []
    for line in raw:
        s = line.strip()
        if not s:
            continue
        if s[0] in '"*':
            if s.startswith('"sketchsel LMI export'):
                meta = _parse_meta(s[len('"sketchsel LMI export'):])
            continue
        body.append(s.split("=")[0] if "=" in s else s)
    if len(body) < 2:
        raise ModelError(f"{path}: truncated SDPA file")

    def numbers(s):
        return [t for t in re.split(r"[\s,{}()]+", s) if t]

    n_vars = int(numbers(body[0])[0])
    n_blocks = int(numbers(body[1])[0])
    struct = [int(t) for t in numbers(body[2])] if n_blocks else []
    pos = 3 if n_blocks else 2
    if n_vars:
        objective = np.array([float(t) for t in numbers(body[pos])])
        pos += 1
    else:
        objective = np.zeros(0)
        if pos < len(body) and not numbers(body[pos]):
            pos += 1
    blocks = [LmiBlock(np.zeros((abs(s), abs(s))), np.zeros((n_vars, abs(s), abs(s))), s < 0) for s in struct]
    for line in body[pos:]:
        t = numbers(line)
        matno, bno, i, j = (int(v) for v in t[:4])
        val = float(t[4])
        b = blocks[bno - 1]
        target = b.constant if matno == 0 else b.coeffs[matno - 1]
        val = -val if matno == 0 else val
        target[i - 1, j - 1] = val
        target[j - 1, i - 1] = val
    return LmiProblem(objective, blocks, meta)
