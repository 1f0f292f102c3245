import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from conftest import random_problem_data
from sketchsel import samplers
from sketchsel.errors import ModelError
from sketchsel.samplers import (METHODS, RelaxParams, SamplerSpec, eds_select, eds_weights, exhaustive_select,
                                greedy_select, nah_select, nbh_select, project_capped_simplex, relax_select, select,
                                uniform_random_select)
from sketchsel.sketch import DIRECT, INVERSE, Selection, make_problem


def problem(seed, n=8, m=3, p=2, direction=DIRECT, constrained=False, noise=0.1):
    H, R_x, R_w = random_problem_data(seed, n, m, noise)
    return make_problem(direction, H, R_x, R_w, p, constrained)


def brute_best(prob, p):
    import itertools

    return min(prob.objective(Selection(prob.n, s)) for s in itertools.combinations(range(prob.n), p))


# --- exhaustive --------------------------------------------------------------

def test_exhaustive_full_set_and_dominant_node():
    prob = problem(0, n=3, p=3)
    out = exhaustive_select(prob)
    assert out.selection.indices == (0, 1, 2)
    assert out.objective == prob.objective(Selection(3, (0, 1, 2)))
    R_x = np.zeros((4, 4))
    R_x[2, 2] = 5.0
    dom = make_problem(DIRECT, np.eye(4), R_x, 1e-6 * np.eye(4), 1)
    assert exhaustive_select(dom).selection.indices == (2,)


def test_exhaustive_ties_lexicographic_and_guard():
    _, R_x, R_w = random_problem_data(1, 5, 2)
    flat = make_problem(DIRECT, np.zeros((2, 5)), R_x, R_w, 2)
    assert exhaustive_select(flat).selection.indices == (0, 1)
    big = problem(2, n=40, p=20)
    with pytest.raises(ModelError, match="guard"):
        exhaustive_select(big)


# --- greedy ------------------------------------------------------------------

def test_greedy_p1_equals_exhaustive():
    for seed in range(10):
        prob = problem(seed, p=1)
        assert greedy_select(prob).selection == exhaustive_select(prob).selection


def test_greedy_diagonal_closed_form():
    r = np.array([1.0, 4.0, 2.0, 3.0, 0.5])
    w = np.array([1.0, 8.0, 0.2, 1.0, 0.1])
    prob = make_problem(DIRECT, np.eye(5), np.diag(r), np.diag(w), 4)
    gain = r**2 / (r + w)
    out = greedy_select(prob)
    assert list(out.selection.indices) == list(np.argsort(-gain, kind="stable")[:4])
    expected = [r.sum() - np.sort(gain)[::-1][:t].sum() for t in range(1, 5)]
    np.testing.assert_allclose(out.extras["history"], expected, rtol=1e-12)


def test_greedy_never_beats_exhaustive_and_reports_ratio():
    ratios = []
    for seed in range(100):
        prob = problem(seed)
        g = greedy_select(prob).objective
        e = exhaustive_select(prob).objective
        assert g >= e - 1e-9
        ratios.append(g / e)
    assert max(ratios) < math.inf


# --- heuristics --------------------------------------------------------------

def test_nbh_examples():
    prob = make_problem(DIRECT, np.eye(3), np.diag([3.0, 1.0, 2.0]), np.eye(3), 2)
    assert nbh_select(prob).selection.indices == (0, 2)
    _, R_x, R_w = random_problem_data(3, 6, 2)
    zero = make_problem(DIRECT, np.zeros((2, 6)), R_x, R_w, 3)
    assert nbh_select(zero).selection.indices == (0, 1, 2)


@pytest.mark.parametrize("direction", [DIRECT, INVERSE])
def test_nbh_nah_sort_oracle(direction):
    H, R_x, R_w = random_problem_data(4, 9, 3)
    prob = make_problem(direction, H, R_x, R_w, 4)
    if direction == DIRECT:
        M = R_x @ H.T
    else:
        M = R_x @ (H.T @ np.linalg.solve(H @ H.T, H)).T
    norms = np.linalg.norm(M, axis=1)
    assert list(nbh_select(prob).selection.indices) == sorted(np.argsort(-norms)[:4])
    w, V = np.linalg.eigh(R_x + R_w)
    W = (V / np.sqrt(w)) @ V.T
    norms = np.linalg.norm(W @ M, axis=1)
    assert list(nah_select(prob).selection.indices) == sorted(np.argsort(-norms)[:4])


def test_nah_hand_example():
    prob = make_problem(DIRECT, np.eye(2), np.diag([4.0, 4.0]), np.diag([12.0, 1.0]), 1)
    assert nah_select(prob).selection.indices == (1,)
    assert nbh_select(prob).selection.indices == (0,)


def test_nah_equals_nbh_for_scalar_total_covariance():
    gen = np.random.default_rng(0)
    for seed in range(20):
        H, R_x, _ = random_problem_data(seed, 10, 3)
        beta = np.linalg.eigvalsh(R_x).max() + 1.0
        prob = make_problem(DIRECT, H, R_x, beta * np.eye(10) - R_x, 4)
        assert nah_select(prob).selection == nbh_select(prob).selection
    del gen


# --- capped simplex ------------------------------------------------------------

def test_projection_examples(jit):
    np.testing.assert_allclose(project_capped_simplex([0.9, 0.8, 0.1], 1, jit=jit), [0.55, 0.45, 0.0],
                               atol=1e-12)
    v = np.array([0.2, 0.5, 1.0, 0.3])
    np.testing.assert_allclose(project_capped_simplex(v, 2.0, jit=jit), v, atol=1e-12)
    np.testing.assert_array_equal(project_capped_simplex(v, 0), np.zeros(4))
    np.testing.assert_array_equal(project_capped_simplex(v, 4), np.ones(4))
    with pytest.raises(ModelError):
        project_capped_simplex(v, 5)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(2, 12), frac=st.floats(0.05, 0.95))
def test_projection_is_feasible_and_optimal(seed, n, frac):
    gen = np.random.default_rng(seed)
    v = gen.normal(0, 2, n)
    p = frac * n
    c = project_capped_simplex(v, p)
    assert c.min() >= -1e-10 and c.max() <= 1 + 1e-10
    assert abs(c.sum() - p) <= 1e-10
    # variational inequality: <v - c, z - c> <= 0 for every feasible z
    for _ in range(20):
        z = project_capped_simplex(gen.normal(0, 2, n), p)
        assert (v - c) @ (z - c) <= 1e-8


# --- relaxation ----------------------------------------------------------------

def test_relax_full_budget():
    prob = problem(5, n=6, p=6)
    out = relax_select(prob)
    assert out.selection.indices == tuple(range(6))


def test_relax_diagonal_matches_greedy():
    r = np.array([1.0, 4.0, 2.0, 3.0, 0.5])
    w = np.array([1.0, 8.0, 0.2, 1.0, 0.1])
    prob = make_problem(DIRECT, np.eye(5), np.diag(r), np.diag(w), 2)
    assert set(relax_select(prob).selection.indices) == set(greedy_select(prob).selection.indices)


def test_relaxation_lower_bounds_exhaustive():
    for seed in range(20):
        prob = problem(seed)
        out = relax_select(prob)
        c = np.array(out.extras["c_relaxed"])
        assert c.min() >= -1e-10 and c.max() <= 1 + 1e-10 and abs(c.sum() - 2) <= 1e-9
        assert out.extras["relaxed_value"] <= exhaustive_select(prob).objective + 1e-9
        assert out.objective >= exhaustive_select(prob).objective - 1e-9


def test_relax_random_deterministic_and_needs_seed():
    prob = problem(6, n=10, p=3)
    a = relax_select(prob, rounding="random", seed=3)
    b = relax_select(prob, rounding="random", seed=3)
    assert a.selection == b.selection and a.selection.p == 3
    with pytest.raises(ModelError):
        relax_select(prob, rounding="random")
    with pytest.raises(ModelError):
        relax_select(prob, rounding="sideways")


def test_relax_constrained_problem():
    prob = problem(7, n=8, p=3, constrained=True)
    out = relax_select(prob)
    assert out.objective >= exhaustive_select(prob).objective - 1e-9
    assert out.extras["relaxed_value"] <= exhaustive_select(prob).objective + 1e-9


def test_relax_stall_warning(monkeypatch):
    prob = problem(8, n=6, p=2)
    # any move away from the uniform start raises the objective, so every line search fails
    monkeypatch.setattr("sketchsel.sketch.relaxed_objective", lambda pr, c, a=None: 1.0 + float(np.ptp(c) > 0))
    monkeypatch.setattr("sketchsel.sketch.relaxed_gradient",
                        lambda pr, c, a=None: -np.arange(1.0, 7.0))
    with pytest.warns(RuntimeWarning, match="stalled"):
        c, f, _ = samplers.minimize_relaxation(prob, 2, RelaxParams(max_iters=50))
    np.testing.assert_array_equal(c, np.full(6, 1 / 3))
    assert f == 1.0


# --- EDS and uniform -----------------------------------------------------------

def test_eds_uniform_rows_goodness_of_fit():
    n, trials = 8, 100_000
    V = np.ones((n, 2)) / np.sqrt(n)
    counts = np.zeros(n)
    for s in range(trials // 10):
        for j in range(10):
            counts[eds_select(V, 1, 2, seed=s * 10 + j).indices[0]] += 1
    _, pval = stats.chisquare(counts)
    assert pval > 0.001


def test_eds_zero_row_last():
    V = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0], [0.5, 0.5]])
    for seed in range(50):
        assert 2 not in eds_select(V, 3, "inf", seed).indices
    assert set(eds_select(V, 4, 1, 0).indices) == {0, 1, 2, 3}


def test_eds_norms_differ():
    V = np.array([[0.6, 0.6], [0.8, 0.0], [0.1, 0.1]])
    w2, winf = eds_weights(V, 2), eds_weights(V, "inf")
    assert np.argmax(w2) == 0 and np.argmax(winf) == 1
    first2 = sum(eds_select(V, 1, 2, s).indices[0] == 0 for s in range(3000))
    firstinf = sum(eds_select(V, 1, "inf", s).indices[0] == 0 for s in range(3000))
    assert first2 > firstinf
    with pytest.raises(ModelError):
        eds_weights(V, 3)


def test_uniform_random():
    assert uniform_random_select(5, 5, 0).indices == (0, 1, 2, 3, 4)
    assert uniform_random_select(20, 4, 9) == uniform_random_select(20, 4, 9)
    n, p, trials = 10, 3, 20000
    freq = np.zeros(n)
    for s in range(trials):
        freq[list(uniform_random_select(n, p, s).indices)] += 1
    q = p / n
    assert np.all(np.abs(freq - trials * q) <= 4 * np.sqrt(trials * q * (1 - q)))


# --- dispatcher ----------------------------------------------------------------

def test_sampler_spec_validation():
    with pytest.raises(ModelError):
        SamplerSpec("nonsense")
    with pytest.raises(ModelError):
        SamplerSpec("uniform")
    SamplerSpec("greedy")


@pytest.mark.parametrize("method", METHODS)
def test_every_method_returns_valid_selection(method):
    for seed in range(100 if method not in ("exhaustive", "relax-thresh", "relax-random") else 15):
        prob = problem(seed, n=8, p=3, direction=INVERSE if seed % 2 else DIRECT, constrained=seed % 3 == 0)
        out = select(prob, method, seed=seed)
        idx = out.selection.indices
        assert len(idx) == 3 and len(set(idx)) == 3 and all(0 <= i < 8 for i in idx)
        assert out.H_s.shape == (prob.m, 3)
        assert out.objective == pytest.approx(prob.objective(out.selection), rel=1e-12)
        assert out.objective >= brute_best(prob, 3) - 1e-9


@pytest.mark.parametrize("method", ["greedy", "nbh", "nah", "relax-thresh"])
def test_permutation_equivariance(method):
    H, R_x, R_w = random_problem_data(21, 9, 3)
    perm = np.random.default_rng(1).permutation(9)
    P = np.eye(9)[perm]  # (P x)_i = x_perm[i]
    base = select(make_problem(DIRECT, H, R_x, R_w, 3), method)
    moved = select(make_problem(DIRECT, H @ P.T, P @ R_x @ P.T, P @ R_w @ P.T, 3), method)
    inv = np.argsort(perm)
    assert sorted(inv[list(base.selection.indices)]) == sorted(moved.selection.indices)
