"""Property-based checks of structural invariants."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from featstack.evaluation import mae_with_se, mse_with_se
from featstack.stacking import (cnns_weights, fit_breiman, kfold_partition, n_tril,
                                simplex_project, theorem_weights)

from oracles import bisection_project, simplex_qp_exact

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


@st.composite
def tril_entries(draw):
    k = draw(st.integers(2, 6))
    return draw(arrays(np.float64, (draw(st.integers(1, 5)), n_tril(k)), elements=finite))


@given(tril_entries())
def test_constrained_head_weights_sum_to_one(L):
    np.testing.assert_allclose(cnns_weights(L).sum(axis=1), 1.0, atol=1e-10)


@given(arrays(np.float64, st.integers(1, 8), elements=finite))
def test_simplex_projection_matches_bisection(v):
    w = simplex_project(v)
    assert np.all(w >= 0) and abs(w.sum() - 1.0) < 1e-9
    np.testing.assert_allclose(w, bisection_project(v, iters=200)[0], atol=1e-9)


@given(arrays(np.float64, st.integers(1, 8), elements=finite))
def test_simplex_projection_is_idempotent(v):
    w = simplex_project(v)
    np.testing.assert_allclose(simplex_project(w), w, atol=1e-12)


@given(st.integers(2, 200), st.integers(2, 10), st.integers(0, 2**32 - 1))
def test_folds_partition_rows_and_balance(n, folds, seed):
    folds = min(folds, n)
    part = kfold_partition(n, folds, seed)
    rows = np.concatenate(part.folds())
    np.testing.assert_array_equal(np.sort(rows), np.arange(n))
    sizes = [len(f) for f in part.folds()]
    assert max(sizes) - min(sizes) <= 1


@st.composite
def spd_matrices(draw):
    k = draw(st.integers(2, 4))
    A = draw(arrays(np.float64, (k, k), elements=st.floats(-3, 3)))
    return A @ A.T + 0.5 * np.eye(k)


@given(spd_matrices())
def test_closed_form_weights_are_the_affine_minimizer(M):
    theta = theorem_weights(M)
    assert abs(theta.sum() - 1.0) < 1e-12
    # any other affine combination has a larger quadratic form
    rng = np.random.default_rng(0)
    d = rng.normal(size=(20, len(M)))
    d -= d.mean(axis=1, keepdims=True)
    base = theta @ M @ theta
    for step in d:
        other = theta + 0.1 * step
        assert other @ M @ other >= base - 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 4), st.integers(0, 10_000))
def test_breiman_reaches_the_exact_simplex_optimum(k, seed):
    rng = np.random.default_rng(seed)
    y = rng.normal(size=40)
    P = y[:, None] + rng.normal(size=(40, k))
    theta = fit_breiman(P, y).theta
    G, b = P.T @ P, P.T @ y
    _, best = simplex_qp_exact(G, b)
    assert theta @ G @ theta - 2 * b @ theta <= best + 1e-8 * (1 + abs(best))


@given(arrays(np.float64, st.integers(2, 30), elements=finite),
       arrays(np.float64, st.integers(2, 30), elements=finite))
def test_metric_values_are_nonnegative(y, yhat):
    n = min(len(y), len(yhat))
    for fn in (mse_with_se, mae_with_se):
        m = fn(y[:n], yhat[:n])
        assert m.value >= 0 and m.se >= 0 and m.n == n
