import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmwpose.errors import EmptyInputError
from mmwpose.lie import Pose, exp_so3
from mmwpose.metrics import (
    TrialResult,
    associate_scatterers,
    diverged,
    empirical_cdf,
    error_vector,
    loglog_slope,
    rmse,
)


def brute_force_cost(truth, est):
    best = np.inf
    for perm in itertools.permutations(range(len(truth)), len(est)):
        best = min(best, sum(np.sum((truth[i] - est[j]) ** 2) for j, i in enumerate(perm)))
    return best


def test_identity_errors_are_zero(rng):
    pose = Pose(exp_so3(rng.standard_normal(3)), rng.standard_normal(3))
    pts = rng.standard_normal((4, 3))
    res = error_vector(pose, pts, pose, pts)
    assert res.err_pos == 0.0 and res.err_rot == 0.0 and res.err_scat == 0.0


def test_rotation_error_magnitude():
    truth = Pose.identity()
    est = Pose(exp_so3([0.1, 0.0, 0.0]), np.zeros(3))
    res = error_vector(truth, np.zeros((0, 3)), est, np.zeros((0, 3)))
    assert abs(res.err_rot - 0.1) < 1e-10
    assert np.isnan(res.err_scat)


def test_position_error_sign():
    res = error_vector(Pose(np.eye(3), [1.0, 2.0, 3.0]), [], Pose(np.eye(3), [0.0, 2.0, 3.0]), [])
    assert np.array_equal(res.eps_r, [1.0, 0.0, 0.0])


def test_permuted_scatterers_match(rng):
    pts = rng.standard_normal((6, 3))
    res = error_vector(Pose.identity(), pts, Pose.identity(), pts[rng.permutation(6)])
    assert res.err_scat == 0.0 and res.unmatched == []


def test_association_simple_cases():
    a = np.array([[0.0, 0, 0], [5.0, 0, 0]])
    assert associate_scatterers(a, a)[0] == [(0, 0), (1, 1)]
    assert associate_scatterers(a, a[::-1])[0] == [(0, 1), (1, 0)]
    pairs, unmatched = associate_scatterers(a, a[1:])
    assert pairs == [(1, 0)] and unmatched == [0]


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=1, max_value=7), st.integers(min_value=0, max_value=2**31))
def test_association_is_optimal(n, seed):
    rng = np.random.default_rng(seed)
    truth = rng.standard_normal((n, 3))
    m = max(1, n - int(rng.integers(0, 2)))
    est = truth[rng.permutation(n)][:m] + 0.8 * rng.standard_normal((m, 3))
    pairs, unmatched = associate_scatterers(truth, est)
    assert len(pairs) == m and len(unmatched) == n - m
    cost = sum(np.sum((truth[i] - est[j]) ** 2) for i, j in pairs)
    assert cost == pytest.approx(brute_force_cost(truth, est), rel=1e-12, abs=1e-12)


def test_association_eight_points(rng):
    for _ in range(5):
        truth = rng.standard_normal((8, 3))
        est = truth[rng.permutation(8)] + 0.5 * rng.standard_normal((8, 3))
        pairs, _ = associate_scatterers(truth, est)
        cost = sum(np.sum((truth[i] - est[j]) ** 2) for i, j in pairs)
        assert cost == pytest.approx(brute_force_cost(truth, est), rel=1e-12)


def make(pos):
    return TrialResult(np.array([pos, 0.0, 0.0]), np.zeros(3), np.zeros((1, 3)))


def test_rmse_arithmetic():
    assert rmse([make(0.0)]) == (0.0, 0.0, 0.0)
    assert rmse([make(1.0), make(3.0)])[0] == pytest.approx(np.sqrt(5.0))
    # divergent trials are left out
    assert rmse([make(1.0), make(3.0), diverged()])[0] == pytest.approx(np.sqrt(5.0))


def test_rmse_empty():
    with pytest.raises(EmptyInputError):
        rmse([])
    with pytest.raises(EmptyInputError):
        rmse([diverged()])


def test_diverged_errors_are_infinite():
    d = diverged("LS")
    assert d.err_pos == np.inf and d.err_rot == np.inf and d.err_scat == np.inf


def test_cdf_counts_divergent_trials():
    x, f = empirical_cdf([0.3, np.inf, 0.1, 0.2])
    assert np.array_equal(x, [0.1, 0.2, 0.3])
    assert np.array_equal(f, [0.25, 0.5, 0.75])
    g, fg = empirical_cdf([0.3, np.inf, 0.1, 0.2], grid=[0.0, 0.15, 1.0, np.inf])
    assert np.array_equal(fg, [0.0, 0.25, 0.75, 1.0])
    with pytest.raises(EmptyInputError):
        empirical_cdf([])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(min_value=0.0, max_value=1e6) | st.just(float("inf")), min_size=1, max_size=40))
def test_cdf_monotone_in_unit_interval(errors):
    x, f = empirical_cdf(errors)
    assert np.all(np.diff(f) >= 0) and np.all((f >= 0) & (f <= 1))
    assert np.all(np.diff(x) >= 0)


def test_loglog_slope():
    x = np.array([10.0, 100.0, 1000.0])
    assert loglog_slope(x, 3.0 / x) == pytest.approx(-1.0)
