import numpy as np
import pytest

from mmwpose.errors import DegeneracyError
from mmwpose.fivepoint import best_by_constraints, design_matrix, five_point
from mmwpose.projection import epipolar_residual, essential_constraints, essential_from_pose

from conftest import two_view


def same_up_to_sign(a, b):
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    return min(np.abs(a - b).max(), np.abs(a + b).max())


def test_truth_among_candidates(rng):
    for _ in range(100):
        pose, _, nu, v = two_view(rng, 5)
        cands = five_point(nu, v)
        assert 1 <= len(cands) <= 10
        truth = essential_from_pose(pose)
        assert min(same_up_to_sign(c, truth) for c in cands) < 1e-8
        for c in cands:
            assert abs(np.linalg.norm(c) - 1) < 1e-12
            assert np.max(np.abs(epipolar_residual(c, nu, v))) < 1e-9
            det, trace = essential_constraints(c)
            assert det < 1e-9 and trace < 1e-8
            s = np.linalg.svd(c, compute_uv=False)
            assert s[2] / s[0] < 1e-8


def test_duplicated_correspondence_is_degenerate(rng):
    _, _, nu, v = two_view(rng, 5)
    nu[4], v[4] = nu[3], v[3]
    with pytest.raises(DegeneracyError):
        five_point(nu, v)
    with pytest.raises(DegeneracyError):
        five_point(nu[:4], v[:4])


def test_overdetermined_noiseless(rng):
    pose, _, nu, v = two_view(rng, 12)
    truth = essential_from_pose(pose)
    assert min(same_up_to_sign(c, truth) for c in five_point(nu, v)) < 1e-8


def test_design_matrix_rows(rng):
    _, _, nu, v = two_view(rng, 6)
    a = design_matrix(nu, v)
    e = rng.standard_normal((3, 3))
    np.testing.assert_allclose(a @ e.ravel(), epipolar_residual(e, nu, v), atol=1e-12)


def test_best_by_constraints(rng):
    pose, _, nu, v = two_view(rng, 5)
    truth = essential_from_pose(pose)
    bad = truth + 0.1 * rng.standard_normal((3, 3))
    assert best_by_constraints([bad, truth]) is truth
    with pytest.raises(DegeneracyError):
        best_by_constraints([])
