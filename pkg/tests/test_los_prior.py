import numpy as np
import pytest

from mmwpose.errors import AmbiguityError, DegeneracyError, NoIntersectionError
from mmwpose.fivepoint import five_point
from mmwpose.lie import exp_so3, log_so3
from mmwpose.los_prior import (
    augment_correspondences,
    circle_line_roots,
    circular_mean,
    disambiguate_twist,
    epipoles_from_los,
    select_twist,
    solve_twist_angle,
    twist_line,
)
from mmwpose.projection import essential_from_pose
from mmwpose.scene import noiseless_paths, random_scene


def los_scenes(n_scatter=1, count=30):
    for seed in range(count):
        scene = random_scene(n_scatter, rng_seed=seed, los_present=True)
        paths = noiseless_paths(scene)
        rel, _ = scene.relative()
        nus = [p[0][:2] / p[0][2] for p in paths]
        vs = [p[1][:2] / p[1][2] for p in paths]
        yield rel, nus, vs


def _wrap(a):
    return np.angle(np.exp(1j * a))


def true_twist(st, rot):
    """Angle with ``R = swing @ exp(theta n_par)``."""
    return float(log_so3(st.swing.T @ rot) @ st.n_par)


def test_epipoles_synthetic():
    for rel, nus, vs in los_scenes():
        n_r, st = epipoles_from_los(nus[0], vs[0])
        np.testing.assert_allclose(n_r, rel.trans / np.linalg.norm(rel.trans), atol=1e-12)
        assert abs(st.u_perp @ st.n_par) < 1e-10
        assert abs(np.linalg.norm(st.n_par) - 1) < 1e-15
        vb = np.append(vs[0], 1.0)
        nb = np.append(nus[0], 1.0)
        rv = st.swing @ vb
        np.testing.assert_allclose(rv / np.linalg.norm(rv), -nb / np.linalg.norm(nb), atol=1e-10)
        # the twist axis is fixed by the swing-twist decomposition of the truth
        np.testing.assert_allclose(st.swing.T @ rel.rot @ st.n_par, st.n_par, atol=1e-10)


def test_epipoles_head_on_is_degenerate():
    with pytest.raises(DegeneracyError):
        epipoles_from_los([0.0, 0.0], [0.0, 0.0])


def test_twist_roots_contain_truth():
    for rel, nus, vs in los_scenes():
        n_r, st = epipoles_from_los(nus[0], vs[0])
        line = twist_line(st, nus[0], nus[1], vs[1])
        pair = solve_twist_angle(st, nus[0], nus[1], vs[1])
        for t in pair:
            assert abs(line @ [np.cos(t), np.sin(t), 1.0]) < 1e-10
            assert -np.pi < t <= np.pi
        th = true_twist(st, rel.rot)
        assert min(abs(_wrap(t - th)) for t in pair) < 1e-9


def test_circle_line_examples():
    roots = sorted(circle_line_roots([1.0, 0.0, 0.0]))
    np.testing.assert_allclose(roots, [-np.pi / 2, np.pi / 2], atol=1e-15)
    t1, t2 = circle_line_roots([1.0, 0.0, -1.0])  # tangent at theta = 0
    assert t1 == t2 == 0.0
    with pytest.raises(NoIntersectionError):
        circle_line_roots([1.0, 0.0, -2.0])
    with pytest.raises(DegeneracyError):
        circle_line_roots([0.0, 0.0, 1.0])


def test_disambiguation_selects_truth():
    for rel, nus, vs in los_scenes():
        _, st = epipoles_from_los(nus[0], vs[0])
        pair = solve_twist_angle(st, nus[0], nus[1], vs[1])
        rot = disambiguate_twist(st, pair, nus[0], nus[1], vs[1])
        np.testing.assert_allclose(rot, rel.rot, atol=1e-9)


def test_mirrored_scatterer_selects_other_root():
    # a scatterer observed under the rotation of the rejected root must
    # select that root instead
    rng = np.random.default_rng(5)
    checked = 0
    for rel, nus, vs in los_scenes(count=20):
        _, st = epipoles_from_los(nus[0], vs[0])
        pair = solve_twist_angle(st, nus[0], nus[1], vs[1])
        th = select_twist(st, pair, nus[0], nus[1], vs[1])
        if abs(_wrap(pair[0] - pair[1])) < 1e-6:
            continue
        other = pair[1] if th == pair[0] else pair[0]
        rot_o = st.rotation(other)
        for _ in range(100):
            q = rng.uniform([-5, -5, 1], [5, 5, 10])
            loc = rot_o.T @ (q - rel.trans)
            if loc[2] > 0.5:
                break
        else:
            continue
        nu_q, v_q = q[:2] / q[2], loc[:2] / loc[2]
        pair_q = solve_twist_angle(st, nus[0], nu_q, v_q)
        assert abs(_wrap(select_twist(st, pair_q, nus[0], nu_q, v_q) - other)) < 1e-8
        checked += 1
    assert checked >= 10


def test_tangent_double_root_accepted():
    from mmwpose.los_prior import SwingTwist

    st = SwingTwist(np.array([0.0, 0.3, 0.0]), np.array([0.0, 0.0, 1.0]))
    assert select_twist(st, (0.7, 0.7), [0.1, 0.2], [0.3, -0.1], [0.2, 0.2]) == 0.7


def test_ambiguous_sign_test():
    from mmwpose.los_prior import SwingTwist

    st = SwingTwist(np.array([0.0, 0.3, 0.0]), np.array([0.0, 0.0, 1.0]))
    # scatterer on the baseline: nu_l parallel to nu0 leaves no sign information
    with pytest.raises(AmbiguityError):
        select_twist(st, (0.1, 1.0), [0.1, 0.2], [0.1, 0.2], [0.2, 0.2])


def test_augment_correspondences():
    nus, vs = augment_correspondences([0.3, -0.2], [1.0, 0.5])
    assert nus.shape == vs.shape == (6, 3)
    np.testing.assert_array_equal(nus[:3], np.eye(3))
    np.testing.assert_array_equal(vs[3:], np.eye(3))
    np.testing.assert_array_equal(vs[:3], np.tile([1.0, 0.5, 1.0], (3, 1)))
    np.testing.assert_array_equal(nus[3:], np.tile([0.3, -0.2, 1.0], (3, 1)))
    for rel, nu, v in los_scenes(count=10):
        e = essential_from_pose(rel)
        e /= np.linalg.norm(e)
        a, b = augment_correspondences(nu[0], v[0])
        np.testing.assert_allclose(np.einsum("ni,ij,nj->n", a, e, b), 0.0, atol=1e-12)


def test_augmented_five_point_recovers_essential():
    for rel, nu, v in los_scenes(count=10):
        truth = essential_from_pose(rel)
        truth /= np.linalg.norm(truth)
        a, b = augment_correspondences(nu[0], v[0])
        cands = five_point(np.vstack([a, np.append(nu[1], 1.0)]),
                           np.vstack([b, np.append(v[1], 1.0)]))
        assert min(min(np.abs(c - s * truth).max() for s in (1, -1)) for c in cands) < 1e-8


def test_circular_mean():
    assert abs(circular_mean([np.pi - 0.1, -np.pi + 0.1]) - np.pi) < 1e-12
    assert abs(circular_mean([0.1, 0.3], [1.0, 0.0]) - 0.1) < 1e-12


def test_swing_twist_reconstruction():
    for rel, nus, vs in los_scenes():
        _, st = epipoles_from_los(nus[0], vs[0])
        th = true_twist(st, rel.rot)
        np.testing.assert_allclose(st.swing @ exp_so3(th * st.n_par), rel.rot, atol=1e-9)
        with pytest.raises(ValueError):
            st.rotation()
