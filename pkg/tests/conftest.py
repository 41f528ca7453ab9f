import numpy as np
import pytest

from mmwpose.lie import Pose, exp_so3
from mmwpose.scene import noiseless_paths, observe, random_scene


def random_rotation(rng, max_angle=np.pi):
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    return exp_so3(axis * rng.uniform(0.0, max_angle))


def two_view(rng, n, max_angle=0.5):
    """UE pose (BS frame) plus ``n`` points seen in front of both arrays."""
    rot = random_rotation(rng, max_angle)
    trans = rng.standard_normal(3)
    trans /= np.linalg.norm(trans)
    pose = Pose(rot, trans * rng.uniform(1.0, 3.0))
    pts = []
    while len(pts) < n:
        p = rng.uniform([-4, -4, 3], [4, 4, 12])
        if pose.to_local(p)[2] > 0.5:
            pts.append(p)
    pts = np.array(pts)
    nu = pts[:, :2] / pts[:, 2:]
    loc = pose.to_local(pts)
    v = loc[:, :2] / loc[:, 2:]
    return pose, pts, nu, v


def facade_chi2(facade, bs, ue, samples, bins=12, fine=20):
    """Chi-square p-value of facade samples against the integrated scatter density.

    Cell probabilities come from a midpoint rule on ``fine x fine`` sub-cells;
    cells with expected count below 5 are pooled into one.
    """
    from scipy.stats import chisquare

    from mmwpose import kernels

    u, w = facade.axes()
    half = facade.extents / 2
    d = samples - facade.center
    a, b = d @ u, d @ w
    counts, ea, eb = np.histogram2d(a, b, bins=bins, range=[[-half[0], half[0]], [-half[1], half[1]]])
    n = bins * fine
    ga = -half[0] + (np.arange(n) + 0.5) * (2 * half[0] / n)
    gb = -half[1] + (np.arange(n) + 0.5) * (2 * half[1] / n)
    ab = np.stack(np.meshgrid(ga, gb, indexing="ij"), axis=-1).reshape(-1, 2)
    dens = kernels.pattern_density_batch(facade.to_world(ab), bs, ue, facade.normal, facade.beta)
    mass = dens.reshape(bins, fine, bins, fine).sum(axis=(1, 3))
    expected = mass.ravel() / mass.sum() * len(samples)
    observed = counts.ravel()
    small = expected < 5
    if small.any():
        expected = np.append(expected[~small], expected[small].sum())
        observed = np.append(observed[~small], observed[small].sum())
    return chisquare(observed, expected).pvalue


# one verdict line per acceptance criterion, printed after the run
CRITERIA: list[str] = []


def record_criterion(number: int, title: str, passed: bool, detail: str) -> bool:
    line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    CRITERIA.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


__all__ = ["facade_chi2", "record_criterion", "noiseless_paths", "observe", "random_scene", "two_view", "random_rotation"]
