"""Angles, wavefront normals and virtual points on the unit-focal plane.

An array sees a direction ``n`` (unit vector in its own frame) as the point
``n / n_z`` on the plane ``z = 1``.  For a point ``x`` in world coordinates and
an array at pose ``P`` that point is the perspective projection of ``x``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegeneracyError, FrontalityError
from .lie import Pose, skew

EPS_FRONT = 1e-9


@dataclass(frozen=True)
class AzEl:
    """Azimuth ``phi`` in (-pi, pi] and elevation ``theta`` in [0, pi], radians."""

    phi: float
    theta: float


def azel_to_normal(a: AzEl) -> np.ndarray:
    st = np.sin(a.theta)
    return np.array([np.cos(a.phi) * st, np.sin(a.phi) * st, np.cos(a.theta)])


def normal_to_azel(n) -> AzEl:
    n = np.asarray(n, dtype=float)
    n = n / np.linalg.norm(n)
    rho = float(np.hypot(n[0], n[1]))
    theta = float(np.arctan2(rho, n[2]))
    phi = float(np.arctan2(n[1], n[0])) if rho > 0.0 else 0.0
    if phi == -np.pi:
        phi = np.pi
    return AzEl(phi, theta)


def azel_to_virtual_point(a: AzEl) -> np.ndarray:
    c = np.cos(a.theta)
    if c <= EPS_FRONT:
        raise FrontalityError(f"elevation {a.theta!r} is not in front of the virtual plane")
    t = np.tan(a.theta)
    return np.array([np.cos(a.phi) * t, np.sin(a.phi) * t])


def virtual_point_to_azel(v) -> AzEl:
    v = np.asarray(v, dtype=float)
    r = float(np.hypot(v[0], v[1]))
    theta = float(np.arctan(r))
    phi = float(np.arctan2(v[1], v[0])) if r > 0.0 else 0.0
    if phi == -np.pi:
        phi = np.pi
    return AzEl(phi, theta)


def homogeneous(v) -> np.ndarray:
    """Append a trailing 1 along the last axis."""
    v = np.asarray(v, dtype=float)
    return np.concatenate([v, np.ones(v.shape[:-1] + (1,))], axis=-1)


def dehomogenize(x) -> np.ndarray:
    """Divide by depth; ``x`` has shape ``(..., 3)``."""
    x = np.asarray(x, dtype=float)
    return x[..., :2] / x[..., 2:3]


def project(pose: Pose, x) -> np.ndarray:
    """Virtual point of world point(s) ``x`` seen from an array at ``pose``.

    Accepts a single 3-vector or an ``(n, 3)`` array.
    """
    x = np.asarray(x, dtype=float)
    local = pose.to_local(x)
    flat = local.reshape(-1, 3)
    bad = np.flatnonzero(flat[:, 2] <= EPS_FRONT)
    if bad.size:
        i = int(bad[0])
        if np.linalg.norm(flat[i]) == 0.0:
            raise DegeneracyError("point coincides with the array origin")
        raise FrontalityError(f"point {i} has depth {flat[i, 2]:.3g}", index=i)
    return dehomogenize(local)


def essential_from_pose(pose: Pose) -> np.ndarray:
    """``skew(r) @ R`` for the UE pose expressed in the BS frame."""
    if np.linalg.norm(pose.trans) == 0.0:
        raise DegeneracyError("zero baseline: epipolar geometry undefined")
    return skew(pose.trans) @ pose.rot


def epipolar_residual(e: np.ndarray, nu, v) -> np.ndarray | float:
    """Bilinear form ``nu_bar^T E v_bar`` (vectorised over leading axes)."""
    nb = homogeneous(nu)
    vb = homogeneous(v)
    return np.einsum("...i,ij,...j->...", nb, e, vb)


def is_essential(e: np.ndarray, tol: float = 1e-6) -> bool:
    s = np.linalg.svd(e / np.linalg.norm(e), compute_uv=False)
    return s[2] < tol * s[0] and abs(s[0] - s[1]) < tol * s[0]


def essential_constraints(e: np.ndarray) -> tuple[float, float]:
    """Determinant and trace-constraint residuals of a unit-norm copy of ``e``."""
    e = e / np.linalg.norm(e)
    det = abs(float(np.linalg.det(e)))
    eet = e @ e.T
    trace = float(np.abs(eet @ e - 0.5 * np.trace(eet) * e).max())
    return det, trace
