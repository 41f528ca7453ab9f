"""SO(3)/SE(3) helpers.

Poses are stored frame-to-world: ``x_world = rot @ x_local + trans``.  The
world-to-frame transform used by the measurement equations is the inverse and
is produced on demand by :meth:`Pose.transform`.

Twists are ordered ``[translation; rotation]`` and act by left multiplication
on the world-to-frame transform, ``T <- exp(twist^) @ T``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_SMALL_ANGLE = 1e-12
_NEAR_PI = 1e-6


def skew(x) -> np.ndarray:
    """Cross-product matrix: ``skew(x) @ y == np.cross(x, y)``."""
    x = np.asarray(x, dtype=float)
    return np.array(
        [
            [0.0, -x[2], x[1]],
            [x[2], 0.0, -x[0]],
            [-x[1], x[0], 0.0],
        ]
    )


def vee(m: np.ndarray) -> np.ndarray:
    """Inverse of :func:`skew` (antisymmetric part only)."""
    return 0.5 * np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])


def wedge(t) -> np.ndarray:
    """Lift a 6-vector ``[y; x]`` into the 4x4 Lie algebra element."""
    t = np.asarray(t, dtype=float)
    out = np.zeros((4, 4))
    out[:3, :3] = skew(t[3:])
    out[:3, 3] = t[:3]
    return out


def odot(p) -> np.ndarray:
    """4x6 matrix with ``wedge(t) @ p == odot(p) @ t`` for homogeneous ``p``."""
    p = np.asarray(p, dtype=float)
    out = np.zeros((4, 6))
    out[:3, :3] = p[3] * np.eye(3)
    out[:3, 3:] = -skew(p[:3])
    return out


def exp_so3(u) -> np.ndarray:
    """Rodrigues formula for a rotation vector in radians."""
    u = np.asarray(u, dtype=float)
    theta = float(np.linalg.norm(u))
    if theta < _SMALL_ANGLE:
        return np.eye(3) + skew(u)
    k = skew(u / theta)
    return np.eye(3) + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)


def log_so3(rot: np.ndarray) -> np.ndarray:
    """Rotation vector of ``rot`` with norm in ``[0, pi]``."""
    rot = np.asarray(rot, dtype=float)
    w = vee(rot)
    s = float(np.linalg.norm(w))
    c = 0.5 * (np.trace(rot) - 1.0)
    theta = float(np.arctan2(s, c))
    if theta < _SMALL_ANGLE:
        return w
    if np.pi - theta > _NEAR_PI:
        return w * (theta / s)
    # sin(theta) ~ 0: the axis comes from the symmetric part, R + I ~ 2 n n^T.
    b = 0.5 * (rot + rot.T) - c * np.eye(3)
    k = int(np.argmax(np.diag(b)))
    axis = b[:, k] / np.linalg.norm(b[:, k])
    if axis @ w < 0.0:
        axis = -axis
    return theta * axis


def _left_jacobian(phi: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(phi))
    k = skew(phi)
    if theta < 1e-6:
        return np.eye(3) + 0.5 * k + (k @ k) / 6.0
    a = (1.0 - np.cos(theta)) / theta**2
    b = (theta - np.sin(theta)) / theta**3
    return np.eye(3) + a * k + b * (k @ k)


def orthonormalize(rot: np.ndarray) -> np.ndarray:
    """Closest rotation matrix in the Frobenius sense (polar projection)."""
    u, _, vt = np.linalg.svd(rot)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def is_rotation(m, tol: float = 1e-9) -> bool:
    m = np.asarray(m, dtype=float)
    return (
        m.shape == (3, 3)
        and np.allclose(m.T @ m, np.eye(3), atol=tol, rtol=0.0)
        and abs(np.linalg.det(m) - 1.0) < tol
    )


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid frame pose: orientation ``rot`` and position ``trans`` (metres)."""

    rot: np.ndarray
    trans: np.ndarray

    def __post_init__(self):
        rot = _frozen(self.rot)
        trans = _frozen(self.trans).reshape(3)
        if rot.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {rot.shape}")
        if not np.all(np.isfinite(rot)) or not np.all(np.isfinite(trans)):
            raise ValueError("pose entries must be finite")
        object.__setattr__(self, "rot", rot)
        object.__setattr__(self, "trans", trans)

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_transform(cls, t: np.ndarray) -> Pose:
        """Build from a world-to-frame 4x4 transform."""
        rt = t[:3, :3].T
        return cls(rt, -rt @ t[:3, 3])

    def matrix(self) -> np.ndarray:
        """Frame-to-world homogeneous matrix ``[[rot, trans], [0, 1]]``."""
        out = np.eye(4)
        out[:3, :3] = self.rot
        out[:3, 3] = self.trans
        return out

    def transform(self) -> np.ndarray:
        """World-to-frame homogeneous matrix (inverse of :meth:`matrix`)."""
        out = np.eye(4)
        out[:3, :3] = self.rot.T
        out[:3, 3] = -self.rot.T @ self.trans
        return out

    def to_local(self, x) -> np.ndarray:
        """Express world points (``(..., 3)``) in this frame."""
        return (np.asarray(x, dtype=float) - self.trans) @ self.rot

    def to_world(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.rot.T + self.trans

    def inverse(self) -> Pose:
        return Pose(self.rot.T, -self.rot.T @ self.trans)

    def __matmul__(self, other: Pose) -> Pose:
        return Pose(self.rot @ other.rot, self.rot @ other.trans + self.trans)

    def __repr__(self) -> str:
        return f"Pose(rot={self.rot.tolist()}, trans={self.trans.tolist()})"


def exp_se3(t) -> Pose:
    """Pose whose world-to-frame transform equals ``expm(wedge(t))``."""
    t = np.asarray(t, dtype=float)
    rho, phi = t[:3], t[3:]
    m = np.eye(4)
    m[:3, :3] = exp_so3(phi)
    m[:3, 3] = _left_jacobian(phi) @ rho
    return Pose.from_transform(m)


def apply_update(pose: Pose, t) -> Pose:
    """Left-multiplicative update ``T <- exp(t^) T`` of the world-to-frame transform."""
    return Pose.from_transform(exp_se3(t).transform() @ pose.transform())


def rotation_error(truth_rot: np.ndarray, est_rot: np.ndarray) -> np.ndarray:
    """Orientation error vector ``log(R_est R_truth^-1)``."""
    return log_so3(est_rot @ truth_rot.T)
