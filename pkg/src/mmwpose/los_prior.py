"""Relative pose from a known line-of-sight path plus scatterers.

The LoS virtual points are the two epipoles: they fix the baseline direction
and all of the rotation except a twist about the UE-side LoS direction.  Each
scatterer then pins the twist angle up to a pair of roots, and a sign test on
the epipolar plane picks one of them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AmbiguityError, DegeneracyError, NoIntersectionError
from .lie import exp_so3

SIGN_MARGIN = 1e-9
PARALLEL_TOL = 1e-12


@dataclass(frozen=True)
class SwingTwist:
    """``R = exp(u_perp^) @ exp(theta * n_par^)``; ``theta`` is None until solved."""

    u_perp: np.ndarray
    n_par: np.ndarray
    theta: float | None = None

    @property
    def swing(self) -> np.ndarray:
        return exp_so3(self.u_perp)

    def rotation(self, theta: float | None = None) -> np.ndarray:
        th = self.theta if theta is None else theta
        if th is None:
            raise ValueError("twist angle not set")
        return self.swing @ exp_so3(th * self.n_par)


def _bar(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return p if p.shape[-1] == 3 else np.append(p, 1.0)


def _wrap(a: float) -> float:
    a = float(np.arctan2(np.sin(a), np.cos(a)))
    return np.pi if a == -np.pi else a


def epipoles_from_los(nu0, v0) -> tuple[np.ndarray, SwingTwist]:
    """Baseline direction and swing rotation from the LoS virtual points."""
    nb, vb = _bar(nu0), _bar(v0)
    n_r = nb / np.linalg.norm(nb)
    n_par = vb / np.linalg.norm(vb)
    axis = np.cross(nb, vb)
    sin_ = np.linalg.norm(axis) / (np.linalg.norm(nb) * np.linalg.norm(vb))
    cos_ = -float(vb @ nb) / (np.linalg.norm(nb) * np.linalg.norm(vb))
    if sin_ < PARALLEL_TOL:
        raise DegeneracyError("LoS directions are collinear; swing axis undefined")
    angle = float(np.arccos(np.clip(cos_, -1.0, 1.0)))
    return n_r, SwingTwist(axis / np.linalg.norm(axis) * angle, n_par)


def twist_line(st: SwingTwist, nu0, nu_l, v_l) -> np.ndarray:
    """Coefficients ``n`` with ``n @ [cos t, sin t, 1] = 0`` for the scatterer."""
    w = -st.swing.T @ np.cross(_bar(nu0), _bar(nu_l))
    vb = _bar(v_l)
    n = st.n_par
    along = float(w @ n) * float(n @ vb)
    return np.array([w @ vb - along, w @ np.cross(n, vb), along])


def circle_line_roots(line, tol: float = 1e-10) -> tuple[float, float]:
    """Angles where ``line @ [cos t, sin t, 1] = 0``, both wrapped to (-pi, pi]."""
    a, b, c = (float(x) for x in line)
    rho = float(np.hypot(a, b))
    if rho < 1e-300 or rho < 1e-14 * abs(c):
        raise DegeneracyError("twist line has no angular component")
    ratio = -c / rho
    if abs(ratio) > 1.0 + tol:
        raise NoIntersectionError(f"line misses the unit circle (|c|/rho = {abs(ratio):.6g})")
    phi = float(np.arctan2(b, a))
    delta = float(np.arccos(np.clip(ratio, -1.0, 1.0)))
    return _wrap(phi + delta), _wrap(phi - delta)


def solve_twist_angle(st: SwingTwist, nu0, nu_l, v_l) -> tuple[float, float]:
    return circle_line_roots(twist_line(st, nu0, nu_l, v_l))


def sign_score(rot: np.ndarray, nu0, nu_l, v_l) -> float:
    """Cosine between ``nu0 x nu_l`` and ``nu0 x (R v_l)``; positive for the true twist."""
    n0 = _bar(nu0)
    n0 = n0 / np.linalg.norm(n0)
    nl = _bar(nu_l)
    nl = nl / np.linalg.norm(nl)
    rv = rot @ _bar(v_l)
    rv = rv / np.linalg.norm(rv)
    a = np.cross(n0, nl)
    b = np.cross(n0, rv)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < SIGN_MARGIN or nb < SIGN_MARGIN:
        return 0.0
    return float(a @ b) / (na * nb)


def disambiguate_twist(st: SwingTwist, theta_pair, nu0, nu_l, v_l) -> np.ndarray:
    """Rotation for whichever root passes the epipolar-plane sign test."""
    return st.rotation(select_twist(st, theta_pair, nu0, nu_l, v_l))


def select_twist(st: SwingTwist, theta_pair, nu0, nu_l, v_l) -> float:
    """Like :func:`disambiguate_twist` but returns the chosen angle."""
    t1, t2 = theta_pair
    if abs(_wrap(t1 - t2)) < 1e-12:
        return t1
    passes = [t for t in (t1, t2) if sign_score(st.rotation(t), nu0, nu_l, v_l) > SIGN_MARGIN]
    if len(passes) != 1:
        raise AmbiguityError(f"{len(passes)} twist roots pass the sign test")
    return passes[0]


def circular_mean(angles, weights=None) -> float:
    angles = np.asarray(angles, dtype=float)
    w = np.ones_like(angles) if weights is None else np.asarray(weights, dtype=float)
    return _wrap(float(np.arctan2(w @ np.sin(angles), w @ np.cos(angles))))


def augment_correspondences(nu0, v0) -> tuple[np.ndarray, np.ndarray]:
    """Six homogeneous pairs implied by the epipoles.

    Returns ``(nu_bar, v_bar)`` arrays of shape ``(6, 3)``: the three basis
    vectors paired with ``v0`` followed by ``nu0`` paired with the basis.
    """
    eye = np.eye(3)
    nb, vb = _bar(nu0), _bar(v0)
    nus = np.vstack([eye, np.tile(nb, (3, 1))])
    vs = np.vstack([np.tile(vb, (3, 1)), eye])
    return nus, vs
