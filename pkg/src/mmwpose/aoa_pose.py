"""UE pose from known BS positions and the virtual points of their AoAs.

The UE array acts as a calibrated camera with unit focal length, so the
problem is perspective-n-point: P3P in closed form, then damped Gauss-Newton
on the reprojection error over SE(3).
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as P

from .errors import (
    AmbiguityError,
    DegeneracyError,
    FrontalityError,
    InsufficientDataError,
    NonConvergenceError,
)
from .lie import Pose, apply_update, skew
from .projection import EPS_FRONT, homogeneous

log = logging.getLogger(__name__)

IMAG_TOL = 1e-8
REPROJ_TOL = 1e-6
GRAD_TOL = 1e-8


def _bearings(v) -> np.ndarray:
    b = homogeneous(np.asarray(v, dtype=float).reshape(-1, 2))
    return b / np.linalg.norm(b, axis=1, keepdims=True)


def _check_triangle(pts: np.ndarray) -> None:
    area = np.linalg.norm(np.cross(pts[1] - pts[0], pts[2] - pts[0]))
    scale = max(np.ptp(pts, axis=0).max(), 1e-300)
    if area < 1e-9 * scale**2:
        raise DegeneracyError("BS positions are collinear")


def kabsch(local: np.ndarray, world: np.ndarray) -> Pose:
    """Pose with ``world_i = R local_i + t`` in the least-squares sense."""
    cl, cw = local.mean(axis=0), world.mean(axis=0)
    h = (local - cl).T @ (world - cw)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return Pose(rot, cw - rot @ cl)


def reprojection_residuals(pose: Pose, bs_pos, v) -> np.ndarray:
    """``v_i - project(pose, bs_i)`` stacked ``(n, 2)``; raises if a BS is behind the array."""
    q = pose.to_local(np.asarray(bs_pos, dtype=float).reshape(-1, 3))
    if np.any(q[:, 2] <= EPS_FRONT):
        raise FrontalityError("a BS lies behind the UE array", index=int(np.argmin(q[:, 2])))
    return np.asarray(v, dtype=float).reshape(-1, 2) - q[:, :2] / q[:, 2:]


def p3p_solve(bs_pos, v) -> list[Pose]:
    """All poses (at most four) consistent with three BS/virtual-point pairs.

    Classic distance formulation: with ``s2 = u s1`` and ``s3 = w s1`` the
    law of cosines on the three BS pairs reduces to a quartic in ``w``.
    """
    pts = np.asarray(bs_pos, dtype=float).reshape(-1, 3)
    if len(pts) != 3:
        raise ValueError("p3p_solve takes exactly three correspondences")
    _check_triangle(pts)
    b = _bearings(v)
    a2 = float(np.sum((pts[1] - pts[2]) ** 2))
    b2 = float(np.sum((pts[0] - pts[2]) ** 2))
    c2 = float(np.sum((pts[0] - pts[1]) ** 2))
    ca, cb, cg = float(b[1] @ b[2]), float(b[0] @ b[2]), float(b[0] @ b[1])

    q = np.array([1.0, -2.0 * cb, 1.0])  # 1 + w^2 - 2 w cos(beta)
    num = P.polysub((a2 - c2) * q, b2 * np.array([-1.0, 0.0, 1.0]))
    den = 2.0 * b2 * np.array([cg, -ca])
    quartic = P.polysub(
        b2 * P.polyadd(P.polyadd(P.polymul(den, den), P.polymul(num, num)),
                       -2.0 * cg * P.polymul(num, den)),
        c2 * P.polymul(q, P.polymul(den, den)),
    )
    lead = np.max(np.abs(quartic))
    roots = P.polyroots(quartic / lead) if lead > 0 else np.array([])
    out: list[Pose] = []
    for r in roots:
        if abs(r.imag) > IMAG_TOL * max(1.0, abs(r.real)):
            continue
        w = float(r.real)
        qq = P.polyval(w, q)
        if w <= 0 or qq <= 0:
            continue
        s1 = np.sqrt(b2 / qq)
        for u in _second_ratio(w, s1, a2, c2, ca, cg):
            local = np.array([s1 * b[0], u * s1 * b[1], w * s1 * b[2]])
            pose = _polish(kabsch(local, pts), pts, v)
            try:
                res = reprojection_residuals(pose, pts, v)
            except FrontalityError:
                continue
            if np.max(np.abs(res)) > REPROJ_TOL * (1.0 + np.max(np.abs(v))):
                continue
            if any(_same_pose(pose, o) for o in out):
                continue
            out.append(pose)
    return out


def _second_ratio(w, s1, a2, c2, ca, cg) -> list[float]:
    """Positive ``u`` solving the ``c2`` law of cosines and consistent with ``a2``.

    Solving the quadratic directly (rather than the rational expression used
    to eliminate ``u``) survives configurations where that expression is 0/0.
    """
    disc = cg * cg - 1.0 + c2 / (s1 * s1)
    if disc < 0:
        if disc < -1e-9:
            return []
        disc = 0.0
    out = []
    for u in (cg + np.sqrt(disc), cg - np.sqrt(disc)):
        if u <= 0:
            continue
        a2_hat = s1 * s1 * (u * u + w * w - 2.0 * u * w * ca)
        if abs(a2_hat - a2) <= 1e-6 * a2:
            out.append(float(u))
    return out


def _polish(pose: Pose, pts, v, iters: int = 3) -> Pose:
    """A few Newton steps on the square 3-point reprojection system."""
    w = _weight_blocks(None, len(pts))
    obj = _objective(pose, pts, v, w)
    for _ in range(iters):
        if not np.isfinite(obj) or obj == 0.0:
            break
        nmat, g = _linearize(pose, pts, v, w)
        try:
            cand = apply_update(pose, np.linalg.solve(nmat, g))
        except np.linalg.LinAlgError:
            break
        obj_c = _objective(cand, pts, v, w)
        if not obj_c < obj:
            break
        pose, obj = cand, obj_c
    return pose


def _same_pose(a: Pose, b: Pose, tol: float = 1e-9) -> bool:
    return bool(np.allclose(a.rot, b.rot, atol=tol) and np.allclose(a.trans, b.trans, atol=tol))


def _max_area_triple(pts: np.ndarray) -> tuple[int, int, int]:
    best, best_area = None, -1.0
    for idx in itertools.combinations(range(len(pts)), 3):
        p = pts[list(idx)]
        area = float(np.linalg.norm(np.cross(p[1] - p[0], p[2] - p[0])))
        if area > best_area:
            best, best_area = idx, area
    return best


def pnp_solve(bs_pos, v, weights=None, refine: bool = True) -> Pose:
    """Unique pose from four or more correspondences.

    P3P on the widest BS triangle, the candidate with the smallest total
    reprojection error over all correspondences, then (optionally)
    :func:`pose_refine_reprojection`.
    """
    pts = np.asarray(bs_pos, dtype=float).reshape(-1, 3)
    v = np.asarray(v, dtype=float).reshape(-1, 2)
    if len(pts) != len(v):
        raise ValueError("need one virtual point per BS")
    if len(pts) < 3:
        raise InsufficientDataError(f"need at least 3 correspondences, got {len(pts)}")
    if len(pts) == 3:
        raise AmbiguityError("3 correspondences leave up to 4 poses; use p3p_solve")
    idx = list(_max_area_triple(pts))
    cands = p3p_solve(pts[idx], v[idx])
    scored = []
    for pose in cands:
        try:
            res = reprojection_residuals(pose, pts, v)
        except FrontalityError:
            continue
        scored.append((float(np.sum(res**2)), pose))
    if not scored:
        raise DegeneracyError("no P3P candidate sees every BS in front of the array")
    best = min(scored, key=lambda t: t[0])[1]
    if not refine:
        return best
    return pose_refine_reprojection(best, pts, v, weights)


@dataclass
class ReprojectionReport:
    iterations: int
    objective: list[float] = field(default_factory=list)
    grad_norm: float = np.inf
    max_iters_reached: bool = False


def direction_cosine_weights(v) -> np.ndarray:
    """Per-point ``2x2`` information matrices for isotropic noise on the direction cosines.

    A virtual point ``v = u / sqrt(1 - |u|^2)`` moves ``dv = J du`` with
    ``J = sqrt(1 + |v|^2) (I + v v^T)``; the weight is ``(J J^T)^-1``.
    Points far from boresight are down-weighted accordingly.
    """
    v = np.asarray(v, dtype=float).reshape(-1, 2)
    s = 1.0 + np.sum(v**2, axis=1)
    jac = (np.eye(2)[None] + v[:, :, None] * v[:, None, :]) * np.sqrt(s)[:, None, None]
    return np.linalg.inv(jac @ jac.transpose(0, 2, 1))


def _weight_blocks(weights, n: int) -> np.ndarray:
    if weights is None:
        return np.broadcast_to(np.eye(2), (n, 2, 2))
    w = np.asarray(weights, dtype=float)
    if w.shape == (n,):
        return w[:, None, None] * np.eye(2)[None]
    if w.shape == (n, 2, 2):
        return w
    raise ValueError(f"weights must have shape ({n},) or ({n}, 2, 2), got {w.shape}")


def _objective(pose, pts, v, w) -> float:
    try:
        r = reprojection_residuals(pose, pts, v)
    except FrontalityError:
        return np.inf
    return float(np.einsum("ni,nij,nj->", r, w, r))


def _linearize(pose: Pose, pts, v, w):
    """Weighted normal matrix and gradient for the left-perturbed world-to-UE transform."""
    q = pose.to_local(pts)
    r = v - q[:, :2] / q[:, 2:]
    z = q[:, 2]
    jp = np.zeros((len(q), 2, 3))
    jp[:, 0, 0] = 1.0 / z
    jp[:, 1, 1] = 1.0 / z
    jp[:, 0, 2] = -q[:, 0] / z**2
    jp[:, 1, 2] = -q[:, 1] / z**2
    dq = np.concatenate([np.broadcast_to(np.eye(3), (len(q), 3, 3)),
                         -np.stack([skew(x) for x in q])], axis=2)
    jac = np.einsum("nij,njk->nik", jp, dq)
    wj = w @ jac
    return np.einsum("nij,nik->jk", jac, wj), np.einsum("nij,ni->j", wj, r)


def pose_refine_reprojection(init: Pose, bs_pos, v, weights=None, max_iters: int = 50,
                             full_output: bool = False):
    """Levenberg-damped Gauss-Newton on the weighted reprojection error.

    ``weights`` is ``None`` (identity), one scalar per correspondence, or one
    ``2x2`` information matrix per correspondence.

    Damping starts at zero (pure Gauss-Newton) and is multiplied by ten after
    every rejected step.  Stops when the gradient norm drops below ``GRAD_TOL``
    or the step no longer changes the pose.
    """
    pts = np.asarray(bs_pos, dtype=float).reshape(-1, 3)
    v = np.asarray(v, dtype=float).reshape(-1, 2)
    if len(pts) < 3:
        raise InsufficientDataError(f"need at least 3 correspondences, got {len(pts)}")
    w = _weight_blocks(weights, len(pts))
    pose = init
    obj = _objective(pose, pts, v, w)
    if not np.isfinite(obj):
        raise NonConvergenceError("initial pose puts a BS behind the array", best=init)
    report = ReprojectionReport(0, [obj])
    lam = 0.0
    for it in range(1, max_iters + 1):
        report.iterations = it
        nmat, g = _linearize(pose, pts, v, w)
        report.grad_norm = float(np.linalg.norm(g))
        if report.grad_norm < GRAD_TOL:
            report.iterations = it - 1
            break
        scale = max(float(np.trace(nmat)) / 6.0, 1e-300)
        accepted = False
        while lam <= 1e8 * scale:
            try:
                delta = np.linalg.solve(nmat + lam * np.eye(6), g)
            except np.linalg.LinAlgError:
                delta = None
            if delta is not None and np.all(np.isfinite(delta)):
                cand = apply_update(pose, delta)
                obj_c = _objective(cand, pts, v, w)
                if obj_c <= obj:
                    accepted = True
                    break
            lam = max(lam * 10.0, 1e-6 * scale)
        if not accepted:
            break
        step = float(np.linalg.norm(delta))
        pose, obj = cand, obj_c
        report.objective.append(obj)
        lam = lam / 10.0 if lam > 1e-6 * scale else 0.0
        if step < 1e-14:
            break
    else:
        report.max_iters_reached = True
        if report.objective[-1] > report.objective[0]:
            raise NonConvergenceError("objective diverged", best=pose)
    if report.grad_norm >= GRAD_TOL:
        _, g = _linearize(pose, pts, v, w)
        report.grad_norm = float(np.linalg.norm(g))
    log.debug("reprojection refine: %d iterations, objective %.3g", report.iterations, obj)
    return (pose, report) if full_output else pose
