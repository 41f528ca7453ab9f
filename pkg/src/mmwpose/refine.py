"""Weighted least-squares refinement of the UE pose and scatterer positions.

Parameters live in the BS frame.  The pose is perturbed on the left of its
world-to-UE transform (``T <- exp(d^) T``) and scatterers additively.  Each
path contributes the block ``[nu (2), v (2), [D tau] (1)]``; when ``los`` is
true the first path is the line-of-sight one and has no scatterer variable.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.linalg import cho_solve
from scipy.linalg.lapack import dpocon, dpotrf

from .errors import FrontalityError, NonConvergenceError, SingularNormalMatrixError
from .lie import Pose, apply_update, orthonormalize, skew
from .projection import EPS_FRONT
from .slam import C

log = logging.getLogger(__name__)

SINGULAR_RCOND = 1e-14
TIKHONOV_COND = 1e12
TIKHONOV_FLOOR = 1e-12
MIN_KAPPA = 1e-4
REORTHO_EVERY = 100
DELAY_WEIGHT = 1e15


@dataclass
class SlamParameters:
    pose: Pose
    scatterers: np.ndarray

    def __post_init__(self):
        self.scatterers = np.asarray(self.scatterers, dtype=float).reshape(-1, 3)


@dataclass
class WeightSpec:
    """Per-path weights ``(w1, w2, w3)`` for AoD, AoA and delay rows."""

    w: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float).reshape(-1, 3)
        if np.any(self.w < 0):
            raise ValueError("weights must be nonnegative")
        if np.any(self.w.max(axis=1) <= 0):
            raise ValueError("every path needs at least one positive weight")

    @classmethod
    def uniform(cls, n_paths: int, delay_weight: float = DELAY_WEIGHT) -> WeightSpec:
        return cls(np.tile([1.0, 1.0, delay_weight], (n_paths, 1)))

    @classmethod
    def from_gains(cls, gain_mag, delay_weight: float = DELAY_WEIGHT) -> WeightSpec:
        """``|alpha|^2 * [1, 1, delay_weight]`` per path."""
        g2 = np.asarray(gain_mag, dtype=float) ** 2
        return cls(np.column_stack([g2, g2, delay_weight * g2]))

    def diagonal(self) -> np.ndarray:
        w = self.w
        return np.column_stack([w[:, 0], w[:, 0], w[:, 1], w[:, 1], w[:, 2]]).ravel()


@dataclass
class RefineReport:
    iterations: int
    objective_initial: float
    objective_final: float
    converged: bool
    reason: str
    history: list[float] = field(default_factory=list)


def _proj_jac(x: np.ndarray) -> np.ndarray:
    """d(x[:2]/x[2])/dx for ``(n, 3)`` points -> ``(n, 2, 3)``."""
    z = x[:, 2]
    out = np.zeros((len(x), 2, 3))
    out[:, 0, 0] = 1.0 / z
    out[:, 1, 1] = 1.0 / z
    out[:, 0, 2] = -x[:, 0] / z**2
    out[:, 1, 2] = -x[:, 1] / z**2
    return out


def _geometry(params: SlamParameters, los: bool):
    rot, r = params.pose.rot, params.pose.trans
    p = params.scatterers
    q = (p - r) @ rot
    bad = np.flatnonzero((p[:, 2] <= EPS_FRONT) | (q[:, 2] <= EPS_FRONT))
    off = 1 if los else 0
    if bad.size:
        i = int(bad[0])
        raise FrontalityError(f"scatterer {i} is not in front of both arrays", index=i + off)
    q0 = -r @ rot
    if los and (r[2] <= EPS_FRONT or q0[2] <= EPS_FRONT):
        raise FrontalityError("LoS path is not in front of both arrays", index=0)
    return rot, r, p, q, q0


def predict_observations(params: SlamParameters, d_matrix, los: bool) -> np.ndarray:
    """Stacked ``[nu, v, [D tau]]`` blocks, LoS first when ``los``."""
    rot, r, p, q, q0 = _geometry(params, los)
    nu = p[:, :2] / p[:, 2:]
    v = q[:, :2] / q[:, 2:]
    tau = (np.linalg.norm(p, axis=1) + np.linalg.norm(q, axis=1)) / C
    if los:
        nu = np.vstack([r[:2] / r[2], nu])
        v = np.vstack([q0[:2] / q0[2], v])
        tau = np.concatenate([[np.linalg.norm(r) / C], tau])
    d_matrix = np.asarray(d_matrix, dtype=float)
    if d_matrix.shape != (len(tau), len(tau)):
        raise ValueError(f"D must be {len(tau)}x{len(tau)}, got {d_matrix.shape}")
    return np.column_stack([nu, v, d_matrix @ tau]).ravel()


def jacobian(params: SlamParameters, d_matrix, los: bool) -> np.ndarray:
    """Analytic Jacobian, columns ``[pose twist (6), p_1 (3), ..., p_L (3)]``."""
    rot, r, p, q, q0 = _geometry(params, los)
    n_s = len(p)
    off = 1 if los else 0
    n = n_s + off
    j_pose = np.zeros((n, 5, 6))
    j_scat = np.zeros((n, 5, n_s, 3))
    rows = np.arange(n_s) + off
    cols = np.arange(n_s)

    jq = _proj_jac(q)
    qn = np.linalg.norm(q, axis=1)[:, None]
    pn = np.linalg.norm(p, axis=1)[:, None]
    sk = np.zeros((n_s, 3, 3))
    sk[:, 0, 1], sk[:, 0, 2], sk[:, 1, 2] = -q[:, 2], q[:, 1], -q[:, 0]
    sk -= sk.transpose(0, 2, 1)
    dq_dpose = np.concatenate([np.broadcast_to(np.eye(3), (n_s, 3, 3)), -sk], axis=2)
    j_pose[rows, 2:4] = jq @ dq_dpose
    j_scat[rows, 0:2, cols] = _proj_jac(p)
    j_scat[rows, 2:4, cols] = jq @ rot.T
    # undifferenced delay rows, mixed through D below
    tau_pose = np.zeros((n, 6))
    tau_scat = np.zeros((n, n_s, 3))
    tau_pose[rows, :3] = q / qn / C
    tau_scat[rows, cols] = (p / pn + (q / qn) @ rot.T) / C
    if los:
        jr = _proj_jac(r[None])[0]
        j_pose[0, 0:2, :3] = -jr @ rot
        jq0 = _proj_jac(q0[None])[0]
        j_pose[0, 2:4] = jq0 @ np.hstack([np.eye(3), -skew(q0)])
        tau_pose[0, :3] = q0 / np.linalg.norm(q0) / C
    d_matrix = np.asarray(d_matrix, dtype=float)
    j_pose[:, 4] = d_matrix @ tau_pose
    j_scat[:, 4] = (d_matrix @ tau_scat.reshape(n, -1)).reshape(n, n_s, 3)
    return np.concatenate([j_pose, j_scat.reshape(n, 5, 3 * n_s)], axis=2).reshape(5 * n, -1)


def stack_observations(nu, v, tau, d_matrix) -> np.ndarray:
    nu = np.asarray(nu, dtype=float).reshape(-1, 2)
    v = np.asarray(v, dtype=float).reshape(-1, 2)
    tau = np.asarray(tau, dtype=float)
    return np.column_stack([nu, v, np.asarray(d_matrix, dtype=float) @ tau]).ravel()


def objective(params: SlamParameters, y, weights: WeightSpec, d_matrix, los: bool) -> float:
    res = np.asarray(y, dtype=float) - predict_observations(params, d_matrix, los)
    return float(res @ (weights.diagonal() * res))


def _update(params: SlamParameters, delta: np.ndarray) -> SlamParameters:
    pose = apply_update(params.pose, delta[:6])
    return SlamParameters(pose, params.scatterers + delta[6:].reshape(-1, 3))


def _solve_normal(jac: np.ndarray, w: np.ndarray, res: np.ndarray) -> np.ndarray:
    """Jacobi-scaled normal equations, factored by Cholesky.

    The reciprocal condition number is the LAPACK 1-norm estimate from the
    Cholesky factor, which tracks the eigenvalue ratio to within a factor of
    the dimension.
    """
    js = sparse.csr_matrix(jac)  # each path touches the pose and at most two scatterers
    nmat = (js.T @ sparse.diags(w) @ js).toarray()
    g = js.T @ (w * res)
    d = np.diag(nmat).copy()
    if np.any(d <= 0) or not np.all(np.isfinite(nmat)):
        raise SingularNormalMatrixError("a parameter has no information (zero Jacobian column)")
    s = 1.0 / np.sqrt(d)
    ns = nmat * s[:, None] * s[None, :]
    factor, rcond = _cholesky_rcond(ns)
    if rcond <= SINGULAR_RCOND:
        raise SingularNormalMatrixError(f"normal matrix is singular (reciprocal condition {rcond:.3g})")
    if rcond < 1.0 / TIKHONOV_COND:
        ns = ns + TIKHONOV_FLOOR * np.trace(ns) * np.eye(len(ns))
        factor, _ = _cholesky_rcond(ns)
    return s * cho_solve((factor, False), s * g)


def _cholesky_rcond(a: np.ndarray):
    """Upper Cholesky factor and reciprocal 1-norm condition estimate (0 if not positive definite)."""
    c, info = dpotrf(a, lower=0, clean=1)
    if info != 0:
        return None, 0.0
    rcond, info = dpocon(c, np.abs(a).sum(axis=0).max())
    return c, (float(rcond) if info == 0 else 0.0)


def gn_step(params: SlamParameters, y, weights: WeightSpec, d_matrix, los: bool,
            kappa: float = 1.0) -> SlamParameters:
    """One weighted Gauss-Newton step of length ``kappa``."""
    res = np.asarray(y, dtype=float) - predict_observations(params, d_matrix, los)
    jac = jacobian(params, d_matrix, los)
    delta = _solve_normal(jac, weights.diagonal(), res)
    return _update(params, kappa * delta)


def refine(init: SlamParameters, y, weights: WeightSpec, d_matrix, los: bool,
           max_iters: int = 100, tol: float = 1e-10):
    """Damped Gauss-Newton; returns ``(params, RefineReport)``.

    Each iteration backtracks ``kappa`` from 1 by halving until the weighted
    objective does not increase.  Stops when the accepted step norm drops
    below ``tol``, when no step length down to ``MIN_KAPPA`` helps, or after
    ``max_iters``.
    """
    y = np.asarray(y, dtype=float)
    w = weights.diagonal()
    params = init
    try:
        obj = objective(params, y, weights, d_matrix, los)
    except FrontalityError as exc:
        raise NonConvergenceError(f"initial point invalid: {exc}", best=init) from exc
    if not np.isfinite(obj):
        raise NonConvergenceError("initial objective is not finite", best=init)
    history = [obj]
    obj0 = obj
    updates = 0
    reason = "max_iters"
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        res = y - predict_observations(params, d_matrix, los)
        jac = jacobian(params, d_matrix, los)
        delta = _solve_normal(jac, w, res)
        if not np.all(np.isfinite(delta)):
            raise NonConvergenceError("non-finite update", best=params)
        kappa = 1.0
        accepted = None
        while kappa >= MIN_KAPPA:
            cand = _update(params, kappa * delta)
            try:
                obj_c = objective(cand, y, weights, d_matrix, los)
            except FrontalityError:
                obj_c = np.inf
            if obj_c <= obj:
                accepted = cand
                break
            kappa *= 0.5
        if accepted is None:
            reason, converged = "stationary", True
            break
        params, obj = accepted, obj_c
        updates += 1
        if updates % REORTHO_EVERY == 0:
            params = SlamParameters(
                Pose(orthonormalize(params.pose.rot), params.pose.trans), params.scatterers
            )
        history.append(obj)
        if np.linalg.norm(kappa * delta) < tol:
            reason, converged = "step", True
            break
    report = RefineReport(it, obj0, obj, converged, reason, history)
    log.debug("refine: %s after %d iterations, objective %.3g -> %.3g", reason, it, obj0, obj)
    return params, report
