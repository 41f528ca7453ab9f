"""Closed-form snapshot SLAM from per-path angle and delay observations.

Everything is expressed in the BS frame (BS at the origin with identity
orientation).  The pipeline runs four phases:

1. essential matrix from the AoD/AoA virtual-point correspondences,
2. orientation and baseline direction from that matrix,
3. triangulation of the scatterers at unit baseline,
4. metric scale from the path delays (with clock-bias differencing when the
   two ends are not synchronised).
"""

from __future__ import annotations

import contextlib
import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import (
    AmbiguityError,
    CheiralityError,
    ConfigError,
    DegeneracyError,
    DivisionDegeneracyError,
    InsufficientDataError,
    MmwPoseError,
    NoIntersectionError,
    ParallelRaysError,
)
from .fivepoint import five_point
from .lie import Pose
from .los_prior import (
    circular_mean,
    epipoles_from_los,
    select_twist,
    solve_twist_angle,
)
from .projection import essential_constraints, essential_from_pose, homogeneous

log = logging.getLogger(__name__)

C = 299_792_458.0
PARALLEL_TOL = 1e-12
DIV_TOL = 1e-12

_LOS_MODES = {
    "known": "known",
    "los-known": "known",
    "unknown": "unknown",
    "los-unknown": "unknown",
    "nlos-unknown": "unknown",
    "none": "none",
    "nlos": "none",
    "nlos-known": "none",
}


@dataclass(frozen=True)
class PathObservation:
    nu: np.ndarray
    v: np.ndarray
    tau: float
    gain_mag: float = 1.0
    is_los_hint: bool | None = None
    source: int | None = None  # scatterer index in the generating scene, -1 for LoS

    def __post_init__(self):
        object.__setattr__(self, "nu", np.asarray(self.nu, dtype=float).reshape(2))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float).reshape(2))
        if not np.isfinite(self.tau):
            raise ValueError("tau must be finite")
        if self.gain_mag < 0:
            raise ValueError("gain_mag must be nonnegative")


@dataclass
class SlamEstimate:
    pose: Pose
    scatterers: np.ndarray  # (k, 3), metres, BS frame
    scale: float
    clock_bias: float | None = None
    los_index: int | None = None
    scatter_paths: list[int] = field(default_factory=list)  # observation index per scatterer
    paths: list[int] = field(default_factory=list)  # observation indices used for the scale
    d_matrix: np.ndarray | None = None
    essential: np.ndarray | None = None


def parse_los_mode(mode: str) -> str:
    try:
        return _LOS_MODES[mode.lower()]
    except (KeyError, AttributeError):
        raise ConfigError(f"unknown LoS mode {mode!r}", field="los") from None


@contextlib.contextmanager
def _phase(name: str):
    try:
        yield
    except MmwPoseError as exc:
        if getattr(exc, "phase", None) is None:
            exc.phase = name
            exc.args = (f"[{name}] {exc.args[0] if exc.args else ''}",) + exc.args[1:]
        raise


# ---------------------------------------------------------------- scoring


def sampson_score(e: np.ndarray, nu, v) -> np.ndarray | float:
    """Sampson distance of one correspondence or of ``(n, 2)`` arrays."""
    nu = np.asarray(nu, dtype=float)
    out = kernels.sampson_batch(np.asarray(e, dtype=float), nu, v)
    return float(out[0]) if nu.ndim == 1 else out


def _front_mask(e: np.ndarray, nu, v) -> np.ndarray:
    """Points not behind either array for the decomposition of ``e`` that keeps the most.

    Parallel rays (NaN depths, e.g. the LoS epipole pair) carry no cheirality
    information and are not counted against a hypothesis.
    """
    best = None
    for rot, t in pose_candidates(e):
        d = _depths(rot, t, nu, v)
        front = ~((d[:, 0] <= 0) | (d[:, 1] <= 0))
        if best is None or front.sum() > best.sum():
            best = front
    return best


def _hypothesis_score(e: np.ndarray, nu, v, threshold: float):
    """Truncated Sampson total; points behind an array count as outliers."""
    s = kernels.sampson_batch(e, nu, v)
    inlier = (s < threshold) & _front_mask(e, nu, v)
    return float(np.where(inlier, s, threshold).sum()), inlier


def ransac_essential(nu, v, iterations: int = 200, threshold: float = 1e-4,
                     rng_seed: int = 0, early_exit: float = 0.95):
    """Essential matrix with minimal truncated Sampson total over random 5-samples.

    A correspondence counts as an inlier when its Sampson distance is below
    ``threshold`` and it triangulates in front of both arrays.  Returns
    ``(E, inlier_mask)``.  Hypotheses are visited in a fixed order so ties go
    to the earliest one.
    """
    nu = np.asarray(nu, dtype=float).reshape(-1, 2)
    v = np.asarray(v, dtype=float).reshape(-1, 2)
    n = len(nu)
    if n < 5:
        raise InsufficientDataError(f"need at least 5 correspondences, got {n}")
    if n == 5:
        cands = five_point(nu, v)
        if not cands:
            raise DegeneracyError("no real essential matrix for the 5 correspondences")
        e = min(cands, key=lambda m: sum(essential_constraints(m)))
        return e, np.ones(n, dtype=bool)
    rng = np.random.default_rng(rng_seed)
    best_score, best_e, best_in = np.inf, None, None
    for _ in range(iterations):
        idx = rng.choice(n, 5, replace=False)
        try:
            # unpolished roots are accurate enough to rank hypotheses
            cands = five_point(nu[idx], v[idx], polish=False)
        except DegeneracyError:
            continue
        for e in cands:
            score, inl = _hypothesis_score(e, nu, v, threshold)
            if score < best_score:
                best_score, best_e, best_in = score, e, inl
        if best_in is not None and np.mean(best_in) >= early_exit:
            break
    if best_e is None:
        raise DegeneracyError("every 5-sample was degenerate")
    return best_e, best_in


def refine_essential(e: np.ndarray, nu, v, mask: np.ndarray, threshold: float):
    """Re-solve from all inliers; keep the better of old and new by truncated Sampson."""
    if mask.sum() < 5:
        return e, mask
    try:
        cands = five_point(nu[mask], v[mask])
    except DegeneracyError:
        return e, mask
    best = e
    best_score, best_in = _hypothesis_score(e, nu, v, threshold)
    for c in cands:
        score, inl = _hypothesis_score(c, nu, v, threshold)
        if score < best_score:
            best, best_score, best_in = c, score, inl
    return best, best_in


# ---------------------------------------------------------- decomposition


def _depths(rot: np.ndarray, t: np.ndarray, nu, v) -> np.ndarray:
    """Least-squares depths ``(l1, l2)`` with ``l1 nu_bar = l2 R v_bar + t``."""
    return kernels.two_view_depths(rot, t, nu, v)


def pose_candidates(e: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    u, _, vt = np.linalg.svd(e)
    if np.linalg.det(u) < 0:
        u = -u
    if np.linalg.det(vt) < 0:
        vt = -vt
    w = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    t = u[:, 2]
    out = []
    for rot in (u @ w @ vt, u @ w.T @ vt):
        for sign in (1.0, -1.0):
            out.append((rot, sign * t))
    return out


def decompose_essential(e: np.ndarray, nu, v) -> tuple[np.ndarray, np.ndarray]:
    """Orientation and unit baseline direction with the most points in front."""
    nu = np.asarray(nu, dtype=float).reshape(-1, 2)
    v = np.asarray(v, dtype=float).reshape(-1, 2)
    if len(nu) < 1:
        raise InsufficientDataError("need at least one correspondence for cheirality")
    best, best_count = None, -1
    for rot, t in pose_candidates(e):
        d = _depths(rot, t, nu, v)
        count = int(np.sum((d[:, 0] > 0) & (d[:, 1] > 0)))
        if count > best_count:
            best, best_count = (rot, t), count
    if 2 * best_count <= len(nu):
        raise CheiralityError(
            f"best decomposition places {best_count}/{len(nu)} points in front of both arrays"
        )
    return best[0], best[1] / np.linalg.norm(best[1])


def triangulate(pose_dir, nu, v) -> np.ndarray:
    """Homogeneous (DLT) triangulation for a UE at ``n_r`` with orientation ``R``."""
    rot, n_r = pose_dir
    nb = np.append(np.asarray(nu, dtype=float), 1.0)
    vb = np.append(np.asarray(v, dtype=float), 1.0)
    a_dir = nb / np.linalg.norm(nb)
    b_dir = rot @ vb
    b_dir = b_dir / np.linalg.norm(b_dir)
    if np.linalg.norm(np.cross(a_dir, b_dir)) < PARALLEL_TOL:
        raise ParallelRaysError("rays are parallel: point at infinity or on the baseline")
    p1 = np.hstack([np.eye(3), np.zeros((3, 1))])
    p2 = np.hstack([rot.T, -(rot.T @ n_r)[:, None]])
    a = np.array(
        [
            nb[0] * p1[2] - p1[0],
            nb[1] * p1[2] - p1[1],
            vb[0] * p2[2] - p2[0],
            vb[1] * p2[2] - p2[1],
        ]
    )
    a = a / np.linalg.norm(a, axis=1, keepdims=True)
    x = np.linalg.svd(a)[2][-1]
    if abs(x[3]) < 1e-300:
        raise ParallelRaysError("triangulated point is at infinity")
    return x[:3] / x[3]


# ------------------------------------------------------------------ scale


def difference_matrix(gains, synchronized: bool) -> np.ndarray:
    """``I`` when synchronised, else ``I - D'`` referencing the strongest path.

    The strongest path's own row references the second strongest.
    """
    gains = np.asarray(gains, dtype=float)
    n = len(gains)
    if synchronized:
        return np.eye(n)
    if n < 2:
        raise InsufficientDataError("clock-bias differencing needs at least 2 paths")
    order = np.argsort(-gains, kind="stable")
    ref, second = int(order[0]), int(order[1])
    dp = np.zeros((n, n))
    dp[:, ref] = 1.0
    dp[ref, ref] = 0.0
    dp[ref, second] = 1.0
    return np.eye(n) - dp


def recover_scale(d_breve, tau, d_matrix) -> float:
    """``s = c/|S| * sum([D tau]_l / [D d]_l)``."""
    d_breve = np.asarray(d_breve, dtype=float)
    tau = np.asarray(tau, dtype=float)
    d_matrix = np.asarray(d_matrix, dtype=float)
    if not (len(d_breve) == len(tau) == len(d_matrix)):
        raise ValueError("d_breve, tau and D must agree in length")
    dd = d_matrix @ d_breve
    if np.any(np.abs(dd) < DIV_TOL):
        raise DivisionDegeneracyError("a differenced path length vanishes")
    return float(C / len(tau) * np.sum((d_matrix @ tau) / dd))


def _scale_ratios(d_breve, tau, d_matrix) -> np.ndarray:
    dd = d_matrix @ d_breve
    with np.errstate(divide="ignore", invalid="ignore"):
        return C * (d_matrix @ tau) / dd


# ------------------------------------------------------------------ pipeline


def _unpack(obs):
    nu = np.array([o.nu for o in obs])
    v = np.array([o.v for o in obs])
    tau = np.array([o.tau for o in obs], dtype=float)
    gain = np.array([o.gain_mag for o in obs], dtype=float)
    return nu, v, tau, gain


def _structure(rot, n_r, nu, v, idx, los_mode: str, los_idx: int | None):
    """Triangulate ``idx``; returns (scatter idx, points, path idx, d_breve, LoS idx)."""
    scat_idx, pts, paths, d_breve = [], [], [], []
    found = los_idx
    if los_idx is not None:
        paths.append(los_idx)
        d_breve.append(1.0)
    for i in idx:
        try:
            p = triangulate((rot, n_r), nu[i], v[i])
        except ParallelRaysError:
            if los_mode == "unknown":
                # the LoS correspondence is the epipole pair; its unit-baseline length is 1
                if found is not None:
                    raise
                found = int(i)
                paths.insert(0, found)
                d_breve.insert(0, 1.0)
                continue
            raise
        scat_idx.append(int(i))
        pts.append(p)
        paths.append(int(i))
        d_breve.append(float(np.linalg.norm(p) + np.linalg.norm(p - n_r)))
    pts = np.array(pts).reshape(-1, 3)
    return scat_idx, pts, paths, np.array(d_breve), found


def _finish(rot, n_r, nu, v, tau, gain, idx, synchronized, los_mode, los_idx, e=None):
    with _phase("triangulation"):
        scat_idx, pts, paths, d_breve, los_out = _structure(rot, n_r, nu, v, idx, los_mode, los_idx)
    with _phase("scale"):
        d_mat = difference_matrix(gain[paths], synchronized)
        s = recover_scale(d_breve, tau[paths], d_mat)
    bias = None
    if not synchronized:
        bias = float(np.mean(tau[paths] - s * d_breve / C))
    return SlamEstimate(
        pose=Pose(rot, s * n_r),
        scatterers=s * pts,
        scale=s,
        clock_bias=bias,
        los_index=los_out,
        scatter_paths=scat_idx,
        paths=paths,
        d_matrix=d_mat,
        essential=e,
    )


def _consistency(est_args) -> float:
    rot, n_r, nu, v, tau, gain, idx, synchronized, los_mode, los_idx = est_args
    _, _, paths, d_breve, _ = _structure(rot, n_r, nu, v, idx, los_mode, los_idx)
    d_mat = difference_matrix(gain[paths], synchronized)
    r = _scale_ratios(d_breve, tau[paths], d_mat)
    if not np.all(np.isfinite(r)) or np.mean(r) <= 0:
        return np.inf
    return float(np.std(r) / abs(np.mean(r)))


def _los_known(nu, v, los_idx, scat, threshold):
    """Rotation and baseline direction from the LoS epipoles and scatterer twists."""
    n_r, st = epipoles_from_los(nu[los_idx], v[los_idx])
    thetas, ok = [], []
    for i in scat:
        try:
            pair = solve_twist_angle(st, nu[los_idx], nu[i], v[i])
            thetas.append(select_twist(st, pair, nu[los_idx], nu[i], v[i]))
            ok.append(i)
        except (AmbiguityError, NoIntersectionError, DegeneracyError):
            continue
    if not thetas:
        raise AmbiguityError("no scatterer gives an unambiguous twist angle")
    thetas = np.array(thetas)
    ok = np.array(ok)
    # one-angle hypotheses scored by truncated Sampson over every scatterer
    best, best_score = None, np.inf
    for th in thetas:
        e = essential_from_pose(Pose(st.rotation(th), n_r))
        score = float(np.minimum(kernels.sampson_batch(e, nu[scat], v[scat]), threshold).sum())
        if score < best_score:
            best, best_score = th, score
    e = essential_from_pose(Pose(st.rotation(best), n_r))
    keep = kernels.sampson_batch(e, nu[ok], v[ok]) < threshold
    theta = circular_mean(thetas[keep]) if keep.any() else best
    rot = st.rotation(theta)
    e = essential_from_pose(Pose(rot, n_r))
    inliers = np.asarray(scat)[kernels.sampson_batch(e, nu[scat], v[scat]) < threshold]
    if len(inliers) == 0:
        inliers = np.asarray(ok)
    return rot, n_r, e, inliers


def closed_form_slam(obs, synchronized: bool = True, los: str = "unknown",
                     iterations: int = 200, threshold: float = 1e-4,
                     rng_seed: int = 0) -> SlamEstimate:
    """UE pose and scatterer positions from one snapshot of path observations.

    ``los`` is ``"known"`` (the LoS path is flagged by ``is_los_hint``),
    ``"unknown"`` (every path is treated as a scatter correspondence) or
    ``"none"`` (no LoS path present).
    """
    los_mode = parse_los_mode(los)
    obs = list(obs)
    nu, v, tau, gain = _unpack(obs) if obs else (None, None, None, None)
    n = len(obs)

    if los_mode == "known":
        flagged = [i for i, o in enumerate(obs) if o.is_los_hint]
        if len(flagged) != 1:
            raise InsufficientDataError(f"LoS-known mode needs exactly one LoS path, got {len(flagged)}")
        los_idx = flagged[0]
        scat = [i for i in range(n) if i != los_idx]
        if len(scat) < 1:
            raise InsufficientDataError("LoS-known mode needs at least one scatterer")
        with _phase("essential"):
            rot, n_r, e, inliers = _los_known(nu, v, los_idx, scat, threshold)
        return _finish(rot, n_r, nu, v, tau, gain, inliers, synchronized, los_mode, los_idx, e)

    if n < 5:
        raise InsufficientDataError(f"need at least 5 paths without LoS knowledge, got {n}")

    if n == 5:
        with _phase("essential"):
            cands = five_point(nu, v)
            if not cands:
                raise DegeneracyError("no real essential matrix candidate")
        idx = np.arange(n)
        scored = []
        for e in cands:
            try:
                rot, n_r = decompose_essential(e, nu, v)
                args = (rot, n_r, nu, v, tau, gain, idx, synchronized, los_mode, None)
                scored.append((_consistency(args), rot, n_r, e))
            except MmwPoseError:
                continue
        if not scored:
            with _phase("decomposition"):
                raise CheiralityError("no candidate passes cheirality")
        _, rot, n_r, e = min(scored, key=lambda t: t[0])
        return _finish(rot, n_r, nu, v, tau, gain, idx, synchronized, los_mode, None, e)

    with _phase("essential"):
        e, mask = ransac_essential(nu, v, iterations, threshold, rng_seed)
        e, mask = refine_essential(e, nu, v, mask, threshold)
    idx = np.flatnonzero(mask)
    if len(idx) < 5:
        with _phase("essential"):
            raise InsufficientDataError(f"only {len(idx)} inlier correspondences")
    with _phase("decomposition"):
        rot, n_r = decompose_essential(e, nu[idx], v[idx])
    return _finish(rot, n_r, nu, v, tau, gain, idx, synchronized, los_mode, None, e)
