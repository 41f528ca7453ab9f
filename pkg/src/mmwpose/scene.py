"""Synthetic scatter scenes, channel gains and noisy path observations."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, GeometryError, MixingError
from .lie import Pose, exp_so3
from .projection import EPS_FRONT
from .slam import C, PathObservation

log = logging.getLogger(__name__)

PLANE_TOL = 1e-9
DEFAULT_FOV = 4.0 * np.pi / 9.0
DELAY_VARIANCE = 1e-15  # s^2 per unit sigma_mu^2
MIN_GAIN = 1e-6


# ----------------------------------------------------------------- facades


@dataclass(frozen=True)
class Facade:
    center: np.ndarray
    normal: np.ndarray
    extents: np.ndarray  # full side lengths along (u, w)
    beta: int = 0

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        ext = np.asarray(self.extents, dtype=float).reshape(2)
        if np.any(ext <= 0):
            raise ConfigError("facade extents must be positive", field="extents")
        if self.beta < 0 or int(self.beta) != self.beta:
            raise ConfigError("beta must be a nonnegative integer", field="beta")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        object.__setattr__(self, "normal", n / np.linalg.norm(n))
        object.__setattr__(self, "extents", ext)
        object.__setattr__(self, "beta", int(self.beta))

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        """In-plane unit axes ``(u, w)`` with ``u x w = normal``."""
        n = self.normal
        a = np.array([1.0, 0.0, 0.0]) if abs(n[2]) > 0.9 else np.array([0.0, 0.0, 1.0])
        u = np.cross(a, n)
        u /= np.linalg.norm(u)
        return u, np.cross(n, u)

    def to_world(self, ab) -> np.ndarray:
        ab = np.asarray(ab, dtype=float)
        u, w = self.axes()
        return self.center + ab[..., :1] * u + ab[..., 1:2] * w

    def contains(self, p, tol: float = PLANE_TOL) -> bool:
        d = np.asarray(p, dtype=float) - self.center
        u, w = self.axes()
        half = self.extents / 2
        return (
            abs(d @ self.normal) <= tol
            and abs(d @ u) <= half[0] + tol
            and abs(d @ w) <= half[1] + tol
        )

    def facing(self, point) -> Facade:
        """Copy whose normal points to the side of ``point``."""
        if (np.asarray(point, dtype=float) - self.center) @ self.normal >= 0:
            return self
        return Facade(self.center, -self.normal, self.extents, self.beta)


def normalization_fbeta(beta: int, theta_i: float) -> float:
    return kernels.fbeta(int(beta), float(np.cos(theta_i)))


def pattern_density(p, bs, ue, facade: Facade) -> float:
    """Unnormalised scatter density at ``p`` on ``facade``."""
    p = np.asarray(p, dtype=float)
    if abs((p - facade.center) @ facade.normal) > PLANE_TOL:
        raise GeometryError("point is off the facade plane")
    return kernels.pattern_density(
        p, np.asarray(bs, dtype=float), np.asarray(ue, dtype=float), facade.normal, facade.beta
    )


def specular_point(facade: Facade, bs, ue) -> np.ndarray:
    """Mirror-reflection point of the BS->UE path on the facade plane."""
    bs = np.asarray(bs, dtype=float)
    ue = np.asarray(ue, dtype=float)
    n = facade.normal
    mirror = bs - 2.0 * ((bs - facade.center) @ n) * n
    d = ue - mirror
    den = d @ n
    if abs(den) < 1e-15:
        raise GeometryError("UE and mirrored BS are parallel to the facade")
    t = ((facade.center - mirror) @ n) / den
    return mirror + t * d


def _grid_start(facade: Facade, bs, ue, n: int = 41):
    half = facade.extents / 2
    a = np.linspace(-half[0], half[0], n)
    b = np.linspace(-half[1], half[1], n)
    ab = np.stack(np.meshgrid(a, b, indexing="ij"), axis=-1).reshape(-1, 2)
    dens = kernels.pattern_density_batch(facade.to_world(ab), bs, ue, facade.normal, facade.beta)
    k = int(np.argmax(dens))
    if dens[k] <= 0:
        raise GeometryError("density vanishes on the whole facade")
    return ab[k], dens


def sample_scatterers(facade: Facade, bs, ue, count: int, burn_in: int = 1000,
                      rng_seed: int = 0, thin: int = 30, target_accept: float = 0.3,
                      batch: int = 100) -> np.ndarray:
    """Random-walk Metropolis draws from the facade scatter density, ``(count, 3)``."""
    if count < 1:
        raise ConfigError("count must be >= 1", field="count")
    bs = np.asarray(bs, dtype=float)
    ue = np.asarray(ue, dtype=float)
    u, w = facade.axes()
    half = facade.extents / 2
    start, _ = _grid_start(facade, bs, ue)
    rng = np.random.default_rng(rng_seed)
    scale = 0.1 * float(facade.extents.min())

    def run(start, n, scale):
        steps = rng.standard_normal((n, 2))
        log_u = np.log(rng.random(n))
        return kernels.metropolis_chain(
            start, facade.center, u, w, half, facade.normal, bs, ue, facade.beta, scale, steps, log_u
        )

    done = 0
    while done < burn_in:
        n = min(batch, burn_in - done)
        chain, acc = run(start, n, scale)
        start = chain[-1]
        # Robbins-Monro style nudge of the log step size toward the target rate
        scale *= float(np.exp(acc / n - target_accept))
        done += n
    chain, acc = run(start, count * thin, scale)
    rate = acc / (count * thin)
    if not 0.05 < rate < 0.95:
        raise MixingError(f"acceptance rate {rate:.3f} outside (0.05, 0.95)")
    return facade.to_world(chain[thin - 1 :: thin][:count])


# ------------------------------------------------------------------- gains


def assign_gains(cluster_delays, scatter_delays, dc: float = 25.9e-9, sigma_z: float = 1.0,
                 ds: float = 16.9e-9, sigma_u: float = 6.0, rng_seed: int = 0):
    """Exponential-decay cluster powers split across scatterers.

    ``cluster_delays[k]`` is the cluster's excess specular delay and
    ``scatter_delays[k]`` the per-scatterer excess delays within it (seconds).
    The per-scatterer powers ``|alpha|^2`` of cluster ``k`` sum to ``P_k``.
    Returns ``(gains, cluster_powers)`` with gains as complex arrays carrying
    uniform random phases.
    """
    if dc <= 0 or ds <= 0:
        raise ConfigError("decay constants must be positive", field="dc/ds")
    rng = np.random.default_rng(rng_seed)
    gains, powers = [], []
    for tau_k, taus in zip(cluster_delays, scatter_delays):
        taus = np.asarray(taus, dtype=float)
        p_k = np.exp(-tau_k / dc) * 10.0 ** (rng.normal(0.0, sigma_z) / 10.0)
        p_n = np.exp(-taus / ds) * 10.0 ** (rng.normal(0.0, sigma_u, len(taus)) / 10.0)
        power = p_n / p_n.sum() * p_k
        phase = np.exp(2j * np.pi * rng.random(len(taus)))
        gains.append(np.sqrt(power) * phase)
        powers.append(p_k)
    return gains, np.array(powers)


# ------------------------------------------------------------------- scenes


@dataclass
class ScatterScene:
    bs_pose: Pose
    ue_pose: Pose
    scatterers: np.ndarray
    gains: np.ndarray  # LoS gain first when los_present
    clock_bias: float = 0.0
    los_present: bool = False
    cluster: np.ndarray | None = None  # facade index per scatterer
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.scatterers = np.asarray(self.scatterers, dtype=float).reshape(-1, 3)
        self.gains = np.asarray(self.gains, dtype=complex).ravel()
        expected = len(self.scatterers) + (1 if self.los_present else 0)
        if len(self.gains) != expected:
            raise ValueError(f"expected {expected} gains, got {len(self.gains)}")

    def scatter_gains(self) -> np.ndarray:
        return self.gains[1:] if self.los_present else self.gains

    def relative(self) -> tuple[Pose, np.ndarray]:
        """UE pose and scatterers expressed in the BS frame."""
        return self.bs_pose.inverse() @ self.ue_pose, self.bs_pose.to_local(self.scatterers)

    def to_dict(self) -> dict:
        def pose(p):
            return {"rot": p.rot.tolist(), "trans": p.trans.tolist()}

        return {
            "bs_pose": pose(self.bs_pose),
            "ue_pose": pose(self.ue_pose),
            "scatterers": self.scatterers.tolist(),
            "gains": [[g.real, g.imag] for g in self.gains],
            "clock_bias": self.clock_bias,
            "los_present": self.los_present,
            "cluster": None if self.cluster is None else [int(c) for c in self.cluster],
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ScatterScene:
        def pose(x):
            return Pose(np.array(x["rot"]), np.array(x["trans"]))

        return cls(
            bs_pose=pose(d["bs_pose"]),
            ue_pose=pose(d["ue_pose"]),
            scatterers=np.array(d["scatterers"], dtype=float).reshape(-1, 3),
            gains=np.array([complex(re, im) for re, im in d["gains"]]),
            clock_bias=float(d["clock_bias"]),
            los_present=bool(d["los_present"]),
            cluster=None if d.get("cluster") is None else np.array(d["cluster"]),
            meta=dict(d.get("meta", {})),
        )


def look_at(position, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Pose at ``position`` whose local z-axis points at ``target``."""
    position = np.asarray(position, dtype=float)
    z = np.asarray(target, dtype=float) - position
    z /= np.linalg.norm(z)
    up = np.asarray(up, dtype=float)
    if abs(up @ z) > 0.99:
        up = np.array([1.0, 0.0, 0.0])
    x = np.cross(up, z)
    x /= np.linalg.norm(x)
    return Pose(np.column_stack([x, np.cross(z, x), z]), position)


def _off_boresight(pose: Pose, pts) -> np.ndarray:
    local = pose.to_local(pts)
    return np.arccos(np.clip(local[..., 2] / np.linalg.norm(local, axis=-1), -1.0, 1.0))


def _uniform_ellipsoid(axes, n, rng) -> np.ndarray:
    """Area-uniform points on an axis-aligned ellipsoid (rejection on the sphere map)."""
    axes = np.asarray(axes, dtype=float)
    out = []
    bound = 1.0 / axes.min()
    while sum(len(o) for o in out) < n:
        u = rng.standard_normal((4 * n, 3))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        # local area stretch is |det A| * ||A^-1 u||; the constant cancels
        stretch = np.linalg.norm(u / axes, axis=1)
        keep = rng.random(len(u)) < stretch / bound
        out.append(u[keep] * axes)
    return np.vstack(out)[:n]


def ellipsoid_scene(axes=(16.0, 12.0, 8.0), n_scatter: int = 10, fov: float = DEFAULT_FOV,
                    rng_seed: int = 0, clock_bias: float = 0.0,
                    max_draws: int = 200_000) -> ScatterScene:
    """BS and UE at the foci of the two largest semi-axes, facing each other."""
    axes = np.asarray(axes, dtype=float)
    if axes.shape != (3,) or np.any(axes <= 0) or np.any(np.diff(axes) > 0):
        raise ConfigError("axes must be three positive values in descending order", field="axes")
    if axes[0] <= axes[1]:
        raise ConfigError("foci are not real: two largest axes are equal", field="axes")
    if n_scatter < 1:
        raise ConfigError("n_scatter must be >= 1", field="n_scatter")
    if fov <= 0:
        raise ConfigError("field of view admits no scatterers", field="fov")
    f = float(np.sqrt(axes[0] ** 2 - axes[1] ** 2))
    bs = look_at([-f, 0.0, 0.0], [f, 0.0, 0.0])
    ue = look_at([f, 0.0, 0.0], [-f, 0.0, 0.0])
    rng = np.random.default_rng(rng_seed)
    found = []
    drawn = 0
    while len(found) < n_scatter:
        if drawn >= max_draws:
            raise ConfigError("field of view admits no scatterers", field="fov")
        pts = _uniform_ellipsoid(axes, 256, rng)
        drawn += len(pts)
        ok = (_off_boresight(ue, pts) < fov) & (_off_boresight(bs, pts) < fov)
        found.extend(pts[ok])
    pts = np.array(found[:n_scatter])
    return ScatterScene(bs, ue, pts, np.ones(n_scatter, dtype=complex), clock_bias, False,
                        meta={"kind": "ellipsoid", "axes": axes.tolist(), "fov": fov})


def street_facades(beta: int = 10) -> list[Facade]:
    building = Facade([10.0, 10.0, 5.0], [0.0, 1.0, 0.0], [20.0, 10.0], beta)
    ground = Facade([10.0, 0.0, 0.0], [0.0, 0.0, 1.0], [20.0, 20.0], beta)
    return [building, ground]


BS_FACADE_POSE = Pose(np.array([[0.0, 0.0, -1.0], [1.0, 0.0, 0.0], [0.0, -1.0, 0.0]]),
                      np.array([20.0, 0.0, 8.0]))
UE_FACADE_POSE = Pose(np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]]),
                      np.array([0.0, 0.0, 2.0]))


def two_facade_scene(rng_seed: int = 0, beta: int = 10, count: int = 100,
                     los_present: bool = True, clock_bias: float = 0.0,
                     burn_in: int = 1000, gain_params: dict | None = None) -> ScatterScene:
    """Building facade plus ground, with the fixed BS/UE poses of the street scene."""
    bs, ue = BS_FACADE_POSE, UE_FACADE_POSE
    seeds = np.random.SeedSequence(rng_seed).spawn(3)
    pts, cluster, cl_delay, sc_delay = [], [], [], []
    los_len = float(np.linalg.norm(ue.trans - bs.trans))
    for k, fac in enumerate(street_facades(beta)):
        fac = fac.facing(bs.trans)
        s = sample_scatterers(fac, bs.trans, ue.trans, count, burn_in,
                              int(seeds[k].generate_state(1)[0]))
        spec = specular_point(fac, bs.trans, ue.trans)
        spec_len = np.linalg.norm(spec - bs.trans) + np.linalg.norm(ue.trans - spec)
        lens = np.linalg.norm(s - bs.trans, axis=1) + np.linalg.norm(ue.trans - s, axis=1)
        cl_delay.append((spec_len - los_len) / C)
        sc_delay.append(np.maximum(lens - spec_len, 0.0) / C)
        pts.append(s)
        cluster.extend([k] * len(s))
    gains, _ = assign_gains(cl_delay, sc_delay, rng_seed=int(seeds[2].generate_state(1)[0]),
                            **(gain_params or {}))
    g = np.concatenate(gains)
    if los_present:
        g = np.concatenate([[1.0 + 0j], g])
    return ScatterScene(bs, ue, np.vstack(pts), g, clock_bias, los_present, np.array(cluster),
                        meta={"kind": "two_facade", "beta": beta})


def random_scene(n_scatter: int, rng_seed: int = 0, los_present: bool = False,
                 clock_bias: float = 0.0, box: float = 20.0,
                 max_off_axis: float = np.deg2rad(70.0)) -> ScatterScene:
    """UE uniform in a box around the BS, random orientation, scatterers in the common view."""
    rng = np.random.default_rng(rng_seed)
    bs = Pose.identity()
    while True:
        r = rng.uniform(-box / 2, box / 2, 3)
        rot = exp_so3(_random_rotvec(rng))
        ue = Pose(rot, r)
        if np.linalg.norm(r) < 1.0:
            continue
        if los_present and (
            _off_boresight(bs, r) > max_off_axis or _off_boresight(ue, np.zeros(3)) > max_off_axis
        ):
            continue
        pts = []
        for _ in range(200):
            cand = rng.uniform([-box, -box, 0.5], [box, box, 2 * box], (64, 3))
            ok = (
                (_off_boresight(bs, cand) < max_off_axis)
                & (_off_boresight(ue, cand) < max_off_axis)
                & (ue.to_local(cand)[:, 2] > 0.5)
                & (cand[:, 2] > 0.5)
            )
            pts.extend(cand[ok])
            if len(pts) >= n_scatter:
                break
        if len(pts) >= n_scatter:
            break
    pts = np.array(pts[:n_scatter])
    g = rng.uniform(0.2, 1.0, n_scatter) * np.exp(2j * np.pi * rng.random(n_scatter))
    if los_present:
        g = np.concatenate([[1.0 + 0j], g])
    return ScatterScene(bs, ue, pts, g, clock_bias, los_present, meta={"kind": "random"})


def _random_rotvec(rng) -> np.ndarray:
    """Rotation vector of a Haar-uniform rotation (via a random unit quaternion)."""
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    angle = 2.0 * np.arccos(np.clip(q[0], -1.0, 1.0))
    s = np.linalg.norm(q[1:])
    return np.zeros(3) if s < 1e-15 else q[1:] / s * angle


# -------------------------------------------------------------- observations


@dataclass(frozen=True)
class NoiseSpec:
    """Gaussian observation noise ``sigma_mu^2 * diag(sigma_matrix)`` per path.

    With ``gain_scaled`` each path's standard deviation is divided by its gain
    magnitude (unit gain being the reference), so weak paths are as noisy as
    their SNR implies.
    """

    sigma_mu: float = 0.0
    sigma_matrix: tuple = (1.0, 1.0, 1.0, 1.0, DELAY_VARIANCE)
    gain_scaled: bool = False

    def __post_init__(self):
        if self.sigma_mu < 0 or any(s < 0 for s in self.sigma_matrix):
            raise ValueError("noise parameters must be nonnegative")

    def std(self, gain_mag: float = 1.0) -> np.ndarray:
        s = self.sigma_mu * np.sqrt(np.asarray(self.sigma_matrix, dtype=float))
        if self.gain_scaled:
            s = s / max(float(gain_mag), MIN_GAIN)
        return s


def noiseless_paths(scene: ScatterScene):
    """Exact ``(nu, v, tau)`` for LoS (if present) then every scatterer, BS frame."""
    bs, ue = scene.bs_pose, scene.ue_pose
    pts = scene.scatterers
    d = np.linalg.norm(pts - bs.trans, axis=1) + np.linalg.norm(pts - ue.trans, axis=1)
    rows = []
    if scene.los_present:
        rows.append((bs.to_local(ue.trans), ue.to_local(bs.trans),
                     np.linalg.norm(ue.trans - bs.trans) / C + scene.clock_bias))
    for p, dist in zip(pts, d):
        rows.append((bs.to_local(p), ue.to_local(p), dist / C + scene.clock_bias))
    return rows


def observe_with_report(scene: ScatterScene, noise: NoiseSpec | None = None, rng_seed: int = 0,
                        fov: float | None = None):
    """Noisy path observations plus the list of dropped path indices.

    Path ``0`` is the LoS path when present; scatterer ``i`` is path
    ``i + 1`` then, else path ``i``.  Paths behind either array (or outside
    ``fov`` off-boresight, when given) are dropped.
    """
    noise = noise or NoiseSpec()
    rng = np.random.default_rng(rng_seed)
    off = 1 if scene.los_present else 0
    gains = np.abs(scene.gains)
    obs, dropped = [], []
    for k, (a, b, tau) in enumerate(noiseless_paths(scene)):
        w = rng.standard_normal(5) * noise.std(gains[k])
        front = a[2] > EPS_FRONT and b[2] > EPS_FRONT
        if front and fov is not None:
            front = (
                np.arccos(a[2] / np.linalg.norm(a)) < fov and np.arccos(b[2] / np.linalg.norm(b)) < fov
            )
        if not front:
            dropped.append(k)
            continue
        nu = a[:2] / a[2] + w[0:2]
        v = b[:2] / b[2] + w[2:4]
        is_los = scene.los_present and k == 0
        obs.append(PathObservation(nu, v, tau + w[4], float(gains[k]), is_los, -1 if is_los else k - off))
    if dropped:
        log.info("dropped %d paths outside the arrays' view: %s", len(dropped), dropped)
    return obs, dropped


def observe(scene: ScatterScene, noise: NoiseSpec | None = None, rng_seed: int = 0,
            fov: float | None = None) -> list[PathObservation]:
    return observe_with_report(scene, noise, rng_seed, fov)[0]


__all__ = [
    "Facade",
    "NoiseSpec",
    "ScatterScene",
    "assign_gains",
    "ellipsoid_scene",
    "look_at",
    "normalization_fbeta",
    "observe",
    "observe_with_report",
    "pattern_density",
    "random_scene",
    "sample_scatterers",
    "specular_point",
    "two_facade_scene",
]
