"""Uniform rectangular array front end: snapshots, MUSIC angles, MVDR tone association."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment, minimize

from .errors import AssociationError, ConfigError, RankError
from .projection import AzEl

DEFAULT_SNAPSHOTS = 256
DEFAULT_SAMPLE_RATE = 1000.0
MVDR_LOADING = 1e-6
ASSOCIATION_MARGIN = 2.0  # power ratio of best to second-best tone
MAX_SINE = np.sin(np.deg2rad(89.0))


@dataclass(frozen=True)
class UraConfig:
    nx: int = 10
    ny: int = 10
    spacing: float = 0.5  # wavelengths

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ConfigError("array needs at least one element per axis", field="nx/ny")

    @property
    def n(self) -> int:
        return self.nx * self.ny


@dataclass
class SnapshotBlock:
    y: np.ndarray  # (nx*ny, T) complex
    sample_rate: float = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        if self.y.ndim != 2 or self.y.shape[1] < 1:
            raise ValueError("snapshot block must be (elements, T) with T >= 1")

    @property
    def snapshots(self) -> int:
        return self.y.shape[1]

    def covariance(self) -> np.ndarray:
        return self.y @ self.y.conj().T / self.snapshots


def _steer_uv(cfg: UraConfig, ux, uy) -> np.ndarray:
    """Steering vectors for direction cosines; trailing axis is the element index."""
    ux = np.asarray(ux, dtype=float)[..., None]
    uy = np.asarray(uy, dtype=float)[..., None]
    k = 2.0 * np.pi * cfg.spacing
    a1 = np.exp(1j * k * np.arange(cfg.nx) * uy)  # sin(theta) sin(phi)
    a2 = np.exp(1j * k * np.arange(cfg.ny) * ux)  # sin(theta) cos(phi)
    return (a1[..., :, None] * a2[..., None, :]).reshape(a1.shape[:-1] + (cfg.n,))


def steering_vector(cfg: UraConfig, a: AzEl) -> np.ndarray:
    """``a1 kron a2``; element ``(m1, m2)`` sits at index ``m1 * ny + m2``."""
    s = np.sin(a.theta)
    return _steer_uv(cfg, s * np.cos(a.phi), s * np.sin(a.phi))


def synthesize_snapshots(cfg: UraConfig, sources, snapshots: int = DEFAULT_SNAPSHOTS,
                         snr_db: float = 0.0, rng_seed: int = 0,
                         sample_rate: float = DEFAULT_SAMPLE_RATE) -> SnapshotBlock:
    """Narrowband block ``sum_i alpha_i a(psi_i) s_i(t) + noise``.

    ``sources`` holds ``(AzEl, gain, tone_hz)`` triples; each tone has unit
    modulus so the per-source SNR is ``1 / sigma^2``.
    """
    if snapshots < 1:
        raise ConfigError("need at least one snapshot", field="snapshots")
    tones = [float(f) for _, _, f in sources]
    if len(set(tones)) != len(tones):
        raise ConfigError("tone frequencies must be distinct", field="tones")
    rng = np.random.default_rng(rng_seed)
    t = np.arange(snapshots) / sample_rate
    y = np.zeros((cfg.n, snapshots), dtype=complex)
    for a, gain, f in sources:
        y += np.outer(gain * steering_vector(cfg, a), np.exp(2j * np.pi * f * t))
    sigma2 = 10.0 ** (-snr_db / 10.0)
    noise = rng.standard_normal((cfg.n, snapshots)) + 1j * rng.standard_normal((cfg.n, snapshots))
    y += np.sqrt(sigma2 / 2.0) * noise
    return SnapshotBlock(y, sample_rate)


# ------------------------------------------------------------------- MUSIC


def _signal_subspace(block: SnapshotBlock, num_sources: int) -> np.ndarray:
    if num_sources < 1:
        raise ValueError("num_sources must be >= 1")
    if block.snapshots < num_sources:
        raise RankError(f"{block.snapshots} snapshots cannot support {num_sources} sources")
    r = block.covariance()
    w, vecs = np.linalg.eigh(r)
    if w[-num_sources] <= 1e-12 * max(w[-1], 1e-300):
        raise RankError(f"sample covariance rank is below {num_sources}")
    return vecs[:, -num_sources:]


def _music_denominator(cfg: UraConfig, es: np.ndarray, ux, uy) -> np.ndarray:
    a = _steer_uv(cfg, ux, uy)
    proj = np.abs(a.conj() @ es) ** 2
    return cfg.n - proj.sum(axis=-1)


def music_spectrum(block: SnapshotBlock, cfg: UraConfig, num_sources: int, phis, thetas):
    """Pseudo-spectrum on a ``(len(thetas), len(phis))`` grid."""
    es = _signal_subspace(block, num_sources)
    th, ph = np.meshgrid(thetas, phis, indexing="ij")
    s = np.sin(th)
    den = _music_denominator(cfg, es, s * np.cos(ph), s * np.sin(ph))
    return 1.0 / np.maximum(den, 1e-15)


def _grid_peaks(spec: np.ndarray):
    """Local maxima indices, largest first (azimuth wraps around)."""
    padded = np.pad(spec, ((1, 1), (0, 0)), mode="constant", constant_values=-np.inf)
    padded = np.concatenate([padded[:, -1:], padded, padded[:, :1]], axis=1)
    centre = padded[1:-1, 1:-1]
    is_max = np.ones_like(centre, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            nb = padded[1 + di: padded.shape[0] - 1 + di, 1 + dj: padded.shape[1] - 1 + dj]
            is_max &= centre >= nb
    cand = np.argwhere(is_max)
    order = np.argsort(-spec[is_max], kind="stable")
    return [tuple(cand[i]) for i in order]


def _quadratic_offset(fm, f0, fp) -> float:
    d = fm - 2.0 * f0 + fp
    if d >= 0:
        return 0.0
    return float(np.clip(0.5 * (fm - fp) / d, -0.5, 0.5))


def music_aoa(block: SnapshotBlock, cfg: UraConfig, num_sources: int,
              grid: float = np.deg2rad(1.0), polish: bool = True) -> list[AzEl]:
    """MUSIC angle estimates for ``num_sources`` sources in the front half-space.

    The coarse grid maximum is refined by separable quadratic interpolation
    and then polished by a local minimisation of the MUSIC denominator in
    direction-cosine coordinates.
    """
    es = _signal_subspace(block, num_sources)
    phis = np.arange(-np.pi + grid, np.pi + 0.5 * grid, grid)
    thetas = np.arange(0.0, np.pi / 2, grid)
    th, ph = np.meshgrid(thetas, phis, indexing="ij")
    s = np.sin(th)
    den = _music_denominator(cfg, es, s * np.cos(ph), s * np.sin(ph))
    spec = -den  # larger is better; the denominator is smooth near the peak
    out: list[AzEl] = []
    taken: list[np.ndarray] = []
    beam = 2.0 / max(cfg.nx, cfg.ny)
    for i, j in _grid_peaks(spec):
        if len(out) == num_sources:
            break
        if 0 < i < len(thetas) - 1:
            th0 = thetas[i] + grid * _quadratic_offset(spec[i - 1, j], spec[i, j], spec[i + 1, j])
        else:
            th0 = thetas[i]
        jm, jp = (j - 1) % len(phis), (j + 1) % len(phis)
        ph0 = phis[j] + grid * _quadratic_offset(spec[i, jm], spec[i, j], spec[i, jp])
        u0 = np.sin(th0) * np.array([np.cos(ph0), np.sin(ph0)])
        if polish:
            u0 = _polish_uv(cfg, es, u0)
        # the theta = 0 row and azimuth wrap can report one source several times
        if any(np.linalg.norm(u0 - t) < 0.5 * beam for t in taken):
            continue
        taken.append(u0)
        out.append(_uv_to_azel(u0))
    if len(out) < num_sources:
        raise RankError(f"found only {len(out)} distinct spectrum peaks")
    return out


def _polish_uv(cfg: UraConfig, es: np.ndarray, u0: np.ndarray) -> np.ndarray:
    def f(u):
        r = np.hypot(u[0], u[1])
        pen = 0.0 if r <= MAX_SINE else 1e3 * (r - MAX_SINE) ** 2
        return float(_music_denominator(cfg, es, u[0], u[1])) + pen

    res = minimize(f, u0, method="Nelder-Mead",
                   options={"xatol": 1e-9, "fatol": 1e-14, "initial_simplex": _simplex(u0)})
    return res.x if res.fun <= f(u0) else u0


def _simplex(u0: np.ndarray, h: float = 2e-3) -> np.ndarray:
    return np.array([u0, u0 + [h, 0.0], u0 + [0.0, h]])


def _uv_to_azel(u: np.ndarray) -> AzEl:
    r = float(np.hypot(u[0], u[1]))
    theta = float(np.arcsin(min(r, 1.0)))
    phi = float(np.arctan2(u[1], u[0])) if r > 0 else 0.0
    if phi == -np.pi:
        phi = np.pi
    return AzEl(phi, theta)


# -------------------------------------------------------------------- MVDR


def mvdr_weights(block: SnapshotBlock, cfg: UraConfig, aoas) -> np.ndarray:
    """Columns are the distortionless beamformers toward each angle."""
    r = block.covariance()
    r = r + MVDR_LOADING * np.real(np.trace(r)) * np.eye(cfg.n)
    a = np.stack([steering_vector(cfg, x) for x in aoas], axis=1)
    ria = np.linalg.solve(r, a)
    return ria / np.einsum("ij,ij->j", a.conj(), ria)[None, :]


def tone_powers(block: SnapshotBlock, cfg: UraConfig, aoas, tones) -> np.ndarray:
    """``P[i, k]``: beamformed power toward ``aoas[i]`` at ``tones[k]``."""
    w = mvdr_weights(block, cfg, aoas)
    z = w.conj().T @ block.y
    t = np.arange(block.snapshots) / block.sample_rate
    basis = np.exp(-2j * np.pi * np.outer(t, np.asarray(tones, dtype=float)))
    return np.abs(z @ basis) ** 2 / block.snapshots


def mvdr_associate(block: SnapshotBlock, cfg: UraConfig, aoas, tones) -> list[int]:
    """Tone (BS) index for each angle estimate.

    Raises AssociationError when two angles both prefer the same tone by at
    least ``ASSOCIATION_MARGIN`` over their next choice.
    """
    if len(aoas) != len(tones):
        raise ValueError("need one tone per angle estimate")
    p = tone_powers(block, cfg, aoas, tones)
    best = np.argmax(p, axis=1)
    srt = np.sort(p, axis=1)
    confident = srt[:, -1] >= ASSOCIATION_MARGIN * (srt[:, -2] if p.shape[1] > 1 else 0.0)
    for k in range(p.shape[1]):
        claim = np.flatnonzero((best == k) & confident)
        if len(claim) > 1:
            raise AssociationError(f"angles {claim.tolist()} all resolve to tone {tones[k]} Hz")
    rows, cols = linear_sum_assignment(-np.log(np.maximum(p, 1e-300)))
    perm = [0] * len(aoas)
    for r, c in zip(rows, cols):
        perm[int(r)] = int(c)
    return perm
