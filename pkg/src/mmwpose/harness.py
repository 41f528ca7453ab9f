"""Monte Carlo experiment drivers, configuration and CSV output."""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import metrics
from .aoa_pose import direction_cosine_weights, pnp_solve, pose_refine_reprojection
from .array import UraConfig, music_aoa, mvdr_associate, synthesize_snapshots
from .errors import ConfigError, MmwPoseError
from .lie import Pose
from .projection import azel_to_normal, azel_to_virtual_point, normal_to_azel
from .refine import SlamParameters, WeightSpec, refine, stack_observations
from .scene import (
    DEFAULT_FOV,
    NoiseSpec,
    ScatterScene,
    ellipsoid_scene,
    observe,
    two_facade_scene,
)
from .slam import closed_form_slam, difference_matrix, triangulate

log = logging.getLogger(__name__)

# example experiment configs shipped with the package
CONFIG_DIR = Path(__file__).parent / "configs"

PROBLEMS = ("aoa-pose", "slam-tightness", "slam-facade")
SWEEP_PARAMS = {
    "aoa-pose": ("snr_db",),
    "slam-tightness": ("sigma_mu", "snr_db", "n_scatter"),
    "slam-facade": ("sigma_mu", "snr_db", "beta"),
}
CSV_COLUMNS = (
    "experiment", "solver", "sweep_param", "sweep_value", "trial",
    "err_pos_m", "err_rot_rad", "err_scat_m", "converged",
)
WEIGHTINGS = ("identity", "direction-cosine")
# RANSAC inlier threshold on the Sampson distance, in units of sigma_mu^2
SAMPSON_SIGMAS2 = 16.0
MIN_THRESHOLD = 1e-10


# ------------------------------------------------------------------- config


@dataclass
class ExperimentConfig:
    problem: str
    sweep_param: str
    sweep_values: list[float]
    trials: int = 100
    seed: int = 0
    synchronized: bool = True
    los: str = "none"
    output: str | None = None
    threads: int = 1
    params: dict = field(default_factory=dict)

    def validate(self) -> ExperimentConfig:
        if self.problem not in PROBLEMS:
            raise ConfigError(f"problem must be one of {PROBLEMS}, got {self.problem!r}", field="problem")
        if self.sweep_param not in SWEEP_PARAMS[self.problem]:
            raise ConfigError(
                f"{self.problem} sweeps one of {SWEEP_PARAMS[self.problem]}, got {self.sweep_param!r}",
                field="sweep.param",
            )
        if not self.sweep_values:
            raise ConfigError("sweep needs at least one value", field="sweep.values")
        for i, x in enumerate(self.sweep_values):
            if not isinstance(x, (int, float)) or isinstance(x, bool) or not math.isfinite(x):
                raise ConfigError(f"sweep value {x!r} is not a finite number", field=f"sweep.values[{i}]")
        if not isinstance(self.trials, int) or self.trials < 1:
            raise ConfigError("trials must be an integer >= 1", field="trials")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a nonnegative integer", field="seed")
        if not isinstance(self.threads, int) or self.threads < 1:
            raise ConfigError("threads must be an integer >= 1", field="threads")
        if self.los not in ("known", "unknown", "none"):
            raise ConfigError("los must be known, unknown or none", field="los")
        if self.params.get("weighting", "identity") not in WEIGHTINGS:
            raise ConfigError(f"weighting must be one of {WEIGHTINGS}", field="params.weighting")
        allowed = PARAM_DEFAULTS[self.problem]
        for key in self.params:
            if key not in allowed:
                raise ConfigError(f"unknown parameter {key!r} for {self.problem}", field=f"params.{key}")
        return self

    def param(self, key):
        return self.params.get(key, PARAM_DEFAULTS[self.problem][key])


PARAM_DEFAULTS = {
    "aoa-pose": {
        "snr_db": 0.0,
        "nx": 10,
        "ny": 10,
        "snapshots": 256,
        "samples": 100,
        "grid_deg": 1.0,
        "weighting": "identity",
    },
    "slam-tightness": {
        "sigma_mu": 0.1,
        "n_scatter": 10,
        "axes": [16.0, 12.0, 8.0],
        "fov": DEFAULT_FOV,
        "ransac_iterations": 200,
    },
    "slam-facade": {
        "sigma_mu": 1e-3,
        "beta": 10,
        "count": 100,
        "fov": DEFAULT_FOV,
        "clock_bias": 50e-9,
        "gain_scaled_noise": True,
        "ransac_iterations": 200,
    },
}

_TOP_KEYS = {"problem", "sweep", "trials", "seed", "sync", "los", "output", "threads", "params"}


def config_from_dict(d: dict) -> ExperimentConfig:
    if not isinstance(d, dict):
        raise ConfigError("config must be a mapping", field="")
    for key in d:
        if key not in _TOP_KEYS:
            raise ConfigError(f"unknown key {key!r}", field=str(key))
    if "problem" not in d:
        raise ConfigError("missing required key", field="problem")
    sweep = d.get("sweep")
    if not isinstance(sweep, dict) or set(sweep) != {"param", "values"}:
        raise ConfigError("sweep must be a mapping with exactly 'param' and 'values'", field="sweep")
    if not isinstance(sweep["values"], list):
        raise ConfigError("sweep values must be a list", field="sweep.values")
    params = d.get("params") or {}
    if not isinstance(params, dict):
        raise ConfigError("params must be a mapping", field="params")
    return ExperimentConfig(
        problem=d["problem"],
        sweep_param=sweep["param"],
        sweep_values=list(sweep["values"]),
        trials=d.get("trials", 100),
        seed=d.get("seed", 0),
        synchronized=bool(d.get("sync", True)),
        los=str(d.get("los", "none")),
        output=d.get("output"),
        threads=d.get("threads", 1),
        params=dict(params),
    ).validate()


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", field="") from exc
    try:
        d = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}", field="") from exc
    return config_from_dict(d)


# ------------------------------------------------------------------- seeds


def trial_seed(seed: int, point: int, trial: int) -> int:
    """Seed for one trial, independent of execution order."""
    return int(np.random.SeedSequence([seed, point, trial]).generate_state(1, dtype=np.uint64)[0] >> 1)


# ---------------------------------------------------------------- SLAM trials


def _slam_solvers(scene: ScatterScene, obs, sigma_mu: float, synchronized: bool, los: str,
                  iterations: int, seed: int):
    """CF then LS estimates for one snapshot; returns two TrialResults."""
    truth_pose, truth_pts = scene.relative()
    threshold = max(SAMPSON_SIGMAS2 * sigma_mu**2, MIN_THRESHOLD)
    try:
        est = closed_form_slam(obs, synchronized=synchronized, los=los,
                               iterations=iterations, threshold=threshold, rng_seed=seed)
    except MmwPoseError as exc:
        log.info("closed form failed: %s", exc)
        return metrics.diverged("CF"), metrics.diverged("LS")
    cf = metrics.error_vector(truth_pose, truth_pts, est.pose, est.scatterers, "CF")

    los_used = est.los_index is not None
    paths, pts = _seed_scatterers(est, obs)
    if los_used:
        paths = [est.los_index] + paths
    sel = [obs[i] for i in paths]
    gains = [o.gain_mag for o in sel]
    try:
        d_mat = difference_matrix(gains, synchronized)
        y = stack_observations([o.nu for o in sel], [o.v for o in sel], [o.tau for o in sel], d_mat)
        init = SlamParameters(est.pose, pts)
        params, _ = refine(init, y, WeightSpec.from_gains(gains), d_mat, los_used)
    except MmwPoseError as exc:
        log.info("refinement failed: %s", exc)
        return cf, metrics.diverged("LS")
    ls = metrics.error_vector(truth_pose, truth_pts, params.pose, params.scatterers, "LS")
    return cf, ls


def _seed_scatterers(est, obs):
    """Triangulate every non-LoS path at the CF pose; keep those in front of both arrays."""
    rot, n_r = est.pose.rot, est.pose.trans / est.scale
    paths, pts = [], []
    for i, o in enumerate(obs):
        if i == est.los_index:
            continue
        try:
            p = est.scale * triangulate((rot, n_r), o.nu, o.v)
        except MmwPoseError:
            continue
        if p[2] > 0 and est.pose.to_local(p)[2] > 0:
            paths.append(i)
            pts.append(p)
    return paths, np.array(pts).reshape(-1, 3)


def slam_tightness_trial(cfg: ExperimentConfig, value: float, seed: int):
    p = dict(sigma_mu=cfg.param("sigma_mu"), n_scatter=cfg.param("n_scatter"))
    if cfg.sweep_param == "snr_db":
        p["sigma_mu"] = snr_to_sigma(value)
    else:
        p[cfg.sweep_param] = value
    ss = np.random.SeedSequence(seed).spawn(3)
    scene = ellipsoid_scene(cfg.param("axes"), int(p["n_scatter"]), cfg.param("fov"),
                            rng_seed=_draw(ss[0]))
    obs = observe(scene, NoiseSpec(float(p["sigma_mu"])), rng_seed=_draw(ss[1]))
    return _slam_solvers(scene, obs, float(p["sigma_mu"]), cfg.synchronized, cfg.los,
                         cfg.param("ransac_iterations"), _draw(ss[2]))


def slam_facade_trial(cfg: ExperimentConfig, value: float, seed: int):
    p = dict(sigma_mu=cfg.param("sigma_mu"), beta=cfg.param("beta"))
    if cfg.sweep_param == "snr_db":
        p["sigma_mu"] = snr_to_sigma(value)
    else:
        p[cfg.sweep_param] = value
    ss = np.random.SeedSequence(seed).spawn(3)
    scene = two_facade_scene(_draw(ss[0]), beta=int(p["beta"]), count=cfg.param("count"),
                             los_present=cfg.los != "none",
                             clock_bias=0.0 if cfg.synchronized else cfg.param("clock_bias"))
    noise = NoiseSpec(float(p["sigma_mu"]), gain_scaled=cfg.param("gain_scaled_noise"))
    obs = observe(scene, noise, rng_seed=_draw(ss[1]), fov=cfg.param("fov"))
    return _slam_solvers(scene, obs, float(p["sigma_mu"]), cfg.synchronized, cfg.los,
                         cfg.param("ransac_iterations"), _draw(ss[2]))


def snr_to_sigma(snr_db: float) -> float:
    """Virtual-point noise level for a unit-gain path at ``snr_db``."""
    return float(10.0 ** (-snr_db / 20.0))


def _draw(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1)[0])


# ---------------------------------------------------------------- AoA trials

DEFAULT_BS = np.array([[-24.0, -20.0, 8.5], [25.0, -25.0, 9.0], [-22.0, 20.0, 8.0], [23.0, 25.0, 10.0]])


def default_tones(n: int = 4) -> list[float]:
    return [100.0 + 50.0 * i for i in range(1, n + 1)]


def ue_path(samples: int = 100, radius: float = 15.0, amplitude: float = 1.0,
            center=(0.0, 0.0, 1.5), periods: int = 3) -> list[Pose]:
    """Circle in the xy plane with a sinusoidal height, starting on the +y axis.

    The array faces up (local z along world z) with local x along the
    direction of travel.
    """
    center = np.asarray(center, dtype=float)
    out = []
    for k in range(samples):
        s = k / samples
        a = np.pi / 2 + 2 * np.pi * s
        pos = center + np.array([radius * np.cos(a), radius * np.sin(a),
                                 amplitude * np.sin(2 * np.pi * periods * s)])
        x = np.array([-np.sin(a), np.cos(a), 0.0])
        z = np.array([0.0, 0.0, 1.0])
        out.append(Pose(np.column_stack([x, np.cross(z, x), z]), pos))
    return out


def aoa_pose_sample(ue: Pose, bs_pos, tones, cfg_array, snr_db: float, snapshots: int,
                    grid: float, seed: int, weighting: str = "identity"):
    """One position on the path; returns (CF, LS) TrialResults."""
    ss = np.random.SeedSequence(seed).spawn(2)
    local = ue.to_local(bs_pos)
    truth = [normal_to_azel(q) for q in local]
    if any(a.theta >= np.pi / 2 for a in truth):
        return metrics.diverged("CF"), metrics.diverged("LS")
    rng = np.random.default_rng(_draw(ss[0]))
    gains = np.exp(2j * np.pi * rng.random(len(truth)))
    block = synthesize_snapshots(cfg_array, list(zip(truth, gains, tones)), snapshots, snr_db,
                                 _draw(ss[1]))
    try:
        est = music_aoa(block, cfg_array, len(truth), grid)
        perm = mvdr_associate(block, cfg_array, est, tones)
    except MmwPoseError as exc:
        log.info("front end failed: %s", exc)
        return metrics.diverged("CF"), metrics.diverged("LS")
    true_dirs = local / np.linalg.norm(local, axis=1, keepdims=True)
    nearest = [int(np.argmax(true_dirs @ azel_to_normal(a))) for a in est]
    if nearest != perm:
        log.info("wrong BS association %s (nearest %s)", perm, nearest)
        return metrics.diverged("CF"), metrics.diverged("LS")
    v = np.zeros((len(truth), 2))
    try:
        for a, k in zip(est, perm):
            v[k] = azel_to_virtual_point(a)
        cf = pnp_solve(bs_pos, v, refine=False)
        w = direction_cosine_weights(v) if weighting == "direction-cosine" else None
        ls = pose_refine_reprojection(cf, bs_pos, v, w)
    except MmwPoseError as exc:
        log.info("pose solver failed: %s", exc)
        return metrics.diverged("CF"), metrics.diverged("LS")
    empty = np.zeros((0, 3))
    return (metrics.error_vector(ue, empty, cf, empty, "CF"),
            metrics.error_vector(ue, empty, ls, empty, "LS"))


def aoa_pose_trial(cfg: ExperimentConfig, value: float, seed: int):
    """Whole UE path for one noise realisation; returns [(sample, CF, LS), ...]."""
    snr = value if cfg.sweep_param == "snr_db" else cfg.param("snr_db")
    ura = UraConfig(int(cfg.param("nx")), int(cfg.param("ny")))
    grid = np.deg2rad(float(cfg.param("grid_deg")))
    path = ue_path(int(cfg.param("samples")))
    seeds = np.random.SeedSequence(seed).spawn(len(path))
    out = []
    for k, ue in enumerate(path):
        cf, ls = aoa_pose_sample(ue, DEFAULT_BS, default_tones(len(DEFAULT_BS)), ura, float(snr),
                                 int(cfg.param("snapshots")), grid, _draw(seeds[k]),
                                 cfg.param("weighting"))
        out.append((k, cf, ls))
    return out


# --------------------------------------------------------------- orchestration


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list[dict]

    def results(self, solver: str, sweep_value: float) -> list[metrics.TrialResult]:
        return [r["result"] for r in self.rows
                if r["solver"] == solver and r["sweep_value"] == sweep_value]

    def rmse_table(self) -> list[dict]:
        out = []
        for value in self.config.sweep_values:
            for solver in ("CF", "LS"):
                res = self.results(solver, value)
                diverged = sum(not r.converged for r in res)
                try:
                    pos, rot, scat = metrics.rmse(res)
                except MmwPoseError:
                    pos = rot = scat = float("nan")
                out.append(dict(solver=solver, sweep_value=value, rmse_pos_m=pos,
                                rmse_rot_rad=rot, rmse_scat_m=scat, trials=len(res),
                                diverged=diverged))
        return out

    def cdf_table(self) -> list[dict]:
        out = []
        for value in self.config.sweep_values:
            for solver in ("CF", "LS"):
                res = self.results(solver, value)
                for metric in ("err_pos", "err_rot"):
                    x, f = metrics.empirical_cdf([getattr(r, metric) for r in res])
                    out.extend(dict(solver=solver, sweep_value=value, metric=metric,
                                    error=float(a), cdf=float(b)) for a, b in zip(x, f))
        return out


def _trial_rows(cfg: ExperimentConfig, point: int, value: float, trial: int) -> list[dict]:
    seed = trial_seed(cfg.seed, point, trial)
    if cfg.problem == "aoa-pose":
        samples = int(cfg.param("samples"))
        pairs = [(trial * samples + k, cf, ls) for k, cf, ls in aoa_pose_trial(cfg, value, seed)]
    elif cfg.problem == "slam-tightness":
        pairs = [(trial, *slam_tightness_trial(cfg, value, seed))]
    else:
        pairs = [(trial, *slam_facade_trial(cfg, value, seed))]
    rows = []
    for tid, cf, ls in pairs:
        for res in (cf, ls):
            rows.append(dict(experiment=cfg.problem, solver=res.solver, sweep_param=cfg.sweep_param,
                             sweep_value=value, point=point, trial=tid, result=res))
    return rows


def run_experiment(cfg: ExperimentConfig, progress=None) -> ExperimentResult:
    """Run every (sweep point, trial) job; rows are sorted so output is order independent."""
    cfg.validate()
    jobs = [(i, float(v), t) for i, v in enumerate(cfg.sweep_values) for t in range(cfg.trials)]
    rows: list[dict] = []

    def run(job):
        out = _trial_rows(cfg, *job)
        if progress is not None:
            progress(job)
        return out

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            for out in pool.map(run, jobs):
                rows.extend(out)
    else:
        for job in jobs:
            rows.extend(run(job))
    rows.sort(key=lambda r: (r["point"], r["trial"], r["solver"]))
    return ExperimentResult(cfg, rows)


def _fmt(x) -> str:
    """Shortest round-trip decimal, independent of locale."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        res = r["result"]
        w.writerow([r["experiment"], r["solver"], r["sweep_param"], _fmt(r["sweep_value"]),
                    _fmt(r["trial"]), _fmt(res.err_pos), _fmt(res.err_rot), _fmt(res.err_scat),
                    _fmt(res.converged)])
    return buf.getvalue()


def table_to_csv(table: list[dict]) -> str:
    if not table:
        return ""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    keys = list(table[0])
    w.writerow(keys)
    for r in table:
        w.writerow([v if isinstance(v, str) else _fmt(v) for v in (r[k] for k in keys)])
    return buf.getvalue()


def write_outputs(result: ExperimentResult, out) -> list[Path]:
    """Trial CSV at ``out`` plus ``*_rmse.csv`` and ``*_cdf.csv`` beside it."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    paths = [out, out.with_name(out.stem + "_rmse.csv"), out.with_name(out.stem + "_cdf.csv")]
    texts = [rows_to_csv(result.rows), table_to_csv(result.rmse_table()),
             table_to_csv(result.cdf_table())]
    for p, t in zip(paths, texts):
        p.write_text(t, encoding="utf-8")
    return paths


def scene_for(cfg: ExperimentConfig) -> dict:
    """Ground truth of the first trial at the first sweep point, as a plain document."""
    value = float(cfg.sweep_values[0])
    seed = trial_seed(cfg.seed, 0, 0)
    if cfg.problem == "aoa-pose":
        path = ue_path(int(cfg.param("samples")))
        return {
            "kind": "aoa_path",
            "bs_positions": DEFAULT_BS.tolist(),
            "tones_hz": default_tones(len(DEFAULT_BS)),
            "ue_poses": [{"rot": p.rot.tolist(), "trans": p.trans.tolist()} for p in path],
        }
    ss = np.random.SeedSequence(seed).spawn(3)
    if cfg.problem == "slam-tightness":
        n = int(value) if cfg.sweep_param == "n_scatter" else int(cfg.param("n_scatter"))
        scene = ellipsoid_scene(cfg.param("axes"), n, cfg.param("fov"), rng_seed=_draw(ss[0]))
    else:
        beta = int(value) if cfg.sweep_param == "beta" else int(cfg.param("beta"))
        scene = two_facade_scene(_draw(ss[0]), beta=beta, count=cfg.param("count"),
                                 los_present=cfg.los != "none",
                                 clock_bias=0.0 if cfg.synchronized else cfg.param("clock_bias"))
    return scene.to_dict()
