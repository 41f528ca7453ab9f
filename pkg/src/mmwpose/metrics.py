"""Pose/scatterer error metrics and aggregation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import EmptyInputError
from .lie import Pose, log_so3


@dataclass
class TrialResult:
    eps_r: np.ndarray
    eps_u: np.ndarray
    eps_p: np.ndarray  # (k, 3) per matched scatterer
    solver: str = "CF"
    converged: bool = True
    unmatched: list[int] = field(default_factory=list)

    @property
    def err_pos(self) -> float:
        return float(np.linalg.norm(self.eps_r)) if self.converged else np.inf

    @property
    def err_rot(self) -> float:
        return float(np.linalg.norm(self.eps_u)) if self.converged else np.inf

    @property
    def err_scat(self) -> float:
        """Per-scatterer RMS error of the matched scatterers."""
        if not self.converged:
            return np.inf
        if len(self.eps_p) == 0:
            return float("nan")
        return float(np.sqrt(np.mean(np.sum(self.eps_p**2, axis=1))))


def associate_scatterers(truth, estimate):
    """Minimum total squared-distance matching of estimates to truths.

    Returns ``(pairs, unmatched)`` where ``pairs`` is a list of
    ``(truth_index, estimate_index)`` and ``unmatched`` lists truth indices
    without a partner.
    """
    truth = np.asarray(truth, dtype=float).reshape(-1, 3)
    estimate = np.asarray(estimate, dtype=float).reshape(-1, 3)
    if len(estimate) == 0 or len(truth) == 0:
        return [], list(range(len(truth)))
    cost = np.sum((truth[:, None, :] - estimate[None, :, :]) ** 2, axis=2)
    rows, cols = linear_sum_assignment(cost)
    pairs = sorted(zip(rows.tolist(), cols.tolist()))
    matched = {r for r, _ in pairs}
    return pairs, [i for i in range(len(truth)) if i not in matched]


def error_vector(truth_pose: Pose, truth_scatterers, est_pose: Pose, est_scatterers,
                 solver: str = "CF") -> TrialResult:
    """``eps_r = r_true - r_est``, ``eps_u = log(R_est R_true^-1)``, matched scatterer errors."""
    eps_r = truth_pose.trans - est_pose.trans
    eps_u = log_so3(est_pose.rot @ truth_pose.rot.T)
    truth_scatterers = np.asarray(truth_scatterers, dtype=float).reshape(-1, 3)
    est_scatterers = np.asarray(est_scatterers, dtype=float).reshape(-1, 3)
    pairs, unmatched = associate_scatterers(truth_scatterers, est_scatterers)
    eps_p = np.array([truth_scatterers[i] - est_scatterers[j] for i, j in pairs]).reshape(-1, 3)
    return TrialResult(eps_r, eps_u, eps_p, solver, True, unmatched)


def diverged(solver: str = "CF") -> TrialResult:
    z = np.full(3, np.nan)
    return TrialResult(z, z, np.zeros((0, 3)), solver, False)


def rmse(results) -> tuple[float, float, float]:
    """RMSE of position, orientation and per-scatterer error over converged trials."""
    ok = [r for r in results if r.converged]
    if not ok:
        raise EmptyInputError("no converged trials")
    pos = np.sqrt(np.mean([r.err_pos**2 for r in ok]))
    rot = np.sqrt(np.mean([r.err_rot**2 for r in ok]))
    scat = np.sqrt(np.mean([r.err_scat**2 for r in ok]))
    return float(pos), float(rot), float(scat)


def empirical_cdf(errors, grid=None):
    """``(x, F(x))`` with divergent (+inf) samples counted in the denominator."""
    e = np.sort(np.asarray(errors, dtype=float))
    if len(e) == 0:
        raise EmptyInputError("no samples")
    if grid is None:
        x = e[np.isfinite(e)]
        f = np.arange(1, len(x) + 1) / len(e)
        return x, f
    grid = np.asarray(grid, dtype=float)
    return grid, np.searchsorted(e, grid, side="right") / len(e)


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])
