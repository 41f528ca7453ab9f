"""Reference (pure Python / numpy) implementations of the hot kernels.

The compiled twin in ``_kernels.pyx`` must agree with these to rounding.
"""

from __future__ import annotations

import math

import numpy as np

BACKEND = "python"
# squared sine of the ray angle below which two rays count as parallel
PARALLEL_SIN2 = 1e-24
# relative floor on the Sampson denominator; it vanishes at the epipoles
SAMPSON_FLOOR = 1e-16


def fbeta(beta: int, cos_i: float) -> float:
    """Normalisation of the directive lobe ``((1 + cos psi) / 2) ** beta``."""
    sin2 = max(0.0, 1.0 - cos_i * cos_i)
    total = 0.0
    for j in range(beta + 1):
        if j % 2 == 0:
            ij = 2.0 * math.pi / (j + 1)
        else:
            acc = 0.0
            for w in range((j - 1) // 2 + 1):
                acc += math.comb(2 * w, w) * sin2**w / 4.0**w
            ij = 2.0 * math.pi / (j + 1) * cos_i * acc
        total += math.comb(beta, j) * ij
    return total / 2.0**beta


def pattern_density(p, bs, ue, normal, beta: int) -> float:
    px, py, pz = float(p[0]), float(p[1]), float(p[2])
    nx, ny, nz = float(normal[0]), float(normal[1]), float(normal[2])
    ix, iy, iz = px - bs[0], py - bs[1], pz - bs[2]
    di2 = ix * ix + iy * iy + iz * iz
    di = math.sqrt(di2)
    sx, sy, sz = ue[0] - px, ue[1] - py, ue[2] - pz
    ds2 = sx * sx + sy * sy + sz * sz
    ds = math.sqrt(ds2)
    if di == 0.0 or ds == 0.0:
        return 0.0
    ix, iy, iz = ix / di, iy / di, iz / di
    sx, sy, sz = sx / ds, sy / ds, sz / ds
    cos_i = -(ix * nx + iy * ny + iz * nz)
    cos_s = sx * nx + sy * ny + sz * nz
    if cos_i <= 0.0 or cos_s <= 0.0:
        return 0.0
    if beta == 0:
        return cos_i * cos_s / (di2 * ds2)
    # specular reflection of the incoming ray
    k = 2.0 * cos_i
    rx, ry, rz = ix + k * nx, iy + k * ny, iz + k * nz
    cos_psi = rx * sx + ry * sy + rz * sz
    return cos_i * (1.0 + cos_psi) ** beta / (fbeta(beta, cos_i) * di2 * ds2)


def pattern_density_batch(points, bs, ue, normal, beta: int) -> np.ndarray:
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    bs = np.asarray(bs, dtype=float)
    ue = np.asarray(ue, dtype=float)
    normal = np.asarray(normal, dtype=float)
    return np.array([pattern_density(p, bs, ue, normal, beta) for p in points])


def metropolis_chain(start, center, u_axis, w_axis, half_extents, normal, bs, ue,
                     beta: int, scale: float, steps, log_uniforms):
    """Random-walk Metropolis on facade-local coordinates.

    ``steps`` are pre-drawn standard normal 2-vectors and ``log_uniforms`` the
    matching log-uniform acceptance draws, so the walk is a pure function of
    its inputs.  Returns ``(chain, n_accepted)`` with one row per step.
    """
    steps = np.asarray(steps, dtype=float)
    log_uniforms = np.asarray(log_uniforms, dtype=float)
    center = np.asarray(center, dtype=float)
    u_axis = np.asarray(u_axis, dtype=float)
    w_axis = np.asarray(w_axis, dtype=float)
    ha, hb = float(half_extents[0]), float(half_extents[1])
    a, b = float(start[0]), float(start[1])
    cur = pattern_density(center + a * u_axis + b * w_axis, bs, ue, normal, beta)
    out = np.empty((steps.shape[0], 2))
    accepted = 0
    for n in range(steps.shape[0]):
        na = a + scale * steps[n, 0]
        nb = b + scale * steps[n, 1]
        if abs(na) <= ha and abs(nb) <= hb:
            dens = pattern_density(center + na * u_axis + nb * w_axis, bs, ue, normal, beta)
            if dens > 0.0 and (cur <= 0.0 or log_uniforms[n] < math.log(dens) - math.log(cur)):
                a, b, cur = na, nb, dens
                accepted += 1
        out[n, 0] = a
        out[n, 1] = b
    return out, accepted


def sampson_batch(e, nu, v) -> np.ndarray:
    """First-order geometric error of each correspondence under ``e``.

    The denominator is floored relative to ``|E|^2 (|nu_bar|^2 + |v_bar|^2)``
    so the epipole pair, where the gradient vanishes, scores near zero.
    """
    e = np.asarray(e, dtype=float)
    nu = np.asarray(nu, dtype=float).reshape(-1, 2)
    v = np.asarray(v, dtype=float).reshape(-1, 2)
    nb = np.column_stack([nu, np.ones(len(nu))])
    vb = np.column_stack([v, np.ones(len(v))])
    ev = vb @ e.T
    etn = nb @ e
    num = np.einsum("ij,ij->i", nb, ev) ** 2
    den = ev[:, 0] ** 2 + ev[:, 1] ** 2 + etn[:, 0] ** 2 + etn[:, 1] ** 2
    floor = SAMPSON_FLOOR * np.sum(e * e) * (np.sum(nb * nb, axis=1) + np.sum(vb * vb, axis=1))
    den = np.maximum(den, floor)
    out = np.zeros(len(nu))
    ok = den > 0.0
    out[ok] = num[ok] / den[ok]
    out[~ok & (num > 0.0)] = np.inf
    return out


def two_view_depths(rot, t, nu, v) -> np.ndarray:
    """Least-squares depths ``(l1, l2)`` with ``l1 nu_bar = l2 R v_bar + t``.

    Rows whose rays are parallel to within ``sqrt(PARALLEL_SIN2)`` radians are NaN.
    """
    rot = np.asarray(rot, dtype=float)
    t = np.asarray(t, dtype=float)
    nu = np.asarray(nu, dtype=float).reshape(-1, 2)
    v = np.asarray(v, dtype=float).reshape(-1, 2)
    nb = np.column_stack([nu, np.ones(len(nu))])
    rv = np.column_stack([v, np.ones(len(v))]) @ rot.T
    a11 = np.sum(nb * nb, axis=1)
    a12 = -np.sum(nb * rv, axis=1)
    a22 = np.sum(rv * rv, axis=1)
    b1 = nb @ t
    b2 = -(rv @ t)
    # |nu_bar x R v_bar|^2 equals a11 a22 - a12^2 without the cancellation
    det = np.sum(np.cross(nb, rv) ** 2, axis=1)
    out = np.full((len(nu), 2), np.nan)
    ok = det > PARALLEL_SIN2 * a11 * a22
    out[ok, 0] = (a22[ok] * b1[ok] - a12[ok] * b2[ok]) / det[ok]
    out[ok, 1] = (a11[ok] * b2[ok] - a12[ok] * b1[ok]) / det[ok]
    return out
