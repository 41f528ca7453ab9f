# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; see ``_kernels_py.py`` for the reference versions."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, log, pow, M_PI, fabs, INFINITY, NAN

cnp.import_array()

BACKEND = "cython"


cdef double _comb(int n, int k) nogil:
    cdef double out = 1.0
    cdef int i
    if k < 0 or k > n:
        return 0.0
    for i in range(1, k + 1):
        out = out * (n - k + i) / i
    return out


cdef double _fbeta(int beta, double cos_i) nogil:
    cdef double sin2 = 1.0 - cos_i * cos_i
    cdef double total = 0.0, ij, acc
    cdef int j, w
    if sin2 < 0.0:
        sin2 = 0.0
    for j in range(beta + 1):
        if j % 2 == 0:
            ij = 2.0 * M_PI / (j + 1)
        else:
            acc = 0.0
            for w in range((j - 1) // 2 + 1):
                acc += _comb(2 * w, w) * pow(sin2, w) / pow(4.0, w)
            ij = 2.0 * M_PI / (j + 1) * cos_i * acc
        total += _comb(beta, j) * ij
    return total / pow(2.0, beta)


# squared sine of the ray angle below which two rays count as parallel
cdef double PARALLEL_SIN2 = 1e-24
# relative floor on the Sampson denominator; it vanishes at the epipoles
cdef double SAMPSON_FLOOR = 1e-16

def fbeta(int beta, double cos_i):
    return _fbeta(beta, cos_i)


cdef double _density(double px, double py, double pz, const double* bs, const double* ue,
                     const double* n, int beta) nogil:
    cdef double ix = px - bs[0], iy = py - bs[1], iz = pz - bs[2]
    cdef double di2 = ix * ix + iy * iy + iz * iz
    cdef double di = sqrt(di2)
    cdef double sx = ue[0] - px, sy = ue[1] - py, sz = ue[2] - pz
    cdef double ds2 = sx * sx + sy * sy + sz * sz
    cdef double ds = sqrt(ds2)
    cdef double cos_i, cos_s, k, rx, ry, rz, cos_psi
    if di == 0.0 or ds == 0.0:
        return 0.0
    ix = ix / di
    iy = iy / di
    iz = iz / di
    sx = sx / ds
    sy = sy / ds
    sz = sz / ds
    cos_i = -(ix * n[0] + iy * n[1] + iz * n[2])
    cos_s = sx * n[0] + sy * n[1] + sz * n[2]
    if cos_i <= 0.0 or cos_s <= 0.0:
        return 0.0
    if beta == 0:
        return cos_i * cos_s / (di2 * ds2)
    k = 2.0 * cos_i
    rx = ix + k * n[0]
    ry = iy + k * n[1]
    rz = iz + k * n[2]
    cos_psi = rx * sx + ry * sy + rz * sz
    return cos_i * pow(1.0 + cos_psi, beta) / (_fbeta(beta, cos_i) * di2 * ds2)


def pattern_density(p, bs, ue, normal, int beta):
    cdef const double[::1] b = np.ascontiguousarray(bs, dtype=np.float64)
    cdef const double[::1] u = np.ascontiguousarray(ue, dtype=np.float64)
    cdef const double[::1] nn = np.ascontiguousarray(normal, dtype=np.float64)
    return _density(float(p[0]), float(p[1]), float(p[2]), &b[0], &u[0], &nn[0], beta)


def pattern_density_batch(points, bs, ue, normal, int beta):
    cdef const double[:, ::1] pts = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    cdef const double[::1] b = np.ascontiguousarray(bs, dtype=np.float64)
    cdef const double[::1] u = np.ascontiguousarray(ue, dtype=np.float64)
    cdef const double[::1] nn = np.ascontiguousarray(normal, dtype=np.float64)
    cdef Py_ssize_t i, m = pts.shape[0]
    out = np.empty(m)
    cdef double[::1] o = out
    with nogil:
        for i in range(m):
            o[i] = _density(pts[i, 0], pts[i, 1], pts[i, 2], &b[0], &u[0], &nn[0], beta)
    return out


def metropolis_chain(start, center, u_axis, w_axis, half_extents, normal, bs, ue,
                     int beta, double scale, steps, log_uniforms):
    cdef const double[:, ::1] st = np.ascontiguousarray(steps, dtype=np.float64)
    cdef const double[::1] lu = np.ascontiguousarray(log_uniforms, dtype=np.float64)
    cdef const double[::1] c = np.ascontiguousarray(center, dtype=np.float64)
    cdef const double[::1] ua = np.ascontiguousarray(u_axis, dtype=np.float64)
    cdef const double[::1] wa = np.ascontiguousarray(w_axis, dtype=np.float64)
    cdef const double[::1] b = np.ascontiguousarray(bs, dtype=np.float64)
    cdef const double[::1] u = np.ascontiguousarray(ue, dtype=np.float64)
    cdef const double[::1] nn = np.ascontiguousarray(normal, dtype=np.float64)
    cdef double ha = float(half_extents[0]), hb = float(half_extents[1])
    cdef double a = float(start[0]), bb = float(start[1])
    cdef double na, nb, dens, cur
    cdef Py_ssize_t i, m = st.shape[0]
    cdef long accepted = 0
    out = np.empty((m, 2))
    cdef double[:, ::1] o = out
    with nogil:
        cur = _density(c[0] + a * ua[0] + bb * wa[0], c[1] + a * ua[1] + bb * wa[1],
                       c[2] + a * ua[2] + bb * wa[2], &b[0], &u[0], &nn[0], beta)
        for i in range(m):
            na = a + scale * st[i, 0]
            nb = bb + scale * st[i, 1]
            if fabs(na) <= ha and fabs(nb) <= hb:
                dens = _density(c[0] + na * ua[0] + nb * wa[0], c[1] + na * ua[1] + nb * wa[1],
                                c[2] + na * ua[2] + nb * wa[2], &b[0], &u[0], &nn[0], beta)
                if dens > 0.0 and (cur <= 0.0 or lu[i] < log(dens) - log(cur)):
                    a = na
                    bb = nb
                    cur = dens
                    accepted += 1
            o[i, 0] = a
            o[i, 1] = bb
    return out, int(accepted)


def sampson_batch(e, nu, v):
    cdef const double[:, ::1] E = np.ascontiguousarray(e, dtype=np.float64)
    cdef const double[:, ::1] N = np.ascontiguousarray(np.asarray(nu, dtype=np.float64).reshape(-1, 2))
    cdef const double[:, ::1] V = np.ascontiguousarray(np.asarray(v, dtype=np.float64).reshape(-1, 2))
    cdef Py_ssize_t i, m = N.shape[0]
    cdef double e0, e1, e2, t0, t1, num, den, floor, enorm2 = 0.0
    cdef int r, c
    out = np.empty(m)
    cdef double[::1] o = out
    for r in range(3):
        for c in range(3):
            enorm2 += E[r, c] * E[r, c]
    with nogil:
        for i in range(m):
            # E @ v_bar
            e0 = E[0, 0] * V[i, 0] + E[0, 1] * V[i, 1] + E[0, 2]
            e1 = E[1, 0] * V[i, 0] + E[1, 1] * V[i, 1] + E[1, 2]
            e2 = E[2, 0] * V[i, 0] + E[2, 1] * V[i, 1] + E[2, 2]
            # first two entries of E^T @ nu_bar
            t0 = E[0, 0] * N[i, 0] + E[1, 0] * N[i, 1] + E[2, 0]
            t1 = E[0, 1] * N[i, 0] + E[1, 1] * N[i, 1] + E[2, 1]
            num = N[i, 0] * e0 + N[i, 1] * e1 + e2
            num = num * num
            den = e0 * e0 + e1 * e1 + t0 * t0 + t1 * t1
            floor = SAMPSON_FLOOR * enorm2 * (
                N[i, 0] * N[i, 0] + N[i, 1] * N[i, 1] + V[i, 0] * V[i, 0] + V[i, 1] * V[i, 1] + 2.0
            )
            if den < floor:
                den = floor
            if den > 0.0:
                o[i] = num / den
            elif num > 0.0:
                o[i] = INFINITY
            else:
                o[i] = 0.0
    return out


def two_view_depths(rot, t, nu, v):
    cdef const double[:, ::1] R = np.ascontiguousarray(rot, dtype=np.float64)
    cdef const double[::1] T = np.ascontiguousarray(t, dtype=np.float64)
    cdef const double[:, ::1] N = np.ascontiguousarray(np.asarray(nu, dtype=np.float64).reshape(-1, 2))
    cdef const double[:, ::1] V = np.ascontiguousarray(np.asarray(v, dtype=np.float64).reshape(-1, 2))
    cdef Py_ssize_t i, m = N.shape[0]
    cdef double r0, r1, r2, a11, a12, a22, b1, b2, det, c0, c1, c2
    out = np.empty((m, 2))
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(m):
            r0 = R[0, 0] * V[i, 0] + R[0, 1] * V[i, 1] + R[0, 2]
            r1 = R[1, 0] * V[i, 0] + R[1, 1] * V[i, 1] + R[1, 2]
            r2 = R[2, 0] * V[i, 0] + R[2, 1] * V[i, 1] + R[2, 2]
            a11 = N[i, 0] * N[i, 0] + N[i, 1] * N[i, 1] + 1.0
            a12 = -(N[i, 0] * r0 + N[i, 1] * r1 + r2)
            a22 = r0 * r0 + r1 * r1 + r2 * r2
            b1 = N[i, 0] * T[0] + N[i, 1] * T[1] + T[2]
            b2 = -(r0 * T[0] + r1 * T[1] + r2 * T[2])
            # |nu_bar x R v_bar|^2 equals a11 a22 - a12^2 without the cancellation
            c0 = N[i, 1] * r2 - r1
            c1 = r0 - N[i, 0] * r2
            c2 = N[i, 0] * r1 - N[i, 1] * r0
            det = c0 * c0 + c1 * c1 + c2 * c2
            if det > PARALLEL_SIN2 * a11 * a22:
                o[i, 0] = (a22 * b1 - a12 * b2) / det
                o[i, 1] = (a11 * b2 - a12 * b1) / det
            else:
                o[i, 0] = NAN
                o[i, 1] = NAN
    return out
