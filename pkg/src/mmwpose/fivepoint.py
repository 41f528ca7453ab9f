"""Essential matrix from five (or more) correspondences.

Correspondences are pairs ``(nu, v)`` with ``nu_bar^T E v_bar = 0``; ``nu`` is
the BS-side virtual point and ``v`` the UE-side one.  The polynomial system
formed by the determinant and trace constraints is solved with an action
matrix over the ten-monomial quotient basis.
"""

from __future__ import annotations

import itertools

import numpy as np

from .errors import DegeneracyError
from .projection import essential_constraints

IMAG_TOL = 1e-8

# Monomials in (x, y, z) up to degree three.  The first ten are the cubic
# monomials eliminated by the constraint matrix, the last ten form the basis.
_MONOMIALS = [
    (3, 0, 0), (2, 1, 0), (1, 2, 0), (0, 3, 0), (2, 0, 1),
    (1, 1, 1), (0, 2, 1), (1, 0, 2), (0, 1, 2), (0, 0, 3),
    (2, 0, 0), (1, 1, 0), (1, 0, 1), (0, 2, 0), (0, 1, 1),
    (0, 0, 2), (1, 0, 0), (0, 1, 0), (0, 0, 1), (0, 0, 0),
]
_INDEX = {m: i for i, m in enumerate(_MONOMIALS)}
_LINEAR = [(1, 0, 0), (0, 1, 0), (0, 0, 1), (0, 0, 0)]


def _scatter(left, right) -> np.ndarray:
    """Matrix mapping outer-product coefficients to monomial coefficients."""
    out = np.zeros((len(left) * len(right), 20))
    for (i, a), (j, b) in itertools.product(enumerate(left), enumerate(right)):
        m = tuple(p + q for p, q in zip(a, b))
        if m in _INDEX:  # degree-4 products never occur for degree <= 2 inputs
            out[i * len(right) + j, _INDEX[m]] = 1.0
    return out


_P2 = _scatter(_LINEAR, _LINEAR)  # linear x linear
_P3 = _scatter(_MONOMIALS, _LINEAR)  # (degree <= 2) x linear


def _mul_ll(a, b):
    outer = np.einsum("...i,...j->...ij", a, b)
    return outer.reshape(outer.shape[:-2] + (16,)) @ _P2


def _mul_ql(q, a):
    outer = np.einsum("...i,...j->...ij", q, a)
    return outer.reshape(outer.shape[:-2] + (80,)) @ _P3


def as_homogeneous(pts) -> np.ndarray:
    """Accept ``(n, 2)`` virtual points or ``(n, 3)`` homogeneous vectors."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if pts.shape[1] == 2:
        return np.column_stack([pts, np.ones(len(pts))])
    if pts.shape[1] == 3:
        return pts
    raise ValueError(f"expected (n, 2) or (n, 3) points, got {pts.shape}")


def design_matrix(nu, v) -> np.ndarray:
    """Rows ``kron(nu_bar, v_bar)`` so that ``row @ E.ravel() = nu_bar^T E v_bar``."""
    nb = as_homogeneous(nu)
    vb = as_homogeneous(v)
    if len(nb) != len(vb):
        raise ValueError("nu and v must have the same length")
    return np.einsum("ni,nj->nij", nb, vb).reshape(len(nb), 9)


def constraint_matrix(basis: np.ndarray) -> np.ndarray:
    """10 x 20 coefficients of the cubic constraints for ``E = xX + yY + zZ + W``.

    ``basis`` holds the four 3x3 matrices ``[X, Y, Z, W]`` stacked on axis 0.
    """
    elin = np.moveaxis(np.asarray(basis, dtype=float), 0, -1)  # (3, 3, 4)
    # E E^T as quadratic polynomials
    eet = _mul_ll(elin[:, None, :, :], elin[None, :, :, :]).sum(axis=2)  # (3, 3, 20)
    trace = eet[0, 0] + eet[1, 1] + eet[2, 2]
    eete = np.zeros((3, 3, 20))
    for i, l, k in itertools.product(range(3), range(3), range(3)):
        eete[i, l] += _mul_ql(eet[i, k], elin[k, l])
    rows = []
    for i, l in itertools.product(range(3), range(3)):
        rows.append(2.0 * eete[i, l] - _mul_ql(trace, elin[i, l]))
    e = elin
    det = (
        _mul_ql(_mul_ll(e[1, 1], e[2, 2]) - _mul_ll(e[1, 2], e[2, 1]), e[0, 0])
        - _mul_ql(_mul_ll(e[1, 0], e[2, 2]) - _mul_ll(e[1, 2], e[2, 0]), e[0, 1])
        + _mul_ql(_mul_ll(e[1, 0], e[2, 1]) - _mul_ll(e[1, 1], e[2, 0]), e[0, 2])
    )
    return np.vstack([det] + rows)


def _monomial_values(x, y, z) -> np.ndarray:
    return np.array([x**a * y**b * z**c for a, b, c in _MONOMIALS])


def _monomial_jacobian(x, y, z) -> np.ndarray:
    out = np.zeros((20, 3))
    for i, (a, b, c) in enumerate(_MONOMIALS):
        if a:
            out[i, 0] = a * x ** (a - 1) * y**b * z**c
        if b:
            out[i, 1] = b * x**a * y ** (b - 1) * z**c
        if c:
            out[i, 2] = c * x**a * y**b * z ** (c - 1)
    return out


def _polish(m: np.ndarray, xyz: np.ndarray, iters: int = 4) -> np.ndarray:
    """A few Gauss-Newton steps on the 10 cubic equations."""
    xyz = xyz.copy()
    for _ in range(iters):
        r = m @ _monomial_values(*xyz)
        j = m @ _monomial_jacobian(*xyz)
        try:
            step = np.linalg.lstsq(j, -r, rcond=None)[0]
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(step)):
            break
        new = xyz + step
        if np.linalg.norm(m @ _monomial_values(*new)) >= np.linalg.norm(r):
            break
        xyz = new
    return xyz


def _action_matrix_roots(m: np.ndarray) -> list[np.ndarray]:
    try:
        g = np.linalg.solve(m[:, :10], m[:, 10:])
    except np.linalg.LinAlgError as exc:
        raise DegeneracyError("constraint elimination is singular") from exc
    if not np.all(np.isfinite(g)):
        raise DegeneracyError("constraint elimination is singular")
    # basis order: x^2 xy xz y^2 yz z^2 x y z 1
    a = np.zeros((10, 10))
    a[0] = -g[0]  # x * x^2 = x^3
    a[1] = -g[1]  # x * xy  = x^2 y
    a[2] = -g[4]  # x * xz  = x^2 z
    a[3] = -g[2]  # x * y^2 = x y^2
    a[4] = -g[5]  # x * yz  = x y z
    a[5] = -g[7]  # x * z^2 = x z^2
    a[6, 0] = 1.0  # x * x
    a[7, 1] = 1.0  # x * y
    a[8, 2] = 1.0  # x * z
    a[9, 6] = 1.0  # x * 1
    vals, vecs = np.linalg.eig(a)
    roots = []
    for k in range(10):
        if abs(vals[k].imag) > IMAG_TOL * max(1.0, abs(vals[k].real)):
            continue
        vec = vecs[:, k]
        if abs(vec[9]) < 1e-14 * np.abs(vec).max():
            continue
        vec = vec / vec[9]
        roots.append(np.real(vec[6:9]))
    return roots


def _candidates_from_basis(basis: np.ndarray, polish: bool = True) -> list[np.ndarray]:
    m = constraint_matrix(basis)
    out = []
    for xyz in _action_matrix_roots(m):
        if polish:
            xyz = _polish(m, xyz)
        e = xyz[0] * basis[0] + xyz[1] * basis[1] + xyz[2] * basis[2] + basis[3]
        n = np.linalg.norm(e)
        if not np.isfinite(n) or n == 0.0:
            continue
        out.append(e / n)
    return _dedupe(out)


def _dedupe(es: list[np.ndarray], tol: float = 1e-9) -> list[np.ndarray]:
    out: list[np.ndarray] = []
    for e in es:
        if all(min(np.abs(e - f).max(), np.abs(e + f).max()) > tol for f in out):
            out.append(e)
    return out


def _candidates_with_epipoles(basis: np.ndarray, tol: float = 1e-9) -> list[np.ndarray] | None:
    """Candidates in a three-dimensional space whose members share both epipoles.

    This is the solution space left by exact epipole pairs plus one more
    correspondence.  With ``U`` and ``V`` spanning the complements of the
    shared left and right null vectors, ``E`` is essential exactly when the
    2x2 block ``U^T E V`` is a scaled rotation or a scaled reflection, which
    is linear in the coefficients.  The generic action matrix is unreliable
    here because both solutions are tangent to the essential variety.
    Returns None when the members do not share epipoles.
    """
    ur, sr, _ = np.linalg.svd(np.hstack(list(basis)))
    _, sl, vl = np.linalg.svd(np.vstack(list(basis)))
    if sr[2] > tol * sr[0] or sl[2] > tol * sl[0]:
        return None
    blocks = np.array([ur[:, :2].T @ e @ vl[:2].T for e in basis])  # (3, 2, 2)
    out = []
    for sign in (1.0, -1.0):
        rows = np.array([
            blocks[:, 0, 0] - sign * blocks[:, 1, 1],
            blocks[:, 0, 1] + sign * blocks[:, 1, 0],
        ])
        coef = np.linalg.svd(rows)[2][-1]
        e = np.tensordot(coef, basis, axes=1)
        out.append(e / np.linalg.norm(e))
    return _dedupe(out)


def five_point(nu, v, polish: bool = True) -> list[np.ndarray]:
    """Unit-norm essential matrix candidates (at most 10).

    With exactly five correspondences the candidates satisfy all of them
    exactly.  With more, the four weakest right singular vectors of the
    design matrix span the search space, which gives the usual least-squares
    generalisation; the caller selects among the candidates.  Six exact
    constraints that pin both epipoles are handled separately.  ``polish``
    runs a few Newton steps on each root of the action matrix.
    """
    a = design_matrix(nu, v)
    if len(a) < 5:
        raise DegeneracyError(f"need at least 5 correspondences, got {len(a)}")
    scale = np.abs(a).max(axis=1, keepdims=True)
    scale[scale == 0.0] = 1.0
    a = a / scale
    _, s, vt = np.linalg.svd(a, full_matrices=True)
    if s[4] < 1e-10 * s[0]:
        raise DegeneracyError("design matrix has rank < 5")
    if len(s) > 6 and s[5] >= 1e-10 * s[0] and s[6] < 1e-10 * s[0]:
        found = _candidates_with_epipoles(vt[[-3, -2, -1]].reshape(3, 3, 3))
        if found is not None:
            return found
    # x, y, z multiply the 4th..2nd weakest directions; the weakest is the constant term
    basis = vt[[-4, -3, -2, -1]].reshape(4, 3, 3)
    return _candidates_from_basis(basis, polish)


def best_by_constraints(candidates: list[np.ndarray]) -> np.ndarray:
    """Candidate whose determinant and trace residuals are smallest."""
    if not candidates:
        raise DegeneracyError("no real essential matrix candidate")
    return min(candidates, key=lambda e: sum(essential_constraints(e)))
