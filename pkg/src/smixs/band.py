"""Banded natural cubic spline machinery.

Everything here works on the value/second-derivative representation of a
natural cubic spline with a knot at every measurement time.  ``Q`` is the
``p x (p-2)`` matrix of scaled second differences and ``R`` the
``(p-2) x (p-2)`` tridiagonal matrix such that ``Q.T @ mu == R @ gamma``
for the spline with values ``mu`` and interior second derivatives
``gamma``.  The roughness matrix is ``G = Q R^{-1} Q.T``; it is never formed
densely except by :func:`dense_roughness_matrix`, which exists for the
reference (non-Reinsch) solver and for tests.

Band storage is diagonal-major: a symmetric band matrix of order ``m`` is a
``(3, m)`` array whose row ``d`` holds the ``d``-th superdiagonal, left
aligned (entries past ``m - d`` are unused).
"""
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import (
    DegenerateWeight,
    DimensionMismatch,
    NonIncreasingKnots,
    NotPositiveDefinite,
    TooFewKnots,
)

#: Relative weight floor; the absolute floor is ``WEIGHT_FLOOR_REL * n``.
WEIGHT_FLOOR_REL = 1e-10


def weight_floor(n):
    return WEIGHT_FLOOR_REL * n


@dataclass(frozen=True)
class KnotGeometry:
    t: np.ndarray
    h: np.ndarray

    @property
    def p(self):
        return self.t.shape[0]


@dataclass(frozen=True)
class BandPair:
    """``Q`` and ``R`` in band form.

    ``q[0, c]``, ``q[1, c]``, ``q[2, c]`` are the nonzeros of column ``c`` of
    ``Q`` (rows ``c``, ``c+1``, ``c+2``); ``r`` is ``R`` in band storage.
    """

    geometry: KnotGeometry
    q: np.ndarray
    r: np.ndarray

    @property
    def p(self):
        return self.geometry.p

    @property
    def m(self):
        return self.p - 2

    def dense_q(self):
        m = self.m
        out = np.zeros((self.p, m))
        cols = np.arange(m)
        out[cols, cols] = self.q[0]
        out[cols + 1, cols] = self.q[1]
        out[cols + 2, cols] = self.q[2]
        return out

    def dense_r(self):
        return band_to_dense(self.r)


@dataclass(frozen=True)
class BandCholesky:
    """``M = L D L.T`` with ``L`` unit lower triangular of bandwidth two.

    ``l[0, i] = L[i+1, i]`` and ``l[1, i] = L[i+2, i]``.
    """

    l: np.ndarray
    d: np.ndarray

    def dense_l(self):
        m = self.d.shape[0]
        out = np.eye(m)
        i = np.arange(m - 1)
        out[i + 1, i] = self.l[0, : m - 1]
        i = np.arange(max(m - 2, 0))
        out[i + 2, i] = self.l[1, : max(m - 2, 0)]
        return out

    def reconstruct(self):
        lo = self.dense_l()
        return lo @ np.diag(self.d) @ lo.T


@dataclass(frozen=True)
class SplineSolve:
    mu: np.ndarray
    gamma: np.ndarray
    weight: float
    alpha: float
    chol: BandCholesky = None


def band_to_dense(band):
    m = band.shape[1]
    out = np.diag(band[0].astype(float))
    for d in range(1, band.shape[0]):
        if m > d:
            idx = np.arange(m - d)
            out[idx, idx + d] = band[d, : m - d]
            out[idx + d, idx] = band[d, : m - d]
    return out


def knot_geometry(t):
    t = np.ascontiguousarray(t, dtype=float)
    if t.ndim != 1 or t.shape[0] < 3:
        raise TooFewKnots(f"need at least 3 knots, got {t.size}")
    h = np.diff(t)
    if not np.all(h > 0):
        j = int(np.argmin(h > 0))
        raise NonIncreasingKnots(
            f"knots must be strictly increasing (t[{j}]={t[j]!r}, t[{j + 1}]={t[j + 1]!r})"
        )
    return KnotGeometry(t=t, h=h)


def build_band_pair(g):
    h = g.h
    m = g.p - 2
    q = np.zeros((3, m))
    q[0] = 1.0 / h[:-1]
    q[2] = 1.0 / h[1:]
    q[1] = -q[0] - q[2]
    r = np.zeros((3, m))
    r[0] = (h[:-1] + h[1:]) / 3.0
    r[1, : m - 1] = h[1:-1] / 6.0
    return BandPair(geometry=g, q=q, r=r)


def band_pair_from_times(t):
    return build_band_pair(knot_geometry(t))


# ---------------------------------------------------------------------------
# compiled kernels
# ---------------------------------------------------------------------------


@njit(cache=True)
def _qt_dot(q, v):
    m = q.shape[1]
    out = np.empty(m)
    for c in range(m):
        out[c] = q[0, c] * v[c] + q[1, c] * v[c + 1] + q[2, c] * v[c + 2]
    return out


@njit(cache=True)
def _q_dot(q, g):
    m = q.shape[1]
    out = np.zeros(m + 2)
    for c in range(m):
        out[c] += q[0, c] * g[c]
        out[c + 1] += q[1, c] * g[c]
        out[c + 2] += q[2, c] * g[c]
    return out


@njit(cache=True)
def _system_band(q, r, scale):
    """Band of ``R + scale * Q.T Q``."""
    m = q.shape[1]
    out = np.zeros((3, m))
    for a in range(m):
        out[0, a] = r[0, a] + scale * (q[0, a] ** 2 + q[1, a] ** 2 + q[2, a] ** 2)
        if a + 1 < m:
            out[1, a] = r[1, a] + scale * (q[1, a] * q[0, a + 1] + q[2, a] * q[1, a + 1])
        if a + 2 < m:
            out[2, a] = scale * q[2, a] * q[0, a + 2]
    return out


@njit(cache=True)
def _ldl(band, l, d):
    """Factor in place; returns the index of the first bad pivot or -1."""
    m = band.shape[1]
    for i in range(m):
        di = band[0, i]
        if i >= 1:
            di -= l[0, i - 1] * l[0, i - 1] * d[i - 1]
        if i >= 2:
            di -= l[1, i - 2] * l[1, i - 2] * d[i - 2]
        if not di > 0.0:
            return i
        d[i] = di
        if i + 1 < m:
            v = band[1, i]
            if i >= 1:
                v -= l[1, i - 1] * d[i - 1] * l[0, i - 1]
            l[0, i] = v / di
        if i + 2 < m:
            l[1, i] = band[2, i] / di
    return -1


@njit(cache=True)
def _ldl_solve(l, d, b):
    m = d.shape[0]
    x = b.copy()
    for i in range(m):
        if i >= 1:
            x[i] -= l[0, i - 1] * x[i - 1]
        if i >= 2:
            x[i] -= l[1, i - 2] * x[i - 2]
    for i in range(m):
        x[i] /= d[i]
    for i in range(m - 1, -1, -1):
        if i + 1 < m:
            x[i] -= l[0, i] * x[i + 1]
        if i + 2 < m:
            x[i] -= l[1, i] * x[i + 2]
    return x


@njit(cache=True)
def _band_inverse(l, d):
    """Central band (bandwidth two) of ``(L D L.T)^{-1}``, Hutchinson-de Hoog recursion."""
    m = d.shape[0]
    s = np.zeros((3, m))
    for i in range(m - 1, -1, -1):
        l1 = l[0, i] if i + 1 < m else 0.0
        l2 = l[1, i] if i + 2 < m else 0.0
        s11 = s[0, i + 1] if i + 1 < m else 0.0
        s12 = s[1, i + 1] if i + 2 < m else 0.0
        s22 = s[0, i + 2] if i + 2 < m else 0.0
        if i + 1 < m:
            s[1, i] = -l1 * s11 - l2 * s12
        if i + 2 < m:
            s[2, i] = -l1 * s12 - l2 * s22
        s[0, i] = 1.0 / d[i] - l1 * s[1, i] - l2 * s[2, i]
    return s


@njit(cache=True)
def _sigma(s, a, b):
    if a > b:
        a, b = b, a
    return s[b - a, a]


@njit(cache=True)
def _smoother_diag(q, s, w, alpha):
    m = q.shape[1]
    p = m + 2
    out = np.empty(p)
    coef = alpha / (w * w)
    for j in range(p):
        # row j of Q touches columns j-2, j-1, j
        acc = 0.0
        for ca in range(max(j - 2, 0), min(j, m - 1) + 1):
            qa = q[j - ca, ca]
            for cb in range(max(j - 2, 0), min(j, m - 1) + 1):
                acc += qa * _sigma(s, ca, cb) * q[j - cb, cb]
        out[j] = 1.0 / w - coef * acc
    return out


# -- double-double arithmetic ------------------------------------------------
# Values are (hi, lo) pairs carrying about 32 significant digits.  Used where
# the conditioning of R + alpha Q.T Q / w (growing like p^4) would otherwise
# cost most of a double's precision.


@njit(cache=True, inline="always")
def _two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


@njit(cache=True, inline="always")
def _quick_two_sum(a, b):
    s = a + b
    return s, b - (s - a)


@njit(cache=True, inline="always")
def _split(a):
    c = 134217729.0 * a
    hi = c - (c - a)
    return hi, a - hi


@njit(cache=True, inline="always")
def _two_prod(a, b):
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


@njit(cache=True, inline="always")
def _dd_add(ah, al, bh, bl):
    s, e = _two_sum(ah, bh)
    t, f = _two_sum(al, bl)
    e += t
    s, e = _quick_two_sum(s, e)
    e += f
    return _quick_two_sum(s, e)


@njit(cache=True, inline="always")
def _dd_mul(ah, al, bh, bl):
    p, e = _two_prod(ah, bh)
    e += ah * bl + al * bh
    return _quick_two_sum(p, e)


@njit(cache=True, inline="always")
def _dd_div(ah, al, bh, bl):
    q1 = ah / bh
    ph, pl = _dd_mul(bh, bl, q1, 0.0)
    rh, rl = _dd_add(ah, al, -ph, -pl)
    q2 = rh / bh
    ph, pl = _dd_mul(bh, bl, q2, 0.0)
    rh, rl = _dd_add(rh, rl, -ph, -pl)
    q3 = rh / bh
    h, l = _quick_two_sum(q1, q2)
    return _dd_add(h, l, q3, 0.0)


@njit(cache=True)
def _smoother_diag_dd(q, r, w, alpha):
    """Smoother diagonal with every step in double-double; ``(ok, diag)``."""
    m = q.shape[1]
    p = m + 2
    sch, scl = _dd_div(alpha, 0.0, w, 0.0)
    # band of R + sc Q.T Q
    bh = np.zeros((3, m))
    bl = np.zeros((3, m))
    for a in range(m):
        th, tl = _two_prod(q[0, a], q[0, a])
        uh, ul = _two_prod(q[1, a], q[1, a])
        th, tl = _dd_add(th, tl, uh, ul)
        uh, ul = _two_prod(q[2, a], q[2, a])
        th, tl = _dd_add(th, tl, uh, ul)
        th, tl = _dd_mul(th, tl, sch, scl)
        bh[0, a], bl[0, a] = _dd_add(th, tl, r[0, a], 0.0)
        if a + 1 < m:
            th, tl = _two_prod(q[1, a], q[0, a + 1])
            uh, ul = _two_prod(q[2, a], q[1, a + 1])
            th, tl = _dd_add(th, tl, uh, ul)
            th, tl = _dd_mul(th, tl, sch, scl)
            bh[1, a], bl[1, a] = _dd_add(th, tl, r[1, a], 0.0)
        if a + 2 < m:
            th, tl = _two_prod(q[2, a], q[0, a + 2])
            bh[2, a], bl[2, a] = _dd_mul(th, tl, sch, scl)
    # LDL^T
    dh = np.zeros(m)
    dl = np.zeros(m)
    lh = np.zeros((2, m))
    ll = np.zeros((2, m))
    out = np.empty(p)
    for i in range(m):
        xh, xl = bh[0, i], bl[0, i]
        if i >= 1:
            th, tl = _dd_mul(lh[0, i - 1], ll[0, i - 1], lh[0, i - 1], ll[0, i - 1])
            th, tl = _dd_mul(th, tl, dh[i - 1], dl[i - 1])
            xh, xl = _dd_add(xh, xl, -th, -tl)
        if i >= 2:
            th, tl = _dd_mul(lh[1, i - 2], ll[1, i - 2], lh[1, i - 2], ll[1, i - 2])
            th, tl = _dd_mul(th, tl, dh[i - 2], dl[i - 2])
            xh, xl = _dd_add(xh, xl, -th, -tl)
        if not xh > 0.0:
            return False, out
        dh[i], dl[i] = xh, xl
        if i + 1 < m:
            vh, vl = bh[1, i], bl[1, i]
            if i >= 1:
                th, tl = _dd_mul(lh[1, i - 1], ll[1, i - 1], dh[i - 1], dl[i - 1])
                th, tl = _dd_mul(th, tl, lh[0, i - 1], ll[0, i - 1])
                vh, vl = _dd_add(vh, vl, -th, -tl)
            lh[0, i], ll[0, i] = _dd_div(vh, vl, xh, xl)
        if i + 2 < m:
            lh[1, i], ll[1, i] = _dd_div(bh[2, i], bl[2, i], xh, xl)
    # central band of the inverse
    sh = np.zeros((3, m + 2))
    sl = np.zeros((3, m + 2))
    for i in range(m - 1, -1, -1):
        l1h, l1l = (lh[0, i], ll[0, i]) if i + 1 < m else (0.0, 0.0)
        l2h, l2l = (lh[1, i], ll[1, i]) if i + 2 < m else (0.0, 0.0)
        # entries past the end are zero-padded
        ah, al = _dd_mul(l1h, l1l, sh[0, i + 1], sl[0, i + 1])
        bbh, bbl = _dd_mul(l2h, l2l, sh[1, i + 1], sl[1, i + 1])
        s1h, s1l = _dd_add(-ah, -al, -bbh, -bbl)
        ah, al = _dd_mul(l1h, l1l, sh[1, i + 1], sl[1, i + 1])
        bbh, bbl = _dd_mul(l2h, l2l, sh[0, i + 2], sl[0, i + 2])
        s2h, s2l = _dd_add(-ah, -al, -bbh, -bbl)
        if i + 1 < m:
            sh[1, i], sl[1, i] = s1h, s1l
        if i + 2 < m:
            sh[2, i], sl[2, i] = s2h, s2l
        xh, xl = _dd_div(1.0, 0.0, dh[i], dl[i])
        ah, al = _dd_mul(l1h, l1l, sh[1, i], sl[1, i])
        xh, xl = _dd_add(xh, xl, -ah, -al)
        ah, al = _dd_mul(l2h, l2l, sh[2, i], sl[2, i])
        sh[0, i], sl[0, i] = _dd_add(xh, xl, -ah, -al)
    # diag(S) = 1/w - alpha/w^2 * diag(Q Sigma Q.T)
    ch, cl = _dd_mul(w, 0.0, w, 0.0)
    ch, cl = _dd_div(alpha, 0.0, ch, cl)
    ih, il = _dd_div(1.0, 0.0, w, 0.0)
    for j in range(p):
        acch, accl = 0.0, 0.0
        for ca in range(max(j - 2, 0), min(j, m - 1) + 1):
            for cb in range(max(j - 2, 0), min(j, m - 1) + 1):
                lo = min(ca, cb)
                th, tl = _two_prod(q[j - ca, ca], q[j - cb, cb])
                th, tl = _dd_mul(th, tl, sh[abs(ca - cb), lo], sl[abs(ca - cb), lo])
                acch, accl = _dd_add(acch, accl, th, tl)
        th, tl = _dd_mul(ch, cl, acch, accl)
        xh, xl = _dd_add(ih, il, -th, -tl)
        out[j] = xh + xl
    return True, out


@njit(cache=True)
def _reinsch(q, r, w, alpha, ytilde):
    m = q.shape[1]
    band = _system_band(q, r, alpha / w)
    l = np.zeros((2, m))
    d = np.zeros(m)
    bad = _ldl(band, l, d)
    if bad >= 0:
        return bad, l, d, ytilde, d
    rhs = _qt_dot(q, ytilde)
    for c in range(m):
        rhs[c] /= w
    gamma = _ldl_solve(l, d, rhs)
    qg = _q_dot(q, gamma)
    mu = np.empty(m + 2)
    for j in range(m + 2):
        mu[j] = (ytilde[j] - alpha * qg[j]) / w
    return -1, l, d, mu, gamma


@njit(cache=True)
def _roughness(q, r, mu):
    m = q.shape[1]
    v = _qt_dot(q, mu)
    l = np.zeros((2, m))
    d = np.zeros(m)
    _ldl(r, l, d)
    x = _ldl_solve(l, d, v)
    acc = 0.0
    for c in range(m):
        acc += v[c] * x[c]
    return acc


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------


def pentadiagonal_ldl(band):
    """LDL^T factorization of a symmetric pentadiagonal matrix.

    ``band`` is ``(3, m)`` diagonal-major storage.  Runs in ``O(m)``.

    Raises
    ------
    NotPositiveDefinite
        If a pivot is not strictly positive.
    """
    band = np.ascontiguousarray(band, dtype=float)
    if band.ndim != 2 or band.shape[0] != 3:
        raise DimensionMismatch(f"expected (3, m) band storage, got {band.shape}")
    m = band.shape[1]
    l = np.zeros((2, m))
    d = np.zeros(m)
    bad = _ldl(band, l, d)
    if bad >= 0:
        raise NotPositiveDefinite(f"non-positive pivot at row {bad}")
    return BandCholesky(l=l, d=d)


def system_band(bp, w, alpha):
    """Band of ``R + alpha Q.T W^{-1} Q`` for ``W = w I``."""
    return _system_band(bp.q, bp.r, alpha / w)


def roughness_form(bp, mu):
    """``mu.T G mu`` via ``v.T R^{-1} v`` with ``v = Q.T mu``."""
    mu = np.ascontiguousarray(mu, dtype=float)
    if mu.shape != (bp.p,):
        raise DimensionMismatch(f"mu has shape {mu.shape}, expected ({bp.p},)")
    return max(_roughness(bp.q, bp.r, mu), 0.0)


def _check_weight(w, floor):
    if not w > floor:
        raise DegenerateWeight(f"total weight {w!r} is not above the floor {floor!r}")


def reinsch_solve(bp, w, alpha, ytilde, floor=0.0):
    """Solve ``(w I + alpha G) mu = ytilde`` in linear time.

    The second derivatives are found from the pentadiagonal system
    ``(R + alpha Q.T Q / w) gamma = Q.T ytilde / w`` and the values are
    recovered as ``mu = (ytilde - alpha Q gamma) / w``.
    """
    ytilde = np.ascontiguousarray(ytilde, dtype=float)
    if ytilde.shape != (bp.p,):
        raise DimensionMismatch(f"ytilde has shape {ytilde.shape}, expected ({bp.p},)")
    _check_weight(w, floor)
    if alpha < 0:
        raise ValueError(f"alpha must be nonnegative, got {alpha}")
    bad, l, d, mu, gamma = _reinsch(bp.q, bp.r, float(w), float(alpha), ytilde)
    if bad >= 0:
        raise NotPositiveDefinite(f"non-positive pivot at row {bad}")
    if alpha == 0:
        # keep the unsmoothed path bit-identical to a plain weighted mean
        mu = ytilde / w
    return SplineSolve(mu=mu, gamma=gamma, weight=float(w), alpha=float(alpha),
                       chol=BandCholesky(l=l, d=d))


def smoother_diagonal(bp, chol, w, alpha, floor=0.0, compensated=True):
    """Diagonal of ``S = (w I + alpha G)^{-1}`` in linear time.

    Uses ``S = I / w - (alpha / w^2) Q B^{-1} Q.T`` with ``B = R + alpha
    Q.T Q / w`` and the central band of ``B^{-1}`` from the Hutchinson-de
    Hoog recursion on its ``L D L.T`` factors.  ``B`` has condition number
    growing like ``p^4``, so in plain double precision the diagonal loses
    up to eight digits once ``alpha / w`` passes about ``1e6``.  By default
    (``compensated=True``) the factorization, the band inverse and the final
    subtraction are carried out in double-double arithmetic and ``chol`` is
    only checked for shape; ``compensated=False`` reuses ``chol`` as is.
    """
    _check_weight(w, floor)
    if chol.d.shape != (bp.m,):
        raise DimensionMismatch(f"factor has order {chol.d.shape[0]}, expected {bp.m}")
    if alpha == 0:
        return np.full(bp.p, 1.0 / w)
    if compensated:
        ok, out = _smoother_diag_dd(bp.q, bp.r, float(w), float(alpha))
        if not ok:
            raise NotPositiveDefinite("non-positive pivot in the compensated factorization")
        return out
    s = _band_inverse(chol.l, chol.d)
    return _smoother_diag(bp.q, s, float(w), float(alpha))


# ---------------------------------------------------------------------------
# dense reference path
# ---------------------------------------------------------------------------


def dense_roughness_matrix(bp):
    q = bp.dense_q()
    return q @ np.linalg.solve(bp.dense_r(), q.T)


def dense_solve(gmat, w, alpha, ytilde):
    """``(w I + alpha G)^{-1} ytilde`` by a dense symmetric solve; ``O(p^3)``."""
    p = gmat.shape[0]
    a = alpha * gmat
    a[np.diag_indices(p)] += w
    return np.linalg.solve(a, ytilde)
