"""Anisotropic fundamental solution, Gauss kernel and the discrete row functions.

For a velocity ``c`` the fundamental solution of ``Lap(u) - c . grad(u) = 0`` is

    phi_c(x) = exp((c.x - |c||x|) / 2) / (4 pi |x|)

and the kernel whose surface integral against outward normals gives the
indicator function is ``K_c = grad(phi_c) - c phi_c``.  The discrete rows
replace every ``|x - p_j|`` by the truncated distance ``max(|x - p_j|, w(x))``.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from . import _accel
from ._accel import jit, prange
from .errors import DomainError

INV_4PI = 1.0 / (4.0 * np.pi)
INV_8PI = 1.0 / (8.0 * np.pi)


@dataclass(frozen=True)
class Velocity:
    v: np.ndarray
    modulus: float

    @classmethod
    def of(cls, v):
        v = np.asarray(v, dtype=np.float64).reshape(3)
        return cls(v, float(np.linalg.norm(v)))


@dataclass(frozen=True)
class WidthParams:
    w_min: float = 0.0015
    k_w: int = 7
    w_max: Optional[float] = None

    def __post_init__(self):
        if not self.w_min > 0:
            raise ValueError("w_min must be positive")
        if int(self.k_w) < 1:
            raise ValueError("k_w must be >= 1")
        if self.w_max is not None and self.w_max < self.w_min:
            raise ValueError("w_max must be >= w_min")


def _vec(c):
    if isinstance(c, Velocity):
        return c.v
    return np.asarray(c, dtype=np.float64).reshape(3)


def _split(c, x):
    c = _vec(c)
    x = np.asarray(x, dtype=np.float64)
    r = np.sqrt(np.sum(x * x, axis=-1))
    if np.any(r == 0.0):
        raise DomainError("kernel evaluated at its singularity |x| = 0")
    return c, x, r


def fundamental_solution(c, x):
    """phi_c(x); ``x`` may carry leading batch dimensions."""
    c, x, r = _split(c, x)
    cn = np.linalg.norm(c)
    return INV_4PI / r * np.exp(0.5 * (x @ c - cn * r))


def fundamental_gradient(c, x):
    c, x, r = _split(c, x)
    cn = np.linalg.norm(c)
    phi = INV_4PI / r * np.exp(0.5 * (x @ c - cn * r))
    scale = (-1.0 / (r * r) - 0.5 * cn / r)[..., None]
    return phi[..., None] * (scale * x + 0.5 * c)


def gauss_kernel(c, x):
    c, x, r = _split(c, x)
    cn = np.linalg.norm(c)
    phi = INV_4PI / r * np.exp(0.5 * (x @ c - cn * r))
    scale = (-1.0 / (r * r) - 0.5 * cn / r)[..., None]
    return phi[..., None] * (scale * x - 0.5 * c)


def pde_residual(c, x, h):
    """Finite-difference value of ``Lap(phi_c) - c . grad(phi_c)`` at ``x``.

    Uses the 7-point Laplacian and central first differences with step ``h``.
    """
    c = _vec(c)
    x = np.asarray(x, dtype=np.float64).reshape(3)
    if np.linalg.norm(x) <= 10.0 * h:
        raise DomainError("pde_residual needs |x| > 10 h")
    eye = np.eye(3) * h
    f0 = fundamental_solution(c, x)
    plus = fundamental_solution(c, x + eye)
    minus = fundamental_solution(c, x - eye)
    lap = np.sum(plus + minus - 2.0 * f0) / (h * h)
    grad = (plus - minus) / (2.0 * h)
    return float(lap - c @ grad)


# ---------------------------------------------------------------- widths


def _sorted_sq_mean(d2):
    d2 = np.sort(d2, axis=1)
    return np.sqrt(d2.sum(axis=1) / d2.shape[1])


def compute_widths(queries, cloud, params=WidthParams(), tree=None):
    """Width ``w(x) = max(w_min, rms distance to the k_w nearest cloud points)``.

    A query that coincides with a cloud point does not count that point among
    its own neighbours.
    """
    points = _positions(cloud)
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    n = len(points)
    if n == 0:
        raise DomainError("cannot compute widths against an empty cloud")
    if len(queries) == 0:
        raise DomainError("no query points")
    k = min(int(params.k_w), max(n - 1, 1))
    kq = min(k + 1, n)
    if tree is None:
        tree = cKDTree(points)
    _, idx = tree.query(queries, k=kq)
    idx = idx.reshape(len(queries), kq)
    diff = queries[:, None, :] - points[idx]
    d2 = np.sum(diff * diff, axis=-1)
    self_hit = d2[:, 0] == 0.0
    if kq == k + 1:
        d2 = np.where(self_hit[:, None], d2[:, 1:], d2[:, :k])
    w = _sorted_sq_mean(d2)
    w = np.maximum(w, params.w_min)
    if params.w_max is not None:
        w = np.minimum(w, params.w_max)
    return w


def compute_widths_bruteforce(queries, cloud, params=WidthParams()):
    """Exhaustive O(N |Q|) width computation, used as an oracle."""
    points = _positions(cloud)
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    n = len(points)
    k = min(int(params.k_w), max(n - 1, 1))
    out = np.empty(len(queries))
    for i, q in enumerate(queries):
        diff = q - points
        d2 = np.sum(diff * diff, axis=-1)
        order = np.argsort(d2, kind="stable")
        if d2[order[0]] == 0.0 and n > k:
            chosen = d2[order[1 : k + 1]]
        else:
            chosen = d2[order[:k]]
        out[i] = _sorted_sq_mean(chosen[None, :])[0]
    out = np.maximum(out, params.w_min)
    if params.w_max is not None:
        out = np.minimum(out, params.w_max)
    return out


def _positions(cloud):
    pts = getattr(cloud, "positions", cloud)
    return np.ascontiguousarray(np.atleast_2d(np.asarray(pts, dtype=np.float64)))


# ---------------------------------------------------------------- exp


# 2^-k for k = 0..1099; exp_neg scales its polynomial by a table lookup so
# the loops that call it stay vectorisable (libm exp is scalar here).
_POW2_NEG = np.ldexp(1.0, -np.arange(1100))
_LOG2E = 1.4426950408889634
_LN2_HI = 0.6931471803691238
_LN2_LO = 1.9082149292705877e-10


@jit(inline="always", fastmath=True)
def _exp_neg(x, pow2):
    # exp(x) for x <= 0, relative error ~1e-14
    if x < -745.0:
        x = -745.0
    k = np.floor(x * _LOG2E + 0.5)
    f = (x - k * _LN2_HI) - k * _LN2_LO
    p = 1.6059043836821613e-10
    p = p * f + 2.08767569878681e-09
    p = p * f + 2.505210838544172e-08
    p = p * f + 2.755731922398589e-07
    p = p * f + 2.7557319223985893e-06
    p = p * f + 2.48015873015873e-05
    p = p * f + 0.0001984126984126984
    p = p * f + 0.001388888888888889
    p = p * f + 0.008333333333333333
    p = p * f + 0.041666666666666664
    p = p * f + 0.16666666666666666
    p = p * f + 0.5
    p = p * f + 1.0
    p = p * f + 1.0
    return p * pow2[int(-k)]


def exp_neg(x):
    """Array version of the in-kernel exponential, for tests."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty(x.size)
    _exp_neg_array(x.ravel(), _POW2_NEG, out)
    return out.reshape(x.shape)


@jit(cache=True, fastmath=True)
def _exp_neg_array(x, pow2, out):
    for i in range(x.shape[0]):
        out[i] = _exp_neg(x[i], pow2)


# ---------------------------------------------------------------- rows


def phi_row(c, x, cloud, width):
    """Flattened truncated row ``A^c(x; P)`` of length 3N."""
    x = np.asarray(x, dtype=np.float64).reshape(1, 3)
    return phi_block(c, x, cloud, np.atleast_1d(np.asarray(width, dtype=np.float64)))[0]


def phi_block(c, queries, cloud, widths, out=None):
    """Dense ``|Q| x 3N`` block of truncated rows for one velocity."""
    c = _vec(c)
    points = _positions(cloud)
    queries = np.ascontiguousarray(np.atleast_2d(np.asarray(queries, dtype=np.float64)))
    widths = np.ascontiguousarray(np.broadcast_to(np.asarray(widths, dtype=np.float64),
                                                  (len(queries),)))
    if out is None:
        out = np.empty((len(queries), 3 * len(points)))
    if _accel.USE_NUMBA:
        _phi_block_numba(c, float(np.linalg.norm(c)), queries, points, widths, _POW2_NEG, out)
    else:
        _phi_block_numpy(c, queries, points, widths, out)
    return out


@jit(cache=True, parallel=True, fastmath=True)
def _phi_block_numba(c, cn, queries, points, widths, pow2, out):
    n = points.shape[0]
    c0, c1, c2 = c[0], c[1], c[2]
    for q in prange(queries.shape[0]):
        x0 = queries[q, 0]
        x1 = queries[q, 1]
        x2 = queries[q, 2]
        w = widths[q]
        for j in range(n):
            r0 = x0 - points[j, 0]
            r1 = x1 - points[j, 1]
            r2 = x2 - points[j, 2]
            d = np.sqrt(r0 * r0 + r1 * r1 + r2 * r2)
            if d < w:
                d = w
            e = INV_8PI / d * _exp_neg(0.5 * (c0 * r0 + c1 * r1 + c2 * r2 - cn * d), pow2)
            a = -2.0 / (d * d) - cn / d
            out[q, 3 * j] = e * (a * r0 - c0)
            out[q, 3 * j + 1] = e * (a * r1 - c1)
            out[q, 3 * j + 2] = e * (a * r2 - c2)


def _phi_block_numpy(c, queries, points, widths, out, chunk_entries=1 << 21):
    n = len(points)
    cn = np.linalg.norm(c)
    step = max(1, chunk_entries // max(n, 1))
    for s in range(0, len(queries), step):
        q = queries[s : s + step]
        r = q[:, None, :] - points[None, :, :]
        d = np.maximum(np.sqrt(np.sum(r * r, axis=-1)), widths[s : s + step, None])
        e = INV_8PI / d * np.exp(0.5 * (r @ c - cn * d))
        a = -2.0 / (d * d) - cn / d
        blk = e[..., None] * (a[..., None] * r - c)
        out[s : s + step] = blk.reshape(len(q), 3 * n)


# ------------------------------------------------ fused indicator evaluation


def indicator_values(velocities, queries, cloud, widths, mu):
    """``(1/m) sum_i A_{c_i}(Q; P) mu`` without materialising any block."""
    cs = np.ascontiguousarray(np.atleast_2d(np.asarray(getattr(velocities, "vectors", velocities),
                                                       dtype=np.float64)))
    points = _positions(cloud)
    queries = np.ascontiguousarray(np.atleast_2d(np.asarray(queries, dtype=np.float64)))
    widths = np.ascontiguousarray(np.broadcast_to(np.asarray(widths, dtype=np.float64),
                                                  (len(queries),)))
    mu3 = np.ascontiguousarray(np.asarray(mu, dtype=np.float64).reshape(len(points), 3))
    out = np.empty(len(queries))
    if _accel.USE_NUMBA:
        cns = np.linalg.norm(cs, axis=1)
        order = np.argsort(cns, kind="stable")
        cs, cns = cs[order], cns[order]
        moduli, first = np.unique(cns, return_index=True)
        starts = np.append(first, len(cs)).astype(np.int64)
        # exp(c.(x - p)/2) = exp(c.x'/2) exp(-c.p'/2) about the box centre
        qx = np.ascontiguousarray(np.exp(0.5 * ((queries - 0.5) @ cs.T)))
        pxt = np.ascontiguousarray(np.exp(-0.5 * ((points - 0.5) @ cs.T)).T)
        cmut = np.ascontiguousarray((mu3 @ cs.T).T)
        pt = np.ascontiguousarray(points.T)
        mut = np.ascontiguousarray(mu3.T)
        _indicator_numba(moduli, starts, qx, pxt, cmut, queries, pt, widths, mut, _POW2_NEG, out)
    else:
        _indicator_numpy(cs, queries, points, widths, mu3, out)
    return out


@jit(cache=True, parallel=True, fastmath=True)
def _indicator_numba(moduli, starts, qx, pxt, cmut, queries, pt, widths, mut, pow2, out):
    # one pass for distances, then one pass per modulus group and velocity;
    # every inner loop runs over the points and vectorises
    n = pt.shape[1]
    m = qx.shape[1]
    for q in prange(queries.shape[0]):
        d = np.empty(n)
        inv_d = np.empty(n)
        rmu = np.empty(n)
        e = np.empty(n)
        a = np.empty(n)
        x0 = queries[q, 0]
        x1 = queries[q, 1]
        x2 = queries[q, 2]
        w = widths[q]
        for j in range(n):
            r0 = x0 - pt[0, j]
            r1 = x1 - pt[1, j]
            r2 = x2 - pt[2, j]
            dj = max(np.sqrt(r0 * r0 + r1 * r1 + r2 * r2), w)
            d[j] = dj
            inv_d[j] = 1.0 / dj
            rmu[j] = r0 * mut[0, j] + r1 * mut[1, j] + r2 * mut[2, j]
        total = 0.0
        for g in range(moduli.shape[0]):
            cn = moduli[g]
            for j in range(n):
                ij = inv_d[j]
                e[j] = _exp_neg(-0.5 * cn * d[j], pow2) * ij
                a[j] = (-2.0 * ij - cn) * ij * rmu[j]
            for i in range(starts[g], starts[g + 1]):
                s = 0.0
                for j in range(n):
                    s += pxt[i, j] * e[j] * (a[j] - cmut[i, j])
                total += qx[q, i] * s
        out[q] = INV_8PI * total / m


def _indicator_numpy(cs, queries, points, widths, mu3, out, chunk_entries=1 << 21):
    n = len(points)
    m = len(cs)
    cns = np.linalg.norm(cs, axis=1)
    cmu = mu3 @ cs.T
    step = max(1, chunk_entries // max(n, 1))
    for s in range(0, len(queries), step):
        q = queries[s : s + step]
        r = q[:, None, :] - points[None, :, :]
        d = np.maximum(np.sqrt(np.sum(r * r, axis=-1)), widths[s : s + step, None])
        base = INV_8PI / d
        rmu = np.einsum("qjk,jk->qj", r, mu3)
        acc = np.zeros(len(q))
        for i in range(m):
            e = base * np.exp(0.5 * (r @ cs[i] - cns[i] * d))
            acc += np.sum(e * ((-2.0 / (d * d) - cns[i] / d) * rmu - cmu[:, i]), axis=1)
        out[s : s + step] = acc / m
