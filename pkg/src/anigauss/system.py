"""Point clouds and assembly of the dense linear systems.

Rows are ordered velocity-major then batch-major: the block for velocity ``i``
and batch ``j`` covers rows ``i*N + j*N_s`` onwards.  The Gram matrix is built
one pair of row blocks at a time so that at most two blocks of ``A`` are alive.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ResourceError
from .kernel import phi_block

GiB = 1 << 30
_F8 = 8


@dataclass
class PointCloud:
    """Points in normalized [0,1]^3 space plus the map back to input units.

    ``original = scale * normalized + offset``.
    """

    positions: np.ndarray
    gt_normals: Optional[np.ndarray] = None
    scale: float = 1.0
    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.positions = np.ascontiguousarray(np.asarray(self.positions, dtype=np.float64))
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ValueError("positions must be an N x 3 array")
        self.offset = np.asarray(self.offset, dtype=np.float64).reshape(3)
        if self.gt_normals is not None:
            self.gt_normals = np.asarray(self.gt_normals, dtype=np.float64)
            if self.gt_normals.shape != self.positions.shape:
                raise ValueError("gt_normals must match positions in shape")

    @classmethod
    def normalized(cls, points, normals=None):
        """Fit ``points`` into the unit box: bbox centred at 0.5, longest side 1."""
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 3 or len(points) == 0:
            raise ValueError("expected a non-empty N x 3 array of points")
        if not np.all(np.isfinite(points)):
            raise ValueError("point coordinates must be finite")
        lo, hi = points.min(axis=0), points.max(axis=0)
        extent = float(np.max(hi - lo))
        if extent <= 0.0:
            extent = 1.0
        center = 0.5 * (lo + hi)
        offset = center - 0.5 * extent
        pos = (points - offset) / extent
        np.clip(pos, 0.0, 1.0, out=pos)
        if normals is not None:
            normals = np.asarray(normals, dtype=np.float64)
            nrm = np.linalg.norm(normals, axis=1, keepdims=True)
            normals = normals / np.where(nrm > 0, nrm, 1.0)
        return cls(pos, normals, extent, offset)

    def __len__(self):
        return len(self.positions)

    def to_original(self, x):
        return np.asarray(x, dtype=np.float64) * self.scale + self.offset

    def to_normalized(self, x):
        return (np.asarray(x, dtype=np.float64) - self.offset) / self.scale

    def original_positions(self):
        return self.to_original(self.positions)


@dataclass
class SolveConfig:
    alpha: float = 2.0
    batch_size: int = 5000
    L: float = 1.0
    m: int = 3
    cg_tol: float = 1e-10
    cg_max_iter: int = 2000
    depth: int = 8
    memory_budget: int = 8 * GiB
    jacobi: bool = False

    def __post_init__(self):
        if self.alpha < 1.0:
            raise ValueError("alpha must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if not 3 <= self.depth <= 10:
            raise ValueError("depth must lie in [3, 10]")
        if self.cg_max_iter < 1:
            raise ValueError("cg_max_iter must be >= 1")


def _velocity_array(velocities):
    cs = np.asarray(getattr(velocities, "vectors", velocities), dtype=np.float64)
    return np.atleast_2d(cs).reshape(-1, 3)


def batch_slices(n, batch_size):
    return [slice(s, min(s + batch_size, n)) for s in range(0, n, batch_size)]


@dataclass
class RowBlockMatrix:
    """Lazy view of the stacked matrix ``A`` as (velocity, batch) row blocks.

    Blocks are recomputed on request instead of being cached.
    """

    velocities: np.ndarray
    points: np.ndarray
    widths: np.ndarray
    batch_size: int

    def __post_init__(self):
        self.velocities = _velocity_array(self.velocities)
        self.points = np.ascontiguousarray(getattr(self.points, "positions", self.points),
                                           dtype=np.float64)
        self.batches = batch_slices(len(self.points), self.batch_size)

    @property
    def n_rows(self):
        return len(self.velocities) * len(self.points)

    @property
    def n_cols(self):
        return 3 * len(self.points)

    def index(self):
        """``[(i, j, global row slice)]`` in row order."""
        n = len(self.points)
        return [(i, j, slice(i * n + b.start, i * n + b.stop))
                for i in range(len(self.velocities)) for j, b in enumerate(self.batches)]

    def block(self, i, j, out=None):
        b = self.batches[j]
        return phi_block(self.velocities[i], self.points[b], self.points, self.widths[b], out=out)

    def dense(self):
        return np.vstack([self.block(i, j) for i, j, _ in self.index()])

    def matvec(self, mu):
        out = np.empty(self.n_rows)
        for i, j, rows in self.index():
            out[rows] = self.block(i, j) @ mu
        return out

    def rmatvec(self, xi):
        out = np.zeros(self.n_cols)
        for i, j, rows in self.index():
            out += self.block(i, j).T @ xi[rows]
        return out


def _check_block(rows, n, max_bytes):
    if max_bytes is not None and rows * 3 * n * _F8 > max_bytes:
        raise ResourceError(f"a {rows} x {3 * n} block exceeds the {max_bytes}-byte cap; "
                            "reduce the batch size")


def assemble_block(c, queries, cloud, widths, max_bytes=None):
    """Dense rows ``A_c(Q; P)``; row q is ``phi_row(c, queries[q], ...)``."""
    points = getattr(cloud, "positions", cloud)
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    _check_block(len(queries), len(points), max_bytes)
    return phi_block(c, queries, cloud, widths)


def _check_square(size, cfg, m_factor):
    if size * size * _F8 > cfg.memory_budget:
        side = int(np.sqrt(cfg.memory_budget / _F8))
        raise ResourceError(f"a {size} x {size} matrix exceeds the memory budget of "
                            f"{cfg.memory_budget} bytes", max_points=side // m_factor)


def assemble_gram(velocities, cloud, widths, cfg=SolveConfig()):
    """``B = A A^T + (alpha - 1) diag(A A^T)``, built pairwise from row blocks."""
    rb = RowBlockMatrix(velocities, cloud, widths, cfg.batch_size)
    n = len(rb.points)
    size = rb.n_rows
    _check_square(size, cfg, len(rb.velocities))
    _check_block(min(cfg.batch_size, n), n, cfg.memory_budget)
    index = rb.index()
    B = np.empty((size, size))
    for k1, (i1, j1, r1) in enumerate(index):
        a1 = rb.block(i1, j1)
        B[r1, r1] = a1 @ a1.T
        for i2, j2, r2 in index[k1 + 1 :]:
            a2 = rb.block(i2, j2)
            prod = a1 @ a2.T
            B[r1, r2] = prod
            B[r2, r1] = prod.T
            del a2, prod
        del a1
    if cfg.alpha != 1.0:
        diag = np.einsum("ii->i", B)
        diag *= cfg.alpha
    return B


def assemble_normal_eq(velocities, cloud, widths, cfg=SolveConfig()):
    """``H = H0 + (alpha - 1) diag(H0)`` with ``H0 = sum A_i^T A_i``, and ``sum A_i^T 1/2``."""
    rb = RowBlockMatrix(velocities, cloud, widths, cfg.batch_size)
    n = len(rb.points)
    _check_square(3 * n, cfg, 3)
    H = np.zeros((3 * n, 3 * n))
    rhs = np.zeros(3 * n)
    for i, j, _ in rb.index():
        a = rb.block(i, j)
        H += a.T @ a
        rhs += 0.5 * a.sum(axis=0)
        del a
    # a.T @ a is exactly symmetric per block, so the sum is too
    if cfg.alpha != 1.0:
        diag = np.einsum("ii->i", H)
        diag *= cfg.alpha
    return H, rhs


def max_points_for_budget(m, budget=8 * GiB):
    """Largest N whose ``mN x mN`` Gram matrix fits in ``budget`` bytes."""
    return int(np.sqrt(budget / _F8)) // m
