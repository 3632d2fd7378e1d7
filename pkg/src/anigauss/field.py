"""From surface elements to normals, an indicator field and a triangle mesh.

Cells live on the uniform lattice of spacing ``2**-depth``. Integer cell and
corner coordinates are packed into int64 keys so that sets of cells and
corners can be merged with ``np.unique`` and looked up with ``searchsorted``.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from ._mc_tables import CORNER_OFFSETS, EDGE_CORNERS, TRIANGLES
from .errors import NoSurfaceError, ReconError
from .kernel import WidthParams, compute_widths, indicator_values

DEFAULT_MARGIN = 0.05
DEGENERATE_NORM = 1e-14
# keeps interpolated vertices off the lattice corners so no triangle collapses
_T_CLAMP = 1e-3


@dataclass
class OrientedCloud:
    positions: np.ndarray
    normals: np.ndarray
    degenerate: Optional[np.ndarray] = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.normals = np.asarray(self.normals, dtype=np.float64)
        if self.degenerate is None:
            self.degenerate = np.zeros(len(self.positions), dtype=bool)

    def __len__(self):
        return len(self.positions)

    @property
    def flags(self):
        return np.where(self.degenerate, "degenerate_fallback", "ok")

    def flipped(self):
        return OrientedCloud(self.positions, -self.normals, self.degenerate)


@dataclass
class QueryGrid:
    depth: int
    corner_ijk: np.ndarray  # (K, 3) lattice coordinates of the corners
    cells: np.ndarray  # (C, 8) corner indices, CORNER_OFFSETS order
    cell_ijk: np.ndarray  # (C, 3)

    @property
    def spacing(self):
        return 2.0 ** -self.depth

    @property
    def corners(self):
        return self.corner_ijk * self.spacing

    def __len__(self):
        return len(self.corner_ijk)


@dataclass
class IndicatorField:
    values: np.ndarray
    iso_value: float = 0.5


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def edges(self):
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return e

    def euler_characteristic(self):
        e = np.sort(self.edges(), axis=1)
        n_edges = len(np.unique(e, axis=0))
        used = len(np.unique(self.triangles))
        return used - n_edges + len(self.triangles)

    def is_watertight(self):
        """Every undirected edge is used by exactly two triangles, once per direction."""
        e = self.edges()
        _, counts = np.unique(np.sort(e, axis=1), axis=0, return_counts=True)
        if not np.all(counts == 2):
            return False
        _, dcounts = np.unique(e, axis=0, return_counts=True)
        return bool(np.all(dcounts == 1))

    def face_normals(self):
        v = self.vertices[self.triangles]
        n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def areas(self):
        v = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)


# ------------------------------------------------------------------ normals


def extract_normals(mu, cloud):
    """Normalise each 3-block of ``mu``; tiny rows copy the nearest good normal."""
    pts = np.asarray(getattr(cloud, "positions", cloud), dtype=np.float64)
    mu3 = np.asarray(mu, dtype=np.float64).reshape(-1, 3)
    if len(mu3) != len(pts):
        raise ValueError(f"mu has {len(mu3)} blocks for {len(pts)} points")
    norms = np.linalg.norm(mu3, axis=1)
    bad = ~(norms >= DEGENERATE_NORM)
    if np.all(bad):
        raise ReconError("every surface element is numerically zero; the solve produced a null field")
    normals = np.zeros_like(mu3)
    normals[~bad] = mu3[~bad] / norms[~bad, None]
    if np.any(bad):
        good = np.flatnonzero(~bad)
        _, nearest = cKDTree(pts[good]).query(pts[bad])
        normals[bad] = normals[good[nearest]]
    return OrientedCloud(pts.copy(), normals, bad)


# ------------------------------------------------------------------ lattice keys


class _Lattice:
    """Packs integer lattice coordinates at one depth into int64 keys."""

    def __init__(self, depth):
        self.depth = depth
        self.offset = 1 << depth
        self.base = 3 * (1 << depth) + 2

    def key(self, ijk):
        ijk = np.asarray(ijk, dtype=np.int64) + self.offset
        return (ijk[..., 0] * self.base + ijk[..., 1]) * self.base + ijk[..., 2]

    def unkey(self, key):
        key = np.asarray(key, dtype=np.int64)
        k = key % self.base
        j = (key // self.base) % self.base
        i = key // (self.base * self.base)
        return np.stack([i, j, k], axis=-1) - self.offset


def cell_range(depth, margin=DEFAULT_MARGIN):
    """Inclusive range of cell indices whose corners stay within the margin box."""
    n = 1 << depth
    lo = int(np.ceil(-margin * n - 1e-9))
    hi = int(np.floor((1.0 + margin) * n + 1e-9)) - 1
    return lo, hi


def grid_from_cells(depth, cell_ijk):
    """Assemble the unique corners and the cell topology of a set of cells."""
    lat = _Lattice(depth)
    cell_ijk = np.asarray(cell_ijk, dtype=np.int64).reshape(-1, 3)
    keys = np.unique(lat.key(cell_ijk))
    cell_ijk = lat.unkey(keys)
    corners = cell_ijk[:, None, :] + CORNER_OFFSETS[None, :, :]
    ckeys = lat.key(corners)
    uniq, inv = np.unique(ckeys.ravel(), return_inverse=True)
    return QueryGrid(depth, lat.unkey(uniq), inv.reshape(-1, 8), cell_ijk)


def _dilate(cell_ijk, dilation, lo, hi):
    if dilation <= 0:
        return cell_ijk
    r = np.arange(-dilation, dilation + 1)
    offsets = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)
    out = []
    for off in offsets:
        out.append(cell_ijk + off)
    cells = np.concatenate(out)
    keep = np.all((cells >= lo) & (cells <= hi), axis=1)
    return cells[keep]


def build_query_grid(cloud, depth, dilation=2, margin=DEFAULT_MARGIN):
    """Cells of the depth-level lattice that hold a point, grown by ``dilation``."""
    if not 1 <= depth <= 10:
        raise ValueError("depth must lie in [1, 10]")
    pts = np.asarray(getattr(cloud, "positions", cloud), dtype=np.float64).reshape(-1, 3)
    lo, hi = cell_range(depth, margin)
    ijk = np.clip(np.floor(pts * (1 << depth)).astype(np.int64), lo, hi)
    ijk = np.unique(ijk, axis=0)
    return grid_from_cells(depth, _dilate(ijk, dilation, lo, hi))


# ------------------------------------------------------------------ evaluation


def _evaluator(mu, velocities, cloud, width_params, batch_size):
    pts = np.asarray(getattr(cloud, "positions", cloud), dtype=np.float64)
    tree = cKDTree(pts)

    def evaluate(queries):
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        out = np.empty(len(queries))
        for s in range(0, len(queries), batch_size):
            q = queries[s : s + batch_size]
            w = compute_widths(q, pts, width_params, tree=tree)
            out[s : s + batch_size] = indicator_values(velocities, q, pts, w, mu)
        return out

    return evaluate


def evaluate_indicator(mu, velocities, grid, cloud, width_params=WidthParams(),
                       batch_size=5000, iso_value=0.5):
    """Averaged indicator ``(1/m) sum_i A_{c_i}(Q; P) mu`` at the grid corners."""
    queries = grid.corners if isinstance(grid, QueryGrid) else grid
    values = _evaluator(mu, velocities, cloud, width_params, batch_size)(queries)
    return IndicatorField(values, iso_value)


def compute_isovalue(mu, velocities, cloud, width_params=WidthParams(), batch_size=5000):
    """Mean of the averaged indicator over the input points themselves."""
    pts = np.asarray(getattr(cloud, "positions", cloud), dtype=np.float64)
    return float(np.mean(_evaluator(mu, velocities, pts, width_params, batch_size)(pts)))


# ------------------------------------------------------------------ refinement


class _CornerStore:
    """Sorted corner-key -> value table on the finest lattice."""

    def __init__(self):
        self.keys = np.empty(0, dtype=np.int64)
        self.values = np.empty(0)

    def missing(self, keys):
        keys = np.unique(keys)
        if len(self.keys) == 0:
            return keys
        pos = np.clip(np.searchsorted(self.keys, keys), 0, len(self.keys) - 1)
        return keys[self.keys[pos] != keys]

    def add(self, keys, values):
        k = np.concatenate([self.keys, keys])
        v = np.concatenate([self.values, values])
        order = np.argsort(k, kind="stable")
        self.keys, self.values = k[order], v[order]

    def lookup(self, keys):
        return self.values[np.searchsorted(self.keys, keys)]


# faces as (axis, side) -> the four corners of a cell on that face
_FACES = []
for _axis in range(3):
    for _side in (0, 1):
        _FACES.append((_axis, _side, np.flatnonzero(CORNER_OFFSETS[:, _axis] == _side)))


def _trilinear_weights():
    # rows: the 27 points of a cell's half-spacing sublattice, cols: its 8 corners
    sub = np.array([(a, b, c) for c in range(3) for b in range(3) for a in range(3)]) / 2.0
    w = np.ones((27, 8))
    for axis in range(3):
        t = sub[:, axis][:, None]
        w *= np.where(CORNER_OFFSETS[None, :, axis] == 1, t, 1.0 - t)
    child = CORNER_OFFSETS[:, None, :] + CORNER_OFFSETS[None, :, :]  # (child, corner, 3)
    idx = child[..., 0] + 3 * child[..., 1] + 9 * child[..., 2]
    return w, idx


_CHILD_WEIGHTS, _CHILD_CORNERS = _trilinear_weights()


def _holds_seed(level, cells, seeds):
    lat = _Lattice(level)
    occupied = np.unique(lat.key(np.floor(seeds * (1 << level)).astype(np.int64)))
    keys = lat.key(cells)
    pos = np.clip(np.searchsorted(occupied, keys), 0, len(occupied) - 1)
    return occupied[pos] == keys


def _crossing(vals, iso):
    below = vals < iso
    return below.any(axis=1) & ~below.all(axis=1)


def refine_to_depth(grid, evaluate, iso, depth, margin=DEFAULT_MARGIN, values=None,
                    seeds=None, max_closure_rounds=10000):
    """Subdivide cells that straddle ``iso`` until ``depth`` and close the band.

    Starting from ``grid`` (coarser or equal depth) every straddling cell, and
    every cell holding one of the ``seeds`` points, is split into eight
    children whose new corners are evaluated. Seeding keeps sheets thinner than
    a coarse cell from being skipped. At the final depth the straddling set is
    grown across every face that carries a sign change, so the extracted
    surface has no boundary inside the margin box.
    Returns the final grid and its indicator values.
    """
    if grid.depth > depth:
        raise ValueError("grid is already finer than the target depth")
    final = _Lattice(depth)
    store = _CornerStore()

    def fetch(level, cell_ijk):
        scale = 1 << (depth - level)
        corners = (cell_ijk[:, None, :] + CORNER_OFFSETS[None]) * scale
        keys = final.key(corners)
        new = store.missing(keys.ravel())
        if len(new):
            store.add(new, evaluate(final.unkey(new) * 2.0 ** -depth))
        return store.lookup(keys)

    level = grid.depth
    cells = grid.cell_ijk
    if values is not None:
        scale = 1 << (depth - level)
        store.add(*_sorted_pair(final.key(grid.corner_ijk * scale), values))
    vals = fetch(level, cells)
    while level < depth:
        keep = _crossing(vals, iso)
        if seeds is not None:
            keep |= _holds_seed(level, cells, seeds)
        cells, vals = cells[keep], vals[keep]
        children = (2 * cells[:, None, :] + CORNER_OFFSETS[None]).reshape(-1, 3)
        level += 1
        if level == depth:
            # only children predicted to straddle, plus the seeded ones; the
            # closure pass below recovers any crossing child that was missed
            pred = _crossing((vals @ _CHILD_WEIGHTS.T)[:, _CHILD_CORNERS].reshape(-1, 8), iso)
            if seeds is not None:
                pred |= _holds_seed(level, children, seeds)
            children = children[pred]
        cells = children
        vals = fetch(level, cells)

    lat = final
    lo, hi = cell_range(depth, margin)
    cell_keys = np.unique(lat.key(cells))
    cells = lat.unkey(cell_keys)
    vals = fetch(depth, cells)
    for _ in range(max_closure_rounds):
        cross = _crossing(vals, iso)
        frontier = []
        src, src_vals = cells[cross], vals[cross]
        below = src_vals < iso
        for axis, side, idx in _FACES:
            face = below[:, idx]
            change = face.any(axis=1) & ~face.all(axis=1)
            nb = src[change].copy()
            nb[:, axis] += 1 if side else -1
            frontier.append(nb)
        nb = np.concatenate(frontier)
        nb = nb[np.all((nb >= lo) & (nb <= hi), axis=1)]
        nb_keys = np.unique(lat.key(nb))
        pos = np.clip(np.searchsorted(cell_keys, nb_keys), 0, len(cell_keys) - 1)
        new_keys = nb_keys[cell_keys[pos] != nb_keys]
        if len(new_keys) == 0:
            break
        new_cells = lat.unkey(new_keys)
        new_vals = fetch(depth, new_cells)
        cell_keys = np.concatenate([cell_keys, new_keys])
        cells = np.concatenate([cells, new_cells])
        vals = np.concatenate([vals, new_vals])
        order = np.argsort(cell_keys, kind="stable")
        cell_keys, cells, vals = cell_keys[order], cells[order], vals[order]

    out = grid_from_cells(depth, cells)
    return out, store.lookup(lat.key(out.corner_ijk))


def _sorted_pair(keys, values):
    order = np.argsort(keys, kind="stable")
    return keys[order], np.asarray(values, dtype=np.float64)[order]


# ------------------------------------------------------------------ meshing


def marching_cubes(grid, field, transform=None):
    """Triangulate the ``field.iso_value`` level set over the cells of ``grid``.

    Triangles are wound so that their normals point towards decreasing values.
    ``transform`` is ``(scale, offset)`` or anything with ``to_original``.
    """
    iso = float(field.iso_value)
    values = np.asarray(field.values, dtype=np.float64)
    if len(values) != len(grid.corner_ijk):
        raise ValueError("field and grid disagree on the number of corners")
    cv = values[grid.cells]
    code = np.zeros(len(cv), dtype=np.int64)
    for k in range(8):
        code |= (cv[:, k] < iso).astype(np.int64) << k
    active = (code != 0) & (code != 255)
    if not np.any(active):
        raise NoSurfaceError()
    cells = grid.cells[active]
    tri_edges = TRIANGLES[code[active]]  # (A, 16)
    n_tri = np.sum(tri_edges >= 0, axis=1) // 3
    cell_of_tri = np.repeat(np.arange(len(cells)), n_tri)
    edges = tri_edges[tri_edges >= 0].reshape(-1, 3)  # local edge ids per triangle
    ends = EDGE_CORNERS[edges]  # (T, 3, 2)
    a = cells[cell_of_tri[:, None], ends[..., 0]]
    b = cells[cell_of_tri[:, None], ends[..., 1]]
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    ekeys = lo.astype(np.int64) * len(values) + hi
    uniq, inv = np.unique(ekeys.ravel(), return_inverse=True)
    ea, eb = uniq // len(values), uniq % len(values)
    va, vb = values[ea], values[eb]
    t = np.clip((iso - va) / (vb - va), _T_CLAMP, 1.0 - _T_CLAMP)
    pa = grid.corner_ijk[ea].astype(np.float64)
    pb = grid.corner_ijk[eb].astype(np.float64)
    verts = (pa + t[:, None] * (pb - pa)) * grid.spacing
    # the table already winds away from the corners at or above iso
    tris = inv.reshape(-1, 3)
    if transform is not None:
        verts = _apply_transform(transform, verts)
    return TriangleMesh(verts, tris)


def _apply_transform(transform, verts):
    if hasattr(transform, "to_original"):
        return transform.to_original(verts)
    scale, offset = transform
    return verts * scale + np.asarray(offset, dtype=np.float64)
