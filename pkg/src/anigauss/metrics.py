"""Orientation and reconstruction quality measures."""

from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree

from .field import OrientedCloud

SURFACE_SAMPLES = 20000
CD_SCALE = 1e5


@dataclass
class MetricReport:
    pgp90: float
    chamfer: float
    nc_points: float
    nc_surface: float

    @property
    def chamfer_scaled(self):
        return self.chamfer * CD_SCALE

    def as_dict(self):
        d = {k: (None if v is None else float(v)) for k, v in asdict(self).items()}
        d["chamfer_x1e5"] = None if self.chamfer is None else float(self.chamfer_scaled)
        return d

    def as_text(self):
        return "\n".join(f"{k} = {v}" for k, v in self.as_dict().items())


def _normals(x):
    if isinstance(x, OrientedCloud):
        return x.normals
    n = getattr(x, "normals", None)
    if n is None:
        n = getattr(x, "gt_normals", None)
    if n is None and isinstance(x, np.ndarray):
        n = x
    if n is None:
        raise ValueError("normals are required")
    return np.asarray(n, dtype=np.float64)


def _points(x):
    return np.asarray(getattr(x, "positions", x), dtype=np.float64).reshape(-1, 3)


def pgp90(estimated, truth):
    """Fraction of points whose normal has a strictly positive dot with the truth."""
    est, ref = _normals(estimated), _normals(truth)
    if est.shape != ref.shape:
        raise ValueError(f"point counts differ: {len(est)} vs {len(ref)}")
    if len(est) == 0:
        raise ValueError("empty cloud")
    return float(np.count_nonzero(np.einsum("ij,ij->i", est, ref) > 0.0) / len(est))


def _sq_dist_to_nearest(src, dst):
    _, idx = cKDTree(dst).query(src)
    diff = src - dst[idx]
    return np.einsum("ij,ij->i", diff, diff), idx


def chamfer(s1, s2):
    """Symmetric mean squared nearest-neighbour distance."""
    a, b = _points(s1), _points(s2)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer distance needs two non-empty sets")
    d_ab, _ = _sq_dist_to_nearest(a, b)
    d_ba, _ = _sq_dist_to_nearest(b, a)
    return float(d_ab.mean() + d_ba.mean())


def chamfer_bruteforce(s1, s2):
    """Exhaustive O(n m) scan; the reference for ``chamfer``."""
    a, b = _points(s1), _points(s2)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer distance needs two non-empty sets")

    def one_way(src, dst):
        best = np.empty(len(src))
        for i, p in enumerate(src):
            diff = p - dst
            best[i] = np.einsum("ij,ij->i", diff, diff).min()
        return best.mean()

    return float(one_way(a, b) + one_way(b, a))


def normal_consistency(p1, p2):
    """Average of closest-point normal dot products, taken in both directions."""
    x1, x2 = _points(p1), _points(p2)
    n1, n2 = _normals(p1), _normals(p2)
    if len(x1) == 0 or len(x2) == 0:
        raise ValueError("normal consistency needs two non-empty clouds")
    _, i12 = cKDTree(x2).query(x1)
    _, i21 = cKDTree(x1).query(x2)
    s12 = np.einsum("ij,ij->i", n1, n2[i12]).sum()
    s21 = np.einsum("ij,ij->i", n2, n1[i21]).sum()
    return float(s12 / (2 * len(x1)) + s21 / (2 * len(x2)))


def sample_mesh(mesh, n, seed=0):
    """Area-weighted uniform samples on ``mesh`` with face normals."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if len(mesh.triangles) == 0:
        raise ValueError("mesh has no triangles")
    areas = mesh.areas()
    total = areas.sum()
    if not total > 0:
        raise ValueError("mesh has zero total area")
    rng = np.random.default_rng(seed)
    tri = rng.choice(len(areas), size=n, p=areas / total)
    r1, r2 = rng.random(n), rng.random(n)
    s = np.sqrt(r1)
    w0, w1, w2 = 1.0 - s, s * (1.0 - r2), s * r2
    v = mesh.vertices[mesh.triangles[tri]]
    pts = w0[:, None] * v[:, 0] + w1[:, None] * v[:, 1] + w2[:, None] * v[:, 2]
    return OrientedCloud(pts, mesh.face_normals()[tri])


def evaluate(oriented, truth, mesh=None, truth_surface=None, n_samples=SURFACE_SAMPLES,
             seed=0):
    """Collect the metrics that the inputs allow; missing ones are ``None``.

    ``oriented`` and ``truth`` are the per-point clouds; ``truth_surface`` is a
    dense oriented sampling of the true surface, compared against samples of
    ``mesh``. All coordinates should be in the same (normalized) frame.
    """
    pgp = pgp90(oriented, truth) if truth is not None else None
    nc_p = normal_consistency(truth, oriented) if truth is not None else None
    cd = nc_s = None
    if mesh is not None and truth_surface is not None:
        samples = sample_mesh(mesh, n_samples, seed)
        cd = chamfer(truth_surface, samples)
        nc_s = normal_consistency(truth_surface, samples)
    return MetricReport(pgp, cd, nc_p, nc_s)
