"""Synthetic test shapes with exact normals.

Every shape is centred at the origin. Points are drawn uniformly with respect
to surface area, normals are recorded, and only then is isotropic Gaussian
noise added (per-coordinate sigma = ``noise_sigma`` times the bounding-box
diagonal).
"""

from dataclasses import dataclass, field

import numpy as np

from .system import PointCloud

KINDS = ("sphere", "torus", "plate", "plate_with_hole")

DEFAULT_DIMS = {
    "sphere": {"radius": 0.4},
    "torus": {"major": 0.3, "minor": 0.1},
    "plate": {"length": 0.5, "width": 0.5, "thickness": 0.015},
    "plate_with_hole": {"length": 0.5, "width": 0.5, "thickness": 0.015, "hole": 0.1},
}


@dataclass
class ShapeSpec:
    kind: str
    dims: dict = field(default_factory=dict)
    n_points: int = 5000
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown shape {self.kind!r}; expected one of {KINDS}")
        self.dims = {**DEFAULT_DIMS[self.kind], **(self.dims or {})}
        if self.n_points < 100:
            raise ValueError("n_points must be >= 100")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if any(not v > 0 for v in self.dims.values()):
            raise ValueError("shape dimensions must be positive")
        if self.kind == "torus" and self.dims["minor"] >= self.dims["major"]:
            raise ValueError("torus minor radius must be below the major radius")
        if self.kind == "plate_with_hole":
            d = self.dims
            if 2 * d["hole"] >= min(d["length"], d["width"]):
                raise ValueError("hole does not fit inside the plate")

    def half_extents(self):
        d = self.dims
        if self.kind == "sphere":
            return np.full(3, d["radius"])
        if self.kind == "torus":
            outer = d["major"] + d["minor"]
            return np.array([outer, outer, d["minor"]])
        return 0.5 * np.array([d["length"], d["width"], d["thickness"]])

    def diagonal(self):
        return float(2.0 * np.linalg.norm(self.half_extents()))


def _sphere(rng, n, radius):
    v = rng.standard_normal((n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return radius * v, v


def _torus(rng, n, major, minor):
    # accept tube angle theta with probability proportional to the area element
    theta = np.empty(0)
    while len(theta) < n:
        t = rng.uniform(0.0, 2.0 * np.pi, 2 * n)
        u = rng.uniform(0.0, 1.0, 2 * n)
        theta = np.concatenate([theta, t[u * (major + minor) <= major + minor * np.cos(t)]])
    theta = theta[:n]
    phi = rng.uniform(0.0, 2.0 * np.pi, n)
    normals = np.stack([np.cos(theta) * np.cos(phi), np.cos(theta) * np.sin(phi),
                        np.sin(theta)], axis=1)
    ring = major + minor * np.cos(theta)
    pts = np.stack([ring * np.cos(phi), ring * np.sin(phi), minor * np.sin(theta)], axis=1)
    return pts, normals


def _box_faces(half):
    """``(axis, sign, area)`` for the six faces of an axis-aligned box."""
    faces = []
    for axis in range(3):
        a, b = [k for k in range(3) if k != axis]
        area = 4.0 * half[a] * half[b]
        faces += [(axis, 1.0, area), (axis, -1.0, area)]
    return faces


def _box(rng, n, half, hole=None):
    faces = _box_faces(half)
    areas = np.array([f[2] for f in faces])
    if hole is not None:
        areas[4:] -= np.pi * hole**2  # the two z faces lose the disc
        areas = np.append(areas, 2.0 * np.pi * hole * 2.0 * half[2])
    counts = rng.multinomial(n, areas / areas.sum())
    pts, nrm = [], []
    for k, count in enumerate(counts):
        if k == len(faces):
            ang = rng.uniform(0.0, 2.0 * np.pi, count)
            radial = np.stack([np.cos(ang), np.sin(ang), np.zeros(count)], axis=1)
            p = hole * radial
            p[:, 2] = rng.uniform(-half[2], half[2], count)
            pts.append(p)
            nrm.append(-radial)  # the wall faces into the hole
            continue
        axis, sign, _ = faces[k]
        p = rng.uniform(-half, half, (count, 3))
        if hole is not None and axis == 2:
            bad = np.hypot(p[:, 0], p[:, 1]) < hole
            while np.any(bad):
                p[bad] = rng.uniform(-half, half, (int(bad.sum()), 3))
                bad = np.hypot(p[:, 0], p[:, 1]) < hole
        p[:, axis] = sign * half[axis]
        nv = np.zeros((count, 3))
        nv[:, axis] = sign
        pts.append(p)
        nrm.append(nv)
    order = rng.permutation(n)
    return np.concatenate(pts)[order], np.concatenate(nrm)[order]


def sample_surface(spec, n=None, rng=None):
    """Noise-free ``(points, normals)`` on the shape, in its own coordinates."""
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    n = spec.n_points if n is None else int(n)
    d = spec.dims
    if spec.kind == "sphere":
        return _sphere(rng, n, d["radius"])
    if spec.kind == "torus":
        return _torus(rng, n, d["major"], d["minor"])
    hole = d["hole"] if spec.kind == "plate_with_hole" else None
    return _box(rng, n, spec.half_extents(), hole)


def generate(spec):
    """Sample ``spec`` and return a normalized cloud carrying the exact normals."""
    rng = np.random.default_rng(spec.seed)
    pts, normals = sample_surface(spec, rng=rng)
    if spec.noise_sigma > 0:
        pts = pts + rng.normal(0.0, spec.noise_sigma * spec.diagonal(), pts.shape)
    return PointCloud.normalized(pts, normals)


def implicit_residual(spec, points):
    """Zero on the clean surface, positive outside; used to check generated samples."""
    p = np.asarray(points, dtype=np.float64)
    d = spec.dims
    if spec.kind == "sphere":
        return np.linalg.norm(p, axis=1) - d["radius"]
    if spec.kind == "torus":
        ring = np.hypot(p[:, 0], p[:, 1]) - d["major"]
        return np.hypot(ring, p[:, 2]) - d["minor"]
    half = spec.half_extents()
    box = np.max(np.abs(p) / half, axis=1) - 1.0
    if spec.kind == "plate":
        return box
    # the box minus a vertical cylinder; positive outside the solid
    return np.maximum(box, d["hole"] - np.hypot(p[:, 0], p[:, 1]))
