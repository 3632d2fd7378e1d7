"""Velocity selection from the principal axes of the cloud.

If the smallest covariance eigenvalue ``lam3`` exceeds ``epsilon`` the three
velocities are ``L v1, L v2, L v3``. Otherwise the cloud is treated as a thin
structure and the third one is stretched to ``2 eps L / (lam3 + 0.1 eps) v3``.
"""

from dataclasses import dataclass

import numpy as np

FIXED_AXES = "fixed_axes"
ADAPTIVE = "adaptive"
USER = "user"

_SIGN_TOL = 1e-9
_TIE_TOL = 1e-12


@dataclass(frozen=True)
class EigenFrame:
    lambdas: np.ndarray  # (3,), descending
    vectors: np.ndarray  # (3, 3), row k is the k-th eigenvector


@dataclass
class VelocitySet:
    vectors: np.ndarray
    provenance: str = USER

    def __post_init__(self):
        self.vectors = np.atleast_2d(np.asarray(self.vectors, dtype=np.float64)).reshape(-1, 3)
        if len(self.vectors) == 0:
            raise ValueError("a velocity set needs at least one vector")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("velocities must be finite")
        if len(np.unique(self.vectors, axis=0)) != len(self.vectors):
            raise ValueError("velocities must be pairwise distinct")

    def __len__(self):
        return len(self.vectors)

    @property
    def moduli(self):
        return np.linalg.norm(self.vectors, axis=1)

    def union(self, other, provenance=None):
        rows = [v for v in self.vectors]
        for v in other.vectors:
            if not any(np.array_equal(v, r) for r in rows):
                rows.append(v)
        return VelocitySet(np.array(rows), provenance or self.provenance)

    def as_dict(self):
        return {"provenance": self.provenance, "vectors": self.vectors.tolist()}


def _canonical_sign(v):
    nz = np.flatnonzero(np.abs(v) > _SIGN_TOL)
    if len(nz) and v[nz[0]] < 0:
        return -v
    return v


def eigen_frame(cov):
    """Descending eigenpairs of a symmetric 3x3 matrix with deterministic signs."""
    lam, vec = np.linalg.eigh(np.asarray(cov, dtype=np.float64))
    lam = lam[::-1]
    vecs = [_canonical_sign(vec[:, k]) for k in range(2, -1, -1)]
    lam = np.where(lam < 0.0, 0.0, lam)
    order = list(range(3))
    # order near-equal eigenvalues by their (sign-normalised) vectors
    for _ in range(2):
        for k in range(2):
            a, b = order[k], order[k + 1]
            if abs(lam[a] - lam[b]) <= _TIE_TOL and tuple(vecs[b]) > tuple(vecs[a]):
                order[k], order[k + 1] = b, a
    # eigenvalues stay sorted; only the vectors of a tied pair are swapped
    return EigenFrame(lam.copy(), np.array([vecs[k] for k in order]))


def covariance_eigen(cloud, subsample_size=5000, seed=0):
    """PCA of a seeded uniform subsample (all points when N <= subsample_size)."""
    pts = np.asarray(getattr(cloud, "positions", cloud), dtype=np.float64)
    if len(pts) == 0:
        raise ValueError("empty cloud")
    if len(pts) > subsample_size:
        rng = np.random.default_rng(seed)
        pts = pts[np.sort(rng.choice(len(pts), size=subsample_size, replace=False))]
    if np.all(pts == pts[0]):
        return EigenFrame(np.zeros(3), np.eye(3))
    centred = pts - pts.mean(axis=0)
    cov = centred.T @ centred / len(pts)
    return eigen_frame(cov)


def thin_modulus(lam3, L, epsilon):
    """Modulus of the third velocity on the thin branch, capped at 20 L."""
    return min(2.0 * epsilon * L / (max(lam3, 0.0) + 0.1 * epsilon), 20.0 * L)


def select_velocities(frame, L=1.0, epsilon=0.001):
    if not L > 0 or not epsilon > 0:
        raise ValueError("L and epsilon must be positive")
    v1, v2, v3 = frame.vectors
    lam3 = float(frame.lambdas[2])
    third = L if lam3 > epsilon else thin_modulus(lam3, L, epsilon)
    return VelocitySet(np.array([L * v1, L * v2, third * v3]), ADAPTIVE)


def default_velocities(L=1.0):
    if not L > 0:
        raise ValueError("L must be positive")
    return VelocitySet(np.eye(3) * L, FIXED_AXES)


def pgr_velocities():
    """The single zero velocity: the isotropic configuration."""
    return VelocitySet(np.zeros((1, 3)), FIXED_AXES)


def parse_velocities(text):
    """Parse ``"x,y,z;x,y,z"`` into a user velocity set."""
    rows = [chunk for chunk in text.replace(" ", "").split(";") if chunk]
    vecs = []
    for chunk in rows:
        parts = chunk.split(",")
        if len(parts) != 3:
            raise ValueError(f"velocity {chunk!r} must have three components")
        vecs.append([float(p) for p in parts])
    return VelocitySet(np.array(vecs), USER)
