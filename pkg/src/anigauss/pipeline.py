"""End-to-end reconstruction: points in, oriented points and a mesh out."""

import hashlib
import json
import os
import time
import warnings
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from . import _accel, io
from .adaptive import (ADAPTIVE, FIXED_AXES, USER, VelocitySet, covariance_eigen,
                       parse_velocities, pgr_velocities, select_velocities)
from .errors import ConvergenceWarning, NoSurfaceError, ParseError, ReconError, StageError
from .field import (DEFAULT_MARGIN, IndicatorField, OrientedCloud, _evaluator,
                    build_query_grid, extract_normals, marching_cubes, refine_to_depth)
from .kernel import WidthParams, compute_widths
from .solver import choose_path, solve
from .system import GiB, PointCloud, SolveConfig

SCHEMA = 1
NOISY_PRESET = {"alpha": 3.5, "depth": 7}

# fixed directions used when adaptivity is off: the axes, then face and body diagonals
_AXES = np.array([
    [1, 0, 0], [0, 1, 0], [0, 0, 1],
    [1, 1, 0], [1, 0, 1], [0, 1, 1], [1, -1, 0], [1, 0, -1], [0, 1, -1],
    [1, 1, 1], [1, 1, -1], [1, -1, 1], [-1, 1, 1],
], dtype=np.float64)
_AXES /= np.linalg.norm(_AXES, axis=1, keepdims=True)


@dataclass
class RunConfig:
    input: Optional[str] = None
    alpha: float = 2.0
    L: float = 1.0
    m: int = 3
    epsilon: float = 0.001
    w_min: float = 0.0015
    k_w: int = 7
    w_max: Optional[float] = None
    batch_size: int = 5000
    depth: int = 8
    dilation: int = 2
    margin: float = DEFAULT_MARGIN
    adaptive: str = "on"
    velocities: Optional[str] = None
    path: str = "auto"
    pgr_compat: bool = False
    noisy: bool = False
    seed: int = 0
    subsample: int = 5000
    cg_tol: float = 1e-10
    cg_max_iter: int = 2000
    jacobi: bool = False
    memory_budget: int = 8 * GiB

    def __post_init__(self):
        if self.adaptive not in ("on", "off", "append"):
            raise ValueError("adaptive must be on, off or append")
        if self.L < 0:
            raise ValueError("L must be >= 0")
        if not 1 <= self.m <= len(_AXES):
            raise ValueError(f"m must lie in [1, {len(_AXES)}]")
        self.solve_config()  # validates alpha, depth and the rest

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def with_noisy_preset(self):
        return RunConfig(**{**asdict(self), **NOISY_PRESET, "noisy": True})

    def solve_config(self):
        return SolveConfig(alpha=self.alpha, batch_size=self.batch_size, L=self.L, m=self.m,
                           cg_tol=self.cg_tol, cg_max_iter=self.cg_max_iter, depth=self.depth,
                           memory_budget=self.memory_budget, jacobi=self.jacobi)

    def width_params(self):
        return WidthParams(self.w_min, self.k_w, self.w_max)


@dataclass
class RunManifest:
    config: dict
    input: dict = field(default_factory=dict)
    transform: dict = field(default_factory=dict)
    velocities: dict = field(default_factory=dict)
    eigen: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    iso_value: Optional[float] = None
    timings: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    partial: bool = False
    notes: list = field(default_factory=list)
    backend: str = ""
    schema: int = SCHEMA

    def as_dict(self):
        return asdict(self)

    def dumps(self):
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            d = json.load(fh)
        if d.get("schema") != SCHEMA:
            raise ParseError(f"unsupported manifest schema {d.get('schema')!r}", path)
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class PipelineResult:
    cloud: PointCloud
    oriented: OrientedCloud  # original coordinates
    mesh: Optional[object]  # TriangleMesh in original coordinates, None on failure
    manifest: RunManifest
    mu: np.ndarray = None
    field: Optional[IndicatorField] = None
    error: Optional[Exception] = None

    @property
    def converged(self):
        return bool(self.manifest.solver.get("converged", True))

    def oriented_normalized(self):
        return OrientedCloud(self.cloud.positions, self.oriented.normals,
                             self.oriented.degenerate)

    def mesh_normalized(self):
        if self.mesh is None:
            return None
        return type(self.mesh)(self.cloud.to_normalized(self.mesh.vertices), self.mesh.triangles)


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def fixed_velocities(m, L):
    return VelocitySet(_AXES[:m] * L, FIXED_AXES)


def choose_velocities(cloud, cfg):
    """Velocity set and the eigen frame it came from (``None`` when unused)."""
    if cfg.pgr_compat or cfg.L == 0:
        return pgr_velocities(), None
    frame = None
    if cfg.adaptive != "off":
        frame = covariance_eigen(cloud, cfg.subsample, cfg.seed)
    if cfg.velocities:
        user = parse_velocities(cfg.velocities)
        if cfg.adaptive == "append":
            return user.union(select_velocities(frame, cfg.L, cfg.epsilon), USER), frame
        return user, None
    if cfg.adaptive == "off":
        return fixed_velocities(cfg.m, cfg.L), None
    chosen = select_velocities(frame, cfg.L, cfg.epsilon)
    if cfg.adaptive == "append":
        return fixed_velocities(cfg.m, cfg.L).union(chosen, ADAPTIVE), frame
    return chosen, frame


def coarse_depth(widths, depth, dilation):
    """Shallowest useful depth: the dilated band must still bridge the sample gaps."""
    w = float(np.quantile(widths, 0.9))
    d = int(np.floor(np.log2(max(dilation, 1) / w))) if w > 0 else depth
    return int(min(max(d, 3), depth, 7))


class _Stages:
    def __init__(self, manifest):
        self.manifest = manifest

    @contextmanager
    def __call__(self, name):
        t0 = time.perf_counter()
        try:
            yield
        except StageError:
            raise
        except (ReconError, ValueError, MemoryError, ArithmeticError) as exc:
            raise StageError(name, exc) from exc
        finally:
            self.manifest.timings[name] = round(time.perf_counter() - t0, 6)


def run_pipeline(cfg, cloud=None):
    """Run every stage on ``cloud`` (or ``cfg.input``); nothing is written to disk."""
    manifest = RunManifest(config=asdict(cfg), backend=_accel.backend_name())
    stage = _Stages(manifest)

    with stage("read"):
        if cloud is None:
            if cfg.input is None:
                raise ValueError("no input given")
            cloud = io.read_points(cfg.input)
            manifest.input = {"path": os.path.abspath(cfg.input),
                              "sha256": file_sha256(cfg.input)}
        if len(cloud) < io.MIN_POINTS:
            raise ParseError(f"need at least {io.MIN_POINTS} points, got {len(cloud)}",
                             cfg.input)
        manifest.input["n_points"] = len(cloud)
        manifest.transform = {"scale": float(cloud.scale), "offset": cloud.offset.tolist()}

    pts = cloud.positions
    wp = cfg.width_params()
    with stage("widths"):
        tree = cKDTree(pts)
        widths = compute_widths(pts, pts, wp, tree=tree)

    with stage("velocities"):
        velocities, frame = choose_velocities(cloud, cfg)
        manifest.velocities = velocities.as_dict()
        if frame is not None:
            manifest.eigen = {"lambdas": frame.lambdas.tolist(),
                              "vectors": frame.vectors.tolist(),
                              "thin": bool(frame.lambdas[2] <= cfg.epsilon)}

    with stage("solve"):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ConvergenceWarning)
            mu, report = solve(velocities, cloud, widths, cfg.solve_config(),
                               choose_path(len(velocities), cfg.path))
        manifest.solver = report.as_dict()
        manifest.timings["cg"] = round(report.seconds, 6)
        manifest.notes += [str(w.message) for w in caught]

    with stage("normals"):
        oriented = extract_normals(mu, cloud)
        if np.any(oriented.degenerate):
            manifest.notes.append(f"{int(oriented.degenerate.sum())} degenerate normals "
                                  "copied from neighbours")
    result = PipelineResult(cloud, OrientedCloud(cloud.original_positions(), oriented.normals,
                                                 oriented.degenerate),
                            None, manifest, mu)

    evaluate = _evaluator(mu, velocities, pts, wp, cfg.batch_size)
    with stage("isovalue"):
        iso = float(np.mean(evaluate(pts)))
        manifest.iso_value = iso

    with stage("grid"):
        d0 = coarse_depth(widths, cfg.depth, cfg.dilation)
        coarse = build_query_grid(pts, d0, cfg.dilation, cfg.margin)
        coarse_values = evaluate(coarse.corners)
        grid, values = refine_to_depth(coarse, evaluate, iso, cfg.depth, cfg.margin,
                                       values=coarse_values, seeds=pts)
        result.field = IndicatorField(values, iso)
        manifest.grid = {"coarse_depth": d0, "depth": cfg.depth,
                         "coarse_corners": len(coarse), "corners": len(grid),
                         "cells": int(len(grid.cells))}

    try:
        with stage("mesh"):
            result.mesh = marching_cubes(grid, result.field, cloud)
    except StageError as exc:
        if not isinstance(exc.cause, NoSurfaceError):
            raise
        manifest.partial = True
        manifest.notes.append(str(exc.cause))
        result.error = exc
    return result


def write_outputs(result, out_dir, stem):
    """Write the oriented cloud, mesh (when present) and manifest; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    base = os.path.join(out_dir, stem)
    paths = {"oriented": io.write_points_ply(base + ".oriented.ply", result.oriented.positions,
                                             result.oriented.normals)}
    if result.mesh is not None and len(result.mesh.triangles):
        paths["mesh_obj"] = io.write_mesh_obj(base + ".mesh.obj", result.mesh)
        paths["mesh_ply"] = io.write_mesh_ply(base + ".mesh.ply", result.mesh)
    paths["manifest"] = base + ".manifest.json"
    result.manifest.outputs = {k: os.path.abspath(v) for k, v in paths.items()}
    with open(paths["manifest"], "w") as fh:
        fh.write(result.manifest.dumps() + "\n")
    return paths


def stem_of(path):
    name = os.path.basename(str(path))
    for ext in (".ply", ".xyz", ".txt", ".pts", ".obj"):
        if name.lower().endswith(ext):
            return name[: -len(ext)]
    return name
