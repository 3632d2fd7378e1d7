"""Command line entry point.

    recon <input> [options]           reconstruct a point cloud
    recon gen <shape> [options]       write a synthetic shape
    recon eval --pred P --gt G        score a reconstruction
    recon reproduce <manifest.json>   rerun a recorded configuration
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import io, metrics
from .errors import ParseError, ReconError, StageError
from .field import OrientedCloud, TriangleMesh
from .pipeline import (NOISY_PRESET, RunConfig, RunManifest, file_sha256, run_pipeline,
                       stem_of, write_outputs)
from .shapes import DEFAULT_DIMS, KINDS, ShapeSpec, generate, sample_surface
from .system import GiB, PointCloud

log = logging.getLogger("recon")

EXIT_OK = 0
EXIT_NOT_CONVERGED = 4
EXIT_NO_SURFACE = 5


def _recon_parser():
    p = argparse.ArgumentParser(prog="recon", description="Reconstruct a watertight surface "
                                "and consistent normals from an unoriented point cloud.")
    p.add_argument("input", help="XYZ or PLY point cloud")
    p.add_argument("--alpha", type=float, help="regularization scale >= 1 (default 2, noisy 3.5)")
    p.add_argument("--L", type=float, default=1.0, help="velocity modulus; 0 = isotropic")
    p.add_argument("--m", type=int, default=3, help="number of fixed-axis velocities")
    p.add_argument("--epsilon", type=float, default=0.001, help="thin-structure threshold")
    p.add_argument("--wmin", type=float, default=0.0015, help="minimum width")
    p.add_argument("--wmax", type=float, default=None, help="optional maximum width")
    p.add_argument("--kw", type=int, default=7, help="neighbours in the width estimate")
    p.add_argument("--batch", type=int, default=5000, help="batch size N_s")
    p.add_argument("--depth", type=int, help="grid depth (default 8, noisy 7)")
    p.add_argument("--dilation", type=int, default=2, help="band dilation in cells")
    p.add_argument("--adaptive", choices=("on", "off", "append"), default="on")
    p.add_argument("--velocities", help="explicit velocities 'x,y,z;x,y,z;...'")
    p.add_argument("--path", choices=("auto", "minnorm", "lsq"), default="auto")
    p.add_argument("--pgr-compat", action="store_true", help="single zero velocity")
    p.add_argument("--noisy", action="store_true",
                   help=f"preset for noisy input: {NOISY_PRESET}")
    p.add_argument("--gt", help="ground truth: mesh, or oriented points")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--subsample", type=int, default=5000, help="PCA subsample size")
    p.add_argument("--cg-tol", type=float, default=1e-10)
    p.add_argument("--cg-max-iter", type=int, default=2000)
    p.add_argument("--jacobi", action="store_true", help="Jacobi-preconditioned CG")
    p.add_argument("--memory-gib", type=float, default=8.0, help="budget for the dense system")
    p.add_argument("-q", "--quiet", action="store_true")
    return p


def config_from_args(a):
    alpha = a.alpha if a.alpha is not None else (NOISY_PRESET["alpha"] if a.noisy else 2.0)
    depth = a.depth if a.depth is not None else (NOISY_PRESET["depth"] if a.noisy else 8)
    return RunConfig(input=a.input, alpha=alpha, L=a.L, m=a.m, epsilon=a.epsilon,
                     w_min=a.wmin, k_w=a.kw, w_max=a.wmax, batch_size=a.batch, depth=depth,
                     dilation=a.dilation, adaptive=a.adaptive, velocities=a.velocities,
                     path=a.path, pgr_compat=a.pgr_compat, noisy=a.noisy, seed=a.seed,
                     subsample=a.subsample, cg_tol=a.cg_tol, cg_max_iter=a.cg_max_iter,
                     jacobi=a.jacobi, memory_budget=int(a.memory_gib * GiB))


def _load_truth(path, cloud, n_samples, seed):
    """Per-point truth normals (or None) and a normalized oriented surface sample."""
    data = io.read_any(path)
    pts = cloud.to_normalized(data["points"])
    if data["faces"] is not None and len(data["faces"]):
        surface = metrics.sample_mesh(TriangleMesh(pts, data["faces"]), n_samples, seed)
        return None, surface
    if data["normals"] is None:
        raise ParseError("ground truth points need normals", path)
    truth = OrientedCloud(pts, data["normals"])
    per_point = truth if len(pts) == len(cloud) else None
    return per_point, truth


def _metrics_for(result, gt_path, seed):
    cloud = result.cloud
    truth = None
    if cloud.gt_normals is not None:
        truth = OrientedCloud(cloud.positions, cloud.gt_normals)
    surface = None
    if gt_path:
        per_point, surface = _load_truth(gt_path, cloud, metrics.SURFACE_SAMPLES, seed)
        if truth is None:
            truth = per_point
    if truth is None and surface is None:
        return None
    return metrics.evaluate(result.oriented_normalized(), truth, result.mesh_normalized(),
                            surface, seed=seed)


def run(cfg, out_dir, gt=None, quiet=False):
    """Run, write everything, and return ``(exit code, result)``."""
    try:
        result = run_pipeline(cfg)
    except StageError as exc:
        log.error("%s", exc)
        return exc.exit_code, None
    stem = stem_of(cfg.input)
    paths = write_outputs(result, out_dir, stem)
    report = _metrics_for(result, gt, cfg.seed)
    if report is not None:
        mpath = os.path.join(out_dir, stem + ".metrics.json")
        with open(mpath, "w") as fh:
            json.dump(report.as_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        paths["metrics"] = mpath
        if not quiet:
            print(report.as_text())
    if not quiet:
        for key, path in paths.items():
            print(f"{key}: {path}")
    if result.error is not None:
        log.error("%s", result.error)
        return EXIT_NO_SURFACE, result
    if not result.converged:
        log.warning("CG did not reach the tolerance; outputs were written anyway")
        return EXIT_NOT_CONVERGED, result
    return EXIT_OK, result


def main_recon(argv):
    a = _recon_parser().parse_args(argv)
    _setup_logging(a.quiet)
    try:
        cfg = config_from_args(a)
    except ValueError as exc:
        log.error("%s", exc)
        return 2
    return run(cfg, a.out, a.gt, a.quiet)[0]


def main_gen(argv):
    p = argparse.ArgumentParser(prog="recon gen", description="Write a synthetic shape "
                                "with exact normals as an oriented PLY.")
    p.add_argument("shape", choices=KINDS)
    p.add_argument("--n", type=int, default=5000, help="number of points")
    p.add_argument("--sigma", type=float, default=0.0, help="noise, fraction of bbox diagonal")
    p.add_argument("--seed", type=int, default=0)
    dims = sorted({k for d in DEFAULT_DIMS.values() for k in d})
    for k in dims:
        p.add_argument(f"--{k}", type=float, help=f"shape dimension '{k}'")
    p.add_argument("--out", help="output path (.ply or .xyz)")
    p.add_argument("--surface-out", help="also write a clean dense surface sample here")
    p.add_argument("--surface-n", type=int, default=metrics.SURFACE_SAMPLES)
    a = p.parse_args(argv)
    given = {k: getattr(a, k) for k in DEFAULT_DIMS[a.shape] if getattr(a, k) is not None}
    spec = ShapeSpec(a.shape, given, a.n, a.sigma, a.seed)
    cloud = generate(spec)
    out = a.out or f"{a.shape}.ply"
    io.write_points(out, cloud.original_positions(), cloud.gt_normals)
    print(out)
    if a.surface_out:
        pts, nrm = sample_surface(spec, a.surface_n, np.random.default_rng(a.seed + 1))
        io.write_points(a.surface_out, pts, nrm)
        print(a.surface_out)
    return EXIT_OK


def main_eval(argv):
    p = argparse.ArgumentParser(prog="recon eval", description="Score a reconstruction "
                                "against ground truth, in the unit box of the ground truth.")
    p.add_argument("--pred", required=True, help="mesh (PLY/OBJ) or oriented points")
    p.add_argument("--gt", required=True, help="mesh or oriented points")
    p.add_argument("--samples", type=int, default=metrics.SURFACE_SAMPLES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", help="write the report here as JSON")
    a = p.parse_args(argv)
    pred, gt = io.read_any(a.pred), io.read_any(a.gt)
    frame = PointCloud.normalized(gt["points"])
    n = a.samples

    def surface(data, seed):
        pts = frame.to_normalized(data["points"])
        if data["faces"] is not None and len(data["faces"]):
            return metrics.sample_mesh(TriangleMesh(pts, data["faces"]), n, seed)
        if data["normals"] is None:
            return None
        return OrientedCloud(pts, data["normals"])

    s_pred, s_gt = surface(pred, a.seed), surface(gt, a.seed + 1)
    pgp = nc_p = cd = nc_s = None
    if (pred["faces"] is None and gt["faces"] is None and s_pred is not None
            and s_gt is not None and len(s_pred) == len(s_gt)):
        pgp = metrics.pgp90(s_pred, s_gt)
        nc_p = metrics.normal_consistency(s_gt, s_pred)
    if s_pred is not None and s_gt is not None:
        cd = metrics.chamfer(s_gt, s_pred)
        nc_s = metrics.normal_consistency(s_gt, s_pred)
    elif s_gt is not None or s_pred is not None:
        cd = metrics.chamfer(frame.to_normalized(gt["points"]),
                             frame.to_normalized(pred["points"]))
    report = metrics.MetricReport(pgp, cd, nc_p, nc_s)
    print(report.as_text())
    if a.json:
        with open(a.json, "w") as fh:
            json.dump(report.as_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    return EXIT_OK


def main_reproduce(argv):
    p = argparse.ArgumentParser(prog="recon reproduce",
                                description="Rerun the configuration stored in a manifest.")
    p.add_argument("manifest")
    p.add_argument("--out", help="output directory (default: next to the manifest)")
    p.add_argument("--gt")
    p.add_argument("-q", "--quiet", action="store_true")
    a = p.parse_args(argv)
    _setup_logging(a.quiet)
    manifest = RunManifest.load(a.manifest)
    cfg = RunConfig.from_dict(manifest.config)
    if manifest.input.get("path"):
        cfg.input = manifest.input["path"]
    recorded = manifest.input.get("sha256")
    if recorded and cfg.input and os.path.exists(cfg.input) and file_sha256(cfg.input) != recorded:
        log.warning("input file changed since the manifest was written")
    out = a.out or os.path.dirname(os.path.abspath(a.manifest))
    return run(cfg, out, a.gt, a.quiet)[0]


def _setup_logging(quiet):
    logging.basicConfig(level=logging.ERROR if quiet else logging.INFO,
                        format="recon: %(levelname)s: %(message)s")


COMMANDS = {"gen": main_gen, "eval": main_eval, "reproduce": main_reproduce}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        if argv and argv[0] in COMMANDS:
            return COMMANDS[argv[0]](argv[1:])
        return main_recon(argv)
    except ReconError as exc:
        log.error("%s", exc)
        return exc.exit_code
    except OSError as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
