import json
import os

import numpy as np
import pytest

from anigauss import io, pipeline
from anigauss.cli import main
from anigauss.errors import NoSurfaceError, StageError
from anigauss.field import OrientedCloud
from anigauss.metrics import pgp90
from anigauss.pipeline import (NOISY_PRESET, SCHEMA, RunConfig, RunManifest, choose_velocities,
                               coarse_depth, run_pipeline, stem_of)
from anigauss.shapes import ShapeSpec, generate
from anigauss.system import PointCloud

FAST = dict(depth=5)


def no_surface(*args, **kwargs):
    raise NoSurfaceError()


@pytest.fixture(scope="module")
def sphere_file(tmp_path_factory):
    cloud = generate(ShapeSpec("sphere", {}, 400, 0.0, 1))
    path = tmp_path_factory.mktemp("in") / "ball.ply"
    io.write_points(str(path), cloud.original_positions(), cloud.gt_normals)
    return str(path)


@pytest.fixture(scope="module")
def sphere_run(sphere_file):
    return run_pipeline(RunConfig(input=sphere_file, **FAST))


class TestRunPipeline:
    def test_orientation_and_mesh(self, sphere_run):
        res = sphere_run
        truth = OrientedCloud(res.cloud.positions, res.cloud.gt_normals)
        assert pgp90(res.oriented_normalized(), truth) >= 0.99
        assert res.mesh.is_watertight() and res.mesh.euler_characteristic() == 2
        assert res.converged and not res.manifest.partial

    def test_outputs_in_original_frame(self, sphere_run):
        res = sphere_run
        np.testing.assert_allclose(res.oriented.positions, res.cloud.original_positions())
        r = np.linalg.norm(res.mesh.vertices, axis=1)
        assert abs(r.mean() - 0.4) < 0.02

    def test_manifest_contents(self, sphere_run):
        m = sphere_run.manifest
        assert m.schema == SCHEMA
        for key in ("alpha", "L", "m", "epsilon", "w_min", "k_w", "batch_size", "depth", "seed",
                    "path"):
            assert key in m.config
        assert m.velocities["provenance"] == "adaptive"
        assert {"read", "widths", "velocities", "solve", "grid", "mesh"} <= set(m.timings)
        assert len(m.input["sha256"]) == 64
        assert m.iso_value == pytest.approx(0.5, abs=0.1)
        back = RunManifest(**json.loads(m.dumps()))
        assert back.as_dict() == json.loads(m.dumps())

    def test_pgr_compat(self):
        cloud = generate(ShapeSpec("sphere", {}, 300, 0.0, 2))
        res = run_pipeline(RunConfig(pgr_compat=True, **FAST), cloud)
        v = res.manifest.velocities
        assert v["provenance"] == "fixed_axes"
        assert np.array_equal(v["vectors"], [[0.0, 0.0, 0.0]])
        truth = OrientedCloud(cloud.positions, cloud.gt_normals)
        assert pgp90(res.oriented_normalized(), truth) >= 0.99

    def test_no_surface_is_partial(self, monkeypatch):
        cloud = generate(ShapeSpec("sphere", {}, 200, 0.0, 3))
        monkeypatch.setattr(pipeline, "marching_cubes", no_surface)
        res = run_pipeline(RunConfig(**FAST), cloud)
        assert res.mesh is None and res.manifest.partial
        assert any("no surface crossed" in n for n in res.manifest.notes)

    def test_stage_attribution(self, tmp_path):
        bad = tmp_path / "bad.xyz"
        bad.write_text("0 0 0\n1 nope 0\n")
        with pytest.raises(StageError) as exc:
            run_pipeline(RunConfig(input=str(bad)))
        assert exc.value.stage == "read" and ":2:" in str(exc.value)


class TestVelocityChoice:
    cloud = PointCloud.normalized(np.random.default_rng(0).random((100, 3)))

    def test_off_uses_fixed_axes(self):
        v, frame = choose_velocities(self.cloud, RunConfig(adaptive="off", m=5, L=2))
        assert len(v) == 5 and frame is None
        np.testing.assert_allclose(np.linalg.norm(v.vectors, axis=1), 2.0)

    def test_user_vectors(self):
        v, _ = choose_velocities(self.cloud, RunConfig(velocities="1,0,0;0,0,2"))
        assert v.provenance == "user" and len(v) == 2

    def test_append(self):
        v, frame = choose_velocities(self.cloud, RunConfig(adaptive="append", m=2))
        assert len(v) == 5 and frame is not None

    def test_zero_L_is_isotropic(self):
        v, _ = choose_velocities(self.cloud, RunConfig(L=0))
        assert np.array_equal(v.vectors, np.zeros((1, 3)))

    @pytest.mark.parametrize("kw", [dict(adaptive="maybe"), dict(L=-1), dict(m=0), dict(m=14),
                                    dict(alpha=0.5), dict(depth=0)])
    def test_invalid_config(self, kw):
        with pytest.raises(ValueError):
            RunConfig(**kw)


def test_noisy_preset():
    cfg = RunConfig().with_noisy_preset()
    assert (cfg.alpha, cfg.depth, cfg.noisy) == (NOISY_PRESET["alpha"], NOISY_PRESET["depth"],
                                                  True)


def test_coarse_depth_bounds():
    assert coarse_depth(np.full(10, 1e-6), 8, 2) == 7
    assert coarse_depth(np.full(10, 0.5), 8, 2) == 3
    assert coarse_depth(np.full(10, 1 / 64), 8, 2) == 7
    assert coarse_depth(np.full(10, 1 / 16), 8, 2) == 5
    assert coarse_depth(np.full(10, 1e-6), 4, 2) == 4


def test_stem():
    assert stem_of("/a/b/Bunny.PLY") == "Bunny" and stem_of("x.tar") == "x.tar"


# ------------------------------------------------------------------ CLI


def run_cli(*args):
    return main([str(a) for a in args])


class TestCLI:
    def test_four_files_and_metrics(self, sphere_file, tmp_path):
        assert run_cli(sphere_file, "--depth", 5, "--out", tmp_path, "-q") == 0
        names = sorted(os.listdir(tmp_path))
        assert names == ["ball.manifest.json", "ball.mesh.obj", "ball.mesh.ply",
                         "ball.metrics.json", "ball.oriented.ply"]
        rep = json.load(open(tmp_path / "ball.metrics.json"))
        assert rep["pgp90"] >= 0.99
        oriented = io.read_ply(str(tmp_path / "ball.oriented.ply"))
        assert oriented["normals"].shape == (400, 3)

    def test_reproduce_byte_identical(self, sphere_file, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run_cli(sphere_file, "--depth", 5, "--out", a, "-q") == 0
        assert run_cli("reproduce", a / "ball.manifest.json", "--out", b, "-q") == 0
        for name in ("ball.oriented.ply", "ball.mesh.obj", "ball.mesh.ply"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_no_surface_exit_5(self, sphere_file, tmp_path, monkeypatch):
        monkeypatch.setattr(pipeline, "marching_cubes", no_surface)
        assert run_cli(sphere_file, "--depth", 5, "--out", tmp_path, "-q") == 5
        assert not (tmp_path / "ball.mesh.obj").exists()
        assert (tmp_path / "ball.oriented.ply").exists()
        m = json.load(open(tmp_path / "ball.manifest.json"))
        assert m["partial"] and any("no surface crossed" in n for n in m["notes"])

    def test_not_converged_exit_4(self, sphere_file, tmp_path):
        code = run_cli(sphere_file, "--depth", 5, "--cg-max-iter", 2, "--out", tmp_path, "-q")
        assert code == 4
        assert (tmp_path / "ball.mesh.obj").exists()

    def test_parse_error_exit_2(self, tmp_path):
        bad = tmp_path / "bad.xyz"
        bad.write_text("1 2 3\nx y z\n")
        assert run_cli(bad, "--out", tmp_path, "-q") == 2
        assert run_cli(tmp_path / "missing.xyz", "-q") == 2

    def test_resource_error_exit_3(self, sphere_file, tmp_path):
        assert run_cli(sphere_file, "--memory-gib", 1e-6, "--out", tmp_path, "-q") == 3

    def test_noisy_flag_defaults(self):
        from anigauss.cli import _recon_parser, config_from_args
        cfg = config_from_args(_recon_parser().parse_args(["x.xyz", "--noisy"]))
        assert (cfg.alpha, cfg.depth) == (3.5, 7)
        cfg = config_from_args(_recon_parser().parse_args(["x.xyz", "--noisy", "--alpha", "4"]))
        assert (cfg.alpha, cfg.depth) == (4.0, 7)

    def test_gen_and_eval(self, tmp_path, capsys):
        out, surf = tmp_path / "t.ply", tmp_path / "t_surface.ply"
        assert run_cli("gen", "torus", "--n", 500, "--seed", 4, "--out", out,
                       "--surface-out", surf, "--surface-n", 2000) == 0
        data = io.read_ply(str(out))
        assert data["points"].shape == (500, 3) and data["normals"] is not None
        capsys.readouterr()
        js = tmp_path / "r.json"
        assert run_cli("eval", "--pred", out, "--gt", out, "--json", js) == 0
        rep = json.load(open(js))
        assert rep["pgp90"] == 1.0 and rep["chamfer"] == 0.0 and rep["nc_surface"] == 1.0

    def test_eval_mesh_against_surface(self, sphere_file, tmp_path):
        gt = tmp_path / "gt.ply"
        assert run_cli("gen", "sphere", "--n", 400, "--seed", 1, "--out", tmp_path / "s.ply",
                       "--surface-out", gt, "--surface-n", 5000) == 0
        assert run_cli(sphere_file, "--depth", 5, "--out", tmp_path, "-q") == 0
        js = tmp_path / "e.json"
        assert run_cli("eval", "--pred", tmp_path / "ball.mesh.ply", "--gt", gt,
                       "--samples", 5000, "--json", js) == 0
        rep = json.load(open(js))
        assert rep["chamfer_x1e5"] < 100 and rep["nc_surface"] > 0.95
