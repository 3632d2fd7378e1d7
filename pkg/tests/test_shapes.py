import numpy as np
import pytest

from anigauss.shapes import DEFAULT_DIMS, KINDS, ShapeSpec, generate, implicit_residual, sample_surface


def test_sphere_exact():
    spec = ShapeSpec("sphere", {"radius": 0.4}, 5000, 0.0, 3)
    pts, nrm = sample_surface(spec)
    np.testing.assert_allclose(np.linalg.norm(pts, axis=1), 0.4, atol=1e-12)
    np.testing.assert_allclose(pts / 0.4, nrm, atol=1e-12)


def test_plate_face_shares():
    # each large face holds 0.25 of the 0.53 total area
    n = 20000
    spec = ShapeSpec("plate", {}, n, 0.0, 5)
    pts, nrm = sample_surface(spec)
    expected = 0.25 / (2 * 0.25 + 4 * 0.5 * 0.015)
    sd = np.sqrt(n * expected * (1 - expected))
    for sign in (1.0, -1.0):
        k = np.count_nonzero(nrm[:, 2] == sign)
        assert abs(k - expected * n) < 4 * sd


def test_noise_magnitude():
    spec = ShapeSpec("sphere", {}, 10000, 0.005, 8)
    clean, _ = sample_surface(spec, rng=np.random.default_rng(8))
    cloud = generate(spec)
    disp = cloud.original_positions() - clean
    s = 0.005 * spec.diagonal()
    # per coordinate the folded normal has mean s*sqrt(2/pi); the 3D norm has s*sqrt(8/pi)
    assert np.abs(disp).mean() == pytest.approx(s * np.sqrt(8 / np.pi) / 2, rel=0.05)
    assert np.linalg.norm(disp, axis=1).mean() == pytest.approx(s * np.sqrt(8 / np.pi), rel=0.05)


@pytest.mark.parametrize("kind", KINDS)
def test_on_surface_and_unit_normals(kind):
    spec = ShapeSpec(kind, {}, 3000, 0.0, 1)
    pts, nrm = sample_surface(spec)
    assert pts.shape == (3000, 3)
    np.testing.assert_allclose(np.linalg.norm(nrm, axis=1), 1.0, atol=1e-14)
    assert np.abs(implicit_residual(spec, pts)).max() <= 1e-10


@pytest.mark.parametrize("kind", KINDS)
def test_normals_point_outward(kind):
    spec = ShapeSpec(kind, {}, 2000, 0.0, 2)
    pts, nrm = sample_surface(spec)
    h = 1e-4
    assert np.all(implicit_residual(spec, pts + h * nrm) > 0)


def test_torus_area_density():
    # the outer half of the tube (cos theta > 0) carries (pi R + 2r)/(2 pi R) of the area
    spec = ShapeSpec("torus", {}, 40000, 0.0, 4)
    pts, nrm = sample_surface(spec)
    frac = np.mean(np.einsum("ij,ij->i", nrm[:, :2], pts[:, :2]) > 0)
    R, r = 0.3, 0.1
    assert frac == pytest.approx((np.pi * R + 2 * r) / (2 * np.pi * R), abs=0.01)


def test_hole_wall():
    spec = ShapeSpec("plate_with_hole", {}, 20000, 0.0, 6)
    pts, nrm = sample_surface(spec)
    radial = np.hypot(pts[:, 0], pts[:, 1])
    assert np.all(radial >= 0.1 - 1e-12)
    wall = np.abs(radial - 0.1) < 1e-12
    assert wall.any()
    np.testing.assert_allclose(nrm[wall, :2], -pts[wall, :2] / 0.1, atol=1e-12)


@pytest.mark.parametrize("kind", KINDS)
def test_deterministic(kind):
    a, b = generate(ShapeSpec(kind, seed=11)), generate(ShapeSpec(kind, seed=11))
    assert np.array_equal(a.positions, b.positions)
    assert np.array_equal(a.gt_normals, b.gt_normals)
    c = generate(ShapeSpec(kind, seed=12))
    assert not np.array_equal(a.positions, c.positions)


def test_generate_normalized():
    cloud = generate(ShapeSpec("torus", {}, 1000))
    assert cloud.positions.min() >= 0 and cloud.positions.max() <= 1
    assert len(cloud) == 1000


@pytest.mark.parametrize("kind,dims,kw", [
    ("cube", {}, {}),
    ("sphere", {}, {"n_points": 99}),
    ("sphere", {}, {"noise_sigma": -0.1}),
    ("plate", {"thickness": 0.0}, {}),
    ("torus", {"minor": 0.3, "major": 0.3}, {}),
    ("plate_with_hole", {"hole": 0.3}, {}),
])
def test_invalid(kind, dims, kw):
    with pytest.raises(ValueError):
        ShapeSpec(kind, dims, **kw)


def test_defaults_cover_all_kinds():
    assert set(DEFAULT_DIMS) == set(KINDS)
