import numpy as np
import pytest

from anigauss._mc_tables import CORNER_OFFSETS
from anigauss.errors import NoSurfaceError, ReconError
from anigauss.field import (IndicatorField, QueryGrid, TriangleMesh, build_query_grid,
                            cell_range, compute_isovalue, evaluate_indicator, extract_normals,
                            grid_from_cells, marching_cubes, refine_to_depth)
from anigauss.kernel import WidthParams
from anigauss.system import PointCloud

from conftest import fibonacci_sphere, sphere_lse

CENTER = np.array([0.5, 0.5, 0.5])


def sphere_field(x, radius=0.3, center=CENTER, sharp=0.02):
    return 1.0 / (1.0 + np.exp((np.linalg.norm(x - center, axis=-1) - radius) / sharp))


def torus_field(x, major=0.25, minor=0.1, sharp=0.02):
    p = x - CENTER
    ring = np.hypot(p[..., 0], p[..., 1]) - major
    return 1.0 / (1.0 + np.exp((np.hypot(ring, p[..., 2]) - minor) / sharp))


def full_grid(depth, margin=0.05):
    lo, hi = cell_range(depth, margin)
    ax = np.arange(lo, hi + 1)
    cells = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), -1).reshape(-1, 3)
    return grid_from_cells(depth, cells)


def mesh_of(field, pts, depth, dilation=2):
    grid = build_query_grid(pts, depth, dilation)
    return grid, marching_cubes(grid, IndicatorField(field(grid.corners), 0.5))


class TestExtractNormals:
    def test_normalization(self):
        oc = extract_normals([0, 0, 0.004, 1, 0, 0], np.array([[0, 0, 0], [1, 1, 1.0]]))
        np.testing.assert_array_equal(oc.normals[0], [0, 0, 1])
        assert list(oc.flags) == ["ok", "ok"]

    def test_degenerate_inherits(self):
        pts = np.array([[0, 0, 0], [0.1, 0, 0], [1, 1, 1.0]])
        mu = [3e-15, 0, 0, 0, 2, 0, 0, 0, -1]
        oc = extract_normals(mu, pts)
        assert oc.flags[0] == "degenerate_fallback"
        np.testing.assert_array_equal(oc.normals[0], [0, 1, 0])

    def test_all_degenerate(self):
        with pytest.raises(ReconError):
            extract_normals(np.zeros(6), np.zeros((2, 3)))

    def test_sphere_lse_inverts(self):
        pts, nrm, mu = sphere_lse(1000)
        oc = extract_normals(mu, pts)
        np.testing.assert_allclose(oc.normals, nrm, atol=1e-9)
        np.testing.assert_allclose(np.linalg.norm(oc.normals, axis=1), 1.0, atol=1e-9)

    def test_scaling_invariance(self, rng):
        pts, nrm, mu = sphere_lse(200)
        scale = np.repeat(rng.uniform(0.1, 10, 200), 3)
        a = extract_normals(mu, pts).normals
        b = extract_normals(mu * scale, pts).normals
        np.testing.assert_allclose(a, b, atol=1e-14)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            extract_normals(np.ones(5), np.zeros((2, 3)))


class TestQueryGrid:
    def test_single_cell(self):
        g = build_query_grid(np.array([[0.5, 0.5, 0.5]]), 1, 0)
        assert len(g.cells) == 1 and len(g) == 8
        np.testing.assert_array_equal(g.corners[g.cells[0]], 0.5 + 0.5 * CORNER_OFFSETS)

    def test_points_covered(self):
        pts, _ = fibonacci_sphere(3000)
        g = build_query_grid(pts, 6, 2)
        lo = g.corners[g.cells[:, 0]]
        inside = np.zeros(len(pts), dtype=bool)
        cell_set = {tuple(c) for c in g.cell_ijk}
        for i, p in enumerate(pts):
            inside[i] = tuple(np.floor(p * 64).astype(int)) in cell_set
        assert inside.all()
        assert np.all(lo >= -0.05 - 1e-12)

    def test_cell_topology(self):
        pts, _ = fibonacci_sphere(500)
        g = build_query_grid(pts, 5, 1)
        assert all(len(set(c)) == 8 for c in g.cells)
        assert g.cells.max() < len(g)
        np.testing.assert_array_equal(g.corner_ijk[g.cells[:, 0]], g.cell_ijk)
        # corners are exact lattice multiples inside the margin box
        assert np.all(g.corners * 32 == np.round(g.corners * 32))
        assert g.corners.min() >= -0.05 and g.corners.max() <= 1.05

    def test_surface_scaling(self):
        pts, _ = fibonacci_sphere(5000)
        ratio = len(build_query_grid(pts, 7, 2)) / len(build_query_grid(pts, 6, 2))
        assert 3.5 < ratio < 4.5

    def test_depth_range(self):
        with pytest.raises(ValueError):
            build_query_grid(np.zeros((1, 3)), 11)


@pytest.fixture(scope="module")
def unit_sphere():
    pts, nrm, mu = sphere_lse(4000, radius=1.0, center=(0, 0, 0))
    return pts, mu


class TestIndicator:
    def test_center_and_far(self, unit_sphere):
        pts, mu = unit_sphere
        q = np.array([[0, 0, 0], [2, 0, 0], [0, -2, 0]], dtype=float)
        v = evaluate_indicator(mu, np.zeros((1, 3)), q, pts).values
        assert v[0] == pytest.approx(1.0, abs=0.02)
        assert abs(v[1]) < 0.02 and abs(v[2]) < 0.02

    def test_random_velocities(self, unit_sphere, rng):
        pts, mu = unit_sphere
        cs = rng.standard_normal((3, 3))
        cs *= rng.uniform(0.2, 1.0, (3, 1)) / np.linalg.norm(cs, axis=1, keepdims=True)
        v = evaluate_indicator(mu, cs, np.zeros((1, 3)), pts).values
        assert v[0] == pytest.approx(1.0, abs=0.03)

    def test_separation(self, unit_sphere, rng):
        pts, mu = unit_sphere
        d = rng.standard_normal((60, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        inner = d[:30] * rng.uniform(0, 0.7, (30, 1))
        outer = d[30:] * rng.uniform(1.3, 2.5, (30, 1))
        v = evaluate_indicator(mu, np.zeros((1, 3)), np.vstack([inner, outer]), pts).values
        assert v[:30].min() - v[30:].max() >= 0.8

    def test_isovalue(self, unit_sphere):
        pts, mu = unit_sphere
        assert compute_isovalue(mu, np.zeros((1, 3)), pts) == pytest.approx(0.5, abs=0.05)
        assert compute_isovalue(np.zeros_like(mu), np.zeros((1, 3)), pts) == 0.0

    def test_isovalue_linear(self):
        pts, _, mu = sphere_lse(400)
        cs = np.eye(3)
        base = compute_isovalue(mu, cs, pts)
        assert compute_isovalue(4.0 * mu, cs, pts) == 4.0 * base
        assert compute_isovalue(3.7 * mu, cs, pts) == pytest.approx(3.7 * base, rel=1e-13)

    def test_isovalue_monotone_in_sigma(self):
        pts, nrm, mu = sphere_lse(400)
        values = [compute_isovalue(mu * s, np.zeros((1, 3)), pts) for s in (0.5, 1.0, 2.0)]
        assert values[0] < values[1] < values[2]

    def test_batches_do_not_matter(self, rng):
        pts, _, mu = sphere_lse(300)
        q = rng.random((50, 3))
        a = evaluate_indicator(mu, np.eye(3), q, pts, batch_size=7).values
        b = evaluate_indicator(mu, np.eye(3), q, pts, batch_size=5000).values
        np.testing.assert_allclose(a, b, rtol=1e-14, atol=1e-16)


class TestMarchingCubes:
    def test_sphere(self):
        pts, _ = fibonacci_sphere(4000, radius=0.3)
        grid, mesh = mesh_of(sphere_field, pts, 6)
        radii = np.linalg.norm(mesh.vertices - CENTER, axis=1)
        assert np.abs(radii - 0.3).max() < 2 * 2.0**-6
        assert mesh.euler_characteristic() == 2
        assert mesh.is_watertight()
        assert mesh.areas().min() > 1e-14
        assert mesh.triangles.max() < len(mesh.vertices)

    def test_outward(self):
        pts, _ = fibonacci_sphere(4000, radius=0.3)
        _, mesh = mesh_of(sphere_field, pts, 6)
        centroid = mesh.vertices[mesh.triangles].mean(axis=1)
        assert np.all(np.einsum("ij,ij->i", mesh.face_normals(), centroid - CENTER) > 0)

    def test_torus(self):
        t = np.linspace(0, 2 * np.pi, 120, endpoint=False)
        u, v = np.meshgrid(t, t)
        ring = 0.25 + 0.1 * np.cos(v)
        pts = CENTER + np.stack([ring * np.cos(u), ring * np.sin(u), 0.1 * np.sin(v)], -1).reshape(-1, 3)
        _, mesh = mesh_of(torus_field, pts, 6)
        assert mesh.euler_characteristic() == 0
        assert mesh.is_watertight()

    def test_constant_field(self):
        g = build_query_grid(np.array([[0.5, 0.5, 0.5]]), 4, 1)
        with pytest.raises(NoSurfaceError, match="no surface crossed"):
            marching_cubes(g, IndicatorField(np.ones(len(g)), 0.5))

    def test_transform(self):
        pts, _ = fibonacci_sphere(2000, radius=0.3)
        grid, mesh = mesh_of(sphere_field, pts, 5)
        cloud = PointCloud(pts, scale=3.0, offset=np.array([1.0, -2.0, 0.5]))
        moved = marching_cubes(grid, IndicatorField(sphere_field(grid.corners), 0.5), cloud)
        np.testing.assert_allclose(moved.vertices, mesh.vertices * 3.0 + [1, -2, 0.5], rtol=1e-15)
        back = cloud.to_normalized(moved.vertices)
        cells = {tuple(c) for c in grid.cell_ijk}
        owner = np.floor(back * 32).astype(int)
        near = [any(tuple(o + d) in cells for d in np.array(np.meshgrid(*[[-1, 0]] * 3)).T.reshape(-1, 3))
                for o in owner]
        assert all(near)
        assert back.min() >= -0.05 and back.max() <= 1.05

    def test_random_fields_watertight(self, rng):
        for _ in range(10):
            g = full_grid(3, margin=0.0)
            vals = rng.random(len(g))
            boundary = np.any((g.corner_ijk == 0) | (g.corner_ijk == 8), axis=1)
            vals[boundary] = 0.0
            vals[~boundary] = np.where(vals[~boundary] > 0.5, vals[~boundary], 0.2)
            try:
                mesh = marching_cubes(g, IndicatorField(vals, 0.5))
            except NoSurfaceError:
                continue
            assert mesh.is_watertight()


class TestRefinement:
    def test_matches_full_grid(self):
        pts, _ = fibonacci_sphere(3000, radius=0.3)
        coarse = build_query_grid(pts, 4, 2)
        grid, values = refine_to_depth(coarse, sphere_field, 0.5, 7)
        full = full_grid(7)
        fv = sphere_field(full.corners)
        below = fv[full.cells] < 0.5
        n_full = np.sum(below.any(1) & ~below.all(1))
        below = values[grid.cells] < 0.5
        assert np.sum(below.any(1) & ~below.all(1)) == n_full
        mesh = marching_cubes(grid, IndicatorField(values, 0.5))
        assert mesh.is_watertight() and mesh.euler_characteristic() == 2

    def test_values_consistent(self):
        pts, _ = fibonacci_sphere(1000, radius=0.3)
        coarse = build_query_grid(pts, 3, 1)
        grid, values = refine_to_depth(coarse, sphere_field, 0.5, 5,
                                       values=sphere_field(coarse.corners))
        np.testing.assert_allclose(values, sphere_field(grid.corners), rtol=1e-15)
        assert isinstance(grid, QueryGrid) and grid.depth == 5

    def test_thin_sheet_needs_seeds(self):
        # a slab much thinner than a coarse cell: no coarse corner sees it
        def slab(x):
            inside = (np.abs(x[..., 2] - 0.56) < 0.004) & np.all(np.abs(x[..., :2] - 0.5) < 0.2, -1)
            return inside.astype(float)

        rng = np.random.default_rng(0)
        pts = np.column_stack([rng.uniform(0.3, 0.7, (500, 2)), np.full(500, 0.56)])
        coarse = build_query_grid(pts, 3, 1)
        grid, values = refine_to_depth(coarse, slab, 0.5, 8, seeds=pts)
        mesh = marching_cubes(grid, IndicatorField(values, 0.5))
        assert mesh.is_watertight()
        with pytest.raises(NoSurfaceError):
            g2, v2 = refine_to_depth(coarse, slab, 0.5, 8)
            marching_cubes(g2, IndicatorField(v2, 0.5))

    def test_rejects_finer_grid(self):
        g = build_query_grid(np.array([[0.5, 0.5, 0.5]]), 5, 0)
        with pytest.raises(ValueError):
            refine_to_depth(g, sphere_field, 0.5, 4)


def test_mesh_helpers():
    m = TriangleMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]]),
                     np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]]))
    assert m.is_watertight() and m.euler_characteristic() == 2
    assert m.areas()[0] == 0.5
    np.testing.assert_array_equal(m.face_normals()[0], [0, 0, -1])
