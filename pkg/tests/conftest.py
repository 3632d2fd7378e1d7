import numpy as np
import pytest

from anigauss.shapes import ShapeSpec, generate


def fibonacci_sphere(n, radius=0.4, center=(0.5, 0.5, 0.5)):
    """Near-uniform deterministic sphere points and their outward normals."""
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    rho = np.sqrt(1.0 - z * z)
    theta = np.pi * (1.0 + 5**0.5) * k
    normals = np.stack([rho * np.cos(theta), rho * np.sin(theta), z], axis=1)
    return np.asarray(center) + radius * normals, normals


def sphere_lse(n, radius=0.4, center=(0.5, 0.5, 0.5)):
    """Points, normals and the exact surface elements n_j * (4 pi r^2 / n)."""
    pts, nrm = fibonacci_sphere(n, radius, center)
    sigma = 4.0 * np.pi * radius**2 / n
    return pts, nrm, (nrm * sigma).ravel()


@pytest.fixture(scope="session")
def sphere_500():
    return generate(ShapeSpec("sphere", {"radius": 0.4}, 500, 0.0, seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = {}


def record(number, ok, detail=""):
    """Store one acceptance line; printed after the run by the hook below."""
    prev = ACCEPTANCE.get(number)
    ok = bool(ok) and (prev is None or prev[0])
    detail = detail if prev is None else prev[1] + "; " + detail
    ACCEPTANCE[number] = (ok, detail)
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
