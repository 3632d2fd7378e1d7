"""Surface reconstruction from unoriented points with anisotropic Gauss kernels."""

from .adaptive import (EigenFrame, VelocitySet, covariance_eigen, default_velocities,
                       pgr_velocities, select_velocities)
from .errors import (ConvergenceWarning, DomainError, NoSurfaceError, NumericalBreakdown,
                     ParseError, ReconError, ResourceError, StageError)
from .field import (IndicatorField, OrientedCloud, QueryGrid, TriangleMesh, build_query_grid,
                    compute_isovalue, evaluate_indicator, extract_normals, marching_cubes)
from .io import read_points
from .kernel import (Velocity, WidthParams, compute_widths, fundamental_gradient,
                     fundamental_solution, gauss_kernel, phi_block, phi_row)
from .metrics import MetricReport, chamfer, normal_consistency, pgp90, sample_mesh
from .pipeline import RunConfig, RunManifest, run_pipeline, write_outputs
from .shapes import ShapeSpec, generate
from .solver import SolveReport, cg_solve, solve, solve_least_squares, solve_minimal_norm
from .system import (PointCloud, RowBlockMatrix, SolveConfig, assemble_block, assemble_gram,
                     assemble_normal_eq)

__version__ = "0.1.0"
