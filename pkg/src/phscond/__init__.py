"""Meshless steady heat conduction in multi-material domains.

Polyharmonic-spline RBF-FD discretization with separate clouds per
subdomain, flux-matching interface rows, and an ILU(0)-preconditioned
BiCGSTAB solver.
"""

__version__ = "0.1.0"

from phscond.geometry import GeometryError, GeometrySpec, PointSet, export_points, generate, import_points
from phscond.stencil import CloudPlan, build_clouds
from phscond.rbf import KernelConfig, diff_weights, plan_weights
from phscond.assembly import ProblemSpec, SparseSystem, assemble_multidomain, assemble_smearing
from phscond.solver import SolveReport, SolverConfig, bicgstab, solve
from phscond.verify import StudyReport, error_norms, fit_order, run_study
from phscond.applications import ApplicationCase, load_case, run_application

__all__ = [
    "ApplicationCase", "CloudPlan", "GeometryError", "GeometrySpec", "KernelConfig", "PointSet",
    "ProblemSpec", "SolveReport", "SolverConfig", "SparseSystem", "StudyReport",
    "assemble_multidomain", "assemble_smearing", "bicgstab", "build_clouds", "diff_weights",
    "error_norms", "export_points", "fit_order", "generate", "import_points", "load_case",
    "plan_weights", "run_application", "run_study", "solve",
]
