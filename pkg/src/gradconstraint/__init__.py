"""Obstacle problems with gradient constraints in the plane.

Submodules: ``convex_body`` (gauges and polars), ``geometry`` (domains and
boundary data), ``hj_field`` (the obstacle fields and their ridges),
``obstacle_solver`` (two discrete solvers and checks) and ``cli_report``.
"""

from .convex_body import ConvexBody, make_body, smooth_approximation
from .geometry import Domain, make_boundary_data, make_domain, validate_boundary_data
from .hj_field import rho_bar_field, rho_field, ridge_scan, trace_characteristic
from .obstacle_solver import (
    Grid,
    ObstacleSolution,
    classify_and_verify,
    make_integrand,
    solve_double_obstacle,
    solve_gradient_constrained,
)

__version__ = "0.1.0"

__all__ = [
    "ConvexBody",
    "make_body",
    "smooth_approximation",
    "Domain",
    "make_domain",
    "make_boundary_data",
    "validate_boundary_data",
    "rho_field",
    "rho_bar_field",
    "ridge_scan",
    "trace_characteristic",
    "Grid",
    "ObstacleSolution",
    "make_integrand",
    "solve_double_obstacle",
    "solve_gradient_constrained",
    "classify_and_verify",
]
