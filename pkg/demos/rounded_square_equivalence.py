"""Two routes to the same constrained minimizer.

The constraint here is a rounded square: the gradient must stay in a
smoothed version of the l-infinity unit ball.  One solver works through
the double obstacle problem with penalties and mollified obstacles, the
other enforces the pointwise constraint directly with an augmented
Lagrangian.  Their answers should agree to discretization accuracy.
"""

import time

import numpy as np

from gradconstraint import (
    Grid,
    make_body,
    make_boundary_data,
    make_domain,
    make_integrand,
    solve_double_obstacle,
    solve_gradient_constrained,
)


def main(n=65, k=16):
    domain = make_domain({"kind": "disk", "R": 3.0})
    body = make_body({"kind": "smoothed", "k": k, "base": {"kind": "p_ball", "p": 1, "dim": 2}})
    data = make_boundary_data({"kind": "zero"})
    torsion = make_integrand({"kind": "torsion"})
    grid = Grid.cover(domain, 6.0 / (n - 1))

    t0 = time.perf_counter()
    dbl = solve_double_obstacle(torsion, domain, data, body, grid)
    t1 = time.perf_counter()
    drc = solve_gradient_constrained(torsion, domain, data, body, grid)
    t2 = time.perf_counter()

    m = dbl.in_u
    diff = np.max(np.abs(dbl.u - drc.u)[m])
    span = np.nanmax(dbl.u[m]) - np.nanmin(dbl.u[m])
    print(f"double obstacle route  {t1 - t0:6.1f} s, {int(dbl.plastic.sum())} plastic nodes")
    print(f"direct route           {t2 - t1:6.1f} s, converged: {drc.diagnostics['converged']}")
    print(f"max difference {diff:.2e} ({diff / span:.2e} of the range of u)")


if __name__ == "__main__":
    main()
