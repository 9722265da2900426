"""Plastic torsion of a disk of radius 3.

The elastic solution (9 - r^2)/4 would have gradient r/2, which exceeds
one beyond r = 2.  With the constraint |Du| <= 1 the exact solution is
(4 - r^2)/4 + 1 for r < 2 and 3 - r outside, so the plastic annulus is
2 < r < 3 and u(0) = 2.  The script solves with the penalized double
obstacle route and prints how close the discrete answer gets.
"""

import numpy as np

from gradconstraint import (
    Grid,
    classify_and_verify,
    make_body,
    make_boundary_data,
    make_domain,
    make_integrand,
    solve_double_obstacle,
)


def exact(r):
    return np.where(r < 2, 2 - r**2 / 4, 3 - r)


def main(n=65):
    domain = make_domain({"kind": "disk", "R": 3.0})
    body = make_body({"kind": "euclidean_ball", "dim": 2})
    data = make_boundary_data({"kind": "zero"})
    torsion = make_integrand({"kind": "torsion"})
    grid = Grid.cover(domain, 6.0 / (n - 1))
    sol = solve_double_obstacle(torsion, domain, data, body, grid)

    r = np.hypot(*np.moveaxis(grid.points, -1, 0))
    m = sol.in_u
    print(f"grid {grid.n1} x {grid.n2}, h = {grid.h:.4f}")
    print(f"max |u - exact|      {np.max(np.abs(sol.u - exact(r))[m]):.2e}")
    plastic = r[sol.region == 1]
    print(f"plastic radii        [{plastic.min():.3f}, {plastic.max():.3f}]  (exact 2 < r < 3)")
    print("penalty continuation (eps, delta, energy, upper excess):")
    for lv in sol.diagnostics["levels"]:
        print(f"  {lv['eps']:.5f}  {lv['delta']:.2e}  {lv['energy']:+.4f}  {lv['upper_excess']:.2e}")
    rep = classify_and_verify(sol, body, torsion)
    print(f"elastic residual     {rep['elastic_residual']:.2e} (tolerance {rep['elastic_residual_tol']:.2e})")


if __name__ == "__main__":
    main()
