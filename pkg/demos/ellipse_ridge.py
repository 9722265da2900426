"""Where the distance to an ellipse stops being smooth.

For the ellipse x^2/4 + y^2 = 1 the set of points with two closest boundary
points is the segment from (-1.5, 0) to (1.5, 0); its end points are the
centres of curvature at the vertices.  A characteristic started at a
vertex runs into such a focal point, while one started at a co-vertex
collides with its mirror image at the centre.
"""

import numpy as np

from gradconstraint import make_body, make_boundary_data, make_domain, ridge_scan, trace_characteristic


def main(h=1 / 32):
    domain = make_domain({"kind": "ellipse", "a": 2.0, "b": 1.0})
    body = make_body({"kind": "euclidean_ball", "dim": 2})
    data = make_boundary_data({"kind": "zero"})

    xs = np.arange(-2, 2 + h / 2, h)
    ys = np.arange(-1, 1 + h / 2, h)
    P = np.stack(np.meshgrid(xs, ys, indexing="ij"), -1).reshape(-1, 2)
    P = P[domain.inside(P)]
    scan = ridge_scan(domain, data, body, P, cell=h)
    C = scan.cloud
    print(f"{len(C)} ridge points, x in [{C[:, 0].min():.3f}, {C[:, 0].max():.3f}], "
          f"max |y| = {np.abs(C[:, 1]).max():.3f}")
    print(f"Hausdorff distance to the segment estimate: {scan.hausdorff / h:.2f} cells")

    for z, where in ((0.0, "vertex (2, 0)"), (0.25, "co-vertex (0, 1)"), (0.1, "in between")):
        tr = trace_characteristic(domain, data, body, z)
        x = tr.x_star
        print(f"from the {where:<17} {tr.kind:<9} at t* = {tr.t_star:.4f}, x* = ({x[0]:+.4f}, {x[1]:+.4f})")


if __name__ == "__main__":
    main()
