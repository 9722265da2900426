import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import minimize_scalar

from gradconstraint.convex_body import make_body
from gradconstraint.geometry import make_boundary_data, make_domain
from gradconstraint.obstacle_solver import (
    BOUNDARY_LAYER,
    Grid,
    beta,
    beta_prime,
    beta_tilde,
    classify_and_verify,
    default_schedule,
    default_tolerances,
    make_integrand,
    mollifier_stencil,
    penalization_bounds,
    project_polar,
    solve_double_obstacle,
    solve_gradient_constrained,
    solve_penalized,
)

SMOOTHED_L1 = {"kind": "smoothed", "k": 16, "base": {"kind": "p_ball", "p": 1, "dim": 2}}


def test_penalty_blend_is_c2_and_convex():
    d = 0.01
    t = np.linspace(-0.02, 0.05, 20001)
    h = 1e-7
    assert np.allclose(beta(t, d), (beta_tilde(t + h, d) - beta_tilde(t - h, d)) / (2 * h), atol=1e-6)
    assert np.allclose(beta_prime(t, d), (beta(t + h, d) - beta(t - h, d)) / (2 * h), atol=1e-3 / d)
    # value, slope and curvature match at both ends of the blend
    for s in (0.0, d):
        for f in (beta_tilde, beta, beta_prime):
            assert f(s - 1e-12, d) == pytest.approx(f(s + 1e-12, d), abs=1e-6)
    assert np.all(np.diff(beta(t, d)) >= 0)
    assert np.all(beta_prime(t, d) >= 0)
    assert beta_tilde(0.02, d) == pytest.approx(0.02**2 / (2 * d))


def test_mollifier_stencil():
    S, w = mollifier_stencil(0.1)
    assert w.sum() == pytest.approx(1.0)
    assert np.all(np.linalg.norm(S, axis=1) < 0.1)
    assert np.allclose(w @ S, 0, atol=1e-15)
    assert np.min(np.abs(S[np.abs(S) > 0])) == pytest.approx(0.1 / 8)
    with pytest.raises(ValueError):
        mollifier_stencil(0.1, spacing=0.03)


def test_integrand_descriptors():
    I = make_integrand({"kind": "quadratic", "A": [[2, 0], [0, 1]], "load": 2.0, "mass": 0.5})
    Z = np.array([[1.0, 2.0]])
    assert I.F(Z)[0] == pytest.approx(3.0)
    assert np.allclose(I.DF(Z), [[2.0, 2.0]])
    assert I.dg(np.array(1.0)) == pytest.approx(-1.5)
    assert I.bounds["c9"] == 2.0 and I.bounds["c8"] == 1.0
    with pytest.raises(ValueError):
        make_integrand({"kind": "quadratic", "A": [[1, 0], [0, -1]]})
    with pytest.raises(ValueError):
        make_integrand({"kind": "torsion", "mass": -1})


def test_schedule_and_tolerances():
    sch = default_schedule()
    assert len(sch) == 6
    assert sch[0] == (0.1, pytest.approx(0.01))
    assert all(e2 == e1 / 2 and d == pytest.approx(e1**2) for (e1, d), (e2, _) in zip(sch, sch[1:]))
    tol = default_tolerances(0.1)
    assert tol["tol_grad"] == pytest.approx(0.5)


def polar_projection_brute(body, w, n=4000):
    th = np.linspace(0, 2 * np.pi, n, endpoint=False)
    U = np.stack([np.cos(th), np.sin(th)], -1)
    B = U / body.polar_gauge(U)[:, None]

    def boundary(s):
        u = np.array([[np.cos(s), np.sin(s)]])
        return (u / body.polar_gauge(u)[:, None])[0]

    j = int(np.argmin(np.linalg.norm(B - w, axis=1)))
    r = minimize_scalar(lambda s: float(np.sum((boundary(s) - w) ** 2)),
                        bounds=(th[j] - th[1], th[j] + th[1]), method="bounded",
                        options={"xatol": 1e-14})
    return boundary(r.x)


point = arrays(np.float64, 2, elements=st.floats(-4, 4, allow_nan=False))


@given(point)
def test_projection_matches_brute_force(w):
    for desc in ({"kind": "ellipsoid", "axes": [1.0, 0.7]}, SMOOTHED_L1):
        body = make_body(desc)
        P, _ = project_polar(body, w[None])
        if body.polar_gauge(w[None])[0] <= 1:
            assert np.allclose(P[0], w)
        else:
            assert np.allclose(P[0], polar_projection_brute(body, w), atol=1e-7)
            assert body.polar_gauge(P)[0] == pytest.approx(1.0, abs=1e-9)


def test_projection_warm_start_cannot_lose_global_maximum(rng):
    body = make_body(SMOOTHED_L1)
    W = rng.uniform(-3, 3, (500, 2))
    P0, th = project_polar(body, W)
    # deliberately poor warm starts
    P1, _ = project_polar(body, W, theta=th + np.pi)
    assert np.allclose(P0, P1, atol=1e-10)


@pytest.fixture(scope="module")
def unit_disk():
    return make_domain({"kind": "disk", "R": 1.0})


def test_linear_data_without_load_is_reproduced(unit_disk, ball):
    # harmonic data with |D phi| < 1: u = phi for both solvers
    data = make_boundary_data({"kind": "linear", "p": [0.5, -0.3], "c": 0.2})
    I = make_integrand({"kind": "torsion", "load": 0.0})
    g = Grid.cover(unit_disk, 1 / 16)
    exact = data.phi(g.points)
    sol = solve_double_obstacle(I, unit_disk, data, ball, g, schedule=default_schedule(3))
    m = sol.in_u
    assert np.max(np.abs(sol.u - exact)[m]) < 1e-9
    assert not sol.plastic.any()
    drc = solve_gradient_constrained(I, unit_disk, data, ball, g)
    assert np.max(np.abs(drc.u - exact)[m]) < 1e-8


def test_tight_linear_data_is_a_supersolution(unit_disk, ball):
    # phi with |D phi| = 1 and g = 0: -div DF(D phi) = 0 >= 0 is consistent with the inequality
    data = make_boundary_data({"kind": "linear", "p": [1.0, 0.0]})
    with pytest.raises(ValueError):
        solve_double_obstacle(make_integrand({"kind": "torsion", "load": 0.0}), unit_disk, data, ball,
                              Grid.cover(unit_disk, 1 / 8))
    g = Grid.cover(unit_disk, 1 / 16)
    u = data.phi(g.points)
    lap = (u[2:, 1:-1] + u[:-2, 1:-1] + u[1:-1, 2:] + u[1:-1, :-2] - 4 * u[1:-1, 1:-1]) / g.h**2
    assert np.max(np.abs(lap)) < 1e-10


def test_elastic_disk_both_solvers(ball, zero, torsion):
    dom = make_domain({"kind": "disk", "R": 1.5})
    g = Grid.cover(dom, 1.5 / 24)
    sol = solve_double_obstacle(torsion, dom, zero, ball, g)
    r2 = np.sum(g.points**2, axis=-1)
    exact = (2.25 - r2) / 4
    m = sol.in_u
    assert np.max(np.abs(sol.u - exact)[m]) < 2e-3
    assert not sol.plastic.any()
    drc = solve_gradient_constrained(torsion, dom, zero, ball, g)
    assert np.max(np.abs(drc.u - sol.u)[m]) < 1e-8
    assert drc.diagnostics["converged"]


def test_direct_solver_needs_smooth_body(unit_disk, zero, torsion):
    sq = make_body({"kind": "p_ball", "p": 1, "dim": 2})
    with pytest.raises(ValueError):
        solve_gradient_constrained(torsion, unit_disk, zero, sq, Grid.cover(unit_disk, 0.25))


def test_penalized_solve_rejects_bad_delta(unit_disk, zero, torsion):
    from gradconstraint.obstacle_solver import domain_mesh
    mesh = domain_mesh(unit_disk, zero, Grid.cover(unit_disk, 0.25))
    with pytest.raises(ValueError):
        solve_penalized(torsion, mesh, np.zeros(mesh.n_unknown), np.ones(mesh.n_unknown), 0.0)


# ---------------------------------------------------------------------------
# invariants on the plastic torsion solve


def test_labels_and_gradient_constraint(torsion_disk3, ball, torsion):
    sol = torsion_disk3.value
    m = sol.in_u
    tol = sol.diagnostics["tolerances"]
    assert np.nanmax(sol.polar_of_grad) <= 1 + tol["tol_grad"]
    assert np.all(sol.u[m] <= sol.rho[m] + 1e-15)
    assert np.all(sol.u[m] >= -sol.rho_bar[m] - 1e-15)
    r = np.hypot(*np.moveaxis(sol.grid.points, -1, 0))
    region = sol.region
    assert set(np.unique(region[m])) <= {0, 1, BOUNDARY_LAYER}
    assert np.all(r[region == 1] >= 2 - 2 * sol.grid.h)
    rep = classify_and_verify(sol, ball, torsion)
    assert rep["elastic_residual"] <= rep["elastic_residual_tol"]
    assert rep["plastic_polar_min"] >= 1 - rep["tol_grad"]


def test_obstacle_excess_is_linear_in_delta(torsion_disk3):
    levels = [lv for lv in torsion_disk3.value.diagnostics["levels"] if lv["eps"] > 0]
    ratios = [lv["upper_excess"] / lv["delta"] for lv in levels]
    C = max(ratios)
    assert all(lv["upper_excess"] <= lv["delta"] * (C + 1) for lv in levels)
    assert C < 2.0
    ex = [lv["upper_excess"] for lv in levels]
    assert all(b < a for a, b in zip(ex, ex[1:]))


def test_energy_increases_as_penalty_tightens(torsion_disk3):
    E = [lv["energy"] for lv in torsion_disk3.value.diagnostics["levels"]]
    assert all(b >= a - 1e-12 for a, b in zip(E, E[1:]))


def test_segments_to_closest_points_stay_plastic(torsion_disk3):
    sol = torsion_disk3.value
    g = sol.grid
    P = g.points
    plus = np.argwhere(sol.region == 1)
    misses = 0
    for i, j in plus[::7]:
        x = P[i, j]
        y = 3.0 * x / np.linalg.norm(x)
        for s in np.linspace(0, 1, 12, endpoint=False)[1:]:
            q = x + s * (y - x)
            ii, jj = g.index_of(q)
            near = sol.region[max(ii - 1, 0):ii + 2, max(jj - 1, 0):jj + 2]
            if not np.any((near == 1) | (near == BOUNDARY_LAYER)):
                misses += 1
    assert misses == 0


def test_penalization_bounds_cover_every_level(torsion_disk3, ball, torsion):
    b = penalization_bounds(torsion_disk3.value, ball, torsion)
    assert len(b["levels"]) == 6
    assert b["C3"] == pytest.approx(b["C1"] ** 2 * b["C2"] / b["C0"])
    for lv in b["levels"]:
        assert lv["operator_nodes"] > 0
