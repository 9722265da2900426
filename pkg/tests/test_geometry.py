import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from gradconstraint.convex_body import make_body
from gradconstraint.geometry import (
    BoundaryError,
    hess_distance,
    make_boundary_data,
    make_domain,
    validate_boundary_data,
)

STAR = {"kind": "star", "c0": 1.0, "cos": [0.0, 0.0, 0.1], "sin": [0.05]}
DOMAINS = {
    "disk": {"kind": "disk", "R": 1.3},
    "ellipse": {"kind": "ellipse", "a": 2.0, "b": 1.0},
    "star": STAR,
}


@pytest.fixture(params=sorted(DOMAINS))
def domain(request):
    return make_domain(DOMAINS[request.param])


def test_parametrization_derivatives(domain):
    z = np.linspace(0, 1, 37, endpoint=False)
    h = 1e-6
    fd1 = (domain.point(z + h) - domain.point(z - h)) / (2 * h)
    assert np.allclose(domain.velocity(z), fd1, rtol=1e-7, atol=1e-6)
    fd2 = (domain.velocity(z + h) - domain.velocity(z - h)) / (2 * h)
    assert np.allclose(domain.acceleration(z), fd2, rtol=1e-6, atol=1e-4)
    # positive orientation: inward normal points towards the origin of a star domain
    assert np.all(np.sum(domain.normal(z) * domain.point(z), axis=1) < 0)


def test_ellipse_curvature_closed_form():
    a, b = 2.0, 1.0
    dom = make_domain({"kind": "ellipse", "a": a, "b": b})
    z = np.linspace(0, 1, 50, endpoint=False)
    t = 2 * np.pi * z
    k = a * b / (a**2 * np.sin(t) ** 2 + b**2 * np.cos(t) ** 2) ** 1.5
    assert np.allclose(dom.curvature(z), k, rtol=1e-12)
    assert dom.convex


def test_distance_hessian_on_unit_disk():
    dom = make_domain({"kind": "disk", "R": 1.0})
    assert np.allclose(hess_distance(dom, np.array([1.0, 0.0])), [[0, 0], [0, -1]], atol=1e-12)
    with pytest.raises(BoundaryError):
        hess_distance(dom, np.array([0.5, 0.0]))


def test_distance_hessian_by_differences():
    # d(x) = distance to the ellipse boundary, inward; compare with a difference quotient
    dom = make_domain({"kind": "ellipse", "a": 2.0, "b": 1.0})
    z0 = 0.13
    y, nu = dom.point(z0), dom.normal(z0)

    def dist(p):
        return dom.locate(p)[1] * (1 if dom.inside(p) else -1)

    t = dom.tangent(z0)
    s = 1e-3
    q = (dist(y + s * t) + dist(y - s * t) - 2 * dist(y)) / s**2
    assert q == pytest.approx(float(t @ hess_distance(dom, y) @ t), rel=1e-3)
    assert (dist(y + s * nu) - dist(y - s * nu)) / (2 * s) == pytest.approx(1.0, rel=1e-6)


@given(st.floats(0.0, 2 * np.pi), st.floats(-0.5, 0.5))
def test_locate_matches_scalar_minimization(theta, off):
    dom = make_domain(DOMAINS["ellipse"])
    p = (1 + off) * np.array([2 * np.cos(theta), np.sin(theta)])
    z, d = dom.locate(p)

    def f(t):
        # squared: the distance itself has a kink when p is on the boundary
        return float(np.sum((dom.point(t) - p) ** 2))

    zs = np.linspace(0, 1, 400, endpoint=False)
    j = int(np.argmin([f(t) for t in zs]))
    ref = minimize_scalar(f, bounds=(zs[j] - 1 / 400, zs[j] + 1 / 400), method="bounded",
                          options={"xatol": 1e-13}).fun
    assert d * d == pytest.approx(ref, abs=1e-12)


def test_inside(domain):
    z = np.linspace(0, 1, 64, endpoint=False)
    y = domain.point(z)
    assert domain.inside(0.99 * y).all()
    assert not domain.inside(1.01 * y).any()


def test_boundary_table_columns():
    dom = make_domain({"kind": "disk", "R": 2.0})
    T = dom.boundary_table(8)
    assert T.shape == (8, 6)
    assert np.allclose(T[:, 5], 0.5)
    assert np.allclose(T[:, 3:5], -T[:, 1:3] / 2)


def test_invalid_domains():
    with pytest.raises(ValueError):
        make_domain({"kind": "disk", "R": 0.0})
    with pytest.raises(ValueError):
        make_domain({"kind": "star", "c0": 0.1, "cos": [0.5]})
    with pytest.raises(ValueError):
        make_domain({"kind": "square"})


@pytest.mark.parametrize("desc", [
    {"kind": "linear", "p": [0.3, -0.2], "c": 1.0},
    {"kind": "quadratic", "A": [[0.2, 0.1], [0.0, -0.3]], "b": [0.1, 0.0], "c": 0.5},
    {"kind": "trig", "amp": [0.2, 0.1], "freq": [[1.0, 0.0], [0.5, 2.0]], "phase": [0.0, 1.0]},
])
def test_boundary_data_derivatives(desc, rng):
    data = make_boundary_data(desc)
    x = rng.standard_normal((20, 2))
    h = 1e-6
    E = np.eye(2)
    fd = np.stack([(data.phi(x + h * e) - data.phi(x - h * e)) / (2 * h) for e in E], -1)
    assert np.allclose(data.grad(x), fd, atol=1e-8)
    fdh = np.stack([(data.grad(x + h * e) - data.grad(x - h * e)) / (2 * h) for e in E], -1)
    assert np.allclose(data.hess(x), fdh, atol=1e-7)
    assert np.allclose(data.negate().phi(x), -data.phi(x))


def test_validation_modes():
    disk = make_domain({"kind": "disk", "R": 1.0})
    ball = make_body({"kind": "euclidean_ball", "dim": 2})
    ok = validate_boundary_data(disk, make_boundary_data({"kind": "linear", "p": [0.5, 0.0]}), ball)
    assert ok.ok and ok.max_polar == pytest.approx(0.5)
    tight = make_boundary_data({"kind": "linear", "p": [1.0, 0.0]})
    assert not validate_boundary_data(disk, tight, ball).ok
    rep = validate_boundary_data(disk, tight, ball, mode="transversal")
    # D gamma_polar(e1) = e1 is tangent to the circle at (0, +-1)
    assert not rep.ok
    pts = np.array(rep.offending)
    assert len(pts) == 2
    assert np.allclose(np.sort(pts[:, 1]), [-1, 1], atol=1e-9)
    assert np.allclose(pts[:, 0], 0, atol=1e-9)
    steep = make_boundary_data({"kind": "linear", "p": [1.5, 0.0]})
    assert not validate_boundary_data(disk, steep, ball, mode="transversal").ok
    with pytest.raises(ValueError):
        validate_boundary_data(disk, tight, ball, mode="loose")
