"""Obstacle fields rho and rho_bar with closed-form derivatives.

``rho(x) = min_y [gamma(x - y) + phi(y)]`` over boundary points ``y``.  The
minimum is found by dense boundary sampling followed by safeguarded Newton
refinement of the stationarity condition from the best local basins.  Along
the characteristic through a unique closest point ``y`` the gradient is
``mu(y) = Dphi(y) + lambda(y) nu(y)`` and the Hessian is
``D2rho(y) Q(x)^{-1}`` with ``Q = I - (rho(x) - phi(y)) W(y)``.

``rho_bar`` is the field of the reflected body with negated data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .convex_body import make_body, reflect
from .geometry import BoundaryData, BoundaryError

__all__ = [
    "RhoPointRecord",
    "FieldResult",
    "CharacteristicTrace",
    "RidgeScan",
    "RidgeProximityError",
    "TransversalityError",
    "PreconditionError",
    "lambda_of",
    "mu_X_of",
    "boundary_quantities",
    "rho_field",
    "rho_bar_field",
    "rho_at",
    "rho_bar_at",
    "hess_rho_boundary",
    "hess_rho",
    "trace_characteristic",
    "ridge_scan",
    "classify_ridge",
    "monotonicity_check",
    "hj_residual",
    "distance_field",
]

M_SAMPLES = 720
N_BASINS = 6
TIE = 1e-7
TAU_DETQ = 1e-8


class PreconditionError(ValueError):
    pass


class TransversalityError(ValueError):
    """Characteristic direction tangent to the boundary."""


class RidgeProximityError(ValueError):
    """Hessian requested at a point where det Q is (numerically) zero."""


def _outer(a, b):
    return a[..., :, None] * b[..., None, :]


# ---------------------------------------------------------------------------
# boundary quantities


def _solve_lambda(body, dphi, nu, tol=1e-13):
    dphi = np.atleast_2d(dphi)
    nu = np.atleast_2d(nu)
    if np.any(body.polar_gauge(dphi) >= 1.0):
        raise PreconditionError("gamma_polar(Dphi) >= 1 at a boundary point")
    lo = np.zeros(dphi.shape[0])
    hi = np.ones(dphi.shape[0])
    for _ in range(200):
        over = body.polar_gauge(dphi + hi[:, None] * nu) > 1.0
        if over.all():
            break
        lo = np.where(over, lo, hi)
        hi = np.where(over, hi, 2 * hi)
    lam = hi.copy()
    for _ in range(100):
        v = dphi + lam[:, None] * nu
        f = body.polar_gauge(v) - 1.0
        if np.all(np.abs(f) <= tol):
            break
        fp = np.sum(body.polar_grad(v) * nu, axis=-1)
        lo = np.where(f < 0, lam, lo)
        hi = np.where(f > 0, lam, hi)
        new = lam - f / np.where(fp > 0, fp, np.inf)
        bad = ~((new > lo) & (new < hi)) | ~(fp > 0)
        lam = np.where(bad, 0.5 * (lo + hi), new)
    return lam


def boundary_quantities(domain, data, body, z):
    """Vectorized boundary quantities at parameters ``z``.

    Returns a dict with ``y``, ``nu``, ``lam``, ``mu``, ``a`` (``Dgamma_polar(mu)``),
    ``c`` (``<a, nu>``), ``X`` and ``H`` (the Hessian of ``rho`` at ``y``).
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    y = domain.point(z)
    nu = domain.normal(z)
    dphi = data.grad(y)
    lam = _solve_lambda(body, dphi, nu)
    mu = dphi + lam[:, None] * nu
    a = body.polar_grad(mu)
    c = np.sum(a * nu, axis=-1)
    X = _outer(a, nu) / c[:, None, None]
    P = np.eye(2) - X
    inner = data.hess(y) + lam[:, None, None] * domain.dist_hess(z)
    H = np.swapaxes(P, -1, -2) @ inner @ P
    H = 0.5 * (H + np.swapaxes(H, -1, -2))
    return {"z": z, "y": y, "nu": nu, "lam": lam, "mu": mu, "a": a, "c": c, "X": X, "H": H}


def _locate_checked(domain, y):
    z, dist = domain.locate(y)
    if dist > domain.boundary_tol * domain.diameter:
        raise BoundaryError(f"point {tuple(np.asarray(y))} is not on the boundary")
    return z


def lambda_of(domain, data, body, y):
    """The positive root of ``gamma_polar(Dphi(y) + lambda nu(y)) = 1``."""
    z = _locate_checked(domain, y)
    yy = domain.point(z)
    return float(_solve_lambda(body, data.grad(yy), domain.normal(z))[0])


def mu_X_of(domain, data, body, y, tol=1e-10):
    """Return ``(mu, X, <Dgamma_polar(mu), nu>)`` at the boundary point ``y``."""
    z = _locate_checked(domain, y)
    q = boundary_quantities(domain, data, body, z)
    c = float(q["c"][0])
    if c <= tol:
        raise TransversalityError("characteristic direction is tangent to the boundary")
    return q["mu"][0], q["X"][0], c


def hess_rho_boundary(domain, data, body, y):
    """``(I - X^T)(D2phi + lambda D2d)(I - X)`` at the boundary point ``y``."""
    z = _locate_checked(domain, y)
    q = boundary_quantities(domain, data, body, z)
    if q["c"][0] <= 1e-10:
        raise TransversalityError("characteristic direction is tangent to the boundary")
    return q["H"][0]


# ---------------------------------------------------------------------------
# closest points


class _Sampler:
    def __init__(self, domain, data, body, m):
        self.domain, self.data, self.body, self.m = domain, data, body, m
        self.z = domain.samples(m)
        self.Y = domain.point(self.z)
        self.phi = data.phi(self.Y)

    def f(self, x, z):
        y = self.domain.point(z)
        return self.body.gauge(x - y) + self.data.phi(y)

    def df(self, x, z, second=True):
        d = self.domain
        y = d.point(z)
        v = d.velocity(z)
        e = x - y
        small = np.linalg.norm(e, axis=-1) < 1e-11 * d.diameter
        e = np.where(small[..., None], v, e)
        dg = self.body.gauge_grad(e)
        r = self.data.grad(y) - dg
        fp = np.sum(v * r, axis=-1)
        if not second:
            return fp, small
        M = self.data.hess(y) + self.body.gauge_hess(e)
        fpp = np.sum(d.acceleration(z) * r, axis=-1) + np.einsum("...i,...ij,...j->...", v, M, v)
        return fp, fpp, small


def _golden(s, x, lo, hi, iters=48):
    g = 0.5 * (np.sqrt(5.0) - 1.0)
    a, b = lo.copy(), hi.copy()
    c = b - g * (b - a)
    d = a + g * (b - a)
    fc, fd = s.f(x, c), s.f(x, d)
    for _ in range(iters):
        left = fc < fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        nc = np.where(left, b - g * (b - a), d)
        nd = np.where(left, c, a + g * (b - a))
        fnew = s.f(x, np.where(left, nc, nd))
        fd, fc = np.where(left, fc, fnew), np.where(left, fnew, fd)
        c, d = nc, nd
    return 0.5 * (a + b)


def _refine(s, x, z0, half, value_tol=None):
    """Local minimization of ``f(x, .)`` on ``[z0 - half, z0 + half]``.

    Safeguarded Newton on the stationarity condition when it is bracketed,
    golden-section search otherwise or for nonsmooth bodies.  With
    ``value_tol`` only the minimum value is wanted, and iteration stops once
    the predicted Newton decrease falls below it.
    """
    lo, hi = z0 - half, z0 + half
    if not s.body.smooth:
        return _golden(s, x, lo, hi)
    flo, _ = s.df(x, lo, second=False)
    fhi, _ = s.df(x, hi, second=False)
    bracket = (flo < 0) & (fhi > 0)
    z = z0.copy()
    act = np.nonzero(bracket)[0]
    a, b, da, db = lo[act], hi[act], flo[act], fhi[act]
    xc = x[act]
    va, vb = s.f(xc, a), s.f(xc, b)
    zc = z[act]
    for _ in range(80):
        if act.size == 0:
            break
        fp, fpp, small = s.df(xc, zc)
        fv = s.f(xc, zc)
        neg, pos = fp < 0, fp > 0
        a, da, va = np.where(neg, zc, a), np.where(neg, fp, da), np.where(neg, fv, va)
        b, db, vb = np.where(pos, zc, b), np.where(pos, fp, db), np.where(pos, fv, vb)
        # the end tangents meet at the kink of a rounded |z - z*|; on a convex
        # bracket their meeting value also bounds the minimum from below
        zt = (vb - va + da * a - db * b) / (da - db)
        low = va + da * (zt - a)
        zt = np.where((zt > a) & (zt < b), zt, 0.5 * (a + b))
        newton = zc - fp / np.where(fpp > 0, fpp, np.inf)
        ok = (fpp > 0) & (newton > a) & (newton < b) & ~small
        znew = np.where(ok, newton, zt)
        gap = np.minimum(va, vb) - low
        closed = gap < 1e-14 * (1.0 + np.abs(low))
        done = (np.abs(znew - zc) < 1e-14) | (fp == 0) | (b - a < 1e-15) | closed
        if value_tol is not None:
            done |= ok & (fp * fp < 2.0 * value_tol * fpp)
        # a closed gap leaves the better bracket end within the gap of the minimum
        z[act] = np.where(closed & ~ok, np.where(va <= vb, a, b), znew)
        keep = ~done
        act, a, b, da, db, va, vb = act[keep], a[keep], b[keep], da[keep], db[keep], va[keep], vb[keep]
        zc, xc = znew[keep], xc[keep]
    z = np.where(bracket, z, z0)
    if not bracket.all():
        idx = ~bracket
        z[idx] = _golden(s, x[idx], lo[idx], hi[idx])
    return z


def _cyclic_gap(a, b):
    d = np.abs(a - b) % 1.0
    return np.minimum(d, 1.0 - d)


def _closest_chunk(s, X, n_basins, tie):
    B = X.shape[0]
    F = s.body.gauge_pairwise(X, s.Y) + s.phi[None, :]
    locmin = (F <= np.roll(F, 1, axis=1)) & (F <= np.roll(F, -1, axis=1))
    Fm = np.where(locmin, F, np.inf)
    k = min(n_basins, s.m)
    idx = np.argpartition(Fm, k - 1, axis=1)[:, :k]
    fsample = np.take_along_axis(Fm, idx, axis=1)
    valid = np.isfinite(fsample)
    z0 = idx / s.m
    xs = np.repeat(X, k, axis=0)
    zr = _refine(s, xs, z0.ravel(), np.full(B * k, 1.0 / s.m)).reshape(B, k)
    v = s.f(xs, zr.ravel()).reshape(B, k)
    worse = v > fsample
    zr = np.where(worse, z0, zr)
    v = np.where(worse, fsample, v)
    v = np.where(valid, v, np.inf)
    warn = ~valid.any(axis=1)
    order = np.argsort(v, axis=1)
    v = np.take_along_axis(v, order, axis=1)
    zr = np.take_along_axis(zr, order, axis=1) % 1.0
    # merge candidates that converged to the same boundary point
    distinct = np.isfinite(v)
    for j in range(1, k):
        same = np.zeros(B, dtype=bool)
        for i in range(j):
            same |= distinct[:, i] & (_cyclic_gap(zr[:, j], zr[:, i]) < 1e-7)
        distinct[:, j] &= ~same
    vmin = v[:, 0]
    tied = distinct & (v <= vmin[:, None] + tie)
    count = tied.sum(axis=1)
    v2 = np.where(distinct & ~tied, v, np.inf)
    j2 = np.argmin(v2, axis=1)
    gap = np.take_along_axis(v2, j2[:, None], axis=1)[:, 0] - vmin
    z2 = np.take_along_axis(zr, j2[:, None], axis=1)[:, 0]
    # with ties the second branch is the second tied point
    jt = np.argmax(np.where(tied, np.arange(k)[None, :], -1), axis=1)
    has_tie = count > 1
    z2 = np.where(has_tie, np.take_along_axis(zr, jt[:, None], axis=1)[:, 0], z2)
    gap = np.where(has_tie, v[np.arange(B), jt] - vmin, gap)
    return {"rho": vmin, "z": zr[:, 0], "zs": np.where(tied, zr, np.nan), "count": count,
            "gap": gap, "z2": z2, "warn": warn, "bz": zr, "bv": np.where(distinct, v, np.inf)}


@dataclass
class FieldResult:
    """Vectorized field evaluation at points ``x``.

    Arrays are indexed by point.  Derivative quantities refer to the best
    closest point.  ``hess`` is NaN where it is not defined (multiple closest
    points or ``detQ <= tau_detQ``).  ``basin_z``/``basin_v`` list the distinct
    refined local minima of ``z -> gamma(x - Y(z)) + phi(Y(z))`` (value
    ``inf`` for unused slots).
    """

    x: np.ndarray
    rho: np.ndarray
    z: np.ndarray
    y: np.ndarray
    closest_z: np.ndarray
    count: np.ndarray
    gap: np.ndarray
    z2: np.ndarray
    warn: np.ndarray
    lam: np.ndarray = None
    mu: np.ndarray = None
    a: np.ndarray = None
    c: np.ndarray = None
    H_boundary: np.ndarray = None
    t: np.ndarray = None
    W: np.ndarray = None
    Q: np.ndarray = None
    detQ: np.ndarray = None
    hess: np.ndarray = None
    focal: np.ndarray = None
    mu2: np.ndarray = None
    basin_z: np.ndarray = None
    basin_v: np.ndarray = None

    @property
    def ridge0(self):
        return self.count > 1

    @property
    def grad(self):
        return self.mu


def rho_field(domain, data, body, X, m=M_SAMPLES, n_basins=N_BASINS, tie=None,
              derivatives=True, tau_detq=TAU_DETQ, chunk=None):
    """Evaluate ``rho`` (and derivative data) at an array of points ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    tie = TIE * domain.diameter if tie is None else tie
    s = _Sampler(domain, data, body, m)
    chunk = chunk or max(1, 1_500_000 // m)
    parts = [_closest_chunk(s, X[i:i + chunk], n_basins, tie) for i in range(0, len(X), chunk)]
    cat = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    res = FieldResult(x=X, rho=cat["rho"], z=cat["z"], y=domain.point(cat["z"]),
                      closest_z=cat["zs"], count=cat["count"], gap=cat["gap"], z2=cat["z2"],
                      warn=cat["warn"], basin_z=cat["bz"], basin_v=cat["bv"])
    if derivatives and body.smooth:
        _attach_derivatives(res, domain, data, body, tau_detq)
    return res


def _attach_derivatives(res, domain, data, body, tau_detq):
    q = boundary_quantities(domain, data, body, res.z)
    res.lam, res.mu, res.a, res.c, res.H_boundary = q["lam"], q["mu"], q["a"], q["c"], q["H"]
    res.t = res.rho - data.phi(res.y)
    P2 = body.polar_hess(res.mu)
    res.W = -P2 @ res.H_boundary
    res.Q = np.eye(2) - res.t[:, None, None] * res.W
    res.detQ = np.linalg.det(res.Q)
    ok = (res.count == 1) & (res.detQ > tau_detq)
    hess = np.full(res.Q.shape, np.nan)
    if ok.any():
        h = res.H_boundary[ok] @ np.linalg.inv(res.Q[ok])
        hess[ok] = 0.5 * (h + np.swapaxes(h, -1, -2))
    res.hess = hess
    ev = np.linalg.eigvals(res.W).real.max(axis=-1)
    with np.errstate(divide="ignore"):
        tf = np.where(ev > 0, 1.0 / ev, np.inf)
    res.focal = (tf - res.t) * np.linalg.norm(res.a, axis=-1)
    finite = np.isfinite(res.gap)
    y2 = domain.point(np.where(finite, res.z2, res.z))
    e2 = res.x - y2
    e2 = np.where(np.linalg.norm(e2, axis=-1, keepdims=True) > 0, e2, 1.0)
    mu2 = body.gauge_grad(e2)
    res.mu2 = np.where(finite[:, None], mu2, np.nan)


def rho_bar_field(domain, data, body, X, **kw):
    return rho_field(domain, data.negate(), reflect(body), X, **kw)


def distance_field(domain, X, m=M_SAMPLES):
    """Euclidean distance to the boundary."""
    ball = make_body({"kind": "euclidean_ball", "dim": 2})
    return rho_field(domain, BoundaryData("zero"), ball, X, m=m, derivatives=False).rho


# ---------------------------------------------------------------------------
# point records


@dataclass
class RhoPointRecord:
    x: np.ndarray
    rho: float
    closest: np.ndarray
    closest_z: np.ndarray
    mu: np.ndarray = None
    grad: np.ndarray = None
    lam: float = None
    W: np.ndarray = None
    Q: np.ndarray = None
    detQ: float = None
    hess: np.ndarray = None
    hess_boundary: np.ndarray = None
    direction: np.ndarray = None
    t: float = None
    ridge0: bool = False
    ridge: bool = False
    warning: bool = False
    body: object = None
    phi_y: float = None

    @property
    def y(self):
        return self.closest[0]


def rho_at(domain, data, body, x, m=M_SAMPLES, n_basins=N_BASINS, tie=None,
           tau_detq=TAU_DETQ):
    """Value, closest set and derivative data of ``rho`` at a single point."""
    x = np.asarray(x, dtype=float)
    zb, dist = domain.locate(x)
    if dist <= domain.boundary_tol * domain.diameter:
        y = domain.point(zb)
        rec = RhoPointRecord(x=x, rho=float(data.phi(y)), closest=y[None], closest_z=np.array([zb]),
                             body=body, t=0.0, phi_y=float(data.phi(y)))
        if body.smooth:
            q = boundary_quantities(domain, data, body, zb)
            rec.mu = rec.grad = q["mu"][0]
            rec.lam = float(q["lam"][0])
            rec.hess_boundary = rec.hess = q["H"][0]
            rec.direction = q["a"][0]
            rec.W = -body.polar_hess(rec.mu) @ rec.hess_boundary
            rec.Q = np.eye(2)
            rec.detQ = 1.0
        return rec
    f = rho_field(domain, data, body, x[None], m=m, n_basins=n_basins, tie=tie,
                  tau_detq=tau_detq)
    zs = f.closest_z[0]
    zs = zs[np.isfinite(zs)]
    rec = RhoPointRecord(x=x, rho=float(f.rho[0]), closest=domain.point(zs), closest_z=zs,
                         ridge0=bool(f.count[0] > 1), warning=bool(f.warn[0]), body=body,
                         phi_y=float(data.phi(f.y[0])))
    if body.smooth:
        rec.mu = rec.grad = f.mu[0]
        rec.lam = float(f.lam[0])
        rec.W, rec.Q, rec.detQ = f.W[0], f.Q[0], float(f.detQ[0])
        rec.hess_boundary = f.H_boundary[0]
        rec.direction = f.a[0]
        rec.t = float(f.t[0])
        rec.hess = None if np.isnan(f.hess[0]).any() else f.hess[0]
        rec.ridge = rec.ridge0 or rec.detQ <= tau_detq
    else:
        rec.ridge = rec.ridge0
    return rec


def rho_bar_at(domain, data, body, x, **kw):
    return rho_at(domain, data.negate(), reflect(body), x, **kw)


def hess_rho(record, tau_detq=TAU_DETQ):
    """``D2rho(x) = D2rho(y) Q(x)^{-1}``, symmetrized."""
    if record.ridge0:
        raise RidgeProximityError("point has several closest boundary points")
    if record.detQ is None or record.detQ <= tau_detq:
        raise RidgeProximityError(f"det Q = {record.detQ} is below the ridge threshold")
    h = record.hess_boundary @ np.linalg.inv(record.Q)
    return 0.5 * (h + h.T)


def hj_residual(record):
    """``|gamma_polar(Drho) - 1|``."""
    if record.ridge0:
        raise RidgeProximityError("gradient undefined on the ridge")
    return float(abs(record.body.polar_gauge(record.grad) - 1.0))


def monotonicity_check(record, A, tol=1e-8):
    """Compare ``tr[A D2rho(x)]`` with ``tr[A D2rho(y)]``.

    Returns ``(ok, margin)`` with ``margin = tr[A D2rho(x)] - tr[A D2rho(y)]``.
    """
    A = np.asarray(A, dtype=float)
    if not np.allclose(A, A.T) or np.linalg.eigvalsh(0.5 * (A + A.T)).min() < -1e-12:
        raise PreconditionError("A must be symmetric positive semidefinite")
    hx = record.hess if record.hess is not None else hess_rho(record)
    margin = float(np.trace(A @ hx) - np.trace(A @ record.hess_boundary))
    return margin <= tol, margin


# ---------------------------------------------------------------------------
# characteristics


@dataclass
class CharacteristicTrace:
    z: float
    y: np.ndarray
    direction: np.ndarray
    t: np.ndarray
    points: np.ndarray
    detQ: np.ndarray
    rho: np.ndarray
    t_star: float
    x_star: np.ndarray
    detQ_star: float
    kind: str  # "focal" when det Q vanishes first, "collision" otherwise


def trace_characteristic(domain, data, body, z, steps=50, tol=1e-6, m=M_SAMPLES):
    """Follow the characteristic from ``Y(z)`` until it reaches the ridge.

    Points ``x(t) = y + (t - phi(y)) Dgamma_polar(mu(y))`` are sampled at
    ``steps`` values of ``t``; the first value where ``y`` stops being a
    closest point or ``det Q`` stops being positive is located by bisection.
    """
    q = boundary_quantities(domain, data, body, z)
    if q["c"][0] <= 1e-10:
        raise TransversalityError("characteristic tangent to the boundary")
    y, a, W = q["y"][0], q["a"][0], -body.polar_hess(q["mu"][0]) @ q["H"][0]
    phi_y = float(data.phi(y))
    tie = TIE * domain.diameter

    def detq(t):
        return float(np.linalg.det(np.eye(2) - (t - phi_y) * W))

    def state(ts):
        ts = np.atleast_1d(ts)
        pts = y + np.outer(ts - phi_y, a)
        inside = domain.inside(pts)
        r = np.full(ts.shape, -np.inf)
        if inside.any():
            r[inside] = rho_field(domain, data, body, pts[inside], m=m, derivatives=False).rho
        dq = np.array([detq(t) for t in ts])
        good = inside & (r >= ts - tie) & (dq > 0)
        return pts, r, dq, good

    eps = 1e-6 * domain.diameter / np.linalg.norm(a)
    _, _, _, g0 = state(phi_y + eps)
    if not g0[0]:
        raise TransversalityError("closest-point consistency fails next to the boundary")
    span = domain.diameter / np.linalg.norm(a)
    ts = phi_y + np.linspace(0.0, span, steps + 1)[1:]
    pts, r, dq, good = state(ts)
    bad = np.nonzero(~good)[0]
    if bad.size == 0:
        raise RuntimeError("characteristic did not reach the ridge")
    j = bad[0]
    lo = ts[j - 1] if j > 0 else phi_y + eps
    hi = ts[j]
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if state(mid)[3][0]:
            lo = mid
        else:
            hi = mid
    t_star = 0.5 * (lo + hi)
    dstar = detq(t_star)
    # report the focal time itself when det Q is the first failure
    ev = np.linalg.eigvals(W).real.max()
    kind = "collision"
    if ev > 0 and abs(phi_y + 1.0 / ev - t_star) <= 2 * tol:
        kind = "focal"
    keep = slice(0, j)
    return CharacteristicTrace(z=float(np.atleast_1d(z)[0]), y=y, direction=a, t=ts[keep],
                               points=pts[keep], detQ=dq[keep], rho=r[keep], t_star=t_star,
                               x_star=y + (t_star - phi_y) * a, detQ_star=dstar, kind=kind)


# ---------------------------------------------------------------------------
# ridge scan


@dataclass
class RidgeScan:
    points: np.ndarray
    labels: np.ndarray  # 0 regular, 1 ridge0, 2 ridgeQ
    hausdorff: float
    field: FieldResult

    @property
    def ridge0_cloud(self):
        return self.points[self.labels == 1]

    @property
    def cloud(self):
        return self.points[self.labels > 0]


REGULAR, RIDGE0, RIDGEQ = 0, 1, 2
LABEL_NAMES = {REGULAR: "regular", RIDGE0: "ridge0", RIDGEQ: "ridgeQ"}


def classify_ridge(field, cell=None, tau_detq=TAU_DETQ):
    """Label points from a field evaluation.

    Without ``cell`` the labels follow the exact definitions (tie tolerance,
    ``det Q <= tau_detq``).  With a grid spacing ``cell`` a point is also
    ``ridge0`` when the two best boundary branches cross within half a cell
    diagonal, and ``ridgeQ`` when the focal point of its characteristic is
    that close.
    """
    labels = np.zeros(field.rho.shape, dtype=int)
    ridge0 = field.count > 1
    ridgeq = field.detQ <= tau_detq if field.detQ is not None else np.zeros_like(ridge0)
    if cell is not None:
        reach = cell * np.sqrt(2.0) / 2.0
        dmu = np.linalg.norm(field.mu - field.mu2, axis=-1)
        cross = np.isfinite(field.gap) & (field.gap <= dmu * reach)
        ridge0 = ridge0 | cross
        ridgeq = ridgeq | (field.focal <= reach)
    labels[ridgeq] = RIDGEQ
    labels[ridge0] = RIDGE0
    return labels


def ridge_scan(domain, data, body, points, cell=None, **kw):
    """Classify grid points as regular, ``ridge0`` or ``ridgeQ``.

    Also returns the symmetric Hausdorff distance between the ``ridge0``
    cloud and the full ridge cloud.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    f = rho_field(domain, data, body, pts, **kw)
    labels = classify_ridge(f, cell)
    r0 = pts[labels == RIDGE0]
    full = pts[labels > 0]
    if len(r0) and len(full):
        d1 = cKDTree(r0).query(full)[0].max()
        d2 = cKDTree(full).query(r0)[0].max()
        hd = float(max(d1, d2))
    else:
        hd = 0.0 if len(full) == len(r0) else np.inf
    return RidgeScan(points=pts, labels=labels, hausdorff=hd, field=f)
