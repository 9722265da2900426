"""Convex constraint bodies, their gauges and polar gauges.

A body ``K`` is a compact convex set with the origin in its interior.  Its
gauge ``gamma(x) = inf{t > 0 : x in tK}`` is positively one-homogeneous and
its polar gauge ``gamma_polar`` is the support function of ``K``.  All
evaluators act on arrays of shape ``(..., n)`` and broadcast over the
leading axes.

Analytic bodies (balls, ellipsoids, p-balls with ``1 < p < inf``) have both
gauges in closed form.  Polytopes carry gauge evaluation only.  The smoothing
construction turns a polytope into a ``C^2`` body with positive curvature:
its gauge is closed form and its polar gauge is computed by a one-dimensional
maximization over directions (planar bodies only).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.spatial import ConvexHull

__all__ = [
    "ConvexBody",
    "NonsmoothBodyError",
    "SmallArgumentError",
    "make_body",
    "reflect",
    "smooth_approximation",
    "gauge_bounds",
    "curvature_constant",
    "difference_quotient_constant",
    "hausdorff_polar",
]

C2 = "C2_positive_curvature"
NONSMOOTH = "nonsmooth"

# Hessian arguments below this fraction of the body scale are refused.
SMALL_ARG = 1e-12


class NonsmoothBodyError(ValueError):
    """Derivative requested on a body without C^2 boundary."""


class SmallArgumentError(ValueError):
    """Hessian requested too close to the origin."""


def _norm(x):
    return np.sqrt(np.einsum("...i,...i->...", x, x))


def _outer(a, b):
    return a[..., :, None] * b[..., None, :]


class _Gauge:
    """One-homogeneous convex function with optional derivatives."""

    smooth = True

    def __init__(self, dim, scale=1.0):
        self.dim = dim
        self.scale = scale

    def _check_hess_arg(self, x):
        if np.any(_norm(x) < SMALL_ARG * self.scale):
            raise SmallArgumentError("Hessian of a gauge requested at |x| ~ 0")

    def value(self, x):
        raise NotImplementedError

    def pairwise(self, P, Y):
        """``value(P[..., j, :] - Y[..., k, :])`` as an array ``(..., J, K)``."""
        return self.value(P[..., :, None, :] - Y[..., None, :, :])

    def grad(self, x):
        raise NonsmoothBodyError("gradient not available for a nonsmooth body")

    def hess(self, x):
        raise NonsmoothBodyError("Hessian not available for a nonsmooth body")


class _Quadratic(_Gauge):
    # gamma(x) = sqrt(x^T M x) with M diagonal positive
    def __init__(self, diag):
        diag = np.asarray(diag, dtype=float)
        super().__init__(diag.size, scale=float(1.0 / np.sqrt(diag.min())))
        self.diag = diag

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return np.sqrt(np.sum(self.diag * x * x, axis=-1))

    def pairwise(self, P, Y):
        acc = None
        for i, c in enumerate(self.diag):
            d = P[..., :, None, i] - Y[..., None, :, i]
            d *= d
            if c != 1.0:
                d *= c
            acc = d if acc is None else np.add(acc, d, out=acc)
        return np.sqrt(acc, out=acc)

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        return self.diag * x / self.value(x)[..., None]

    def hess(self, x):
        x = np.asarray(x, dtype=float)
        self._check_hess_arg(x)
        g = self.value(x)[..., None, None]
        mx = self.diag * x
        return np.diag(self.diag) / g - _outer(mx, mx) / g**3


class _PNorm(_Gauge):
    def __init__(self, dim, p):
        super().__init__(dim)
        self.p = float(p)

    def value(self, x):
        x = np.abs(np.asarray(x, dtype=float))
        m = x.max(axis=-1)
        safe = np.where(m > 0, m, 1.0)
        r = x / safe[..., None]
        return m * np.sum(r**self.p, axis=-1) ** (1.0 / self.p)

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        g = self.value(x)[..., None]
        return np.sign(x) * (np.abs(x) / g) ** (self.p - 1.0)

    def hess(self, x):
        x = np.asarray(x, dtype=float)
        self._check_hess_arg(x)
        p = self.p
        g = self.value(x)[..., None]
        a = np.abs(x) / g
        with np.errstate(divide="ignore"):
            diag = a ** (p - 2.0)
        dg = self.grad(x)
        eye = np.eye(self.dim)
        return (p - 1.0) / g[..., None] * (diag[..., None] * eye - _outer(dg, dg))


class _MaxLinear(_Gauge):
    # gamma(x) = max_f <a_f, x>
    smooth = False

    def __init__(self, normals):
        normals = np.asarray(normals, dtype=float)
        super().__init__(normals.shape[1], scale=float(1.0 / _norm(normals).max()))
        self.normals = normals

    def value(self, x):
        return np.max(np.asarray(x, dtype=float) @ self.normals.T, axis=-1)


class _SmoothedMax(_Gauge):
    """Rounded maximum of linear forms plus a Euclidean term, scaled.

    ``s * ((sum_f max(<a_f, x>, 0)^p)^(1/p) + |x| / k)``.  This is the support
    function of ``s * (L_p + B/k)`` where ``L_p`` contains the polytope
    ``conv{a_f}``.
    """

    def __init__(self, normals, p, k, s):
        normals = np.asarray(normals, dtype=float)
        super().__init__(normals.shape[1], scale=float(1.0 / _norm(normals).max()))
        self.normals = normals
        self.p = float(p)
        self.k = float(k)
        self.s = float(s)

    def _parts(self, x):
        # facet loops: numpy reductions over a short trailing axis are slow
        a = self.normals
        t = []
        for f in range(a.shape[0]):
            tf = x[..., 0] * a[f, 0]
            for i in range(1, self.dim):
                tf = tf + x[..., i] * a[f, i]
            t.append(np.maximum(tf, 0.0))
        m = t[0]
        for tf in t[1:]:
            m = np.maximum(m, tf)
        inv = 1.0 / np.where(m > 0, m, 1.0)
        r = [tf * inv for tf in t]
        S = r[0] ** self.p
        for rf in r[1:]:
            S = S + rf**self.p
        return m, r, S

    def value(self, x):
        x = np.asarray(x, dtype=float)
        m, _, S = self._parts(x)
        return self.s * (m * S ** (1.0 / self.p) + _norm(x) / self.k)

    def pairwise(self, P, Y):
        # linear forms separate over the difference, so they are built once per side
        P, Y = np.asarray(P, dtype=float), np.asarray(Y, dtype=float)
        A, B = P @ self.normals.T, Y @ self.normals.T
        S = None
        for f in range(self.normals.shape[0]):
            t = A[..., :, None, f] - B[..., None, :, f]
            np.maximum(t, 0.0, out=t)
            np.power(t, self.p, out=t)
            S = t if S is None else np.add(S, t, out=S)
        out = np.power(S, 1.0 / self.p)
        r2 = None
        for i in range(self.dim):
            d = P[..., :, None, i] - Y[..., None, :, i]
            d *= d
            r2 = d if r2 is None else np.add(r2, d, out=r2)
        np.sqrt(r2, out=r2)
        r2 /= self.k
        out += r2
        out *= self.s
        # raw powers lose range for tiny or huge forms; redo those with rescaling
        bad = ~((S > 1e-280) & (S < 1e280))
        if bad.any():
            D = P[..., :, None, :] - Y[..., None, :, :]
            out[bad] = self.value(D[bad])
        return out

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        p = self.p
        _, r, S = self._parts(x)
        c = S ** ((1.0 - p) / p)
        dl = sum(np.multiply.outer(rf ** (p - 1.0) * c, af) for rf, af in zip(r, self.normals))
        return self.s * (dl + x / (_norm(x)[..., None] * self.k))

    def hess(self, x):
        x = np.asarray(x, dtype=float)
        self._check_hess_arg(x)
        p, d = self.p, self.dim
        m, r, S = self._parts(x)
        Sq = S ** (1.0 / p)
        L = m * Sq
        c = Sq / S
        dl = np.zeros(x.shape)
        aa = np.zeros(x.shape[:-1] + (d, d))
        for rf, af in zip(r, self.normals):
            wf = rf ** (p - 2.0) * c
            dl += np.multiply.outer(wf * rf, af)
            aa += np.multiply.outer(wf, np.outer(af, af))
        hl = (p - 1.0) * (aa / m[..., None, None] - _outer(dl, dl) / L[..., None, None])
        nx = _norm(x)[..., None, None]
        xh = x / _norm(x)[..., None]
        hb = (np.eye(d) - _outer(xh, xh)) / (nx * self.k)
        return self.s * (hl + hb)


class _Scaled(_Gauge):
    def __init__(self, base, c):
        super().__init__(base.dim, base.scale)
        self.base = base
        self.c = float(c)
        self.smooth = base.smooth

    def value(self, x):
        return self.c * self.base.value(x)

    def pairwise(self, P, Y):
        return self.c * self.base.pairwise(P, Y)

    def grad(self, x):
        return self.c * self.base.grad(x)

    def hess(self, x):
        return self.c * self.base.hess(x)


class _Reflected(_Gauge):
    def __init__(self, base):
        super().__init__(base.dim, base.scale)
        self.base = base
        self.smooth = base.smooth

    def value(self, x):
        return self.base.value(-np.asarray(x, dtype=float))

    def grad(self, x):
        return -self.base.grad(-np.asarray(x, dtype=float))

    def hess(self, x):
        return self.base.hess(-np.asarray(x, dtype=float))


class _NumericPolar2D(_Gauge):
    """Polar of a smooth planar gauge by maximizing <u, y>/gamma(u) over u.

    The maximizer ``x`` (a point of the unit sphere of the primal gauge after
    normalization) gives the gradient ``x / gamma(x)``.  The Hessian solves
    ``D2gamma(xt) G = (I - y xt^T / g) / g`` together with ``G y = 0``.
    """

    n_table = 512

    def __init__(self, primal):
        if primal.dim != 2:
            raise ValueError("numerical polar gauges are implemented in the plane only")
        super().__init__(2, scale=1.0 / primal.scale)
        self.primal = primal
        th = np.linspace(0.0, 2 * np.pi, self.n_table, endpoint=False)
        self._theta = th
        self._dirs = np.stack([np.cos(th), np.sin(th)], axis=-1)
        self._gdir = primal.value(self._dirs)

    def _argmax(self, y):
        y = np.asarray(y, dtype=float)
        shape = y.shape[:-1]
        yf = y.reshape(-1, 2)
        ratio = (yf @ self._dirs.T) / self._gdir
        i = np.argmax(ratio, axis=1)
        dth = 2 * np.pi / self.n_table
        th0 = self._theta[i]
        th = th0.copy()
        for _ in range(30):
            u = np.stack([np.cos(th), np.sin(th)], axis=-1)
            up = np.stack([-u[:, 1], u[:, 0]], axis=-1)
            g = self.primal.value(u)
            dg = self.primal.grad(u)
            uy = np.sum(u * yf, axis=1)
            num = np.sum(up * yf, axis=1) * g - uy * np.sum(dg * up, axis=1)
            hq = np.einsum("ni,nij,nj->n", up, self.primal.hess(u), up)
            den = -uy * hq
            step = np.where(den < 0, -num / np.where(den < 0, den, -1.0), 0.0)
            step = np.clip(step, -dth, dth)
            th = np.clip(th + step, th0 - dth, th0 + dth)
            if np.all(np.abs(step) < 1e-15):
                break
        u = np.stack([np.cos(th), np.sin(th)], axis=-1)
        return u.reshape(shape + (2,)), yf.reshape(shape + (2,))

    def value(self, y):
        u, y = self._argmax(y)
        return np.sum(u * y, axis=-1) / self.primal.value(u)

    def grad(self, y):
        u, _ = self._argmax(y)
        return u / self.primal.value(u)[..., None]

    def hess(self, y):
        y = np.asarray(y, dtype=float)
        self._check_hess_arg(y)
        u, _ = self._argmax(y)
        gu = self.primal.value(u)
        xt = u / gu[..., None]
        gp = np.sum(xt * y, axis=-1)
        H = self.primal.hess(xt)
        rhs = (np.eye(2) - _outer(y, xt) / gp[..., None, None]) / gp[..., None, None]
        A = np.concatenate([H, y[..., None, :]], axis=-2)
        B = np.concatenate([rhs, np.zeros(y.shape[:-1] + (1, 2))], axis=-2)
        At = np.swapaxes(A, -1, -2)
        G = np.linalg.solve(At @ A, At @ B)
        return 0.5 * (G + np.swapaxes(G, -1, -2))


@dataclass(frozen=True, eq=False)
class ConvexBody:
    """Evaluator bundle for a gauge and its polar.

    Attributes
    ----------
    dim : int
        Ambient dimension.
    kind : str
        One of ``euclidean_ball``, ``ellipsoid``, ``p_ball(p)``, ``polytope``,
        ``smoothed(k)``.
    smoothness : str
        ``C2_positive_curvature`` or ``nonsmooth``.
    params : dict
        Descriptor that produced the body.
    """

    dim: int
    kind: str
    smoothness: str
    params: dict
    _gauge: _Gauge = field(repr=False)
    _polar: _Gauge = field(repr=False)

    @property
    def smooth(self):
        return self.smoothness == C2

    @property
    def scale(self):
        return self._gauge.scale

    def gauge(self, x):
        return self._gauge.value(x)

    def gauge_pairwise(self, P, Y):
        """``gauge(P[..., j, :] - Y[..., k, :])`` for all pairs, shape ``(..., J, K)``."""
        return self._gauge.pairwise(np.asarray(P, dtype=float), np.asarray(Y, dtype=float))

    def gauge_grad(self, x):
        self._require_smooth()
        return self._gauge.grad(x)

    def gauge_hess(self, x):
        self._require_smooth()
        return self._gauge.hess(x)

    def polar_gauge(self, y):
        return self._polar.value(y)

    def polar_grad(self, y):
        self._require_smooth()
        return self._polar.grad(y)

    def polar_hess(self, y):
        self._require_smooth()
        return self._polar.hess(y)

    def _require_smooth(self):
        if not self.smooth:
            raise NonsmoothBodyError(f"body kind {self.kind!r} has no derivatives")

    @cached_property
    def bounds(self):
        """``(C0, C1)`` with ``C0|x| <= gamma(x) <= C1|x|``."""
        return gauge_bounds(self)

    @property
    def C0(self):
        return self.bounds[0]

    @property
    def C1(self):
        return self.bounds[1]


def _polytope_normals(vertices):
    vertices = np.asarray(vertices, dtype=float)
    hull = ConvexHull(vertices)
    eq = hull.equations
    off = eq[:, -1]
    if np.any(off > -1e-12 * np.abs(vertices).max()):
        raise ValueError("origin is not an interior point of the polytope")
    normals = eq[:, :-1] / (-off[:, None])
    return normals, vertices[hull.vertices]


def _polytope(vertices, kind, params):
    normals, verts = _polytope_normals(vertices)
    return ConvexBody(
        dim=normals.shape[1],
        kind=kind,
        smoothness=NONSMOOTH,
        params=params,
        _gauge=_MaxLinear(normals),
        _polar=_MaxLinear(verts),
    )


def make_body(descriptor):
    """Build a body from a descriptor dictionary.

    Recognized descriptors::

        {"kind": "euclidean_ball", "radius": 1.0, "dim": 2}
        {"kind": "ellipsoid", "axes": [2, 1]}
        {"kind": "p_ball", "p": 4, "dim": 2}
        {"kind": "polytope", "vertices": [[1, 0], [0, 1], [-1, -1]]}
        {"kind": "smoothed", "k": 4, "base": {...}}
    """
    d = dict(descriptor)
    kind = d.get("kind")
    if kind == "euclidean_ball":
        r = float(d.get("radius", 1.0))
        n = int(d.get("dim", 2))
        if r <= 0:
            raise ValueError("ball radius must be positive")
        return ConvexBody(n, kind, C2, d, _Quadratic(np.full(n, 1 / r**2)),
                          _Quadratic(np.full(n, r**2)))
    if kind == "ellipsoid":
        a = np.asarray(d["axes"], dtype=float)
        if a.ndim != 1 or a.size < 2 or np.any(a <= 0):
            raise ValueError("ellipsoid semi-axes must be positive")
        return ConvexBody(a.size, kind, C2, d, _Quadratic(1 / a**2), _Quadratic(a**2))
    if kind == "p_ball":
        p = float(d["p"])
        n = int(d.get("dim", 2))
        if p == 1 or math.isinf(p):
            corners = np.eye(n) if p == 1 else None
            if p == 1:
                verts = np.concatenate([corners, -corners])
            else:
                grids = np.meshgrid(*([[-1.0, 1.0]] * n), indexing="ij")
                verts = np.stack([g.ravel() for g in grids], axis=-1)
            return _polytope(verts, f"p_ball({d['p']})", d)
        if not 1 < p < math.inf:
            raise ValueError("p-ball exponent must satisfy 1 <= p <= inf")
        q = p / (p - 1)
        return ConvexBody(n, f"p_ball({d['p']})", C2, d, _PNorm(n, p), _PNorm(n, q))
    if kind == "polytope":
        return _polytope(d["vertices"], kind, d)
    if kind == "smoothed":
        return smooth_approximation(make_body(d["base"]), int(d["k"]))
    raise ValueError(f"unknown body kind {kind!r}")


def reflect(body):
    """Return the body ``-K``: gauge ``x -> gamma(-x)``, polar ``y -> gamma_polar(-y)``."""
    return ConvexBody(
        dim=body.dim,
        kind=body.kind,
        smoothness=body.smoothness,
        params={"kind": "reflected", "base": body.params},
        _gauge=_Reflected(body._gauge),
        _polar=_Reflected(body._polar),
    )


def rounding_exponent(n_facets, k):
    """Exponent used to round a maximum of ``n_facets`` linear forms at level ``k``.

    Chosen so that ``n_facets**(1/p) - 1 <= 1/k``; at least 3 so the rounded
    maximum is twice differentiable.
    """
    if n_facets <= 1:
        return 3.0
    return float(max(3, math.ceil(math.log(n_facets) / math.log1p(1.0 / k))))


def smoothing_tolerance(body, k):
    """Bound on the Hausdorff distance between smoothed and original polar sets."""
    if body.smooth:
        return float(body.bounds[1] / k)
    M = float(_norm(body._gauge.normals).max())
    return ((2 + 1 / k) * M + 1 + 1 / k) / k


def smooth_approximation(body, k):
    """Level-``k`` smooth outer approximation of the polar set.

    For a polytope with facet normals ``a_f`` (the vertices of the polar set)
    the new gauge is ``(1 + 1/k) * (||(<a_f, x>)_+||_p + |x|/k)`` with the
    exponent from :func:`rounding_exponent`.  Polar sets then shrink strictly
    as ``k`` grows and converge to the original polar set.  A smooth body is
    only rescaled by ``1 + 1/k``.
    """
    k = int(k)
    if k < 1:
        raise ValueError("smoothing level must be >= 1")
    s = 1.0 + 1.0 / k
    params = {"kind": "smoothed", "k": k, "base": body.params}
    if body.smooth:
        return ConvexBody(body.dim, f"smoothed({k})", C2, params,
                          _Scaled(body._gauge, s), _Scaled(body._polar, 1.0 / s))
    base = body._gauge
    while isinstance(base, _Reflected):
        # a reflected polytope is again a polytope
        base = _MaxLinear(-base.base.normals)
    p = rounding_exponent(base.normals.shape[0], k)
    gauge = _SmoothedMax(base.normals, p, k, s)
    return ConvexBody(body.dim, f"smoothed({k})", C2, params, gauge, _NumericPolar2D(gauge))


def _unit_dirs(n, count, rng=None):
    if n == 2:
        th = np.linspace(0.0, 2 * np.pi, count, endpoint=False)
        return np.stack([np.cos(th), np.sin(th)], axis=-1)
    rng = np.random.default_rng(0) if rng is None else rng
    v = rng.standard_normal((count, n))
    return v / _norm(v)[:, None]


def gauge_bounds(body, n_dirs=2048):
    """Extremize the gauge on the Euclidean unit sphere.

    Dense direction sampling followed by bounded scalar refinement around the
    best samples (angle parametrization in the plane).
    """
    u = _unit_dirs(body.dim, n_dirs)
    g = body.gauge(u)
    if body.dim != 2:
        return float(g.min()), float(g.max())
    dth = 2 * np.pi / n_dirs
    out = []
    for sign, idx in ((1.0, int(np.argmin(g))), (-1.0, int(np.argmax(g)))):
        th0 = idx * dth

        def f(t):
            return sign * float(body.gauge(np.array([math.cos(t), math.sin(t)])))

        res = minimize_scalar(f, bounds=(th0 - dth, th0 + dth), method="bounded",
                              options={"xatol": 1e-12})
        out.append(min(sign * g[idx], res.fun) * sign)
    return float(out[0]), float(out[1])


def _symmetric_section(body, dirs):
    # points of the boundary of K intersected with -K along the given directions
    scale = np.maximum(body.gauge(dirs), body.gauge(-dirs))
    return dirs / scale[:, None]


def curvature_constant(body, n_dirs=720):
    """``2 * max <D2gamma(v) w, w>`` over ``v`` on the boundary of ``K`` and ``w`` in ``K ∩ -K``."""
    dirs = _unit_dirs(body.dim, n_dirs)
    v = dirs / body.gauge(dirs)[:, None]
    H = body.gauge_hess(v)
    w = _symmetric_section(body, dirs)
    vals = np.einsum("wi,vij,wj->vw", w, H, w)
    return float(2 * vals.max())


def difference_quotient_constant(body, samples=None, n=20000, seed=0):
    """Sampled supremum of the second difference quotient times ``gamma(x) - h``.

    Parameters
    ----------
    samples : iterable of (x, xi, h), optional
        Explicit samples.  ``xi`` is rescaled so that
        ``max(gamma(xi), gamma(-xi)) = 1``.  When omitted, ``n`` random
        samples are drawn.

    Returns
    -------
    estimate : float
    skipped : int
        Number of samples with ``h >= gamma(x)``.
    """
    if not body.smooth:
        raise NonsmoothBodyError("difference quotient constant needs a C^2 body")
    if samples is None:
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((n, body.dim))
        xi = rng.standard_normal((n, body.dim))
        h = rng.uniform(0.0, 1.0, n) ** 2 * body.gauge(x)
    else:
        x, xi, h = (np.asarray(a, dtype=float) for a in zip(*samples))
    xi = xi / np.maximum(body.gauge(xi), body.gauge(-xi))[:, None]
    gx = body.gauge(x)
    ok = (h > 0) & (h < gx)
    x, xi, h, gx = x[ok], xi[ok], h[ok], gx[ok]
    hv = h[:, None]
    q = (body.gauge(x + hv * xi) + body.gauge(x - hv * xi) - 2 * gx) / h**2
    est = float(np.max(q * (gx - h))) if q.size else 0.0
    return est, int((~ok).sum())


def hausdorff_polar(a, b, n_dirs=2048):
    """Hausdorff distance between the polar sets of two bodies.

    The support function of a polar set is the gauge of the body, so this is
    the sup over unit directions of ``|gamma_a - gamma_b|``.
    """
    u = _unit_dirs(a.dim, n_dirs)
    return float(np.max(np.abs(a.gauge(u) - b.gauge(u))))
