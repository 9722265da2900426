"""Planar domains with smooth parametrized boundary and boundary data.

Boundaries are closed counter-clockwise curves ``z -> Y(z)``, ``z in [0, 1)``,
star-shaped with respect to the origin.  The inward normal, curvature and the
Hessian of the Euclidean distance at boundary points are available in closed
form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

__all__ = [
    "Domain",
    "BoundaryData",
    "ValidationReport",
    "make_domain",
    "make_boundary_data",
    "hess_distance",
    "validate_boundary_data",
    "BoundaryError",
]

TWO_PI = 2.0 * np.pi


class BoundaryError(ValueError):
    """A point that should lie on the boundary does not."""


class Domain:
    """Star-shaped planar domain.

    Parameters
    ----------
    kind : {"disk", "ellipse", "star"}
    params : dict
        ``R`` for a disk, ``a``/``b`` for an ellipse, and for a star the
        coefficients ``c0``, ``cos`` and ``sin`` of
        ``r(theta) = c0 + sum_j cos[j-1] cos(j theta) + sin[j-1] sin(j theta)``.
    """

    boundary_tol = 1e-9

    def __init__(self, kind, params):
        self.kind = kind
        self.params = dict(params)
        if kind == "disk":
            R = float(params["R"])
            if R <= 0:
                raise ValueError("disk radius must be positive")
            self._a = self._b = R
        elif kind == "ellipse":
            self._a, self._b = float(params["a"]), float(params["b"])
            if self._a <= 0 or self._b <= 0:
                raise ValueError("ellipse semi-axes must be positive")
        elif kind == "star":
            self._c0 = float(params["c0"])
            self._cc = np.asarray(params.get("cos", []), dtype=float)
            self._ss = np.asarray(params.get("sin", []), dtype=float)
            th = np.linspace(0, TWO_PI, 4096, endpoint=False)
            if np.any(self.radius(th) <= 0):
                raise ValueError("star radius function must stay positive")
        else:
            raise ValueError(f"unknown domain kind {kind!r}")
        zs = np.linspace(0, 1, 4096, endpoint=False)
        pts = self.point(zs)
        self.diameter = float(np.max(np.linalg.norm(pts[:, None] - pts[None, ::8], axis=-1)))
        self.convex = bool(np.all(self.curvature(zs) >= -1e-12))
        self.box = (pts.min(axis=0), pts.max(axis=0))

    # radial description -------------------------------------------------

    def _star_r(self, th, order=0):
        j = np.arange(1, max(self._cc.size, self._ss.size) + 1)
        cc = np.zeros(j.size)
        ss = np.zeros(j.size)
        cc[: self._cc.size] = self._cc
        ss[: self._ss.size] = self._ss
        jt = np.multiply.outer(th, j)
        c, s = np.cos(jt), np.sin(jt)
        if order == 0:
            return self._c0 + c @ cc + s @ ss
        if order == 1:
            return -s @ (j * cc) + c @ (j * ss)
        return -c @ (j**2 * cc) - s @ (j**2 * ss)

    def radius(self, theta):
        """Boundary radius in direction ``theta``."""
        theta = np.asarray(theta, dtype=float)
        if self.kind == "star":
            return self._star_r(theta)
        a, b = self._a, self._b
        return a * b / np.sqrt((b * np.cos(theta)) ** 2 + (a * np.sin(theta)) ** 2)

    def inside(self, p):
        p = np.asarray(p, dtype=float)
        r = np.hypot(p[..., 0], p[..., 1])
        return r < self.radius(np.arctan2(p[..., 1], p[..., 0]))

    # parametrization ----------------------------------------------------

    def _derivs(self, z, order):
        z = np.asarray(z, dtype=float)
        t = TWO_PI * z
        if self.kind in ("disk", "ellipse"):
            a, b = self._a, self._b
            c, s = np.cos(t), np.sin(t)
            if order == 0:
                out = (a * c, b * s)
            elif order == 1:
                out = (-TWO_PI * a * s, TWO_PI * b * c)
            else:
                out = (-(TWO_PI**2) * a * c, -(TWO_PI**2) * b * s)
            return np.stack(out, axis=-1)
        r = self._star_r(t)
        er = np.stack([np.cos(t), np.sin(t)], axis=-1)
        et = np.stack([-np.sin(t), np.cos(t)], axis=-1)
        if order == 0:
            return r[..., None] * er
        r1 = self._star_r(t, 1)
        if order == 1:
            return TWO_PI * (r1[..., None] * er + r[..., None] * et)
        r2 = self._star_r(t, 2)
        return TWO_PI**2 * ((r2 - r)[..., None] * er + 2 * r1[..., None] * et)

    def point(self, z):
        return self._derivs(z, 0)

    def velocity(self, z):
        return self._derivs(z, 1)

    def acceleration(self, z):
        return self._derivs(z, 2)

    def tangent(self, z):
        v = self.velocity(z)
        return v / np.linalg.norm(v, axis=-1, keepdims=True)

    def normal(self, z):
        """Unit inward normal at ``Y(z)``."""
        t = self.tangent(z)
        return np.stack([-t[..., 1], t[..., 0]], axis=-1)

    def curvature(self, z):
        v = self.velocity(z)
        acc = self.acceleration(z)
        cross = v[..., 0] * acc[..., 1] - v[..., 1] * acc[..., 0]
        return cross / np.linalg.norm(v, axis=-1) ** 3

    def dist_hess(self, z):
        """Hessian of the distance function at ``Y(z)``: ``-kappa * t t^T``."""
        t = self.tangent(z)
        k = self.curvature(z)
        return -k[..., None, None] * t[..., :, None] * t[..., None, :]

    def samples(self, m):
        return np.arange(m) / m

    def locate(self, y):
        """Parameter of the boundary point nearest to ``y`` and its distance."""
        y = np.asarray(y, dtype=float)
        zs = self.samples(2048)
        pts = self.point(zs)
        z = zs[np.argmin(np.linalg.norm(pts - y, axis=-1))]
        for _ in range(50):
            d = self.point(z) - y
            v = self.velocity(z)
            f = d @ v
            fp = v @ v + d @ self.acceleration(z)
            step = -f / fp if fp > 0 else -f / (v @ v)
            step = float(np.clip(step, -1 / 2048, 1 / 2048))
            z = z + step
            if abs(step) < 1e-16:
                break
        z = z % 1.0
        return z, float(np.linalg.norm(self.point(z) - y))

    def on_boundary(self, y):
        return self.locate(y)[1] <= self.boundary_tol * self.diameter

    def boundary_table(self, m=720):
        """Rows ``(z, Y1, Y2, nu1, nu2, kappa)`` for ``m`` equally spaced samples."""
        z = self.samples(m)
        return np.column_stack([z, self.point(z), self.normal(z), self.curvature(z)])

    def __repr__(self):
        return f"Domain({self.kind!r}, {self.params!r})"


def make_domain(descriptor):
    d = dict(descriptor)
    kind = d.pop("kind")
    return Domain(kind, d)


def hess_distance(domain, y):
    """``D^2 d(y)`` at a boundary point ``y``.

    Raises :class:`BoundaryError` if ``y`` is farther than the boundary
    tolerance from the boundary.
    """
    z, dist = domain.locate(y)
    if dist > domain.boundary_tol * domain.diameter:
        raise BoundaryError(f"point {tuple(y)} is {dist:.3e} away from the boundary")
    return domain.dist_hess(z)


@dataclass(frozen=True)
class BoundaryData:
    """Boundary function ``phi`` with gradient and Hessian.

    ``kind`` is one of ``zero``, ``linear``, ``quadratic``, ``trig``.
    Parameters: ``p``, ``c`` for linear; ``A``, ``b``, ``c`` for
    ``phi = x^T A x / 2 + b.x + c``; for trig, lists ``amp``, ``freq`` (2-vectors)
    and ``phase`` giving ``sum amp_j cos(freq_j . x + phase_j)``.
    """

    kind: str
    params: dict = field(default_factory=dict)
    sign: float = 1.0

    def __post_init__(self):
        if self.kind not in ("zero", "linear", "quadratic", "trig"):
            raise ValueError(f"unknown boundary data kind {self.kind!r}")

    def negate(self):
        return BoundaryData(self.kind, self.params, -self.sign)

    def _arr(self, key, default):
        return np.asarray(self.params.get(key, default), dtype=float)

    def phi(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "zero":
            v = np.zeros(x.shape[:-1])
        elif self.kind == "linear":
            v = x @ self._arr("p", [0, 0]) + float(self.params.get("c", 0.0))
        elif self.kind == "quadratic":
            A = self._arr("A", np.zeros((2, 2)))
            v = 0.5 * np.einsum("...i,ij,...j->...", x, A, x) + x @ self._arr("b", [0, 0])
            v = v + float(self.params.get("c", 0.0))
        else:
            amp, freq, ph = self._trig()
            v = np.cos(x @ freq.T + ph) @ amp
        return self.sign * v

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "zero":
            g = np.zeros(x.shape)
        elif self.kind == "linear":
            g = np.broadcast_to(self._arr("p", [0, 0]), x.shape).copy()
        elif self.kind == "quadratic":
            A = self._arr("A", np.zeros((2, 2)))
            g = x @ (0.5 * (A + A.T)) + self._arr("b", [0, 0])
        else:
            amp, freq, ph = self._trig()
            g = (-np.sin(x @ freq.T + ph) * amp) @ freq
        return self.sign * g

    def hess(self, x):
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1] + (2, 2)
        if self.kind in ("zero", "linear"):
            h = np.zeros(shape)
        elif self.kind == "quadratic":
            A = self._arr("A", np.zeros((2, 2)))
            h = np.broadcast_to(0.5 * (A + A.T), shape).copy()
        else:
            amp, freq, ph = self._trig()
            c = -np.cos(x @ freq.T + ph) * amp
            h = np.einsum("...j,ja,jb->...ab", c, freq, freq)
        return self.sign * h

    def _trig(self):
        amp = self._arr("amp", [])
        freq = self._arr("freq", np.zeros((0, 2))).reshape(-1, 2)
        ph = self._arr("phase", np.zeros(amp.size))
        return amp, freq, ph


def make_boundary_data(descriptor):
    d = dict(descriptor)
    kind = d.pop("kind", "zero")
    return BoundaryData(kind, d)


@dataclass
class ValidationReport:
    mode: str
    ok: bool
    max_polar: float
    lipschitz_margin: float
    offending: list
    message: str = ""


def _lipschitz_margin(domain, data, body, n_pairs, seed):
    rng = np.random.default_rng(seed)
    lo, hi = domain.box
    pts = rng.uniform(lo, hi, size=(4 * n_pairs, 2))
    pts = pts[domain.inside(pts)]
    if pts.shape[0] < 2:
        return np.inf
    i = rng.integers(0, pts.shape[0], n_pairs)
    j = rng.integers(0, pts.shape[0], n_pairs)
    keep = i != j
    x, y = pts[i[keep]], pts[j[keep]]
    dphi = data.phi(x) - data.phi(y)
    return float(np.min(np.minimum(body.gauge(x - y) - dphi, body.gauge(y - x) + dphi)))


def validate_boundary_data(domain, data, body, mode="strict_interior", m=720, tol=1e-9,
                           n_pairs=10000, seed=0):
    """Check admissibility of ``phi`` against the polar gauge.

    ``strict_interior`` requires ``gamma_polar(Dphi) < 1`` on all boundary
    samples.  ``transversal`` allows equality but requires every normal-cone
    direction at ``Dphi(y)`` to be transversal to the boundary normal; sign
    changes of the transversality function between samples are located by
    root finding.
    """
    if mode not in ("strict_interior", "transversal"):
        raise ValueError(f"unknown validation mode {mode!r}")
    z = domain.samples(m)
    y = domain.point(z)
    dphi = data.grad(y)
    pol = body.polar_gauge(dphi)
    max_polar = float(pol.max())
    margin = _lipschitz_margin(domain, data, body, n_pairs, seed)
    if mode == "strict_interior":
        ok = max_polar < 1.0 and margin > 0
        off = [tuple(p) for p in y[pol >= 1.0]]
        msg = "" if ok else "boundary gradient reaches the polar boundary" if off else \
            "strict Lipschitz condition violated on sampled pairs"
        return ValidationReport(mode, ok, max_polar, margin, off, msg)

    if max_polar > 1.0 + tol:
        off = [tuple(p) for p in y[pol > 1.0 + tol]]
        return ValidationReport(mode, False, max_polar, margin, off,
                                "boundary gradient outside the polar set")
    eq = np.abs(pol - 1.0) <= tol

    def transversality(zz):
        yy = domain.point(zz)
        nu = domain.normal(zz)
        mu = data.grad(yy)
        if body.smooth:
            return np.sum(body.polar_grad(mu) * nu, axis=-1)
        gens = body._polar.normals  # vertices of K: outer normals of the polar facets
        act = (mu @ gens.T) >= 1.0 - 1e-7
        s = nu @ gens.T
        lo = np.where(act, s, np.inf).min(axis=-1)
        hi = np.where(act, s, -np.inf).max(axis=-1)
        return np.where(lo > 0, lo, np.where(hi < 0, hi, 0.0))

    s = transversality(z)
    off_z = list(z[eq & (np.abs(s) <= tol)])
    idx = np.nonzero(eq)[0]
    for i in idx:
        jn = (i + 1) % m
        if eq[jn] and s[i] * s[jn] < 0:
            za, zb = z[i], z[i] + 1.0 / m
            root = brentq(lambda t: float(transversality(np.array(t % 1.0))), za, zb, xtol=1e-14)
            off_z.append(root % 1.0)
    pts = []
    for zz in sorted(off_z):
        p = domain.point(zz)
        if all(np.linalg.norm(p - q) > 1e-6 * domain.diameter for q in pts):
            pts.append(p)
    off = [tuple(p) for p in pts]
    ok = not off
    return ValidationReport(mode, ok, max_polar, margin, off,
                            "" if ok else "normal cone tangent to the boundary")
