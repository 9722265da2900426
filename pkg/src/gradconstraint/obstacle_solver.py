"""Gradient-constrained minimization and the double obstacle problem.

Two independent routes to the minimizer of ``J[v] = int F(Dv) + g(v)``:

* the double obstacle route: mollify the obstacle fields ``rho`` and
  ``-rho_bar``, replace the obstacles by a smooth penalty, minimize the
  penalized energy with damped Newton and drive ``(eps, delta) -> 0``;
* the direct route: an augmented Lagrangian for the constraint
  ``Dv in K_polar`` on cell-averaged gradients, with semismooth Newton on
  the squared distance to the polar set.

Both discretize with P1 elements on a uniform lattice.  Interior triangles
come from both diagonal splittings of every cell, so the Dirichlet energy
reproduces the 5-point Laplacian.  Nodes next to the boundary are snapped
along axis or diagonal lattice edges onto the boundary curve and carry
Dirichlet values there.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import pyamg
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator
from scipy.ndimage import binary_dilation
from scipy.sparse.linalg import splu

from .convex_body import difference_quotient_constant, make_body, reflect
from .geometry import validate_boundary_data
from .hj_field import _refine, _Sampler, classify_ridge, distance_field, rho_field

log = logging.getLogger(__name__)

__all__ = [
    "Integrand",
    "make_integrand",
    "beta_tilde",
    "beta",
    "beta_prime",
    "Grid",
    "Mesh",
    "ObstacleField",
    "MollifiedObstacles",
    "ObstacleSolution",
    "default_schedule",
    "mollify_obstacles",
    "solve_penalized",
    "solve_double_obstacle",
    "solve_gradient_constrained",
    "project_polar",
    "classify_and_verify",
    "discrete_hessian_sup",
    "penalization_bounds",
    "prepare_fields",
    "ridge_mask",
    "default_tolerances",
    "domain_mesh",
    "SolverError",
]


class SolverError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# integrands


@dataclass(frozen=True)
class Integrand:
    """``F(Z)`` and ``g(z)`` with derivatives and declared structural constants."""

    F: callable
    DF: callable
    D2F: callable
    g: callable
    dg: callable
    d2g: callable
    bounds: dict
    quadratic: bool = False
    name: str = "custom"


def make_integrand(descriptor):
    """Integrand from a descriptor.

    ``{"kind": "quadratic", "A": [[1, 0], [0, 1]], "load": 1.0, "mass": 0.0}``
    gives ``F = Z^T A Z / 2`` and ``g = -load*z + mass*z^2/2``.  The kind
    ``torsion`` is the isotropic case ``A = I``.
    """
    d = dict(descriptor)
    kind = d.get("kind", "torsion")
    if kind not in ("torsion", "quadratic"):
        raise ValueError(f"unknown integrand kind {kind!r}")
    A = np.asarray(d.get("A", np.eye(2)), dtype=float) if kind == "quadratic" else np.eye(2)
    A = 0.5 * (A + A.T)
    ev = np.linalg.eigvalsh(A)
    if ev.min() <= 0:
        raise ValueError("F must be uniformly convex")
    load = float(d.get("load", 1.0))
    mass = float(d.get("mass", 0.0))
    if mass < 0:
        raise ValueError("g must be convex")

    def F(Z):
        return 0.5 * np.einsum("...i,ij,...j->...", Z, A, Z)

    def DF(Z):
        return Z @ A

    def D2F(Z):
        return np.broadcast_to(A, np.shape(Z)[:-1] + (2, 2))

    def g(z):
        return -load * z + 0.5 * mass * z * z

    def dg(z):
        return -load + mass * z

    def d2g(z):
        return np.full(np.shape(z), mass)

    bounds = {"c3": ev.min() / 2, "c4": ev.max() / 2, "c5": max(abs(load), mass),
              "c6": ev.max(), "c7": mass, "c8": ev.min(), "c9": ev.max(), "q": 1.0}
    return Integrand(F, DF, D2F, g, dg, d2g, bounds, quadratic=True, name=kind)


# ---------------------------------------------------------------------------
# penalty


def beta_tilde(t, delta):
    """C^2 convex penalty: 0 for ``t <= 0``, ``t^2/(2 delta)`` for ``t >= delta``.

    On ``[0, delta]`` it is the quintic matching value, slope and curvature at
    both ends: ``delta * (1.5 s^3 - 1.5 s^4 + 0.5 s^5)`` with ``s = t/delta``.
    """
    t = np.asarray(t, dtype=float)
    s = np.clip(t / delta, 0.0, 1.0)
    mid = delta * s**3 * (1.5 - 1.5 * s + 0.5 * s * s)
    return np.where(t <= 0, 0.0, np.where(t >= delta, t * t / (2 * delta), mid))


def beta(t, delta):
    t = np.asarray(t, dtype=float)
    s = np.clip(t / delta, 0.0, 1.0)
    mid = s * s * (4.5 - 6.0 * s + 2.5 * s * s)
    return np.where(t <= 0, 0.0, np.where(t >= delta, t / delta, mid))


def beta_prime(t, delta):
    t = np.asarray(t, dtype=float)
    s = np.clip(t / delta, 0.0, 1.0)
    mid = s * (9.0 - 18.0 * s + 10.0 * s * s) / delta
    return np.where(t <= 0, 0.0, np.where(t >= delta, 1.0 / delta, mid))


# ---------------------------------------------------------------------------
# lattice and mesh


@dataclass
class Grid:
    """Uniform lattice ``x_i = i h``, ``y_j = j h`` aligned with the origin."""

    h: float
    i0: int
    j0: int
    n1: int
    n2: int

    @classmethod
    def cover(cls, domain, h, pad=1):
        lo, hi = domain.box
        i0 = int(np.floor(lo[0] / h + 1e-9)) - pad
        j0 = int(np.floor(lo[1] / h + 1e-9)) - pad
        i1 = int(np.ceil(hi[0] / h - 1e-9)) + pad
        j1 = int(np.ceil(hi[1] / h - 1e-9)) + pad
        return cls(float(h), i0, j0, i1 - i0 + 1, j1 - j0 + 1)

    @property
    def shape(self):
        return (self.n1, self.n2)

    @property
    def x(self):
        return (self.i0 + np.arange(self.n1)) * self.h

    @property
    def y(self):
        return (self.j0 + np.arange(self.n2)) * self.h

    @property
    def points(self):
        X, Y = np.meshgrid(self.x, self.y, indexing="ij")
        return np.stack([X, Y], axis=-1)

    def index_of(self, p):
        i = int(round(p[0] / self.h)) - self.i0
        j = int(round(p[1] / self.h)) - self.j0
        return i, j


def _edge_pairs(shape):
    """Axis and diagonal lattice edges (every edge of either splitting)."""
    n1, n2 = shape
    ids = np.arange(n1 * n2).reshape(shape)
    a = np.concatenate([ids[:-1, :].ravel(), ids[:, :-1].ravel(), ids[:-1, :-1].ravel(), ids[1:, :-1].ravel()])
    b = np.concatenate([ids[1:, :].ravel(), ids[:, 1:].ravel(), ids[1:, 1:].ravel(), ids[:-1, 1:].ravel()])
    return a, b


def _cell_triangles(shape):
    n1, n2 = shape
    ids = np.arange(n1 * n2).reshape(shape)
    a = ids[:-1, :-1].ravel()
    b = ids[1:, :-1].ravel()
    c = ids[1:, 1:].ravel()
    d = ids[:-1, 1:].ravel()
    return np.concatenate([np.stack(t, axis=1) for t in ((a, b, c), (a, c, d), (a, b, d), (b, c, d))])


class Mesh:
    """P1 mesh on a lattice with boundary nodes snapped onto a curve.

    Parameters
    ----------
    grid : Grid
    inside : bool array of lattice shape
        Nodes strictly inside the region.
    crossing : callable ``(pa, pb) -> theta``
        Fraction along the segment from an inside node ``pa`` to an outside
        node ``pb`` where the boundary is crossed.
    bc : callable ``(points, edge_a, edge_b, theta) -> values``
        Dirichlet data at snapped positions.
    """

    def __init__(self, grid, inside, crossing, bc):
        self.grid = grid
        h = grid.h
        pts = grid.points.reshape(-1, 2)
        inside = np.asarray(inside, dtype=bool).ravel()
        n = pts.shape[0]
        ea, eb = _edge_pairs(grid.shape)
        cut = inside[ea] != inside[eb]
        ea, eb = ea[cut], eb[cut]
        flip = ~inside[ea]
        pin = np.where(flip, eb, ea)
        pout = np.where(flip, ea, eb)
        theta = np.clip(np.asarray(crossing(pts[pin], pts[pout]), dtype=float), 0.0, 1.0)
        cpt = pts[pin] + theta[:, None] * (pts[pout] - pts[pin])
        # each crossing snaps its nearer endpoint
        node = np.where(theta <= 0.5, pin, pout)
        dist = np.where(theta <= 0.5, theta, 1.0 - theta) * np.linalg.norm(pts[pout] - pts[pin], axis=1)
        order = np.argsort(dist, kind="stable")
        snapped = np.zeros(n, dtype=bool)
        pos = pts.copy()
        src = np.full((n, 3), np.nan)
        for k in order:
            j = node[k]
            if not snapped[j]:
                snapped[j] = True
                pos[j] = cpt[k]
                src[j] = (pin[k], pout[k], theta[k])
        self.snapped = snapped
        self.unknown = inside & ~snapped
        self.active = inside | snapped
        self.pos = pos
        sn = np.nonzero(snapped)[0]
        vals = np.zeros(n)
        if sn.size:
            vals[sn] = bc(pos[sn], src[sn, 0].astype(int), src[sn, 1].astype(int), src[sn, 2])
        self.dirichlet = vals

        tri = _cell_triangles(grid.shape)
        cell = np.tile(np.arange((grid.n1 - 1) * (grid.n2 - 1)), 4)
        keep = self.active[tri].all(axis=1) & self.unknown[tri].any(axis=1)
        tri, cell = tri[keep], cell[keep]
        p0, p1, p2 = pos[tri[:, 0]], pos[tri[:, 1]], pos[tri[:, 2]]
        e1, e2 = p1 - p0, p2 - p0
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        good = det > 0.05 * h * h
        self.dropped = int((~good).sum())
        tri, e1, e2, det, cell = tri[good], e1[good], e2[good], det[good], cell[good]
        # inverse of the edge matrix [e1; e2]
        inv = np.empty((tri.shape[0], 2, 2))
        inv[:, 0, 0] = e2[:, 1] / det
        inv[:, 0, 1] = -e1[:, 1] / det
        inv[:, 1, 0] = -e2[:, 0] / det
        inv[:, 1, 1] = e1[:, 0] / det
        c1, c2 = inv[:, :, 0], inv[:, :, 1]
        c0 = -c1 - c2
        self.tri = tri
        self.cell = cell
        self.area = 0.5 * det * 0.5  # half weight for each of the two splittings
        nt = tri.shape[0]
        rows = np.repeat(np.arange(nt), 3)
        cols = tri.ravel()
        gx = np.stack([c0[:, 0], c1[:, 0], c2[:, 0]], axis=1).ravel()
        gy = np.stack([c0[:, 1], c1[:, 1], c2[:, 1]], axis=1).ravel()
        Gx = sp.csr_matrix((gx, (rows, cols)), shape=(nt, n))
        Gy = sp.csr_matrix((gy, (rows, cols)), shape=(nt, n))
        self.uid = np.nonzero(self.unknown)[0]
        D = self.dirichlet * self.snapped
        self.offset = np.stack([Gx @ D, Gy @ D], axis=1)
        self.Gx = Gx[:, self.uid].tocsr()
        self.Gy = Gy[:, self.uid].tocsr()
        lumped = np.bincount(tri.ravel(), weights=np.repeat(self.area / 3.0, 3), minlength=n)
        self.mass = lumped[self.uid]

    def cell_operator(self):
        """Area-weighted cell averages of the triangle gradients.

        Returns ``(Cx, Cy, offset, weight, cells)`` with one row per lattice
        cell that carries at least one triangle.
        """
        cells, inv = np.unique(self.cell, return_inverse=True)
        w = np.bincount(inv, weights=self.area)
        S = sp.csr_matrix((self.area / w[inv], (inv, np.arange(self.area.size))),
                          shape=(cells.size, self.area.size))
        return (S @ self.Gx).tocsr(), (S @ self.Gy).tocsr(), S @ self.offset, w, cells

    @property
    def n_unknown(self):
        return self.uid.size

    def gradients(self, u):
        return np.stack([self.Gx @ u, self.Gy @ u], axis=1) + self.offset

    def full(self, u):
        """Nodal array with unknowns and Dirichlet values (NaN elsewhere)."""
        v = np.full(self.pos.shape[0], np.nan)
        v[self.snapped] = self.dirichlet[self.snapped]
        v[self.uid] = u
        return v

    def lattice_values(self, u):
        """Values at lattice positions; snapped nodes are corrected with the
        mean gradient of their triangles."""
        v = self.full(u)
        grads = self.gradients(u)
        sn = np.nonzero(self.snapped)[0]
        if sn.size:
            acc = np.zeros((self.pos.shape[0], 2))
            cnt = np.zeros(self.pos.shape[0])
            for k in range(3):
                np.add.at(acc, self.tri[:, k], grads)
                np.add.at(cnt, self.tri[:, k], 1.0)
            lat = self.grid.points.reshape(-1, 2)
            ok = cnt[sn] > 0
            g = acc[sn[ok]] / cnt[sn[ok], None]
            v[sn[ok]] = v[sn[ok]] + np.sum(g * (lat[sn[ok]] - self.pos[sn[ok]]), axis=1)
        return v


def _bisect_crossing(level, pa, pb, iters=60):
    lo = np.zeros(pa.shape[0])
    hi = np.ones(pa.shape[0])
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        ins = level(pa + mid[:, None] * (pb - pa)) > 0
        lo = np.where(ins, mid, lo)
        hi = np.where(ins, hi, mid)
    return 0.5 * (lo + hi)


def _domain_level(domain):
    def level(p):
        r = np.hypot(p[..., 0], p[..., 1])
        return domain.radius(np.arctan2(p[..., 1], p[..., 0])) - r

    return level


def domain_mesh(domain, data, grid):
    """Mesh of ``U`` with Dirichlet data ``phi`` on the true boundary."""
    level = _domain_level(domain)
    inside = domain.inside(grid.points)
    return Mesh(grid, inside, lambda a, b: _bisect_crossing(level, a, b),
                lambda p, ia, ib, th: data.phi(p))


# ---------------------------------------------------------------------------
# discrete energy


class _Energy:
    def __init__(self, mesh, integrand, lower=None, upper=None, delta=None):
        self.mesh, self.I = mesh, integrand
        self.lower, self.upper, self.delta = lower, upper, delta
        self.wt = mesh.area

    def penalty(self, u):
        if self.delta is None:
            return 0.0, 0.0, 0.0
        d = self.delta
        a, b = self.lower - u, u - self.upper
        val = beta_tilde(a, d) + beta_tilde(b, d)
        grad = -beta(a, d) + beta(b, d)
        hess = beta_prime(a, d) + beta_prime(b, d)
        return val, grad, hess

    def value(self, u, parts=False):
        Z = self.mesh.gradients(u)
        m = self.mesh.mass
        ef = float(np.sum(self.wt * self.I.F(Z)))
        eg = float(np.sum(m * self.I.g(u)))
        ep = float(np.sum(m * self.penalty(u)[0]))
        return (ef, eg, ep) if parts else ef + eg + ep

    def operator(self, u):
        """``-div DF(Du)`` per unknown node (energy gradient divided by mass)."""
        Z = self.mesh.gradients(u)
        flux = self.wt[:, None] * self.I.DF(Z)
        return (self.mesh.Gx.T @ flux[:, 0] + self.mesh.Gy.T @ flux[:, 1]) / self.mesh.mass

    def gradient(self, u):
        m = self.mesh.mass
        return m * (self.operator(u) + self.I.dg(u) + self.penalty(u)[1])

    def stiffness(self, u):
        Z = self.mesh.gradients(u)
        H = self.wt[:, None, None] * self.I.D2F(Z)
        return _block_form(self.mesh.Gx, self.mesh.Gy, H)

    def hessian(self, u):
        m = self.mesh.mass
        return (self.stiffness(u) + sp.diags(m * (self.I.d2g(u) + self.penalty(u)[2]))).tocsc()


AMG_THRESHOLD = 60000


def _linear_solve(H, b):
    """Sparse SPD solve: LU for small systems, AMG-preconditioned CG above
    ``AMG_THRESHOLD`` unknowns."""
    if b.size <= AMG_THRESHOLD:
        return splu(H.tocsc()).solve(b)
    ml = pyamg.smoothed_aggregation_solver(H.tocsr())
    return ml.solve(b, tol=1e-12, accel="cg", maxiter=500)


def _newton(energy, u0, tol, max_iter=200, scale=1.0):
    u = u0.copy()
    E = energy.value(u)
    m = energy.mesh.mass
    hist = [E]
    flat = 0
    for it in range(max_iter):
        gr = energy.gradient(u)
        res = float(np.max(np.abs(gr / m))) if gr.size else 0.0
        if res <= tol * scale:
            return u, {"iterations": it, "residual": res, "energy": E, "history": hist}
        log.debug("newton %d energy %.12g residual %.3e", it, E, res)
        step = -_linear_solve(energy.hessian(u), gr)
        slope = float(gr @ step)
        t = 1.0
        while True:
            un = u + t * step
            En = energy.value(un)
            if En <= E + 1e-4 * t * slope or (abs(En - E) <= 1e-14 * max(1.0, abs(E)) and t == 1.0):
                break
            t *= 0.5
            if t < 1e-12:
                raise SolverError(f"line search failed at iteration {it}, residual {res:.3e}")
        # roundoff floor: the energy no longer moves and the step is negligible
        flat = flat + 1 if abs(En - E) <= 1e-15 * max(1.0, abs(E)) and t * np.max(np.abs(step)) < 1e-13 else 0
        u, E = un, En
        hist.append(E)
        if flat >= 2:
            gr = energy.gradient(u)
            res = float(np.max(np.abs(gr / m)))
            return u, {"iterations": it + 1, "residual": res, "energy": E, "history": hist,
                       "stalled": res > 1e3 * tol * scale}
    gr = energy.gradient(u)
    res = float(np.max(np.abs(gr / m))) if gr.size else 0.0
    return u, {"iterations": max_iter, "residual": res, "energy": E, "history": hist,
               "stalled": res > tol * scale}


# ---------------------------------------------------------------------------
# obstacle fields and mollification


class ObstacleField:
    """``rho`` (or ``rho_bar`` when built from reflected inputs) at lattice nodes.

    Values are evaluated at every node in ``U`` and at the exterior ring;
    derivative data is attached for the Taylor part of the mollification.
    """

    def __init__(self, domain, data, body, grid, nodes, m=720):
        self.domain, self.data, self.body, self.grid = domain, data, body, grid
        self.nodes = nodes
        pts = grid.points.reshape(-1, 2)[nodes]
        self.field = rho_field(domain, data, body, pts, m=m)
        self.sampler = _Sampler(domain, data, body, m)
        self.m = m
        zz = domain.samples(4096)
        self.min_speed = float(np.linalg.norm(domain.velocity(zz), axis=1).min())

    @classmethod
    def reflected(cls, domain, data, body, grid, nodes, m=720):
        return cls(domain, data.negate(), reflect(body), grid, nodes, m=m)

    def values(self):
        out = np.full(self.grid.n1 * self.grid.n2, np.nan)
        out[self.nodes] = self.field.rho
        return out

    def shifted_sublevel(self, k, offsets, window, n_basins=3, budget=2_000_000):
        """``rho(x_k - s)`` searched over the boundary samples where
        ``gamma(x_k - y) + phi(y) <= rho(x_k) + window``.

        For ``|s| <= eps`` and ``window >= 2 C1 eps`` every minimizer for
        ``x_k - s`` lies in that sublevel set, so restricting the samples
        loses nothing; the best sampled local minima are then refined.
        """
        sm = self.sampler
        x = self.field.x[k]
        J = offsets.shape[0]
        F = self.body.gauge_pairwise(x, sm.Y) + sm.phi[None]
        M = F <= self.field.rho[k][:, None] + window
        # the samples bracketing each refined basin always belong to the set
        bz = self.field.basin_z[k]
        near = np.isfinite(self.field.basin_v[k]) & (self.field.basin_v[k] <= self.field.rho[k][:, None] + window)
        near[:, 0] = True
        for b in range(bz.shape[1]):
            j = np.floor(bz[:, b] * sm.m).astype(int) % sm.m
            rows = np.nonzero(near[:, b])[0]
            M[rows, j[rows]] = True
            M[rows, (j[rows] + 1) % sm.m] = True
        M |= np.roll(M, 1, axis=1) | np.roll(M, -1, axis=1)
        sizes = M.sum(axis=1)
        out = np.empty((len(k), J))
        order = np.argsort(sizes)
        i = 0
        while i < len(k):
            K = int(sizes[order[min(len(k) - 1, i)]])
            nb = max(1, budget // (J * max(K, 1)))
            sel = order[i:i + nb]
            K = int(sizes[sel].max())
            idx = np.zeros((sel.size, K), dtype=int)
            pad = np.ones((sel.size, K), dtype=bool)
            for r, q in enumerate(sel):
                ii = np.nonzero(M[q])[0]
                idx[r, :ii.size] = ii
                idx[r, ii.size:] = ii[-1]
                pad[r, :ii.size] = False
            P = x[sel][:, None, :] - offsets[None]  # (b, J, 2)
            Y = sm.Y[idx]  # (b, K, 2)
            G = self.body.gauge_pairwise(P, Y) + sm.phi[idx][:, None, :]
            G = np.where(pad[:, None, :], np.inf, G)
            # local minima along the (sorted) restricted sample list
            Gp = np.concatenate([np.full(G.shape[:2] + (1,), np.inf), G, np.full(G.shape[:2] + (1,), np.inf)], axis=2)
            lm = (G <= Gp[:, :, :-2]) & (G <= Gp[:, :, 2:])
            Gm = np.where(lm, G, np.inf)
            nbk = min(n_basins, K)
            top = np.argpartition(Gm, nbk - 1, axis=2)[:, :, :nbk]
            gv = np.take_along_axis(Gm, top, axis=2)
            zc = np.take_along_axis(np.broadcast_to(idx[:, None, :], G.shape), top, axis=2) / sm.m
            # refine the candidates that sampling error cannot rule out
            jb = np.argmin(G, axis=2)
            g0 = np.min(G, axis=2)
            gl = np.take_along_axis(Gp, jb[..., None], axis=2)[..., 0]
            gr = np.take_along_axis(Gp, jb[..., None] + 2, axis=2)[..., 0]
            spread = np.maximum(np.where(np.isfinite(gl), gl, g0), np.where(np.isfinite(gr), gr, g0)) - g0
            keep = np.isfinite(gv) & (gv <= (g0 + spread)[..., None])
            Pb = np.broadcast_to(P[:, :, None, :], gv.shape + (2,))
            v = np.where(np.isfinite(gv), gv, np.inf)
            if keep.any():
                zr = _refine(sm, Pb[keep], zc[keep], np.full(int(keep.sum()), 1.0 / sm.m), value_tol=1e-15)
                v[keep] = np.minimum(sm.f(Pb[keep], zr), gv[keep])
            out[sel] = v.min(axis=2)
            i += sel.size
        return out


def mollifier_stencil(eps, spacing=None):
    """Lattice offsets and normalized weights of the standard mollifier."""
    spacing = eps / 8.0 if spacing is None else float(spacing)
    if spacing > eps / 4.0:
        raise ValueError(f"mollifier lattice spacing {spacing} exceeds eps/4 = {eps / 4}")
    n = int(np.ceil(eps / spacing))
    k = np.arange(-n, n + 1)
    S = np.stack(np.meshgrid(k, k, indexing="ij"), axis=-1).reshape(-1, 2) * spacing
    r2 = np.sum(S * S, axis=1) / eps**2
    keep = r2 < 1.0
    S, r2 = S[keep], r2[keep]
    w = np.exp(-1.0 / (1.0 - r2))
    w /= w.sum()
    return S, w


@dataclass
class MollifiedObstacles:
    eps: float
    delta_eps: float
    psi: np.ndarray
    phi: np.ndarray
    mask: np.ndarray
    in_u: np.ndarray
    dist: np.ndarray
    chain: dict
    zones: dict


def _mollify_one(of, eps, S, w, dist, inside, C1):
    f = of.field
    vals = f.rho
    M2 = np.einsum("j,ja,jb->ab", w, S, S)
    # a competing basin can only win inside the ball if its value is within
    # 2 C1 eps of rho(x), since each branch is C1-Lipschitz
    window = 2.1 * C1 * eps
    taylor = np.isfinite(f.hess).all(axis=(1, 2)) if f.hess is not None else np.zeros(vals.size, bool)
    taylor &= ~f.warn & ~(f.count > 1) & ~(np.isfinite(f.gap) & (f.gap <= window))
    if f.focal is not None:
        taylor &= f.focal > 2.0 * eps
    taylor &= inside.ravel()[of.nodes] & (dist[of.nodes] > 1.2 * eps)
    out = np.empty(vals.size)
    out[taylor] = vals[taylor] + 0.5 * np.einsum("nab,ab->n", f.hess[taylor], M2) if taylor.any() else 0.0
    quad = np.nonzero(~taylor)[0]
    for i in range(0, quad.size, 256):
        k = quad[i:i + 256]
        out[k] = of.shifted_sublevel(k, S, window) @ w
    res = np.full(of.grid.n1 * of.grid.n2, np.nan)
    res[of.nodes] = out
    return res, {"taylor": int(taylor.sum()), "quadrature": int(quad.size)}


def mollify_obstacles(rho_field_, rho_bar_field_, eps, C1, dist, inside, spacing=None):
    """Mollified obstacles ``psi = eta*rho`` and ``phi = -eta*rho_bar + delta_eps``.

    Nodes whose mollifier ball stays in a smooth region of the field use the
    second-order expansion ``rho + tr(D2rho M)/2`` with ``M`` the discrete
    second moment of the stencil; all others (near the boundary, a ridge or
    a focal point) are integrated on the stencil lattice with exact field
    values.
    """
    S, w = mollifier_stencil(eps, spacing)
    delta_eps = 3.5 * C1 * eps
    psi, zp = _mollify_one(rho_field_, eps, S, w, dist, inside, C1)
    if rho_bar_field_ is rho_field_:
        eb, zb = psi, zp
    else:
        eb, zb = _mollify_one(rho_bar_field_, eps, S, w, dist, inside, C1)
    phi = -eb + delta_eps
    in_u = inside.ravel()
    mask = in_u & (phi < psi)
    rho = rho_field_.values()
    rhob = rho_bar_field_.values()
    big = in_u & (rho + rhob > 5 * C1 * eps)
    chain = {
        "lower_in_U_eps": bool(np.all(mask[big])),
        "U_eps_in_far": bool(np.all(dist[mask] > eps)),
        "psi_minus_rho": float(np.nanmax(np.abs(psi - rho)[in_u])),
        "phi_plus_rho_bar_min": float(np.nanmin((phi + rhob)[in_u])),
        "phi_plus_rho_bar_max": float(np.nanmax((phi + rhob)[in_u])),
    }
    return MollifiedObstacles(eps, delta_eps, psi, phi, mask, in_u, dist, chain,
                              {"rho": zp, "rho_bar": zb})


# ---------------------------------------------------------------------------
# penalized solve


def _eps_mesh(grid, mob):
    """Mesh of ``U_eps`` with Dirichlet data ``phi_eps`` on its boundary.

    Along an edge to an interior node the crossing of ``psi - phi`` is linear
    interpolation.  Field values at exterior nodes are not signed, so edges
    leaving ``U`` extrapolate from the next node inward instead.
    """
    L = mob.psi - mob.phi
    in_u = mob.in_u
    n = L.size

    def inward(ia, ib):
        ic = 2 * ia - ib
        ok = (ic >= 0) & (ic < n)
        ic = np.where(ok, ic, ia)
        ok &= mob.mask[ic]
        return ic, ok

    def crossing(pa, pb):
        ia, ib = _node_ids(grid, pa), _node_ids(grid, pb)
        la, lb = L[ia], L[ib]
        ext = ~in_u[ib]
        ic, ok = inward(ia, ib)
        slope = L[ia] - L[ic]
        th_ext = np.where(ok & (slope < 0), la / np.where(slope < 0, -slope, 1.0), 0.5)
        th_int = la / np.where(la - lb > 0, la - lb, 1.0)
        return np.where(ext, th_ext, th_int)

    def bc(p, ia, ib, th):
        ext = ~in_u[ib]
        ic, ok = inward(ia, ib)
        far = np.where(ext, np.where(ok, 2 * mob.phi[ia] - mob.phi[ic], mob.phi[ia]), mob.phi[ib])
        return mob.phi[ia] + th * (far - mob.phi[ia])

    return Mesh(grid, mob.mask.reshape(grid.shape), crossing, bc)


def _node_ids(grid, p):
    i = np.rint(p[:, 0] / grid.h).astype(int) - grid.i0
    j = np.rint(p[:, 1] / grid.h).astype(int) - grid.j0
    return i * grid.n2 + j


def solve_penalized(integrand, mesh, lower, upper, delta, u0=None, tol=1e-10):
    """Minimize the penalized energy on ``mesh`` with damped Newton.

    ``lower``/``upper`` are the obstacle values at the unknown nodes.
    Returns ``(u, info)``; ``info`` holds the energy split and residual.
    """
    if delta <= 0:
        raise ValueError("penalty parameter must be positive")
    en = _Energy(mesh, integrand, lower, upper, delta)
    if u0 is None:
        u0 = np.clip(np.zeros(mesh.n_unknown), lower, upper)
    scale = 1.0 + float(np.max(np.abs(integrand.dg(u0)))) if u0.size else 1.0
    u, info = _newton(en, u0, tol, scale=scale)
    info["parts"] = en.value(u, parts=True)
    info["delta"] = delta
    info["operator"] = en.operator(u)
    info["lower_excess"] = float(np.max(lower - u)) if u.size else 0.0
    info["upper_excess"] = float(np.max(u - upper)) if u.size else 0.0
    return u, info


def default_schedule(levels=6, eps0=0.1):
    return [(eps0 * 2.0**-k, (eps0 * 2.0**-k) ** 2) for k in range(levels)]


# ---------------------------------------------------------------------------
# solutions


@dataclass
class ObstacleSolution:
    grid: Grid
    u: np.ndarray  # lattice shape, NaN outside U
    in_u: np.ndarray
    grad_u: np.ndarray  # cell-centered, shape (n1-1, n2-1, 2)
    polar_of_grad: np.ndarray
    region: np.ndarray  # 0 elastic, 1 P+, -1 P-, NaN-like 9 outside
    free_boundary: np.ndarray  # cell mask
    diagnostics: dict = field(default_factory=dict)
    rho: np.ndarray = None
    rho_bar: np.ndarray = None
    dist: np.ndarray = None

    def value_at(self, p):
        i, j = self.grid.index_of(p)
        return float(self.u[i, j])

    @property
    def plastic(self):
        return (self.region == 1) | (self.region == -1)

    def free_boundary_radius(self):
        g = self.grid
        cx = 0.5 * (g.x[:-1] + g.x[1:])
        cy = 0.5 * (g.y[:-1] + g.y[1:])
        C = np.stack(np.meshgrid(cx, cy, indexing="ij"), axis=-1)[self.free_boundary]
        return np.hypot(C[:, 0], C[:, 1])


OUTSIDE = 9
BOUNDARY_LAYER = 2


def _cell_gradients(grid, u):
    h = grid.h
    a, b, c, d = u[:-1, :-1], u[1:, :-1], u[1:, 1:], u[:-1, 1:]
    gx = (b - a + c - d) / (2 * h)
    gy = (d - a + c - b) / (2 * h)
    return np.stack([gx, gy], axis=-1)


def _label(grid, u, rho, rho_bar, in_u, body, tau_contact, dist):
    """Elastic 0, plastic +1/-1, boundary layer 2 (within ``h`` of the
    boundary, where both obstacles pinch to ``phi`` and contact is degenerate)."""
    region = np.full(grid.shape, OUTSIDE, dtype=int)
    gu = u - (-rho_bar)
    gr = rho - u
    region[in_u] = 0
    plus = in_u & (gr <= tau_contact) & (gr <= gu)
    minus = in_u & (gu <= tau_contact) & ~plus
    region[plus] = 1
    region[minus] = -1
    region[in_u & (dist < grid.h)] = BOUNDARY_LAYER
    G = _cell_gradients(grid, u)
    cells = in_u[:-1, :-1] & in_u[1:, :-1] & in_u[1:, 1:] & in_u[:-1, 1:]
    pol = np.full(cells.shape, np.nan)
    if cells.any():
        pol[cells] = body.polar_gauge(G[cells])
    R = np.stack([region[:-1, :-1], region[1:, :-1], region[1:, 1:], region[:-1, 1:]])
    interior = (R != BOUNDARY_LAYER).all(axis=0)
    fb = cells & interior & (R.min(axis=0) != R.max(axis=0))
    return region, G, pol, fb


def default_tolerances(h):
    """Contact and gradient tolerances for lattice spacing ``h``."""
    return {"tau_contact": 0.25 * h * h, "tol_grad": 5.0 * h}


@dataclass
class _Setup:
    grid: Grid
    inside: np.ndarray
    nodes: np.ndarray
    rho: ObstacleField
    rho_bar: ObstacleField
    dist: np.ndarray
    C1: float


def prepare_fields(domain, data, body, grid, m=720):
    """Obstacle fields and distances at all nodes of ``U`` and its exterior ring."""
    P = grid.points
    inside = domain.inside(P)
    ring = inside.copy()
    ring[1:, :] |= inside[:-1, :]
    ring[:-1, :] |= inside[1:, :]
    ring[:, 1:] |= ring[:, :-1].copy()
    ring[:, :-1] |= ring[:, 1:].copy()
    nodes = np.nonzero(ring.ravel())[0]
    rf = ObstacleField(domain, data, body, grid, nodes, m=m)
    symmetric = data.kind == "zero" and _is_symmetric(body)
    rb = rf if symmetric else ObstacleField.reflected(domain, data, body, grid, nodes, m=m)
    dist = np.full(grid.n1 * grid.n2, np.nan)
    if data.kind == "zero" and body.kind == "euclidean_ball" and np.allclose(body.bounds, 1.0, rtol=0, atol=1e-12):
        dist[nodes] = rf.field.rho
    else:
        dist[nodes] = distance_field(domain, P.reshape(-1, 2)[nodes], m=m)
    return _Setup(grid, inside, nodes, rf, rb, dist, body.C1)


def _interpolate(sol, grid):
    src = np.where(np.isfinite(sol.u), sol.u, 0.0)
    f = RegularGridInterpolator((sol.grid.x, sol.grid.y), src, bounds_error=False, fill_value=None)
    v = f(grid.points.reshape(-1, 2))
    return np.where(grid_inside(sol, grid), v, np.nan)


def grid_inside(sol, grid):
    lo = np.array([sol.grid.x[0], sol.grid.y[0]])
    hi = np.array([sol.grid.x[-1], sol.grid.y[-1]])
    P = grid.points.reshape(-1, 2)
    return np.all((P >= lo) & (P <= hi), axis=1)


def _is_symmetric(body):
    th = np.linspace(0, 2 * np.pi, 97, endpoint=False)
    u = np.stack([np.cos(th), np.sin(th)], axis=-1)
    return bool(np.allclose(body.gauge(u), body.gauge(-u), rtol=1e-14, atol=0))


def solve_double_obstacle(integrand, domain, data, body, grid, schedule=None, tol=1e-10,
                          tolerances=None, setup=None, keep_levels=False, initial=None,
                          polish=True, stencil=8):
    """Continuation in ``(eps, delta)`` of penalized solves with mollified obstacles.

    The final nodal values are clamped into ``[-rho_bar, rho]`` and labeled
    elastic (0), upper-plastic (+1) or lower-plastic (-1).

    With ``polish`` a last penalized solve uses the exact nodal obstacles on
    the mesh of ``U`` (Dirichlet ``phi`` on the boundary), so every node of
    ``U`` carries a computed value.

    ``initial`` may be a solution on another lattice; it is interpolated as
    the starting guess.  Each penalized problem is strictly convex, so the
    warm start changes the work, not the answer.
    """
    t0 = time.perf_counter()
    rep = validate_boundary_data(domain, data, body, "strict_interior", n_pairs=2000)
    if not rep.ok:
        raise ValueError(f"boundary data not admissible: {rep.message}")
    schedule = default_schedule() if schedule is None else schedule
    tolerances = {**default_tolerances(grid.h), **(tolerances or {})}
    setup = setup or prepare_fields(domain, data, body, grid)
    t_fields = time.perf_counter() - t0
    C1 = setup.C1
    rho = setup.rho.values()
    rhob = setup.rho_bar.values()
    u_prev = None if initial is None else _interpolate(initial, grid)
    levels = []
    partial = False
    for eps, delta in schedule:
        mob = mollify_obstacles(setup.rho, setup.rho_bar, eps, C1, setup.dist, setup.inside,
                               spacing=eps / stencil)
        mesh = _eps_mesh(grid, mob)
        lo, hi = mob.phi[mesh.uid], mob.psi[mesh.uid]
        u0 = np.clip(np.zeros(mesh.n_unknown), lo, hi)
        if u_prev is not None:
            prev = u_prev[mesh.uid]
            u0 = np.where(np.isfinite(prev), prev, u0)
        u, info = solve_penalized(integrand, mesh, lo, hi, delta, u0=u0, tol=tol)
        partial |= bool(info.get("stalled", False))
        u_prev = mesh.lattice_values(u)
        lev = {"eps": eps, "delta": delta, "iterations": info["iterations"],
               "residual": info["residual"], "energy": info["energy"],
               "upper_excess": info["upper_excess"], "lower_excess": info["lower_excess"],
               "chain": mob.chain, "zones": mob.zones, "unknowns": mesh.n_unknown}
        if keep_levels:
            lev.update(mesh=mesh, u=u, mob=mob, operator=info["operator"])
        levels.append(lev)
        log.info("eps=%.4g delta=%.3g newton=%d residual=%.2e", eps, delta,
                 info["iterations"], info["residual"])
    in_u = setup.inside
    R, RB = rho.reshape(grid.shape), rhob.reshape(grid.shape)
    if polish:
        # eps -> 0 end of the continuation: exact nodal obstacles on the mesh of U
        mesh = domain_mesh(domain, data, grid)
        lo, hi = -rhob[mesh.uid], rho[mesh.uid]
        prev = u_prev[mesh.uid]
        u0 = np.where(np.isfinite(prev), np.clip(prev, lo, hi), np.clip(0.0, lo, hi))
        u, info = solve_penalized(integrand, mesh, lo, hi, schedule[-1][1], u0=u0, tol=tol)
        partial |= bool(info.get("stalled", False))
        levels.append({"eps": 0.0, "delta": schedule[-1][1], "iterations": info["iterations"],
                       "residual": info["residual"], "energy": info["energy"],
                       "upper_excess": info["upper_excess"], "lower_excess": info["lower_excess"],
                       "unknowns": mesh.n_unknown})
        u_prev = mesh.lattice_values(u)
    uf = np.where(np.isfinite(u_prev), u_prev, mob.phi).reshape(grid.shape)
    uf = np.clip(uf, -RB, R)
    uf = np.where(in_u, uf, np.nan)
    dist = setup.dist.reshape(grid.shape)
    region, G, pol, fb = _label(grid, uf, R, RB, in_u, body, tolerances["tau_contact"], dist)
    diag = {"levels": levels, "partial": partial, "tolerances": tolerances,
            "time": time.perf_counter() - t0, "time_fields": t_fields, "solver": "double_obstacle"}
    return ObstacleSolution(grid, uf, in_u, G, pol, region, fb, diag, R, RB, dist)


# ---------------------------------------------------------------------------
# direct route


def _polar_newton(body, W, theta, iters):
    theta = theta.copy()
    f2 = np.full(theta.shape, -1.0)
    act = np.arange(theta.size)
    for _ in range(iters):
        if act.size == 0:
            break
        th, w = theta[act], W[act]
        n = np.stack([np.cos(th), np.sin(th)], axis=-1)
        t = np.stack([-n[:, 1], n[:, 0]], axis=-1)
        r = w - body.gauge_grad(n)
        f1 = np.sum(r * t, axis=1)
        H = body.gauge_hess(n)
        g2 = -np.sum(r * n, axis=1) - np.einsum("ni,nij,nj->n", t, H, t)
        step = np.where(g2 < 0, -f1 / np.where(g2 < 0, g2, -1.0), np.sign(f1) * 0.1)
        theta[act] = th + np.clip(step, -0.5, 0.5)
        f2[act] = g2
        act = act[np.abs(step) >= 1e-13]
    return theta, f2


def _angle_scan(body, W, scan):
    th = np.linspace(0, 2 * np.pi, scan, endpoint=False)
    N = np.stack([np.cos(th), np.sin(th)], axis=-1)
    F = W @ N.T - body.gauge(N)[None, :]
    j = np.argmax(F, axis=1)
    return th[j], F[np.arange(len(W)), j]


def _support_gap(body, W, theta):
    n = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    return np.sum(W * n, axis=1) - body.gauge(n)


def project_polar(body, W, theta=None, newton_iters=8, scan=64, geometry=False):
    """Euclidean projection of points ``W`` onto the polar set.

    The polar set has support function ``gamma``; the boundary point with
    outer normal ``n`` is ``Dgamma(n)``.  The distance of an outside point is
    ``max_n <w, n> - gamma(n)`` over unit ``n``, maximized by Newton in the
    normal angle, started from a direction scan and from ``theta`` if given.
    Points the scan already certifies as inside skip the Newton stage: the
    objective is ``(|w| + C1)``-Lipschitz in the angle.

    Returns ``(P, theta)``, plus the normal, tangent, signed distance and
    boundary radius of curvature when ``geometry`` is set.
    """
    W = np.asarray(W, dtype=float)
    th0, f0 = _angle_scan(body, W, scan)
    theta = th0 if theta is None else np.asarray(theta, float).copy()
    f2 = np.full(len(W), -1.0)
    near = f0 + (np.linalg.norm(W, axis=1) + body.C1) * np.pi / scan >= 0
    if near.any():
        Wn = W[near]
        ts, fs = _polar_newton(body, Wn, th0[near], newton_iters)
        # a warm start can sit in a non-global local maximum, so keep the better of the two
        tw, fw = _polar_newton(body, Wn, theta[near], newton_iters)
        better = _support_gap(body, Wn, tw) > _support_gap(body, Wn, ts)
        theta[near] = np.where(better, tw, ts)
        f2[near] = np.where(better, fw, fs)
    theta[~near] = th0[~near]
    n = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    t = np.stack([-n[:, 1], n[:, 0]], axis=-1)
    tol = 1e-9 * (1 + np.abs(W).sum(axis=1))
    redo = near & ((f2 >= 0) | (np.abs(np.sum((W - body.gauge_grad(n)) * t, axis=1)) > tol))
    if redo.any():
        th2, _ = _angle_scan(body, W[redo], 4 * scan)
        theta[redo], _ = _polar_newton(body, W[redo], th2, 4 * newton_iters)
        n = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        t = np.stack([-n[:, 1], n[:, 0]], axis=-1)
    p = body.gauge_grad(n)
    dist = np.where(near, np.sum(W * n, axis=1) - body.gauge(n), np.minimum(f0, -1e-300))
    outside = dist > 0
    bad = outside & (np.abs(np.sum((W - p) * t, axis=1)) > tol)
    if bad.any():
        raise SolverError(f"projection onto the polar set failed for {int(bad.sum())} cells, "
                          f"first index {int(np.nonzero(bad)[0][0])}")
    P = np.where(outside[:, None], W - dist[:, None] * n, W)
    if geometry:
        rc = np.einsum("ni,nij,nj->n", t, body.gauge_hess(n), t)
        return P, theta, {"n": n, "t": t, "dist": dist, "rc": rc}
    return P, theta


def _block_form(Gx, Gy, H):
    return (Gx.T @ sp.diags(H[:, 0, 0]) @ Gx + Gx.T @ sp.diags(H[:, 0, 1]) @ Gy
            + Gy.T @ sp.diags(H[:, 1, 0]) @ Gx + Gy.T @ sp.diags(H[:, 1, 1]) @ Gy)


class _ALEnergy:
    """``E(v) + sum_c w_c/(2 delta) dist(Dv_c + delta lam_c, K_polar)^2`` over cells ``c``."""

    def __init__(self, base, body, delta):
        self.base, self.body, self.delta = base, body, delta
        self.mesh = base.mesh
        self.Cx, self.Cy, self.off, self.w, self.cells = self.mesh.cell_operator()
        self.lam = np.zeros((self.w.size, 2))
        self.lam_id = 0
        self.theta = None
        self._cache = None

    def grads(self, u):
        return np.stack([self.Cx @ u, self.Cy @ u], axis=1) + self.off

    def _proj(self, u):
        key = (self.delta, self.lam_id)
        if self._cache is not None and self._cache[0] == key and np.array_equal(self._cache[1], u):
            return self._cache[2]
        W = self.grads(u) + self.delta * self.lam
        P, self.theta, geo = project_polar(self.body, W, self.theta, geometry=True)
        self._cache = (key, u.copy(), (W, P, geo))
        return W, P, geo

    def value(self, u):
        W, P, _ = self._proj(u)
        return self.base.value(u) + float(np.sum(self.w * np.sum((W - P) ** 2, axis=1))) / (2 * self.delta)

    def gradient(self, u):
        W, P, _ = self._proj(u)
        f = self.w[:, None] * (W - P) / self.delta
        return self.base.gradient(u) + self.Cx.T @ f[:, 0] + self.Cy.T @ f[:, 1]

    def hessian(self, u):
        W, P, geo = self._proj(u)
        d = np.maximum(geo["dist"], 0.0)
        wt = np.where(d > 0, self.w / self.delta, 0.0)
        n, t = geo["n"], geo["t"]
        ct = d / (geo["rc"] + d)
        H = wt[:, None, None] * (n[:, :, None] * n[:, None, :] + ct[:, None, None] * t[:, :, None] * t[:, None, :])
        return (self.base.hessian(u) + _block_form(self.Cx, self.Cy, H)).tocsc()

    def update(self, u, delta):
        W, P, _ = self._proj(u)
        self.lam = (W - P) / self.delta
        self.lam_id += 1
        self.delta = delta
        _, _, geo = project_polar(self.body, self.grads(u), self.theta, geometry=True)
        return float(np.max(np.maximum(geo["dist"], 0.0)))


def solve_gradient_constrained(integrand, domain, data, body, grid, fields=None, tol=1e-9,
                               delta=1e-5, max_outer=60, tolerances=None):
    """Minimize ``J`` subject to ``gamma_polar(Dv) <= 1`` on every lattice cell.

    The constraint acts on the area-weighted cell average of the triangle
    gradients, which is second-order accurate for smooth functions (a single
    P1 triangle gradient is only first-order and over-constrains cones).
    Augmented Lagrangian on these cell gradients: each inner problem is a
    C^1 convex minimization solved by semismooth Newton, using the squared
    distance to the polar set; the multipliers are then updated.  Iterates
    stop when the largest constraint violation and the multiplier change fall
    below ``tol``.
    """
    if not body.smooth:
        raise ValueError("the direct solver needs a smooth body (use smooth_approximation)")
    t0 = time.perf_counter()
    tolerances = {**default_tolerances(grid.h), **(tolerances or {})}
    mesh = domain_mesh(domain, data, grid)
    base = _Energy(mesh, integrand)
    # the penalty starts soft and is tightened geometrically to ``delta``
    al = _ALEnergy(base, body, max(delta, 1e-1))
    u = np.zeros(mesh.n_unknown)
    hist = []
    converged = False
    for outer in range(max_outer):
        u, info = _newton(al, u, 1e-9, max_iter=100)
        lam_old = al.lam
        d_used = al.delta
        viol = al.update(u, max(delta, d_used * 0.1))
        dlam = float(np.max(np.abs(al.lam - lam_old)))
        hist.append((viol, dlam, info["iterations"]))
        log.info("outer %d violation %.2e multiplier change %.2e newton %d", outer, viol, dlam,
                 info["iterations"])
        if viol < tol and dlam * d_used < tol and d_used == delta:
            converged = True
            break
    v = mesh.lattice_values(u).reshape(grid.shape)
    in_u = domain.inside(grid.points)
    v = np.where(in_u, v, np.nan)
    diag = {"iterations": len(hist), "converged": converged, "violation": hist[-1][0],
            "multiplier_change": hist[-1][1], "newton": [h[2] for h in hist],
            "max_cell_polar": float(np.max(body.polar_gauge(al.grads(u)))),
            "time": time.perf_counter() - t0, "solver": "gradient_constrained",
            "tolerances": tolerances, "energy": base.value(u)}
    if fields is not None:
        R, RB, dist = fields
        region, G, pol, fb = _label(grid, v, R, RB, in_u, body, tolerances["tau_contact"], dist)
    else:
        R = RB = dist = None
        G = _cell_gradients(grid, v)
        cells = np.isfinite(G).all(axis=-1)
        pol = np.full(cells.shape, np.nan)
        pol[cells] = body.polar_gauge(G[cells])
        region = np.where(in_u, 0, OUTSIDE)
        fb = np.zeros(cells.shape, dtype=bool)
    return ObstacleSolution(grid, v, in_u, G, pol, region, fb, diag, R, RB, dist)


# ---------------------------------------------------------------------------
# verification


def discrete_hessian(grid, u):
    """Nodal finite-difference Hessians ``(uxx, uxy, uyy)`` at interior nodes."""
    h = grid.h
    c = u[1:-1, 1:-1]
    uxx = (u[2:, 1:-1] - 2 * c + u[:-2, 1:-1]) / h**2
    uyy = (u[1:-1, 2:] - 2 * c + u[1:-1, :-2]) / h**2
    uxy = (u[2:, 2:] - u[2:, :-2] - u[:-2, 2:] + u[:-2, :-2]) / (4 * h**2)
    return uxx, uxy, uyy


def discrete_hessian_sup(sol, margin=3.0):
    """Largest ``|eigenvalue|`` of the discrete Hessian of ``u``.

    Nodes with a complete 3x3 stencil in ``U`` whose distance to the boundary
    exceeds ``margin * h`` are included; this covers the free boundary and
    the ridge.
    """
    uxx, uxy, uyy = discrete_hessian(sol.grid, sol.u)
    m = (uxx + uyy) / 2
    r = np.sqrt(((uxx - uyy) / 2) ** 2 + uxy**2)
    lam = np.maximum(np.abs(m + r), np.abs(m - r))
    ok = np.isfinite(lam)
    if sol.dist is not None:
        ok &= sol.dist[1:-1, 1:-1] > margin * sol.grid.h
    return float(np.max(lam[ok])), lam, ok


def _stencil_all(mask):
    out = mask[1:-1, 1:-1].copy()
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            out &= mask[1 + di:mask.shape[0] - 1 + di, 1 + dj:mask.shape[1] - 1 + dj]
    return out


def _node_operator(sol, integrand):
    """``-div DF(Du)`` at interior nodes by the lattice energy (5-point for quadratic F)."""
    h = sol.grid.h
    u = sol.u
    gx_p = (u[2:, 1:-1] - u[1:-1, 1:-1]) / h
    gx_m = (u[1:-1, 1:-1] - u[:-2, 1:-1]) / h
    gy_p = (u[1:-1, 2:] - u[1:-1, 1:-1]) / h
    gy_m = (u[1:-1, 1:-1] - u[1:-1, :-2]) / h
    gxc = (u[2:, 1:-1] - u[:-2, 1:-1]) / (2 * h)
    gyc = (u[1:-1, 2:] - u[1:-1, :-2]) / (2 * h)
    fxp = integrand.DF(np.stack([gx_p, gyc], axis=-1))[..., 0]
    fxm = integrand.DF(np.stack([gx_m, gyc], axis=-1))[..., 0]
    fyp = integrand.DF(np.stack([gxc, gy_p], axis=-1))[..., 1]
    fym = integrand.DF(np.stack([gxc, gy_m], axis=-1))[..., 1]
    return -((fxp - fxm) + (fyp - fym)) / h


def classify_and_verify(sol, body, integrand, ridge_rho=None, ridge_rho_bar=None, tol=None):
    """Checks on a computed solution.

    Returns a dict with the elastic residual, strong sign conditions on the
    plastic sets, gradient-constraint activity, ridge/plastic intersection
    and the discrete Hessian bound.
    """
    g = sol.grid
    h = g.h
    tols = sol.diagnostics.get("tolerances", default_tolerances(h))
    tol = 10 * h * h if tol is None else tol
    A = _node_operator(sol, integrand) + integrand.dg(sol.u[1:-1, 1:-1])
    reg = sol.region
    E = _stencil_all(reg == 0)
    Pp = _stencil_all(reg == 1)
    Pm = _stencil_all(reg == -1)
    out = {}
    out["elastic_residual"] = float(np.max(np.abs(A[E]))) if E.any() else 0.0
    out["elastic_residual_tol"] = tol
    out["upper_sign_max"] = float(np.max(A[Pp])) if Pp.any() else -np.inf
    out["lower_sign_min"] = float(np.min(A[Pm])) if Pm.any() else np.inf
    out["sign_tol"] = tol
    R = np.stack([reg[:-1, :-1], reg[1:, :-1], reg[1:, 1:], reg[:-1, 1:]])
    cellP = (np.abs(R) == 1).all(axis=0) & np.isfinite(sol.polar_of_grad)
    cellE = (R == 0).all(axis=0) & np.isfinite(sol.polar_of_grad)
    pol = sol.polar_of_grad
    out["plastic_polar_min"] = float(np.min(pol[cellP])) if cellP.any() else np.nan
    out["polar_max"] = float(np.nanmax(pol))
    out["tol_grad"] = tols["tol_grad"]
    # deep elastic cells: at least three cells away from any plastic node
    near = binary_dilation(np.abs(reg) == 1, iterations=3)
    deep = cellE & ~(near[:-1, :-1] | near[1:, :-1] | near[1:, 1:] | near[:-1, 1:])
    out["deep_elastic_polar_max"] = float(np.max(pol[deep])) if deep.any() else np.nan
    hits = 0
    if ridge_rho is not None:
        hits += int(np.sum(ridge_rho & (reg == 1)))
        hits += int(np.sum(ridge_rho & (reg == -1)))
    if ridge_rho_bar is not None:
        hits += int(np.sum(ridge_rho_bar & (reg == -1)))
        hits += int(np.sum(ridge_rho_bar & (reg == 1)))
    out["ridge_plastic_hits"] = hits
    out["hessian_sup"] = discrete_hessian_sup(sol)[0]
    return out


def _second_differences(grid, f):
    """Directional second differences along the four lattice directions.

    Yields ``(step, q)`` with ``step`` the Euclidean step length and ``q`` the
    second difference quotient at interior lattice nodes.
    """
    h = grid.h
    c = f[1:-1, 1:-1]
    yield h, (f[2:, 1:-1] - 2 * c + f[:-2, 1:-1]) / h**2
    yield h, (f[1:-1, 2:] - 2 * c + f[1:-1, :-2]) / h**2
    s = np.sqrt(2.0) * h
    yield s, (f[2:, 2:] - 2 * c + f[:-2, :-2]) / s**2
    yield s, (f[2:, :-2] - 2 * c + f[:-2, 2:]) / s**2


def penalization_bounds(sol, body, integrand, C2=None):
    """A-priori bounds along the continuation, level by level.

    Needs a double-obstacle solution computed with ``keep_levels=True``.
    For every level reports the obstacle approximation ``|psi - rho|``
    against ``C1 eps``, the ``U_eps`` inclusion chain, the nodal operator
    ``|div DF(Du)|`` against ``C4 + n c9 C3/(d - eps)`` on ``d > 2 eps``, and
    one-sided second differences of ``psi``/``phi`` against ``+-C3/(d - eps)``.
    A second difference averages ``D2 psi`` over its segment, so the node
    bound uses ``d - step``.
    """
    C0, C1 = body.bounds
    if C2 is None:
        C2 = difference_quotient_constant(body)[0]
    C3 = C1**2 * C2 / C0
    b = integrand.bounds
    in_u = sol.in_u
    top = max(np.nanmax(np.abs(sol.rho[in_u])), np.nanmax(np.abs(sol.rho_bar[in_u])))
    C4 = b["c5"] * (top + 5 * C1 + 1)
    n = sol.grid.points.shape[-1]
    grid = sol.grid
    dist2 = sol.dist
    dcore = dist2[1:-1, 1:-1]
    levels = []
    for lev in sol.diagnostics["levels"]:
        if "mob" not in lev:
            continue
        eps, mob, mesh = lev["eps"], lev["mob"], lev["mesh"]
        d = mob.dist[mesh.uid]
        far = d > 2 * eps
        op = np.abs(lev["operator"])
        bound = C4 + n * b["c9"] * C3 / (d - eps)
        ratio = float(np.max(op[far] / bound[far])) if far.any() else 0.0
        psi, phi = mob.psi.reshape(grid.shape), mob.phi.reshape(grid.shape)
        up, lo = -np.inf, np.inf
        for step, q in _second_differences(grid, psi):
            ok = np.isfinite(q) & (dcore - step > eps)
            if ok.any():
                up = max(up, float(np.max(q[ok] * (dcore[ok] - step - eps))))
        for step, q in _second_differences(grid, phi):
            ok = np.isfinite(q) & (dcore - step > eps)
            if ok.any():
                lo = min(lo, float(np.min(q[ok] * (dcore[ok] - step - eps))))
        ch = mob.chain
        levels.append({
            "eps": eps,
            "psi_minus_rho": ch["psi_minus_rho"], "psi_bound": C1 * eps,
            "lower_in_U_eps": ch["lower_in_U_eps"], "U_eps_in_far": ch["U_eps_in_far"],
            "gap_min": ch["phi_plus_rho_bar_min"], "gap_max": ch["phi_plus_rho_bar_max"],
            "gap_bounds": (2 * C1 * eps, 5 * C1 * eps),
            "operator_ratio": ratio, "operator_nodes": int(far.sum()),
            "psi_curvature": up, "phi_curvature": lo,
        })
    return {"C0": C0, "C1": C1, "C2": C2, "C3": C3, "C4": C4, "levels": levels}


def ridge_mask(domain, data, body, grid, reflected=False):
    """Lattice mask of ridge nodes (grid-aware classification)."""
    P = grid.points.reshape(-1, 2)
    inside = domain.inside(P)
    if reflected:
        data, body = data.negate(), reflect(body)
    f = rho_field(domain, data, body, P[inside])
    lab = classify_ridge(f, cell=grid.h)
    out = np.zeros(P.shape[0], dtype=bool)
    out[np.nonzero(inside)[0]] = lab > 0
    return out.reshape(grid.shape)


def default_body():
    return make_body({"kind": "euclidean_ball", "dim": 2})
