"""Prescribed-mean-curvature graphs over masked polygonal domains.

A section z = u(x, y) of a fibered model has mean curvature H exactly
when the divergence-form equation

    Q(u) = d/dx (lam U / W) + d/dy (lam V / W) - 2 lam^2 H = 0,
    U = u_x + A1,   V = u_y + A2,   W = sqrt(1 + U^2 + V^2),

holds, where (A1, A2) are the coefficients of the vertical connection
form and lam the base conformal factor (both supplied by the ambient
``ManifoldParams``).  The discretization is a conservative node-centered
finite-difference scheme on a uniform grid: fluxes are evaluated at cell
faces from one-sided first differences plus averaged cross-derivatives,
then differenced again, which mimics the divergence structure and keeps
the scheme second-order and monotone-friendly.

Domains are simple polygons, optionally composed with an affine chart
map ("work" coordinates -> base coordinates) so that slanted physical
boundaries can be grid-aligned; the equation is transformed with the
corresponding Piola map, so the discrete fluxes stay conservative.

Dirichlet data is attached per polygon edge; designated "vertical
vertices" mark corners where the data jumps because the boundary of the
lifted contour contains a vertical segment over that corner.  The jump
carries the twist geometry that ``corner_twist_profile`` extracts.

The nonlinear systems are solved by damped Newton iteration with an
analytically assembled sparse Jacobian.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from matplotlib.path import Path as MplPath
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .errors import PreconditionError, SolverError
from .fibration import ManifoldParams, metric_at
from .hyperbolic import TwistProfile

_OUT, _BOUNDARY, _INTERIOR = 0, 1, 2


@dataclass(frozen=True)
class AffineFrame:
    """Affine chart map work -> base: x_base = matrix @ x_work + offset."""

    matrix: np.ndarray
    offset: np.ndarray

    @classmethod
    def identity(cls) -> "AffineFrame":
        return cls(np.eye(2), np.zeros(2))

    @classmethod
    def hinge(cls, a: float, n: float, phi: float, lower: bool = True,
              rows: float = 1.0) -> "AffineFrame":
        """Map the right triangle with legs (1, rows) onto the hinge.

        The work x-axis goes to the edge of length ``a`` along the base
        x-axis and the work segment (0, rows) to the edge of length ``n``
        at angle phi (below the axis when ``lower``).  Choosing
        rows = n sin(phi) / a makes the physical cells of a uniform work
        grid isotropic near the a-edge.
        """
        sign = -1.0 if lower else 1.0
        m = np.array([[a, n * math.cos(phi) / rows],
                      [0.0, sign * n * math.sin(phi) / rows]])
        return cls(m, np.zeros(2))

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (2, 2) or abs(np.linalg.det(m)) < 1e-14:
            raise PreconditionError("frame matrix must be an invertible 2x2")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "offset", np.asarray(self.offset, dtype=float))

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.matrix))

    @property
    def inv(self) -> np.ndarray:
        return np.linalg.inv(self.matrix)

    def to_base(self, pts_work: np.ndarray) -> np.ndarray:
        return np.asarray(pts_work, dtype=float) @ self.matrix.T + self.offset

    def to_work(self, pts_base: np.ndarray) -> np.ndarray:
        return (np.asarray(pts_base, dtype=float) - self.offset) @ self.inv.T


def _segment_distance(pts, a, b):
    """Euclidean distance from points to the segment a-b (vectorized)."""
    d = b - a
    denom = float(d @ d)
    t = np.clip(((pts - a) @ d) / denom, 0.0, 1.0)
    proj = a + t[:, None] * d
    return np.linalg.norm(pts - proj, axis=1), t


class GraphDomain:
    """Masked uniform grid over a simple polygon in work coordinates."""

    def __init__(self, polygon, h, edge_data, frame: AffineFrame | None = None,
                 vertical_vertices=(), pad: int = 2):
        poly = np.asarray(polygon, dtype=float)
        if poly.ndim != 2 or poly.shape[0] < 3 or poly.shape[1] != 2:
            raise PreconditionError("polygon needs at least 3 vertices")
        if len(edge_data) != len(poly):
            raise PreconditionError("need one data function per polygon edge")
        # store counterclockwise
        area2 = np.sum(poly[:, 0] * np.roll(poly[:, 1], -1)
                       - np.roll(poly[:, 0], -1) * poly[:, 1])
        self._reversed = bool(area2 < 0)
        if self._reversed:
            poly = poly[::-1]
            edge_data = [edge_data[(len(poly) - 2 - i) % len(poly)]
                         for i in range(len(poly))]
            vertical_vertices = tuple((len(poly) - 1 - v) % len(poly)
                                      for v in vertical_vertices)
        self.polygon = poly
        self.h = float(h)
        self.frame = frame or AffineFrame.identity()
        self.edge_data = list(edge_data)
        self.vertical_vertices = tuple(sorted(set(int(v) for v in vertical_vertices)))
        self._build_grid(pad)
        self._assign_boundary()
        self._build_operators()

    def with_data(self, edge_data, vertical_vertices=None) -> "GraphDomain":
        """Same grid and operators with new per-edge boundary data.

        ``edge_data`` is indexed like the polygon passed to the
        constructor.  Rebuilding only the boundary values makes sweeps
        over boundary parameters cheap.
        """
        import copy

        if len(edge_data) != len(self.polygon):
            raise PreconditionError("need one data function per polygon edge")
        new = copy.copy(self)
        m = len(self.polygon)
        if self._reversed:
            edge_data = [edge_data[(m - 2 - i) % m] for i in range(m)]
            if vertical_vertices is not None:
                vertical_vertices = tuple((m - 1 - v) % m for v in vertical_vertices)
        new.edge_data = list(edge_data)
        if vertical_vertices is not None:
            new.vertical_vertices = tuple(sorted(set(int(v) for v in vertical_vertices)))
        new._assign_boundary()
        return new

    # -- masking ---------------------------------------------------------

    def _build_grid(self, pad):
        h = self.h
        lo = np.floor(self.polygon.min(axis=0) / h - pad) * h
        hi = np.ceil(self.polygon.max(axis=0) / h + pad) * h
        nx = int(round((hi[0] - lo[0]) / h)) + 1
        ny = int(round((hi[1] - lo[1]) / h)) + 1
        self.origin = lo
        self.shape = (nx, ny)
        ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        pts = np.stack([lo[0] + ii.ravel() * h, lo[1] + jj.ravel() * h], axis=1)
        path = MplPath(np.vstack([self.polygon, self.polygon[:1]]))
        tol = 1e-9 * max(1.0, np.max(np.abs(self.polygon)))
        inside = path.contains_points(pts, radius=tol)
        inside |= path.contains_points(pts, radius=-tol)
        grid_in = inside.reshape(nx, ny)

        on_edge = np.zeros(len(pts), dtype=bool)
        cand = np.flatnonzero(inside)
        edge_tol = 1e-9 * max(1.0, float(np.max(np.abs(self.polygon))))
        for k in range(len(self.polygon)):
            a, b = self.polygon[k], self.polygon[(k + 1) % len(self.polygon)]
            dist, _ = _segment_distance(pts[cand], a, b)
            on_edge[cand[dist < edge_tol]] = True
        on_edge_grid = on_edge.reshape(nx, ny)

        status = np.where(grid_in, _INTERIOR, _OUT).astype(np.int8)
        has_out_neighbor = np.zeros_like(grid_in)
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            shifted = np.zeros_like(grid_in)
            sl_dst = (slice(max(dx, 0), nx + min(dx, 0)),
                      slice(max(dy, 0), ny + min(dy, 0)))
            sl_src = (slice(max(-dx, 0), nx + min(-dx, 0)),
                      slice(max(-dy, 0), ny + min(-dy, 0)))
            shifted[sl_dst] = ~grid_in[sl_src]
            has_out_neighbor |= shifted & grid_in
        status[(has_out_neighbor | on_edge_grid) & grid_in] = _BOUNDARY

        self.status = status
        packed = -np.ones((nx, ny), dtype=np.int64)
        dom = np.flatnonzero(status.ravel() != _OUT)
        packed.ravel()[dom] = np.arange(len(dom))
        self.packed = packed
        self.node_ij = np.stack(np.unravel_index(dom, (nx, ny)), axis=1)
        self.node_work = np.stack([lo[0] + self.node_ij[:, 0] * h,
                                   lo[1] + self.node_ij[:, 1] * h], axis=1)
        self.node_base = self.frame.to_base(self.node_work)
        self.node_status = status.ravel()[dom]
        self.n_nodes = len(dom)
        self.interior = np.flatnonzero(self.node_status == _INTERIOR)
        self.boundary = np.flatnonzero(self.node_status == _BOUNDARY)
        if len(self.interior) == 0:
            raise PreconditionError("domain has an empty interior at this h")

    def _assign_boundary(self):
        m = len(self.polygon)
        pts = self.node_work[self.boundary]
        dists = np.empty((len(pts), m))
        for k in range(m):
            a, b = self.polygon[k], self.polygon[(k + 1) % m]
            dists[:, k], _ = _segment_distance(pts, a, b)
        nearest = np.argmin(dists, axis=1)
        vert_d = np.linalg.norm(pts[:, None, :] - self.polygon[None, :, :], axis=2)
        nearest_vertex = np.argmin(vert_d, axis=1)
        at_vertex = vert_d[np.arange(len(pts)), nearest_vertex] < 0.45 * self.h

        vals = np.empty(len(pts))
        for idx in range(len(pts)):
            x, y = pts[idx]
            if at_vertex[idx]:
                v = nearest_vertex[idx]
                g_prev = self.edge_data[(v - 1) % m]
                g_next = self.edge_data[v]
                vals[idx] = 0.5 * (g_prev(x, y) + g_next(x, y))
            else:
                vals[idx] = self.edge_data[nearest[idx]](x, y)
        self.boundary_edge = nearest
        self.boundary_values = vals

    # -- operators ---------------------------------------------------------

    def _node_at(self, i, j):
        nx, ny = self.shape
        if np.any(i < 0) or np.any(i >= nx) or np.any(j < 0) or np.any(j >= ny):
            return -1
        return self.packed[i, j]

    def _directional_stencil(self, axis):
        """Per-node derivative rows along one work axis (central/one-sided)."""
        rows, cols, vals = [], [], []
        nx, ny = self.shape
        h = self.h
        for p in range(self.n_nodes):
            i, j = self.node_ij[p]
            def at(di, dj):
                ii, jj = i + di, j + dj
                if 0 <= ii < nx and 0 <= jj < ny:
                    return self.packed[ii, jj]
                return -1
            if axis == 0:
                plus, minus = at(1, 0), at(-1, 0)
                plus2, minus2 = at(2, 0), at(-2, 0)
            else:
                plus, minus = at(0, 1), at(0, -1)
                plus2, minus2 = at(0, 2), at(0, -2)
            if plus >= 0 and minus >= 0:
                st = [(plus, 0.5 / h), (minus, -0.5 / h)]
            elif plus < 0 and minus >= 0 and minus2 >= 0:
                st = [(p, 1.5 / h), (minus, -2.0 / h), (minus2, 0.5 / h)]
            elif minus < 0 and plus >= 0 and plus2 >= 0:
                st = [(p, -1.5 / h), (plus, 2.0 / h), (plus2, -0.5 / h)]
            elif plus >= 0:
                st = [(plus, 1.0 / h), (p, -1.0 / h)]
            elif minus >= 0:
                st = [(p, 1.0 / h), (minus, -1.0 / h)]
            else:
                st = []
            for c, v in st:
                rows.append(p)
                cols.append(c)
                vals.append(v)
        return sparse.csr_matrix((vals, (rows, cols)),
                                 shape=(self.n_nodes, self.n_nodes))

    def _build_operators(self):
        nx, ny = self.shape
        h = self.h
        pk = self.packed
        stat = self.status

        def face_list(axis):
            faces = []
            if axis == 0:
                for i in range(nx - 1):
                    for j in range(ny):
                        a, b = pk[i, j], pk[i + 1, j]
                        if a >= 0 and b >= 0 and (
                                self.node_status[a] == _INTERIOR
                                or self.node_status[b] == _INTERIOR):
                            faces.append((a, b))
            else:
                for i in range(nx):
                    for j in range(ny - 1):
                        a, b = pk[i, j], pk[i, j + 1]
                        if a >= 0 and b >= 0 and (
                                self.node_status[a] == _INTERIOR
                                or self.node_status[b] == _INTERIOR):
                            faces.append((a, b))
            return np.asarray(faces, dtype=np.int64).reshape(-1, 2)

        self.xfaces = face_list(0)
        self.yfaces = face_list(1)

        def two_point(faces):
            nf = len(faces)
            rows = np.repeat(np.arange(nf), 2)
            cols = faces.ravel()
            vals = np.tile([-1.0 / h, 1.0 / h], nf)
            return sparse.csr_matrix((vals, (rows, cols)),
                                     shape=(nf, self.n_nodes))

        def face_average(faces, node_op):
            nf = len(faces)
            sel = sparse.csr_matrix(
                (np.full(2 * nf, 0.5),
                 (np.repeat(np.arange(nf), 2), faces.ravel())),
                shape=(nf, self.n_nodes))
            return (sel @ node_op).tocsr()

        dx_nodes = self._directional_stencil(0)
        dy_nodes = self._directional_stencil(1)
        self.gx_xf = two_point(self.xfaces)
        self.gy_xf = face_average(self.xfaces, dy_nodes)
        self.gy_yf = two_point(self.yfaces)
        self.gx_yf = face_average(self.yfaces, dx_nodes)

        def divergence(faces):
            rows, cols, vals = [], [], []
            for f, (a, b) in enumerate(faces):
                for node, sgn in ((a, 1.0), (b, -1.0)):
                    if self.node_status[node] == _INTERIOR:
                        rows.append(node)
                        cols.append(f)
                        vals.append(sgn / h)
            return sparse.csr_matrix((vals, (rows, cols)),
                                     shape=(self.n_nodes, len(faces)))

        self.div_x = divergence(self.xfaces)
        self.div_y = divergence(self.yfaces)

        def face_mid_base(faces):
            a = self.node_work[faces[:, 0]]
            b = self.node_work[faces[:, 1]]
            return self.frame.to_base(0.5 * (a + b))

        self.xface_base = face_mid_base(self.xfaces)
        self.yface_base = face_mid_base(self.yfaces)

    # -- data helpers -------------------------------------------------------

    def edge_nodes(self, edge_id: int):
        """Packed indices of boundary nodes on one polygon edge, ordered."""
        m = len(self.polygon)
        if not 0 <= edge_id < m:
            raise PreconditionError(f"edge {edge_id} not in polygon")
        a = self.polygon[edge_id]
        b = self.polygon[(edge_id + 1) % m]
        pts = self.node_work[self.boundary]
        dist, t = _segment_distance(pts, a, b)
        sel = dist < 1e-9 * max(1.0, float(np.max(np.abs(self.polygon))))
        order = np.argsort(t[sel])
        return self.boundary[np.flatnonzero(sel)[order]]

    def interpolate(self, values: np.ndarray, pts_work: np.ndarray) -> np.ndarray:
        """Bilinear interpolation of a packed node vector at work points."""
        h = self.h
        rel = (np.asarray(pts_work, dtype=float) - self.origin) / h
        i0 = np.floor(rel[:, 0]).astype(int)
        j0 = np.floor(rel[:, 1]).astype(int)
        fx = rel[:, 0] - i0
        fy = rel[:, 1] - j0
        out = np.full(len(rel), np.nan)
        nx, ny = self.shape
        ok = (i0 >= 0) & (i0 < nx - 1) & (j0 >= 0) & (j0 < ny - 1)
        c00 = np.where(ok, self.packed[np.clip(i0, 0, nx - 1), np.clip(j0, 0, ny - 1)], -1)
        c10 = np.where(ok, self.packed[np.clip(i0 + 1, 0, nx - 1), np.clip(j0, 0, ny - 1)], -1)
        c01 = np.where(ok, self.packed[np.clip(i0, 0, nx - 1), np.clip(j0 + 1, 0, ny - 1)], -1)
        c11 = np.where(ok, self.packed[np.clip(i0 + 1, 0, nx - 1), np.clip(j0 + 1, 0, ny - 1)], -1)
        good = ok & (c00 >= 0) & (c10 >= 0) & (c01 >= 0) & (c11 >= 0)
        g = np.flatnonzero(good)
        v00 = values[c00[g]]
        v10 = values[c10[g]]
        v01 = values[c01[g]]
        v11 = values[c11[g]]
        out[g] = (v00 * (1 - fx[g]) * (1 - fy[g]) + v10 * fx[g] * (1 - fy[g])
                  + v01 * (1 - fx[g]) * fy[g] + v11 * fx[g] * fy[g])
        return out

    def vertex_jump(self, vertex: int):
        """One-sided boundary limits (before-edge, after-edge) at a vertex."""
        m = len(self.polygon)
        x, y = self.polygon[vertex % m]
        g_prev = self.edge_data[(vertex - 1) % m]
        g_next = self.edge_data[vertex % m]
        return float(g_prev(x, y)), float(g_next(x, y))


@dataclass
class ScalarField:
    """Solved (or sampled) graph over a GraphDomain."""

    domain: GraphDomain
    params: ManifoldParams
    H: float
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.domain.n_nodes,):
            raise PreconditionError("value vector does not match the domain")
        if not np.all(np.isfinite(v)):
            raise PreconditionError("field values must be finite")
        self.values = v

    def boundary_mismatch(self) -> float:
        return float(np.max(np.abs(
            self.values[self.domain.boundary] - self.domain.boundary_values)))

    def grid(self) -> np.ndarray:
        nx, ny = self.domain.shape
        out = np.full((nx, ny), np.nan)
        out[self.domain.node_ij[:, 0], self.domain.node_ij[:, 1]] = self.values
        return out


def _flux_pieces(domain: GraphDomain, params: ManifoldParams, u: np.ndarray):
    """Transformed fluxes and their gradient coefficients at both face sets."""
    minv = domain.frame.inv
    minv_t = minv.T
    jdet = abs(domain.frame.det)

    out = []
    for faces, gx, gy, base in ((domain.xfaces, domain.gx_xf, domain.gy_xf,
                                 domain.xface_base),
                                (domain.yfaces, domain.gx_yf, domain.gy_yf,
                                 domain.yface_base)):
        ux = gx @ u
        uy = gy @ u
        p = minv_t[0, 0] * ux + minv_t[0, 1] * uy
        q = minv_t[1, 0] * ux + minv_t[1, 1] * uy
        xb, yb = base[:, 0], base[:, 1]
        lam = params.conformal_factor(xb, yb)
        a1, a2 = params.connection_coefficients(xb, yb)
        U = p + a1
        V = q + a2
        W = np.sqrt(1.0 + U * U + V * V)
        f1 = lam * U / W
        f2 = lam * V / W
        out.append({"faces": faces, "gx": gx, "gy": gy, "U": U, "V": V,
                    "W": W, "lam": lam, "f1": f1, "f2": f2})
    x, y = out
    fhat1 = jdet * (minv[0, 0] * x["f1"] + minv[0, 1] * x["f2"])
    fhat2 = jdet * (minv[1, 0] * y["f1"] + minv[1, 1] * y["f2"])
    return x, y, fhat1, fhat2


def residual_vector(domain: GraphDomain, params: ManifoldParams, H: float,
                    u: np.ndarray) -> np.ndarray:
    """Discrete Q at every node (nonzero only where the stencil applies)."""
    x, y, fhat1, fhat2 = _flux_pieces(domain, params, u)
    xb, yb = domain.node_base[:, 0], domain.node_base[:, 1]
    lam = params.conformal_factor(xb, yb)
    source = 2.0 * lam * lam * H * abs(domain.frame.det)
    r = domain.div_x @ fhat1 + domain.div_y @ fhat2
    r[domain.interior] -= source[domain.interior]
    r[domain.boundary] = 0.0
    return r


def residual(field: ScalarField) -> np.ndarray:
    """Q(u) at interior nodes of a field."""
    r = residual_vector(field.domain, field.params, field.H, field.values)
    return r[field.domain.interior]


def _jacobian(domain: GraphDomain, params: ManifoldParams, u: np.ndarray):
    minv = domain.frame.inv
    minv_t = minv.T
    jdet = abs(domain.frame.det)
    x, y, _, _ = _flux_pieces(domain, params, u)

    blocks = []
    for piece, row in ((x, minv[0]), (y, minv[1])):
        U, V, W, lam = piece["U"], piece["V"], piece["W"], piece["lam"]
        w3 = W ** 3
        s11 = lam * (1.0 + V * V) / w3
        s12 = -lam * U * V / w3
        s22 = lam * (1.0 + U * U) / w3
        # d fhat / d (ux, uy) = jdet * row @ S @ Minv^T
        b11 = row[0] * s11 + row[1] * s12
        b12 = row[0] * s12 + row[1] * s22
        c1 = jdet * (b11 * minv_t[0, 0] + b12 * minv_t[1, 0])
        c2 = jdet * (b11 * minv_t[0, 1] + b12 * minv_t[1, 1])
        d1 = sparse.diags(c1) @ piece["gx"]
        d2 = sparse.diags(c2) @ piece["gy"]
        blocks.append((d1 + d2).tocsr())
    jac = domain.div_x @ blocks[0] + domain.div_y @ blocks[1]
    return jac.tocsr()


def _newton(domain: GraphDomain, params: ManifoldParams, H: float,
            u: np.ndarray, tol: float, max_iter: int,
            strict: bool = True) -> np.ndarray:
    """Damped Newton core; boundary entries of ``u`` stay fixed.

    With ``strict`` off the best iterate is returned instead of raising,
    which is what continuation stages want from a warm-up solve.
    """
    ii = domain.interior
    g = u[domain.boundary]
    # a maximum principle confines minimal sections to their data range;
    # nonzero mean curvature lets the graph bulge past it.  The bound is
    # used as a step-length cap, not a hard box: capping keeps the Newton
    # direction intact while preventing runaway iterates.
    verts_base = domain.frame.to_base(domain.polygon)
    diam = float(np.max(np.linalg.norm(
        verts_base[:, None, :] - verts_base[None, :, :], axis=2)))
    g_lo, g_hi = float(np.min(g)), float(np.max(g))
    span = (g_hi - g_lo) + abs(H) * diam * diam + 1e-3
    max_move = 2.0 * span
    u = u.copy()
    u[ii] = np.clip(u[ii], g_lo - span, g_hi + span)

    r = residual_vector(domain, params, H, u)
    norm = float(np.max(np.abs(r[ii])))
    merit = float(r[ii] @ r[ii])
    for iteration in range(max_iter):
        if norm < tol:
            return u
        jac = _jacobian(domain, params, u)[ii][:, ii].tocsc()
        with np.errstate(all="ignore"):
            delta = spsolve(jac, -r[ii])
        if not np.all(np.isfinite(delta)):
            if not strict:
                return u
            raise SolverError("singular linearization",
                              {"iteration": iteration, "residual": norm})
        # damp on the squared-residual merit; the max norm only gates
        # convergence, it is too spiky to serve as a line-search measure
        biggest = float(np.max(np.abs(delta)))
        step = 1.0 if biggest <= max_move else max_move / biggest
        for _ in range(40):
            u_try = u.copy()
            u_try[ii] = u_try[ii] + step * delta
            r_try = residual_vector(domain, params, H, u_try)
            merit_try = float(r_try[ii] @ r_try[ii])
            if np.isfinite(merit_try) and merit_try < merit * (1.0 - 1e-4 * step):
                break
            step *= 0.5
        else:
            if not strict:
                return u
            raise SolverError("Newton stagnated during damping",
                              {"iteration": iteration, "residual": norm})
        u, r, merit = u_try, r_try, merit_try
        norm = float(np.max(np.abs(r[ii])))
    if not strict:
        return u
    raise SolverError("Newton did not reach tolerance",
                      {"iterations": max_iter, "residual": norm})


def _picard_sweep(domain: GraphDomain, params: ManifoldParams, H: float,
                  u: np.ndarray, iterations: int) -> np.ndarray:
    """Lagged-coefficient sweeps: freeze W, solve the linear flux problem.

    With W frozen the flux is linear in the gradient with scalar diffusion
    lam/W, so every sweep is one symmetric sparse solve; the iteration is
    slow but globally tame, which makes it the globalizer of choice when
    plain Newton runs into the saturation regime of steep data.
    """
    minv = domain.frame.inv
    minv_t = minv.T
    jdet = abs(domain.frame.det)
    ii = domain.interior
    bb = domain.boundary
    u = u.copy()

    xb_n, yb_n = domain.node_base[:, 0], domain.node_base[:, 1]
    lam_n = params.conformal_factor(xb_n, yb_n)
    source = 2.0 * lam_n * lam_n * H * jdet

    for _ in range(iterations):
        pieces = _flux_pieces(domain, params, u)[:2]
        lin_blocks = []
        const_parts = []
        for piece, row in zip(pieces, (minv[0], minv[1])):
            lam, W = piece["lam"], piece["W"]
            coeff = lam / W
            xb = piece
            # C = jdet * row @ (coeff I) @ Minv^T, applied to (gx, gy)
            c1 = jdet * coeff * (row[0] * minv_t[0, 0] + row[1] * minv_t[1, 0])
            c2 = jdet * coeff * (row[0] * minv_t[0, 1] + row[1] * minv_t[1, 1])
            lin_blocks.append((sparse.diags(c1) @ piece["gx"]
                               + sparse.diags(c2) @ piece["gy"]).tocsr())
            # shift part of the flux: jdet * row @ (coeff * (a1, a2))
            a1 = piece["U"] - (minv_t[0, 0] * (piece["gx"] @ u)
                               + minv_t[0, 1] * (piece["gy"] @ u))
            a2 = piece["V"] - (minv_t[1, 0] * (piece["gx"] @ u)
                               + minv_t[1, 1] * (piece["gy"] @ u))
            const_parts.append(jdet * coeff * (row[0] * a1 + row[1] * a2))
        lin = domain.div_x @ lin_blocks[0] + domain.div_y @ lin_blocks[1]
        const = domain.div_x @ const_parts[0] + domain.div_y @ const_parts[1]
        rhs = source[ii] - const[ii] - lin[ii][:, bb] @ u[bb]
        with np.errstate(all="ignore"):
            u_new = spsolve(lin[ii][:, ii].tocsc(), rhs)
        if not np.all(np.isfinite(u_new)):
            return u
        u[ii] = u_new
    return u


def solve(domain: GraphDomain, params: ManifoldParams, H: float = 0.0,
          options: dict | None = None) -> ScalarField:
    """Damped Newton solve of the discrete graph equation.

    ``options`` keys: tol (max-norm residual, default 1e-8), max_iter
    (default 60), seed ("mean", "min", "max", an array over domain nodes,
    or a callable of base coordinates).  When the direct iteration from
    the requested seed stalls, lagged-coefficient sweeps rebuild a tame
    iterate before Newton finishes the job.
    """
    opts = {"tol": 1e-8, "max_iter": 60, "seed": "mean"}
    opts.update(options or {})
    tol = float(opts["tol"])
    max_iter = int(opts["max_iter"])

    u = np.zeros(domain.n_nodes)
    u[domain.boundary] = domain.boundary_values
    seed = opts["seed"]
    g = domain.boundary_values
    cold = isinstance(seed, str)
    if cold:
        fill = {"mean": float(np.mean(g)), "min": float(np.min(g)),
                "max": float(np.max(g))}.get(seed)
        if fill is None:
            raise PreconditionError(f"unknown seed '{seed}'")
        u[domain.interior] = fill
        # a handful of lagged sweeps turn the constant fill into a seed
        # that plain Newton handles even for steep data
        u = _picard_sweep(domain, params, H, u, 12)
    elif callable(seed):
        u[domain.interior] = seed(domain.node_base[domain.interior, 0],
                                  domain.node_base[domain.interior, 1])
    else:
        seed = np.asarray(seed, dtype=float)
        if seed.shape != (domain.n_nodes,):
            raise PreconditionError("seed array must cover all domain nodes")
        u[domain.interior] = seed[domain.interior]

    try:
        out = _newton(domain, params, H, u, tol, max_iter)
        return ScalarField(domain, params, H, out)
    except SolverError as direct_failure:
        u_fallback = np.full(domain.n_nodes, float(np.mean(g)))
        u_fallback[domain.boundary] = g
        try:
            u_fallback = _picard_sweep(domain, params, H, u_fallback, 60)
            out = _newton(domain, params, H, u_fallback, tol, max_iter)
            return ScalarField(domain, params, H, out)
        except SolverError as exc:
            exc.diagnostics["direct_failure"] = str(direct_failure)
            raise


def comparison_check(field1: ScalarField, field2: ScalarField,
                     tol: float = 1e-10) -> bool:
    """True iff u1 <= u2 + tol at all nodes (same domain, params, H).

    The boundary data of ``field1`` must not exceed that of ``field2``.
    """
    if field1.domain is not field2.domain:
        raise PreconditionError("fields live on different domains")
    if field1.params != field2.params or field1.H != field2.H:
        raise PreconditionError("fields have different ambient data")
    b1 = field1.values[field1.domain.boundary]
    b2 = field2.values[field2.domain.boundary]
    if np.any(b1 > b2 + 1e-12):
        raise PreconditionError("boundary data are not ordered")
    return bool(np.all(field1.values <= field2.values + tol))


@dataclass
class EdgeTrace:
    """Conormal data sampled along one boundary edge."""

    s: np.ndarray           # base arclength along the edge
    points: np.ndarray      # (n, 3) surface points over the edge
    eta: np.ndarray         # (n, 3) unit conormal, ambient metric
    nu: np.ndarray          # (n, 3) unit surface normal (coordinates)
    eta_xi: np.ndarray      # vertical component of the conormal

    def integral(self) -> float:
        return float(np.trapezoid(self.eta_xi, self.s))


def _work_axis_of_edge(domain: GraphDomain, edge_id: int):
    m = len(domain.polygon)
    a = domain.polygon[edge_id]
    b = domain.polygon[(edge_id + 1) % m]
    d = b - a
    if abs(d[1]) < 1e-12 * max(1.0, abs(d[0])):
        return 0, a, b
    if abs(d[0]) < 1e-12 * max(1.0, abs(d[1])):
        return 1, a, b
    return None, a, b


def edge_trace(field: ScalarField, edge_id: int) -> EdgeTrace:
    """Unit conormal and its vertical component along a boundary edge.

    The tangential derivative comes from the boundary data itself, the
    normal derivative from a one-sided second-order stencil into the
    domain.  The conormal is Gram-Schmidt orthogonalized against the
    edge tangent in the ambient metric and normalized there.
    """
    domain = field.domain
    params = field.params
    nodes = domain.edge_nodes(edge_id)
    if len(nodes) < 4:
        raise PreconditionError("edge carries fewer than 4 grid nodes")
    axis, a, b = _work_axis_of_edge(domain, edge_id)
    h = domain.h
    uvals = field.values

    pts_work = domain.node_work[nodes]
    # inward normal in work coordinates (polygon is counterclockwise)
    d = b - a
    t_work = d / np.linalg.norm(d)
    m_work = np.array([-t_work[1], t_work[0]])

    # tangential derivative along the edge samples
    s_work = (pts_work - a) @ t_work
    du_t = np.gradient(uvals[nodes], s_work, edge_order=2)

    # one-sided normal derivatives: third order where the wide offsets
    # stay in the domain, plus the monotone two-point slope
    u1 = domain.interpolate(uvals, pts_work + m_work * h)
    u2 = domain.interpolate(uvals, pts_work + 2 * m_work * h)
    u3 = domain.interpolate(uvals, pts_work + 3 * m_work * h)
    u0 = uvals[nodes]
    du_hi = (-11.0 * u0 + 18.0 * u1 - 9.0 * u2 + 2.0 * u3) / (6.0 * h)
    du2 = (-3.0 * u0 + 4.0 * u1 - u2) / (2.0 * h)
    du1 = (u1 - u0) / h
    bad = ~np.isfinite(du_hi)
    du_hi[bad] = du2[bad]
    bad = ~np.isfinite(du_hi)
    du_hi[bad] = du1[bad]
    for du in (du_hi, du1):
        bad = ~np.isfinite(du)
        if np.any(bad):
            good = np.flatnonzero(np.isfinite(du))
            if len(good) == 0:
                raise SolverError("edge trace stencil left the domain everywhere")
            du[bad] = np.interp(np.flatnonzero(bad), good, du[good])

    tb = domain.frame.matrix @ t_work
    mb = domain.frame.matrix @ m_work
    tb_len = np.linalg.norm(tb)
    tb_unit = tb / tb_len
    mb_unit = mb - (mb @ tb_unit) * tb_unit
    mb_unit = mb_unit / np.linalg.norm(mb_unit)

    base_pts = domain.node_base[nodes]
    pts3 = np.column_stack([base_pts, u0])
    g = metric_at(params, pts3)
    lam = params.conformal_factor(base_pts[:, 0], base_pts[:, 1])
    a1, a2 = params.connection_coefficients(base_pts[:, 0], base_pts[:, 1])

    def geometry(du_m):
        grad_work = du_t[:, None] * t_work[None, :] \
            + du_m[:, None] * m_work[None, :]
        grad_base = grad_work @ domain.frame.inv
        T = np.column_stack([np.tile(tb_unit, (len(nodes), 1)),
                             grad_base @ tb_unit])
        Vin = np.column_stack([np.tile(mb_unit, (len(nodes), 1)),
                               grad_base @ mb_unit])

        def inner(vec1, vec2):
            return np.einsum("ni,nij,nj->n", vec1, g, vec2)

        eta = Vin - (inner(Vin, T) / inner(T, T))[:, None] * T
        eta = eta / np.sqrt(inner(eta, eta))[:, None]
        eta_xi = np.einsum("nij,nj->ni", g, eta)[:, 2]
        U = grad_base[:, 0] + a1
        V = grad_base[:, 1] + a2
        nrm = np.sqrt(1.0 + (U * U + V * V) / (lam * lam))
        # frame: E1 = (dx - A1 dz)/lam, E2 = (dy - A2 dz)/lam, E3 = dz
        e1 = np.stack([1.0 / lam, np.zeros_like(lam), -a1 / lam], axis=1)
        e2 = np.stack([np.zeros_like(lam), 1.0 / lam, -a2 / lam], axis=1)
        e3 = np.tile([0.0, 0.0, 1.0], (len(nodes), 1))
        nu = (-(U / lam)[:, None] * e1 - (V / lam)[:, None] * e2 + e3) \
            / nrm[:, None]
        return eta, nu, eta_xi

    # Within a few cells of a data-jump corner every stencil straddles the
    # fan and produces junk of either sign.  The integrand there follows
    # the fan asymptotics sign * (1 - c s^2) toward its vertical limit, so
    # the zone is replaced by that model, with c fitted at the first node
    # the high-order stencil resolves.  The vector fields fall back to the
    # monotone two-point slope, which at least has the correct sign.
    eta_hi, nu_hi, xi_hi = geometry(du_hi)
    eta_lo, nu_lo, xi_lo = geometry(du1)
    eta = eta_hi.copy()
    nu = nu_hi.copy()
    eta_xi = xi_hi.copy()
    m_poly = len(domain.polygon)
    # the zone has a fixed physical floor so that the (small) model bias is
    # grid-independent and cancels out of refinement comparisons
    zone = max(8.0 * h, 0.05 * float(s_work[-1] - s_work[0]))
    for end_s, vertex in ((s_work[0], edge_id),
                          (s_work[-1], (edge_id + 1) % m_poly)):
        z_prev, z_next = domain.vertex_jump(vertex)
        own = z_next if vertex == edge_id else z_prev
        other = z_prev if vertex == edge_id else z_next
        jump = other - own
        if abs(jump) <= 1e-12:
            continue
        sign = math.copysign(1.0, jump)
        dist = np.abs(s_work - end_s)
        near = dist < zone
        if not np.any(near) or np.all(near):
            continue
        outside = np.flatnonzero(~near)
        ref = outside[np.argmin(dist[outside])]
        f_ref = float(np.clip(sign * xi_hi[ref], 0.2, 1.0))
        c_fan = (1.0 - f_ref) / max(dist[ref] ** 2, 1e-30)
        eta_xi[near] = sign * (1.0 - c_fan * dist[near] ** 2)
        eta[near] = eta_lo[near]
        nu[near] = nu_lo[near]

    # base arclength: horizontal geodesic edges are lifted isometrically
    lam_edge = params.conformal_factor(base_pts[:, 0], base_pts[:, 1])
    ds = np.diff(s_work) * tb_len
    lam_mid = 0.5 * (lam_edge[1:] + lam_edge[:-1])
    s = np.concatenate([[0.0], np.cumsum(lam_mid * ds)])

    # at a corner whose data jumps, the surface continues up or down the
    # fiber and the conormal saturates vertically: the endpoint value of
    # the integrand is exactly +-1, with the sign of the jump
    m_poly = len(domain.polygon)
    for pos, vertex in ((0, edge_id), (-1, (edge_id + 1) % m_poly)):
        z_prev, z_next = domain.vertex_jump(vertex)
        own = z_next if vertex == edge_id else z_prev
        other = z_prev if vertex == edge_id else z_next
        jump = other - own
        if abs(jump) > 1e-12:
            eta_xi[pos] = math.copysign(1.0, jump)

    return EdgeTrace(s=s, points=pts3, eta=eta, nu=nu, eta_xi=eta_xi)


def corner_twist_profile(field: ScalarField, corner_vertex: int, heights,
                         radius_cells: float = 4.0,
                         angle_samples: int = 1441) -> TwistProfile:
    """Twist profile of the vertical boundary segment over a polygon corner.

    The boundary data jumps at the corner; for each height z strictly
    inside the jump the level set u = z runs into the corner, and its
    incoming direction (sampled on an arc a few cells away from the
    corner) gives the rotation angle of the surface normal at that
    height.  The profile is anchored exactly at the two edge directions,
    so alpha(0) = 0 and alpha(b) equals the corner opening angle.
    """
    domain = field.domain
    m = len(domain.polygon)
    v = corner_vertex % m
    if v not in domain.vertical_vertices:
        raise PreconditionError(f"vertex {v} is not a designated vertical vertex")
    z_prev, z_next = domain.vertex_jump(v)
    jump = z_next - z_prev
    if abs(jump) < 1e-14:
        raise PreconditionError("no data jump at this corner")
    z_lo, z_hi = min(z_prev, z_next), max(z_prev, z_next)
    heights = np.asarray(heights, dtype=float)
    if np.any(heights <= z_lo) or np.any(heights >= z_hi):
        raise PreconditionError("heights must lie strictly inside the jump")
    heights = np.sort(heights)

    corner_w = domain.polygon[v]
    next_w = domain.polygon[(v + 1) % m] - corner_w
    prev_w = domain.polygon[(v - 1) % m] - corner_w
    ang_next_w = math.atan2(next_w[1], next_w[0])
    ang_prev_w = math.atan2(prev_w[1], prev_w[0])
    # interior wedge in work coordinates: the polygon is stored ccw, so the
    # sweep from the after-edge to the before-edge is counterclockwise
    opening_w = (ang_prev_w - ang_next_w) % (2.0 * math.pi)

    # the arc is sampled in work coordinates, where the grid is isotropic;
    # the raw arc angle carries an O(radius) bias but survives interpolation
    # noise better than Richardson extrapolation toward the corner
    margin = 0.02 * opening_w
    rel = np.linspace(margin, opening_w - margin, angle_samples)
    ang_w = ang_next_w + rel

    def angles_at(radius):
        pts_work = corner_w[None, :] + radius * np.stack(
            [np.cos(ang_w), np.sin(ang_w)], axis=1)
        uu = domain.interpolate(field.values, pts_work)
        good = np.isfinite(uu)
        if np.count_nonzero(good) < 16:
            raise SolverError("corner sampling arc left the domain")
        rr, zz = rel[good], uu[good]
        # u runs from the after-edge value to the before-edge value
        increasing = zz[-1] >= zz[0]
        zz_m = zz if increasing else -zz
        tgt = heights if increasing else -heights
        zz_mono = np.maximum.accumulate(zz_m)
        return np.interp(tgt, zz_mono, rr)

    theta_w = angles_at(radius_cells * domain.h)

    # work-angle -> base-angle along the sweep: directions map through the
    # frame matrix, and the unwrapped base angle is monotone on the wedge
    mat = domain.frame.matrix

    def base_angle(theta):
        d = mat @ np.stack([np.cos(ang_next_w + theta), np.sin(ang_next_w + theta)])
        return math.atan2(d[1], d[0])

    beta0 = base_angle(0.0)
    sgn = 1.0 if domain.frame.det > 0 else -1.0

    def base_offset(theta):
        return (sgn * (base_angle(theta) - beta0)) % (2.0 * math.pi)

    opening = base_offset(opening_w)
    theta = np.array([base_offset(tw) for tw in theta_w])

    # twist parameter runs along the fiber from z_lo to z_hi
    t_inner = heights - z_lo
    # the level at z -> z_lo hugs the edge whose corner value is z_lo
    lo_is_next = z_next <= z_prev
    if lo_is_next:
        alpha_inner = theta
    else:
        alpha_inner = opening - theta

    t = np.concatenate([[0.0], t_inner, [z_hi - z_lo]])
    alpha = np.concatenate([[0.0], alpha_inner, [opening]])
    keep = np.concatenate([[True], np.diff(alpha) > 0.0])
    if np.count_nonzero(~keep) > 0.1 * len(alpha):
        raise SolverError("twist profile extraction was not monotone",
                          {"dropped": int(np.count_nonzero(~keep))})
    return TwistProfile(t[keep], alpha[keep])
