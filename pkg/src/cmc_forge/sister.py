"""Shape-operator rotation and curve data for isometric partner surfaces.

A minimal surface in the bundle-curvature-tau model corresponds to an
isometric surface of mean curvature H = tau in the product geometry over
the base of curvature kappa - 4 tau^2; shape operators are related by
S~ = J S + H id with J the quarter turn of the tangent plane.  Along a
curve with normal curvature k and normal torsion t this reads

    k~ = -t + H,     t~ = k.

The normal curvature/torsion of curves in a solved graph are computed in
the global orthonormal frame

    E1 = (dx - A1 dz)/lam,  E2 = (dy - A2 dz)/lam,  E3 = dz,

whose covariant derivatives close on the structure constant tau (flat
base only, kappa = 0):

    D_{E1}E2 =  tau E3, D_{E1}E3 = -tau E2, D_{E2}E3 = tau E1, ...

so all differentiation reduces to frame-component arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError
from .fibration import ManifoldParams
from .mc_graph import EdgeTrace, ScalarField, edge_trace


def sister_shape(s_samples: np.ndarray, H: float) -> np.ndarray:
    """Apply the quarter-turn relation to sampled shape operators.

    ``s_samples`` has shape (..., 2, 2) and must be symmetric in an
    orthonormal tangent basis; the result J S + H id has trace 2 H
    exactly.
    """
    s = np.asarray(s_samples, dtype=float)
    if s.shape[-2:] != (2, 2):
        raise PreconditionError("shape operator samples must be 2x2")
    if np.max(np.abs(s[..., 0, 1] - s[..., 1, 0])) > 1e-8:
        raise PreconditionError("shape operator samples must be symmetric")
    j = np.array([[0.0, -1.0], [1.0, 0.0]])
    out = np.einsum("ij,...jk->...ik", j, s)
    out[..., 0, 0] += H
    out[..., 1, 1] += H
    return out


def sister_curve_data(k: np.ndarray, t: np.ndarray, H: float):
    """Normal curvature and torsion of the partner curve: (-t + H, k)."""
    return -np.asarray(t, dtype=float) + H, np.asarray(k, dtype=float)


def _frame_components(params: ManifoldParams, points: np.ndarray,
                      vectors: np.ndarray) -> np.ndarray:
    """Coordinate vectors -> orthonormal frame components (kappa = 0)."""
    if params.kappa != 0.0:
        raise PreconditionError("curve frames are implemented for kappa = 0")
    x, y = points[:, 0], points[:, 1]
    a1, a2 = params.connection_coefficients(x, y)
    vx, vy, vz = vectors[:, 0], vectors[:, 1], vectors[:, 2]
    return np.stack([vx, vy, vz + a1 * vx + a2 * vy], axis=1)


def _coords_from_frame(params: ManifoldParams, points: np.ndarray,
                       frame_vecs: np.ndarray) -> np.ndarray:
    x, y = points[:, 0], points[:, 1]
    a1, a2 = params.connection_coefficients(x, y)
    f1, f2, f3 = frame_vecs[:, 0], frame_vecs[:, 1], frame_vecs[:, 2]
    return np.stack([f1, f2, f3 - a1 * f1 - a2 * f2], axis=1)


def _frame_connection(tau: float, x_frame: np.ndarray, a_frame: np.ndarray) -> np.ndarray:
    """Connection correction Gamma(X, A) in frame components."""
    x1, x2, x3 = x_frame[:, 0], x_frame[:, 1], x_frame[:, 2]
    a1, a2, a3 = a_frame[:, 0], a_frame[:, 1], a_frame[:, 2]
    return tau * np.stack([x2 * a3 + x3 * a2,
                           -(x1 * a3 + x3 * a1),
                           x1 * a2 - x2 * a1], axis=1)


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.cross(a, b)


@dataclass
class CurveFrameData:
    """Arclength samples of a surface curve with frame and form data."""

    t: np.ndarray          # arclength parameter
    points: np.ndarray     # (n, 3) coordinates
    tangent: np.ndarray    # (n, 3) frame components, unit
    normal: np.ndarray     # (n, 3) frame components, unit surface normal
    conormal: np.ndarray   # (n, 3) frame components, J tangent
    k: np.ndarray          # normal curvature
    t_tor: np.ndarray      # normal torsion
    params: ManifoldParams
    orientation: int = 1

    @property
    def length(self) -> float:
        return float(self.t[-1] - self.t[0])

    def reversed(self) -> "CurveFrameData":
        """Traverse backwards keeping the conormal: flips t_tor, keeps k."""
        return curve_frame_from_samples(self.params, self.points[::-1],
                                        normal_frame=self.normal[::-1],
                                        orientation=-self.orientation)


def curve_frame_from_samples(params: ManifoldParams, points: np.ndarray,
                             normals: np.ndarray | None = None,
                             normal_frame: np.ndarray | None = None,
                             orientation: int = 1) -> CurveFrameData:
    """Normal curvature and torsion from sampled curve + surface normal.

    ``points`` are curve samples in coordinates (assumed ordered); the
    curve is reparametrized by ambient arclength internally.  The normal
    can be passed in coordinates or directly in frame components.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 4:
        raise PreconditionError("need at least 4 curve samples")
    if normal_frame is None:
        if normals is None:
            raise PreconditionError("pass the surface normal along the curve")
        nu = _frame_components(params, pts, np.asarray(normals, dtype=float))
    else:
        nu = np.asarray(normal_frame, dtype=float).copy()
    nu /= np.linalg.norm(nu, axis=1)[:, None]

    # arclength from frame components of the segment increments
    seg = _frame_components(params, 0.5 * (pts[1:] + pts[:-1]),
                            np.diff(pts, axis=0))
    s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(seg, axis=1))])

    def dds(arr):
        return np.gradient(arr, s, axis=0, edge_order=2)

    cprime_coord = dds(pts)
    cp = _frame_components(params, pts, cprime_coord)
    speed = np.linalg.norm(cp, axis=1)
    cp_unit = cp / speed[:, None]

    tau = params.tau
    # covariant acceleration: d/ds of frame components + connection term
    cpp = dds(cp) / speed[:, None]
    acc = cpp + _frame_connection(tau, cp_unit, cp_unit)
    k = np.einsum("ni,ni->n", acc, nu)

    dnu = dds(nu) / speed[:, None]
    cov_nu = dnu + _frame_connection(tau, cp_unit, nu)
    # the orientation flag fixes the conormal side: (c', eta, nu) positive
    # for +1, so a reversed traversal with the same conormal flips the flag
    jc = orientation * _cross(nu, cp_unit)
    t_tor = -np.einsum("ni,ni->n", cov_nu, jc)

    ortho = max(np.max(np.abs(np.einsum("ni,ni->n", cp_unit, nu))),
                np.max(np.abs(np.linalg.norm(nu, axis=1) - 1.0)))
    if ortho > 1e-6:
        raise PreconditionError(f"frame orthonormality violated by {ortho:.2e}")

    return CurveFrameData(t=s, points=pts, tangent=cp_unit, normal=nu,
                          conormal=jc, k=k, t_tor=t_tor, params=params,
                          orientation=orientation)


def vertical_fiber_in_plane(params: ManifoldParams, base_point=(0.0, 0.0),
                            length: float = 1.0, n: int = 201) -> CurveFrameData:
    """Fiber segment inside the vertical plane x = const, parametrized up."""
    x0, y0 = base_point
    z = np.linspace(0.0, length, n)
    pts = np.stack([np.full(n, x0), np.full(n, y0), z], axis=1)
    # the plane {x = x0} has frame-constant normal E1
    nu = np.tile([1.0, 0.0, 0.0], (n, 1))
    return curve_frame_from_samples(params, pts, normal_frame=nu)


def curve_k_t(field: ScalarField, edge_id: int) -> CurveFrameData:
    """Frame data of the boundary curve of a solved graph along one edge."""
    tr = edge_trace(field, edge_id)
    if len(tr.s) < 4:
        raise PreconditionError("edge too short (< 4 samples)")
    nu_frame = _frame_components(field.params, tr.points, tr.nu)
    return curve_frame_from_samples(field.params, tr.points,
                                    normal_frame=nu_frame)


def twist_turn(data: CurveFrameData, kind: str, H: float | None = None) -> float:
    """Total twist of the normal along a vertical or horizontal geodesic.

    Vertical: integral of the torsion plus H times the length (H defaults
    to the ambient bundle curvature).  Horizontal: minus the total turn of
    the partner mirror curve, i.e. the integral of t - H.
    """
    if kind not in ("vertical", "horizontal"):
        raise PreconditionError("kind must be 'vertical' or 'horizontal'")
    if H is None:
        H = data.params.tau
    tor = float(np.trapezoid(data.t_tor, data.t))
    if kind == "vertical":
        return tor + H * data.length
    return tor - H * data.length


def first_period_identity_check(field: ScalarField, edge_id: int):
    """The boundary-period integral computed along two routes.

    Route one integrates the vertical part of the conormal directly;
    route two uses the quarter-turn of the tangent against the tangential
    projection of the vertical field.  Both are returned (they agree to
    discretization error).
    """
    tr = edge_trace(field, edge_id)
    p_direct = tr.integral()

    params = field.params
    nu = _frame_components(params, tr.points, tr.nu)
    nu /= np.linalg.norm(nu, axis=1)[:, None]
    eta = _frame_components(params, tr.points, tr.eta)
    vel = np.gradient(tr.points, tr.s, axis=0, edge_order=2)
    cp = _frame_components(params, tr.points, vel)
    cp /= np.linalg.norm(cp, axis=1)[:, None]
    jc = _cross(nu, cp)
    # one global sign: J c' and the inward conormal agree up to orientation
    if float(np.mean(np.einsum("ni,ni->n", jc, eta))) < 0.0:
        jc = -jc
    xi = np.tile([0.0, 0.0, 1.0], (len(nu), 1))
    t_proj = xi - np.einsum("ni,ni->n", xi, nu)[:, None] * nu
    p_sister = float(np.trapezoid(np.einsum("ni,ni->n", jc, t_proj), tr.s))
    return p_direct, p_sister
