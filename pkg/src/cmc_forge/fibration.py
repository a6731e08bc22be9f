"""Fibered homogeneous 3-manifolds over 2-D space forms.

The family is parametrized by the base curvature ``kappa`` and the bundle
curvature ``tau``.  Two coordinate charts are supported: the rotationally
symmetric chart, whose metric is

    lambda^2 (dx^2 + dy^2) + (dz + tau*lambda*(y dx - x dy))^2,
    lambda = 4 / (4 + kappa*(x^2 + y^2)),

and the Daniel-Hauswirth chart (kappa = 0 only)

    dx^2 + dy^2 + (dz - 2*tau*x dy)^2,

which for tau = 1/2 is the familiar presentation of the Heisenberg group.
The vertical Killing field is xi = d/dz in both charts.

The module provides metric evaluation, horizontal lifts of base loops and
the loop holonomy (vertical displacement of the lift), which equals
2*tau times the enclosed base area.  The sign convention is frozen here:
a counterclockwise loop with tau > 0 lifts to a positive vertical
displacement.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import PreconditionError


class Chart(enum.Enum):
    SYMMETRIC = "symmetric"
    DANIEL_HAUSWIRTH = "daniel_hauswirth"


@dataclass(frozen=True)
class ManifoldParams:
    """Ambient model parameters (base curvature, bundle curvature, chart)."""

    kappa: float
    tau: float
    chart: Chart = Chart.SYMMETRIC

    def __post_init__(self):
        if self.chart is Chart.DANIEL_HAUSWIRTH and self.kappa != 0.0:
            raise PreconditionError(
                "the Daniel-Hauswirth chart is only valid for kappa = 0"
            )

    def conformal_factor(self, x, y):
        """Conformal factor lambda of the base metric at (x, y)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        # kappa = 0 in the Daniel-Hauswirth chart, so the same formula
        # yields the required constant 1 there.
        return 4.0 / (4.0 + self.kappa * (x * x + y * y))

    def connection_coefficients(self, x, y):
        """Coefficients (A1, A2) of the vertical 1-form dz + A1 dx + A2 dy."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.chart is Chart.DANIEL_HAUSWIRTH:
            return np.zeros_like(x * y), -2.0 * self.tau * x
        lam = self.conformal_factor(x, y)
        return self.tau * lam * y, -self.tau * lam * x


def nil_symmetric() -> ManifoldParams:
    """Heisenberg group preset in the symmetric chart."""
    return ManifoldParams(kappa=0.0, tau=0.5, chart=Chart.SYMMETRIC)


def nil_daniel_hauswirth() -> ManifoldParams:
    """Heisenberg group preset in the Daniel-Hauswirth chart."""
    return ManifoldParams(kappa=0.0, tau=0.5, chart=Chart.DANIEL_HAUSWIRTH)


@dataclass(frozen=True)
class FiberedPoint:
    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)


def _point_array(p) -> np.ndarray:
    if isinstance(p, FiberedPoint):
        return p.as_array()
    a = np.asarray(p, dtype=float)
    if a.shape[-1] != 3:
        raise PreconditionError("a fibered point needs 3 coordinates")
    return a


def metric_at(params: ManifoldParams, p) -> np.ndarray:
    """Metric coefficient matrix at a point, in coordinate basis (x, y, z)."""
    a = _point_array(p)
    x, y = a[..., 0], a[..., 1]
    lam = params.conformal_factor(x, y)
    a1, a2 = params.connection_coefficients(x, y)
    omega = np.stack(np.broadcast_arrays(a1, a2, np.ones_like(a1 * 1.0)), axis=-1)
    g = np.einsum("...i,...j->...ij", omega, omega)
    lam2 = np.asarray(lam * lam)
    g[..., 0, 0] += lam2
    g[..., 1, 1] += lam2
    return g


def to_daniel_hauswirth(params: ManifoldParams, p) -> np.ndarray:
    """Chart change symmetric -> Daniel-Hauswirth (kappa = 0 only)."""
    if params.kappa != 0.0:
        raise PreconditionError("chart change requires kappa = 0")
    a = _point_array(p).copy()
    a[..., 2] = a[..., 2] + params.tau * a[..., 0] * a[..., 1]
    return a


def to_symmetric(params: ManifoldParams, p) -> np.ndarray:
    """Chart change Daniel-Hauswirth -> symmetric (kappa = 0 only)."""
    if params.kappa != 0.0:
        raise PreconditionError("chart change requires kappa = 0")
    a = _point_array(p).copy()
    a[..., 2] = a[..., 2] - params.tau * a[..., 0] * a[..., 1]
    return a


@dataclass(frozen=True)
class BaseLoop:
    """Closed sampled curve in the base plane.

    ``samples`` has shape (n, 2) with the first row repeated as the last.
    ``interpolation`` selects how points between samples are understood:
    "linear" for polygonal loops, "cubic" for smooth ones (periodic cubic
    spline through the samples).
    """

    samples: np.ndarray
    interpolation: str = "cubic"

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim != 2 or s.shape[1] != 2:
            raise PreconditionError("loop samples must have shape (n, 2)")
        if s.shape[0] < 9:
            raise PreconditionError("a loop needs at least 8 distinct samples")
        if not np.allclose(s[0], s[-1], atol=1e-12):
            raise PreconditionError("loop must be closed (first sample == last)")
        if self.interpolation not in ("linear", "cubic"):
            raise PreconditionError("interpolation must be 'linear' or 'cubic'")
        object.__setattr__(self, "samples", s)

    @property
    def orientation(self) -> int:
        """+1 for counterclockwise loops (Euclidean signed area), else -1."""
        x, y = self.samples[:, 0], self.samples[:, 1]
        area2 = math.fsum(x[:-1] * y[1:] - x[1:] * y[:-1])
        return 1 if area2 >= 0.0 else -1

    def reversed(self) -> "BaseLoop":
        return BaseLoop(self.samples[::-1].copy(), self.interpolation)

    def dense_polyline(self, refine: int = 1) -> np.ndarray:
        """Polyline representation consistent with the interpolation mode."""
        if self.interpolation == "linear" or refine <= 1:
            return self.samples
        t = _chord_parameter(self.samples)
        spline = CubicSpline(t, self.samples, bc_type="periodic")
        tt = np.linspace(t[0], t[-1], refine * (len(t) - 1) + 1)
        out = spline(tt)
        out[-1] = out[0]
        return out

    @classmethod
    def circle(cls, radius: float = 1.0, center=(0.0, 0.0), n: int = 512,
               ccw: bool = True) -> "BaseLoop":
        th = np.linspace(0.0, 2.0 * np.pi, n + 1)
        if not ccw:
            th = th[::-1]
        pts = np.stack([center[0] + radius * np.cos(th),
                        center[1] + radius * np.sin(th)], axis=1)
        pts[-1] = pts[0]
        return cls(pts, interpolation="cubic")

    @classmethod
    def polygon(cls, vertices, samples_per_edge: int = 64) -> "BaseLoop":
        v = np.asarray(vertices, dtype=float)
        pieces = []
        m = len(v)
        for i in range(m):
            a, b = v[i], v[(i + 1) % m]
            t = np.linspace(0.0, 1.0, samples_per_edge, endpoint=False)
            pieces.append(a[None, :] * (1 - t)[:, None] + b[None, :] * t[:, None])
        pts = np.vstack(pieces + [v[:1]])
        return cls(pts, interpolation="linear")

    @classmethod
    def square(cls, side: float = 1.0, corner=(0.0, 0.0), ccw: bool = True,
               samples_per_edge: int = 64) -> "BaseLoop":
        x0, y0 = corner
        s = side
        verts = [(x0, y0), (x0 + s, y0), (x0 + s, y0 + s), (x0, y0 + s)]
        if not ccw:
            verts = verts[::-1]
        return cls.polygon(verts, samples_per_edge)


def _chord_parameter(samples: np.ndarray) -> np.ndarray:
    seg = np.linalg.norm(np.diff(samples, axis=0), axis=1)
    t = np.concatenate([[0.0], np.cumsum(seg)])
    if t[-1] <= 0.0:
        raise PreconditionError("degenerate loop")
    return t


def _loop_is_simple(samples: np.ndarray) -> bool:
    """Proper-crossing test over all non-adjacent segment pairs."""
    p = samples[:-1]
    d = np.diff(samples, axis=0)
    n = len(p)
    idx = np.arange(n)
    for i in range(n - 2):
        j = idx[i + 2:]
        if i == 0:
            j = j[j != n - 1]  # closing segment is adjacent to the first
        if len(j) == 0:
            continue
        r = d[i]
        q = p[j]
        s = d[j]
        denom = r[0] * s[:, 1] - r[1] * s[:, 0]
        dq = q - p[i]
        t_num = dq[:, 0] * s[:, 1] - dq[:, 1] * s[:, 0]
        u_num = dq[:, 0] * r[1] - dq[:, 1] * r[0]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = t_num / denom
            u = u_num / denom
        eps = 1e-12
        # Non-adjacent segments of a simple loop never meet at all, so
        # endpoint contact also counts as a self-intersection.
        crossing = (np.abs(denom) > eps) & (t >= -1e-9) & (t <= 1 + 1e-9) \
            & (u >= -1e-9) & (u <= 1 + 1e-9)
        if np.any(crossing):
            return False
    return True


def enclosed_area(params: ManifoldParams, loop: BaseLoop, refine: int = 4) -> float:
    """Signed area enclosed by the loop in the base area element.

    Computed as the line integral of f(r^2) (x dy - y dx) with
    f = 2 / (4 + kappa r^2), whose curl is the conformal area density
    lambda^2.  For kappa = 0 this is the Euclidean shoelace rule.
    """
    pts = loop.dense_polyline(refine)
    xm = 0.5 * (pts[:-1, 0] + pts[1:, 0])
    ym = 0.5 * (pts[:-1, 1] + pts[1:, 1])
    dx = np.diff(pts[:, 0])
    dy = np.diff(pts[:, 1])
    f = 2.0 / (4.0 + params.kappa * (xm * xm + ym * ym))
    return math.fsum(f * (xm * dy - ym * dx))


def holonomy(params: ManifoldParams, loop: BaseLoop) -> float:
    """Signed vertical displacement of the horizontal lift of a closed loop.

    Equals 2*tau times the signed enclosed area; positive for a
    counterclockwise loop when tau > 0.  Raises for self-intersecting
    loops, whose signed area is ambiguous.
    """
    if not _loop_is_simple(loop.samples):
        raise PreconditionError("loop is self-intersecting; signed area is ambiguous")
    return 2.0 * params.tau * enclosed_area(params, loop)


def horizontal_lift(params: ManifoldParams, loop: BaseLoop, z0: float = 0.0,
                    tol: float = 1e-8) -> np.ndarray:
    """Horizontal lift of a loop, returned as (n, 3) samples starting at z0.

    Horizontality means dz/dt = -(A1 xdot + A2 ydot) along the curve.  The
    height is advanced with a classical 4th-order one-step rule on a fixed
    subdivision of every sample interval; the subdivision is doubled until
    the end height changes by less than ``tol``.
    """
    s = loop.samples
    t = _chord_parameter(s)
    n_seg = len(t) - 1
    spline = None
    if loop.interpolation == "cubic":
        spline = CubicSpline(t, s, bc_type="periodic")

    def rhs_at(pos, vel):
        a1, a2 = params.connection_coefficients(pos[:, 0], pos[:, 1])
        return -(a1 * vel[:, 0] + a2 * vel[:, 1])

    def segment_increments(per: int) -> np.ndarray:
        # The height ODE has no z-dependence, so the one-step rule reduces
        # to composite Simpson increments; evaluate all stages in a batch.
        # Stage points are kept strictly inside their segment so polygonal
        # loops never sample a velocity across a corner.
        seg = np.repeat(np.arange(n_seg), per)
        w0 = np.tile(np.arange(per), n_seg) / per
        h = np.repeat(np.diff(t) / per, per)

        def stage(frac):
            w = w0 + frac / per
            if spline is not None:
                tt = t[seg] + w * np.diff(t)[seg]
                return rhs_at(spline(tt), spline(tt, 1))
            pos = s[seg] * (1 - w)[:, None] + s[seg + 1] * w[:, None]
            vel = (s[seg + 1] - s[seg]) / np.diff(t)[seg][:, None]
            return rhs_at(pos, vel)

        inc = (h / 6.0) * (stage(0.0) + 4.0 * stage(0.5) + stage(1.0))
        return np.add.reduceat(inc, np.arange(0, n_seg * per, per))

    per = 2
    prev = None
    for _ in range(16):
        inc = segment_increments(per)
        end = math.fsum(inc)
        if prev is not None and abs(end - prev) < tol:
            break
        prev = end
        per *= 2
    z = z0 + np.concatenate([[0.0], np.cumsum(inc)])
    return np.column_stack([s, z])


def lift_displacement(params: ManifoldParams, loop: BaseLoop, tol: float = 1e-8) -> float:
    """End height minus start height of the horizontal lift."""
    lifted = horizontal_lift(params, loop, 0.0, tol)
    return float(lifted[-1, 2] - lifted[0, 2])
