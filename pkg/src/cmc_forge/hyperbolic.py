"""Upper half-plane toolkit.

Curves here are reconstructed from twist data measured along vertical
geodesics of the Heisenberg group: given a monotone twist angle alpha(t),
the frame angle theta of the mirror curve relative to a horocycle
foliation solves

    theta' = alpha'(t) + cos(theta) - 1,     theta(0) = 0,

and the curve itself follows the foliation frame e1 = y d/dx,
e2 = -y d/dy:

    x' = y cos(theta),   y' = -y sin(theta),   (x, y)(0) = (0, 1).

Its geodesic curvature with respect to the frame normal
n = y (sin(theta), cos(theta)) is cos(theta) - theta' = 1 - alpha'(t).

The module also carries the scalar functions of the second period
problem: f_phi(b) = tan((phi-b)/2) - b e^b and its unique zero b0(phi),
plus geodesic intersection and Gauss-Bonnet area helpers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import PchipInterpolator

from .errors import PreconditionError


@dataclass(frozen=True)
class TwistProfile:
    """Monotone twist angle sampled along a vertical geodesic.

    ``t`` are arclength samples on [0, b]; ``alpha`` the twist angle with
    alpha(0) = 0 and alpha strictly increasing.
    """

    t: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        a = np.asarray(self.alpha, dtype=float)
        if t.ndim != 1 or t.shape != a.shape or len(t) < 2:
            raise PreconditionError("profile needs matching 1-D t/alpha samples")
        if t[0] != 0.0 or a[0] != 0.0:
            raise PreconditionError("profile must start at t = 0, alpha = 0")
        if np.any(np.diff(t) <= 0):
            raise PreconditionError("profile t samples must increase")
        if np.any(np.diff(a) <= 0):
            raise PreconditionError("twist angle must be strictly increasing")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "alpha", a)

    @property
    def length(self) -> float:
        return float(self.t[-1])

    @property
    def total(self) -> float:
        return float(self.alpha[-1])

    @property
    def _interp(self):
        spl = getattr(self, "_pchip_cache", None)
        if spl is None:
            spl = PchipInterpolator(self.t, self.alpha)
            object.__setattr__(self, "_pchip_cache", spl)
        return spl

    def alpha_at(self, t):
        return self._interp(np.clip(t, 0.0, self.length))

    def alpha_prime(self, t):
        return self._interp.derivative()(np.clip(t, 0.0, self.length))

    @classmethod
    def linear(cls, b: float, total: float, n: int = 33) -> "TwistProfile":
        t = np.linspace(0.0, b, n)
        return cls(t, total / b * t)


@dataclass(frozen=True)
class HGeodesic:
    """Complete geodesic: a vertical line or a semicircle on the axis."""

    kind: str  # "vertical" | "semicircle"
    x0: float = 0.0
    center: float = 0.0
    radius: float = 0.0
    orientation: int = 1

    def __post_init__(self):
        if self.kind not in ("vertical", "semicircle"):
            raise PreconditionError("kind must be 'vertical' or 'semicircle'")
        if self.kind == "semicircle" and self.radius <= 0.0:
            raise PreconditionError("semicircle radius must be positive")

    @classmethod
    def vertical(cls, x0: float, orientation: int = 1) -> "HGeodesic":
        return cls("vertical", x0=x0, orientation=orientation)

    @classmethod
    def semicircle(cls, center: float, radius: float, orientation: int = 1) -> "HGeodesic":
        return cls("semicircle", center=center, radius=radius, orientation=orientation)

    def feet(self):
        if self.kind == "vertical":
            return (self.x0,)
        return (self.center - self.radius, self.center + self.radius)


@dataclass(frozen=True)
class HCurve:
    """Arclength-sampled curve in the upper half-plane with frame angle."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    theta: np.ndarray
    curvature: np.ndarray  # cos(theta) - theta' along the samples

    def __post_init__(self):
        if np.any(np.asarray(self.y) <= 0.0):
            raise PreconditionError("curve must stay in the open upper half-plane")

    @property
    def points(self) -> np.ndarray:
        return np.stack([self.x, self.y], axis=1)

    def endpoint(self):
        return float(self.x[-1]), float(self.y[-1])

    def hyperbolic_speed(self) -> np.ndarray:
        """Finite-difference speed |c'|/y; should be 1 for arclength curves."""
        dx = np.gradient(self.x, self.t, edge_order=2)
        dy = np.gradient(self.y, self.t, edge_order=2)
        return np.hypot(dx, dy) / self.y

    def geodesic_curvature_fd(self) -> np.ndarray:
        """Geodesic curvature from samples only (Christoffel correction).

        Independent of the frame angle; used to cross-check the
        cos(theta) - theta' values stored in ``curvature``.
        """
        dx = np.gradient(self.x, self.t, edge_order=2)
        dy = np.gradient(self.y, self.t, edge_order=2)
        ddx = np.gradient(dx, self.t, edge_order=2)
        ddy = np.gradient(dy, self.t, edge_order=2)
        y = self.y
        acc_x = ddx - 2.0 * dx * dy / y
        acc_y = ddy + (dx * dx - dy * dy) / y
        nx = y * np.sin(self.theta)
        ny = y * np.cos(self.theta)
        return (acc_x * nx + acc_y * ny) / (y * y)


def theta_from_twist(profile: TwistProfile, rtol: float = 1e-10,
                     atol: float = 1e-12) -> np.ndarray:
    """Integrate the frame angle ODE; returns theta at the profile samples."""
    aprime = profile.alpha_prime

    def rhs(t, th):
        return aprime(t) + math.cos(th[0]) - 1.0

    sol = solve_ivp(rhs, (0.0, profile.length), (0.0,), method="DOP853",
                    rtol=rtol, atol=atol, dense_output=True)
    if not sol.success:
        raise ArithmeticError(f"frame angle integration failed: {sol.message}")
    theta = sol.sol(profile.t)[0]
    alpha = profile.alpha
    if np.any(theta > alpha + 1e-9):
        raise ArithmeticError("frame angle exceeded the twist angle")
    return theta


def reconstruct_curve(profile: TwistProfile, samples: int = 801,
                      rtol: float = 1e-10, atol: float = 1e-12) -> HCurve:
    """Rebuild the mirror curve from its twist profile.

    Starts at (0, 1) with unit hyperbolic speed; the joint system for
    (theta, x, y) is integrated to the requested tolerance and resampled
    uniformly.
    """
    aprime = profile.alpha_prime

    def rhs(t, state):
        th, x, y = state
        return (aprime(t) + math.cos(th) - 1.0, y * math.cos(th), -y * math.sin(th))

    sol = solve_ivp(rhs, (0.0, profile.length), (0.0, 0.0, 1.0), method="DOP853",
                    rtol=rtol, atol=atol, dense_output=True)
    if not sol.success:
        raise ArithmeticError(f"curve reconstruction failed: {sol.message}")
    t = np.linspace(0.0, profile.length, samples)
    theta, x, y = sol.sol(t)
    curvature = np.cos(theta) - (aprime(t) + np.cos(theta) - 1.0)
    return HCurve(t=t, x=x, y=y, theta=theta, curvature=curvature)


def frame_normal(curve: HCurve, i: int = -1) -> np.ndarray:
    """Euclidean direction of the foliation normal at sample ``i``."""
    th = float(curve.theta[i])
    return np.array([math.sin(th), math.cos(th)])


def geodesic_from(p, direction) -> HGeodesic:
    """Unique complete geodesic through p tangent to a Euclidean direction."""
    x, y = float(p[0]), float(p[1])
    if y <= 0.0:
        raise PreconditionError("point must lie in the upper half-plane")
    dx, dy = float(direction[0]), float(direction[1])
    norm = math.hypot(dx, dy)
    if norm == 0.0:
        raise PreconditionError("direction must be nonzero")
    dx, dy = dx / norm, dy / norm
    if abs(dx) < 1e-14:
        return HGeodesic.vertical(x, orientation=1 if dy > 0 else -1)
    center = x + y * dy / dx
    radius = math.hypot(x - center, y)
    return HGeodesic.semicircle(center, radius, orientation=1 if dx > 0 else -1)


def intersect(g1: HGeodesic, g2: HGeodesic):
    """Intersection of two complete geodesics in the open half-plane.

    Returns (point, angle) with the unsigned acute angle between the
    tangents, or None when the geodesics do not meet (including ideal
    tangency on the boundary).  Coincident geodesics raise.
    """
    if g1.kind == "vertical" and g2.kind == "vertical":
        if abs(g1.x0 - g2.x0) < 1e-14:
            raise PreconditionError("coincident geodesics")
        return None
    if g1.kind == "vertical" or g2.kind == "vertical":
        v, c = (g1, g2) if g1.kind == "vertical" else (g2, g1)
        dx = v.x0 - c.center
        if abs(dx) >= c.radius:
            return None
        y = math.sqrt(c.radius ** 2 - dx * dx)
        # tangents (0, 1) and (-y, x - c)/r have dot product (x - c)/r
        cosang = abs(dx) / c.radius
        ang = math.acos(min(1.0, cosang))
        return np.array([v.x0, y]), min(ang, math.pi - ang)
    if abs(g1.center - g2.center) < 1e-14 and abs(g1.radius - g2.radius) < 1e-14:
        raise PreconditionError("coincident geodesics")
    d = g2.center - g1.center
    if abs(d) < 1e-14:
        return None  # concentric
    xx = (g1.radius ** 2 - g2.radius ** 2 + g2.center ** 2 - g1.center ** 2) / (2 * d)
    y2 = g1.radius ** 2 - (xx - g1.center) ** 2
    if y2 <= 0.0:
        return None
    y = math.sqrt(y2)
    t1 = np.array([-y, xx - g1.center]) / g1.radius
    t2 = np.array([-y, xx - g2.center]) / g2.radius
    cosang = abs(float(t1 @ t2))
    ang = math.acos(min(1.0, cosang))
    return np.array([xx, y]), min(ang, math.pi - ang)


def geodesic_arc(g: HGeodesic, p_start, p_end, n: int = 513) -> HCurve:
    """Sampled arc of a geodesic between two of its points (k_g = 0)."""
    p0 = np.asarray(p_start, dtype=float)
    p1 = np.asarray(p_end, dtype=float)
    if g.kind == "vertical":
        y = np.geomspace(p0[1], p1[1], n)
        x = np.full(n, g.x0)
        theta = np.zeros(n)
        t = np.abs(np.log(y / p0[1]))
    else:
        s0 = math.atan2(p0[1], p0[0] - g.center)
        s1 = math.atan2(p1[1], p1[0] - g.center)
        ss = np.linspace(s0, s1, n)
        x = g.center + g.radius * np.cos(ss)
        y = g.radius * np.sin(ss)
        theta = np.zeros(n)
        # hyperbolic arclength along a semicircle: d t = d sigma / sin sigma
        t = np.abs(np.log(np.tan(ss / 2) / math.tan(s0 / 2)))
    return HCurve(t=t, x=x, y=y, theta=theta, curvature=np.zeros(n))


def arc_area_integral(arc) -> float:
    """Contribution of one boundary arc to the area form integral dx / y."""
    if isinstance(arc, HGeodesic):
        raise PreconditionError("pass sampled arcs, not complete geodesics")
    x = np.asarray(arc.x, dtype=float)
    y = np.asarray(arc.y, dtype=float)
    return float(np.sum(0.5 * (1.0 / y[1:] + 1.0 / y[:-1]) * np.diff(x)))


def region_area(arcs) -> float:
    """Hyperbolic area enclosed by a closed chain of sampled arcs.

    Uses area = closed integral of dx / y over the boundary traversed
    counterclockwise (region on the left).
    """
    _validate_closure(arcs)
    return math.fsum(arc_area_integral(a) for a in arcs)


def _validate_closure(arcs, tol: float = 1e-6):
    if len(arcs) < 2:
        raise PreconditionError("need at least two arcs")
    for a, b in zip(arcs, list(arcs[1:]) + [arcs[0]]):
        pa = np.array([a.x[-1], a.y[-1]])
        pb = np.array([b.x[0], b.y[0]])
        if np.linalg.norm(pa - pb) > tol:
            raise PreconditionError(
                f"boundary does not close: gap {np.linalg.norm(pa - pb):.2e}")


def gauss_bonnet_area(arcs, exterior_angles, kg_integrals=None) -> float:
    """Area of the disc-type region bounded by the given arcs.

    With curvature -1 the Gauss-Bonnet identity for a disc gives
    area = sum(exterior angles) + boundary integral of k_g - 2 pi, the
    geodesic curvature taken with respect to the inner normal.  Geodesic
    arcs contribute zero; for curve arcs pass the signed integral of k_g
    through ``kg_integrals`` (same length as ``arcs``, None entries mean
    zero).
    """
    _validate_closure(arcs)
    total_kg = 0.0
    if kg_integrals is not None:
        total_kg = math.fsum(v for v in kg_integrals if v is not None)
    return math.fsum(exterior_angles) + total_kg - 2.0 * math.pi


def f_phi(phi: float, b: float) -> float:
    """Intersection criterion function tan((phi-b)/2) - b e^b."""
    if not 0.0 < b < phi < math.pi / 2:
        raise PreconditionError("need 0 < b < phi < pi/2")
    s = phi - b
    return (1.0 - math.cos(s)) / math.sin(s) - b * math.exp(b)


def b0_of_phi(phi: float, tol: float = 1e-10) -> float:
    """Unique zero of f_phi on (0, phi), located by bisection."""
    if not 0.0 < phi < math.pi / 2:
        raise PreconditionError("phi must lie in (0, pi/2)")
    lo, hi = 1e-15, phi - 1e-15
    flo = (1.0 - math.cos(phi - lo)) / math.sin(phi - lo) - lo * math.exp(lo)
    fhi = (1.0 - math.cos(phi - hi)) / math.sin(phi - hi) - hi * math.exp(hi)
    if flo <= 0.0 or fhi >= 0.0:
        raise ArithmeticError("sign pattern of f_phi violated")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        s = phi - mid
        fm = (1.0 - math.cos(s)) / math.sin(s) - mid * math.exp(mid)
        if fm > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def b0_prime(phi: float) -> float:
    """Derivative of b0 along phi from the implicit function theorem.

    With g(s) = (1 - cos s)/sin s, the zero b0(phi) of f_phi satisfies
    b0' = g'(phi - b0) / (g'(phi - b0) + e^{b0} (1 + b0)), which lies in
    (0, 1); in particular b0 increases.
    """
    b0 = b0_of_phi(phi)
    s = phi - b0
    gp = (1.0 - math.cos(s)) / math.sin(s) ** 2
    return gp / (gp + math.exp(b0) * (1.0 + b0))
