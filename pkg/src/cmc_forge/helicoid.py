"""The horizontal helicoid family in the Heisenberg group.

For pitch alpha > 0 the surface is parametrized in the Daniel-Hauswirth
chart by

    x1 = sinh(alpha*v) / (alpha*(psi'(u) - alpha)) * cos(psi(u))
    x2 = -G(u)
    x3 = -sinh(alpha*v) / (alpha*(psi'(u) - alpha)) * sin(psi(u))

where psi solves psi' = -sqrt(alpha^2 + cos^2 psi), psi(0) = 0, and
G' = 1/(psi' - alpha), G(0) = 0.  Both psi and G are odd and strictly
decreasing.  The first parameter value U > 0 with psi(U) = -pi/2 marks
the vertical rulings; the strip between consecutive rulings has width
a = -2 G(U) and carries the surface as a single-valued graph.

U admits the closed form K(1/sqrt(alpha^2+1)) / sqrt(alpha^2+1) with K
the complete elliptic integral of the first kind, which is evaluated
here by direct quadrature and used to cross-check the integrated tables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .errors import BracketError, PreconditionError


def complete_elliptic_k(k: float) -> float:
    """K(k) = int_0^{pi/2} dtheta / sqrt(1 - k^2 sin^2 theta), k in [0, 1)."""
    if not 0.0 <= k < 1.0:
        raise PreconditionError("elliptic modulus must lie in [0, 1)")
    val, err = quad(lambda th: 1.0 / math.sqrt(1.0 - (k * math.sin(th)) ** 2),
                    0.0, math.pi / 2.0, epsabs=1e-13, epsrel=1e-13, limit=200)
    if err > 1e-10 * max(1.0, abs(val)):
        raise ArithmeticError(f"elliptic quadrature error estimate {err:.2e}")
    return val


def u_of_alpha(alpha: float) -> float:
    """Ruling parameter U(alpha) from the elliptic closed form."""
    if alpha <= 0.0:
        raise PreconditionError("pitch alpha must be positive")
    s = math.sqrt(alpha * alpha + 1.0)
    return complete_elliptic_k(1.0 / s) / s


def _psi_rhs(u, state, alpha):
    psi = state[0]
    dpsi = -math.sqrt(alpha * alpha + math.cos(psi) ** 2)
    return (dpsi, 1.0 / (dpsi - alpha))


def _integrate_tables(alpha: float, u_max: float):
    """Integrate (psi, G) on [0, u_max] with event detection of psi = -pi/2."""

    def hit_ruling(u, state, alpha):
        return state[0] + math.pi / 2.0

    hit_ruling.direction = -1.0

    sol = solve_ivp(_psi_rhs, (0.0, u_max), (0.0, 0.0), args=(alpha,),
                    method="DOP853", rtol=1e-12, atol=1e-12,
                    dense_output=True, events=hit_ruling, max_step=u_max / 50)
    if not sol.success:
        raise ArithmeticError(f"pitch ODE integration failed: {sol.message}")
    if len(sol.t_events[0]) == 0:
        raise PreconditionError("u_max too small: the ruling was not reached")
    return sol, float(sol.t_events[0][0])


@dataclass(frozen=True)
class HelicoidModel:
    """Integrated pitch tables and derived ruling data for one helicoid."""

    alpha: float
    u_max: float
    U: float
    width: float
    u_table: np.ndarray
    psi_table: np.ndarray
    g_table: np.ndarray
    _dense: object = field(repr=False)

    def psi(self, u):
        # psi is odd; the tables cover [0, u_max].
        u = np.asarray(u, dtype=float)
        return np.sign(u) * self._dense.sol(np.abs(u))[0]

    def G(self, u):
        u = np.asarray(u, dtype=float)
        return np.sign(u) * self._dense.sol(np.abs(u))[1]

    def psi_prime(self, u):
        # psi' is even; evaluate through the defining relation for accuracy.
        return -np.sqrt(self.alpha ** 2 + np.cos(self.psi(u)) ** 2)

    def g_prime(self, u):
        return 1.0 / (self.psi_prime(u) - self.alpha)

    def point(self, u, v) -> np.ndarray:
        """Surface point in Daniel-Hauswirth coordinates."""
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        psi = self.psi(u)
        denom = self.alpha * (self.psi_prime(u) - self.alpha)
        radial = np.sinh(self.alpha * v) / denom
        return np.stack(np.broadcast_arrays(
            radial * np.cos(psi), -self.G(u), -radial * np.sin(psi)), axis=-1)

    def u_from_x2(self, x2):
        """Invert x2 = -G(u) on the fundamental strip |x2| < width/2."""
        x2 = np.asarray(x2, dtype=float)
        if np.any(np.abs(x2) >= 0.5 * self.width):
            raise PreconditionError("x2 outside the open fundamental strip")
        u = self._inverse_g(x2)
        # one Newton polish against the integrated tables
        u = u - (self.G(u) + x2) / self.g_prime(u)
        return u

    @property
    def _inverse_g(self):
        spl = getattr(self, "_inv_g_cache", None)
        if spl is None:
            uu = np.linspace(-self.U, self.U, 2001)
            vals = -self.G(uu)  # increasing since G is decreasing
            spl = CubicSpline(vals, uu)
            object.__setattr__(self, "_inv_g_cache", spl)
        return spl

    def graph_height(self, x1, x2):
        """Height x3 = u(x1, x2) of the fundamental piece as a graph.

        With u recovered from x2 alone, the height reduces to
        x3 = -x1 * tan(psi(u)).
        """
        u = self.u_from_x2(x2)
        return -np.asarray(x1, dtype=float) * np.tan(self.psi(u))

    def ruling_parameter(self, v):
        """Ruling coordinate map: v -> height along the x2 = width/2 ruling."""
        return np.sinh(self.alpha * np.asarray(v, dtype=float)) / (2 * self.alpha ** 2)


def build(alpha: float, u_max: float | None = None, table_points: int = 2048) -> HelicoidModel:
    """Integrate the pitch ODEs and assemble a helicoid model.

    ``u_max`` defaults to 3.5 U(alpha) and must be at least 3 U(alpha),
    with U estimated from the elliptic closed form first.
    """
    if alpha <= 0.0:
        raise PreconditionError("pitch alpha must be positive")
    u_elliptic = u_of_alpha(alpha)
    if u_max is None:
        u_max = 3.5 * u_elliptic
    if u_max < 3.0 * u_elliptic:
        raise PreconditionError("u_max must be at least 3 U(alpha)")
    sol, U = _integrate_tables(alpha, u_max)
    u_table = np.linspace(0.0, u_max, table_points)
    psi_vals, g_vals = sol.sol(u_table)
    width = -2.0 * float(sol.sol(U)[1])
    model = HelicoidModel(alpha=alpha, u_max=u_max, U=U, width=width,
                          u_table=u_table, psi_table=psi_vals, g_table=g_vals,
                          _dense=sol)
    return model


def width_of_alpha(alpha: float) -> float:
    """Strip width a(alpha) = -2 G(U(alpha)) without building full tables."""
    if alpha <= 0.0:
        raise PreconditionError("pitch alpha must be positive")
    u_elliptic = u_of_alpha(alpha)
    sol, U = _integrate_tables(alpha, 1.25 * u_elliptic)
    return -2.0 * float(sol.sol(U)[1])


def alpha_for_width(a: float, lo: float = 1e-4, hi: float = 1e4) -> float:
    """Invert the (monotone decreasing) width map to tolerance 1e-8."""
    if a <= 0.0:
        raise PreconditionError("width must be positive")

    def f(alpha):
        return width_of_alpha(alpha) - a

    # log-spaced scan for a sign bracket
    grid = np.geomspace(lo, hi, 25)
    vals = []
    bracket = None
    prev = None
    for g in grid:
        val = f(g)
        vals.append((float(g), float(val)))
        if prev is not None and prev[1] * val <= 0.0:
            bracket = (prev[0], g)
            break
        prev = (g, val)
    if bracket is None:
        raise BracketError(
            f"no width bracket found for a={a} in [{lo}, {hi}]",
            diagnostics={"scan": vals})
    alpha = brentq(f, bracket[0], bracket[1], xtol=1e-12, rtol=8.9e-16)
    if abs(width_of_alpha(alpha) - a) > 1e-8:
        raise ArithmeticError("width inversion did not meet tolerance")
    return float(alpha)


def conormal_height(phi: float, alpha: float) -> float:
    """Height of the horizontal conormal along a vertical ruling.

    The conormal direction at height b encloses the angle phi with the
    strip axis; phi -> pi/2 at the axis level and the height diverges to
    -infinity as phi -> 0.
    """
    if not 0.0 < phi <= math.pi / 2.0:
        raise PreconditionError("phi must lie in (0, pi/2]")
    if alpha <= 0.0:
        raise PreconditionError("pitch alpha must be positive")
    c = math.cos(phi)
    if c == 0.0:
        return 0.0
    return math.sinh(-0.5 * math.log((1.0 + c) / (1.0 - c))) / (2.0 * alpha * alpha)


@dataclass(frozen=True)
class ConormalSample:
    """One conormal direction sample along a vertical ruling."""

    phi: float
    v: float
    height: float


def conormal_samples(alpha: float, phis) -> list[ConormalSample]:
    out = []
    for phi in np.atleast_1d(np.asarray(phis, dtype=float)):
        c = math.cos(float(phi))
        v = -math.atanh(c) / alpha
        out.append(ConormalSample(float(phi), v, conormal_height(float(phi), alpha)))
    return out
