"""Construction driver: contours, period solves, and assembled reports.

The fundamental contour is a six-vertex geodesic polygon: a horizontal
edge of length ``a`` and one of length ``n`` spanning a hinge of angle
``phi`` in the base, closed up by three vertical segments (lengths b,
n^2 and the holonomy-determined gap).  The ray through the hinge corner
is placed along the +x axis with the hinge opening below it, which makes
the vertical gap equal b + n^2 - area of the hinge triangle under the
frozen orientation convention of :mod:`cmc_forge.fibration`.

The first period is the integral of the vertical conormal component
along the a-edge of the solved graph; it is positive for small b,
decreases, and crosses zero at the reported root.  The second period is
the intersection angle of the two vertical mirror planes of the partner
surface, evaluated from the twist profile extracted at the hinge corner
and reproduced both as a direct geodesic intersection angle and through
the area balance phi - b - area(V).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BracketError, PreconditionError, SolverError
from .fibration import ManifoldParams, nil_symmetric
from .helicoid import alpha_for_width, conormal_height
from .hyperbolic import (
    HGeodesic,
    TwistProfile,
    b0_of_phi,
    geodesic_arc,
    geodesic_from,
    intersect,
    reconstruct_curve,
    region_area,
)
from . import hyperbolic as _hyp
from .mc_graph import (
    AffineFrame,
    GraphDomain,
    ScalarField,
    corner_twist_profile,
    edge_trace,
    residual,
    solve,
)


@dataclass(frozen=True)
class ContourSpec:
    """Parameters of the truncated boundary polygon."""

    a: float
    b: float
    phi: float
    n: float

    def __post_init__(self):
        if self.a <= 0.0:
            raise PreconditionError("edge length a must be positive")
        if self.b < 0.0:
            raise PreconditionError("vertical edge length b must be >= 0")
        # the contour exists for any hinge angle below pi; the first-period
        # solve separately restricts to (0, pi/2), where its barrier works
        if not 0.0 < self.phi < math.pi:
            raise PreconditionError("hinge angle must lie in (0, pi)")
        if self.n <= 0.0:
            raise PreconditionError("truncation parameter n must be positive")
        if self.gap <= 0.0:
            raise PreconditionError(
                f"truncation too small: closing gap {self.gap:.3f} <= 0")

    @property
    def area(self) -> float:
        """Base area of the hinge triangle."""
        return 0.5 * self.a * self.n * math.sin(self.phi)

    @property
    def rows(self) -> float:
        """Work-triangle height: near-isotropic cells, integer slope.

        An integer height puts every lattice node of the slanted far edge
        exactly on the edge, so its Dirichlet data needs no off-edge
        extension; the residual anisotropy is at most a factor of two.
        The cap keeps extreme hinge proportions (tiny necks) tractable.
        """
        return float(min(12, max(1, round(self.n * math.sin(self.phi) / self.a))))

    @property
    def gap(self) -> float:
        """Length of the closing vertical edge: b + n^2 - area."""
        return self.b + self.n ** 2 - self.area

    def with_b(self, b: float) -> "ContourSpec":
        return ContourSpec(self.a, b, self.phi, self.n)

    def with_n(self, n: float) -> "ContourSpec":
        return ContourSpec(self.a, self.b, self.phi, n)


@dataclass
class Contour:
    """Realized contour: vertices, base polygon, and graph boundary data."""

    spec: ContourSpec
    vertices: np.ndarray          # (6, 3): p1 .. p6
    frame: AffineFrame
    edge_data: list
    vertical_vertices: tuple
    work_polygon: list

    @property
    def base_triangle(self) -> np.ndarray:
        return self.frame.to_base(np.asarray(self.work_polygon))


def build_contour(spec: ContourSpec) -> Contour:
    """Six contour vertices and the work-triangle boundary data.

    Heights follow the horizontal lifts: rays through the corner lift
    flat, and the far edge descends by the hinge area, so the closing
    vertical edge has the stated gap length.
    """
    a, b, phi, n = spec.a, spec.b, spec.phi, spec.n
    area = spec.area
    rows = spec.rows
    frame = AffineFrame.hinge(a, n, phi, lower=True, rows=rows)
    p1h = np.array([0.0, 0.0])
    p3h = np.array([a, 0.0])
    p6h = np.array([n * math.cos(phi), -n * math.sin(phi)])
    wall = n * n
    vertices = np.array([
        [p1h[0], p1h[1], 0.0],
        [p1h[0], p1h[1], b],
        [p3h[0], p3h[1], b],
        [p3h[0], p3h[1], b + wall],
        [p6h[0], p6h[1], b + wall - area],
        [p6h[0], p6h[1], 0.0],
    ])

    def edge_a(x, y):
        return np.full_like(np.asarray(x, dtype=float), b)

    def edge_far(x, y):
        return (b + wall) - area * np.asarray(y, dtype=float) / rows

    def edge_n(x, y):
        return np.zeros_like(np.asarray(x, dtype=float))

    vertical = (0, 1, 2) if b > 0.0 else (1, 2)
    return Contour(spec=spec, vertices=vertices, frame=frame,
                   edge_data=[edge_a, edge_far, edge_n],
                   vertical_vertices=vertical,
                   work_polygon=[(0.0, 0.0), (1.0, 0.0), (0.0, rows)])


@dataclass
class PipelineConfig:
    """Numerical knobs for the period pipeline."""

    grid_n: int = 128              # work-grid resolution at n = n0
    n0: float = 3.0                # starting truncation
    n_max: float = 3.0             # single truncation by default; raising it
                                   # enables the continuation ladder, whose
                                   # steeper walls also need a finer grid
    n_stab_tol: float = 2.5e-4     # truncation continuation stop
    newton_tol: float = 1e-8
    max_iter: int = 200
    period_tol: float = 1e-4       # |p| at the first-period root
    angle_tol: float = 1e-4        # |A - pi/k| at the second-period root
    gb_tol: float = 1e-4           # Gauss-Bonnet vs direct angle agreement
    profile_heights: int = 25
    a_ref: float = 1.0             # reference neck for the angular period
    params: ManifoldParams = field(default_factory=nil_symmetric)

    def grid_for(self, n: float) -> int:
        # the chart keeps cells isotropic for every n, so the work
        # resolution is n-independent (row count grows with the height)
        return int(self.grid_n)


class _DomainCache:
    """Grid and warm-start reuse across b-sweeps.

    The mask depends on (a, phi, n) only, so sweeping the vertical edge
    length b revisits identical grids; the last solved values on each
    grid double as the next Newton seed.
    """

    def __init__(self):
        self._store = {}
        self.seeds = {}

    def key(self, spec: ContourSpec, grid: int):
        return (round(spec.a, 12), round(spec.phi, 12), round(spec.n, 12),
                int(grid))

    def domain(self, spec: ContourSpec, grid: int) -> GraphDomain:
        key = self.key(spec, grid)
        contour = build_contour(spec)
        if key not in self._store:
            self._store[key] = GraphDomain(
                contour.work_polygon, 1.0 / int(grid), contour.edge_data,
                frame=contour.frame,
                vertical_vertices=contour.vertical_vertices)
        return self._store[key].with_data(
            contour.edge_data, vertical_vertices=contour.vertical_vertices)


@dataclass
class PeriodEvaluation:
    """One solved truncation with its trace and diagnostics.

    ``p`` is the two-grid extrapolated period (the raw pair is kept in
    ``p_fine``/``p_coarse``): the boundary fan corners slow the pointwise
    convergence of the trace to first order with a clean constant, which
    one Richardson step removes.
    """

    spec: ContourSpec
    field: ScalarField
    p: float
    n_used: float
    h_used: float
    residual_norm: float
    history: list
    p_fine: float = 0.0
    p_coarse: float = 0.0


def solve_truncated(spec: ContourSpec, config: PipelineConfig | None = None,
                    cache: _DomainCache | None = None,
                    seed=None) -> PeriodEvaluation:
    """Solve the graph over the hinge triangle with truncation continuation.

    The truncation parameter n is raised (and the grid refined with it)
    until the period integral changes by less than ``n_stab_tol``.
    """
    config = config or PipelineConfig()
    cache = cache or _DomainCache()
    n = spec.n
    prev_p = None
    prev_field = None
    history = []

    def solve_grid(sp, grid, guess):
        dom = cache.domain(sp, grid)
        key = cache.key(sp, grid)
        if guess is None:
            guess = cache.seeds.get(key, "mean")
        f = solve(dom, config.params, 0.0,
                  {"tol": config.newton_tol, "max_iter": config.max_iter,
                   "seed": guess})
        cache.seeds[key] = f.values
        return f

    while True:
        sp = spec.with_n(n)
        grid = config.grid_for(n)
        if prev_field is not None:
            dom = cache.domain(sp, grid)
            vals = prev_field.domain.interpolate(prev_field.values,
                                                 dom.node_work)
            vals[~np.isfinite(vals)] = float(np.mean(dom.boundary_values))
            guess = vals
        else:
            guess = seed
        f = solve_grid(sp, grid, guess)
        p_fine = edge_trace(f, 0).integral()
        # companion coarse solve for the two-grid extrapolation, seeded by
        # restriction of the fine solution
        coarse_grid = max(24, grid // 2)
        dom_c = cache.domain(sp, coarse_grid)
        seed_c = f.domain.interpolate(f.values, dom_c.node_work)
        seed_c[~np.isfinite(seed_c)] = float(np.mean(dom_c.boundary_values))
        f_c = solve_grid(sp, coarse_grid, seed_c)
        p_coarse = edge_trace(f_c, 0).integral()
        p = 2.0 * p_fine - p_coarse
        history.append((n, p))
        if prev_p is not None and abs(p - prev_p) < config.n_stab_tol:
            break
        if n >= config.n_max:
            break
        prev_p, prev_field = p, f
        n = n + 1.0
    res = float(np.max(np.abs(residual(f))))
    return PeriodEvaluation(spec=sp, field=f, p=p, n_used=n,
                            h_used=1.0 / grid, residual_norm=res,
                            history=history, p_fine=p_fine, p_coarse=p_coarse)


def first_period(spec: ContourSpec, config: PipelineConfig | None = None,
                 cache: _DomainCache | None = None) -> float:
    """Vertical-conormal period along the a-edge at stabilized truncation."""
    return solve_truncated(spec, config, cache).p


@dataclass
class FirstPeriodSolution:
    a: float
    phi: float
    b: float
    p: float
    scan: list
    bracket: tuple
    n_used: float
    h_used: float


def _coarse(config: PipelineConfig) -> PipelineConfig:
    """Copy of the configuration with the truncation ladder disabled."""
    import copy

    out = copy.copy(config)
    out.n_max = config.n0
    return out


def _illinois(f, lo, hi, f_lo, f_hi, tol_f: float, max_iter: int = 40):
    """Bracketed secant iteration (Illinois variant) to |f| < tol_f."""
    side = 0
    x, fx = hi, f_hi
    for _ in range(max_iter):
        x = hi - f_hi * (hi - lo) / (f_hi - f_lo)
        x = min(max(x, lo + 0.05 * (hi - lo)), hi - 0.05 * (hi - lo))
        fx = f(x)
        if abs(fx) < tol_f:
            return x, fx
        if (fx > 0.0) == (f_lo > 0.0):
            lo, f_lo = x, fx
            if side == -1:
                f_hi *= 0.5
            side = -1
        else:
            hi, f_hi = x, fx
            if side == 1:
                f_lo *= 0.5
            side = 1
    raise SolverError("bracketed secant iteration did not converge",
                      {"last": (x, fx)})


def solve_first_period(a: float, phi: float,
                       config: PipelineConfig | None = None) -> FirstPeriodSolution:
    """Root of p(b) inside a scanned sign bracket.

    The initial scan runs from 1e-3 up to twice the conormal height of
    the width-matched helicoid; when the sign change lies above that
    barrier-motivated guess the upper end is extended geometrically
    before giving up.  The root is located with cheap single-truncation
    evaluations and polished at the full truncation ladder.
    """
    if a <= 0.0 or not 0.0 < phi < math.pi / 2:
        raise PreconditionError("need a > 0 and phi in (0, pi/2)")
    config = config or PipelineConfig()
    coarse = _coarse(config)
    cache = _DomainCache()
    scan = []

    def p_coarse(b):
        val = solve_truncated(ContourSpec(a, b, phi, config.n0), coarse, cache).p
        scan.append((b, val))
        return val

    alpha = alpha_for_width(a * math.sin(phi))
    b_lo = 1e-3
    b_hi = 2.0 * abs(conormal_height(phi, alpha))
    p_lo = p_coarse(b_lo)
    if p_lo <= 0.0:
        raise BracketError("period is not positive at the small-b end",
                           {"scan": scan})
    p_hi = p_coarse(b_hi)
    extensions = 0
    while p_hi > 0.0 and extensions < 4:
        b_hi *= 1.6
        p_hi = p_coarse(b_hi)
        extensions += 1
    if p_hi > 0.0:
        raise BracketError(
            f"no sign change of p in [{b_lo}, {b_hi}]", {"scan": scan})

    b_root, _ = _illinois(p_coarse, b_lo, b_hi, p_lo, p_hi,
                          0.5 * config.period_tol)

    # polish against the stabilized-truncation period
    slope = (scan[-1][1] - scan[-2][1]) / (scan[-1][0] - scan[-2][0]) \
        if scan[-1][0] != scan[-2][0] else -0.5
    ev = solve_truncated(ContourSpec(a, b_root, phi, config.n0), config, cache)
    for _ in range(6):
        if abs(ev.p) < config.period_tol:
            break
        b_root = b_root - ev.p / slope
        ev_new = solve_truncated(ContourSpec(a, b_root, phi, config.n0),
                                 config, cache)
        if ev_new.spec.b != ev.spec.b:
            slope = (ev_new.p - ev.p) / (ev_new.spec.b - ev.spec.b)
        ev = ev_new
        scan.append((b_root, ev.p))
    else:
        raise SolverError("first-period polish did not converge",
                          {"scan": scan})
    return FirstPeriodSolution(a=a, phi=phi, b=b_root, p=ev.p, scan=scan,
                               bracket=(b_lo, b_hi), n_used=ev.n_used,
                               h_used=ev.h_used)


def extract_twist_profile(ev: PeriodEvaluation,
                          config: PipelineConfig | None = None) -> TwistProfile:
    """Twist profile over the hinge corner of a solved truncation."""
    config = config or PipelineConfig()
    b = ev.spec.b
    if b <= 0.0:
        raise PreconditionError("the contour has no vertical edge at the corner")
    frac = np.linspace(0.04, 0.96, config.profile_heights)
    heights = frac * b
    return corner_twist_profile(ev.field, 0, heights)


@dataclass
class AngularPeriod:
    angle: float           # direct intersection angle of the mirror planes
    angle_gb: float        # phi - b - area(V)
    area_v: float
    meeting_point: tuple
    curve: object


def angular_period(profile: TwistProfile,
                   config: PipelineConfig | None = None) -> AngularPeriod:
    """Intersection angle of the two vertical mirror planes.

    Computed directly from the reconstructed mirror curve's endpoint
    geodesics and cross-checked against the area balance
    phi - b - area(V); disagreement beyond ``gb_tol`` raises.
    """
    config = config or PipelineConfig()
    b = profile.length
    phi = profile.total
    curve = reconstruct_curve(profile)
    g0 = HGeodesic.vertical(0.0)
    n_end = _hyp.frame_normal(curve, -1)
    gb = geodesic_from(curve.endpoint(), -n_end)
    res = intersect(g0, gb)
    if res is None:
        b0 = b0_of_phi(phi)
        raise SolverError(
            f"mirror-plane geodesics do not intersect: b = {b:.6f} is not "
            f"below the threshold b0({phi:.6f}) = {b0:.6f}",
            {"b": b, "phi": phi, "b0": b0})
    q, angle = res
    arc_b = geodesic_arc(gb, curve.endpoint(), q)
    arc_0 = geodesic_arc(g0, q, (0.0, 1.0))
    # the chain curve -> gamma_b -> gamma_0 runs clockwise around V
    area_v = -region_area([curve, arc_b, arc_0])
    angle_gb = phi - b - area_v
    if abs(angle_gb - angle) > config.gb_tol:
        raise SolverError(
            "area-balance angle disagrees with the direct intersection "
            f"angle: {angle_gb:.6e} vs {angle:.6e}",
            {"angle": angle, "angle_gb": angle_gb})
    return AngularPeriod(angle=angle, angle_gb=angle_gb, area_v=area_v,
                         meeting_point=(float(q[0]), float(q[1])), curve=curve)


def angular_period_of_b(b: float, phi: float,
                        config: PipelineConfig | None = None,
                        cache: _DomainCache | None = None,
                        a: float | None = None) -> AngularPeriod:
    """Angular period of the solved surface at (a_ref, b, phi)."""
    config = config or PipelineConfig()
    a = a if a is not None else config.a_ref
    ev = solve_truncated(ContourSpec(a, b, phi, config.n0), config,
                         cache or _DomainCache())
    profile = extract_twist_profile(ev, config)
    return angular_period(profile, config)


@dataclass
class SecondPeriodSolution:
    k: int
    phi: float
    b: float
    angle: float
    area_v: float
    b0: float
    endpoint_signs: tuple
    visited: list


def solve_second_period(k: int, config: PipelineConfig | None = None,
                        a: float | None = None,
                        b_hint: float | None = None) -> SecondPeriodSolution:
    """Choose phi_k and solve the angular period A(b) = pi/k.

    phi_k = pi/k + b0(pi/k) per the existence argument; the bracket stays
    inside (0.02, 0.98) of the intersection threshold b0(phi_k), and the
    endpoint signs are certified before the bracketed secant iteration.
    With ``b_hint`` the bracketing stage is skipped and the root is
    polished locally (used when re-solving at an adjusted neck).
    """
    if k < 3:
        raise PreconditionError("the construction needs k >= 3")
    config = config or PipelineConfig()
    coarse = _coarse(config)
    target = math.pi / k
    phi_k = target + b0_of_phi(target)
    if phi_k >= math.pi / 2:
        raise PreconditionError("phi_k left the admissible hinge range")
    b0k = b0_of_phi(phi_k)
    cache = _DomainCache()
    visited = []
    last = {}

    def A_res(b, cfg):
        ap = angular_period_of_b(b, phi_k, cfg, cache, a=a)
        visited.append((b, ap.angle))
        last["ap"] = ap
        return ap.angle - target

    signs = (math.nan, math.nan)
    if b_hint is None:
        lo, hi = 0.02 * b0k, 0.98 * b0k
        r_lo = A_res(lo, coarse)
        a_lo = last["ap"]
        r_hi = A_res(hi, coarse)
        a_hi = last["ap"]
        signs = (r_lo, r_hi)
        if not (signs[0] > 0.0 > signs[1]):
            raise BracketError(
                f"angular period endpoints do not bracket pi/{k}: "
                f"A({lo:.4f}) = {a_lo.angle:.6f}, A({hi:.4f}) = {a_hi.angle:.6f}",
                {"visited": visited})
        b_star, _ = _illinois(lambda b: A_res(b, coarse), lo, hi, r_lo, r_hi,
                              0.5 * config.angle_tol)
    else:
        b_star = float(b_hint)
        # a second nearby point primes the secant slope
        A_res(b_star * 1.02, coarse)

    # polish against the stabilized truncation
    res = A_res(b_star, config)
    v = visited
    for _ in range(8):
        if abs(res) < config.angle_tol:
            break
        slope = (v[-1][1] - v[-2][1]) / (v[-1][0] - v[-2][0]) \
            if v[-1][0] != v[-2][0] else -1.0
        b_star = b_star - res / slope
        res = A_res(b_star, config)
    else:
        raise SolverError("second-period polish did not converge",
                          {"visited": visited})
    ap = last["ap"]
    return SecondPeriodSolution(k=k, phi=phi_k, b=b_star, angle=ap.angle,
                                area_v=ap.area_v, b0=b0k,
                                endpoint_signs=signs, visited=visited)


def solve_neck_for(b: float, phi: float,
                   config: PipelineConfig | None = None) -> tuple:
    """Neck length a with vanishing first period at fixed (b, phi).

    p increases with a here (small necks sit below the first-period root,
    large necks above), so a geometric scan brackets the root.
    """
    config = config or PipelineConfig()
    coarse = _coarse(config)
    cache = _DomainCache()
    scan = []

    def p_of(a, cfg):
        val = solve_truncated(ContourSpec(a, b, phi, config.n0), cfg, cache).p
        scan.append((a, val))
        return val

    # scan downward so extreme slivers at tiny necks are touched only when
    # the sign change actually lives there
    grid = config.a_ref * np.geomspace(4.0, 0.05, 12)
    bracket = None
    prev = None
    for a in grid:
        val = p_of(a, coarse)
        if prev is not None and (val == 0.0 or prev[1] * val < 0.0):
            bracket = (a, prev[0], val, prev[1])
            break
        prev = (a, val)
    if bracket is None:
        raise BracketError("no neck bracket for the first period", {"scan": scan})
    a_root, _ = _illinois(lambda a: p_of(a, coarse), *bracket,
                          0.5 * config.period_tol)
    val = p_of(a_root, config)
    for _ in range(6):
        if abs(val) < config.period_tol:
            return a_root, val, scan
        slope = (scan[-1][1] - scan[-2][1]) / (scan[-1][0] - scan[-2][0]) \
            if scan[-1][0] != scan[-2][0] else 0.5
        a_root = a_root - val / slope
        val = p_of(a_root, config)
    raise SolverError("neck polish did not converge", {"scan": scan})


@dataclass
class PeriodReport:
    """Summary of one assembled construction attempt."""

    k: int
    a: float
    b: float
    phi: float
    p: float
    A: float
    b0: float
    areaV: float
    chi: int
    genus: int
    n_used: float
    h_used: float
    residual: float

    def to_dict(self) -> dict:
        return {
            "k": self.k, "a": self.a, "b": self.b, "phi": self.phi,
            "p": self.p, "A": self.A, "b0": self.b0, "areaV": self.areaV,
            "chi": self.chi, "genus": self.genus, "n_used": self.n_used,
            "h_used": self.h_used, "residual": self.residual,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PeriodReport":
        return cls(**{k: d[k] for k in (
            "k", "a", "b", "phi", "p", "A", "b0", "areaV", "chi", "genus",
            "n_used", "h_used", "residual")})


def euler_characteristic(k: int) -> int:
    """Reflection combinatorics: 4k faces, 8k edges, 4k vertices."""
    return 4 * k - 8 * k + 4 * k


@dataclass
class AssembledKnoid:
    report: PeriodReport
    field: ScalarField
    contour: Contour
    profile: TwistProfile
    angular: AngularPeriod
    trace: object


def assemble_report(k: int, config: PipelineConfig | None = None) -> AssembledKnoid:
    """Full pipeline for one symmetry order: both periods plus bookkeeping.

    The angular period is solved at the reference neck (it depends on the
    mirror curve alone); the neck is then adjusted to close the first
    period at the returned (b, phi), and the final surface is re-solved
    at those parameters.
    """
    config = config or PipelineConfig()
    second = solve_second_period(k, config)
    target = math.pi / k

    # the angular root is solved at the reference neck; closing the first
    # period moves the neck, which feeds back into the twist profile only
    # weakly, so a few alternating passes settle both periods, with the
    # exit condition checked on the final re-solved surface
    cache = _DomainCache()
    a_star, p_star, _ = solve_neck_for(second.b, second.phi, config)
    ev = profile = ap = None
    for _ in range(4):
        ev = solve_truncated(ContourSpec(a_star, second.b, second.phi,
                                         config.n0), config, cache)
        profile = extract_twist_profile(ev, config)
        ap = angular_period(profile, config)
        if abs(ap.angle - target) < config.angle_tol \
                and abs(ev.p) < config.period_tol:
            break
        second = solve_second_period(k, config, a=a_star, b_hint=second.b)
        a_star, p_star, _ = solve_neck_for(second.b, second.phi, config)
    else:
        raise SolverError("period relaxation did not settle",
                          {"A": ap.angle if ap else None, "p": p_star})

    tr = edge_trace(ev.field, 0)
    contour = build_contour(ev.spec)

    chi = euler_characteristic(k)
    genus = 1 - chi // 2
    report = PeriodReport(
        k=k, a=a_star, b=second.b, phi=second.phi, p=ev.p, A=ap.angle,
        b0=second.b0, areaV=ap.area_v, chi=chi, genus=genus,
        n_used=ev.n_used, h_used=ev.h_used, residual=ev.residual_norm)
    return AssembledKnoid(report=report, field=ev.field, contour=contour,
                          profile=profile, angular=ap, trace=tr)
