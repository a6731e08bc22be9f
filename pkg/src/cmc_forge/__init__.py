"""Minimal graphs over hinge contours and their constant-mean-curvature
partners: fibered-model geometry, the helicoid barrier family, a
prescribed-mean-curvature graph solver, half-plane curve reconstruction,
and the two period problems of the genus-one k-noid construction."""

from .errors import BracketError, ForgeError, PreconditionError, SolverError
from .fibration import (
    BaseLoop,
    Chart,
    FiberedPoint,
    ManifoldParams,
    enclosed_area,
    holonomy,
    horizontal_lift,
    lift_displacement,
    metric_at,
    nil_daniel_hauswirth,
    nil_symmetric,
    to_daniel_hauswirth,
    to_symmetric,
)
from .helicoid import (
    ConormalSample,
    HelicoidModel,
    alpha_for_width,
    build,
    complete_elliptic_k,
    conormal_height,
    conormal_samples,
    u_of_alpha,
    width_of_alpha,
)
from .hyperbolic import (
    HCurve,
    HGeodesic,
    TwistProfile,
    b0_of_phi,
    b0_prime,
    f_phi,
    gauss_bonnet_area,
    geodesic_arc,
    geodesic_from,
    intersect,
    reconstruct_curve,
    region_area,
    theta_from_twist,
)
from .mc_graph import (
    AffineFrame,
    EdgeTrace,
    GraphDomain,
    ScalarField,
    comparison_check,
    corner_twist_profile,
    edge_trace,
    residual,
    solve,
)
from .periods import (
    AssembledKnoid,
    ContourSpec,
    PeriodReport,
    PipelineConfig,
    angular_period,
    assemble_report,
    build_contour,
    euler_characteristic,
    first_period,
    solve_first_period,
    solve_second_period,
    solve_truncated,
)
from .sister import (
    CurveFrameData,
    curve_frame_from_samples,
    curve_k_t,
    first_period_identity_check,
    sister_curve_data,
    sister_shape,
    twist_turn,
    vertical_fiber_in_plane,
)

__version__ = "0.1.0"
