import math

import numpy as np
import pytest

from cmc_forge import helicoid as hel
from cmc_forge import sister as sis
from cmc_forge.errors import PreconditionError
from cmc_forge.fibration import ManifoldParams, nil_symmetric
from cmc_forge.hyperbolic import TwistProfile
from cmc_forge.mc_graph import GraphDomain, ScalarField, solve
from cmc_forge.sister import (
    curve_frame_from_samples,
    curve_k_t,
    first_period_identity_check,
    sister_curve_data,
    sister_shape,
    twist_turn,
    vertical_fiber_in_plane,
)

NIL = nil_symmetric()
EUCLID = ManifoldParams(kappa=0.0, tau=0.0)


# --- shape operator rotation ---------------------------------------------------

def test_sister_shape_umbilic():
    out = sister_shape(np.zeros((4, 2, 2)), 0.5)
    np.testing.assert_allclose(out, np.tile(0.5 * np.eye(2), (4, 1, 1)), atol=0.0)


def test_sister_shape_minimal_to_minimal():
    s = np.array([[0.7, 0.0], [0.0, -0.7]])
    out = sister_shape(s, 0.0)
    assert np.trace(out) == pytest.approx(0.0, abs=1e-15)
    j = np.array([[0.0, -1.0], [1.0, 0.0]])
    np.testing.assert_allclose(out, j @ s, atol=0.0)


def test_sister_shape_random_batch_trace_and_det():
    rng = np.random.default_rng(3)
    for _ in range(20):
        a, b, c = rng.normal(size=3)
        s = np.array([[a, b], [b, c]])
        out = sister_shape(s, 0.5)
        assert np.trace(out) == pytest.approx(1.0, abs=1e-14)
        direct = np.array([[0.0, -1.0], [1.0, 0.0]]) @ s + 0.5 * np.eye(2)
        np.testing.assert_allclose(out, direct, atol=1e-15)
        assert np.linalg.det(out) == pytest.approx(np.linalg.det(direct), abs=1e-12)


def test_sister_shape_rejects_asymmetric():
    with pytest.raises(PreconditionError):
        sister_shape(np.array([[0.0, 1.0], [0.0, 0.0]]), 0.5)


def test_sister_curve_data_definitions():
    k = np.array([0.1, 0.2])
    t = np.array([-0.5, 0.3])
    ktilde, ttilde = sister_curve_data(k, t, 0.5)
    np.testing.assert_allclose(ktilde, [1.0, 0.2], atol=0.0)
    np.testing.assert_allclose(ttilde, k, atol=0.0)


# --- curve frames ---------------------------------------------------------------

def test_fiber_in_vertical_plane_torsion_and_twist():
    data = vertical_fiber_in_plane(NIL, (0.3, -0.2), length=2.0)
    np.testing.assert_allclose(data.t_tor, -NIL.tau, atol=1e-9)
    np.testing.assert_allclose(data.k, 0.0, atol=1e-9)
    assert twist_turn(data, "vertical") == pytest.approx(0.0, abs=1e-9)


def test_flat_horizontal_geodesic():
    x = np.linspace(0.0, 1.0, 101)
    pts = np.stack([x, np.zeros_like(x), np.zeros_like(x)], axis=1)
    nu = np.tile([0.0, 0.0, 1.0], (101, 1))
    data = curve_frame_from_samples(EUCLID, pts, normal_frame=nu)
    np.testing.assert_allclose(data.k, 0.0, atol=1e-10)
    np.testing.assert_allclose(data.t_tor, 0.0, atol=1e-10)


def test_reversal_flips_torsion_keeps_curvature():
    # curve inside the section z = 0 of the Heisenberg model, whose unit
    # normal has frame components (-tau y, tau x, 1)/W
    x = np.linspace(0.0, 1.0, 301)
    pts = np.stack([x, 0.1 * np.sin(2 * x), np.zeros_like(x)], axis=1)
    tau = NIL.tau
    nf = np.stack([-tau * pts[:, 1], tau * pts[:, 0], np.ones_like(x)], axis=1)
    data = curve_frame_from_samples(NIL, pts, normal_frame=nf)
    rev = data.reversed()
    sl = slice(5, -5)
    np.testing.assert_allclose(rev.k[::-1][sl], data.k[sl], atol=1e-4)
    np.testing.assert_allclose(rev.t_tor[::-1][sl], -data.t_tor[sl], atol=1e-4)


def test_nil_xy_edge_closed_form():
    # Boundary curve of u = -x y / 2 along y = 0: a horizontal geodesic with
    # k = 0 and torsion t(x) = tau - 1/(1 + x^2).
    fn = lambda x, y: -0.5 * x * y
    poly = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
    dom = GraphDomain(poly, 1.0 / 96, [fn] * 4)
    vals = fn(dom.node_base[:, 0], dom.node_base[:, 1])
    vals[dom.boundary] = dom.boundary_values
    f = ScalarField(dom, NIL, 0.0, vals)
    data = curve_k_t(f, 0)
    x = data.points[:, 0]
    sl = slice(4, -4)
    np.testing.assert_allclose(data.k[sl], 0.0, atol=2e-3)
    expected = NIL.tau - 1.0 / (1.0 + x * x)
    np.testing.assert_allclose(data.t_tor[sl], expected[sl], atol=2e-3)


def test_helicoid_ruling_torsion_closed_form():
    # Frame data along a vertical ruling; expected torsion follows from the
    # twist rate 2 alpha^2 / cosh^2(alpha v): t = rate - tau.
    from cmc_forge.fibration import Chart, nil_daniel_hauswirth

    alpha = 1.0
    model = hel.build(alpha)
    n = 1201
    v = np.linspace(-1.2, 1.2, n)
    U = model.U
    pts_dh = model.point(np.full(n, -U), v)
    params_dh = nil_daniel_hauswirth()
    eps = 1e-6
    du = (model.point(np.full(n, -U + eps), v)
          - model.point(np.full(n, -U - eps), v)) / (2 * eps)
    dv = (model.point(np.full(n, -U), v + eps)
          - model.point(np.full(n, -U), v - eps)) / (2 * eps)
    du_f = sis._frame_components(params_dh, pts_dh, du)
    dv_f = sis._frame_components(params_dh, pts_dh, dv)
    nu_f = np.cross(du_f, dv_f)
    nu_f /= np.linalg.norm(nu_f, axis=1)[:, None]
    data = curve_frame_from_samples(params_dh, pts_dh, normal_frame=nu_f)
    rate = 2.0 * alpha ** 2 / np.cosh(alpha * v) ** 2
    expected = np.abs(rate - 0.5)
    sl = slice(10, -10)
    np.testing.assert_allclose(np.abs(data.t_tor[sl]), expected[sl], atol=2e-4)
    # twist two ways: frame integration vs the angle law along the ruling
    tw = twist_turn(data, "vertical")
    expected_tw = 2.0 * math.atan(math.sinh(alpha * 1.2))
    assert abs(abs(tw) - expected_tw) < 1e-4


def test_first_period_identity_flat():
    fn = lambda x, y: np.zeros_like(x)
    poly = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
    dom = GraphDomain(poly, 1.0 / 24, [fn] * 4)
    f = solve(dom, EUCLID, 0.0)
    p1, p2 = first_period_identity_check(f, 0)
    assert p1 == pytest.approx(0.0, abs=1e-10)
    assert p2 == pytest.approx(0.0, abs=1e-10)


def test_first_period_identity_nil_xy():
    fn = lambda x, y: -0.5 * x * y
    poly = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
    dom = GraphDomain(poly, 1.0 / 96, [fn] * 4)
    vals = fn(dom.node_base[:, 0], dom.node_base[:, 1])
    vals[dom.boundary] = dom.boundary_values
    f = ScalarField(dom, NIL, 0.0, vals)
    p1, p2 = first_period_identity_check(f, 0)
    # closed form: integral of -x/sqrt(1+x^2) over [0, 1]
    expected = -(math.sqrt(2.0) - 1.0)
    assert p1 == pytest.approx(expected, abs=2e-3)
    assert abs(p1 - p2) < 1e-6


def test_twist_turn_zero_cases():
    data = vertical_fiber_in_plane(NIL, (0.0, 0.0), 1.5)
    assert twist_turn(data, "vertical") == pytest.approx(0.0, abs=1e-9)
    x = np.linspace(0.0, 1.0, 101)
    pts = np.stack([x, np.zeros_like(x), np.zeros_like(x)], axis=1)
    nu = np.tile([0.0, 0.0, 1.0], (101, 1))
    flat = curve_frame_from_samples(EUCLID, pts, normal_frame=nu)
    assert twist_turn(flat, "vertical", H=0.0) == pytest.approx(0.0, abs=1e-10)
    with pytest.raises(PreconditionError):
        twist_turn(flat, "diagonal")
