import math

import numpy as np
import pytest

from cmc_forge import fibration as fib
from cmc_forge.errors import PreconditionError
from cmc_forge.fibration import (
    BaseLoop,
    Chart,
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


def test_dh_chart_rejects_curved_base():
    with pytest.raises(PreconditionError):
        ManifoldParams(kappa=1.0, tau=0.5, chart=Chart.DANIEL_HAUSWIRTH)


def test_conformal_factor_is_one_at_origin():
    for kappa in (-1.0, 0.0, 1.0):
        p = ManifoldParams(kappa=kappa, tau=0.3)
        assert p.conformal_factor(0.0, 0.0) == pytest.approx(1.0, abs=0.0)


def test_metric_euclidean_case():
    p = ManifoldParams(kappa=0.0, tau=0.0)
    g = metric_at(p, (0.7, -1.3, 2.0))
    np.testing.assert_allclose(g, np.eye(3), atol=1e-15)
    g_dh = metric_at(ManifoldParams(0.0, 0.0, Chart.DANIEL_HAUSWIRTH),
                     (0.7, -1.3, 2.0))
    np.testing.assert_allclose(g_dh, np.eye(3), atol=1e-15)


def test_metric_dh_chart_matches_stated_expansion():
    g = metric_at(nil_daniel_hauswirth(), (1.0, 0.0, 0.0))
    expected = np.array([[1.0, 0.0, 0.0], [0.0, 2.0, -1.0], [0.0, -1.0, 1.0]])
    np.testing.assert_allclose(g, expected, atol=1e-15)


def test_metric_symmetric_chart_identity_at_origin():
    g = metric_at(nil_symmetric(), (0.0, 0.0, 0.0))
    np.testing.assert_allclose(g, np.eye(3), atol=1e-15)


@pytest.mark.parametrize("kappa", [-1.0, 0.0, 1.0])
def test_metric_positive_definite_on_grid(kappa):
    params = ManifoldParams(kappa=kappa, tau=0.5)
    xs = np.linspace(-1.0, 1.0, 50)
    for x in xs[::7]:
        for y in xs:
            g = metric_at(params, (x, y, 0.0))
            eig = np.linalg.eigvalsh(g)
            assert eig.min() > 0.0
            assert np.linalg.det(g) > 0.0


def test_chart_round_trip_identity():
    params = nil_symmetric()
    rng = np.random.default_rng(7)
    pts = rng.uniform(-3, 3, size=(10_000, 3))
    back = to_symmetric(params, to_daniel_hauswirth(params, pts))
    assert np.max(np.abs(back - pts)) < 1e-12


def test_chart_change_is_metric_isometry():
    # Pullback of the DH metric under (x, y, z) -> (x, y, z + tau*x*y)
    # reproduces the symmetric-chart metric.
    params = nil_symmetric()
    dh = nil_daniel_hauswirth()
    rng = np.random.default_rng(3)
    for p in rng.uniform(-2, 2, size=(25, 3)):
        jac = np.array([
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [params.tau * p[1], params.tau * p[0], 1.0],
        ])
        g_dh = metric_at(dh, to_daniel_hauswirth(params, p))
        g_pull = jac.T @ g_dh @ jac
        np.testing.assert_allclose(g_pull, metric_at(params, p), atol=1e-12)


def test_lift_trivial_bundle_stays_flat():
    params = ManifoldParams(kappa=0.0, tau=0.0)
    loop = BaseLoop.circle(radius=1.3, n=256)
    lifted = horizontal_lift(params, loop, z0=0.25)
    assert np.max(np.abs(lifted[:, 2] - 0.25)) < 1e-12


def test_lift_ccw_unit_circle_frozen_sign():
    # Frozen orientation convention: ccw loop, tau = 1/2 -> displacement +pi.
    disp = lift_displacement(nil_daniel_hauswirth(), BaseLoop.circle(n=1024))
    assert disp == pytest.approx(math.pi, abs=1e-6)
    disp_sym = lift_displacement(nil_symmetric(), BaseLoop.circle(n=1024))
    assert disp_sym == pytest.approx(math.pi, abs=1e-6)


def test_lift_square_displacement_magnitude():
    s = 0.8
    loop = BaseLoop.square(side=s, samples_per_edge=64)
    disp = lift_displacement(nil_symmetric(), loop)
    assert abs(disp) == pytest.approx(s * s, abs=1e-10)


def test_lift_tangent_is_horizontal():
    params = nil_symmetric()
    loop = BaseLoop.circle(radius=1.5, n=2048)
    lifted = horizontal_lift(params, loop)
    d = np.diff(lifted, axis=0)
    mid = 0.5 * (lifted[:-1] + lifted[1:])
    a1, a2 = params.connection_coefficients(mid[:, 0], mid[:, 1])
    vertical_part = d[:, 2] + a1 * d[:, 0] + a2 * d[:, 1]
    assert np.max(np.abs(vertical_part)) / np.max(np.linalg.norm(d, axis=1)) < 1e-4


def test_holonomy_trivial_for_tau_zero():
    params = ManifoldParams(kappa=0.0, tau=0.0)
    assert holonomy(params, BaseLoop.circle()) == 0.0


def test_holonomy_unit_circle_and_radius_two():
    params = nil_symmetric()
    assert abs(holonomy(params, BaseLoop.circle(n=2048))) == pytest.approx(
        math.pi, rel=1e-6)
    h2 = holonomy(params, BaseLoop.circle(radius=2.0, n=2048))
    lift2 = lift_displacement(params, BaseLoop.circle(radius=2.0, n=2048))
    assert abs(h2) == pytest.approx(4 * math.pi, rel=1e-6)
    assert h2 == pytest.approx(lift2, abs=1e-4)


def test_holonomy_orientation_flip_is_exact():
    params = nil_symmetric()
    loop = BaseLoop.circle(radius=0.9, n=512)
    assert holonomy(params, loop.reversed()) == -holonomy(params, loop)


def test_holonomy_rejects_self_intersecting_loop():
    th = np.linspace(0.0, 2 * np.pi, 129)
    fig8 = np.stack([np.sin(2 * th), np.sin(th)], axis=1)
    fig8[-1] = fig8[0]
    with pytest.raises(PreconditionError):
        holonomy(nil_symmetric(), BaseLoop(fig8))


def test_curved_base_area_element():
    # Hyperbolic base (kappa = -1): enclosed area of a centered disc in the
    # conformal model, against 2-D quadrature of lambda^2.
    params = ManifoldParams(kappa=-1.0, tau=0.5)
    r = 0.8
    loop = BaseLoop.circle(radius=r, n=4096)
    # integrate lambda^2 over the disc in polar coordinates
    rr = np.linspace(0.0, r, 20001)
    lam2 = (4.0 / (4.0 - rr * rr)) ** 2
    expected = 2 * np.pi * np.trapezoid(lam2 * rr, rr)
    assert enclosed_area(params, loop) == pytest.approx(expected, rel=1e-6)


def test_holonomy_matches_lift_for_random_smooth_loops():
    params = nil_symmetric()
    rng = np.random.default_rng(42)
    for _ in range(5):
        th = np.linspace(0.0, 2 * np.pi, 1501)
        r = 1.0 + 0.25 * np.cos(2 * th + rng.uniform(0, np.pi)) \
            + 0.15 * np.sin(3 * th + rng.uniform(0, np.pi))
        c = rng.uniform(-0.5, 0.5, size=2)
        pts = np.stack([c[0] + r * np.cos(th), c[1] + r * np.sin(th)], axis=1)
        pts[-1] = pts[0]
        loop = BaseLoop(pts)
        assert holonomy(params, loop) == pytest.approx(
            lift_displacement(params, loop), abs=1e-4)


def test_loop_validation():
    with pytest.raises(PreconditionError):
        BaseLoop(np.zeros((5, 2)))
    pts = np.array([[0, 0], [1, 0], [1, 1], [0, 1], [0, 0.5], [0, 0.25],
                    [0, 0.125], [0, 0.0625], [0.5, 0.5]], dtype=float)
    with pytest.raises(PreconditionError):
        BaseLoop(pts)  # not closed
