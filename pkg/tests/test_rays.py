import math

import numpy as np
import pytest

from geoxray import manifold as mf
from geoxray import rays as ry


def test_fan_origin_ray(euclid):
    x0, v0 = ry.FanChart().start(euclid, [0.0, 0.0])
    assert np.allclose(x0, [[1.2, 0.0]])
    assert np.allclose(v0, [[-1.0, 0.0]])


def test_foliation_equals_parallel_in_flat_case(euclid):
    p = np.array([0.1, 0.5, 0.9])
    phi = np.array([0.3, 2.0, 4.5])
    xf, vf = ry.FoliationChart().start(euclid, np.stack([1 - p, phi], -1))
    xp, vp = ry.ParallelChart().start(euclid, np.stack([p, phi], -1))
    assert np.allclose(xf, xp, atol=1e-9)
    assert np.allclose(vf, vp, atol=1e-12)


def test_foliation_round_trip(lam):
    ch = ry.FoliationChart()
    c = np.array([[0.05, 0.7], [0.2, 2.0], [-0.1, 1.0], [0.29, 5.5]])
    for o in (1, -1):
        ch = ry.FoliationChart(orientation=o)
        x, v = ch.start(lam, c)
        fc = ry.foliation_coords(lam, x, v)
        assert np.allclose(fc.rho, c[:, 0], atol=1e-7)
        assert np.allclose(ry.wrap_diff(fc.zeta - c[:, 1]), 0, atol=1e-7)
        assert np.all(fc.orientation == o)


def test_foliation_coords_lines(euclid):
    p, phi = 0.4, 1.1
    om = np.array([math.cos(phi), math.sin(phi)])
    x0, v0 = ry.ParallelChart().start(euclid, [p, phi])
    fc = ry.foliation_coords(euclid, x0, v0)
    assert np.allclose(fc.z[0], p * om, atol=1e-10)
    assert fc.rho[0] == pytest.approx(1 - p, abs=1e-10)
    x0, v0 = ry.ParallelChart().start(euclid, [0.0, phi])
    fc = ry.foliation_coords(euclid, x0, v0)
    assert np.allclose(fc.z[0], 0, atol=1e-10)
    assert fc.rho[0] == pytest.approx(1.0, abs=1e-10)


def test_tangency_is_strict_maximum(lam):
    c = np.array([[0.02, 0.4], [0.15, 3.0]])
    x, v = ry.FoliationChart().start(lam, c)
    fc = ry.foliation_coords(lam, x, v)
    assert np.all(fc.second_derivative < 0)
    II = [mf.second_fundamental_form(lam, r)
          for r in ry.r_of_rho(lam, fc.rho)]
    assert np.allclose(-fc.second_derivative, II, rtol=1e-6)


def test_chart_jacobians(euclid, lam):
    J = ry.chart_jacobian(euclid, ry.FanChart(), ry.ParallelChart(),
                          [0.4, 0.0])
    assert abs(np.linalg.det(J)) == pytest.approx(1.2, rel=1e-6)
    for met in (euclid, lam):
        I = ry.chart_jacobian(met, ry.FanChart(), ry.FanChart(), [1.0, 0.3])
        assert np.allclose(I, np.eye(2), atol=1e-6)


def test_fan_to_foliation_on_collar(lam):
    a_c = ry.critical_alpha(lam)
    alphas = np.linspace(0.55, a_c + 0.05, 7)
    dets = [abs(np.linalg.det(ry.chart_jacobian(
        lam, ry.FanChart(), ry.FoliationChart(), [b, a])))
        for a in alphas for b in (0.0, 2.0)]
    assert min(dets) > 1e-3


def test_round_trips(euclid, lam):
    g = ry.fan_grid(lam, 16, 16)
    c = g.coords()
    back = ry.FanChart().project(lam, *ry.FanChart().start(lam, c))
    assert np.allclose(ry.wrap_diff(back[:, 0] - c[:, 0]), 0, atol=1e-7)
    assert np.allclose(back[:, 1], c[:, 1], atol=1e-7)
    gp = ry.parallel_grid(euclid, 16, 16)
    c = gp.coords()
    back = ry.ParallelChart().project(euclid,
                                      *ry.ParallelChart().start(euclid, c))
    assert np.allclose(back[:, 0], c[:, 0], atol=1e-12)
    assert np.allclose(ry.wrap_diff(back[:, 1] - c[:, 1]), 0, atol=1e-12)


def test_ray_endpoints(euclid, lam):
    ray = ry.ray_from_chart(euclid, ry.FanChart(), [0.0, 0.0])
    (a, b), = ry.ray_endpoints(euclid, ray)
    assert np.allclose(a, [1, 0], atol=1e-12)
    assert np.allclose(b, [-1, 0], atol=1e-12)
    miss = ry.ray_from_chart(euclid, ry.ParallelChart(), [1.1, 0.5])
    assert ry.ray_endpoints(euclid, miss) == [None]
    ray = ry.ray_from_chart(lam, ry.FanChart(), [[0.3, 0.2], [2.0, -0.6]])
    for a, b in ry.ray_endpoints(lam, ray):
        assert abs(np.hypot(*a) - 1) < 1e-8 and abs(np.hypot(*b) - 1) < 1e-8


def test_fan_measure(euclid):
    g = ry.fan_grid(euclid, 64, 64)
    assert np.all(g.weights > 0)
    # total measure of the fan chart on dM1 is 2 * 2 pi R1
    assert g.weights.sum() == pytest.approx(4 * math.pi * 1.2, rel=1e-6)


def test_measure_change_of_variables(euclid):
    fan = ry.measure_of_hits(euclid, ry.fan_grid(euclid, 256, 256))
    par = ry.measure_of_hits(euclid, ry.parallel_grid(euclid, 256, 256))
    assert fan == pytest.approx(par, rel=1e-4)
    assert fan == pytest.approx(4 * math.pi, rel=1e-10)


def test_parallel_chart_needs_flat_metric(lam):
    with pytest.raises(ValueError):
        ry.ParallelChart().start(lam, [0.1, 0.2])


def test_leaf_chart_coordinates(lam):
    ch = ry.leaf_chart(lam)
    c = np.array([[0.4, 0.9], [2.5, -0.7], [1.0, 0.2]])
    x, v = ch.start(lam, c)
    fc = ry.foliation_coords(lam, x, v)
    assert np.allclose(ry.wrap_diff(fc.zeta - c[:, 0]), 0, atol=1e-6)
