import math

import numpy as np
import pytest

from geoxray import manifold as mf
from geoxray import rays as ry


def _metric_fd_christoffel(metric, x, eps=1e-5):
    """Gamma^k_ij = 1/2 g^kl (d_i g_lj + d_j g_li - d_l g_ij) with the
    metric differentiated numerically."""
    def g(p):
        return metric.factor(np.asarray(p)) * np.eye(2)

    dg = []
    for i in range(2):
        e = np.zeros(2)
        e[i] = eps
        dg.append((g(x + e) - g(x - e)) / (2 * eps))
    dg = np.array(dg)  # dg[i, l, j] = d_i g_lj
    ginv = np.linalg.inv(g(x))
    G = np.zeros((2, 2, 2))
    for k in range(2):
        for i in range(2):
            for j in range(2):
                G[k, i, j] = 0.5 * sum(
                    ginv[k, l] * (dg[i, l, j] + dg[j, l, i] - dg[l, i, j])
                    for l in range(2))
    return G


def test_christoffel_flat_and_constant():
    x = np.array([[0.3, -0.4], [0.0, 1.1]])
    assert np.all(mf.christoffel(mf.EuclideanMetric(), x) == 0)
    assert np.allclose(mf.christoffel(mf.ConstantConformalMetric(4.0), x), 0)


def test_christoffel_conformal_matches_metric_derivative(lam):
    x = np.array([0.5, 0.0])
    G = mf.christoffel(lam, x)
    assert np.allclose(G, _metric_fd_christoffel(lam, x), atol=1e-6)
    assert np.allclose(G, np.swapaxes(G, -1, -2))
    # closed form at (0.5, 0): grad log c = (0.1, 0)
    assert G[0, 0, 0] == pytest.approx(0.05)
    assert G[0, 1, 1] == pytest.approx(-0.05)
    assert G[1, 0, 1] == pytest.approx(0.05)


def test_christoffel_outside_chart(lam):
    with pytest.raises(mf.DomainError):
        mf.christoffel(lam, np.array([3.0, 0.0]))


def test_flow_straight_line(euclid):
    tr = mf.geodesic_flow(euclid, np.array([0.0, 0.0]), np.array([1.0, 0.0]))
    k = np.argmin(np.abs(tr.t - 0.5))
    assert np.allclose(tr.x[k], [0.5, 0.0], atol=1e-12)


def test_flow_constant_factor():
    met = mf.ConstantConformalMetric(4.0)
    st = mf.flow_fixed(met, np.array([[0.0, 0.0]]), np.array([[0.5, 0.0]]),
                       1.0)
    assert np.allclose(st[0], [[0.5, 0.0]], atol=1e-12)


def test_flow_step_halving(lam):
    x0 = np.array([[-1.2, 0.0]])
    v0 = lam.unit(x0, np.array([[1.0, 0.2]]))
    a = mf.trace_to_exit(lam, x0, v0, None, 1e-3)
    b = mf.trace_to_exit(lam, x0, v0, None, 5e-4)
    assert np.abs(a.x - b.x).max() < 1e-8


def test_trace_invariants(lam):
    x0 = np.array([-1.2, 0.0])
    v0 = lam.unit(x0, np.array([1.0, 0.35]))
    tr = mf.geodesic_flow(lam, x0, v0)
    assert tr.speed_error(lam) < 1e-7
    assert abs(np.hypot(*tr.x[0]) - lam.r_M1) < 1e-9
    assert abs(np.hypot(*tr.x[-1]) - lam.r_M1) < 1e-9


def test_exit_time_chords(euclid):
    alpha = np.linspace(-1.5, 1.5, 31)
    beta = np.linspace(0, 2 * np.pi, 31)
    x = np.stack([np.cos(beta), np.sin(beta)], -1)
    d = beta + np.pi + alpha
    v = np.stack([np.cos(d), np.sin(d)], -1)
    tau = mf.exit_time(euclid, x, v, "M")
    assert np.abs(tau - 2 * np.cos(alpha)).max() < 1e-9


def test_exit_time_tangential_limit(euclid):
    x = np.array([[1.0, 0.0]])
    taus = [mf.exit_time(euclid, x, np.array([[-math.sin(e), math.cos(e)]]),
                         "M")[0] for e in (1e-2, 1e-4, 1e-6)]
    assert taus[0] > taus[1] > taus[2] and taus[2] < 1e-5
    assert mf.exit_time(euclid, x, np.array([[1.0, 0.0]]), "M")[0] == 0.0


def test_exit_time_conformal_diameter(lam):
    # the diameter is a geodesic; its g-length is 2 int_0^1.2 exp(0.05 r^2)
    # dr, evaluated by adaptive quadrature in extended precision
    x0 = np.array([[-1.2, 0.0]])
    v0 = lam.unit(x0, np.array([[1.0, 0.0]]))
    tau = mf.exit_time(lam, x0, v0, "M1")[0]
    assert tau == pytest.approx(2.45886579060962, abs=1e-7)
    tau2 = mf.exit_time(lam, x0, v0, "M1", h=5e-4)[0]
    assert abs(tau - tau2) < 1e-7


def test_reversibility(lam, rng):
    c = np.stack([rng.uniform(0, 2 * np.pi, 20), rng.uniform(-1.2, 1.2, 20)],
                 -1)
    x, v = ry.FanChart().start(lam, c)
    res = mf.trace_to_exit(lam, x, v)
    back = mf.flow_fixed(lam, res.x, -res.v, res.tau)
    assert np.abs(back[0] - x).max() < 1e-7


def test_convergence_order():
    met = mf.GaussianLensMetric(0.2, 0.25)
    x0 = np.array([[-1.2, 0.0]])
    v0 = met.unit(x0, np.array([[1.0, 0.15]]))
    ref = mf.flow_fixed(met, x0, v0, 2.2, 1e-4)[0]
    err = [np.abs(mf.flow_fixed(met, x0, v0, 2.2, h)[0] - ref).max()
           for h in (4e-3, 2e-3, 1e-3)]
    rates = [math.log2(err[0] / err[1]), math.log2(err[1] / err[2])]
    assert min(rates) > 3.5


def test_jacobi_against_finite_differences(lam, rng):
    c = np.stack([rng.uniform(0, 2 * np.pi, 50), rng.uniform(-1.3, 1.3, 50)],
                 -1)
    chart = ry.FanChart()
    x, v = chart.start(lam, c)
    J, Jd = chart.start_jacobian(lam, c)
    T = rng.uniform(0.3, 1.8, 50)
    _, _, Je, _ = mf.flow_fixed(lam, x, v, T, 1e-3, J, Jd)
    eps = 1e-5
    for j in range(2):
        d = np.zeros(2)
        d[j] = eps
        a = mf.flow_fixed(lam, *chart.start(lam, c + d), T, 1e-3)[0]
        b = mf.flow_fixed(lam, *chart.start(lam, c - d), T, 1e-3)[0]
        fd = (a - b) / (2 * eps)
        rel = np.linalg.norm(fd - Je[:, j], axis=-1) / \
            np.linalg.norm(Je[:, j], axis=-1)
        assert rel.max() < 1e-5


def test_trapping_cap(lam, monkeypatch):
    monkeypatch.setattr(mf, "max_steps_for", lambda metric, h: 10)
    x = np.array([[0.0, 0.0]])
    with pytest.raises(mf.TrappingError):
        mf.trace_to_exit(lam, x, lam.unit(x, np.array([[1.0, 0.0]])))


def test_simplicity_euclid(euclid):
    rep = mf.check_simplicity(euclid)
    assert rep.passed
    assert rep.convexity_margin == pytest.approx(1.0, abs=1e-6)


def test_simplicity_default_metric(lam):
    assert mf.check_simplicity(lam).passed


def test_simplicity_detects_conjugate_points():
    # swept amplitude: A = 0.25 still simple, A = 0.3 has conjugate points
    assert mf.check_simplicity(mf.GaussianLensMetric(0.25, 0.4)).passed
    rep = mf.check_simplicity(mf.GaussianLensMetric(0.3, 0.4))
    assert not rep.passed
    assert rep.conjugate_margin < 0
