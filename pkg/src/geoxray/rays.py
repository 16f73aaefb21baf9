"""Parameterizations of directed geodesics, foliation coordinates, ray grids.

Charts map coordinate vectors to start phase points on a base circle
(dM1 unless stated otherwise), and back.  Every chart also returns the
derivative of its start point with respect to its coordinates, which seeds
the Jacobi fields used by the (ND) checker and by canonical_image.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
from scipy.interpolate import CubicSpline

from . import manifold as mf

TWO_PI = 2.0 * np.pi


def wrap(a):
    """Wrap angles to [0, 2pi)."""
    return np.mod(a, TWO_PI)


def wrap_diff(a):
    """Wrap angle differences to [-pi, pi)."""
    return np.mod(np.asarray(a) + np.pi, TWO_PI) - np.pi


def unit_vec(a):
    a = np.asarray(a, dtype=float)
    return np.stack([np.cos(a), np.sin(a)], -1)


def perp(u):
    """Counterclockwise rotation by 90 degrees."""
    return np.stack([-u[..., 1], u[..., 0]], -1)


def cross(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _as_coords(coords, k):
    c = np.array(coords, dtype=float, ndmin=1)
    if c.ndim == 1:
        c = c[None, :]
    if c.shape[-1] != k:
        raise ValueError(f"expected {k} chart coordinates, got {c.shape[-1]}")
    return c


def back_to_circle(metric, x, v, radius, h=mf.DEFAULT_STEP):
    """Trace backward to the circle of given radius; return the start state
    (point on the circle, forward velocity) and the elapsed time."""
    res = mf.trace_to_exit(metric, x, -np.asarray(v, dtype=float), radius, h)
    return res.x, -res.v, res.tau


# --------------------------------------------------------------------------
# charts


class Chart:
    kind = "abstract"
    names: tuple = ()
    periodic: tuple = ()
    base_radius = None

    def radius(self, metric):
        return metric.r_M1 if self.base_radius is None else self.base_radius

    @property
    def dim(self):
        return len(self.names)

    def start(self, metric, coords):
        raise NotImplementedError

    def start_jacobian(self, metric, coords):
        raise NotImplementedError

    def project(self, metric, x, v, h=mf.DEFAULT_STEP):
        raise NotImplementedError

    def describe(self):
        return {"kind": self.kind}


class FanChart(Chart):
    """Fan beam on a circle: beta = base angle, alpha = angle to the inward
    normal (positive alpha turns counterclockwise)."""

    kind = "FAN"
    names = ("beta", "alpha")
    periodic = (True, False)

    def __init__(self, base_radius=None):
        self.base_radius = None if base_radius is None else float(base_radius)

    def describe(self):
        d = {"kind": self.kind}
        if self.base_radius is not None:
            d["base_radius"] = self.base_radius
        return d

    def start(self, metric, coords):
        c = _as_coords(coords, 2)
        beta, alpha = c[:, 0], c[:, 1]
        if np.any(np.abs(alpha) > np.pi / 2):
            raise ValueError("fan angle alpha must lie in [-pi/2, pi/2]")
        R = self.radius(metric)
        x0 = R * unit_vec(beta)
        v0 = metric.unit(x0, unit_vec(beta + np.pi + alpha))
        return x0, v0

    def start_jacobian(self, metric, coords):
        c = _as_coords(coords, 2)
        beta, alpha = c[:, 0], c[:, 1]
        R = self.radius(metric)
        x0 = R * unit_vec(beta)
        u = unit_vec(beta + np.pi + alpha)
        s = 1.0 / np.sqrt(metric.factor(x0))
        dx_b = R * perp(unit_vec(beta))
        grad = metric.log_grad(x0)
        dv_b = (perp(u) - 0.5 * u * np.sum(grad * dx_b, -1)[:, None]) \
            * s[:, None]
        dv_a = perp(u) * s[:, None]
        J = np.stack([dx_b, np.zeros_like(dx_b)], 1)
        Jd = np.stack([dv_b, dv_a], 1)
        return J, Jd

    def project(self, metric, x, v, h=mf.DEFAULT_STEP):
        x = np.array(x, dtype=float, ndmin=2)
        v = np.array(v, dtype=float, ndmin=2)
        R = self.radius(metric)
        off = np.abs(np.hypot(x[:, 0], x[:, 1]) - R) > 1e-9
        if np.any(off):
            xb, vb, _ = back_to_circle(metric, x[off], v[off], R, h)
            x, v = x.copy(), v.copy()
            x[off], v[off] = xb, vb
        beta = wrap(np.arctan2(x[:, 1], x[:, 0]))
        nu = -x / np.hypot(x[:, 0], x[:, 1])[:, None]
        alpha = np.arctan2(cross(nu, v), np.sum(nu * v, -1))
        return np.stack([beta, alpha], -1)


class ParallelChart(Chart):
    """Lines x . omega(phi) = p traversed in direction omega^perp.
    Euclidean metric only."""

    kind = "PARALLEL"
    names = ("p", "phi")
    periodic = (False, True)

    def _check(self, metric):
        if not metric.flat or metric.kind != "euclidean":
            raise ValueError("the parallel chart requires the Euclidean metric")

    def start(self, metric, coords):
        self._check(metric)
        c = _as_coords(coords, 2)
        p, phi = c[:, 0], c[:, 1]
        R = metric.r_M1
        if np.any(np.abs(p) >= R):
            raise ValueError("offset |p| must be smaller than the radius of M1")
        om = unit_vec(phi)
        th = perp(om)
        q = np.sqrt(R * R - p * p)
        return p[:, None] * om - q[:, None] * th, th

    def start_jacobian(self, metric, coords):
        c = _as_coords(coords, 2)
        p, phi = c[:, 0], c[:, 1]
        R = metric.r_M1
        om = unit_vec(phi)
        th = perp(om)
        q = np.sqrt(R * R - p * p)
        dx_p = om + (p / q)[:, None] * th
        dx_f = p[:, None] * th + q[:, None] * om
        J = np.stack([dx_p, dx_f], 1)
        Jd = np.stack([np.zeros_like(om), -om], 1)
        return J, Jd

    def project(self, metric, x, v, h=mf.DEFAULT_STEP):
        x = np.array(x, dtype=float, ndmin=2)
        v = np.array(v, dtype=float, ndmin=2)
        th = v / np.hypot(v[:, 0], v[:, 1])[:, None]
        om = -perp(th)
        phi = wrap(np.arctan2(om[:, 1], om[:, 0]))
        p = np.sum(x * om, -1)
        return np.stack([p, phi], -1)


class ShearedFanChart(Chart):
    """FAN rays relabeled as (zeta, alpha) with beta = zeta + shift(alpha).

    With shift = minus the tangency azimuth of the beta = 0 ray, zeta is the
    azimuth of the point of the ray closest to the center, so alpha at fixed
    zeta moves across foliation leaves.  With shift = -pi - alpha, zeta is
    the absolute direction angle minus pi, and alpha at fixed zeta moves the
    base point with the direction held fixed.
    """

    kind = "SHEARED_FAN"
    names = ("zeta", "alpha")
    periodic = (True, False)

    def __init__(self, shift, dshift, label):
        self.shift = shift
        self.dshift = dshift
        self.label = label
        self._fan = FanChart()

    def describe(self):
        return {"kind": self.kind, "label": self.label}

    def start(self, metric, coords):
        c = _as_coords(coords, 2)
        z, a = c[:, 0], c[:, 1]
        return self._fan.start(metric, np.stack([z + self.shift(a), a], -1))

    def start_jacobian(self, metric, coords):
        c = _as_coords(coords, 2)
        z, a = c[:, 0], c[:, 1]
        fc = np.stack([z + self.shift(a), a], -1)
        J, Jd = self._fan.start_jacobian(metric, fc)
        ds = self.dshift(a)[:, None]
        J = np.stack([J[:, 0], J[:, 1] + ds * J[:, 0]], 1)
        Jd = np.stack([Jd[:, 0], Jd[:, 1] + ds * Jd[:, 0]], 1)
        return J, Jd

    def project(self, metric, x, v, h=mf.DEFAULT_STEP):
        bc = self._fan.project(metric, x, v, h)
        z = wrap(bc[:, 0] - self.shift(bc[:, 1]))
        return np.stack([z, bc[:, 1]], -1)


def absolute_direction_chart():
    """Sheared fan where alpha varies the base point at a fixed direction."""
    return ShearedFanChart(lambda a: -np.pi - np.asarray(a),
                           lambda a: -np.ones_like(np.asarray(a, dtype=float)),
                           "absolute-direction")


def leaf_chart(metric, h=mf.DEFAULT_STEP):
    """Sheared fan whose first coordinate is the tangency azimuth."""
    sp = _tangency_spline(metric, h)

    def shift(a):
        a = np.asarray(a, dtype=float)
        return -np.sign(a) * sp(np.abs(a))

    def dshift(a):
        a = np.asarray(a, dtype=float)
        return -sp(np.abs(a), 1)

    return ShearedFanChart(shift, dshift, "leaf")


class FoliationChart(Chart):
    """(rho, zeta, o): leaf value rho = g-distance to dM (negative outside),
    zeta = azimuth of the tangency point, o = +1 for counterclockwise."""

    kind = "FOLIATION"
    names = ("rho", "zeta")
    periodic = (False, True)

    def __init__(self, orientation=1, rho_max=0.3):
        if orientation not in (1, -1):
            raise ValueError("orientation must be +1 or -1")
        self.orientation = orientation
        self.rho_max = float(rho_max)

    def describe(self):
        return {"kind": self.kind, "orientation": self.orientation,
                "rho_max": self.rho_max}

    def tangency(self, metric, coords):
        c = _as_coords(coords, 2)
        _require_radial(metric)
        rho, zeta = c[:, 0], c[:, 1]
        lo = rho_of_r(metric, metric.r_M1)
        if np.any(rho < lo - 1e-12) or np.any(rho > rho_of_r(metric, 0.0)):
            raise ValueError("leaf value outside the range covered by M1")
        r = r_of_rho(metric, rho)
        z = r[:, None] * unit_vec(zeta)
        th = self.orientation * perp(unit_vec(zeta))
        return z, metric.unit(z, th)

    def start(self, metric, coords, h=mf.DEFAULT_STEP):
        z, th = self.tangency(metric, coords)
        x0, v0, _ = back_to_circle(metric, z, th, metric.r_M1, h)
        return x0, v0

    def start_jacobian(self, metric, coords, eps=1e-6):
        c = _as_coords(coords, 2)
        cols_x, cols_v = [], []
        for j in range(2):
            d = np.zeros(2)
            d[j] = eps
            xp, vp = self.start(metric, c + d)
            xm, vm = self.start(metric, c - d)
            cols_x.append((xp - xm) / (2 * eps))
            cols_v.append((vp - vm) / (2 * eps))
        return np.stack(cols_x, 1), np.stack(cols_v, 1)

    def project(self, metric, x, v, h=mf.DEFAULT_STEP):
        fc = foliation_coords(metric, x, v, h)
        return np.stack([fc.rho, fc.zeta], -1)


def _require_radial(metric):
    if not getattr(metric, "radial", False):
        raise NotImplementedError(
            "leaf values are only available for radial conformal metrics")


# --------------------------------------------------------------------------
# radial leaf function


_GL_X, _GL_W = np.polynomial.legendre.leggauss(64)


def rho_of_r(metric, r):
    """Signed g-distance from the circle of radius r to dM, positive inside."""
    _require_radial(metric)
    r = np.asarray(r, dtype=float)
    a, b = r, np.ones_like(r)
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    s = mid[..., None] + half[..., None] * _GL_X
    return np.sum(_GL_W * metric.n_of_r(s), -1) * half


def r_of_rho(metric, rho):
    """Inverse of rho_of_r by Newton iteration (rho decreases with r)."""
    rho = np.asarray(rho, dtype=float)
    r = np.clip(1.0 - rho, 0.0, None)
    for _ in range(60):
        f = rho_of_r(metric, r) - rho
        step = f / metric.n_of_r(r)
        r = np.clip(r + step, 0.0, None)
        if np.max(np.abs(step), initial=0.0) < 1e-15:
            break
    return r


def tangency_radius_of_alpha(metric, alpha, radius=None):
    """Closest-approach radius of the fan ray with angle alpha from the
    Clairaut relation n(r) r = n(R) R |sin alpha|."""
    _require_radial(metric)
    R = metric.r_M1 if radius is None else radius
    target = float(metric.n_of_r(R)) * R * np.abs(np.sin(alpha))
    lo = np.zeros_like(target)
    hi = np.full_like(target, R)
    for _ in range(64):
        mid = 0.5 * (lo + hi)
        big = metric.n_of_r(mid) * mid > target
        hi = np.where(big, mid, hi)
        lo = np.where(big, lo, mid)
    return 0.5 * (lo + hi)


def rho_of_alpha(metric, alpha):
    """Leaf value of the fan ray (from dM1) with angle alpha."""
    return rho_of_r(metric, tangency_radius_of_alpha(metric, alpha))


_TANGENCY_CACHE = {}


def _tangency_spline(metric, h=mf.DEFAULT_STEP, n=257):
    """Spline of the tangency azimuth of beta = 0 fan rays on alpha > 0."""
    _require_radial(metric)
    key = (metric.tag, h, n)
    if key not in _TANGENCY_CACHE:
        a = np.linspace(1e-4, np.pi / 2 - 1e-4, n)
        x0, v0 = FanChart().start(metric, np.stack([np.zeros(n), a], -1))
        fc = foliation_coords(metric, x0, v0, h)
        z = np.unwrap(np.arctan2(fc.z[:, 1], fc.z[:, 0]))
        _TANGENCY_CACHE[key] = CubicSpline(a, z)
    return _TANGENCY_CACHE[key]


def tangency_azimuth(metric, alpha, h=mf.DEFAULT_STEP):
    """Azimuth of the closest point to the center for fan rays at beta = 0."""
    a = np.asarray(alpha, dtype=float)
    return np.sign(a) * _tangency_spline(metric, h)(np.abs(a))


# --------------------------------------------------------------------------
# foliation coordinates


@dataclasses.dataclass
class FoliationCoords:
    z: np.ndarray
    theta: np.ndarray
    rho: np.ndarray
    zeta: np.ndarray
    orientation: np.ndarray
    t: np.ndarray
    second_derivative: np.ndarray
    fallback: np.ndarray


def foliation_coords(metric, x, v, h=mf.DEFAULT_STEP):
    """Tangency point of each ray with the leaves of the foliation.

    The ray through (x, v) is resolved to its start on dM1, traced, and the
    sample closest to the center seeds a Newton iteration on x . xdot = 0.
    """
    x = np.array(x, dtype=float, ndmin=2)
    v = np.array(v, dtype=float, ndmin=2)
    R1 = metric.r_M1
    x0, v0 = x.copy(), v.copy()
    off = np.abs(np.hypot(x[:, 0], x[:, 1]) - R1) > 1e-9
    if np.any(off):
        xb, vb, _ = back_to_circle(metric, x[off], v[off], R1, h)
        x0[off], v0[off] = xb, vb
    _, samples, nsteps = mf.trace_to_exit(metric, x0, v0, R1, h, record=True)
    B = x0.shape[0]
    xs = np.stack([s[0] for s in samples])
    vs = np.stack([s[1] for s in samples])
    r = np.hypot(xs[..., 0], xs[..., 1])
    steps = np.arange(len(samples))[:, None]
    r = np.where(steps <= nsteps[None, :], r, np.inf)
    k = np.argmin(r, axis=0)
    bi = np.arange(B)
    xk, vk = xs[k, bi], vs[k, bi]
    s = np.zeros(B)
    fallback = np.zeros(B, bool)
    tol = 1e-12
    for it in range(50):
        xc, vc = mf.rk4_step(metric, xk, vk, s)
        d = np.sum(xc * vc, -1)
        dd = np.sum(vc * vc, -1) + np.sum(xc * metric.accel(xc, vc), -1)
        ds = -d / dd
        s = s + ds
        rad = np.abs(d) / np.maximum(np.hypot(xc[:, 0], xc[:, 1]), 1e-300)
        rad = rad * np.sqrt(metric.factor(xc))
        if np.all((rad <= tol) | (np.abs(ds) < 1e-16)):
            break
    else:
        bad = np.abs(s) > 2 * h
        fallback |= bad
    bad = ~np.isfinite(s) | (np.abs(s) > 2 * h)
    if np.any(bad):
        fallback |= bad
        s[bad] = _golden(metric, xk[bad], vk[bad], h)
    z, th = mf.rk4_step(metric, xk, vk, s)
    rz = np.hypot(z[:, 0], z[:, 1])
    small = rz < 1e-9
    zhat = np.where(small[:, None], -perp(th) / np.hypot(th[:, 0], th[:, 1])[:, None],
                    z / np.maximum(rz, 1e-300)[:, None])
    zeta = wrap(np.arctan2(zhat[:, 1], zhat[:, 0]))
    orient = np.where(cross(th, -zhat) >= 0, 1, -1)
    acc = metric.accel(z, th)
    if getattr(metric, "radial", False):
        rho = rho_of_r(metric, rz)
        n = metric.n_of_r(rz)
        sec = -n * (np.sum(th * th, -1) + np.sum(z * acc, -1)) \
            / np.maximum(rz, 1e-300)
    else:
        rho = np.full(B, np.nan)
        sec = np.full(B, np.nan)
    return FoliationCoords(z, th, rho, zeta, orient, k * h + s, sec, fallback)


def _golden(metric, x, v, h):
    lo = np.full(x.shape[0], -h)
    hi = np.full(x.shape[0], h)
    g = (math.sqrt(5) - 1) / 2

    def rr(s):
        xx, _ = mf.rk4_step(metric, x, v, s)
        return np.hypot(xx[:, 0], xx[:, 1])

    for _ in range(80):
        a = hi - g * (hi - lo)
        b = lo + g * (hi - lo)
        left = rr(a) < rr(b)
        hi = np.where(left, b, hi)
        lo = np.where(left, lo, a)
    return 0.5 * (lo + hi)


# --------------------------------------------------------------------------
# ray points and conversions


@dataclasses.dataclass
class RayPoint:
    chart: Chart
    coords: np.ndarray
    x0: np.ndarray
    v0: np.ndarray


def ray_from_chart(metric, chart, coords):
    c = _as_coords(coords, chart.dim)
    x0, v0 = chart.start(metric, c)
    return RayPoint(chart, c, x0, v0)


def project(metric, chart, ray: RayPoint):
    return chart.project(metric, ray.x0, ray.v0)


def chart_jacobian(metric, from_chart, to_chart, coords, eps=1e-5):
    """Central-difference Jacobian d(to coords)/d(from coords) at one point."""
    c = np.asarray(coords, dtype=float).ravel()
    k = from_chart.dim
    cols = []
    pts = []
    for j in range(k):
        d = np.zeros(k)
        d[j] = eps
        pts += [c + d, c - d]
    x0, v0 = from_chart.start(metric, np.array(pts))
    y = to_chart.project(metric, x0, v0)
    for j in range(k):
        diff = y[2 * j] - y[2 * j + 1]
        for i, per in enumerate(to_chart.periodic):
            if per:
                diff[i] = wrap_diff(diff[i])
        cols.append(diff / (2 * eps))
    return np.stack(cols, -1)


def ray_endpoints(metric, ray: RayPoint, h=mf.DEFAULT_STEP):
    """Entry and exit points of each ray on dM; None for rays missing M."""
    ch = mf.chords(metric, ray.x0, ray.v0, h)
    out = []
    hit = np.nonzero(ch.hit)[0]
    ex = {}
    if hit.size:
        res = mf.trace_to_exit(metric, ch.x_in[hit], ch.v_in[hit], metric.r_M,
                               h)
        for j, i in enumerate(hit):
            ex[i] = res.x[j]
    for i in range(ch.hit.size):
        out.append((ch.x_in[i], ex[i]) if ch.hit[i] else None)
    return out


# --------------------------------------------------------------------------
# ray grids


@dataclasses.dataclass
class RayGrid:
    """Tensor-product grid in a chart with quadrature weights for d mu."""

    chart: Chart
    axes: tuple
    weights: np.ndarray

    @property
    def shape(self):
        return tuple(len(a) for a in self.axes)

    @property
    def spacing(self):
        return tuple(float(a[1] - a[0]) for a in self.axes)

    def coords(self):
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], -1)

    def describe(self):
        return {"chart": self.chart.describe(),
                "shape": list(self.shape),
                "axes": [[float(a[0]), float(a[-1])] for a in self.axes]}

    def key(self):
        return (self.chart.kind, self.shape,
                tuple(float(a[0]) for a in self.axes),
                tuple(float(a[-1]) for a in self.axes))


def fan_axes(n_beta, n_alpha):
    beta = TWO_PI * np.arange(n_beta) / n_beta
    alpha = (np.arange(n_alpha) + 0.5) / n_alpha * np.pi - np.pi / 2
    return beta, alpha


def fan_grid(metric, n_beta=256, n_alpha=256):
    """FAN grid on dM1 with exact cell integrals of
    d mu = sqrt(c) R1 cos(alpha) d beta d alpha."""
    beta, alpha = fan_axes(n_beta, n_alpha)
    da = np.pi / n_alpha
    R1 = metric.r_M1
    nb = np.sqrt(metric.factor(R1 * unit_vec(beta)))
    col = np.sin(alpha + da / 2) - np.sin(alpha - da / 2)
    w = nb[:, None] * R1 * (TWO_PI / n_beta) * col[None, :]
    return RayGrid(FanChart(), (beta, alpha), np.array(w))


def parallel_grid(metric, n_p=256, n_phi=256, p_max=None):
    """PARALLEL grid, cell-centered offsets in (-p_max, p_max)."""
    p_max = metric.r_M1 if p_max is None else float(p_max)
    p = (np.arange(n_p) + 0.5) / n_p * 2 * p_max - p_max
    phi = TWO_PI * np.arange(n_phi) / n_phi
    w = np.full((n_p, n_phi), (2 * p_max / n_p) * (TWO_PI / n_phi))
    return RayGrid(ParallelChart(), (p, phi), w)


def hit_mask(metric, grid: RayGrid):
    """Grid rays that meet M (exact for radial metrics and lines)."""
    if grid.chart.kind == "PARALLEL":
        return np.broadcast_to(np.abs(grid.axes[0])[:, None] <= metric.r_M,
                               grid.shape).copy()
    if grid.chart.kind == "FAN" and grid.chart.base_radius is None and \
            getattr(metric, "radial", False):
        a_c = critical_alpha(metric)
        return np.broadcast_to(np.abs(grid.axes[1])[None, :] <= a_c,
                               grid.shape).copy()
    x0, v0 = grid.chart.start(metric, grid.coords())
    return mf.chords(metric, x0, v0).hit.reshape(grid.shape)


def critical_alpha(metric):
    """Fan angle of the rays tangent to dM (radial metrics)."""
    _require_radial(metric)
    R1 = metric.r_M1
    s = float(metric.n_of_r(1.0)) / (float(metric.n_of_r(R1)) * R1)
    return math.asin(min(s, 1.0))


def measure_of_hits(metric, grid: RayGrid):
    """Integral of 1 over the rays meeting M, clipping boundary cells
    exactly."""
    if grid.chart.kind == "PARALLEL":
        p = grid.axes[0]
        dp = grid.spacing[0]
        lo = np.clip(p - dp / 2, -1.0, 1.0)
        hi = np.clip(p + dp / 2, -1.0, 1.0)
        return float(np.sum(hi - lo) * grid.spacing[1] * grid.shape[1])
    a_c = critical_alpha(metric)
    alpha = grid.axes[1]
    da = grid.spacing[1]
    lo = np.clip(alpha - da / 2, -a_c, a_c)
    hi = np.clip(alpha + da / 2, -a_c, a_c)
    R1 = metric.r_M1
    n1 = float(metric.n_of_r(R1))
    return float(n1 * R1 * TWO_PI * np.sum(np.sin(hi) - np.sin(lo)))
