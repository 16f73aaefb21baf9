"""Metrics on the chart of M1 and batched geodesic/Jacobi integration.

All metrics here are conformal, g = c(x) * identity, written through the
log-factor psi = log c.  Geodesics are integrated as first-order systems in
(x, v) with a fixed-step RK4 scheme; Jacobi fields ride along as the exact
linearization of each RK4 stage, so the variational output is the derivative
of the discrete flow map itself.

Every integrator here is vectorized over a leading batch axis so that whole
ray grids can be traced at once.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math

import numpy as np
from scipy.interpolate import RectBivariateSpline

R_M = 1.0
DEFAULT_DELTA = 0.2
DEFAULT_STEP = 1e-3
CHART_MARGIN = 0.05
BISECT_ITERS = 48


class DomainError(ValueError):
    """A point lies outside the chart on which the metric is defined."""


class TrappingError(RuntimeError):
    """A geodesic failed to leave the domain within the step cap."""


# --------------------------------------------------------------------------
# metric models


class MetricModel:
    """Conformal metric g = c(x) I on a disc chart containing M1."""

    kind = "abstract"
    radial = False
    flat = False

    def __init__(self, delta: float = DEFAULT_DELTA):
        delta = float(delta)
        if not delta > 0:
            raise ValueError("extension width delta must be positive")
        self.delta = delta

    # radii -------------------------------------------------------------
    @property
    def r_M(self) -> float:
        return R_M

    @property
    def r_M1(self) -> float:
        return R_M + self.delta

    @property
    def chart_radius(self) -> float:
        return self.r_M1 + CHART_MARGIN

    @property
    def tag(self) -> str:
        raise NotImplementedError

    def describe(self) -> dict:
        raise NotImplementedError

    # psi = log c and its derivatives, vectorized over leading axes -------
    def log_factor(self, x):
        raise NotImplementedError

    def log_grad(self, x):
        raise NotImplementedError

    def log_hess(self, x):
        raise NotImplementedError

    def factor(self, x):
        return np.exp(self.log_factor(x))

    def check_domain(self, x):
        x = np.asarray(x, dtype=float)
        r = np.hypot(x[..., 0], x[..., 1])
        if np.any(r > self.chart_radius + 1e-12):
            raise DomainError(
                f"point at radius {float(np.max(r)):.6g} is outside the chart "
                f"(radius {self.chart_radius:.6g})")
        return x

    # geometry ------------------------------------------------------------
    def speed(self, x, v):
        """g-length of v at x."""
        v = np.asarray(v, dtype=float)
        return np.sqrt(self.factor(x)) * np.hypot(v[..., 0], v[..., 1])

    def unit(self, x, direction):
        """Rescale a chart vector to unit g-speed."""
        d = np.asarray(direction, dtype=float)
        return d / self.speed(x, d)[..., None]

    def accel(self, x, v):
        """Geodesic acceleration -Gamma(v, v)."""
        p = self.log_grad(x)
        pv = np.sum(p * v, axis=-1)[..., None]
        vv = np.sum(v * v, axis=-1)[..., None]
        return -v * pv + 0.5 * vv * p

    def accel_linear(self, x, v, dx, dv):
        """Derivative of accel along (dx, dv).

        x, v have shape (B, 2); dx, dv have shape (B, P, 2).
        """
        p = self.log_grad(x)
        H = self.log_hess(x)
        dp = np.einsum("bij,bpj->bpi", H, dx)
        pv = np.sum(p * v, axis=-1)[:, None, None]
        vv = np.sum(v * v, axis=-1)[:, None, None]
        vb = v[:, None, :]
        pb = p[:, None, :]
        dpv = (np.sum(dp * vb, axis=-1) + np.sum(pb * dv, axis=-1))[..., None]
        vdv = np.sum(vb * dv, axis=-1)[..., None]
        return -dv * pv - vb * dpv + vdv * pb + 0.5 * vv * dp

    def curvature(self, x):
        """Gaussian curvature K = -Laplacian(psi) / (2 c)."""
        H = self.log_hess(x)
        return -0.5 * (H[..., 0, 0] + H[..., 1, 1]) / self.factor(x)


def christoffel(metric: MetricModel, x):
    """Christoffel symbols G[k, i, j] = Gamma^k_ij at chart point(s) x.

    For g = e^psi I: Gamma^k_ij = (d_ik psi_j + d_jk psi_i - d_ij psi_k) / 2.
    """
    return christoffel_field(metric, metric.check_domain(x))


def christoffel_field(metric: MetricModel, x):
    """Christoffel symbols without the chart-domain check (grid evaluation
    beyond M1 uses the same closed-form extension)."""
    p = metric.log_grad(np.asarray(x, dtype=float))
    eye = np.eye(2)
    G = 0.5 * (np.einsum("ki,...j->...kij", eye, p)
               + np.einsum("kj,...i->...kij", eye, p)
               - np.einsum("ij,...k->...kij", eye, p))
    return G


class RadialConformalMetric(MetricModel):
    """c(x) = exp(q(|x|^2)) for a scalar profile q."""

    kind = "conformal-radial"
    radial = True

    def q(self, s):
        raise NotImplementedError

    def dq(self, s):
        raise NotImplementedError

    def d2q(self, s):
        raise NotImplementedError

    def log_factor(self, x):
        x = np.asarray(x, dtype=float)
        return self.q(x[..., 0] ** 2 + x[..., 1] ** 2)

    def log_grad(self, x):
        x = np.asarray(x, dtype=float)
        s = x[..., 0] ** 2 + x[..., 1] ** 2
        return 2.0 * self.dq(s)[..., None] * x

    def log_hess(self, x):
        x = np.asarray(x, dtype=float)
        s = x[..., 0] ** 2 + x[..., 1] ** 2
        a = 2.0 * self.dq(s)[..., None, None]
        b = 4.0 * self.d2q(s)[..., None, None]
        return a * np.eye(2) + b * x[..., :, None] * x[..., None, :]

    # radial helpers ----------------------------------------------------
    def n_of_r(self, r):
        """Index of refraction sqrt(c) as a function of radius."""
        r = np.asarray(r, dtype=float)
        return np.exp(0.5 * self.q(r * r))

    def dlogn_dr(self, r):
        r = np.asarray(r, dtype=float)
        return r * self.dq(r * r)


class EuclideanMetric(RadialConformalMetric):
    kind = "euclidean"
    flat = True

    def q(self, s):
        return np.zeros_like(np.asarray(s, dtype=float))

    def dq(self, s):
        return np.zeros_like(np.asarray(s, dtype=float))

    def d2q(self, s):
        return np.zeros_like(np.asarray(s, dtype=float))

    @property
    def tag(self):
        return f"euclidean(delta={self.delta:g})"

    def describe(self):
        return {"kind": "euclidean", "delta": self.delta}


class ExpConformalMetric(RadialConformalMetric):
    """c = exp(lam |x|^2), the default test family."""

    def __init__(self, lam: float = 0.1, delta: float = DEFAULT_DELTA):
        super().__init__(delta)
        self.lam = float(lam)

    def q(self, s):
        return self.lam * np.asarray(s, dtype=float)

    def dq(self, s):
        return np.full_like(np.asarray(s, dtype=float), self.lam)

    def d2q(self, s):
        return np.zeros_like(np.asarray(s, dtype=float))

    @property
    def tag(self):
        return f"conformal-exp(lambda={self.lam:g},delta={self.delta:g})"

    def describe(self):
        return {"kind": "conformal-radial", "lambda": self.lam,
                "delta": self.delta}


class ConstantConformalMetric(RadialConformalMetric):
    """c = const; flat geometry with rescaled speed."""

    def __init__(self, c: float, delta: float = DEFAULT_DELTA):
        super().__init__(delta)
        if not c > 0:
            raise ValueError("conformal factor must be positive")
        self.c = float(c)

    def q(self, s):
        return np.full_like(np.asarray(s, dtype=float), math.log(self.c))

    def dq(self, s):
        return np.zeros_like(np.asarray(s, dtype=float))

    def d2q(self, s):
        return np.zeros_like(np.asarray(s, dtype=float))

    @property
    def tag(self):
        return f"conformal-const(c={self.c:g},delta={self.delta:g})"

    def describe(self):
        return {"kind": "conformal-const", "c": self.c, "delta": self.delta}


class GaussianLensMetric(RadialConformalMetric):
    """c = (1 + A exp(-|x|^2 / sigma^2))^2, a focusing lens for A > 0.

    Large amplitudes create conjugate points, which makes this family a
    convenient negative control for the simplicity diagnostic.
    """

    def __init__(self, amplitude: float, sigma: float = 0.4,
                 delta: float = DEFAULT_DELTA):
        super().__init__(delta)
        self.amplitude = float(amplitude)
        self.sigma = float(sigma)

    def _e(self, s):
        return self.amplitude * np.exp(-np.asarray(s, dtype=float)
                                       / self.sigma ** 2)

    def q(self, s):
        return 2.0 * np.log1p(self._e(s))

    def dq(self, s):
        e = self._e(s)
        return -2.0 * e / (self.sigma ** 2 * (1.0 + e))

    def d2q(self, s):
        e = self._e(s)
        return 2.0 * e / (self.sigma ** 4 * (1.0 + e) ** 2)

    @property
    def tag(self):
        return (f"gaussian-lens(A={self.amplitude:g},sigma={self.sigma:g},"
                f"delta={self.delta:g})")

    def describe(self):
        return {"kind": "gaussian-lens", "amplitude": self.amplitude,
                "sigma": self.sigma, "delta": self.delta}


class GridMetric(MetricModel):
    """Conformal factor sampled on a square lattice.

    log c is interpolated by a bicubic spline; its derivatives come from the
    spline itself.
    """

    kind = "grid-sampled"

    def __init__(self, samples, extent: float, delta: float = DEFAULT_DELTA):
        super().__init__(delta)
        samples = np.asarray(samples, dtype=float)
        if samples.ndim != 2 or samples.shape[0] != samples.shape[1]:
            raise ValueError("grid metric samples must be a square 2D array")
        if np.any(samples <= 0) or not np.all(np.isfinite(samples)):
            raise ValueError("conformal factor samples must be positive")
        if extent < self.chart_radius:
            raise ValueError("grid extent must cover the chart of M1")
        self.samples = samples
        self.extent = float(extent)
        axis = np.linspace(-extent, extent, samples.shape[0])
        self._spline = RectBivariateSpline(axis, axis, np.log(samples),
                                           kx=3, ky=3)
        digest = hashlib.sha256(samples.tobytes()).hexdigest()[:16]
        self._tag = f"grid(n={samples.shape[0]},extent={extent:g},sha={digest},delta={delta:g})"

    @property
    def tag(self):
        return self._tag

    def describe(self):
        return {"kind": "grid-sampled", "n": int(self.samples.shape[0]),
                "extent": self.extent, "delta": self.delta}

    def _ev(self, x, dx=0, dy=0):
        x = np.asarray(x, dtype=float)
        out = self._spline.ev(x[..., 0].ravel(), x[..., 1].ravel(),
                              dx=dx, dy=dy)
        return out.reshape(x.shape[:-1])

    def log_factor(self, x):
        return self._ev(x)

    def log_grad(self, x):
        return np.stack([self._ev(x, 1, 0), self._ev(x, 0, 1)], axis=-1)

    def log_hess(self, x):
        hxx = self._ev(x, 2, 0)
        hxy = self._ev(x, 1, 1)
        hyy = self._ev(x, 0, 2)
        return np.stack([np.stack([hxx, hxy], -1),
                         np.stack([hxy, hyy], -1)], -2)


def metric_from_config(cfg: dict) -> MetricModel:
    """Build a metric from a config mapping (kind, lambda, delta, ...)."""
    kind = cfg.get("kind", "conformal-radial")
    delta = float(cfg.get("delta", DEFAULT_DELTA))
    if kind == "euclidean":
        return EuclideanMetric(delta)
    if kind in ("conformal-radial", "conformal-exp"):
        return ExpConformalMetric(float(cfg.get("lambda", 0.1)), delta)
    if kind == "conformal-const":
        return ConstantConformalMetric(float(cfg["c"]), delta)
    if kind == "gaussian-lens":
        return GaussianLensMetric(float(cfg["amplitude"]),
                                  float(cfg.get("sigma", 0.4)), delta)
    if kind == "grid-sampled":
        data = np.load(cfg["path"])
        return GridMetric(data["c"], float(data["extent"]), delta)
    raise ValueError(f"unknown metric kind {kind!r}")


# --------------------------------------------------------------------------
# RK4 steps


def _col(h):
    h = np.asarray(h, dtype=float)
    return h[..., None] if h.ndim else h


def rk4_step(metric, x, v, h):
    """One RK4 step for every ray in the batch; h is a scalar or (B,)."""
    hc = _col(h)
    if metric.flat:
        return x + hc * v, v
    a = metric.accel
    k1v = a(x, v)
    k2x = v + 0.5 * hc * k1v
    k2v = a(x + 0.5 * hc * v, k2x)
    k3x = v + 0.5 * hc * k2v
    k3v = a(x + 0.5 * hc * k2x, k3x)
    k4x = v + hc * k3v
    k4v = a(x + hc * k3x, k4x)
    xn = x + hc / 6.0 * (v + 2 * k2x + 2 * k3x + k4x)
    vn = v + hc / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    return xn, vn


def rk4_step_jacobi(metric, x, v, J, Jd, h):
    """RK4 step together with its exact linearization.

    J, Jd have shape (B, P, 2): the sensitivities of x and v to P parameters.
    """
    hc = _col(h)
    hj = hc[..., None] if np.ndim(hc) else hc
    if metric.flat:
        return x + hc * v, v, J + hj * Jd, Jd
    a = metric.accel
    al = metric.accel_linear

    x1, v1, J1, D1 = x, v, J, Jd
    ax1, av1 = v1, a(x1, v1)
    aJ1, aD1 = D1, al(x1, v1, J1, D1)

    x2 = x + 0.5 * hc * ax1
    v2 = v + 0.5 * hc * av1
    J2 = J + 0.5 * hj * aJ1
    D2 = Jd + 0.5 * hj * aD1
    ax2, av2 = v2, a(x2, v2)
    aJ2, aD2 = D2, al(x2, v2, J2, D2)

    x3 = x + 0.5 * hc * ax2
    v3 = v + 0.5 * hc * av2
    J3 = J + 0.5 * hj * aJ2
    D3 = Jd + 0.5 * hj * aD2
    ax3, av3 = v3, a(x3, v3)
    aJ3, aD3 = D3, al(x3, v3, J3, D3)

    x4 = x + hc * ax3
    v4 = v + hc * av3
    J4 = J + hj * aJ3
    D4 = Jd + hj * aD3
    ax4, av4 = v4, a(x4, v4)
    aJ4, aD4 = D4, al(x4, v4, J4, D4)

    xn = x + hc / 6.0 * (ax1 + 2 * ax2 + 2 * ax3 + ax4)
    vn = v + hc / 6.0 * (av1 + 2 * av2 + 2 * av3 + av4)
    Jn = J + hj / 6.0 * (aJ1 + 2 * aJ2 + 2 * aJ3 + aJ4)
    Dn = Jd + hj / 6.0 * (aD1 + 2 * aD2 + 2 * aD3 + aD4)
    return xn, vn, Jn, Dn


def _step(metric, state, h):
    if state[2] is None:
        x, v = rk4_step(metric, state[0], state[1], h)
        return (x, v, None, None)
    return rk4_step_jacobi(metric, *state, h)


def _take(state, idx):
    return tuple(None if s is None else s[idx] for s in state)


def _put(dst, idx, src):
    for d, s in zip(dst, src):
        if d is not None:
            d[idx] = s


def _radius(x):
    return np.hypot(x[..., 0], x[..., 1])


def max_steps_for(metric, h):
    # a simple metric's geodesics in M1 are far shorter than this cap
    return int(math.ceil(50.0 * metric.r_M1 * math.sqrt(
        float(np.max(metric.factor(np.zeros((1, 2)))) + 1.0)) / h)) + 1000


# --------------------------------------------------------------------------
# exit tracing


@dataclasses.dataclass
class ExitResult:
    tau: np.ndarray
    x: np.ndarray
    v: np.ndarray
    J: np.ndarray | None = None
    Jd: np.ndarray | None = None


def _bisect_crossing(metric, state, h, radius, outward=True):
    """Sub-step s in (0, h] where |x| crosses radius.

    outward: inside at s=0 and outside at s=h.  Returns the state at the
    crossing, taken on the far side so the invariant f(lo) <= 0 < f(hi) holds.
    """
    n = state[0].shape[0]
    lo = np.zeros(n)
    hi = np.broadcast_to(np.asarray(h, dtype=float), (n,)).copy()
    x0, v0 = state[0], state[1]
    for _ in range(BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        xm, _ = rk4_step(metric, x0, v0, mid)
        out = _radius(xm) > radius
        far = out if outward else ~out
        hi = np.where(far, mid, hi)
        lo = np.where(far, lo, mid)
        if np.max(hi - lo) < 1e-15:
            break
    return hi, _step(metric, state, hi)


def trace_to_exit(metric, x, v, radius=None, h=DEFAULT_STEP, J=None, Jd=None,
                  record=False):
    """Flow each ray until it first leaves the disc of the given radius.

    Starts must be inside or on the circle.  Boundary starts pointing outward
    return tau = 0.  With record=True, also returns per-step samples
    (list of state tuples) and the number of full steps per ray.
    """
    radius = metric.r_M1 if radius is None else float(radius)
    x = np.array(x, dtype=float, ndmin=2)
    v = np.array(v, dtype=float, ndmin=2)
    if metric.flat and not record:
        return _flat_exit(x, v, radius, J, Jd)
    B = x.shape[0]
    jac = J is not None
    if jac:
        J = np.array(J, dtype=float)
        Jd = np.array(Jd, dtype=float)
    state = (x.copy(), v.copy(), None if not jac else J.copy(),
             None if not jac else Jd.copy())
    tau = np.zeros(B)
    final = [np.empty_like(x), np.empty_like(v),
             np.empty_like(J) if jac else None,
             np.empty_like(Jd) if jac else None]
    done = np.zeros(B, bool)
    r0 = _radius(x)
    tol = 1e-12 * max(radius, 1.0)
    # outward boundary starts exit immediately
    on_edge = r0 >= radius - tol
    outward = on_edge & (np.sum(x * v, axis=-1) >= 0)
    if np.any(outward):
        idx = np.nonzero(outward)[0]
        _put(final, idx, _take(state, idx))
        done[outward] = True
    active = np.nonzero(~done)[0]
    nsteps = np.zeros(B, int)
    samples = [] if record else None
    if record:
        samples.append(tuple(None if s is None else s.copy() for s in state))
    cap = max_steps_for(metric, h)
    k = 0
    while active.size:
        if k >= cap:
            raise TrappingError(
                f"{active.size} geodesic(s) did not exit within {cap} steps")
        sub = _take(state, active)
        new = _step(metric, sub, h)
        r_new = _radius(new[0])
        cross = r_new > radius
        if np.any(cross):
            ci = np.nonzero(cross)[0]
            s, fin = _bisect_crossing(metric, _take(sub, ci), h, radius)
            gi = active[ci]
            tau[gi] = k * h + s
            nsteps[gi] = k
            _put(final, gi, fin)
            done[gi] = True
        _put(state, active, new)
        k += 1
        if record:
            samples.append(tuple(None if s is None else s.copy()
                                 for s in state))
        active = active[~cross]
    res = ExitResult(tau, final[0], final[1], final[2], final[3])
    if record:
        return res, samples, nsteps
    return res


def _line_disc(x, v, radius):
    """Roots t_- <= t_+ of |x + t v| = radius (nan when the line misses)."""
    a = np.sum(v * v, -1)
    b = np.sum(x * v, -1)
    c = np.sum(x * x, -1) - radius * radius
    disc = b * b - a * c
    sq = np.sqrt(np.where(disc >= 0, disc, np.nan))
    return (-b - sq) / a, (-b + sq) / a


def _flat_exit(x, v, radius, J=None, Jd=None):
    # straight lines: the exit time solves a quadratic
    _, tp = _line_disc(x, v, radius)
    tau = np.where(np.isfinite(tp), np.maximum(tp, 0.0), 0.0)
    r0 = _radius(x)
    on_edge = r0 >= radius - 1e-12 * max(radius, 1.0)
    tau = np.where(on_edge & (np.sum(x * v, -1) >= 0), 0.0, tau)
    xe = x + tau[:, None] * v
    Je = None if J is None else J + tau[:, None, None] * Jd
    return ExitResult(tau, xe, v.copy(), Je, None if Jd is None else Jd.copy())


def exit_time(metric, x, v, boundary="M1", h=DEFAULT_STEP):
    """First exit time of unit-speed geodesics through dM or dM1."""
    radius = metric.r_M if boundary == "M" else metric.r_M1
    single = np.ndim(x) == 1
    res = trace_to_exit(metric, x, v, radius, h)
    return float(res.tau[0]) if single else res.tau


# --------------------------------------------------------------------------
# traces


@dataclasses.dataclass
class GeodesicTrace:
    """Samples of one geodesic at uniform step h plus the refined endpoint."""

    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    tau: float
    J: np.ndarray | None = None
    Jd: np.ndarray | None = None

    def speed_error(self, metric):
        return float(np.max(np.abs(metric.speed(self.x, self.v) - 1.0)))


def geodesic_flow(metric, x, v, jacobi=None, h=DEFAULT_STEP, radius=None):
    """Integrate geodesics from (x, v) until they leave M1.

    x, v: (2,) for one ray or (B, 2) for a batch.  jacobi: optional pair
    (J0, Jd0) with shapes (B, P, 2) giving initial variations.  Returns one
    GeodesicTrace per ray (a single trace for unbatched input).
    """
    single = np.ndim(x) == 1
    x = np.array(x, dtype=float, ndmin=2)
    v = np.array(v, dtype=float, ndmin=2)
    metric.check_domain(x)
    J0 = Jd0 = None
    if jacobi is not None:
        J0, Jd0 = jacobi
        J0 = np.array(J0, dtype=float)
        Jd0 = np.array(Jd0, dtype=float)
        if single and J0.ndim == 2:
            J0, Jd0 = J0[None], Jd0[None]
    res, samples, nsteps = trace_to_exit(metric, x, v, radius, h, J0, Jd0,
                                         record=True)
    traces = []
    for b in range(x.shape[0]):
        n = nsteps[b] if res.tau[b] > 0 else 0
        xs = [samples[k][0][b] for k in range(n + 1)]
        vs = [samples[k][1][b] for k in range(n + 1)]
        ts = [k * h for k in range(n + 1)]
        if res.tau[b] > ts[-1]:
            xs.append(res.x[b])
            vs.append(res.v[b])
            ts.append(res.tau[b])
        Js = Jds = None
        if J0 is not None:
            Js = [samples[k][2][b] for k in range(n + 1)]
            Jds = [samples[k][3][b] for k in range(n + 1)]
            if len(Js) < len(ts):
                Js.append(res.J[b])
                Jds.append(res.Jd[b])
            Js, Jds = np.array(Js), np.array(Jds)
        traces.append(GeodesicTrace(np.array(ts), np.array(xs), np.array(vs),
                                    float(res.tau[b]), Js, Jds))
    return traces[0] if single else traces


def flow_fixed(metric, x, v, T, h=DEFAULT_STEP, J=None, Jd=None):
    """Flow for time T (scalar or per ray; may be negative) without any
    boundary checks, using ceil(|T|/h) equal substeps per ray."""
    x = np.array(x, dtype=float, ndmin=2)
    v = np.array(v, dtype=float, ndmin=2)
    T = np.broadcast_to(np.asarray(T, dtype=float), (x.shape[0],))
    n = np.maximum(np.ceil(np.abs(T) / h).astype(int), 1)
    N = int(n.max())
    # rays needing fewer substeps finish early: pad with zero-length steps
    state = (x, v, None if J is None else np.array(J, dtype=float),
             None if Jd is None else np.array(Jd, dtype=float))
    hs = T / n
    for k in range(N):
        hk = np.where(k < n, hs, 0.0)
        state = _step(metric, state, hk)
    return state


# --------------------------------------------------------------------------
# passes through M


@dataclasses.dataclass
class Chord:
    """Where each ray (started on or outside dM) meets M."""

    hit: np.ndarray
    t_in: np.ndarray
    t_out: np.ndarray
    x_in: np.ndarray
    v_in: np.ndarray

    @property
    def length(self):
        return np.where(self.hit, self.t_out - self.t_in, 0.0)


def _bisect_value(metric, x0, v0, lo, hi, fn):
    """Bisection for a sign change of fn(state) on the sub-step [lo, hi];
    fn(lo) <= 0 < fn(hi)."""
    for _ in range(BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        xm, vm = rk4_step(metric, x0, v0, mid)
        pos = fn(xm, vm) > 0
        hi = np.where(pos, mid, hi)
        lo = np.where(pos, lo, mid)
        if np.max(hi - lo) < 1e-15:
            break
    return lo, hi


def chords(metric, x, v, h=DEFAULT_STEP, radius=None):
    """Entry and exit times of each ray through the disc of given radius
    (default dM).  Rays start on dM1 (or anywhere outside the disc) and are
    flowed until they leave M1 or have passed through the disc.
    """
    radius = metric.r_M if radius is None else float(radius)
    x = np.array(x, dtype=float, ndmin=2)
    v = np.array(v, dtype=float, ndmin=2)
    if metric.flat:
        tm, tp = _line_disc(x, v, radius)
        hit = np.isfinite(tm) & (tp > 0)
        t_in = np.where(hit, np.maximum(tm, 0.0), 0.0)
        t_out = np.where(hit, tp, 0.0)
        return Chord(hit, t_in, t_out, x + t_in[:, None] * v, v.copy())
    B = x.shape[0]
    hit = np.zeros(B, bool)
    t_in = np.zeros(B)
    t_out = np.zeros(B)
    x_in = np.zeros((B, 2))
    v_in = np.zeros((B, 2))
    cx, cv = x.copy(), v.copy()
    phase = np.zeros(B, int)  # 0 outside, 1 inside, 2 finished
    r0 = _radius(cx)
    inside0 = r0 <= radius
    if np.any(inside0):
        phase[inside0] = 1
        x_in[inside0] = cx[inside0]
        v_in[inside0] = cv[inside0]
        hit[inside0] = True
    outer = metric.r_M1 * (1 + 1e-12)
    cap = max_steps_for(metric, h)
    k = 0
    active = np.nonzero(phase < 2)[0]

    def rad_out(xx, vv):
        return _radius(xx) - radius

    def rad_in(xx, vv):
        return radius - _radius(xx)

    def radial_speed(xx, vv):
        return np.sum(xx * vv, axis=-1)

    while active.size:
        if k >= cap:
            raise TrappingError(
                f"{active.size} geodesic(s) did not exit within {cap} steps")
        xa, va = cx[active], cv[active]
        xn, vn = rk4_step(metric, xa, va, h)
        rn = _radius(xn)
        ph = phase[active]
        t0 = k * h
        finished = np.zeros(active.size, bool)

        # entries: outside -> inside within the step
        ent = (ph == 0) & (rn <= radius)
        if np.any(ent):
            i = np.nonzero(ent)[0]
            lo, hi = _bisect_value(metric, xa[i], va[i], np.zeros(i.size),
                                   np.full(i.size, h), rad_in)
            s = hi
            xe, ve = rk4_step(metric, xa[i], va[i], s)
            g = active[i]
            t_in[g] = t0 + s
            x_in[g], v_in[g] = xe, ve
            hit[g] = True
            phase[g] = 1

        # grazing: both ends outside but closest approach inside the step
        gz = (ph == 0) & (rn > radius) & (radial_speed(xa, va) < 0) & \
            (radial_speed(xn, vn) >= 0)
        if np.any(gz):
            i = np.nonzero(gz)[0]
            lo, hi = _bisect_value(metric, xa[i], va[i], np.zeros(i.size),
                                   np.full(i.size, h), radial_speed)
            xm, vm = rk4_step(metric, xa[i], va[i], hi)
            deep = _radius(xm) <= radius
            if np.any(deep):
                j = i[deep]
                smid = hi[deep]
                _, s_in = _bisect_value(metric, xa[j], va[j],
                                        np.zeros(j.size), smid, rad_in)
                s_out, s_out_hi = _bisect_value(metric, xa[j], va[j], smid,
                                                np.full(j.size, h), rad_out)
                xe, ve = rk4_step(metric, xa[j], va[j], s_in)
                g = active[j]
                t_in[g] = t0 + s_in
                t_out[g] = t0 + s_out_hi
                x_in[g], v_in[g] = xe, ve
                hit[g] = True
                phase[g] = 2
                finished[j] = True

        # exits: inside -> outside
        ex = (ph == 1) & (rn > radius)
        if np.any(ex):
            i = np.nonzero(ex)[0]
            _, s = _bisect_value(metric, xa[i], va[i], np.zeros(i.size),
                                 np.full(i.size, h), rad_out)
            g = active[i]
            t_out[g] = t0 + s
            phase[g] = 2
            finished[i] = True

        gone = (rn > outer) & (phase[active] == 0)
        phase[active[gone]] = 2
        finished |= gone
        cx[active], cv[active] = xn, vn
        active = active[~finished & (phase[active] < 2)]
        k += 1
    return Chord(hit, t_in, t_out, x_in, v_in)


def simpson_weights(n):
    """Composite Simpson weights for n (even) intervals of unit width."""
    if n % 2:
        raise ValueError("Simpson rule needs an even number of intervals")
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / 3.0


def sample_chords(metric, chord, h=DEFAULT_STEP, n=None):
    """Uniform samples of each hit ray across M for composite Simpson.

    All rays share n (even) intervals; ray i uses step L_i / n <= h.
    Returns (xs, vs, wts) with shapes (n+1, B, 2), (n+1, B, 2), (n+1, B);
    weights already include the per-ray step and vanish for missed rays.
    """
    L = chord.length
    if n is None:
        n = max(2, int(math.ceil(float(L.max(initial=0.0)) / h)))
        n += n % 2
    hs = L / n
    B = L.size
    xs = np.empty((n + 1, B, 2))
    vs = np.empty((n + 1, B, 2))
    if getattr(metric, "flat", False):
        t = np.arange(n + 1)[:, None] * hs[None, :]
        xs[:] = chord.x_in[None] + t[..., None] * chord.v_in[None]
        vs[:] = chord.v_in[None]
    else:
        x, v = chord.x_in.copy(), chord.v_in.copy()
        xs[0], vs[0] = x, v
        for k in range(n):
            x, v = rk4_step(metric, x, v, hs)
            xs[k + 1], vs[k + 1] = x, v
    w = simpson_weights(n)[:, None] * (hs * chord.hit)[None, :]
    return xs, vs, w


# --------------------------------------------------------------------------
# simplicity diagnostic


@dataclasses.dataclass
class SimplicityReport:
    passed: bool
    conjugate_margin: float
    convexity_margin: float
    leaf_convexity_margin: float
    worst_ray: tuple
    n_rays: int
    notes: list

    def to_dict(self):
        return dataclasses.asdict(self)


def second_fundamental_form(metric, r, n_theta=64):
    """Minimum over the circle |x| = r of the second fundamental form,
    evaluated with g-unit tangent T and inward unit normal N from the
    Christoffel symbols: II = g(nabla_T T, N).  Positive means convex."""
    th = np.linspace(0, 2 * np.pi, n_theta, endpoint=False)
    x = r * np.stack([np.cos(th), np.sin(th)], -1)
    c = metric.factor(x)
    T = np.stack([-np.sin(th), np.cos(th)], -1) / np.sqrt(c)[:, None]
    N = -np.stack([np.cos(th), np.sin(th)], -1) / np.sqrt(c)[:, None]
    G = christoffel(metric, x)
    # nabla_T T = dT/ds + Gamma(T, T); along the circle dT/ds = -x/(r^2 c)
    # (plus the change of the normalization, which is tangential)
    dT = -x / (r * r * c[:, None])
    acc = dT + np.einsum("bkij,bi,bj->bk", G, T, T)
    return float(np.min(c * np.sum(acc * N, axis=-1)))


def check_simplicity(metric, n_beta=16, n_alpha=33, h=2e-3, leaf_radii=None):
    """Numerical sweep for conjugate points and boundary/leaf convexity.

    The conjugate-point margin is min over rays and t > 0 of
    |J(t)| / (t |Jdot(0)|) for the Jacobi field with J(0) = 0 normal to the
    ray (Euclidean value 1; a zero means a conjugate point).
    """
    notes = []
    R1 = metric.r_M1
    betas = 2 * np.pi * np.arange(n_beta) / n_beta
    alphas = (np.arange(n_alpha) + 0.5) / n_alpha * np.pi - np.pi / 2
    bb, aa = np.meshgrid(betas, alphas, indexing="ij")
    bb, aa = bb.ravel(), aa.ravel()
    x0 = R1 * np.stack([np.cos(bb), np.sin(bb)], -1)
    ang = bb + np.pi + aa
    u = np.stack([np.cos(ang), np.sin(ang)], -1)
    v0 = metric.unit(x0, u)
    nrm = np.stack([-v0[:, 1], v0[:, 0]], -1)
    J0 = np.zeros((bb.size, 1, 2))
    Jd0 = nrm[:, None, :]
    try:
        res, samples, nsteps = trace_to_exit(metric, x0, v0, R1, h, J0, Jd0,
                                             record=True)
    except TrappingError as err:
        return SimplicityReport(False, 0.0, 0.0, 0.0, (), bb.size,
                                [f"trapped geodesic: {err}"])
    jd0 = metric.speed(x0, nrm)
    margin = np.full(bb.size, np.inf)
    for k in range(1, len(samples)):
        live = nsteps >= k
        if not np.any(live):
            break
        x, v, J, _ = samples[k]
        # component of J normal to the ray, measured in g
        vn = np.stack([-v[:, 1], v[:, 0]], -1)
        vn = vn / np.hypot(vn[:, 0], vn[:, 1])[:, None]
        jn = np.sum(J[:, 0, :] * vn, axis=-1) * np.sqrt(metric.factor(x))
        m = jn / (k * h * jd0)
        margin = np.where(live, np.minimum(margin, m), margin)
    worst = int(np.argmin(margin))
    conj = float(margin[worst])
    conv = second_fundamental_form(metric, metric.r_M)
    conv_scale = conv / _euclid_sff(metric, metric.r_M)
    if leaf_radii is None:
        leaf_radii = np.linspace(0.55, R1, 14)
    leaf = min(second_fundamental_form(metric, r) for r in leaf_radii)
    passed = bool(conj > 0 and conv > 0 and leaf > 0)
    if conj <= 0:
        notes.append("Jacobi field vanished before exit (conjugate points)")
    if conv <= 0:
        notes.append("boundary of M is not strictly convex")
    if leaf <= 0:
        notes.append("a foliation leaf is not strictly convex")
    return SimplicityReport(passed, conj, float(conv_scale), float(leaf),
                            (float(bb[worst]), float(aa[worst])), bb.size,
                            notes)


def _euclid_sff(metric, r):
    # normalization so that the Euclidean unit circle has margin 1
    return 1.0 / r
