"""Range-adapted fractional Sobolev norms on sinograms and the (ND) check.

A norm is described by a SobolevSpec: an order s and a list of windows.
Each window carries a partition weight w_j (the weights of a spec sum to
one over the ray grid), a chart in which derivatives are taken, and the
subset y' of that chart's coordinates that are differentiated.  The
window function applied to h is sqrt(w_j), so that at s = 0 every spec
reproduces the coordinate L2 norm exactly.

All charts used here are relabelings of the FAN (or PARALLEL) sample grid
that preserve coordinate area, so windows in sheared fan charts are
realized by a Fourier phase shift along the periodic axis instead of
resampling.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from . import manifold as mf
from . import rays as ry
from . import tensor as tn

COLLAR = (0.2, 0.3)
ND_THRESHOLD = 1e-3
PRESETS = ("FULL", "OFFSET", "FAN_DIR", "FAN_BASE_TANGENT")


class ContractError(ValueError):
    """Raised when a norm is requested for data outside its domain."""


# --------------------------------------------------------------------------
# windows and specs


@dataclasses.dataclass(frozen=True)
class Window:
    """One chart window.

    weight(grid) returns the partition weight on the sample grid; shift is
    None for the sample chart itself, else the shear alpha -> shift(alpha)
    with beta = zeta + shift(alpha); yprime lists differentiated axes of
    the window chart by index.
    """

    label: str
    yprime: tuple
    weight: object
    chart: object = None
    shift: object = None

    def describe(self):
        return {"label": self.label, "yprime": list(self.yprime),
                "chart": None if self.chart is None else self.chart.describe()}


@dataclasses.dataclass(frozen=True)
class SobolevSpec:
    name: str
    s: float
    windows: tuple
    grid_kind: str = "FAN"

    def with_order(self, s):
        return dataclasses.replace(self, s=float(s))

    def full(self):
        """Same windows, every chart coordinate differentiated."""
        return dataclasses.replace(
            self, name=self.name + "+full",
            windows=tuple(dataclasses.replace(w, yprime=(0, 1))
                          for w in self.windows))

    def describe(self):
        return {"name": self.name, "s": self.s, "grid": self.grid_kind,
                "windows": [w.describe() for w in self.windows]}

    def partition(self, grid):
        return [np.broadcast_to(w.weight(grid), grid.shape)
                for w in self.windows]


def collar_weight(rho, collar=COLLAR):
    """1 on leaves rho <= collar[0], 0 beyond collar[1], smooth between;
    returned as (w_collar, w_interior) with w_collar + w_interior = 1."""
    t = tn.smooth_step((np.asarray(rho, dtype=float) - collar[0])
                       / (collar[1] - collar[0]))
    wc = np.cos(0.5 * np.pi * t) ** 2
    return wc, 1.0 - wc


def _ones(grid):
    return np.ones(grid.shape)


def _rho_columns(metric, grid):
    alpha = grid.axes[1]
    return ry.rho_of_alpha(metric, alpha)


def _collar_pair(metric, collar):
    def wc(grid):
        return collar_weight(_rho_columns(metric, grid), collar)[0][None, :]

    def wi(grid):
        return collar_weight(_rho_columns(metric, grid), collar)[1][None, :]

    return wc, wi


def make_spec(preset, metric, s=0.5, collar=COLLAR, h=mf.DEFAULT_STEP):
    """Named FAN-grid presets.

    FULL: one window, derivatives in both fan coordinates.
    FAN_DIR: one window, derivatives in the fan angle only.
    OFFSET: near the boundary of Gamma, derivatives across foliation
        leaves at a fixed tangency azimuth; inside, fan-angle derivatives.
    FAN_BASE_TANGENT: near the boundary of Gamma, derivatives that move the
        base point along dM1 at a fixed direction; inside, fan-angle
        derivatives.
    """
    preset = str(preset).upper()
    fan = ry.FanChart()
    if preset == "FULL":
        return SobolevSpec("FULL", float(s), (Window("all", (0, 1), _ones,
                                                     fan),))
    if preset == "FAN_DIR":
        return SobolevSpec("FAN_DIR", float(s),
                           (Window("all", (1,), _ones, fan),))
    if preset in ("OFFSET", "FAN_BASE_TANGENT"):
        if not getattr(metric, "radial", False):
            raise ValueError(f"{preset} needs a rotation-invariant metric")
        wc, wi = _collar_pair(metric, collar)
        chart = ry.leaf_chart(metric, h) if preset == "OFFSET" \
            else ry.absolute_direction_chart()
        return SobolevSpec(preset, float(s), (
            Window("collar", (1,), wc, chart, chart.shift),
            Window("interior", (1,), wi, fan)))
    raise ValueError(f"unknown spec preset {preset!r}; "
                     f"expected one of {', '.join(PRESETS)}")


def leaf_full_spec(metric, s=0.5, collar=COLLAR, h=mf.DEFAULT_STEP):
    """FULL norm with the collar measured in leaf coordinates."""
    wc, wi = _collar_pair(metric, collar)
    chart = ry.leaf_chart(metric, h)
    return SobolevSpec("FULL_LEAF", float(s), (
        Window("collar", (0, 1), wc, chart, chart.shift),
        Window("interior", (0, 1), wi, ry.FanChart())))


def parallel_spec(yprime=("p",), s=0.5):
    """Single-window spec on a PARALLEL grid (axes p, phi)."""
    idx = tuple(sorted(("p", "phi").index(n) for n in yprime))
    return SobolevSpec("PARALLEL_" + "_".join(yprime), float(s),
                       (Window("all", idx, _ones, ry.ParallelChart()),),
                       grid_kind="PARALLEL")


def spec_from_config(cfg, metric):
    """Preset name, or a mapping {preset|yprime, s, collar, grid}."""
    if isinstance(cfg, str):
        return make_spec(cfg, metric)
    s = float(cfg.get("s", 0.5))
    if cfg.get("grid", "FAN").upper() == "PARALLEL":
        return parallel_spec(tuple(cfg.get("yprime", ("p",))), s)
    if "preset" not in cfg:
        raise ValueError("spec config needs 'preset' or grid PARALLEL")
    return make_spec(cfg["preset"], metric, s,
                     tuple(cfg.get("collar", COLLAR)))


# --------------------------------------------------------------------------
# norms


def _shear(g, beta_axis_len, shift_values):
    """g(zeta, alpha) = g_fan(zeta + shift(alpha), alpha) by a phase shift
    along the periodic first axis."""
    k = np.fft.fftfreq(beta_axis_len, 1.0 / beta_axis_len)
    G = np.fft.fft(g, axis=0)
    G *= np.exp(1j * np.outer(k, shift_values))
    return np.fft.ifft(G, axis=0)


def _window_energy(g, grid, yprime, s):
    """Integral of (1 + |xi'|^2)^s |F_{y'} g|^2 over the grid."""
    xi2 = np.zeros(())
    factor = 1.0
    for ax, (d, per) in enumerate(zip(grid.spacing, grid.chart.periodic)):
        n = g.shape[ax]
        if ax in yprime:
            nfft = n if per else 2 * n
            g = np.fft.fft(g, n=nfft, axis=ax)
            xi = 2 * np.pi * np.fft.fftfreq(nfft, d)
            shape = [1] * g.ndim
            shape[ax] = nfft
            xi2 = xi2 + xi.reshape(shape) ** 2
            factor *= d / nfft
        else:
            factor *= d
    mult = (1.0 + xi2) ** s if s != 0 else 1.0
    return float(np.sum(mult * np.abs(g) ** 2) * factor)


def _check_sino(spec, h):
    if not getattr(h, "supported", False):
        raise ContractError("the norm is defined for sinograms supported "
                            "in Gamma; the support flag is not set")
    if h.grid.chart.kind != spec.grid_kind:
        raise ContractError(f"spec {spec.name} expects a {spec.grid_kind} "
                            f"grid, got {h.grid.chart.kind}")


def window_energies(spec: SobolevSpec, h):
    """Squared norm contribution of each window."""
    _check_sino(spec, h)
    out = []
    for w in spec.windows:
        chi = np.sqrt(np.broadcast_to(w.weight(h.grid), h.grid.shape))
        g = chi * h.values
        if w.shift is not None:
            g = _shear(g, g.shape[0], w.shift(h.grid.axes[1]))
        out.append(_window_energy(g, h.grid, w.yprime, spec.s))
    return out


def norm_hbar(spec: SobolevSpec, h):
    return math.sqrt(sum(window_energies(spec, h)))


def norm_h_full(spec: SobolevSpec, h):
    """The norm on the same windows with all coordinates differentiated."""
    return norm_hbar(spec.full(), h)


def l2_chart(h):
    """Coordinate L2 norm of a sinogram (the s = 0 member of the family)."""
    return math.sqrt(float(np.sum(h.values ** 2)) * np.prod(h.grid.spacing))


# --------------------------------------------------------------------------
# (ND)


@dataclasses.dataclass
class NDReport:
    values: np.ndarray  # per ray: minimum over sampled t with gamma(t) in M
    t_argmin: np.ndarray
    minimum: float
    worst_ray: int
    threshold: float
    n_samples: int
    degenerate: int

    @property
    def passed(self):
        return bool(self.minimum > self.threshold)

    def summary(self):
        return {"minimum": self.minimum, "passed": self.passed,
                "threshold": self.threshold, "worst_ray": self.worst_ray,
                "samples": self.n_samples, "degenerate": self.degenerate}


def _nd_columns(x, v, J, Jd, yprime, eps=1e-14):
    """Row entries: normal parts of the y' Jacobi fields, each normalized
    by the phase-space size (|J_perp|^2 + |J'_perp|^2)^(1/2)."""
    n = ry.perp(v)
    n = n / np.linalg.norm(n, axis=-1, keepdims=True)
    cols = []
    degenerate = np.zeros(x.shape[0], dtype=bool)
    for j in yprime:
        a = np.sum(J[:, j] * n, -1)
        b = np.sum(Jd[:, j] * n, -1)
        size = np.hypot(a, b)
        bad = size < eps
        degenerate |= bad
        cols.append(np.where(bad, 0.0, a / np.where(bad, 1.0, size)))
    return np.stack(cols, -1), degenerate


def nd_check(metric, chart, yprime, coords, h=2e-3, t_stride=1,
             threshold=ND_THRESHOLD):
    """Smallest singular value of the projected y' Jacobi row at samples
    gamma(t) in M along each ray given by chart coordinates."""
    coords = np.array(coords, dtype=float, ndmin=2)
    yprime = tuple(yprime)
    x0, v0 = chart.start(metric, coords)
    J0, Jd0 = chart.start_jacobian(metric, coords)
    B = coords.shape[0]
    best = np.full(B, np.inf)
    targ = np.full(B, np.nan)
    degenerate = np.zeros(B, dtype=bool)
    nsamp = 0

    def visit(k, idx, x, v, J, Jd):
        nonlocal nsamp
        inside = np.hypot(x[:, 0], x[:, 1]) <= metric.r_M + 1e-12
        if not np.any(inside):
            return
        cols, deg = _nd_columns(x[inside], v[inside], J[inside],
                                Jd[inside], yprime)
        val = np.linalg.norm(cols, axis=-1)
        idx = idx[inside]
        better = val < best[idx]
        best[idx[better]] = val[better]
        targ[idx[better]] = k * h
        degenerate[idx] |= deg
        nsamp += idx.size

    idx = np.arange(B)
    x, v, J, Jd = x0, v0, J0, Jd0
    R1 = metric.r_M1
    k = 0
    while idx.size:
        if k % t_stride == 0:
            visit(k, idx, x, v, J, Jd)
        x, v, J, Jd = mf.rk4_step_jacobi(metric, x, v, J, Jd, h)
        live = np.hypot(x[:, 0], x[:, 1]) <= R1
        if not np.all(live):
            idx, x, v, J, Jd = idx[live], x[live], v[live], J[live], Jd[live]
        k += 1
    vals = np.where(np.isfinite(best), best, np.nan)
    hit = np.isfinite(vals)
    if not np.any(hit):
        return NDReport(vals, targ, math.inf, -1, threshold, 0, 0)
    worst = int(np.nanargmin(vals))
    return NDReport(vals, targ, float(vals[worst]), worst, threshold, nsamp,
                    int(degenerate.sum()))


def nd_check_spec(metric, spec: SobolevSpec, grid, h=2e-3, t_stride=1,
                  threshold=ND_THRESHOLD, min_weight=1e-12):
    """(ND) for every window of a spec on the rays where its weight is
    positive; returns the window-wise reports and the overall minimum."""
    reports = {}
    coords = grid.coords()
    for w in spec.windows:
        wt = np.broadcast_to(w.weight(grid), grid.shape).ravel()
        sel = wt > min_weight
        c = coords[sel]
        if w.shift is not None:
            c = np.stack([ry.wrap(c[:, 0] - w.shift(c[:, 1])), c[:, 1]], -1)
        reports[w.label] = nd_check(metric, w.chart, w.yprime, c, h,
                                    t_stride, threshold)
    overall = min(r.minimum for r in reports.values())
    return reports, overall
