"""Weighted geodesic X-ray transform, its Santalo adjoint, and N = I* I.

Two evaluation routes are provided.

direct
    Trace every grid ray (forward) or every (node, direction) pair (adjoint)
    on its own.  Works for any metric, weight and chart.

rotational
    For radial metrics, rotation-invariant weights and the standard fan grid
    on dM1, the rays through beta are rotations of the beta = 0 rays.  Only
    those are traced; their samples are folded into interpolation kernels on
    a polar grid and the remaining rotations are applied with FFTs along the
    angular axis.  The adjoint is built the same way from backward traces of
    polar nodes on the positive x axis.

Both routes share quadrature conventions (Simpson along rays, trapezoid on
the direction circle, bilinear interpolation) and agree to interpolation
accuracy.
"""

from __future__ import annotations

import collections
import dataclasses
import math

import numpy as np

from . import manifold as mf
from . import rays as ry
from . import tensor as tn

DEFAULT_NDIR = 256
_PLAN_CACHE_SIZE = 12  # both default metrics, m = 0..2, forward and adjoint


# --------------------------------------------------------------------------
# weights and sinograms


@dataclasses.dataclass(frozen=True)
class WeightModel:
    """Real weight kappa(x, direction angle); kappa == 1 by default.

    rotation_invariant means kappa(R x, a + phi) = kappa(x, a) for every
    rotation R by phi, which the rotational route relies on.
    """

    func: object = None
    tag: str = "1"
    rotation_invariant: bool = True

    def __call__(self, x, angle):
        x = np.asarray(x, dtype=float)
        if self.func is None:
            return np.ones(x.shape[:-1])
        return np.asarray(self.func(x, angle), dtype=float)

    @classmethod
    def constant(cls):
        return cls()


@dataclasses.dataclass
class Sinogram:
    grid: ry.RayGrid
    values: np.ndarray
    m: int
    metric_tag: str = ""
    weight_tag: str = "1"
    supported: bool = True

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError("sinogram values do not match the ray grid")

    def with_values(self, values, supported=None):
        return dataclasses.replace(
            self, values=np.asarray(values, dtype=float),
            supported=self.supported if supported is None else supported)

    def __add__(self, other):
        return self.with_values(self.values + other.values)

    def __sub__(self, other):
        return self.with_values(self.values - other.values)

    def __mul__(self, a):
        return self.with_values(self.values * float(a))

    __rmul__ = __mul__


def sino_inner(a: Sinogram, b: Sinogram):
    """L2_mu inner product on a common ray grid."""
    if a.grid.shape != b.grid.shape:
        raise ValueError("sinograms live on different grids")
    return float(np.sum(a.values * b.values * a.grid.weights))


def sino_norm(a: Sinogram):
    return math.sqrt(max(sino_inner(a, a), 0.0))


@dataclasses.dataclass
class AnalyticField:
    """A field given by a function x -> components (C, ...)."""

    order: int
    func: object
    metric_tag: str = ""

    def evaluate(self, x):
        return np.asarray(self.func(np.asarray(x, dtype=float)), dtype=float)


def _check_m(m):
    if m not in tn.N_COMPONENTS:
        raise ValueError(f"unsupported tensor order {m!r}; expected 0, 1 or 2")


def _angle(v):
    return np.arctan2(v[..., 1], v[..., 0])


def _rotational_ok(metric, weight, grid):
    return (getattr(metric, "radial", False) and weight.rotation_invariant
            and grid.chart.kind == "FAN" and grid.chart.base_radius is None)


class _LRU(collections.OrderedDict):
    def get_or(self, key, build):
        if key in self:
            self.move_to_end(key)
            return self[key]
        val = build()
        self[key] = val
        while len(self) > _PLAN_CACHE_SIZE:
            self.popitem(last=False)
        return val


_PLANS = _LRU()


def clear_plans():
    _PLANS.clear()


# --------------------------------------------------------------------------
# forward


def forward(metric, weight, f, grid: ry.RayGrid, h=mf.DEFAULT_STEP,
            method="auto"):
    """I_{m,kappa} f sampled on a ray grid.

    f: SymTensorField (taken as supported in M, only its values on M are
    integrated) or AnalyticField.  method: 'auto', 'direct' or 'rotational'.
    """
    weight = weight or WeightModel()
    m = f.order
    _check_m(m)
    use_rot = method == "rotational" or (
        method == "auto" and isinstance(f, tn.SymTensorField)
        and _rotational_ok(metric, weight, grid))
    if use_rot:
        if not _rotational_ok(metric, weight, grid) or \
                not isinstance(f, tn.SymTensorField):
            raise ValueError("the rotational route needs a radial metric, a "
                             "rotation-invariant weight, a grid field and the "
                             "fan grid on dM1")
        plan = _forward_plan(metric, weight, grid, m, h, f.grid)
        vals = plan.apply(f)
    else:
        vals = _forward_direct(metric, weight, f, grid, h)
    return Sinogram(grid, vals, m, metric.tag, weight.tag, True)


def _forward_direct(metric, weight, f, grid, h, batch=2048):
    coords = grid.coords()
    out = np.zeros(coords.shape[0])
    for s in range(0, coords.shape[0], batch):
        c = coords[s:s + batch]
        x0, v0 = grid.chart.start(metric, c)
        ch = mf.chords(metric, x0, v0, h)
        if not np.any(ch.hit):
            continue
        idx = np.nonzero(ch.hit)[0]
        sub = mf.Chord(ch.hit[idx], ch.t_in[idx], ch.t_out[idx],
                       ch.x_in[idx], ch.v_in[idx])
        xs, vs, w = mf.sample_chords(metric, sub, h)
        vals = f.evaluate(xs)
        integrand = tn.contract(vals, vs, f.order) * weight(xs, _angle(vs))
        out[s + idx] = np.sum(w * integrand, axis=0)
    return out.reshape(grid.shape)


@dataclasses.dataclass
class _ForwardPlan:
    m: int
    n_beta: int
    n_alpha: int
    up: int
    dr: float
    n_r: int
    khat: np.ndarray  # (L, J, C * n_r), conjugated spectra of the kernels

    def polar_field(self, f):
        n_phi = self.n_beta * self.up
        rho = np.arange(self.n_r) * self.dr
        phi = 2 * np.pi * np.arange(n_phi) / n_phi
        R, P = np.meshgrid(rho, phi, indexing="ij")
        pts = np.stack([R * np.cos(P), R * np.sin(P)], -1)
        vals = f.evaluate(pts)
        return _to_polar_frame(vals, np.cos(P), np.sin(P), self.m)

    def apply(self, f):
        F = self.polar_field(f)  # (C, n_r, n_phi)
        C = F.shape[0]
        Fh = np.fft.rfft(F, axis=-1)  # (C, n_r, L)
        Fh = Fh.reshape(C * self.n_r, -1).T[:, :, None]  # (L, CI, 1)
        Sh = np.matmul(self.khat, Fh)[..., 0]  # (L, J)
        S = np.fft.irfft(Sh, n=self.n_beta * self.up, axis=0)
        return S[::self.up]  # (n_beta, n_alpha)


def _to_polar_frame(vals, c, s, m):
    """Covariant Cartesian components -> components in (e_r, e_phi)."""
    if m == 0:
        return vals
    if m == 1:
        return np.stack([vals[0] * c + vals[1] * s,
                         -vals[0] * s + vals[1] * c])
    f11, f12, f22 = vals
    return np.stack([f11 * c * c + 2 * f12 * c * s + f22 * s * s,
                     -f11 * c * s + f12 * (c * c - s * s) + f22 * c * s,
                     f11 * s * s - 2 * f12 * c * s + f22 * c * c])


def _from_polar_frame(vals, c, s, m):
    """Polar-frame components -> Cartesian (same rule for co- and
    contravariant tensors, since the frame is orthonormal)."""
    if m == 0:
        return vals
    if m == 1:
        return np.stack([vals[0] * c - vals[1] * s,
                         vals[0] * s + vals[1] * c])
    a, b, d = vals
    return np.stack([a * c * c - 2 * b * c * s + d * s * s,
                     a * c * s + b * (c * c - s * s) - d * c * s,
                     a * s * s + 2 * b * c * s + d * c * c])


def _polar_products(v, x, m):
    """Products of the velocity's polar-frame components matching the
    contraction f_{i..} v^i.. in storage order (off-diagonal counted twice)."""
    r = np.hypot(x[..., 0], x[..., 1])
    safe = np.where(r > 0, r, 1.0)
    er = np.where((r > 0)[..., None], x / safe[..., None],
                  np.array([1.0, 0.0]))
    vr = np.sum(v * er, -1)
    vp = ry.cross(er, v)
    if m == 0:
        return np.ones((1,) + vr.shape)
    if m == 1:
        return np.stack([vr, vp])
    return np.stack([vr * vr, 2 * vr * vp, vp * vp])


def _forward_plan(metric, weight, grid, m, h, fgrid, up=None,
                  radial_refine=2.0):
    # the polar grid is twice as fine radially as the field grid; up > 1
    # refines the angular axis so the arc spacing on dM stays within 1.5
    # field cells even for coarse ray grids
    n_beta, n_alpha = grid.shape
    if up is None:
        need = 2 * math.pi * metric.r_M / (1.5 * fgrid.h)
        up = max(1, int(math.ceil(need / n_beta)))
    dr = fgrid.h / radial_refine
    n_r = int(math.ceil(metric.r_M / dr)) + 2
    key = ("fwd", metric.tag, weight.tag, grid.key(), m, h, up, n_r, dr)
    return _PLANS.get_or(key, lambda: _build_forward_plan(
        metric, weight, grid, m, h, up, n_r, dr))


def _build_forward_plan(metric, weight, grid, m, h, up, n_r, dr):
    n_beta, n_alpha = grid.shape
    alpha = grid.axes[1]
    chart = ry.FanChart()
    x0, v0 = chart.start(metric, np.stack([np.zeros(n_alpha), alpha], -1))
    ch = mf.chords(metric, x0, v0, h)
    xs, vs, w = mf.sample_chords(metric, ch, h)  # (S, J, 2), (S, J)
    kap = weight(xs, _angle(vs))
    prods = _polar_products(vs, xs, m) * (w * kap)[None]  # (C, S, J)
    C = prods.shape[0]
    n_phi = n_beta * up
    dphi = 2 * np.pi / n_phi
    rho = np.hypot(xs[..., 0], xs[..., 1])
    phi = np.mod(_angle(xs), 2 * np.pi)
    ri = rho / dr
    i0 = np.clip(np.floor(ri).astype(int), 0, n_r - 2)
    fr = ri - i0
    pk = phi / dphi
    k0 = np.floor(pk).astype(int)
    fk = pk - k0
    k0 %= n_phi
    k1 = (k0 + 1) % n_phi
    J = np.broadcast_to(np.arange(n_alpha), rho.shape)
    size = n_alpha * C * n_r * n_phi
    K = np.zeros(size)
    for c in range(C):
        pc = prods[c]
        for di, wr in ((0, 1 - fr), (1, fr)):
            for kk, wk in ((k0, 1 - fk), (k1, fk)):
                idx = ((J * C + c) * n_r + (i0 + di)) * n_phi + kk
                K += np.bincount(idx.ravel(), (pc * wr * wk).ravel(),
                                 minlength=size)
    K = K.reshape(n_alpha, C * n_r, n_phi)
    Kh = np.conj(np.fft.rfft(K, axis=-1))  # (J, CI, L)
    Kh = np.ascontiguousarray(np.transpose(Kh, (2, 0, 1)))
    return _ForwardPlan(m, n_beta, n_alpha, up, dr, n_r, Kh)


# --------------------------------------------------------------------------
# adjoint


def adjoint(metric, weight, w: Sinogram, field_grid=None, n_dir=DEFAULT_NDIR,
            h=mf.DEFAULT_STEP, method="auto"):
    """Santalo backprojection I*_{m,kappa} w as a covariant field on M1.

    For each node x and each of n_dir directions the geodesic is traced
    back to dM1 and w is read off at its entry coordinates.  Nodes beyond
    dM1 receive the value at the same azimuth on dM1.
    """
    weight = weight or WeightModel()
    field_grid = field_grid or tn.FieldGrid()
    m = w.m
    _check_m(m)
    if w.grid.chart.kind != "FAN" or w.grid.chart.base_radius is not None:
        raise ValueError("the adjoint expects a sinogram on the fan grid of dM1")
    use_rot = method == "rotational" or (
        method == "auto" and _rotational_ok(metric, weight, w.grid))
    if use_rot:
        if not _rotational_ok(metric, weight, w.grid):
            raise ValueError("the rotational route needs a radial metric and "
                             "a rotation-invariant weight")
        plan = _adjoint_plan(metric, weight, w.grid, m, h, field_grid, n_dir)
        data = plan.apply(w.values, field_grid)
    else:
        data = _adjoint_direct(metric, weight, w, field_grid, n_dir, h)
    return tn.SymTensorField(m, data, field_grid, metric.tag, "M1")


def _fan_lookup(grid, beta, alpha):
    """Bilinear weights of fan grid nodes at (beta, alpha): periodic in
    beta, clamped in alpha."""
    n_beta, n_alpha = grid.shape
    db = 2 * np.pi / n_beta
    a0, da = grid.axes[1][0], grid.spacing[1]
    pb = np.mod(beta, 2 * np.pi) / db
    b0 = np.floor(pb).astype(int)
    fb = pb - b0
    b0 %= n_beta
    b1 = (b0 + 1) % n_beta
    pa = (alpha - a0) / da
    j0 = np.clip(np.floor(pa).astype(int), 0, n_alpha - 2)
    fa = np.clip(pa - j0, 0.0, 1.0)
    return ((b0, j0, (1 - fb) * (1 - fa)), (b1, j0, fb * (1 - fa)),
            (b0, j0 + 1, (1 - fb) * fa), (b1, j0 + 1, fb * fa))


def _entry_coords(metric, x, v, h):
    """Fan coordinates on dM1 of the geodesics through (x, v)."""
    res = mf.trace_to_exit(metric, x, -v, metric.r_M1, h)
    xe, ve = res.x, -res.v
    beta = np.arctan2(xe[:, 1], xe[:, 0])
    nu = -xe / np.hypot(xe[:, 0], xe[:, 1])[:, None]
    alpha = np.arctan2(ry.cross(nu, ve), np.sum(nu * ve, -1))
    return beta, alpha


def _direction_set(n_dir):
    return 2 * np.pi * np.arange(n_dir) / n_dir


def _adjoint_direct(metric, weight, w, fgrid, n_dir, h, batch=65536):
    pts = fgrid.points().reshape(-1, 2)
    r = np.hypot(pts[:, 0], pts[:, 1])
    R1 = metric.r_M1
    scale = np.where(r > R1, R1 / np.maximum(r, 1e-300), 1.0)
    q = pts * scale[:, None]
    psi = _direction_set(n_dir)
    U = ry.unit_vec(psi)
    C = tn.N_COMPONENTS[w.m]
    out = np.zeros((C, q.shape[0]))
    dsig = 2 * np.pi / n_dir
    nodes_per = max(1, batch // n_dir)
    for s in range(0, q.shape[0], nodes_per):
        xq = q[s:s + nodes_per]
        nb = xq.shape[0]
        X = np.repeat(xq, n_dir, 0)
        V = metric.unit(X, np.tile(U, (nb, 1)))
        beta, alpha = _entry_coords(metric, X, V, h)
        val = np.zeros(X.shape[0])
        for b, j, wt in _fan_lookup(w.grid, beta, alpha):
            val += wt * w.values[b, j]
        val *= weight(X, _angle(V)) * dsig
        prods = tn.direction_products(V, w.m)  # (C, nb * n_dir)
        acc = (prods * val).reshape(C, nb, n_dir).sum(-1)
        cm = metric.factor(xq) ** w.m
        out[:, s:s + nb] = acc * cm
    return out.reshape(C, fgrid.n, fgrid.n)


@dataclasses.dataclass
class _AdjointPlan:
    m: int
    n_beta: int
    rho: np.ndarray
    cm: np.ndarray  # c(rho)^m, lowering factor
    hhat: np.ndarray  # (L, C * n_rho, n_alpha), conjugated spectra

    def polar_values(self, w):
        wh = np.fft.rfft(w, axis=0)[:, :, None]  # (L, J, 1)
        A = np.matmul(self.hhat, wh)[..., 0]  # (L, C * n_rho)
        A = np.fft.irfft(A, n=self.n_beta, axis=0)  # (n_beta, C * n_rho)
        C = tn.N_COMPONENTS[self.m]
        return A.T.reshape(C, self.rho.size, self.n_beta)

    def apply(self, w, fgrid):
        A = self.polar_values(w)
        phi = 2 * np.pi * np.arange(self.n_beta) / self.n_beta
        c, s = np.cos(phi)[None, :], np.sin(phi)[None, :]
        A = _from_polar_frame(A, c, s, self.m) * self.cm[None, :, None]
        pts = fgrid.points()
        r = np.hypot(pts[..., 0], pts[..., 1])
        ph = np.mod(np.arctan2(pts[..., 1], pts[..., 0]), 2 * np.pi)
        dr = self.rho[1] - self.rho[0]
        pr = np.clip(r, 0, self.rho[-1]) / dr
        i0 = np.clip(np.floor(pr).astype(int), 0, self.rho.size - 2)
        fr = np.clip(pr - i0, 0.0, 1.0)
        dphi = 2 * np.pi / self.n_beta
        pk = ph / dphi
        k0 = np.floor(pk).astype(int)
        fk = pk - k0
        k0 %= self.n_beta
        k1 = (k0 + 1) % self.n_beta
        out = ((1 - fr) * (1 - fk) * A[:, i0, k0] + fr * (1 - fk) * A[:, i0 + 1, k0]
               + (1 - fr) * fk * A[:, i0, k1] + fr * fk * A[:, i0 + 1, k1])
        return out


def _adjoint_plan(metric, weight, grid, m, h, fgrid, n_dir, radial_refine=1.0):
    dr = fgrid.h / radial_refine
    n_rho = int(math.ceil(metric.r_M1 / dr)) + 1
    key = ("adj", metric.tag, weight.tag, grid.key(), m, h, n_dir, n_rho)
    return _PLANS.get_or(key, lambda: _build_adjoint_plan(
        metric, weight, grid, m, h, n_dir, n_rho))


def _build_adjoint_plan(metric, weight, grid, m, h, n_dir, n_rho):
    n_beta, n_alpha = grid.shape
    rho = np.linspace(0.0, metric.r_M1, n_rho)
    psi = _direction_set(n_dir)
    X = np.repeat(np.stack([rho, np.zeros(n_rho)], -1), n_dir, 0)
    V = metric.unit(X, np.tile(ry.unit_vec(psi), (n_rho, 1)))
    beta, alpha = _entry_coords(metric, X, V, h)
    val = weight(X, _angle(V)) * (2 * np.pi / n_dir)
    prods = tn.direction_products(V, m)  # polar frame == Cartesian at phi=0
    C = prods.shape[0]
    node = np.repeat(np.arange(n_rho), n_dir)
    size = C * n_rho * n_beta * n_alpha
    H = np.zeros(size)
    for c in range(C):
        pc = prods[c] * val
        for b, j, wt in _fan_lookup(grid, beta, alpha):
            idx = ((c * n_rho + node) * n_beta + b) * n_alpha + j
            H += np.bincount(idx, pc * wt, minlength=size)
    H = H.reshape(C * n_rho, n_beta, n_alpha)
    Hh = np.conj(np.fft.rfft(H, axis=1))  # (CI, L, J)
    Hh = np.ascontiguousarray(np.transpose(Hh, (1, 0, 2)))
    cm = metric.factor(np.stack([rho, np.zeros(n_rho)], -1)) ** m
    return _AdjointPlan(m, n_beta, rho, cm, Hh)


# --------------------------------------------------------------------------
# normal operator


def normal(metric, weight, f, grid=None, field_grid=None, n_dir=DEFAULT_NDIR,
           h=mf.DEFAULT_STEP, method="auto"):
    """N f = I* I f on the fan grid (default 256 x 256); output on M1."""
    grid = grid or ry.fan_grid(metric)
    field_grid = field_grid or f.grid
    s = forward(metric, weight, f, grid, h, method)
    return adjoint(metric, weight, s, field_grid, n_dir, h, method)


def mu_lower_bound(metric, grid):
    """Smallest cos(alpha) over grid rays meeting M (bounded away from 0 on
    dM1 since those rays stay clear of tangency there)."""
    hit = ry.hit_mask(metric, grid)
    if grid.chart.kind != "FAN":
        raise ValueError("defined for fan grids")
    ca = np.broadcast_to(np.cos(grid.axes[1])[None, :], grid.shape)
    return float(ca[hit].min()) if np.any(hit) else float("nan")
