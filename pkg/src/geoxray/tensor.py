"""Symmetric covariant tensor fields of order 0, 1, 2 on a Cartesian grid.

Components are stored covariantly in chart coordinates: one array for a
function, (f1, f2) for a 1-form and (f11, f12, f22) for a symmetric 2-tensor.
Pointwise inner products use the conformal metric, so a component product
picks up c^(-m), and dVol_g = c dx; the off-diagonal entry of a 2-tensor
counts twice.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.ndimage import map_coordinates

from . import manifold as mf

N_COMPONENTS = {0: 1, 1: 2, 2: 3}
MULTIPLICITY = {0: (1.0,), 1: (1.0, 1.0), 2: (1.0, 2.0, 1.0)}
COMPONENT_NAMES = {0: ("f",), 1: ("f1", "f2"), 2: ("f11", "f12", "f22")}
DEFAULT_N = 128
DEFAULT_EXTENT = 1.25
SUPERSAMPLE = 16


class SolverError(RuntimeError):
    """The solenoidal projection did not converge."""


def _check_order(m):
    if m not in N_COMPONENTS:
        raise ValueError(f"unsupported tensor order {m!r}; expected 0, 1 or 2")


@dataclasses.dataclass(frozen=True)
class FieldGrid:
    """Square lattice linspace(-extent, extent, n) in both axes ('ij')."""

    n: int = DEFAULT_N
    extent: float = DEFAULT_EXTENT

    @property
    def axis(self):
        return np.linspace(-self.extent, self.extent, self.n)

    @property
    def h(self):
        return 2 * self.extent / (self.n - 1)

    def points(self):
        X, Y = np.meshgrid(self.axis, self.axis, indexing="ij")
        return np.stack([X, Y], -1)

    def radius(self):
        X, Y = np.meshgrid(self.axis, self.axis, indexing="ij")
        return np.hypot(X, Y)

    def describe(self):
        return {"n": self.n, "extent": self.extent}


@dataclasses.dataclass
class SymTensorField:
    order: int
    data: np.ndarray
    grid: FieldGrid
    metric_tag: str = ""
    support: str = "M"

    def __post_init__(self):
        _check_order(self.order)
        self.data = np.asarray(self.data, dtype=float)
        want = (N_COMPONENTS[self.order], self.grid.n, self.grid.n)
        if self.data.shape != want:
            raise ValueError(f"field data has shape {self.data.shape}, "
                             f"expected {want}")

    def __add__(self, other):
        _check_compatible(self, other)
        return dataclasses.replace(self, data=self.data + other.data)

    def __sub__(self, other):
        _check_compatible(self, other)
        return dataclasses.replace(self, data=self.data - other.data)

    def __mul__(self, a):
        return dataclasses.replace(self, data=self.data * float(a))

    __rmul__ = __mul__

    def vector(self):
        return self.data.reshape(-1)

    def with_data(self, data):
        return dataclasses.replace(self, data=np.asarray(data, dtype=float))

    def evaluate(self, x):
        """Bilinear interpolation of every component at points x (..., 2);
        zero outside the grid.  Returns (C, ...)."""
        return interpolate(self.data, self.grid, x)


def _check_compatible(a, b):
    if a.order != b.order or a.grid != b.grid:
        raise ValueError("fields differ in order or grid")


def zeros(m, grid=FieldGrid(), metric_tag="", support="M"):
    _check_order(m)
    return SymTensorField(m, np.zeros((N_COMPONENTS[m], grid.n, grid.n)),
                          grid, metric_tag, support)


def interpolate(data, grid, x):
    x = np.asarray(x, dtype=float)
    shp = x.shape[:-1]
    idx = (x.reshape(-1, 2) + grid.extent) / grid.h
    out = np.stack([map_coordinates(c, idx.T, order=1, mode="constant",
                                    cval=0.0) for c in data])
    return out.reshape((data.shape[0],) + shp)


def contract(values, v, m):
    """f_{i1..im} v^i1 ... v^im for component values (C, ...) and v (..., 2)."""
    if m == 0:
        return values[0]
    if m == 1:
        return values[0] * v[..., 0] + values[1] * v[..., 1]
    return (values[0] * v[..., 0] ** 2 + 2 * values[1] * v[..., 0] * v[..., 1]
            + values[2] * v[..., 1] ** 2)


def direction_products(v, m):
    """Components of v (x) ... (x) v in storage order, shape (C, ...)."""
    if m == 0:
        return np.ones((1,) + v.shape[:-1])
    if m == 1:
        return np.stack([v[..., 0], v[..., 1]])
    return np.stack([v[..., 0] ** 2, v[..., 0] * v[..., 1], v[..., 1] ** 2])


# --------------------------------------------------------------------------
# quadrature weights


_WEIGHT_CACHE: dict = {}


def volume_weights(metric, grid, domain="M", power=1.0):
    """Node weights for integrals of F c^power dx over the domain.

    Interior cells use the node value (midpoint rule); cells cut by the
    boundary are supersampled.  domain: 'M', 'M1' or 'all'.
    """
    key = (metric.tag, grid, domain, float(power))
    if key in _WEIGHT_CACHE:
        return _WEIGHT_CACHE[key]
    h = grid.h
    pts = grid.points()
    w = np.exp(power * metric.log_factor(pts)) * h * h
    if domain != "all":
        radius = metric.r_M if domain == "M" else metric.r_M1
        r = grid.radius()
        w = np.where(r <= radius, w, 0.0)
        edge = np.abs(r - radius) <= h * 0.75
        if np.any(edge):
            sub = SUPERSAMPLE
            off = (np.arange(sub) + 0.5) / sub - 0.5
            ox, oy = np.meshgrid(off * h, off * h, indexing="ij")
            p = pts[edge]
            px = p[:, 0, None, None] + ox
            py = p[:, 1, None, None] + oy
            q = np.stack([px, py], -1)
            inside = np.hypot(px, py) <= radius
            cp = np.exp(power * metric.log_factor(q))
            w[edge] = np.mean(inside * cp, axis=(1, 2)) * h * h
    w.setflags(write=False)
    _WEIGHT_CACHE[key] = w
    return w


def _component_weights(metric, grid, m, domain):
    w = volume_weights(metric, grid, domain, 1.0 - m)
    return np.stack([mu * w for mu in MULTIPLICITY[m]])


def inner(metric, f, g, domain="M"):
    """L2(dVol_g) inner product of two fields over M, M1 or the grid."""
    _check_compatible(f, g)
    W = _component_weights(metric, f.grid, f.order, domain)
    return float(np.sum(W * f.data * g.data))


def norm_l2(metric, f, domain="M"):
    return math.sqrt(max(inner(metric, f, f, domain), 0.0))


def norm_h1(metric, f, domain="M1"):
    """H1 norm: L2 part plus first differences of every component, the
    derivative terms weighted as tensors of one higher order."""
    base = inner(metric, f, f, domain)
    h = f.grid.h
    wd = volume_weights(metric, f.grid, domain, -float(f.order))
    tot = base
    for mu, comp in zip(MULTIPLICITY[f.order], f.data):
        gx, gy = np.gradient(comp, h, h)
        tot += mu * float(np.sum(wd * (gx * gx + gy * gy)))
    return math.sqrt(tot)


# --------------------------------------------------------------------------
# symmetrized differential and divergence


_OP_CACHE: dict = {}


def _diff1(n, h):
    # fourth-order centered stencil; truncated at the grid edge so the
    # matrix stays antisymmetric (fields vanish there anyway)
    a = np.ones(n - 1) * (8 / (12 * h))
    b = np.ones(n - 2) * (-1 / (12 * h))
    return sp.diags([-b, -a, a, b], [-2, -1, 1, 2], format="csr")


def d_operator(metric, grid, m):
    """Sparse matrix of d^s from order m-1 to order m (components stacked)."""
    if m not in (1, 2):
        raise ValueError("d^s maps order m-1 to m for m in {1, 2}")
    key = ("D", metric.tag, grid, m)
    if key in _OP_CACHE:
        return _OP_CACHE[key]
    n = grid.n
    I = sp.identity(n, format="csr")
    D1 = _diff1(n, grid.h)
    Dx = sp.kron(D1, I, format="csr")
    Dy = sp.kron(I, D1, format="csr")
    if m == 1:
        D = sp.vstack([Dx, Dy], format="csr")
    else:
        G = mf.christoffel_field(metric, grid.points())
        diag = lambda a: sp.diags(a.ravel())  # noqa: E731
        g = lambda k, i, j: diag(G[..., k, i, j])  # noqa: E731
        r11 = [Dx - g(0, 0, 0), -g(1, 0, 0)]
        r12 = [0.5 * Dy - g(0, 0, 1), 0.5 * Dx - g(1, 0, 1)]
        r22 = [-g(0, 1, 1), Dy - g(1, 1, 1)]
        D = sp.bmat([r11, r12, r22], format="csr")
    _OP_CACHE[key] = D
    return D


def d_sym(metric, w: SymTensorField):
    m = w.order + 1
    D = d_operator(metric, w.grid, m)
    data = (D @ w.vector()).reshape(N_COMPONENTS[m], w.grid.n, w.grid.n)
    return SymTensorField(m, data, w.grid, metric.tag, w.support)


def div_sym(metric, f: SymTensorField):
    """Divergence defined as the negative discrete adjoint of d_sym with
    respect to the full-grid L2(dVol_g) inner products."""
    m = f.order
    D = d_operator(metric, f.grid, m)
    Wm = _component_weights(metric, f.grid, m, "all").ravel()
    Wl = _component_weights(metric, f.grid, m - 1, "all").ravel()
    out = -(D.T @ (Wm * f.vector())) / Wl
    return SymTensorField(m - 1, out.reshape(N_COMPONENTS[m - 1], f.grid.n,
                                             f.grid.n), f.grid, metric.tag,
                          f.support)


# --------------------------------------------------------------------------
# solenoidal projection


@dataclasses.dataclass
class Decomposition:
    solenoidal: SymTensorField
    potential: SymTensorField | None
    iterations: int
    residual: float
    potential_norm: float

    @property
    def fs(self):
        return self.solenoidal


def _interior(grid, metric):
    # unknowns of the potential: nodes strictly inside the open disc M
    return (grid.radius() < metric.r_M).ravel()


def solenoidal_project(metric, f: SymTensorField, tol=1e-8, maxiter=None):
    """Split f = f^s + d^s u with u = 0 outside the open disc and f^s
    orthogonal (in L2(M)) to every such d^s u."""
    m = f.order
    if m == 0:
        return Decomposition(f, None, 0, 0.0, 0.0)
    grid = f.grid
    D = d_operator(metric, grid, m)
    C0 = N_COMPONENTS[m - 1]
    keep = np.tile(_interior(grid, metric), C0)
    cols = np.nonzero(keep)[0]
    Dk = D[:, cols]
    W = _component_weights(metric, grid, m, "M").ravel()
    rows = W > 0
    Dk = Dk[rows]
    Wr = W[rows]
    A = (Dk.T @ sp.diags(Wr) @ Dk).tocsr()
    b = Dk.T @ (Wr * f.vector()[rows])
    bn = float(np.linalg.norm(b))
    n_unknown = cols.size
    maxiter = 10 * n_unknown if maxiter is None else maxiter
    u = np.zeros(n_unknown)
    its = 0
    if bn > 0:
        diag = A.diagonal()
        P = spla.LinearOperator(A.shape, matvec=lambda r: r / diag)
        count = [0]

        def cb(_):
            count[0] += 1

        u, info = spla.cg(A, b, rtol=tol, atol=0.0, maxiter=maxiter, M=P,
                          callback=cb)
        its = count[0]
        res = float(np.linalg.norm(b - A @ u)) / bn
        if info != 0 and res > tol:
            raise SolverError(f"CG stopped after {its} iterations with "
                              f"relative residual {res:.3e}")
    else:
        res = 0.0
    full = np.zeros(C0 * grid.n * grid.n)
    full[cols] = u
    pot = SymTensorField(m - 1, full.reshape(C0, grid.n, grid.n), grid,
                         metric.tag, "M")
    du = d_sym(metric, pot)
    fs = SymTensorField(m, f.data - du.data, grid, metric.tag, f.support)
    return Decomposition(fs, pot, its, res if bn > 0 else 0.0,
                         norm_l2(metric, du))


# --------------------------------------------------------------------------
# generators


def smooth_step(t):
    """C-infinity step from 0 (t <= 0) to 1 (t >= 1)."""
    t = np.asarray(t, dtype=float)
    a = np.where(t > 0, np.exp(-1.0 / np.maximum(t, 1e-300)), 0.0)
    b = np.where(t < 1, np.exp(-1.0 / np.maximum(1 - t, 1e-300)), 0.0)
    return a / (a + b)


def radial_cutoff(r, r0=0.6, r1=0.9):
    """1 for r <= r0, 0 for r >= r1, smooth in between."""
    return smooth_step((r1 - np.asarray(r)) / (r1 - r0))


def random_bandlimited(grid, K, seed, m=0, metric_tag="", r0=0.6, r1=0.9):
    """Random field with Fourier modes |k| <= K (k integer, wave vector
    pi k) and Gaussian coefficients, times a smooth cutoff in |x| <= r1."""
    _check_order(m)
    rng = np.random.default_rng(seed)
    K = int(K)
    ks = np.arange(-K, K + 1)
    kx, ky = np.meshgrid(ks, ks, indexing="ij")
    inside = (kx ** 2 + ky ** 2) <= K * K
    nmodes = int(inside.sum())
    x = grid.axis
    Ex = np.exp(1j * np.pi * np.outer(ks, x))
    cut = radial_cutoff(grid.radius(), r0, r1)
    comps = []
    for _ in range(N_COMPONENTS[m]):
        coef = (rng.standard_normal(kx.shape)
                + 1j * rng.standard_normal(kx.shape)) * inside
        val = np.real(Ex.T @ coef @ Ex) / math.sqrt(nmodes)
        comps.append(val * cut)
    return SymTensorField(m, np.stack(comps), grid, metric_tag, "M")


def gaussian_bump(grid, center=(0.0, 0.0), width=0.1, m=0,
                  components=None, metric_tag=""):
    _check_order(m)
    p = grid.points()
    g = np.exp(-np.sum((p - np.asarray(center)) ** 2, -1) / (2 * width ** 2))
    comp = np.ones(N_COMPONENTS[m]) if components is None else \
        np.asarray(components, dtype=float)
    return SymTensorField(m, comp[:, None, None] * g, grid, metric_tag, "M")


def indicator_disc(grid, R0=0.5, center=(0.0, 0.0), m=0, metric_tag=""):
    """Cell-averaged indicator of a disc (anti-aliased at its rim)."""
    _check_order(m)
    p = grid.points() - np.asarray(center, dtype=float)
    cov = _disc_coverage(grid, p, R0)
    return SymTensorField(m, np.repeat(cov[None], N_COMPONENTS[m], 0), grid,
                          metric_tag, "M")


def _disc_coverage(grid, p, radius, sub=SUPERSAMPLE):
    """Fraction of each node's cell inside the disc |p| <= radius, where p
    holds node positions relative to the disc center."""
    r = np.hypot(p[..., 0], p[..., 1])
    h = grid.h
    cov = (r <= radius).astype(float)
    edge = np.abs(r - radius) <= h * 0.75
    if np.any(edge):
        off = (np.arange(sub) + 0.5) / sub - 0.5
        ox, oy = np.meshgrid(off * h, off * h, indexing="ij")
        q = p[edge]
        cov[edge] = np.mean(np.hypot(q[:, 0, None, None] + ox,
                                     q[:, 1, None, None] + oy) <= radius,
                            axis=(1, 2))
    return cov


def potential_field(metric, grid, m, seed, K=3, exact=False):
    """d^s of a random potential vanishing on dM and outside M.

    The potential is a random band-limited function of order m - 1 times
    the envelope exp(1 - 1/(1 - r^2)), which is smooth across r = 1.
    With exact=False d^s is the discrete operator of this module (so the
    result lies exactly in the range the projection removes); with
    exact=True the covariant derivative is sampled in closed form.
    Returns (f, potential).
    """
    if m not in (1, 2):
        raise ValueError("potential fields exist for m = 1, 2")
    rng = np.random.default_rng(seed)
    K = int(K)
    ks = np.arange(-K, K + 1)
    kx, ky = np.meshgrid(ks, ks, indexing="ij")
    inside = (kx ** 2 + ky ** 2) <= K * K
    scale = 1.0 / math.sqrt(int(inside.sum()))
    Ex = np.exp(1j * np.pi * np.outer(ks, grid.axis))
    dEx = 1j * np.pi * ks[:, None] * Ex
    s = grid.radius() ** 2
    q = np.where(s < 1, 1 - s, 1.0)
    env = np.where(s < 1, np.exp(1 - 1 / q), 0.0)
    denv = np.where(s < 1, -env / q ** 2, 0.0)  # d env / d(r^2)
    p = grid.points()
    vals, grads = [], []
    for _ in range(N_COMPONENTS[m - 1]):
        coef = (rng.standard_normal(kx.shape)
                + 1j * rng.standard_normal(kx.shape)) * inside * scale
        B = np.real(Ex.T @ coef @ Ex)
        Bx = np.real(dEx.T @ coef @ Ex)
        By = np.real(Ex.T @ coef @ dEx)
        vals.append(env * B)
        grads.append(np.stack([2 * denv * p[..., 0] * B + env * Bx,
                               2 * denv * p[..., 1] * B + env * By]))
    pot = SymTensorField(m - 1, np.stack(vals), grid, metric.tag, "M")
    if not exact:
        return d_sym(metric, pot), pot
    if m == 1:
        data = grads[0]
    else:
        G = mf.christoffel_field(metric, p)  # (..., k, i, j)
        cov = np.stack([grads[0][0] - G[..., 0, 0, 0] * vals[0]
                        - G[..., 1, 0, 0] * vals[1],
                        0.5 * (grads[1][0] + grads[0][1])
                        - G[..., 0, 0, 1] * vals[0] - G[..., 1, 0, 1] * vals[1],
                        grads[1][1] - G[..., 0, 1, 1] * vals[0]
                        - G[..., 1, 1, 1] * vals[1]])
        data = cov
    return SymTensorField(m, data, grid, metric.tag, "M"), pot


def gen_field(spec: dict, metric=None, grid=None):
    """Build a field from a spec mapping with key 'kind'."""
    grid = grid or FieldGrid(int(spec.get("n", DEFAULT_N)),
                             float(spec.get("extent", DEFAULT_EXTENT)))
    kind = spec.get("kind")
    m = int(spec.get("m", 0))
    tag = metric.tag if metric is not None else ""
    if kind == "random":
        if "seed" not in spec:
            raise ValueError("random fields need a seed")
        return random_bandlimited(grid, int(spec.get("K", 8)),
                                  int(spec["seed"]), m, tag)
    if kind == "gaussian":
        return gaussian_bump(grid, tuple(spec.get("center", (0.0, 0.0))),
                             float(spec.get("width", 0.1)), m,
                             spec.get("components"), tag)
    if kind == "disc":
        return indicator_disc(grid, float(spec.get("R0", 0.5)),
                              tuple(spec.get("center", (0.0, 0.0))), m, tag)
    if kind == "potential":
        if metric is None:
            raise ValueError("potential fields need a metric")
        if "seed" not in spec:
            raise ValueError("potential fields need a seed")
        f, _ = potential_field(metric, grid, m, int(spec["seed"]),
                               int(spec.get("K", 3)),
                               bool(spec.get("exact", False)))
        return f
    raise ValueError(f"unknown field kind {kind!r}")
