"""Experiments: two-sided stability ratios, range equivalence of the norm
family, the wavefront cone bound, canonical-relation witnesses and the
Euclidean Plancherel oracle.

Every experiment returns a report object with a to_rows()/summary() pair;
write_report() serializes those as CSV (17 significant digits) and JSON.
"""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import math
import os
import tempfile

import numpy as np

from . import manifold as mf
from . import rays as ry
from . import sobolev as sb
from . import tensor as tn
from . import xray as xr

FLOAT_FMT = "%.17g"


# --------------------------------------------------------------------------
# serialization helpers


def trial_seeds(seed, trials):
    """Per-trial integer seeds spawned from a master seed."""
    children = np.random.SeedSequence(int(seed)).spawn(int(trials))
    return [int(c.generate_state(1, dtype=np.uint32)[0]) for c in children]


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT % float(v)
    return str(v)


def csv_text(columns, rows):
    buf = io.StringIO()
    buf.write(",".join(columns) + "\n")
    for r in rows:
        buf.write(",".join(_fmt(r.get(c, "")) for c in columns) + "\n")
    return buf.getvalue()


def atomic_write(path, data):
    """Write text or bytes to path via a temporary file and rename."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sha256_text(s):
    return hashlib.sha256(s.encode() if isinstance(s, str) else s).hexdigest()


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, (np.floating, float)):
        f = float(o)
        return f if math.isfinite(f) else str(f)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    return o


def write_report(report, out_dir, stem, config=None, inputs_hash=None):
    """CSV rows and a JSON summary embedding the config and hashes."""
    cols, rows = report.to_rows()
    text = csv_text(cols, rows)
    csv_path = os.path.join(out_dir, stem + ".csv")
    json_path = os.path.join(out_dir, stem + ".json")
    atomic_write(csv_path, text)
    cfg = _jsonable(config or {})
    summary = {
        "experiment": stem,
        "config": cfg,
        "config_sha256": sha256_text(json.dumps(cfg, sort_keys=True)),
        "inputs_sha256": inputs_hash,
        "csv": os.path.basename(csv_path),
        "csv_sha256": sha256_text(text),
        "summary": _jsonable(report.summary()),
    }
    atomic_write(json_path, json.dumps(summary, indent=2, sort_keys=True)
                 + "\n")
    return csv_path, json_path


def spread(values):
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0 or v.min() <= 0:
        return math.inf
    return float(v.max() / v.min())


def _stats(values):
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return {"min": math.nan, "max": math.nan, "median": math.nan,
                "spread": math.inf, "count": 0}
    return {"min": float(v.min()), "max": float(v.max()),
            "median": float(np.median(v)), "spread": spread(v),
            "count": int(v.size)}


# --------------------------------------------------------------------------
# stability


@dataclasses.dataclass
class StabilityReport:
    metric_tag: str
    m: int
    spec_names: list
    rows: list
    skipped: list
    with_normal: bool

    def ratios(self, name):
        return np.array([r["ratio_" + name] for r in self.rows])

    def normal_ratios(self):
        return np.array([r["ratio_N"] for r in self.rows])

    def columns(self):
        cols = ["trial", "seed", "m", "status", "norm_f", "norm_fs",
                "norm_pot", "cg_iterations"]
        cols += ["norm_I_" + n for n in self.spec_names]
        if self.with_normal:
            cols.append("norm_N_H1")
        cols += ["ratio_" + n for n in self.spec_names]
        if self.with_normal:
            cols.append("ratio_N")
        return cols

    def to_rows(self):
        return self.columns(), self.rows + self.skipped

    def summary(self):
        out = {"metric": self.metric_tag, "m": self.m,
               "trials": len(self.rows), "skipped": len(self.skipped),
               "specs": {n: _stats(self.ratios(n)) for n in self.spec_names}}
        if self.with_normal:
            out["normal"] = _stats(self.normal_ratios())
        if len(self.spec_names) > 1:
            a, b = self.spec_names[0], self.spec_names[1]
            out["pair_" + a + "_" + b] = _stats(self.ratios(a)
                                                / self.ratios(b))
        return out


def run_stability(metric, m, specs, trials, seed, K=8, field_grid=None,
                  ray_grid=None, h=mf.DEFAULT_STEP, with_normal=True,
                  n_dir=xr.DEFAULT_NDIR, weight=None, field_kind="random",
                  skip_tol=1e-6):
    """Ratios ||I f||_spec / ||f^s|| and ||N f||_{H1(M1)} / ||f^s|| over a
    seeded family of random band-limited fields (or potentials)."""
    if m not in (0, 1, 2):
        raise ValueError("m must be 0, 1 or 2")
    field_grid = field_grid or tn.FieldGrid()
    ray_grid = ray_grid or ry.fan_grid(metric)
    weight = weight or xr.WeightModel()
    names = [s.name for s in specs]
    rows, skipped = [], []
    for i, ts in enumerate(trial_seeds(seed, trials)):
        if field_kind == "random":
            f = tn.random_bandlimited(field_grid, K, ts, m, metric.tag)
        elif field_kind == "potential":
            f, _ = tn.potential_field(metric, field_grid, m, ts)
        else:
            raise ValueError(f"unknown field kind {field_kind!r}")
        row = {"trial": i, "seed": ts, "m": m, "norm_f": tn.norm_l2(metric,
                                                                    f)}
        if m == 0:
            fs, pot_norm, its = f, 0.0, 0
        else:
            dec = tn.solenoidal_project(metric, f)
            fs, pot_norm, its = dec.solenoidal, dec.potential_norm, \
                dec.iterations
        row.update(norm_fs=tn.norm_l2(metric, fs), norm_pot=pot_norm,
                   cg_iterations=its)
        sino = xr.forward(metric, weight, f, ray_grid, h)
        for s in specs:
            row["norm_I_" + s.name] = sb.norm_hbar(s, sino)
        if with_normal:
            Nf = xr.adjoint(metric, weight, sino, field_grid, n_dir, h)
            row["norm_N_H1"] = tn.norm_h1(metric, Nf, "M1")
        if row["norm_fs"] <= skip_tol * max(row["norm_f"], 1e-300):
            row["status"] = "skipped:potential"
            skipped.append(row)
            continue
        row["status"] = "ok"
        for s in specs:
            row["ratio_" + s.name] = row["norm_I_" + s.name] / row["norm_fs"]
        if with_normal:
            row["ratio_N"] = row["norm_N_H1"] / row["norm_fs"]
        rows.append(row)
    return StabilityReport(metric.tag, m, names, rows, skipped, with_normal)


# --------------------------------------------------------------------------
# range equivalence


def probe_profile(metric, alpha, lo=0.3, hi=0.7):
    """Smooth flat-top profile in the fan angle: 0 on leaves rho <= lo,
    1 on rho >= hi (inside the interior plateau of the presets)."""
    rho = ry.rho_of_alpha(metric, alpha)
    return tn.smooth_step((rho - lo) / (hi - lo))


def off_range_probe(metric, grid, nu, lo=0.3, hi=0.7):
    """h(beta, alpha) = b(alpha) sin(nu beta) (cos for nu = 0)."""
    b = probe_profile(metric, grid.axes[1], lo, hi)
    beta = grid.axes[0]
    osc = np.ones_like(beta) if nu == 0 else np.sin(nu * beta)
    return xr.Sinogram(grid, osc[:, None] * b[None, :], 0, metric.tag)


def predicted_growth(nu_lo, nu_hi, s=0.5):
    return ((1 + nu_hi ** 2) / (1 + nu_lo ** 2)) ** (s / 2)


@dataclasses.dataclass
class RangeReport:
    spec_a: str
    spec_b: str
    on_range: dict  # m -> list of per-trial ratios a/b
    nus: list
    off_range: list  # ratios a/b for the probes
    constant_ratio: float
    exponent: float
    seeds: list

    def on_range_spread(self, m):
        return spread(self.on_range[m])

    def growth(self, nu_lo, nu_hi):
        i, j = self.nus.index(nu_lo), self.nus.index(nu_hi)
        return self.off_range[j] / self.off_range[i]

    def to_rows(self):
        rows = []
        for m, vals in self.on_range.items():
            for i, v in enumerate(vals):
                rows.append({"kind": "on_range", "m": m, "index": i,
                             "seed": self.seeds[i], "nu": "", "ratio": v})
        for nu, v in zip(self.nus, self.off_range):
            rows.append({"kind": "off_range", "m": "", "index": "",
                         "seed": "", "nu": nu, "ratio": v})
        return ["kind", "m", "index", "seed", "nu", "ratio"], rows

    def summary(self):
        return {"spec_a": self.spec_a, "spec_b": self.spec_b,
                "on_range": {str(m): _stats(v)
                             for m, v in self.on_range.items()},
                "off_range": dict(zip(map(str, self.nus), self.off_range)),
                "constant_ratio": self.constant_ratio,
                "growth_exponent": self.exponent}


def run_range_equivalence(metric, spec_a, spec_b, nus=(8, 16, 32, 64),
                          trials=50, seed=0, ms=(0, 1, 2), K=8,
                          field_grid=None, ray_grid=None, h=mf.DEFAULT_STEP,
                          weight=None):
    """Norm ratio a/b on the range (I f for random f) and on y''-oscillating
    off-range probes; the exponent is the fitted slope of log ratio against
    log(1 + nu^2)."""
    field_grid = field_grid or tn.FieldGrid()
    ray_grid = ray_grid or ry.fan_grid(metric)
    weight = weight or xr.WeightModel()
    seeds = trial_seeds(seed, trials)
    on = {}
    for m in ms:
        vals = []
        for ts in seeds:
            f = tn.random_bandlimited(field_grid, K, ts, m, metric.tag)
            sino = xr.forward(metric, weight, f, ray_grid, h)
            vals.append(sb.norm_hbar(spec_a, sino) / sb.norm_hbar(spec_b,
                                                                   sino))
        on[m] = vals
    off = []
    for nu in nus:
        p = off_range_probe(metric, ray_grid, nu)
        off.append(sb.norm_hbar(spec_a, p) / sb.norm_hbar(spec_b, p))
    p0 = off_range_probe(metric, ray_grid, 0)
    const = sb.norm_hbar(spec_a, p0) / sb.norm_hbar(spec_b, p0)
    nus = [int(n) for n in nus]
    if len(nus) > 1:
        slope = float(np.polyfit(np.log1p(np.square(nus)), np.log(off), 1)[0])
    else:
        slope = math.nan
    return RangeReport(spec_a.name, spec_b.name, on, nus, off, const, slope,
                       seeds)


# --------------------------------------------------------------------------
# cone bound


@dataclasses.dataclass
class ConeReport:
    R: float
    dilations: list
    fractions: list
    floor: float
    high_energy: float

    def to_rows(self):
        return (["dilation", "fraction_outside", "support_radius", "floor"],
                [{"dilation": c, "fraction_outside": f, "support_radius":
                  self.R, "floor": self.floor}
                 for c, f in zip(self.dilations, self.fractions)])

    def summary(self):
        return {"support_radius": self.R, "floor": self.floor,
                "high_frequency_energy": self.high_energy,
                "fractions": dict(zip(map(str, self.dilations),
                                      self.fractions))}


def cone_fractions(values, grid, R, dilations=(1.0, 1.2, 1.5), floor=8.0):
    """Energy share of the 2D spectrum of Rf(p, phi) with |xi| >= floor
    lying outside {|xi_phi| <= c R |xi_p|}."""
    n_p, n_phi = values.shape
    F = np.fft.fft(np.fft.fft(values, n=2 * n_p, axis=0), axis=1)
    xp = 2 * np.pi * np.fft.fftfreq(2 * n_p, grid.spacing[0])
    xf = np.fft.fftfreq(n_phi, grid.spacing[1] / (2 * np.pi))
    XP, XF = np.meshgrid(xp, xf, indexing="ij")
    E = np.abs(F) ** 2
    high = np.hypot(XP, XF) >= floor
    total = float(E[high].sum())
    out = []
    for c in dilations:
        if total == 0:
            out.append(0.0)
            continue
        outside = high & (np.abs(XF) > c * R * np.abs(XP))
        out.append(float(E[outside].sum() / total))
    return out, total


def cone_field(kind, R0=0.5, center=(0.25, 0.0), width=0.02):
    """Analytic test fields for the cone check and their support radius."""
    c = np.asarray(center, dtype=float)
    if kind == "disc":
        def func(x):
            r = np.hypot(x[..., 0] - c[0], x[..., 1] - c[1])
            return (r <= R0)[None].astype(float)
        return xr.AnalyticField(0, func), float(np.hypot(*c) + R0)
    if kind == "gaussian":
        def func(x):
            s = (x[..., 0] - c[0]) ** 2 + (x[..., 1] - c[1]) ** 2
            return np.exp(-s / (2 * width ** 2))[None]
        # effectively supported within 8 widths
        return xr.AnalyticField(0, func), float(np.hypot(*c) + 8 * width)
    if kind == "zero":
        return xr.AnalyticField(0, lambda x: np.zeros((1,) + x.shape[:-1])), \
            float(R0)
    raise ValueError(f"unknown cone field kind {kind!r}")


def run_cone_check(R0=0.5, kind="disc", center=(0.25, 0.0), width=0.02,
                   n_p=256, n_phi=256, dilations=(1.0, 1.2, 1.5), floor=8.0,
                   h=mf.DEFAULT_STEP):
    metric = mf.EuclideanMetric()
    f, R = cone_field(kind, R0, center, width)
    grid = ry.parallel_grid(metric, n_p, n_phi)
    sino = xr.forward(metric, None, f, grid, h)
    fr, total = cone_fractions(sino.values, grid, R, dilations, floor)
    return ConeReport(R, list(dilations), fr, float(floor), total)


# --------------------------------------------------------------------------
# canonical relation


@dataclasses.dataclass
class CanonicalPoint:
    coords: np.ndarray
    t: float
    eta: np.ndarray
    witness: float
    position_error: float


def canonical_image(metric, chart, x, xi, yprime=None, h=mf.DEFAULT_STEP):
    """Ray coordinates and covectors eta_l = xi_j d gamma^j / d y^l of the
    two geodesics through x conormal to xi.  witness is the size of eta on
    the y' indices, each entry normalized like an (ND) column."""
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    nxi = float(np.hypot(*xi))
    if nxi == 0:
        raise ValueError("the covector xi must be nonzero")
    yprime = tuple(range(chart.dim)) if yprime is None else tuple(yprime)
    out = []
    for sign in (1.0, -1.0):
        v = metric.unit(x[None], sign * ry.perp(xi[None]))
        coords = chart.project(metric, x[None], v, h)
        x0, v0 = chart.start(metric, coords)
        T = ry.back_to_circle(metric, x[None], v, chart.radius(metric), h)[2] \
            if chart.kind != "PARALLEL" else \
            np.array([float(np.dot(x - x0[0], v0[0]))])
        J0, Jd0 = chart.start_jacobian(metric, coords)
        xe, ve, J, Jd = mf.flow_fixed(metric, x0, v0, T, min(h, 1e-3), J0,
                                      Jd0)
        eta = np.einsum("j,pj->p", xi, J[0])
        n = ry.perp(ve[0]) / np.linalg.norm(ve[0])
        cols = []
        for j in yprime:
            a = float(np.dot(J[0, j], n))
            b = float(np.dot(Jd[0, j], n))
            size = math.hypot(a, b)
            cols.append(0.0 if size < 1e-14 else
                        float(np.dot(xi, J[0, j])) / (nxi * size))
        out.append(CanonicalPoint(coords[0], float(T[0]), eta,
                                  float(np.linalg.norm(cols)),
                                  float(np.linalg.norm(xe[0] - x))))
    return out


# --------------------------------------------------------------------------
# Euclidean oracle


@dataclasses.dataclass
class OracleReport:
    rows: list

    def ratios(self):
        return np.array([r["ratio"] for r in self.rows])

    def to_rows(self):
        return (["name", "norm_f", "norm_hbar", "ratio", "plancherel",
                 "plancherel_rel_err"], self.rows)

    def summary(self):
        return {"spread": spread(self.ratios()),
                "max_plancherel_rel_err_smooth": max(
                    (r["plancherel_rel_err"] for r in self.rows
                     if r["smooth"]), default=math.nan),
                "ratios": {r["name"]: r["ratio"] for r in self.rows}}


def plancherel_norm(values, grid):
    """||f||_{L2} from its parallel-beam sinogram via
    ||f||^2 = (1/8 pi^2) int int |sigma| |F_p Rf(sigma, phi)|^2."""
    n_p = values.shape[0]
    nfft = 2 * n_p
    dp, dphi = grid.spacing
    F = np.fft.fft(values, n=nfft, axis=0)
    sigma = 2 * np.pi * np.fft.fftfreq(nfft, dp)
    tot = np.sum(np.abs(sigma)[:, None] * np.abs(F) ** 2) * dp * dp \
        * (2 * np.pi / (nfft * dp)) * dphi
    return math.sqrt(tot / (8 * np.pi ** 2))


def oracle_family(grid, seed=0):
    fam = [
        ("gauss_w0.10", tn.gaussian_bump(grid, (0.0, 0.0), 0.10), True),
        ("gauss_w0.20_off", tn.gaussian_bump(grid, (0.3, -0.2), 0.20), True),
        ("gauss_w0.05_off", tn.gaussian_bump(grid, (-0.4, 0.1), 0.05), True),
        ("disc_R0.5", tn.indicator_disc(grid, 0.5), False),
        ("disc_R0.3_off", tn.indicator_disc(grid, 0.3, (0.2, 0.3)), False),
    ]
    for K, s in ((4, seed), (8, seed + 1)):
        fam.append((f"random_K{K}",
                    tn.random_bandlimited(grid, K, s), True))
    return fam


def run_euclidean_oracle(field_grid=None, n_p=256, n_phi=256, seed=0,
                         family=None, h=mf.DEFAULT_STEP, scale=1.0):
    metric = mf.EuclideanMetric()
    field_grid = field_grid or tn.FieldGrid()
    grid = ry.parallel_grid(metric, n_p, n_phi)
    spec = sb.parallel_spec(("p",))
    rows = []
    for name, f, smooth in family or oracle_family(field_grid, seed):
        f = f * scale
        sino = xr.forward(metric, None, f, grid, h)
        nf = tn.norm_l2(metric, f)
        nh = sb.norm_hbar(spec, sino)
        pl = plancherel_norm(sino.values, grid)
        rows.append({"name": name, "norm_f": nf, "norm_hbar": nh,
                     "ratio": nh / nf, "plancherel": pl,
                     "plancherel_rel_err": abs(pl - nf) / nf,
                     "smooth": smooth})
    return OracleReport(rows)
