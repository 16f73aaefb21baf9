"""The twelve acceptance criteria at default resolution (field 128^2, fan
rays 256 x 256, step 1e-3).  Each test prints one PASS/FAIL line; the
lines are repeated in the terminal summary."""

import os
import pathlib

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from geoxray import harness as hs
from geoxray import manifold as mf
from geoxray import rays as ry
from geoxray import sobolev as sb
from geoxray import tensor as tn
from geoxray import xray as xr

OUT = pathlib.Path(os.environ.get(
    "GEOXRAY_ACCEPTANCE_OUT",
    pathlib.Path(__file__).resolve().parents[1] / "acceptance_out"))
METRICS = ("euclid", "lam")


def verdict(n, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n:2d}: {title}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append((n, line))
    assert ok, line


@pytest.fixture(scope="module")
def metrics(euclid, lam):
    return {"euclid": euclid, "lam": lam}


@pytest.fixture(scope="module")
def fans(fan_e, fan_l):
    return {"euclid": fan_e, "lam": fan_l}


@pytest.fixture(scope="module")
def stability(metrics, fans, fgrid):
    """100 seeded random fields per m on both metrics, every preset."""
    OUT.mkdir(parents=True, exist_ok=True)
    reports = {}
    for key in METRICS:
        met = metrics[key]
        specs = [sb.make_spec(p, met) for p in sb.PRESETS]
        for m in (0, 1, 2):
            rep = hs.run_stability(met, m, specs, 100, 2024 + m,
                                   field_grid=fgrid, ray_grid=fans[key])
            hs.write_report(rep, OUT, f"stability_{key}_m{m}",
                            {"metric": met.tag, "m": m, "trials": 100,
                             "seed": 2024 + m})
            reports[key, m] = rep
    return reports


def test_c01_chord_oracle(euclid):
    grid = ry.parallel_grid(euclid, 64, 4, 1.0)
    one = xr.AnalyticField(0, lambda x: np.ones((1,) + x.shape[:-1]))
    s = xr.forward(euclid, None, one, grid)
    err = np.abs(s.values - 2 * np.sqrt(1 - grid.axes[0][:, None] ** 2)).max()
    verdict(1, "chord lengths", err <= 1e-5, f"max abs error {err:.2e}")


def test_c02_kernel(metrics, fans, fgrid):
    worst = 0.0
    for key in METRICS:
        met = metrics[key]
        for m in (1, 2):
            for seed in range(10):
                f, _ = tn.potential_field(met, fgrid, m, 100 + seed,
                                          exact=True)
                s = xr.forward(met, None, f, fans[key])
                worst = max(worst, xr.sino_norm(s) / tn.norm_l2(met, f))
    verdict(2, "potentials annihilated", worst <= 1e-3,
            f"max ||I d^s v|| / ||d^s v|| = {worst:.2e}")


def test_c03_santalo(metrics, fans, fgrid):
    worst = 0.0
    for key in METRICS:
        met, grid = metrics[key], fans[key]
        b, a = np.meshgrid(*grid.axes, indexing="ij")
        for m in (0, 1, 2):
            for k in range(20):
                rng = np.random.default_rng(k)
                f = tn.random_bandlimited(fgrid, 6, 500 + k, m, met.tag)
                c = rng.standard_normal(4)
                vals = c[0] * np.cos((k % 5 + 1) * b + c[1]) \
                    * np.cos(a) ** (k % 3) + c[2] * np.sin(2 * a + c[3])
                w = xr.Sinogram(grid, vals, m, met.tag)
                lhs = xr.sino_inner(xr.forward(met, None, f, grid), w)
                rhs = tn.inner(met, f, xr.adjoint(met, None, w, fgrid))
                worst = max(worst, abs(lhs - rhs)
                            / (tn.norm_l2(met, f) * xr.sino_norm(w)))
    verdict(3, "Santalo duality", worst <= 1e-3,
            f"max relative defect {worst:.2e} over 120 pairs")


def test_c04_jacobi(lam):
    rng = np.random.default_rng(4)
    c = np.stack([rng.uniform(0, 2 * np.pi, 50), rng.uniform(-1.3, 1.3, 50)],
                 -1)
    chart = ry.FanChart()
    x, v = chart.start(lam, c)
    J, Jd = chart.start_jacobian(lam, c)
    T = rng.uniform(0.3, 1.8, 50)
    Je = mf.flow_fixed(lam, x, v, T, 1e-3, J, Jd)[2]
    worst, eps = 0.0, 1e-5
    for j in range(2):
        d = np.zeros(2)
        d[j] = eps
        a = mf.flow_fixed(lam, *chart.start(lam, c + d), T, 1e-3)[0]
        b = mf.flow_fixed(lam, *chart.start(lam, c - d), T, 1e-3)[0]
        rel = np.linalg.norm((a - b) / (2 * eps) - Je[:, j], axis=-1) \
            / np.linalg.norm(Je[:, j], axis=-1)
        worst = max(worst, rel.max())
    verdict(4, "Jacobi vs finite differences", worst <= 1e-5,
            f"max relative error {worst:.2e} over 50 rays")


def test_c05_nd(metrics):
    euclid = metrics["euclid"]
    grid = ry.parallel_grid(euclid, 32, 16, 0.999)
    par = sb.nd_check(euclid, ry.ParallelChart(), (0,), grid.coords()).minimum
    fan_dir = min(
        sb.nd_check_spec(metrics[k], sb.make_spec("FAN_DIR", metrics[k]),
                         ry.fan_grid(metrics[k], 32, 33))[1]
        for k in METRICS)
    alpha = np.concatenate([np.linspace(-np.pi / 2, np.pi / 2, 33),
                            [np.pi / 2 - 5e-4]])
    beta = 2 * np.pi * np.arange(8) / 8
    B, A = np.meshgrid(beta, alpha, indexing="ij")
    on_dm = min(sb.nd_check(metrics[k], ry.FanChart(base_radius=1.0), (0, 1),
                          np.stack([B.ravel(), A.ravel()], -1)).minimum
              for k in METRICS)
    ok = par >= 0.1 and fan_dir >= 0.1 and on_dm <= 1e-3
    verdict(5, "(ND) examples", ok, f"PARALLEL p {par:.3f}, FAN_DIR "
            f"{fan_dir:.3f}, boundary chart {on_dm:.2e}")


def test_c06_norm_ordering(metrics, fans):
    worst_dom, worst_zero = -np.inf, 0.0
    for key in METRICS:
        met, grid = metrics[key], fans[key]
        hit = ry.hit_mask(met, grid)
        specs = [sb.make_spec(p, met) for p in sb.PRESETS]
        b, a = np.meshgrid(*grid.axes, indexing="ij")
        rng = np.random.default_rng(6)
        for k in range(100):
            if k % 2:
                vals = rng.standard_normal(grid.shape)
            else:
                nb, na = rng.integers(0, 40, 2)
                vals = np.cos(nb * b + rng.uniform(0, 6)) * np.sin(
                    na * a + rng.uniform(0, 6))
            h = xr.Sinogram(grid, vals * hit, 0, met.tag)
            l2 = sb.l2_chart(h)
            for spec in specs:
                hb, hf = sb.norm_hbar(spec, h), sb.norm_h_full(spec, h)
                worst_dom = max(worst_dom, (hb - hf) / hf)
                z = sb.norm_hbar(spec.with_order(0), h)
                worst_zero = max(worst_zero, abs(z - l2) / l2)
    ok = worst_dom <= 1e-12 and worst_zero <= 1e-10
    verdict(6, "norm ordering", ok, f"max (hbar - full)/full {worst_dom:.1e}, "
            f"s=0 defect {worst_zero:.1e}")


def test_c07_off_range(metrics, fans):
    need = 0.9 * hs.predicted_growth(8, 64)
    growth = {}
    for key in METRICS:
        met, grid = metrics[key], fans[key]
        full, off = sb.make_spec("FULL", met), sb.make_spec("OFFSET", met)
        r = [sb.norm_hbar(full, p) / sb.norm_hbar(off, p)
             for p in (hs.off_range_probe(met, grid, nu) for nu in (8, 64))]
        growth[key] = r[1] / r[0]
    g = min(growth.values())
    verdict(7, "off-range growth", g >= need,
            f"growth 8->64 {growth['euclid']:.3f} / {growth['lam']:.3f}, "
            f"needed {need:.3f}")


def test_c08_on_range(metrics, fans, fgrid):
    spreads = {}
    for key in METRICS:
        met = metrics[key]
        rep = hs.run_range_equivalence(
            met, sb.make_spec("FULL", met), sb.make_spec("OFFSET", met),
            nus=(8, 64), trials=50, seed=808, field_grid=fgrid,
            ray_grid=fans[key])
        spreads[key] = max(rep.on_range_spread(m) for m in (0, 1, 2))
    ok = spreads["euclid"] <= 3 and spreads["lam"] <= 5
    verdict(8, "on-range equivalence", ok,
            f"FULL/OFFSET spread {spreads['euclid']:.3f} (euclidean), "
            f"{spreads['lam']:.3f} (lambda=0.1)")


def test_c09_stability(stability):
    worst, bad = 0.0, 0
    for rep in stability.values():
        for name in rep.spec_names:
            r = rep.ratios(name)
            bad += int(np.sum(~np.isfinite(r) | (r <= 0)))
            worst = max(worst, hs.spread(r))
    stored = all((OUT / f"stability_{k}_m{m}.csv").exists()
                 for k, m in stability)
    verdict(9, "stability ratios", worst <= 10 and bad == 0 and stored,
            f"max spread {worst:.3f} over 6 runs x 4 presets, CSV in {OUT}")


def test_c10_normal(stability):
    worst = max(hs.spread(rep.normal_ratios()) for rep in stability.values())
    verdict(10, "normal-operator ratios", worst <= 10,
            f"max spread {worst:.3f}")


def test_c11_cone():
    rep = hs.run_cone_check()
    f = rep.fractions[rep.dilations.index(1.2)]
    verdict(11, "cone bound", f <= 1e-2,
            f"outside-cone fraction at c=1.2: {f:.2e} (R={rep.R})")


def test_c12_determinism(lam, fan_l, fgrid, tmp_path):
    texts = []
    for k in range(2):
        specs = [sb.make_spec(p, lam) for p in sb.PRESETS]
        rep = hs.run_stability(lam, 2, specs, 8, 77, field_grid=fgrid,
                               ray_grid=fan_l)
        csv_path, _ = hs.write_report(rep, tmp_path / str(k), "run")
        texts.append(pathlib.Path(csv_path).read_bytes())
    same = texts[0] == texts[1]
    verdict(12, "determinism", same,
            f"two runs {'byte-identical' if same else 'differ'} "
            f"({len(texts[0])} bytes)")
