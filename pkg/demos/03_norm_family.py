"""Norms with all derivatives vs norms with derivatives across leaves.

On sinograms of actual fields the two norms stay proportional; on a
probe that oscillates along the undifferentiated direction they drift
apart like (1 + nu^2)^(1/4).

Run: python3 demos/03_norm_family.py
"""
import numpy as np

from geoxray import harness as hs, manifold as mf, rays as ry
from geoxray import sobolev as sb, tensor as tn, xray as xr

metric = mf.ExpConformalMetric(0.1)
fan = ry.fan_grid(metric, 256, 256)
grid = tn.FieldGrid(128, 1.25)
full, offset = sb.make_spec("FULL", metric), sb.make_spec("OFFSET", metric)

print("on the range (m = 1):")
for seed in range(5):
    f = tn.random_bandlimited(grid, 8, seed, 1, metric.tag)
    h = xr.forward(metric, None, f, fan)
    print(f"  field {seed}: FULL/OFFSET = "
          f"{sb.norm_hbar(full, h) / sb.norm_hbar(offset, h):.4f}")

print("off the range:")
base = None
for nu in (8, 16, 32, 64):
    p = hs.off_range_probe(metric, fan, nu)
    r = sb.norm_hbar(full, p) / sb.norm_hbar(offset, p)
    base = base or r
    print(f"  nu={nu:3d}: ratio {r:8.3f}   growth {r / base:6.3f}"
          f"   predicted {hs.predicted_growth(8, nu):6.3f}")

print("(ND) for the collar windows:")
reports, overall = sb.nd_check_spec(metric, offset, ry.fan_grid(metric, 24,
                                                                33))
for label, rep in reports.items():
    print(f"  {label:9s} min {rep.minimum:.3f}  passed {rep.passed}")
alpha = np.linspace(-np.pi / 2, np.pi / 2, 17)
coords = np.stack([np.zeros_like(alpha), alpha], -1)
rep = sb.nd_check(metric, ry.FanChart(base_radius=1.0), (0, 1), coords)
print(f"  chart based on dM itself: min {rep.minimum:.1e}  passed "
      f"{rep.passed}")
