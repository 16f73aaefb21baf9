"""Only the solenoidal part of a tensor field is seen by the transform.

Run: python3 demos/02_solenoidal_kernel.py
"""
from geoxray import manifold as mf, rays as ry, tensor as tn, xray as xr

metric = mf.ExpConformalMetric(0.1)
grid = tn.FieldGrid(256, 1.25)
fan = ry.fan_grid(metric, 256, 256)

for m in (1, 2):
    # symmetric derivative of a potential that vanishes on dM
    pot, _ = tn.potential_field(metric, grid, m, seed=3, exact=True)
    seen = xr.sino_norm(xr.forward(metric, None, pot, fan))
    print(f"m={m}: ||I d^s v|| / ||d^s v|| = "
          f"{seen / tn.norm_l2(metric, pot):.1e}")

    # add a solenoidal field and split the sum again
    sol = tn.solenoidal_project(
        metric, tn.random_bandlimited(grid, 4, 7, m, metric.tag)).solenoidal
    dec = tn.solenoidal_project(metric, sol + pot)
    err = tn.norm_l2(metric, dec.solenoidal - sol) / tn.norm_l2(metric, sol)
    print(f"     recovered f^s error {err:.1e} after {dec.iterations} "
          f"CG iterations")
    a = xr.forward(metric, None, sol + pot, fan)
    b = xr.forward(metric, None, dec.solenoidal, fan)
    print(f"     ||I f - I f^s|| / ||f|| = "
          f"{xr.sino_norm(a - b) / tn.norm_l2(metric, sol + pot):.1e}")
