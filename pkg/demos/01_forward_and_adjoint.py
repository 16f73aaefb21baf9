"""Forward transform, backprojection and the normal operator.

Run: python3 demos/01_forward_and_adjoint.py
"""
import numpy as np
from scipy.special import i0e

from geoxray import manifold as mf, rays as ry, tensor as tn, xray as xr

flat = mf.EuclideanMetric()
lens = mf.ExpConformalMetric(0.1)          # c = exp(0.1 |x|^2)
grid = tn.FieldGrid(128, 1.25)

# A constant function integrates to chord length along straight lines.
par = ry.parallel_grid(flat, 9, 1, 1.0)
one = xr.AnalyticField(0, lambda x: np.ones((1,) + x.shape[:-1]))
chords = xr.forward(flat, None, one, par).values[:, 0]
print("offsets      ", np.round(par.axes[0], 3))
print("chord lengths", np.round(chords, 6))
print("2 sqrt(1-p^2)", np.round(2 * np.sqrt(1 - par.axes[0] ** 2), 6))

# Curved metric: the same bump produces a sinogram on the fan grid of dM1.
fan = ry.fan_grid(lens, 256, 256)
bump = tn.gaussian_bump(grid, (0.3, -0.2), 0.12, metric_tag=lens.tag)
sino = xr.forward(lens, None, bump, fan)
print(f"\n||I f||_mu on lambda=0.1: {xr.sino_norm(sino):.6f}")

# Backprojection is the adjoint: compare both sides of the pairing.
b, a = np.meshgrid(*fan.axes, indexing="ij")
w = xr.Sinogram(fan, np.cos(2 * b) * np.cos(a), 0, lens.tag)
lhs = xr.sino_inner(sino, w)
rhs = tn.inner(lens, bump, xr.adjoint(lens, None, w, grid))
print(f"<I f, w> = {lhs:.8f}   <f, I* w> = {rhs:.8f}")

# Euclidean normal operator of a centred Gaussian has a closed form.
width = 0.15
g = tn.gaussian_bump(grid, (0, 0), width)
N = xr.normal(flat, None, g)
r = grid.radius()
exact = (2 * np.pi) ** 1.5 * width * i0e(r ** 2 / (4 * width ** 2))
inside = r < 1.2
rel = np.linalg.norm((N.data[0] - exact)[inside]) / np.linalg.norm(
    exact[inside])
print(f"N f vs closed form, relative L2 error on M1: {rel:.2e}")
