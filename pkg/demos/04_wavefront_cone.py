"""Spectral energy of a parallel-beam sinogram sits inside the cone
|xi_phi| <= R |xi_p| when f is supported in the disc of radius R.

Run: python3 demos/04_wavefront_cone.py
"""
from geoxray import harness as hs

for kind in ("disc", "gaussian"):
    rep = hs.run_cone_check(kind=kind)
    shares = ", ".join(f"c={c}: {f:.1e}"
                       for c, f in zip(rep.dilations, rep.fractions))
    print(f"{kind:9s} R={rep.R:.2f}  outside-cone share  {shares}")

