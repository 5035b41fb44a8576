"""From a jump kernel to diffusion coefficients.

A jump process is fixed by a kernel p(delta; x) and a rate 1/tau(x). Its
first two jump moments give a diffusivity D and a drift V'. When the rates
obey detailed balance the drift is almost entirely dD/dx, so the process
looks like Fick's law with no extra advection.

Run: python3 demos/01_kernel_to_diffusion.py
"""
import numpy as np

from metransport import (
    GaussianKernel,
    Grid,
    RateField,
    ShiftedGaussianKernel,
    SymmetricShape,
    build_detailed_balance_kernel,
    reduce_to_transport,
)
from metransport.functions import Sinusoidal

grid = Grid(0.0, 1.0, 400)

print("Homogeneous kernels")
for label, kernel in [("gaussian sigma=0.1", GaussianKernel(0.1)),
                      ("shifted gaussian mu=0.02", ShiftedGaussianKernel(sigma=0.05, mu=0.02))]:
    p = reduce_to_transport(kernel, RateField(1.0), grid)
    print(f"  {label:26s} D = {p.D.mean():.6f}   V' = {p.Vprime.mean():+.6f}")

print("\nDetailed balance with a sinusoidal site factor")
print("  width    sup|V'-dD/dx| / sup|dD/dx|")
previous = None
for width in (0.1, 0.05, 0.025):
    k, r = build_detailed_balance_kernel(SymmetricShape.unit_rate("gaussian", width),
                                         Sinusoidal(1.0, 0.5), grid=grid)
    p = reduce_to_transport(k, r, grid)
    mismatch = np.max(np.abs(p.Vprime - p.dDdx)) / np.max(np.abs(p.dDdx))
    trend = f"   (x{previous / mismatch:.2f} smaller)" if previous else ""
    print(f"  {width:<7} {mismatch:.5f}{trend}")
    previous = mismatch
print("The Fick drift V = V' - dD/dx shrinks like width^2 relative to dD/dx.")
