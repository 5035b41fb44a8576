"""Random walkers agree with the master equation and become Gaussian.

A cloud of walkers is histogrammed and compared, bin by bin, with the lattice
master equation started from the same density. Then the sum of n tophat jumps
is tracked: its excess kurtosis falls like -1.2/n, which is why only the first
two jump moments survive at long times.

Run: python3 demos/04_walkers_and_gaussianization.py
"""
import numpy as np

from metransport import GaussianKernel, Grid, LatticeField, RateField, TophatKernel
from metransport import assemble_generator, evolve, n_fold_convolution, run_walkers
from metransport.walkers import WalkerEnsemble, histogram, uniform_positions

grid, n, seed = Grid(0.0, 1.0, 256), 100_000, 1
kernel, rate = GaussianKernel(0.05), RateField(1.0)
x = grid.centers
start = LatticeField(grid, np.where((x > 0.375) & (x < 0.625), 4.0, 0.0))
field = evolve(start, assemble_generator(kernel, rate, grid), 1.0)
walkers = run_walkers(kernel, rate, WalkerEnsemble.start(uniform_positions(n, 0.375, 0.625, seed), seed),
                      1.0, [1.0])
hist = histogram(walkers.snapshot_positions[0], walkers.snapshot_frozen[0], np.linspace(0, 1, 65))
expected = n * field.values.reshape(64, -1).sum(axis=1) * grid.h
ok = expected > 0
z = np.abs(hist.counts[ok] - expected[ok]) / np.sqrt(expected[ok])
print(f"{n} walkers at t = 1: worst bin is {z.max():.2f} Poisson standard errors from the ME")

print("\n  n   excess kurtosis   n * kurtosis")
for steps in (1, 2, 5, 10, 40):
    k = n_fold_convolution(TophatKernel(0.1), steps, 0.1 / 2000).excess_kurtosis
    print(f"  {steps:<3} {k:+.6f}        {steps * k:+.4f}")
ks = n_fold_convolution(TophatKernel(0.1), 100, 0.1 / 2000).ks_to_gaussian()
print(f"KS distance to a normal after 100 jumps: {ks:.1e}")
