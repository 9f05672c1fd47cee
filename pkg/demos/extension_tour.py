"""Evaluate E f on a grid, check it against the direct sum, and watch the Knapp decay.

Run with ``python3 demos/extension_tour.py``; takes a few seconds.
"""
import numpy as np

from saddlelab.extension import (default_grid, direct_extension, evaluate_extension, knapp, lp_norm,
                                 random_function, stream_norms)

# %% a random f on the unit square, sampled at the default resolution
R, gamma = 32, 1.0
N, M = default_grid(R)
f = random_function(N, seed=0)
F = evaluate_extension(f, gamma, R, M)
print(f"grid {N}x{N} samples, {M}^3 frequencies, max |E f| = {np.abs(F.values).max():.4f}")

# %% spot check a few grid points against the pointwise midpoint sum
idx = np.random.default_rng(1).integers(0, M, (5, 3))
direct = direct_extension(f, gamma, F.axis[idx])
grid = F.values[idx[:, 0], idx[:, 1], idx[:, 2]]
print("max |grid - direct| =", float(np.max(np.abs(grid - direct))))

# %% the L^2 mass on B_R grows like R^(1/2) ||f||_2
print(f"||E f||_2 / (R^1/2 ||f||_2) = {lp_norm(F, 2) / (R**0.5 * f.norm2()):.3f}")

# %% Knapp example: the indicator of an R^(-1/2) cap; ||E f||_p should scale like R^(-1 + 2/p)
p = 4.0
Rs = [8, 16, 32, 64]
vals = [stream_norms(knapp(r), gamma, r, [p])[p] for r in Rs]
slope = np.polyfit(np.log(Rs), np.log(vals), 1)[0]
print(f"Knapp ||E f||_{p:g} exponent {slope:.3f} (stationary phase predicts {-1 + 2 / p:.3f})")
