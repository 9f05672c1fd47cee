"""Broad and narrow points: which strips dominate E f, and how the labels react to alpha.

Run with ``python3 demos/broad_points.py``.
"""
import numpy as np

from saddlelab.extension import (LABELS, ScaleParams, broad_mask, broad_norms, classify_points, default_grid,
                                 random_function, restrict)
from saddlelab.partition import make_strips

R, K = 16, 16
N, M = default_grid(R)
f = random_function(N, seed=3)

# %% labels A (broad), B (horizontal strip wins), C (vertical), D (short)
for gamma in (0.0, 1.0):
    lab, _ = classify_points(f, gamma, ScaleParams(R, K, 0.2), M)
    counts = {k: int(np.sum(lab == v)) for k, v in LABELS.items()}
    # with |gamma| K^(1/2) >= 1 only horizontal strips are used, so C and D stay empty
    print(f"gamma={gamma:g}: {counts}")

# %% the broad set grows with alpha
for alpha in (0.25, 0.5, 1.0):
    bm = broad_mask(f, 0.0, ScaleParams(R, K, 0.2, alpha=alpha), M=M)
    print(f"alpha={alpha:.2f}: broad fraction {bm.mask.mean():.3f}")

# %% f inside one short strip lies in exactly one strip of every kind: all broad at alpha = 1
rect = tuple(make_strips(K, 0.0)["short_vertical"].rects[5])
fs = restrict(f, rect)
print("single strip, alpha=1, all broad:", bool(broad_mask(fs, 0.0, ScaleParams(R, K, 0.2, alpha=1.0), M=M).mask.all()))

# %% broad-part norm against ||f||_2^(12/13) ||f||_inf^(1/13)
out = broad_norms(f, 1.0, ScaleParams(R, K, 0.2), [3.25], M=M)
a = ScaleParams(R, K, 0.2).alpha
rhs = f.norm2() ** (12 / 13) * f.norm_inf() ** (1 / 13)
print(f"||Br E f||_3.25 / rhs = {out['broad'][(a, 3.25)] / rhs:.4f}")
