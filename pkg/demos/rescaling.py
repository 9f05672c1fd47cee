"""Parabolic rescaling of strips: phase identities, the operator identity and the norm factor.

Run with ``python3 demos/rescaling.py``.
"""
import numpy as np

from saddlelab.extension import bump
from saddlelab.rescale import (compose_horizontal, horizontal_rescale, identity_residual, norm_relation,
                               short_rescale, vertical_rescale, verify_operator_identity)

K = 16.0
maps = {
    "horizontal": horizontal_rescale(1.0, K, 0.5),
    "vertical": vertical_rescale(0.2, K, 0.25),
    "short": short_rescale(-0.25, K, 0.5, 0.0),
}
rng = np.random.default_rng(0)
xp, yp = rng.uniform(-1, 2, 10_000), rng.uniform(0, 1, 10_000)

for name, r in maps.items():
    res = np.max(np.abs(identity_residual(r, xp, yp)))
    print(f"{name:10s} gamma {r.gamma_in:+.3f} -> {r.gamma_out:+.4f}, jacobian {r.jacobian:.4f}, residual {res:.1e}")


# %% a smooth bump inside the strip, pushed through the operator identity
def in_strip(rect):
    x0, y0, x1, y1 = rect
    cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
    return lambda x, y: bump((x - cx) / (0.49 * (x1 - x0))) * bump((y - cy) / (0.49 * (y1 - y0)))


r = maps["horizontal"]
probes = rng.uniform(-16, 16, (10, 3))
print("operator identity relative gap:", verify_operator_identity(r, in_strip(r.strip), probes, n=512))
up, down = norm_relation(r, in_strip(r.strip), n=512)
print(f"||f^L|| / ||f_L|| = {up / down:.6f}, K^(1/8) = {K**0.125:.6f}")

# %% two horizontal rescalings compose to one with K1 * K2
r2 = horizontal_rescale(r.gamma_out, 16, 0.25)
both = compose_horizontal(r, r2)
print(f"composed: K = {both.K:g}, gamma_out = {both.gamma_out:.5f}")
