"""Wave packets at scale R: caps, tubes, and the audit of the packet properties.

Run with ``python3 demos/wave_packets.py``; about ten seconds.
"""
import numpy as np

from saddlelab.extension import random_function
from saddlelab.wavepacket import decompose, make_theta_caps, make_tubes, packet_extension, tube_scan, verify_packets

R, delta, gamma = 64, 0.04, 1.0
caps = make_theta_caps(gamma, R)
cap = caps[len(caps) // 2]
print(f"{len(caps)} caps of side {cap.side}; direction of the middle cap {np.round(cap.direction, 3)}")
print(f"{len(make_tubes(cap, R, delta))} tubes meet B_R for that cap")
print("coverage scan:", tube_scan(cap, R, delta, seed=0))

# %% decompose a random f and audit it
dec = decompose(random_function(4 * R, seed=2), gamma, R, delta)
for row in verify_packets(dec):
    print(f"  {row['property']:18s} measured {float(row['measured']):.3e}  threshold {row['threshold']:.1e}  "
          f"{'pass' if row['passed'] else 'FAIL'}")

# %% the heaviest packet among tubes through B_R: E f_T on its axis and three radii away
en = dec.energies(cap.index)
central = [t for t in dec.tubes(cap.index) if max(map(abs, t.base)) <= R / 2]
t = max(central, key=lambda t: en[(-t.lattice[0], -t.lattice[1])])
k = (-t.lattice[0], -t.lattice[1])
p = dec.packet(cap.index, k)
h = np.linspace(-R, R, 33)
h = h[np.all(np.abs(t.axis_point(h)) <= R, axis=1)]
e = np.cross(t.direction, [0.0, 0.0, 1.0])
e /= np.linalg.norm(e)
on = np.abs(packet_extension(p, dec.N, gamma, t.axis_point(h))).max()
off = np.abs(packet_extension(p, dec.N, gamma, t.axis_point(h) + 3 * t.radius * e)).max()
print(f"packet {k}: |E f_T| on axis {on:.2e}, at 3 radii {off:.2e}")
