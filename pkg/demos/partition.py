"""Polynomial partitioning of B_R, the wall, and how tubes meet the cells.

Run with ``python3 demos/partition.py``; under a minute.
"""
import numpy as np

from saddlelab.polypart import classify_tubes, ham_sandwich_partition, smooth_weights, tube_cell_incidence
from saddlelab.scenarios import sample_tubes

R, delta, M = 64.0, 0.04, 32
w = smooth_weights(M, seed=0)

for D in (2, 4):
    P, dec = ham_sandwich_partition(w, D, R, delta, seed=1)
    m = dec.masses(w)
    print(f"D={D}: factor degrees {dec.info['degrees']}, {int(np.sum(m > 0))} cells, "
          f"max/min mass {m.max() / m.min():.3f}, wall covers {dec.wall.mean():.1%} of the grid")

    # straight tubes meet at most D + 1 cells
    tubes = sample_tubes(1.0, R, delta, 100, np.random.default_rng(D))
    _, counts, grazing = tube_cell_incidence(tubes, dec, D)
    print(f"  cells per tube: max {counts.max()} (bound {D + 1}), grazing {len(grazing)}")

    cls = classify_tubes(tubes, P, R, delta, M=M, wall_mask=dec.wall)
    n_tang = len({i for s in cls.tang for i in s})
    print(f"  {len(cls.centers)} balls, {n_tang} tangential tubes from {len(cls.tangential_thetas(tubes))} caps, "
          f"max transversal multiplicity {cls.trans_multiplicity(len(tubes)).max()}")
