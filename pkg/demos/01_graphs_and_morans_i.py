"""Areal graphs and spatial autocorrelation.

Builds adjacency structures, then contrasts Moran's I on a spatially
smooth field, pure noise, and a checkerboard. Runs in about a second.
"""

import numpy as np

from arealbayes import build_graph, morans_i
from arealbayes.simulate import make_lattice, sample_icar

# A graph can come from any undirected edge list; counties typically use
# binary rook/queen contiguity, which is the default weight of 1.
triangle_plus_island = build_graph([(0, 1), (1, 2), (0, 2)], n_areas=4)
print(triangle_plus_island)
print("islands:", np.flatnonzero(triangle_plus_island.island_mask))

grid = make_lattice(15, 15)
print(grid)

rng = np.random.default_rng(0)

smooth = 0.8 * np.tanh(sample_icar(grid, 1.0, rng) / 1.2)
noise = rng.standard_normal(grid.n_areas)
checker = np.array(
    [1.0 if (i // 15 + i % 15) % 2 == 0 else -1.0 for i in range(grid.n_areas)]
)

print("\nfield            Moran's I   z        p")
for name, x in [("smooth (ICE-like)", smooth), ("white noise", noise), ("checkerboard", checker)]:
    res = morans_i(grid, x)
    print(f"{name:16s}  {res.statistic:8.3f}  {res.z_score:7.2f}  {res.p_value:.2e}")

# for small n the permutation test avoids the normal approximation
tiny = make_lattice(3, 3)
x = rng.standard_normal(9)
perm = morans_i(tiny, x, method="permutation", permutations=999, seed=1)
print(f"\npermutation test on 3x3 noise: I={perm.statistic:.3f}, p={perm.p_value:.3f}")
