"""Areal adjacency graphs and graph-level spatial statistics.

A :class:`SpatialGraph` stores an undirected, weighted adjacency structure
over ``n_areas`` areal units (counties, lattice cells, ...). It is the
backbone of every intrinsic-CAR computation in this package: conditionals,
quadratic forms and constrained sweeps all read neighbour lists and weight
sums from here.

Graphs are immutable after construction and safe to share across worker
processes.
"""

from __future__ import annotations

import math
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np
from scipy import stats

from .errors import ValidationError

__all__ = [
    "SpatialGraph",
    "build_graph",
    "subgraph",
    "morans_i",
    "MoranResult",
]


class SpatialGraph:
    """Symmetric weighted adjacency over ``n_areas`` areal units.

    Attributes
    ----------
    n_areas : int
        Number of areal units, indexed ``0 .. n_areas - 1``.
    neighbor_lists : list[list[int]]
        Sorted adjacent indices per area. ``i`` never lists itself.
    neighbor_weights : list[list[float]]
        Edge weights parallel to ``neighbor_lists``; symmetric by
        construction (``w_ij == w_ji``).
    weight_sums : ndarray
        ``w_{i+} = sum_j w_ij`` per area. Zero exactly for islands.
    component_labels : ndarray
        Connected-component id per area, numbered by smallest member index.
    """

    def __init__(self, neighbor_lists, neighbor_weights, n_areas):
        self.n_areas = int(n_areas)
        self.neighbor_lists = neighbor_lists
        self.neighbor_weights = neighbor_weights
        self.weight_sums = np.array(
            [math.fsum(w) for w in neighbor_weights], dtype=float
        )
        self.component_labels = _label_components(neighbor_lists, self.n_areas)
        self.n_components = int(self.component_labels.max()) + 1 if self.n_areas else 0
        self.is_binary = all(
            w == 1.0 for weights in neighbor_weights for w in weights
        )

    def degree(self, i: int) -> int:
        return len(self.neighbor_lists[i])

    @property
    def island_mask(self) -> np.ndarray:
        """Boolean mask of degree-0 areas."""
        return np.array([len(nb) == 0 for nb in self.neighbor_lists])

    @property
    def n_edges(self) -> int:
        return sum(len(nb) for nb in self.neighbor_lists) // 2

    def edges(self) -> Iterator[tuple[int, int, float]]:
        """Yield each undirected edge once as ``(i, j, w)`` with ``i < j``."""
        for i, (nbs, wts) in enumerate(zip(self.neighbor_lists, self.neighbor_weights)):
            for j, w in zip(nbs, wts):
                if i < j:
                    yield i, j, w

    def dense_weights(self) -> np.ndarray:
        """Dense symmetric weight matrix. Intended for small-n oracles."""
        W = np.zeros((self.n_areas, self.n_areas))
        for i, j, w in self.edges():
            W[i, j] = w
            W[j, i] = w
        return W

    def components(self) -> list[np.ndarray]:
        """Member indices of each connected component, by label order."""
        return [
            np.flatnonzero(self.component_labels == c)
            for c in range(self.n_components)
        ]

    def __eq__(self, other) -> bool:
        if not isinstance(other, SpatialGraph):
            return NotImplemented
        return (
            self.n_areas == other.n_areas
            and self.neighbor_lists == other.neighbor_lists
            and self.neighbor_weights == other.neighbor_weights
        )

    def __repr__(self) -> str:
        return (
            f"SpatialGraph(n_areas={self.n_areas}, n_edges={self.n_edges}, "
            f"n_components={self.n_components})"
        )


def _label_components(neighbor_lists, n: int) -> np.ndarray:
    labels = np.full(n, -1, dtype=int)
    current = 0
    for start in range(n):
        if labels[start] >= 0:
            continue
        stack = [start]
        labels[start] = current
        while stack:
            u = stack.pop()
            for v in neighbor_lists[u]:
                if labels[v] < 0:
                    labels[v] = current
                    stack.append(v)
        current += 1
    return labels


def build_graph(
    edges: Iterable[tuple[int, int, float]] | Iterable[tuple[int, int]],
    n_areas: int | None = None,
) -> SpatialGraph:
    """Build a canonical symmetric graph from an undirected edge list.

    Each edge is ``(i, j)`` or ``(i, j, weight)``; missing weights default
    to 1.0 (binary contiguity). Listing an edge in either orientation, or
    repeatedly with the same weight, is accepted; repeating it with a
    different weight is a validation error, as is a self loop or a negative
    weight. Pairs not listed have weight zero. Areas never mentioned are
    islands, which are permitted here and handled by each downstream
    module's island policy.

    Parameters
    ----------
    edges : iterable of (i, j[, weight])
    n_areas : int, optional
        Total number of areas. Defaults to ``max index + 1``; pass it
        explicitly when trailing areas are islands.
    """
    pair_weights: dict[tuple[int, int], float] = {}
    max_idx = -1
    for edge in edges:
        if len(edge) == 2:
            i, j = edge
            w = 1.0
        else:
            i, j, w = edge
        i, j, w = int(i), int(j), float(w)
        if i == j:
            raise ValidationError(f"self-loop on area {i} is not allowed")
        if w < 0:
            raise ValidationError(f"negative weight {w} on edge ({i}, {j})")
        key = (i, j) if i < j else (j, i)
        if key in pair_weights:
            if not math.isclose(pair_weights[key], w, rel_tol=1e-12, abs_tol=1e-12):
                raise ValidationError(
                    f"conflicting weights for edge {key}: "
                    f"{pair_weights[key]} vs {w}"
                )
        else:
            pair_weights[key] = w
        max_idx = max(max_idx, i, j)

    n = max_idx + 1 if n_areas is None else int(n_areas)
    if n_areas is not None and max_idx >= n:
        raise ValidationError(
            f"edge index {max_idx} out of range for n_areas={n}"
        )
    if n < 0:
        raise ValidationError("n_areas must be nonnegative")

    neighbor_lists: list[list[int]] = [[] for _ in range(n)]
    neighbor_weights: list[list[float]] = [[] for _ in range(n)]
    for (i, j), w in sorted(pair_weights.items()):
        if w == 0.0:
            continue
        neighbor_lists[i].append(j)
        neighbor_weights[i].append(w)
        neighbor_lists[j].append(i)
        neighbor_weights[j].append(w)
    for i in range(n):
        order = np.argsort(neighbor_lists[i], kind="stable")
        neighbor_lists[i] = [neighbor_lists[i][k] for k in order]
        neighbor_weights[i] = [neighbor_weights[i][k] for k in order]
    return SpatialGraph(neighbor_lists, neighbor_weights, n)


def subgraph(graph: SpatialGraph, keep: Sequence[int] | np.ndarray) -> tuple[SpatialGraph, np.ndarray]:
    """Restrict a graph to a subset of areas, relabelling ``0 .. k-1``.

    ``keep`` is either a boolean mask of length ``n_areas`` or a sorted
    sequence of indices. Returns the restricted graph and the original
    indices of its areas (so results can be mapped back).
    """
    keep = np.asarray(keep)
    if keep.dtype == bool:
        if keep.shape != (graph.n_areas,):
            raise ValidationError("boolean keep mask has wrong length")
        original = np.flatnonzero(keep)
    else:
        original = np.unique(keep.astype(int))
        if len(original) and (original[0] < 0 or original[-1] >= graph.n_areas):
            raise ValidationError("keep indices out of range")
    new_index = {int(old): new for new, old in enumerate(original)}
    edges = [
        (new_index[i], new_index[j], w)
        for i, j, w in graph.edges()
        if i in new_index and j in new_index
    ]
    return build_graph(edges, n_areas=len(original)), original


class MoranResult(NamedTuple):
    statistic: float
    z_score: float
    p_value: float
    expected: float
    variance: float
    n_used: int


def morans_i(
    graph: SpatialGraph,
    x: np.ndarray,
    method: str = "analytic",
    permutations: int = 999,
    seed: int = 0,
) -> MoranResult:
    """Global Moran's I with a two-sided significance test.

    ``I = (n / S0) * sum_ij w_ij (x_i - xbar)(x_j - xbar) / sum_i (x_i - xbar)^2``
    with ``S0 = sum_ij w_ij``. Areas with missing (NaN) ``x`` are removed
    together with their edges before anything is computed.

    ``method="analytic"`` uses the mean ``-1/(n-1)`` and variance of I
    under the normality null; ``method="permutation"`` instead compares
    against ``permutations`` seeded random relabellings (recommended for
    small n).
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (graph.n_areas,):
        raise ValidationError(
            f"x has length {x.shape[0]}, graph has {graph.n_areas} areas"
        )
    observed = np.isfinite(x)
    if not observed.all():
        graph, original = subgraph(graph, observed)
        x = x[original]
    n = graph.n_areas
    if n < 3:
        raise ValidationError("Moran's I needs at least 3 observed areas")
    z = x - x.mean()
    denom = float(z @ z)
    if denom == 0.0:
        raise ValidationError("x has zero variance")
    s0 = float(graph.weight_sums.sum())
    if s0 == 0.0:
        raise ValidationError("graph has no edges among observed areas")

    cross = 0.0
    s1 = 0.0
    for i, (nbs, wts) in enumerate(zip(graph.neighbor_lists, graph.neighbor_weights)):
        zi = z[i]
        for j, w in zip(nbs, wts):
            cross += w * zi * z[j]
            s1 += 2.0 * w * w
    stat = (n / s0) * cross / denom
    e_i = -1.0 / (n - 1)

    if method == "analytic":
        s2 = float(np.sum((2.0 * graph.weight_sums) ** 2))
        var = (n * n * s1 - n * s2 + 3.0 * s0 * s0) / (s0 * s0 * (n * n - 1.0)) - e_i**2
        if var <= 0:
            raise ValidationError("degenerate weight structure: variance of I <= 0")
        zscore = (stat - e_i) / math.sqrt(var)
        pvalue = 2.0 * stats.norm.sf(abs(zscore))
        return MoranResult(stat, zscore, pvalue, e_i, var, n)
    if method == "permutation":
        rng = np.random.default_rng(seed)
        sims = np.empty(permutations)
        for k in range(permutations):
            xp = rng.permutation(x)
            zp = xp - xp.mean()
            c = 0.0
            for i, (nbs, wts) in enumerate(
                zip(graph.neighbor_lists, graph.neighbor_weights)
            ):
                zi = zp[i]
                for j, w in zip(nbs, wts):
                    c += w * zi * zp[j]
            sims[k] = (n / s0) * c / float(zp @ zp)
        var = float(np.var(sims, ddof=1))
        zscore = (stat - e_i) / math.sqrt(var) if var > 0 else math.inf
        extreme = np.sum(np.abs(sims - e_i) >= abs(stat - e_i))
        pvalue = (1.0 + float(extreme)) / (permutations + 1.0)
        return MoranResult(stat, zscore, pvalue, e_i, var, n)
    raise ValidationError(f"unknown method {method!r}")
