"""Bipartite factor graph between antennas (sum nodes) and users (variable nodes).

Edges are stored once, sorted by (sum node, user).  ``var_order`` permutes
edges into (user, sum node) order so both sides have compressed index ranges.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FactorGraph:
    num_sum_nodes: int
    num_var_nodes: int
    rows: np.ndarray       # sum-node index per edge
    cols: np.ndarray       # variable-node index per edge
    coef: np.ndarray       # sparsified channel coefficient per edge
    sum_ptr: np.ndarray    # edges sum_ptr[i]:sum_ptr[i+1] belong to sum node i
    var_order: np.ndarray  # edge ids sorted by variable node
    var_ptr: np.ndarray

    @property
    def num_edges(self) -> int:
        return len(self.rows)

    def sum_neighbors(self, i: int) -> np.ndarray:
        """Users adjacent to antenna ``i``, ascending."""
        return self.cols[self.sum_ptr[i]:self.sum_ptr[i + 1]]

    def var_neighbors(self, k: int) -> np.ndarray:
        """Antennas adjacent to user ``k``, ascending."""
        return self.rows[self.var_order[self.var_ptr[k]:self.var_ptr[k + 1]]]

    def sum_degrees(self) -> np.ndarray:
        return np.diff(self.sum_ptr)

    def var_degrees(self) -> np.ndarray:
        return np.diff(self.var_ptr)


def build_graph(channel) -> FactorGraph:
    """Graph of the nonzero pattern of ``channel.h_sparse`` (or a bare matrix)."""
    h = np.asarray(getattr(channel, "h_sparse", channel), dtype=float)
    mn, k = h.shape
    rows, cols = np.nonzero(h)
    coef = h[rows, cols].copy()
    sum_ptr = np.zeros(mn + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=mn), out=sum_ptr[1:])
    var_order = np.lexsort((rows, cols))
    var_ptr = np.zeros(k + 1, dtype=np.int64)
    np.cumsum(np.bincount(cols, minlength=k), out=var_ptr[1:])
    for a in (rows, cols, coef, sum_ptr, var_order, var_ptr):
        a.flags.writeable = False
    return FactorGraph(mn, k, rows, cols, coef, sum_ptr, var_order, var_ptr)


def edge_count(graph: FactorGraph) -> int:
    return graph.num_edges
