"""Weighted communication graphs and their Laplacians.

Edge convention: ``weights[i, j] = alpha_ij > 0`` means agent ``i`` listens
to agent ``j`` (``j`` is an in-neighbour of ``i``), so information flows
``j -> i`` and row ``i`` of the Laplacian carries agent ``i``'s coupling.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components

from . import numkit
from .errors import DimensionError

DEFAULT_ALPHA_FLOOR = 1e-6


@dataclass(frozen=True, eq=False)
class Digraph:
    weights: np.ndarray
    alpha_floor: float = DEFAULT_ALPHA_FLOOR
    name: str = ""

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] < 1:
            raise DimensionError(f"weights must be a square m x m array, got {w.shape}")
        if not self.alpha_floor > 0:
            raise ValueError("alpha_floor must be positive")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and nonnegative")
        if np.any(np.diag(w) != 0):
            raise ValueError("self-loop weights (diagonal) must be zero")
        small = (w != 0) & (w < self.alpha_floor)
        if np.any(small):
            i, j = np.argwhere(small)[0]
            raise ValueError(f"weight alpha[{i},{j}]={w[i, j]} is below alpha_floor={self.alpha_floor}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def m(self) -> int:
        return self.weights.shape[0]

    @property
    def undirected(self) -> bool:
        return bool(np.array_equal(self.weights, self.weights.T))

    @classmethod
    def from_edges(cls, m: int, edges: Iterable, undirected=True,
                   alpha_floor=DEFAULT_ALPHA_FLOOR, name="", one_based=False) -> "Digraph":
        """Build from ``(i, j, alpha)`` triples.

        For directed graphs a triple sets ``alpha_ij``: agent ``i`` listens to ``j``.
        """
        w = np.zeros((m, m))
        off = 1 if one_based else 0
        for i, j, a in edges:
            i, j = int(i) - off, int(j) - off
            if not (0 <= i < m and 0 <= j < m) or i == j:
                raise ValueError(f"invalid edge ({i + off}, {j + off}) for m={m}")
            w[i, j] = a
            if undirected:
                w[j, i] = a
        return cls(w, alpha_floor=alpha_floor, name=name)

    def __eq__(self, other):
        if not isinstance(other, Digraph):
            return NotImplemented
        return self.alpha_floor == other.alpha_floor and np.array_equal(self.weights, other.weights)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class LaplacianMatrix:
    L: np.ndarray
    source: Digraph = field(repr=False)

    @property
    def m(self) -> int:
        return self.L.shape[0]

    @property
    def undirected(self) -> bool:
        return self.source.undirected

    @property
    def name(self) -> str:
        return self.source.name


def laplacian_of(g: Digraph) -> LaplacianMatrix:
    w = g.weights
    L = -w.copy()
    L[np.diag_indices_from(L)] = w.sum(axis=1)
    L.setflags(write=False)
    return LaplacianMatrix(L, g)


def laplacian_from_matrix(L, alpha_floor=DEFAULT_ALPHA_FLOOR, name="") -> LaplacianMatrix:
    """Recover the graph of a given Laplacian (row sums must vanish)."""
    L = numkit.as_matrix(L, "L", square=True).astype(float)
    w = -L.copy()
    np.fill_diagonal(w, 0.0)
    w[np.abs(w) == 0] = 0.0
    lap = laplacian_of(Digraph(w, alpha_floor=alpha_floor, name=name))
    if not np.allclose(lap.L, L, rtol=0, atol=1e-12 * max(1.0, float(np.abs(L).max()))):
        raise ValueError("matrix is not a Laplacian: rows must sum to zero")
    return lap


def _flow_graph(g: Digraph) -> csr_matrix:
    # adjacency in the direction information travels: j -> i when alpha_ij > 0
    return csr_matrix((g.weights.T != 0).astype(np.int8))


def is_connected(g: Digraph) -> bool:
    """True iff some base node reaches every other node along the edges."""
    if g.m == 1:
        return True
    adj = _flow_graph(g)
    for root in range(g.m):
        if len(breadth_first_order(adj, root, directed=True, return_predecessors=False)) == g.m:
            return True
    return False


def is_strongly_connected(g: Digraph) -> bool:
    if g.m == 1:
        return True
    n, _ = connected_components(_flow_graph(g), directed=True, connection="strong")
    return n == 1


@dataclass(frozen=True)
class SpectralSummary:
    values: np.ndarray
    lambda2: complex
    right1: np.ndarray
    left1: np.ndarray
    simple_zero: bool

    @property
    def algebraic_connectivity(self) -> float:
        """Real part of the second smallest eigenvalue."""
        return float(np.real(self.lambda2))


def _zero_tol(L) -> float:
    return 1e-9 * max(1.0, float(np.linalg.norm(L, 2)))


def spectral_summary(lap: LaplacianMatrix) -> SpectralSummary:
    L = lap.L
    m = L.shape[0]
    if lap.undirected:
        vals, vecs = np.linalg.eigh(L)
        values = vals.astype(complex)
        right = vecs[:, 0]
    else:
        dec = numkit.eig(L)
        order = numkit._ordering(dec.values, descending=False)
        values = dec.values[order]
        right = dec.right_vectors[:, order[0]]
    values = numkit.sort_eigenvalues(values, descending=False)
    tol = _zero_tol(L)
    simple_zero = bool(np.sum(np.abs(values) <= tol) == 1)
    lambda2 = complex(values[1]) if m > 1 else complex(np.nan, np.nan)

    right = numkit.real_if_close(right)
    if abs(right.sum()) > 0:
        right = right * (m / right.sum())

    # left null vector from the SVD of L: last left singular vector
    u, _, _ = np.linalg.svd(L)
    left = u[:, -1]
    s = left.sum()
    left = left / s if abs(s) > 1e-12 else np.full(m, np.nan)
    if lap.undirected and simple_zero:
        left = np.full(m, 1.0 / m)
    return SpectralSummary(values=values, lambda2=lambda2, right1=right,
                           left1=np.asarray(left, dtype=float), simple_zero=simple_zero)


def algebraic_connectivity(lap: LaplacianMatrix) -> float:
    return spectral_summary(lap).algebraic_connectivity


@dataclass(frozen=True)
class LaplacianReport:
    d1_row_sums: bool
    d1_residual: float
    d2_null_vector: bool
    d2_residual: float
    d3_simple_zero: bool
    connected: bool
    d4_right_half: bool
    min_real_part: float
    max_imag_part: float

    @property
    def passed(self) -> bool:
        return self.d1_row_sums and self.d2_null_vector and self.d3_simple_zero and self.d4_right_half


def validate_laplacian_properties(lap: LaplacianMatrix) -> LaplacianReport:
    """Numerical check of the four standard Laplacian properties.

    D3 is vacuous for graphs that are not connected. D4 additionally demands
    a real spectrum (to 1e-10) for undirected graphs.
    """
    L = lap.L
    m = L.shape[0]
    scale = max(1.0, float(np.abs(L).max()))
    d1 = float(np.abs(L.sum(axis=1)).max())
    d2 = float(np.linalg.norm(L @ np.ones(m)))
    summ = spectral_summary(lap)
    connected = is_connected(lap.source)
    min_re = float(summ.values.real.min())
    max_im = float(np.abs(summ.values.imag).max())
    d4 = min_re >= -_zero_tol(L)
    if lap.undirected:
        d4 = d4 and max_im <= 1e-10
    return LaplacianReport(
        d1_row_sums=d1 <= 1e-12 * scale, d1_residual=d1,
        d2_null_vector=d2 <= 1e-12 * scale and abs(summ.values[0]) <= _zero_tol(L), d2_residual=d2,
        d3_simple_zero=summ.simple_zero if connected else True, connected=connected,
        d4_right_half=bool(d4), min_real_part=min_re, max_imag_part=max_im,
    )
