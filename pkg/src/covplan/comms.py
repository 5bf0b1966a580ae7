"""Robot communication graph and graph-shift feature exchange.

Connectivity uses Euclidean distance between robot cells (closed ball:
distance exactly equal to the range is connected).  Footprints elsewhere
use Chebyshev distance; the two metrics serve different mechanisms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .world import RobotState


@dataclass
class CommGraph:
    """Symmetric 0/1 adjacency over robots plus the position snapshot."""

    adjacency: np.ndarray  # (N, N) float64
    positions: np.ndarray  # (N, 2)

    @property
    def n_robots(self) -> int:
        return self.adjacency.shape[0]

    def neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[i] > 0)


@dataclass
class GraphShift:
    """Adjacency normalized by its spectral radius (non-expansive shift)."""

    matrix: np.ndarray  # (N, N) float64

    @property
    def n_robots(self) -> int:
        return self.matrix.shape[0]


def build_graph(robots: RobotState, comm_range: float) -> CommGraph:
    """Adjacency A[i, j] = 1 iff Euclidean distance(pos_i, pos_j) <= range,
    with zero diagonal."""
    pos = np.asarray(robots.positions, dtype=np.float64)
    if pos.shape[0] < 1:
        raise ValueError("need at least one robot")
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))
    adj = (dist <= comm_range).astype(np.float64)
    np.fill_diagonal(adj, 0.0)
    return CommGraph(adjacency=adj, positions=pos.astype(np.int64))


def spectral_radius(matrix: np.ndarray, tol: float = 1e-6, max_iter: int = 5000) -> float:
    """Largest-magnitude eigenvalue of a symmetric nonnegative matrix,
    estimated by power iteration to the given relative tolerance.

    The iteration runs on A^2, whose dominant eigenvalue is the squared
    spectral radius; this converges even for bipartite graphs, where A
    itself has a +/- eigenvalue pair of equal magnitude.  Convergence is
    certified by the Rayleigh residual bound and the returned estimate sits
    on the high side of the bracket, so dividing by it never yields an
    expansive shift.  Reductions use math.fsum (exactly rounded), making
    the estimate bit-identical under any permutation of the node labels.
    """
    a = np.asarray(matrix, dtype=np.float64)
    n = a.shape[0]
    if not a.any():
        return 0.0
    b = a @ a  # exact for 0/1 adjacency: integer-valued entries
    v = np.full(n, 1.0 / math.sqrt(n))
    rho = 0.0
    resid = 0.0
    for _ in range(max_iter):
        w = np.array([math.fsum(b[i] * v) for i in range(n)])
        rho = math.fsum(v * w)
        resid = math.sqrt(math.fsum((w - rho * v) ** 2))
        norm = math.sqrt(math.fsum(w * w))
        if norm == 0.0:
            return 0.0
        v = w / norm
        if resid <= tol * max(rho, 1.0):
            break
    return math.sqrt(max(rho + resid, 0.0))


def normalize(graph: CommGraph, tol: float = 1e-6) -> GraphShift:
    """S = A / max(1, spectral_radius(A)); isolated nodes yield zero rows."""
    lam = spectral_radius(graph.adjacency, tol=tol)
    return GraphShift(matrix=graph.adjacency / max(1.0, lam))


def shift_powers(shift: GraphShift, hops: int) -> np.ndarray:
    """[S^0, S^1, ..., S^K] stacked as (K+1, N, N)."""
    n = shift.n_robots
    out = np.empty((hops + 1, n, n), dtype=np.float64)
    out[0] = np.eye(n)
    for k in range(1, hops + 1):
        out[k] = shift.matrix @ out[k - 1]
    return out


def exchange(features: np.ndarray, shift: GraphShift, hops: int) -> list[np.ndarray]:
    """Shifted feature sequence [S^0 X, S^1 X, ..., S^K X].

    With hops=1 each robot's aggregate uses only its own and its 1-hop
    neighbors' features; locality is structural.
    """
    x = np.asarray(features)
    if x.ndim != 2:
        raise ValueError(f"features must be 2-D (N, H), got shape {x.shape}")
    if x.shape[0] != shift.n_robots:
        raise ValueError(
            f"feature row count {x.shape[0]} does not match graph size {shift.n_robots}"
        )
    if hops < 0:
        raise ValueError("hops must be >= 0")
    seq = [x]
    for _ in range(hops):
        seq.append(shift.matrix @ seq[-1])
    return seq
