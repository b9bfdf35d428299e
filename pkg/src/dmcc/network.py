"""Random geometric topologies and combination (fusion) matrices.

Convention: entry ``(l, k)`` of a combination matrix is the weight node ``k``
gives to node ``l``'s estimate, so every column sums to one and the fused
estimates are ``C.T @ estimates``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse.csgraph import connected_components

MAX_RETRIES = 100
RULES = ("identity", "metropolis", "uniform")
COLUMN_SUM_TOL = 1e-12


class TopologyError(RuntimeError):
    """Raised when no connected topology can be drawn."""


@dataclass(frozen=True)
class NetworkTopology:
    positions: np.ndarray
    radius: float
    adjacency: np.ndarray
    region: float = 1.2
    seed: int | None = None

    def __post_init__(self):
        self.positions.setflags(write=False)
        self.adjacency.setflags(write=False)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def neighbors(self) -> list[np.ndarray]:
        """Neighbor lists N_k, each including k itself."""
        return [np.flatnonzero(self.adjacency[:, k]) for k in range(self.n)]

    @property
    def degrees(self) -> np.ndarray:
        """Neighbor counts excluding the node itself."""
        return self.adjacency.sum(axis=0) - 1

    def edges(self) -> list[tuple[int, int]]:
        l, k = np.nonzero(np.triu(self.adjacency, 1))
        return list(zip(l.tolist(), k.tolist()))

    def is_connected(self) -> bool:
        count, _ = connected_components(self.adjacency.astype(np.int8), directed=False)
        return count == 1


@dataclass(frozen=True)
class CombinationMatrix:
    entries: np.ndarray
    rule: str

    def __post_init__(self):
        self.entries.setflags(write=False)

    @property
    def n(self) -> int:
        return self.entries.shape[0]


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok


def adjacency_from_positions(positions: np.ndarray, radius: float) -> np.ndarray:
    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=-1))
    adj = dist <= radius
    np.fill_diagonal(adj, True)
    return adj


def generate_topology(n: int, region: float = 1.2, radius: float = 0.45, seed: int = 0,
                      max_retries: int = MAX_RETRIES) -> NetworkTopology:
    """Draw ``n`` nodes uniformly on ``[0, region]^2`` and link pairs within ``radius``.

    Disconnected draws are rejected; attempt ``j`` uses the seed sequence
    ``(seed, j)`` so the result is a pure function of ``seed``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if region <= 0:
        raise ValueError("region must be positive")
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    for attempt in range(max_retries):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(attempt,)))
        positions = rng.uniform(0.0, region, size=(n, 2))
        topo = NetworkTopology(positions, float(radius), adjacency_from_positions(positions, radius),
                               float(region), seed)
        if topo.is_connected():
            return topo
    raise TopologyError(
        f"no connected graph after {max_retries} draws (n={n}, region={region}, radius={radius}); "
        "increase the radius")


def build_combination_matrix(topology: NetworkTopology, rule: str = "metropolis") -> CombinationMatrix:
    n = topology.n
    adj = topology.adjacency
    if rule == "identity":
        c = np.eye(n)
    elif rule == "metropolis":
        deg = topology.degrees
        c = np.zeros((n, n))
        off = adj & ~np.eye(n, dtype=bool)
        l, k = np.nonzero(off)
        c[l, k] = 1.0 / (1.0 + np.maximum(deg[l], deg[k]))
        c[np.arange(n), np.arange(n)] = 1.0 - c.sum(axis=0)
    elif rule == "uniform":
        c = adj / adj.sum(axis=0, keepdims=True)
    else:
        raise ValueError(f"unknown combination rule {rule!r}; expected one of {RULES}")
    return CombinationMatrix(np.asarray(c, dtype=float), rule)


def validate_combination_matrix(matrix: CombinationMatrix | np.ndarray,
                                topology: NetworkTopology, tol: float = COLUMN_SUM_TOL) -> ValidationReport:
    c = matrix.entries if isinstance(matrix, CombinationMatrix) else np.asarray(matrix, dtype=float)
    if c.shape != (topology.n, topology.n):
        raise ValueError(f"matrix shape {c.shape} does not match {topology.n} nodes")
    report = ValidationReport()
    neg = np.argwhere(c < 0)
    for l, k in neg:
        report.violations.append(f"negative entry ({l},{k}) = {c[l, k]:.3g}")
    sums = c.sum(axis=0)
    for k in np.flatnonzero(np.abs(sums - 1.0) > tol):
        report.violations.append(f"column {k} sums to {sums[k]:.15g}")
    for l, k in np.argwhere((c != 0) & ~topology.adjacency):
        report.violations.append(f"entry ({l},{k}) nonzero but {l} is not a neighbor of {k}")
    return report


def write_topology_csv(topology: NetworkTopology, path: str | Path) -> None:
    """Node table ``node,x,y`` followed by a blank line and the edge list ``l,k``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", "x", "y"])
        for k, (x, y) in enumerate(topology.positions):
            w.writerow([k, repr(float(x)), repr(float(y))])
        w.writerow([])
        w.writerow(["l", "k"])
        w.writerows(topology.edges())


def read_topology_csv(path: str | Path, radius: float, region: float = 1.2) -> NetworkTopology:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["node", "x", "y"]:
        raise ValueError(f"{path}: expected header node,x,y")
    split = rows.index([]) if [] in rows else len(rows)
    nodes = rows[1:split]
    positions = np.array([[float(r[1]), float(r[2])] for r in nodes])
    if [int(r[0]) for r in nodes] != list(range(len(nodes))):
        raise ValueError(f"{path}: node ids must be 0..N-1 in order")
    adj = np.eye(len(nodes), dtype=bool)
    edge_rows = rows[split + 1:]
    if edge_rows and edge_rows[0] != ["l", "k"]:
        raise ValueError(f"{path}: expected header l,k for the edge list")
    for r in edge_rows[1:]:
        l, k = int(r[0]), int(r[1])
        adj[l, k] = adj[k, l] = True
    if not np.array_equal(adj, adjacency_from_positions(positions, radius)):
        raise ValueError(f"{path}: edge list disagrees with radius {radius}")
    return NetworkTopology(positions, float(radius), adj, float(region))
