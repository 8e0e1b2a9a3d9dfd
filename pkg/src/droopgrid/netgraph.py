"""Electrical graph of the microgrid: Y-bus, incidence matrices, admittance angles.

Directed edges are ordered deterministically: lines are sorted by their
unordered bus pair ``(min, max)`` and each line contributes the forward edge
``(min, max)`` followed by the reverse edge ``(max, min)``.  Bus indices are
zero-based everywhere in the library; files and the CLI use one-based ids.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components


class NetworkError(ValueError):
    """Invalid line data or network topology."""


@dataclass(frozen=True)
class Line:
    """Series R + jX branch between two buses (zero-based indices)."""

    from_bus: int
    to_bus: int
    r: float
    x: float

    def __post_init__(self):
        if self.from_bus == self.to_bus:
            raise NetworkError(f"line ({self.from_bus}, {self.to_bus}) is a self-loop")
        if not self.r >= 0.0:
            raise NetworkError(f"line ({self.from_bus}, {self.to_bus}): r must be >= 0, got {self.r}")
        if not self.x > 0.0:
            raise NetworkError(f"line ({self.from_bus}, {self.to_bus}): x must be > 0, got {self.x}")

    @property
    def pair(self) -> tuple[int, int]:
        return (min(self.from_bus, self.to_bus), max(self.from_bus, self.to_bus))


@dataclass(frozen=True, eq=False)
class YBus:
    """Bus admittance data.

    ``G`` and ``B`` are the dense n x n conductance/susceptance matrices.
    ``Y`` and ``phi`` hold magnitude and angle of the off-diagonal entry for
    every directed edge, in :class:`IncidenceSet` edge order.
    """

    G: np.ndarray
    B: np.ndarray
    Y: np.ndarray
    phi: np.ndarray
    edges: tuple[tuple[int, int], ...]

    @property
    def n(self) -> int:
        return self.G.shape[0]

    @property
    def complex(self) -> np.ndarray:
        return self.G + 1j * self.B


@dataclass(frozen=True, eq=False)
class IncidenceSet:
    """Incidence ``E`` (n x 2l), orientation ``C`` (n x 2l), undirected ``E_u`` (n x l)."""

    E: np.ndarray
    C: np.ndarray
    E_u: np.ndarray
    edge_order: tuple[tuple[int, int], ...]

    @property
    def src(self) -> np.ndarray:
        return np.array([e[0] for e in self.edge_order], dtype=np.intp)

    @property
    def dst(self) -> np.ndarray:
        return np.array([e[1] for e in self.edge_order], dtype=np.intp)

    @property
    def n_lines(self) -> int:
        return self.E_u.shape[1]


def _sorted_lines(lines):
    seen = set()
    for ln in lines:
        if ln.pair in seen:
            raise NetworkError(f"duplicate line between buses {ln.pair[0] + 1} and {ln.pair[1] + 1}")
        seen.add(ln.pair)
    return sorted(lines, key=lambda ln: ln.pair)


def directed_edges(lines) -> tuple[tuple[int, int], ...]:
    """Directed edge list in canonical order (forward orientation first)."""
    out = []
    for ln in _sorted_lines(lines):
        i, k = ln.pair
        out.append((i, k))
        out.append((k, i))
    return tuple(out)


def build_ybus(n: int, lines) -> YBus:
    """Assemble the shunt-free bus admittance matrix.

    Each line contributes ``y = 1/(r + jx)`` to both diagonal entries and
    ``-y`` to the two off-diagonal entries.
    """
    lines = _sorted_lines(lines)
    Ybus = np.zeros((n, n), dtype=complex)
    for ln in lines:
        i, k = ln.pair
        if k >= n:
            raise NetworkError(f"line references bus {k + 1} but the network has {n} buses")
        y = 1.0 / complex(ln.r, ln.x)
        Ybus[i, i] += y
        Ybus[k, k] += y
        Ybus[i, k] -= y
        Ybus[k, i] -= y
    edges = directed_edges(lines)
    off = np.array([Ybus[i, k] for i, k in edges], dtype=complex)
    return YBus(
        G=Ybus.real.copy(),
        B=Ybus.imag.copy(),
        Y=np.abs(off),
        phi=np.angle(off),
        edges=edges,
    )


def incidence(lines, n: int) -> IncidenceSet:
    lines = _sorted_lines(lines)
    l = len(lines)
    E = np.zeros((n, 2 * l))
    C = np.zeros((n, 2 * l))
    E_u = np.zeros((n, l))
    for j, ln in enumerate(lines):
        i, k = ln.pair
        if k >= n:
            raise NetworkError(f"line references bus {k + 1} but the network has {n} buses")
        E_u[i, j], E_u[k, j] = 1.0, -1.0
        for m, (a, b) in ((2 * j, (i, k)), (2 * j + 1, (k, i))):
            E[a, m], E[b, m] = 1.0, -1.0
            C[a, m] = 1.0
    if n > 1:
        adj = csr_matrix((np.ones(l), ([ln.pair[0] for ln in lines], [ln.pair[1] for ln in lines])), shape=(n, n))
        ncomp, labels = connected_components(adj, directed=False)
        if ncomp != 1:
            isolated = [b + 1 for b in range(n) if labels[b] != labels[0]]
            raise NetworkError(f"network is not connected; buses {isolated} are unreachable from bus 1")
    return IncidenceSet(E=E, C=C, E_u=E_u, edge_order=directed_edges(lines))


def phi_stats(ybus: YBus) -> dict:
    """Mean admittance angle over lines and the largest deviation from it."""
    phi_line = ybus.phi[0::2]
    if phi_line.size == 0:
        raise NetworkError("phi_stats needs at least one line")
    phi0 = float(np.mean(phi_line))
    return {"phi0": phi0, "spread": float(np.max(np.abs(phi_line - phi0)))}
