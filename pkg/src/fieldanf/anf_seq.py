"""Synchronous HyperANF over a whole graph.

Counters are iterated Jacobi-style: iteration i reads only the snapshot of
iteration i-1, so the order vertices are processed in never matters. By
default the union for vertex v ranges over adj(v) and v itself, which makes
c_v^i exactly the set of sources within distance i of v.
"""

from __future__ import annotations

import asyncio
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ParameterError
from .graph import Graph, SourceSet
from .hll import Counter, CounterKind, HllSketch, estimate_registers, register_updates
from .logger import get_log_level_from_env, setup_logger

logger = setup_logger("fieldanf", get_log_level_from_env())


@dataclass(eq=False)
class EstimateTable:
    """Per-vertex estimates of N_G(v, h, C) for h = 0..H"""

    H: int
    values: np.ndarray
    kind: CounterKind
    reflexive: bool = field(default=True)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def row(self, v: int) -> list[float]:
        return [float(x) for x in self.values[v]]

    def rows(self) -> list[list[float]]:
        return [self.row(v) for v in range(self.n)]

    def equals(self, other: "EstimateTable") -> bool:
        return (
            self.H == other.H
            and self.kind == other.kind
            and np.array_equal(self.values, other.values)
        )


class _CounterSnapshot:
    """One counter object per vertex; works for every counter kind"""

    def __init__(self, g: Graph, sources: SourceSet, kind: CounterKind, reflexive: bool):
        self.g = g
        self.kind = kind
        self.reflexive = reflexive
        self.counters: list[Counter] = initial_counters(g, sources, kind)

    def step_vertices(self, vertices: Sequence[int]) -> list[Counter]:
        """Next-iteration counters of `vertices`, read from the current snapshot"""
        prev = self.counters
        updated = []
        for v in vertices:
            acc = prev[v].copy() if self.reflexive else self.kind.empty()
            for u in self.g.adjacency[v]:
                acc.union_update(prev[u])
            updated.append(acc)
        return updated

    def step(self) -> None:
        self.counters = self.step_vertices(range(self.g.n))

    def estimates(self) -> np.ndarray:
        return np.array([c.estimate() for c in self.counters], dtype=np.float64)

    def final_counters(self) -> list[Counter]:
        return self.counters


class _RegisterMatrix:
    """All HyperLogLog registers in one (n, k) array, unions by reduceat over CSR"""

    def __init__(self, g: Graph, sources: SourceSet, kind: CounterKind, reflexive: bool):
        self.g = g
        self.kind = kind
        self.reflexive = reflexive
        self.registers = np.zeros((g.n, 1 << kind.b), dtype=np.uint8)
        ids = np.asarray(sources.ids(), dtype=np.intp)
        if ids.size:
            index, rank = register_updates(ids, kind.b, kind.seed)
            self.registers[ids, index] = rank
        indptr, self.indices = g.csr
        self.with_arcs = np.flatnonzero(np.diff(indptr))
        self.starts = indptr[self.with_arcs]

    def step(self) -> None:
        prev = self.registers
        nxt = prev.copy() if self.reflexive else np.zeros_like(prev)
        if self.with_arcs.size:
            reduced = np.maximum.reduceat(prev[self.indices], self.starts, axis=0)
            nxt[self.with_arcs] = np.maximum(nxt[self.with_arcs], reduced)
        self.registers = nxt

    def estimates(self) -> np.ndarray:
        return estimate_registers(self.registers)

    def final_counters(self) -> list[Counter]:
        return [
            HllSketch(self.kind.b, self.kind.seed, row.copy()) for row in self.registers
        ]


def initial_counters(g: Graph, sources: SourceSet, kind: CounterKind) -> list[Counter]:
    """c_v^0: {v} if v is a source, empty otherwise"""
    if len(sources) != g.n:
        raise ParameterError(f"source set covers {len(sources)} vertices, graph has {g.n}")
    return [kind.singleton(v) if sources.membership[v] else kind.empty() for v in range(g.n)]


def _snapshot(g: Graph, sources: SourceSet, kind: CounterKind, reflexive: bool):
    if kind.is_exact:
        return _CounterSnapshot(g, sources, kind, reflexive)
    return _RegisterMatrix(g, sources, kind, reflexive)


def hyperanf_seq(
    g: Graph,
    H: int,
    sources: SourceSet,
    kind: CounterKind,
    reflexive: bool = True,
) -> tuple[EstimateTable, list[Counter]]:
    """Estimate N_G(v, h, C) for every vertex and h = 0..H.

    Returns the estimate table and the counters c_v^H.
    """
    if H < 0:
        raise ParameterError(f"radius must be non-negative, got {H}")
    state = _snapshot(g, sources, kind, reflexive)
    values = np.empty((g.n, H + 1), dtype=np.float64)
    values[:, 0] = state.estimates()
    for i in range(1, H + 1):
        state.step()
        values[:, i] = state.estimates()
        logger.debug("HyperANF iteration %d of %d done", i, H)
    return EstimateTable(H, values, kind, reflexive), state.final_counters()


async def hyperanf_seq_async(
    g: Graph,
    H: int,
    sources: SourceSet,
    kind: CounterKind,
    reflexive: bool = True,
    workers: int = 4,
) -> tuple[EstimateTable, list[Counter]]:
    """`hyperanf_seq` with each iteration split over `workers` threads.

    Workers write disjoint vertex ranges and read the previous snapshot only;
    each iteration is a barrier. Results equal the single-threaded run.
    """
    if H < 0:
        raise ParameterError(f"radius must be non-negative, got {H}")
    if workers < 1:
        raise ParameterError(f"workers must be at least 1, got {workers}")
    state = _CounterSnapshot(g, sources, kind, reflexive)
    chunks = [chunk.tolist() for chunk in np.array_split(np.arange(g.n), workers) if chunk.size]
    values = np.empty((g.n, H + 1), dtype=np.float64)
    values[:, 0] = state.estimates()
    for i in range(1, H + 1):
        parts = await asyncio.gather(
            *(asyncio.to_thread(state.step_vertices, chunk) for chunk in chunks)
        )
        state.counters = [counter for part in parts for counter in part]
        values[:, i] = state.estimates()
    return EstimateTable(H, values, kind, reflexive), state.counters


def fixpoint_radius(
    g: Graph,
    sources: SourceSet,
    kind: CounterKind,
    epsilon: float = 0.0,
    reflexive: bool = True,
) -> tuple[EstimateTable, int]:
    """Iterate until no estimate moves by more than `epsilon` relative.

    Stops at the first iteration i where every vertex satisfies
    |est_i - est_{i-1}| <= epsilon * est_{i-1}, and returns the table up to
    H* = i - 1, the last radius at which some estimate still changed.
    """
    if epsilon < 0:
        raise ParameterError(f"epsilon must be non-negative, got {epsilon}")
    state = _snapshot(g, sources, kind, reflexive)
    columns = [state.estimates()]
    for i in range(1, g.n + 2):
        state.step()
        current = state.estimates()
        previous = columns[-1]
        if np.all(np.abs(current - previous) <= epsilon * previous):
            logger.info("Estimates stable at iteration %d, radius %d", i, i - 1)
            break
        columns.append(current)
    H_star = len(columns) - 1
    table = EstimateTable(H_star, np.column_stack(columns), kind, reflexive)
    return table, H_star


def neighbourhood_function(table: EstimateTable) -> list[float]:
    """Graph-level N_G(h) = sum over vertices of N_G(v, h, C)"""
    return [float(x) for x in table.values.sum(axis=0)]


def effective_diameter(table: EstimateTable, fraction: float = 0.9) -> float:
    """Smallest h, linearly interpolated, where N_G(h) reaches `fraction` of N_G(H)"""
    if not 0.0 < fraction <= 1.0:
        raise ParameterError(f"fraction must be in (0, 1], got {fraction}")
    nf = neighbourhood_function(table)
    target = fraction * nf[-1]
    if target <= 0:
        return 0.0
    for h, value in enumerate(nf):
        if value >= target:
            if h == 0:
                return 0.0
            return h - 1 + (target - nf[h - 1]) / (value - nf[h - 1])
    return float(table.H)


