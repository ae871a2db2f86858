"""Graph model, edge-list I/O, seeded generators and exact BFS oracles."""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Iterator, Optional, Union

import numpy as np

from .errors import ParameterError, ParseError
from .logger import get_log_level_from_env, setup_logger

logger = setup_logger("fieldanf", get_log_level_from_env())

_HEADER = re.compile(r"^#\s*nodes=(\d+)\s+directed=(true|false)\s*$", re.IGNORECASE)
_LABEL = re.compile(r"^#\s*label\s+(\d+)\s+(\S+)\s*$")


@dataclass(frozen=True)
class Graph:
    """Immutable graph over dense vertex ids 0..n-1.

    `adjacency[v]` is the sorted tuple of (out-)neighbours of v. Undirected
    graphs store every edge in both lists. Self-loops are never stored.
    """

    n: int
    adjacency: tuple[tuple[int, ...], ...]
    directed: bool = False
    labels: Optional[tuple[str, ...]] = None

    @classmethod
    def from_edges(
        cls,
        n: int,
        edges: Iterable[tuple[int, int]],
        directed: bool = False,
        labels: Optional[tuple[str, ...]] = None,
    ) -> "Graph":
        """Build a graph, collapsing duplicate edges and dropping self-loops"""
        if n < 0:
            raise ParameterError(f"vertex count must be non-negative, got {n}")
        neighbours: list[set[int]] = [set() for _ in range(n)]
        for u, v in edges:
            if not (0 <= u < n and 0 <= v < n):
                raise ParameterError(f"edge ({u}, {v}) outside vertex range [0, {n})")
            if u == v:
                continue
            neighbours[u].add(v)
            if not directed:
                neighbours[v].add(u)
        adjacency = tuple(tuple(sorted(adj)) for adj in neighbours)
        return cls(n, adjacency, directed, labels)

    @property
    def m(self) -> int:
        arcs = sum(len(adj) for adj in self.adjacency)
        return arcs if self.directed else arcs // 2

    def neighbours(self, v: int) -> tuple[int, ...]:
        return self.adjacency[v]

    def degree(self, v: int) -> int:
        return len(self.adjacency[v])

    def edges(self) -> Iterator[tuple[int, int]]:
        for u, adj in enumerate(self.adjacency):
            for v in adj:
                if self.directed or u < v:
                    yield u, v

    def check_vertex(self, v: int) -> None:
        if not 0 <= v < self.n:
            raise ParameterError(f"vertex {v} outside range [0, {self.n})")

    @cached_property
    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        """(indptr, indices) arrays of the adjacency lists"""
        degrees = np.fromiter((len(adj) for adj in self.adjacency), dtype=np.intp, count=self.n)
        indptr = np.zeros(self.n + 1, dtype=np.intp)
        np.cumsum(degrees, out=indptr[1:])
        indices = np.fromiter(
            (v for adj in self.adjacency for v in adj), dtype=np.intp, count=int(indptr[-1])
        )
        return indptr, indices

    def label(self, v: int) -> str:
        if self.labels is None:
            return str(v)
        return self.labels[v]


@dataclass(frozen=True)
class SourceSet:
    """The vertex subset C, as one membership flag per vertex"""

    membership: tuple[bool, ...]

    @classmethod
    def all(cls, n: int) -> "SourceSet":
        return cls((True,) * n)

    @classmethod
    def from_ids(cls, n: int, ids: Iterable[int]) -> "SourceSet":
        membership = [False] * n
        for v in ids:
            if not 0 <= v < n:
                raise ParameterError(f"source vertex {v} outside range [0, {n})")
            membership[v] = True
        return cls(tuple(membership))

    def __len__(self) -> int:
        return len(self.membership)

    def __contains__(self, v: int) -> bool:
        return 0 <= v < len(self.membership) and self.membership[int(v)]

    @property
    def size(self) -> int:
        return sum(self.membership)

    def ids(self) -> list[int]:
        return [v for v, member in enumerate(self.membership) if member]

    def as_array(self) -> np.ndarray:
        return np.fromiter(self.membership, dtype=bool, count=len(self.membership))


def check_sources(g: Graph, sources: SourceSet) -> None:
    if len(sources) != g.n:
        raise ParameterError(f"source set covers {len(sources)} vertices, graph has {g.n}")


def parse_edge_list(
    text: Union[str, Iterable[str]],
    directed: bool = False,
    nodes: Optional[int] = None,
    relabel: bool = False,
) -> Graph:
    """Parse "u v" lines into a graph.

    Lines starting with '#' and blank lines are skipped, except for a
    `# nodes=<n> directed=<bool>` header whose node count is honoured and
    `# label <id> <token>` lines restoring a persisted label table. With
    `relabel` the tokens are arbitrary labels numbered in order of first
    appearance; otherwise they must be non-negative integers.
    """
    lines = text.splitlines() if isinstance(text, str) else text
    edges: list[tuple[int, int]] = []
    label_ids: dict[str, int] = {}
    persisted: dict[int, str] = {}
    header_nodes = 0
    max_id = -1
    self_loops = 0

    def vertex(token: str, line_no: int) -> int:
        if relabel and not persisted:
            return label_ids.setdefault(token, len(label_ids))
        try:
            value = int(token)
        except ValueError:
            raise ParseError(f"vertex id {token!r} is not an integer", line_no) from None
        if value < 0:
            raise ParseError(f"vertex id {value} is negative", line_no)
        return value

    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            label = _LABEL.match(line)
            if label:
                persisted[int(label.group(1))] = label.group(2)
                continue
            header = _HEADER.match(line)
            if header:
                header_nodes = int(header.group(1))
                if (header.group(2).lower() == "true") != directed:
                    logger.warning(
                        "Edge list header says directed=%s, parsing with directed=%s",
                        header.group(2),
                        directed,
                    )
            continue
        tokens = line.split()
        if len(tokens) != 2:
            raise ParseError(f"expected 'u v', got {line!r}", line_no)
        u, v = vertex(tokens[0], line_no), vertex(tokens[1], line_no)
        max_id = max(max_id, u, v)
        if u == v:
            self_loops += 1
            continue
        edges.append((u, v))

    if self_loops:
        logger.warning("Dropped %d self-loop(s) while parsing edge list", self_loops)

    n = max(max_id + 1, header_nodes, max(persisted, default=-1) + 1)
    if nodes is not None:
        if nodes < max_id + 1:
            raise ParameterError(
                f"--nodes {nodes} is smaller than the largest vertex id {max_id} + 1"
            )
        n = nodes
    if n == 0:
        raise ParseError("edge list defines no vertices")

    labels = None
    if persisted:
        labels = tuple(persisted.get(v, str(v)) for v in range(n))
    elif relabel:
        labels = tuple(sorted(label_ids, key=label_ids.__getitem__))
        labels += tuple(str(v) for v in range(len(labels), n))
    return Graph.from_edges(n, edges, directed, labels)


def serialize_edge_list(g: Graph) -> str:
    """Edge-list text with a `# nodes=<n> directed=<bool>` header and the label table, if any"""
    lines = [f"# nodes={g.n} directed={str(g.directed).lower()}"]
    if g.labels is not None:
        lines.extend(f"# label {v} {label}" for v, label in enumerate(g.labels))
    lines.extend(f"{u} {v}" for u, v in g.edges())
    return "\n".join(lines) + "\n"


def read_text(path: str, error: type[ParseError] = ParseError) -> str:
    """Read a UTF-8 input file; undecodable bytes raise `error` with their line"""
    with open(path, "rb") as file:
        data = file.read()
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as err:
        raise error.from_decode(path, err) from err


def read_edge_list(
    path: str, directed: bool = False, nodes: Optional[int] = None, relabel: bool = False
) -> Graph:
    return parse_edge_list(read_text(path), directed, nodes, relabel)


def write_edge_list(g: Graph, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as file:
        file.write(serialize_edge_list(g))


def bfs_distances(g: Graph, v: int) -> np.ndarray:
    """Hop distance from v to every vertex, -1 where unreachable"""
    g.check_vertex(v)
    dist = np.full(g.n, -1, dtype=np.int64)
    dist[v] = 0
    queue = deque([v])
    while queue:
        u = queue.popleft()
        for w in g.adjacency[u]:
            if dist[w] < 0:
                dist[w] = dist[u] + 1
                queue.append(w)
    return dist


def bfs_neighbourhood(g: Graph, v: int, H: int, sources: SourceSet) -> list[int]:
    """Exact N_G(v, h, C) for h = 0..H"""
    g.check_vertex(v)
    if H < 0:
        raise ParameterError(f"radius must be non-negative, got {H}")
    check_sources(g, sources)
    dist = bfs_distances(g, v)
    counted = dist[(dist >= 0) & sources.as_array()]
    per_distance = np.bincount(counted, minlength=H + 1)[: H + 1]
    return [int(count) for count in np.cumsum(per_distance)]


def exact_harmonic_classic(g: Graph, v: int) -> float:
    """Sum of 1/dist(v, u) over reachable u != v"""
    dist = bfs_distances(g, v)
    total = 0.0
    for d in dist[dist > 0]:
        total += 1.0 / int(d)
    return total


def truncated_harmonic_oracle(g: Graph, v: int, hmax: int) -> float:
    """Sum over h = 1..hmax of N_G(v, h, V) / h from exact counts"""
    if hmax < 1:
        raise ParameterError(f"hmax must be at least 1, got {hmax}")
    counts = bfs_neighbourhood(g, v, hmax, SourceSet.all(g.n))
    total = 0.0
    for h in range(1, hmax + 1):
        total += counts[h] / h
    return total


def path_graph(n: int) -> Graph:
    if n < 1:
        raise ParameterError(f"path size must be at least 1, got {n}")
    return Graph.from_edges(n, ((i, i + 1) for i in range(n - 1)))


def ring_graph(n: int) -> Graph:
    if n < 1:
        raise ParameterError(f"ring size must be at least 1, got {n}")
    return Graph.from_edges(n, ((i, (i + 1) % n) for i in range(n)))


def grid_graph(width: int, height: int) -> Graph:
    if width < 1 or height < 1:
        raise ParameterError(f"grid sides must be at least 1, got {width}x{height}")
    edges = []
    for y in range(height):
        for x in range(width):
            v = y * width + x
            if x + 1 < width:
                edges.append((v, v + 1))
            if y + 1 < height:
                edges.append((v, v + width))
    return Graph.from_edges(width * height, edges)


def gnp_graph(n: int, p: float, seed: int = 0, directed: bool = False) -> Graph:
    """Erdős–Rényi G(n, p); the same (n, p, seed) always gives the same graph"""
    if n < 1:
        raise ParameterError(f"gnp size must be at least 1, got {n}")
    if not 0.0 <= p <= 1.0:
        raise ParameterError(f"edge probability must be in [0, 1], got {p}")
    if seed < 0:
        raise ParameterError(f"seed must be non-negative, got {seed}")
    rng = np.random.default_rng(seed)
    if directed:
        keep = rng.random((n, n)) < p
        np.fill_diagonal(keep, False)
        rows, cols = np.nonzero(keep)
    else:
        upper_rows, upper_cols = np.triu_indices(n, k=1)
        keep = rng.random(upper_rows.size) < p
        rows, cols = upper_rows[keep], upper_cols[keep]
    return Graph.from_edges(n, zip(rows.tolist(), cols.tolist()), directed)


_GENERATORS = {
    "path": path_graph,
    "ring": ring_graph,
    "grid": grid_graph,
    "gnp": gnp_graph,
}


def gen_graph(kind: str, **params) -> Graph:
    """Dispatch to a generator by name: path(n), ring(n), grid(width, height), gnp(n, p, seed)"""
    try:
        generator = _GENERATORS[kind]
    except KeyError:
        raise ParameterError(
            f"unknown graph kind {kind!r}, expected one of {sorted(_GENERATORS)}"
        ) from None
    try:
        return generator(**params)
    except TypeError as err:
        raise ParameterError(f"bad parameters for {kind}: {err}") from err
