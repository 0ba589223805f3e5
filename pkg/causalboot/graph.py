import functools
import json
import pathlib
from dataclasses import dataclass, field
from typing import FrozenSet, Iterable, Optional, Sequence, Set, Tuple, Union

import networkx as nx
import torch

from .utils import CycleDetected, DataError, InvalidDensity, UnknownVertex, VertexMismatch, generator

Vertex = Union[str, int]
Edge = Tuple[int, int]

NONE, UNDIRECTED, FORWARD, BACKWARD = range(4)  # edge status of a pair (i, j) with i < j


def _index(vertices: Tuple[str, ...], v: Vertex) -> int:
    if isinstance(v, str):
        try:
            return vertices.index(v)
        except ValueError:
            raise UnknownVertex(f"unknown vertex {v!r}") from None
    if not 0 <= int(v) < len(vertices):
        raise UnknownVertex(f"vertex index {v} out of range for {len(vertices)} vertices")
    return int(v)


def _check_vertices(vertices: Tuple[str, ...]):
    if len(set(vertices)) != len(vertices):
        raise DataError(f"vertex names must be unique, got {list(vertices)}")
    if any(',' in v or '\t' in v for v in vertices):
        raise DataError("vertex names may not contain commas or tabs")


@dataclass(frozen=True)
class Dag:
    vertices: Tuple[str, ...]
    edges: FrozenSet[Edge] = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, 'vertices', tuple(str(v) for v in self.vertices))
        object.__setattr__(self, 'edges', frozenset((int(i), int(j)) for i, j in self.edges))
        _check_vertices(self.vertices)
        for i, j in self.edges:
            _index(self.vertices, i)
            _index(self.vertices, j)
            if i == j:
                raise DataError(f"self-loop on {self.vertices[i]!r}")
        _ = self.order  # acyclicity

    @classmethod
    def from_names(cls, vertices: Sequence[str], edges: Iterable[Tuple[str, str]] = ()) -> 'Dag':
        vertices = tuple(vertices)
        edges = [(_index(vertices, p), _index(vertices, c)) for p, c in edges]
        if len(set(edges)) != len(edges):
            raise DataError("duplicate edges")
        return cls(vertices, frozenset(edges))

    @classmethod
    def complete(cls, vertices: Sequence[str]) -> 'Dag':
        n = len(vertices)
        return cls(tuple(vertices), frozenset((i, j) for i in range(n) for j in range(i + 1, n)))

    @property
    def n(self) -> int:
        return len(self.vertices)

    @functools.cached_property
    def order(self) -> Tuple[int, ...]:
        return topological_sort(self)

    def index(self, v: Vertex) -> int:
        return _index(self.vertices, v)

    def parents(self, v: Vertex) -> Tuple[int, ...]:
        j = self.index(v)
        return tuple(sorted(i for i, c in self.edges if c == j))

    def children(self, v: Vertex) -> Tuple[int, ...]:
        i = self.index(v)
        return tuple(sorted(c for p, c in self.edges if p == i))

    def roots(self) -> Tuple[int, ...]:
        return tuple(j for j in range(self.n) if not self.parents(j))

    def adjacent(self, i: int, j: int) -> bool:
        return (i, j) in self.edges or (j, i) in self.edges

    def named_edges(self):
        return [(self.vertices[i], self.vertices[j]) for i, j in sorted(self.edges)]

    def to_networkx(self) -> nx.DiGraph:
        graph = nx.DiGraph()
        graph.add_nodes_from(range(self.n))
        graph.add_edges_from(self.edges)
        return graph

    def adjacency(self) -> torch.Tensor:
        out = torch.zeros((self.n, self.n), dtype=torch.float64)
        for i, j in self.edges:
            out[i, j] = 1
        return out


@dataclass(frozen=True)
class Cpdag:
    vertices: Tuple[str, ...]
    directed: FrozenSet[Edge] = field(default_factory=frozenset)
    undirected: FrozenSet[Edge] = field(default_factory=frozenset)  # stored as (min, max)

    def __post_init__(self):
        object.__setattr__(self, 'vertices', tuple(str(v) for v in self.vertices))
        object.__setattr__(self, 'directed', frozenset((int(i), int(j)) for i, j in self.directed))
        object.__setattr__(self, 'undirected', frozenset((min(i, j), max(i, j)) for i, j in self.undirected))
        _check_vertices(self.vertices)
        for i, j in self.directed | self.undirected:
            _index(self.vertices, i)
            _index(self.vertices, j)
            if i == j:
                raise DataError(f"self-loop on {self.vertices[i]!r}")
        skeleton = {(min(i, j), max(i, j)) for i, j in self.directed}
        if len(skeleton) != len(self.directed) or skeleton & self.undirected:
            raise DataError("a vertex pair may carry only one edge")

    @property
    def n(self) -> int:
        return len(self.vertices)

    def index(self, v: Vertex) -> int:
        return _index(self.vertices, v)

    def status(self, i: int, j: int) -> int:
        if i > j:
            return {NONE: NONE, UNDIRECTED: UNDIRECTED, FORWARD: BACKWARD, BACKWARD: FORWARD}[self.status(j, i)]
        if (i, j) in self.undirected:
            return UNDIRECTED
        if (i, j) in self.directed:
            return FORWARD
        if (j, i) in self.directed:
            return BACKWARD
        return NONE

    def named_edges(self):
        directed = [(self.vertices[i], self.vertices[j]) for i, j in sorted(self.directed)]
        undirected = [(self.vertices[i], self.vertices[j]) for i, j in sorted(self.undirected)]
        return directed, undirected


def topological_sort(g: Dag) -> Tuple[int, ...]:
    """
    Topological order of ``g``; among the vertices available at each step the lowest index goes first.
    """
    try:
        return tuple(nx.lexicographical_topological_sort(g.to_networkx()))
    except nx.NetworkXUnfeasible as e:
        raise CycleDetected(f"graph over {list(g.vertices)} contains a directed cycle") from e


def random_er_dag(n_vertices: int, expected_edges: float, rng_seed: int,
                  names: Optional[Sequence[str]] = None) -> Dag:
    if n_vertices < 1:
        raise InvalidDensity(f"need at least one vertex, got {n_vertices}")
    pairs = n_vertices * (n_vertices - 1) // 2
    if expected_edges < 0 or expected_edges > pairs:
        raise InvalidDensity(f"expected_edges={expected_edges} outside [0, {pairs}] for {n_vertices} vertices")
    names = tuple(names) if names is not None else tuple(f"x{i}" for i in range(n_vertices))
    prob = expected_edges / pairs if pairs else 0.0

    gen = generator(rng_seed)
    perm = torch.randperm(n_vertices, generator=gen).tolist()
    src, dst = torch.triu_indices(n_vertices, n_vertices, offset=1).tolist()
    keep = (torch.rand(pairs, generator=gen, dtype=torch.float64) < prob).tolist()
    return Dag(names, frozenset((perm[a], perm[b]) for a, b, k in zip(src, dst, keep) if k))


def markov_boundary(g: Dag, target: Vertex) -> FrozenSet[str]:
    j = g.index(target)
    children = g.children(j)
    members = set(g.parents(j)) | set(children)
    for c in children:
        members.update(g.parents(c))
    members.discard(j)
    return frozenset(g.vertices[i] for i in members)


def shd(a: Cpdag, b: Cpdag) -> int:
    """
    Structural Hamming distance: the number of vertex pairs whose edge status (absent, undirected, i->j, j->i)
    differs. A reversed or half-oriented edge costs 1.
    """
    if a.vertices != b.vertices:
        raise VertexMismatch(f"vertex sets differ: {list(a.vertices)} vs {list(b.vertices)}")
    return sum(a.status(i, j) != b.status(i, j) for i in range(a.n) for j in range(i + 1, a.n))


def apply_meek_rules(n: int, directed: Set[Edge], undirected: Set[Edge]) -> Tuple[Set[Edge], Set[Edge]]:
    """
    Closes a partially directed graph under Meek's orientation rules R1-R3.
    ``undirected`` holds (min, max) pairs; orientations are applied in sorted order until a fixed point.
    """
    directed, undirected = set(directed), set(undirected)

    def adjacent(x, y):
        return (x, y) in directed or (y, x) in directed or (min(x, y), max(x, y)) in undirected

    def linked(x, y):
        return (min(x, y), max(x, y)) in undirected

    def orientable(a, b):
        others = [c for c in range(n) if c not in (a, b)]
        if any((c, a) in directed and not adjacent(c, b) for c in others):  # R1
            return True
        if any((a, c) in directed and (c, b) in directed for c in others):  # R2
            return True
        into_b = [c for c in others if linked(a, c) and (c, b) in directed]
        return any(not adjacent(c, d) for k, c in enumerate(into_b) for d in into_b[k + 1:])  # R3

    changed = True
    while changed:
        changed = False
        for i, j in sorted(undirected):
            for a, b in ((i, j), (j, i)):
                if orientable(a, b):
                    undirected.discard((i, j))
                    directed.add((a, b))
                    changed = True
                    break
    return directed, undirected


def v_structures(g: Dag) -> Set[Tuple[int, int, int]]:
    out = set()
    for k in range(g.n):
        pa = g.parents(k)
        for x, a in enumerate(pa):
            for b in pa[x + 1:]:
                if not g.adjacent(a, b):
                    out.add((a, k, b))
    return out


def dag_to_cpdag(g: Dag) -> Cpdag:
    compelled = {(a, k) for a, k, b in v_structures(g)} | {(b, k) for a, k, b in v_structures(g)}
    undirected = {(min(i, j), max(i, j)) for i, j in g.edges if (i, j) not in compelled}
    directed, undirected = apply_meek_rules(g.n, compelled, undirected)
    return Cpdag(g.vertices, frozenset(directed), frozenset(undirected))


def cpdag_to_dag(c: Cpdag) -> Dag:
    """
    Consistent extension of a CPDAG (Dor-Tarsi): repeatedly removes a sink whose undirected neighbours are
    adjacent to all of its other neighbours, orienting its undirected edges into it.
    """
    directed, undirected = set(c.directed), set(c.undirected)
    arcs = set(directed)
    remaining = set(range(c.n))

    def adjacent(x, y):
        return (x, y) in directed or (y, x) in directed or (min(x, y), max(x, y)) in undirected

    while remaining:
        for x in sorted(remaining):
            if any((x, y) in directed for y in remaining):
                continue
            neighbours = [y for y in remaining if (min(x, y), max(x, y)) in undirected]
            others = [y for y in remaining if y != x and adjacent(x, y)]
            if all(adjacent(y, z) for y in neighbours for z in others if z != y):
                break
        else:
            raise DataError("partially directed graph admits no consistent DAG extension")
        for y in neighbours:
            undirected.discard((min(x, y), max(x, y)))
            arcs.add((y, x))
        directed = {(a, b) for a, b in directed if x not in (a, b)}
        remaining.discard(x)
    return Dag(c.vertices, frozenset(arcs))


def d_separated(g: Dag, x: Vertex, y: Vertex, given: Iterable[Vertex] = ()) -> bool:
    """
    d-separation by moralizing the ancestral graph of ``{x, y} | given`` and testing reachability once
    ``given`` is removed. Test support, not part of ``__all__``.
    """
    x, y = g.index(x), g.index(y)
    given = {g.index(v) for v in given}
    graph = g.to_networkx()
    relevant = {x, y} | given
    for v in list(relevant):
        relevant |= nx.ancestors(graph, v)
    moral = nx.moral_graph(graph.subgraph(relevant))
    moral.remove_nodes_from(given)
    return not nx.has_path(moral, x, y)


def _parse_edge_lines(text: str):
    vertices, directed, undirected = None, [], []
    for line in text.splitlines():
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith('#'):
            key, _, value = stripped[1:].partition(':')
            if key.strip() == 'vertices':
                vertices = [v.strip() for v in value.split(',') if v.strip()]
            continue
        if ' -- ' in stripped:
            a, b = stripped.split(' -- ')
            undirected.append((a.strip(), b.strip()))
            continue
        parts = line.rstrip('\n').split('\t')
        if len(parts) != 2:
            raise DataError(f"malformed edge line {line!r}; expected 'parent<TAB>child'")
        directed.append((parts[0].strip(), parts[1].strip()))
    if vertices is None:
        vertices = []
        for a, b in directed + undirected:
            vertices.extend(v for v in (a, b) if v not in vertices)
    return vertices, directed, undirected


def _load(path) -> Tuple[list, list, list]:
    try:
        text = pathlib.Path(path).read_text(encoding='utf-8')
    except UnicodeDecodeError as e:
        raise DataError(f"{path}: not UTF-8 text ({e})") from e
    if str(path).endswith('.json') or text.lstrip().startswith('{'):
        try:
            doc = json.loads(text)
            return list(doc['vertices']), [tuple(e) for e in doc.get('edges', [])], \
                [tuple(e) for e in doc.get('undirected', [])]
        except (ValueError, KeyError, TypeError) as e:
            raise DataError(f"{path}: malformed graph document ({e})") from e
    return _parse_edge_lines(text)


def read_dag(path) -> Dag:
    vertices, directed, undirected = _load(path)
    if undirected:
        raise DataError(f"{path}: undirected edges are not allowed in a DAG file")
    return Dag.from_names(vertices, directed)


def read_cpdag(path) -> Cpdag:
    vertices, directed, undirected = _load(path)
    vertices = tuple(vertices)
    return Cpdag(vertices, frozenset((_index(vertices, a), _index(vertices, b)) for a, b in directed),
                 frozenset((_index(vertices, a), _index(vertices, b)) for a, b in undirected))


def _dump(path, vertices, directed, undirected=()):
    path = pathlib.Path(path)
    if path.suffix == '.json':
        doc = {'vertices': list(vertices), 'edges': [list(e) for e in directed]}
        if undirected:
            doc['undirected'] = [list(e) for e in undirected]
        path.write_text(json.dumps(doc, indent=2) + '\n')
        return
    lines = [f"# vertices: {','.join(vertices)}"]
    lines += [f"{a}\t{b}" for a, b in directed]
    lines += [f"{a} -- {b}" for a, b in undirected]
    path.write_text('\n'.join(lines) + '\n')


def write_dag(g: Dag, path):
    _dump(path, g.vertices, g.named_edges())


def write_cpdag(c: Cpdag, path):
    _dump(path, c.vertices, *c.named_edges())
