import itertools

import pytest
import torch

from causalboot.graph import (Cpdag, Dag, cpdag_to_dag, d_separated, dag_to_cpdag, markov_boundary, random_er_dag,
                              read_cpdag, read_dag, shd, topological_sort, write_cpdag, write_dag)
from causalboot.scm import chain_dag, confounded_dag
from causalboot.utils import CycleDetected, DataError, InvalidDensity, UnknownVertex, VertexMismatch


def test_topological_sort_examples():
    assert topological_sort(Dag(('a', 'b', 'c'))) == (0, 1, 2)
    assert topological_sort(chain_dag()) == (0, 1, 2)
    g = confounded_dag()
    assert [g.vertices[i] for i in topological_sort(g)] == ['A', 'D', 'B', 'C']


@pytest.mark.parametrize("seed", [0x1, 0x2a, 0x1337, 0xfeed])
def test_topological_sort_respects_edges(seed):
    g = random_er_dag(12, 20, seed)
    position = {v: k for k, v in enumerate(topological_sort(g))}
    assert sorted(position) == list(range(12))
    assert all(position[i] < position[j] for i, j in g.edges)


def test_cycles_and_malformed_graphs():
    with pytest.raises(CycleDetected):
        Dag.from_names(('a', 'b', 'c'), [('a', 'b'), ('b', 'c'), ('c', 'a')])
    with pytest.raises(DataError):
        Dag.from_names(('a', 'a'))
    with pytest.raises(DataError):
        Dag.from_names(('a', 'b'), [('a', 'b'), ('a', 'b')])
    with pytest.raises(DataError):
        Dag(('a', 'b'), frozenset({(0, 0)}))
    with pytest.raises(UnknownVertex):
        Dag.from_names(('a', 'b'), [('a', 'z')])


def test_random_er_dag_density():
    assert random_er_dag(1, 0, 0x10).edges == frozenset()
    complete = random_er_dag(10, 45, 0x11)
    assert len(complete.edges) == 45
    counts = torch.tensor([len(random_er_dag(10, 10, seed).edges) for seed in range(10000)], dtype=torch.float64)
    assert 9.7 <= float(counts.mean()) <= 10.3
    assert random_er_dag(10, 10, 0x77) == random_er_dag(10, 10, 0x77)
    with pytest.raises(InvalidDensity):
        random_er_dag(10, 46, 0)
    with pytest.raises(InvalidDensity):
        random_er_dag(4, -1, 0)


def test_markov_boundary():
    assert markov_boundary(chain_dag(), 'B') == {'A', 'C'}
    assert markov_boundary(chain_dag(), 'A') == {'B'}
    assert markov_boundary(confounded_dag(), 'B') == {'A', 'C', 'D'}
    assert markov_boundary(confounded_dag(), 'A') == {'B', 'D'}
    assert markov_boundary(Dag.from_names(('x', 'y'), [('x', 'y')]), 'y') == {'x'}
    assert markov_boundary(Dag(('x', 'y')), 'x') == frozenset()
    with pytest.raises(UnknownVertex):
        markov_boundary(chain_dag(), 'Z')


def test_shd_examples():
    vertices = ('A', 'B')
    empty = Cpdag(vertices)
    undirected = Cpdag(vertices, undirected=frozenset({(0, 1)}))
    forward = Cpdag(vertices, directed=frozenset({(0, 1)}))
    backward = Cpdag(vertices, directed=frozenset({(1, 0)}))
    assert shd(forward, forward) == 0
    assert shd(empty, undirected) == 1
    assert shd(forward, backward) == 1
    assert shd(forward, undirected) == 1
    with pytest.raises(VertexMismatch):
        shd(empty, Cpdag(('A', 'C')))


def test_cpdag_of_small_graphs():
    chain = dag_to_cpdag(chain_dag())
    assert chain.directed == frozenset() and chain.undirected == frozenset({(0, 1), (1, 2)})

    collider = dag_to_cpdag(Dag.from_names(('A', 'B', 'C'), [('A', 'C'), ('B', 'C')]))
    assert collider.directed == frozenset({(0, 2), (1, 2)}) and collider.undirected == frozenset()
    assert shd(chain, collider) == 3

    confounded = dag_to_cpdag(confounded_dag())  # B -> C is compelled by the v-structure at B
    assert confounded.undirected == frozenset()
    assert confounded.directed == confounded_dag().edges

    single = dag_to_cpdag(Dag(('only',)))
    assert single.directed == frozenset() and single.undirected == frozenset()


@pytest.mark.parametrize("seed", range(0x20, 0x40))
def test_cpdag_extension_is_in_class(seed):
    g = random_er_dag(7, 9, seed)
    c = dag_to_cpdag(g)
    member = cpdag_to_dag(c)
    assert dag_to_cpdag(member) == c
    skeleton = {(min(i, j), max(i, j)) for i, j in g.edges}
    assert {(min(i, j), max(i, j)) for i, j in member.edges} == skeleton


def test_cpdag_without_extension():
    # a -- b -- c -- d -- a is a chordless 4-cycle, no DAG without new v-structures exists
    c = Cpdag(('a', 'b', 'c', 'd'), undirected=frozenset({(0, 1), (1, 2), (2, 3), (0, 3)}))
    with pytest.raises(DataError):
        cpdag_to_dag(c)


def test_d_separation():
    chain = chain_dag()
    assert d_separated(chain, 'A', 'C', ['B'])
    assert not d_separated(chain, 'A', 'C')
    collider = Dag.from_names(('A', 'B', 'C'), [('A', 'C'), ('B', 'C')])
    assert d_separated(collider, 'A', 'B')
    assert not d_separated(collider, 'A', 'B', ['C'])
    g = confounded_dag()
    assert d_separated(g, 'A', 'D')
    assert not d_separated(g, 'A', 'D', ['C'])  # descendant of the collider
    assert d_separated(g, 'A', 'C', ['B'])


def test_parents_children_and_adjacency():
    g = confounded_dag()
    assert g.parents('B') == (0, 3)
    assert g.children('B') == (2,)
    assert g.roots() == (0, 3)
    adjacency = g.adjacency()
    assert adjacency.sum() == 3 and adjacency[0, 1] == 1 and adjacency[1, 0] == 0


def test_edge_list_format(tmp_path):
    path = tmp_path / 'chain.txt'
    write_cpdag(dag_to_cpdag(chain_dag()), path)
    assert path.read_text() == "# vertices: A,B,C\nA -- B\nB -- C\n"
    assert read_cpdag(path) == dag_to_cpdag(chain_dag())

    write_dag(confounded_dag(), tmp_path / 'confounded.txt')
    assert (tmp_path / 'confounded.txt').read_text().splitlines() == ['# vertices: A,B,C,D', 'A\tB', 'B\tC',
                                                                       'D\tB']
    assert read_dag(tmp_path / 'confounded.txt') == confounded_dag()

    write_dag(confounded_dag(), tmp_path / 'confounded.json')
    assert read_dag(tmp_path / 'confounded.json') == confounded_dag()

    (tmp_path / 'bad.txt').write_text("A B C\n")
    with pytest.raises(DataError):
        read_dag(tmp_path / 'bad.txt')
    with pytest.raises(DataError):
        read_dag(path)  # undirected edges


def test_vertices_inferred_from_edges(tmp_path):
    path = tmp_path / 'g.txt'
    path.write_text("x\ty\ny\tz\n")
    g = read_dag(path)
    assert g.vertices == ('x', 'y', 'z')
    assert sorted(g.named_edges()) == [('x', 'y'), ('y', 'z')]


def test_complete_dag():
    g = Dag.complete(('a', 'b', 'c', 'd'))
    assert len(g.edges) == 6
    assert all(g.adjacent(i, j) for i, j in itertools.combinations(range(4), 2))


@pytest.mark.parametrize("seed", range(8))
def test_shd_is_a_metric(seed):
    graphs = [dag_to_cpdag(random_er_dag(6, 5, seed * 100 + k)) for k in range(12)]
    for a, b, c in itertools.permutations(graphs, 3):
        assert shd(a, a) == 0
        assert shd(a, b) == shd(b, a)
        assert shd(a, c) <= shd(a, b) + shd(b, c)
        assert (shd(a, b) == 0) == (a == b)


def _blankets(g: Dag, target: str, size: int):
    others = [v for v in g.vertices if v != target]
    for given in itertools.combinations(others, size):
        if all(d_separated(g, target, v, given) for v in others if v not in given):
            yield frozenset(given)


@pytest.mark.parametrize("seed", range(40))
def test_markov_boundary_is_smallest_blanket(seed):
    n = 3 + seed % 4
    g = random_er_dag(n, 0.8 * n, 0x3b00 + seed)
    for target in g.vertices:
        for size in range(g.n):
            found = list(_blankets(g, target, size))
            if found:
                assert found == [markov_boundary(g, target)]
                break


def _equivalence_key(g: Dag):
    skeleton = frozenset(frozenset(e) for e in g.edges)
    colliders = frozenset((frozenset((a, b)), k) for k in range(g.n)
                          for a, b in itertools.combinations(g.parents(k), 2) if not g.adjacent(a, b))
    return skeleton, colliders


def test_cpdag_matches_enumerated_classes():
    vertices = ('a', 'b', 'c', 'd')
    pairs = list(itertools.combinations(range(4), 2))
    dags = []
    for status in itertools.product(range(3), repeat=len(pairs)):
        edges = frozenset((i, j) if s == 1 else (j, i) for (i, j), s in zip(pairs, status) if s)
        try:
            dags.append(Dag(vertices, edges))
        except CycleDetected:
            continue
    assert len(dags) == 543

    classes = {}
    for g in dags:
        classes.setdefault(_equivalence_key(g), []).append(g)
    for members in classes.values():
        directed = frozenset.intersection(*(g.edges for g in members))
        undirected = frozenset((min(e), max(e)) for g in members for e in g.edges if e not in directed)
        expected = Cpdag(vertices, directed, undirected)
        assert all(dag_to_cpdag(g) == expected for g in members)
