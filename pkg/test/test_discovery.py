import pytest
import torch

from causalboot.crb import crb_augmenter
from causalboot.discovery import (CiTestConfig, direct_lingam, discover, discovered_cpdag, discovered_crb_augmenter,
                                  partial_correlation_test, pc, shd_curve, shd_records, shuffle_augment,
                                  shuffle_augmenter, summarize_shd)
from causalboot.graph import Cpdag, Dag, dag_to_cpdag, random_er_dag
from causalboot.scm import (Dataset, LinearScm, NoiseSpec, chain_dag, random_linear_scm, sample, unit_linear_scm)
from causalboot.utils import (ConfigError, DataError, DegenerateCorrelation, InsufficientSamples,
                              InsufficientVariation, generator)

COLLIDER = Dag.from_names(('A', 'B', 'C'), [('A', 'C'), ('B', 'C')])
STRICT = CiTestConfig(alpha=0.01)


def _skeleton(c: Cpdag) -> set:
    return {(min(i, j), max(i, j)) for i, j in c.directed | c.undirected}


def _uniform_pair(rows: int, seed: int) -> Dataset:
    g = Dag.from_names(('x1', 'x2'), [('x1', 'x2')])
    scm = LinearScm(g, {(0, 1): 1.5}, (NoiseSpec.with_std('uniform', 1.0),) * 2)
    return sample(scm, rows, seed)


def test_ci_config_validation():
    with pytest.raises(ConfigError):
        CiTestConfig(alpha=0.0)
    with pytest.raises(ConfigError):
        CiTestConfig(alpha=1.5)
    with pytest.raises(ConfigError):
        CiTestConfig(max_cond_size=-1)


def test_degenerate_inputs():
    a = torch.randn(50, generator=generator(0xd1), dtype=torch.float64)
    data = Dataset(('a', 'b', 'c'), torch.stack([a, 2 * a, a.square()], 1))
    with pytest.raises(DegenerateCorrelation):
        partial_correlation_test(data, 'a', 'b')
    with pytest.raises(InsufficientSamples):
        partial_correlation_test(data.rows(slice(0, 4)), 'a', 'c', ['b'])
    with pytest.raises(DataError):
        partial_correlation_test(data, 'a', 'a')
    flat = Dataset(('a', 'z'), torch.stack([a, torch.zeros_like(a)], 1))
    with pytest.raises(InsufficientVariation):
        partial_correlation_test(flat, 0, 1)


def test_chain_independence_rates():
    accepted = rejected = 0
    for seed in range(100):
        data = sample(unit_linear_scm(chain_dag()), 1000, seed)
        accepted += partial_correlation_test(data, 'A', 'C', ['B']).independent
        result = partial_correlation_test(data, 'A', 'C')
        rejected += not result.independent
        assert result.p_value < 1e-10 and result.statistic > 0
    assert accepted >= 88
    assert rejected == 100


def test_pc_on_independent_columns():
    empty = 0
    for seed in range(100):
        data = sample(unit_linear_scm(Dag(('a', 'b', 'c'))), 500, seed)
        c = pc(data, STRICT)
        empty += not (c.directed or c.undirected)
    assert empty >= 90


def test_pc_on_collider_and_chain():
    colliders = chains = 0
    for seed in range(20):
        collider = pc(sample(unit_linear_scm(COLLIDER), 2000, seed), STRICT)
        colliders += collider == dag_to_cpdag(COLLIDER)
        chain = pc(sample(unit_linear_scm(chain_dag()), 2000, seed + 100), STRICT)
        chains += chain.undirected == frozenset({(0, 1), (1, 2)}) and not chain.directed
    assert colliders >= 17
    assert chains >= 17


def test_pc_is_deterministic():
    g = random_er_dag(7, 8, 0x7c)
    data = sample(random_linear_scm(g, 0x7d), 800, 0x7e)
    assert pc(data) == pc(data)
    assert discover(data, 'pc') == pc(data)
    with pytest.raises(ConfigError):
        discover(data, 'ges')


@pytest.mark.parametrize("seed", [0x1, 0x2, 0x3])
def test_level_zero_skeleton_grows_with_alpha(seed):
    g = random_er_dag(8, 6, seed)
    data = sample(random_linear_scm(g, seed), 60, seed + 10)
    loose = _skeleton(pc(data, CiTestConfig(alpha=0.2, max_cond_size=0)))
    tight = _skeleton(pc(data, CiTestConfig(alpha=0.01, max_cond_size=0)))
    assert tight <= loose


def test_lingam_single_column():
    data = Dataset(('only',), torch.randn((30, 1), generator=generator(0x5), dtype=torch.float64))
    result = direct_lingam(data)
    assert result.order == (0,)
    assert not result.dag.edges and not result.adjacency.any()


@pytest.mark.parametrize("columns", [['x1', 'x2'], ['x2', 'x1']])
def test_lingam_orients_uniform_pair(columns):
    data = _uniform_pair(5000, 0x11).select(columns)
    result = direct_lingam(data)
    assert list(result.dag.named_edges()) == [('x1', 'x2')]
    assert result.order[0] == data.index('x1')
    weight = float(result.adjacency[data.index('x2'), data.index('x1')])
    assert 1.4 <= weight <= 1.6
    assert discovered_cpdag(data, 'lingam').undirected == frozenset({(0, 1)})


def test_lingam_threshold_and_errors():
    data = _uniform_pair(500, 0x12)
    assert not direct_lingam(data, threshold=100.0).dag.edges
    with pytest.raises(ConfigError):
        direct_lingam(data, threshold=-1.0)
    a = data.column('x1')
    with pytest.raises(InsufficientVariation):
        direct_lingam(Dataset(('a', 'b'), torch.stack([a, torch.ones_like(a)], 1)))
    with pytest.warns(UserWarning, match='rows'):
        direct_lingam(data.rows(slice(0, 15)))


def test_lingam_respects_causal_order():
    g = random_er_dag(5, 5, 0x50)
    data = sample(random_linear_scm(g, 0x51, noise_family='uniform'), 1000, 0x52)
    result = direct_lingam(data)
    position = {v: k for k, v in enumerate(result.order)}
    assert sorted(position) == list(range(5))
    assert all(position[i] < position[j] for i, j in result.dag.edges)
    assert len(result.dag.edges) == 10


def test_shuffle_augment():
    data = sample(unit_linear_scm(chain_dag()), 300, 0x5f)
    assert shuffle_augment(data, m=0, rng_seed=1) is data
    augmented = shuffle_augmenter()(data, m=6000, rng_seed=2)
    assert augmented.n_rows == 6300
    generated = augmented.values[300:]
    for j in range(3):
        assert torch.isin(generated[:, j], data.values[:, j]).all()
    corr = torch.corrcoef(generated.T)
    assert (corr - torch.eye(3, dtype=torch.float64)).abs().max() < 0.06
    assert torch.equal(shuffle_augment(data, 50, 9).values, shuffle_augment(data, 50, 9).values)
    with pytest.raises(DataError):
        shuffle_augment(data, -1)


def test_discovered_crb_augmenter():
    data = sample(unit_linear_scm(chain_dag()), 500, 0x6a)
    augmented = discovered_crb_augmenter('pc', STRICT)(data, m=200, rng_seed=3)
    assert augmented.n_rows == 700 and augmented.columns == data.columns
    assert torch.equal(augmented.values[:500], data.values)
    with pytest.raises(ConfigError):
        discovered_crb_augmenter('ges')


def _never_called(data, m=0, rng_seed=0):
    raise AssertionError("augmenter must not run without added points")


def test_shd_curve_baseline_skips_augmenter():
    data = sample(unit_linear_scm(chain_dag()), 1000, 0x7a)
    table = shd_curve(chain_dag(), data, _never_called, [0], replicates=3, cfg=STRICT)
    assert list(table.columns) == ['added_points', 'mean_shd', 'std_shd', 'replicates']
    assert table['replicates'].tolist() == [3]
    assert table['std_shd'].tolist() == [0.0]
    with pytest.raises(ConfigError):
        shd_curve(chain_dag(), data, _never_called, [500, 0])
    with pytest.raises(ConfigError):
        shd_curve(chain_dag(), data, _never_called, [0], algorithm='ges')


def test_failed_cells_are_recorded():
    def broken(data, m=0, rng_seed=0):
        raise DataError("no rows for you")

    data = sample(unit_linear_scm(chain_dag()), 200, 0x7b)
    with pytest.warns(UserWarning, match='failed'):
        records, failures = shd_records(chain_dag(), data, broken, [0, 100], replicates=2)
    assert [r['added_points'] for r in records] == [0, 0]
    assert failures == [{'replicate': 0, 'added_points': 100, 'error': 'DataError: no rows for you'},
                        {'replicate': 1, 'added_points': 100, 'error': 'DataError: no rows for you'}]
    table = summarize_shd(records, [0, 100])
    assert table['replicates'].tolist() == [2, 0]
    assert table['mean_shd'].isna().tolist() == [False, True]


def _mean_shd_curve(algorithm: str, noise: str, make_augmenter, added_points) -> torch.Tensor:
    curves = []
    for seed in range(30):
        g = random_er_dag(10, 10, 0x300 + seed)
        base = sample(random_linear_scm(g, 0x500 + seed, noise_family=noise), 2000, 0x400 + seed)
        curve = shd_curve(g, base, make_augmenter(g), added_points, algorithm, rng_seed=seed, threads=4)
        curves.append(curve['mean_shd'].tolist())
    return torch.tensor(curves, dtype=torch.float64).mean(0)


def test_crb_preserves_structure_where_shuffling_does_not():
    added_points = [0, 500, 1000, 2000]
    crb = _mean_shd_curve('pc', 'gaussian', crb_augmenter, added_points)
    assert (crb <= crb[0] + 0.5).all()
    shuffled = _mean_shd_curve('pc', 'gaussian', lambda g: shuffle_augmenter(), added_points)
    assert float(shuffled[0]) == float(crb[0])
    assert shuffled[-1] >= shuffled[0] + 2


def test_crb_preserves_lingam_structure():
    curve = _mean_shd_curve('lingam', 'uniform', crb_augmenter, [0, 2000])
    assert abs(float(curve[-1] - curve[0])) <= 0.5
