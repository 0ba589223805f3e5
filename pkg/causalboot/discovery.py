import functools
import itertools
import math
import warnings
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import pandas as pd
import torch
from scipy.stats import norm
from torch import Tensor

from . import regress
from .crb import Augmenter, augment
from .graph import Cpdag, Dag, apply_meek_rules, cpdag_to_dag, dag_to_cpdag, shd
from .regress import RegressorSpec
from .scm import Dataset
from .utils import (ConfigError, DataError, DegenerateCorrelation, InsufficientSamples, InsufficientVariation,
                    derive_seed, generator, map_cells, partial_correlation, recorded)

degenerate_tolerance = 1e-12
ALGORITHMS = ('pc', 'lingam')

# entropy approximation by maximum entropy with log-cosh and gaussian-weighted contrasts
_K1, _K2, _GAMMA = 79.047, 7.4129, 0.37457


@dataclass(frozen=True)
class CiTestConfig:
    alpha: float = 0.05
    max_cond_size: Optional[int] = None  # None: d - 2

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.max_cond_size is not None and self.max_cond_size < 0:
            raise ConfigError(f"max_cond_size must be >= 0, got {self.max_cond_size}")


@dataclass(frozen=True)
class CiTestResult:
    statistic: float
    p_value: float
    independent: bool


@dataclass(frozen=True, eq=False)
class LingamResult:
    order: Tuple[int, ...]
    adjacency: Tensor  # adjacency[j, i] is the weight of i -> j
    dag: Dag


def _correlation(data: Dataset) -> Tensor:
    std = data.values.std(0, correction=0)
    flat = [c for c, s in zip(data.columns, std.tolist()) if not s > 0]
    if flat:
        raise InsufficientVariation(f"constant columns: {flat}")
    corr = torch.corrcoef(data.values.T)
    return corr.reshape(data.values.shape[1], -1)


def _fisher_z(corr: Tensor, rows: int, i: int, j: int, given: Sequence[int], alpha: float) -> CiTestResult:
    if rows <= len(given) + 3:
        raise InsufficientSamples(f"Fisher-z test with |S|={len(given)} needs more than {len(given) + 3} rows, "
                                  f"got {rows}")
    r = partial_correlation(corr, i, j, given)
    if not math.isfinite(r) or 1 - abs(r) <= degenerate_tolerance:
        raise DegenerateCorrelation(f"partial correlation of columns {i} and {j} is {r}")
    statistic = math.sqrt(rows - len(given) - 3) * abs(math.atanh(r))
    p_value = float(2 * norm.sf(statistic))
    return CiTestResult(statistic, p_value, p_value > alpha)


def partial_correlation_test(data: Dataset, i: Union[str, int], j: Union[str, int], given: Sequence = (),
                             cfg: CiTestConfig = CiTestConfig()) -> CiTestResult:
    """
    Fisher-z test of ``i _||_ j | given``. Columns may be given by name or position.
    """

    def resolve(v):
        return data.index(v) if isinstance(v, str) else int(v)

    i, j = resolve(i), resolve(j)
    given = [resolve(v) for v in given]
    if i == j or i in given or j in given:
        raise DataError("tested columns must be distinct and outside the conditioning set")
    return _fisher_z(_correlation(data), data.n_rows, i, j, given, cfg.alpha)


def pc(data: Dataset, cfg: CiTestConfig = CiTestConfig()) -> Cpdag:
    """
    Order-independent PC: at each level conditioning sets come from the neighbourhoods frozen at the start of the
    level and removals are applied at its end. Unshielded triples whose separating set misses the middle vertex
    become v-structures; Meek's rules finish the orientation.
    """
    corr = _correlation(data)
    rows, d = data.values.shape
    max_size = d - 2 if cfg.max_cond_size is None else cfg.max_cond_size
    adjacent = {i: set(range(d)) - {i} for i in range(d)}
    sepsets: Dict[Tuple[int, int], Tuple[int, ...]] = {}

    for level in range(max_size + 1):
        frozen = {i: sorted(a) for i, a in adjacent.items()}
        if all(len(a) - 1 < level for a in frozen.values()):
            break
        removed = set()
        for i in range(d):
            for j in frozen[i]:
                pair = (min(i, j), max(i, j))
                if pair in removed:
                    continue
                for given in itertools.combinations([k for k in frozen[i] if k != j], level):
                    if _fisher_z(corr, rows, i, j, given, cfg.alpha).independent:
                        removed.add(pair)
                        sepsets[pair] = given
                        break
        for i, j in removed:
            adjacent[i].discard(j)
            adjacent[j].discard(i)

    skeleton = {(i, j) for i in range(d) for j in adjacent[i] if i < j}
    arcs = set()
    for k in range(d):
        for i, j in itertools.combinations(sorted(adjacent[k]), 2):
            if j not in adjacent[i] and k not in sepsets[(i, j)]:
                arcs.update({(i, k), (j, k)})
    conflicted = {(min(a, b), max(a, b)) for a, b in arcs if (b, a) in arcs}
    directed = {(a, b) for a, b in arcs if (min(a, b), max(a, b)) not in conflicted}
    undirected = {e for e in skeleton if e not in {(min(a, b), max(a, b)) for a, b in directed}}
    directed, undirected = apply_meek_rules(d, directed, undirected)
    return Cpdag(data.columns, frozenset(directed), frozenset(undirected))


def _entropy(u: Tensor) -> Tensor:
    logcosh = u.abs() + torch.log1p(torch.exp(-2 * u.abs())) - math.log(2)
    return ((1 + math.log(2 * math.pi)) / 2 - _K1 * (logcosh.mean(0) - _GAMMA) ** 2
            - _K2 * (u * torch.exp(-u.square() / 2)).mean(0) ** 2)


def _standardize(x: Tensor) -> Tensor:
    return (x - x.mean(0)) / x.std(0, correction=0)


def _most_exogenous(x: Tensor, names: Sequence[str]) -> int:
    """
    Pairwise likelihood-ratio measure: for each candidate i, sum over j of ``min(0, H(x_j) + H(r_i|j) - H(x_i) -
    H(r_j|i))^2`` where ``r_i|j`` is the standardized residual of x_i regressed on x_j. The smallest sum wins.
    """
    count = x.shape[1]
    if count == 1:
        return 0
    z = _standardize(x)
    cov = z.T @ z / z.shape[0]
    resid = z[:, :, None] - cov[None] * z[:, None, :]  # resid[:, i, j] = z_i - cov_ij z_j
    off = ~torch.eye(count, dtype=torch.bool)
    scale = resid.std(0, correction=0)
    if not (scale[off] > degenerate_tolerance).all():
        i, j = [int(v) for v in ((scale <= degenerate_tolerance) & off).nonzero()[0]]
        raise InsufficientVariation(f"{names[i]!r} is an exact linear function of {names[j]!r}")
    h_resid = _entropy(resid / torch.where(off, scale, torch.ones_like(scale)))
    h = _entropy(z)
    diff = (h[None, :] + h_resid) - (h[:, None] + h_resid.T)
    score = (diff.clamp(max=0).square() * off).sum(1)
    return int(torch.argmin(score))


def direct_lingam(data: Dataset, threshold: float = 0.0) -> LingamResult:
    """
    DirectLiNGAM with the pwling measure. Edge weights are OLS refits on all predecessors in the found order;
    with ``threshold == 0`` every predecessor edge is kept, otherwise weights with ``|w| <= threshold`` are pruned.
    """
    rows, d = data.values.shape
    if d < 1:
        raise DataError("need at least one column")
    if threshold < 0:
        raise ConfigError(f"threshold must be >= 0, got {threshold}")
    if rows < 10 * d:
        warnings.warn(f"DirectLiNGAM on {rows} rows for {d} columns; at least {10 * d} rows are recommended")
    _correlation(data)

    x = data.values.clone()
    remaining = list(range(d))
    order = []
    while remaining:
        pick = remaining[_most_exogenous(x[:, remaining], [data.columns[i] for i in remaining])]
        for i in remaining:
            if i != pick:
                xi, xm = x[:, i], x[:, pick]
                x[:, i] = xi - ((xi - xi.mean()) @ (xm - xm.mean())) / ((xm - xm.mean()).square().sum()) * xm
        order.append(pick)
        remaining.remove(pick)

    adjacency = torch.zeros((d, d), dtype=torch.float64)
    for pos, j in enumerate(order[1:], 1):
        predecessors = order[:pos]
        model = regress.fit(RegressorSpec('ols'), data.values[:, predecessors], data.values[:, j])
        adjacency[j, predecessors] = model.coefficients
    if threshold > 0:
        adjacency = torch.where(adjacency.abs() <= threshold, torch.zeros_like(adjacency), adjacency)
        edges = {(i, j) for j in range(d) for i in range(d) if adjacency[j, i] != 0}
    else:
        edges = {(i, order[pos]) for pos in range(d) for i in order[:pos]}

    idx = torch.tensor(order)
    permuted = adjacency[idx][:, idx]
    assert torch.equal(permuted, permuted.tril(-1)), "weights must follow the causal order"
    return LingamResult(tuple(order), adjacency, Dag(data.columns, frozenset(edges)))


def discover(data: Dataset, algorithm: str = 'pc', cfg: CiTestConfig = CiTestConfig(),
             threshold: float = 0.0) -> Union[Cpdag, LingamResult]:
    if algorithm == 'pc':
        return pc(data, cfg)
    if algorithm == 'lingam':
        return direct_lingam(data, threshold)
    raise ConfigError(f"unknown discovery algorithm {algorithm!r}, expected one of {ALGORITHMS}")


def discovered_cpdag(data: Dataset, algorithm: str = 'pc', cfg: CiTestConfig = CiTestConfig()) -> Cpdag:
    """
    Discovery output as a CPDAG: PC returns one directly, DirectLiNGAM's DAG is reduced to its equivalence class.
    """
    result = discover(data, algorithm, cfg)
    return result if isinstance(result, Cpdag) else dag_to_cpdag(result.dag)


def shuffle_augment(data: Dataset, m: int = 0, rng_seed: int = 0) -> Dataset:
    """
    Negative control: every column is bootstrapped on its own, which keeps the marginals and destroys all
    dependence between columns.
    """
    if m < 0:
        raise DataError(f"m must be >= 0, got {m}")
    if m == 0:
        return data
    if data.n_rows < 1:
        raise DataError("cannot resample an empty dataset")
    columns = [data.values[torch.randint(data.n_rows, (m,), generator=generator(rng_seed, j)), j]
               for j in range(len(data.columns))]
    return data.append(Dataset(data.columns, torch.stack(columns, 1)))


def shuffle_augmenter() -> Augmenter:
    return shuffle_augment


def discovered_dag(data: Dataset, algorithm: str = 'pc', cfg: CiTestConfig = CiTestConfig()) -> Dag:
    """
    Discovery output as one DAG: DirectLiNGAM's directly, PC's CPDAG extended to one member of its class.
    """
    result = discover(data, algorithm, cfg)
    return cpdag_to_dag(result) if isinstance(result, Cpdag) else result.dag


def _augment_discovered(data: Dataset, m: int = 0, rng_seed: int = 0, algorithm: str = 'pc',
                        cfg: CiTestConfig = CiTestConfig(), spec: RegressorSpec = RegressorSpec()) -> Dataset:
    if m == 0:
        return data
    return augment(data, discovered_dag(data, algorithm, cfg), spec, m, rng_seed, mode='append')


def discovered_crb_augmenter(algorithm: str = 'pc', cfg: CiTestConfig = CiTestConfig(),
                             spec: RegressorSpec = RegressorSpec()) -> Augmenter:
    """
    CRB trained on a DAG discovered from the data it augments; PC output is extended to one member of its class.
    """
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"unknown discovery algorithm {algorithm!r}, expected one of {ALGORITHMS}")
    return functools.partial(_augment_discovered, algorithm=algorithm, cfg=cfg, spec=spec)


def shd_records(truth: Dag, base: Dataset, augmenter: Augmenter, added_points: Sequence[int], algorithm: str = 'pc',
                replicates: int = 1, rng_seed: int = 0, cfg: CiTestConfig = CiTestConfig(),
                threads: int = 1) -> Tuple[List[Dict], List[Dict]]:
    """
    One SHD per (replicate, added count) cell plus the failed cells. With zero added points the augmenter is not
    invoked and the base data is scored once per replicate.
    """
    added_points = [int(a) for a in added_points]
    if list(added_points) != sorted(added_points) or (added_points and added_points[0] < 0):
        raise ConfigError(f"added_points must be non-negative and ascending, got {added_points}")
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"unknown discovery algorithm {algorithm!r}, expected one of {ALGORITHMS}")
    base = base.select(truth.vertices)
    reference = dag_to_cpdag(truth)

    @functools.lru_cache(maxsize=None)
    def score_base() -> int:
        return shd(discovered_cpdag(base, algorithm, cfg), reference)

    @recorded()
    def run_cell(cell):
        r, a = cell
        if added_points[a] == 0:
            return score_base()
        data = augmenter(base, m=added_points[a], rng_seed=derive_seed(rng_seed, r, a))
        return shd(discovered_cpdag(data, algorithm, cfg), reference)

    cells = [(r, a) for r in range(replicates) for a in range(len(added_points))]
    records, failures = [], []
    for (r, a), (value, error) in zip(cells, map_cells(run_cell, cells, threads)):
        if error is None:
            records.append({'replicate': r, 'added_points': added_points[a], 'shd': value})
        else:
            failures.append({'replicate': r, 'added_points': added_points[a], 'error': error})
    return records, failures


def summarize_shd(records: Sequence[Dict], added_points: Sequence[int]) -> pd.DataFrame:
    """
    Mean and (population) standard deviation of SHD per added count, in the order given.
    """
    frame = pd.DataFrame(list(records), columns=['replicate', 'added_points', 'shd'])
    rows = []
    for a in added_points:
        values = torch.tensor(frame.loc[frame['added_points'] == a, 'shd'].tolist(), dtype=torch.float64)
        rows.append({'added_points': int(a), 'mean_shd': float(values.mean()) if values.numel() else math.nan,
                     'std_shd': float(values.std(correction=0)) if values.numel() else math.nan,
                     'replicates': int(values.numel())})
    return pd.DataFrame(rows, columns=['added_points', 'mean_shd', 'std_shd', 'replicates'])


def shd_curve(truth: Dag, base: Dataset, augmenter: Augmenter, added_points: Sequence[int], algorithm: str = 'pc',
              replicates: int = 1, rng_seed: int = 0, cfg: CiTestConfig = CiTestConfig(),
              threads: int = 1) -> pd.DataFrame:
    records, _ = shd_records(truth, base, augmenter, added_points, algorithm, replicates, rng_seed, cfg, threads)
    return summarize_shd(records, added_points)
