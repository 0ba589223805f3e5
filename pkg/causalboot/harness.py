"""
Experiment orchestration: one flat JSON config per run, one runner per experiment kind, and a report directory of
CSV tables, ``summary.json`` and ``report.json``.

Runners take keyword arguments only and are called with the config entries their signature names, so adding a
config key never breaks an existing runner.
"""
import dataclasses
import inspect
import json
import math
import os
import pathlib
import platform
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import pandas as pd
import torch

from . import __version__, regress, utils
from .crb import MODES, augment, crb_augmenter, crb_fit, residual_summary
from .discovery import (ALGORITHMS, CiTestConfig, discovered_cpdag, discovered_crb_augmenter, discovered_dag,
                        shuffle_augmenter, summarize_shd)
from .gausstheory import half_width, run_mse_gap_experiment
from .graph import Dag, dag_to_cpdag, random_er_dag, read_dag, shd
from .regress import RegressorSpec
from .scm import (CHAIN_KINDS, NOISE_FAMILIES, Dataset, chain_dag, confounded_dag, load_scm, make_chain_scm,
                  random_linear_scm, read_dataset, sample, unit_linear_scm)
from .utils import (ConfigError, DataError, InsufficientData, VertexMismatch, derive_seed, generator, map_cells,
                    recorded)

KINDS = ('mse-gap', 'shd-preservation', 'lingam-preservation', 'chain-study', 'augment-only', 'prediction')
STRUCTURES = {'chain': chain_dag, 'confounded': confounded_dag}
AUGMENTERS = ('crb', 'shuffle', 'discovered-crb')
CHAIN_STUDY_REGRESSORS = {'linear-gaussian': 'ols', 'linear-uniform': 'ols', 'quadratic-gaussian': 'poly:2',
                          'relu-gaussian': 'knn:10'}
_FILES = ('scm', 'data', 'dag')


@dataclass
class ExperimentConfig:
    kind: str
    seed: int
    out: str = 'results'
    threads: Optional[int] = None  # None: all available cores
    # sources
    scm: Optional[str] = None
    data: Optional[str] = None
    dag: Optional[str] = None
    # mse-gap
    structures: List[str] = field(default_factory=lambda: ['chain', 'confounded'])
    target: str = 'B'
    features: Optional[List[str]] = None
    sizes: List[int] = field(default_factory=lambda: [25, 50, 100, 200, 400, 800])
    replicates: int = 500
    test_size: int = 10000
    ddof: int = 0
    # structure preservation
    graphs: int = 30
    n_vertices: int = 10
    expected_edges: float = 10.0
    base_rows: int = 2000
    added_points: List[int] = field(default_factory=lambda: [0, 500, 1000, 2000])
    augmenters: List[str] = field(default_factory=lambda: ['crb', 'shuffle'])
    noise: Optional[str] = None
    weight_low: float = 0.5
    weight_high: float = 2.0
    alpha: float = 0.05
    max_cond_size: Optional[int] = None
    # chain study, prediction and augmentation
    regressor: Optional[str] = None
    chain_kinds: List[str] = field(default_factory=lambda: list(CHAIN_KINDS))
    coefficient: float = 1.0
    sigma: float = 0.5
    augment_ratio: float = 10.0
    targets: Optional[List[str]] = None  # None: every column
    holdout_fraction: float = 0.3
    discovery: str = 'lingam'
    m: int = 0
    mode: str = 'append'

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}, expected one of {KINDS}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        for name in _FILES:
            path = getattr(self, name)
            if path is not None and not pathlib.Path(path).is_file():
                raise ConfigError(f"{name} file {path!r} does not exist")
        if self.threads is not None and (isinstance(self.threads, bool) or self.threads < 1):
            raise ConfigError(f"threads must be >= 1 or null, got {self.threads!r}")
        if self.replicates < 1 or self.test_size < 1 or self.graphs < 1:
            raise ConfigError("replicates, test_size and graphs must be >= 1")
        if any(n < 1 for n in self.sizes) or not self.sizes:
            raise ConfigError(f"sizes must be positive, got {self.sizes}")
        if self.added_points != sorted(self.added_points) or any(a < 0 for a in self.added_points):
            raise ConfigError(f"added_points must be non-negative and ascending, got {self.added_points}")
        unknown = [s for s in self.structures if s not in STRUCTURES]
        unknown += [a for a in self.augmenters if a not in AUGMENTERS]
        unknown += [k for k in self.chain_kinds if k not in CHAIN_KINDS]
        if unknown:
            raise ConfigError(f"unknown structure, augmenter or chain kind: {unknown}")
        if self.noise is not None and self.noise not in NOISE_FAMILIES:
            raise ConfigError(f"unknown noise family {self.noise!r}, expected one of {NOISE_FAMILIES}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown augmentation mode {self.mode!r}, expected one of {MODES}")
        if self.discovery not in ALGORITHMS:
            raise ConfigError(f"unknown discovery algorithm {self.discovery!r}, expected one of {ALGORITHMS}")
        if self.m < 0 or self.augment_ratio < 0:
            raise ConfigError("m and augment_ratio must be >= 0")
        if not 0 < self.holdout_fraction < 1:
            raise ConfigError(f"holdout_fraction must lie in (0, 1), got {self.holdout_fraction}")
        if self.regressor is not None:
            RegressorSpec.parse(self.regressor)
        self.ci_config()
        if self.kind == 'augment-only' and (self.data is None or self.dag is None):
            raise ConfigError("augment-only needs both 'data' and 'dag'")
        if self.kind == 'prediction' and self.data is None:
            raise ConfigError("prediction needs 'data'")

    def ci_config(self) -> CiTestConfig:
        return CiTestConfig(self.alpha, self.max_cond_size)

    def to_dict(self) -> Dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: Dict) -> 'ExperimentConfig':
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        if 'seed' not in doc or doc['seed'] is None:
            raise ConfigError("config needs an explicit 'seed'")
        if 'kind' not in doc:
            raise ConfigError("config needs a 'kind'")
        try:
            return cls(**doc)
        except TypeError as e:
            raise ConfigError(f"malformed config: {e}") from e


def load_config(path, **overrides) -> ExperimentConfig:
    """
    Reads a flat JSON config; keyword arguments that are not None take precedence over file values.
    """
    try:
        doc = json.loads(pathlib.Path(path).read_text(encoding='utf-8'))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ConfigError(f"{path}: not valid JSON ({e})") from e
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_dict(doc)


@dataclass
class Outcome:
    tables: Dict[str, pd.DataFrame]
    summary: Dict
    failures: List[Dict] = field(default_factory=list)


def run_mse_gap(seed: int, structures: List[str], target: str, features: Optional[List[str]], sizes: List[int],
                replicates: int, test_size: int, ddof: int = 0, threads: Optional[int] = None,
                scm: Optional[str] = None) -> Outcome:
    models = {pathlib.Path(scm).stem: load_scm(scm)} if scm else {s: unit_linear_scm(STRUCTURES[s]()) for s in
                                                                   structures}
    tables, summary, failures = {}, {}, []
    for k, (name, model) in enumerate(models.items()):
        cols = features or [v for v in model.dag.vertices if v != target]
        result = run_mse_gap_experiment(model, target, cols, sizes, replicates, test_size, derive_seed(seed, k),
                                        threads, ddof)
        tables[f"mse_gap_{name}"] = result.to_frame()
        summary[name] = result.summary()
        failures += [{'structure': name, 'N': n, 'replicate': r, 'error': e} for n, r, e in result.failures]
    return Outcome(tables, summary, failures)


def _augmenter(name: str, dag, spec: RegressorSpec, algorithm: str, cfg: CiTestConfig):
    if name == 'crb':
        return crb_augmenter(dag, spec)
    if name == 'shuffle':
        return shuffle_augmenter()
    return discovered_crb_augmenter(algorithm, cfg, spec)


def _structure_preservation(algorithm: str, default_noise: str, seed: int, graphs: int, n_vertices: int,
                            expected_edges: float, base_rows: int, added_points: List[int], augmenters: List[str],
                            noise: Optional[str], weight_low: float, weight_high: float, ci: CiTestConfig,
                            regressor: Optional[str], threads: Optional[int]) -> Outcome:
    """
    Every (graph, augmenter, added count) is one cell of the pool; counts of zero score each graph's base data
    once, shared by all augmenters.
    """
    spec = RegressorSpec.parse(regressor or 'ols')
    problems = []
    for k in range(graphs):
        dag = random_er_dag(n_vertices, expected_edges, derive_seed(seed, k, 0))
        scm = random_linear_scm(dag, derive_seed(seed, k, 1), (weight_low, weight_high), noise or default_noise)
        problems.append((dag, dag_to_cpdag(dag), sample(scm, base_rows, derive_seed(seed, k, 2))))

    @recorded()
    def run_cell(cell):
        k, name, a = cell
        dag, reference, base = problems[k]
        if name is not None:
            base = _augmenter(name, dag, spec, algorithm, ci)(base, m=added_points[a],
                                                              rng_seed=derive_seed(seed, k, 3, 0, a))
        return shd(discovered_cpdag(base, algorithm, ci), reference)

    zeros = [a for a, count in enumerate(added_points) if count == 0]
    cells = [(k, None, None) for k in range(graphs) if zeros]
    cells += [(k, name, a) for k in range(graphs) for name in augmenters for a, count in enumerate(added_points)
              if count > 0]
    records = {name: [] for name in augmenters}
    failures = []
    for (k, name, a), (value, error) in zip(cells, map_cells(run_cell, cells, threads)):
        targets = [(n, b) for n in augmenters for b in zeros] if name is None else [(name, a)]
        for n, b in targets:
            if error is None:
                records[n].append({'replicate': k, 'added_points': added_points[b], 'shd': value})
            else:
                failures.append({'graph': k, 'augmenter': n, 'added_points': added_points[b], 'error': error})

    tables, summary = {}, {}
    for name in augmenters:
        table = summarize_shd(records[name], added_points)
        tables[f"shd_{algorithm}_{name}"] = table
        summary[name] = {'baseline_shd': float(table['mean_shd'].iloc[0]),
                         'max_added_shd': float(table['mean_shd'].iloc[-1]),
                         'worst_increase': float((table['mean_shd'] - table['mean_shd'].iloc[0]).max())}
    return Outcome(tables, summary, failures)


def run_shd_preservation(seed: int, graphs: int, n_vertices: int, expected_edges: float, base_rows: int,
                         added_points: List[int], augmenters: List[str], noise: Optional[str], weight_low: float,
                         weight_high: float, alpha: float, max_cond_size: Optional[int],
                         regressor: Optional[str] = None, threads: Optional[int] = None) -> Outcome:
    return _structure_preservation('pc', 'gaussian', seed, graphs, n_vertices, expected_edges, base_rows,
                                   added_points, augmenters, noise, weight_low, weight_high,
                                   CiTestConfig(alpha, max_cond_size), regressor, threads)


def run_lingam_preservation(seed: int, graphs: int, n_vertices: int, expected_edges: float, base_rows: int,
                            added_points: List[int], augmenters: List[str], noise: Optional[str], weight_low: float,
                            weight_high: float, regressor: Optional[str] = None,
                            threads: Optional[int] = None) -> Outcome:
    return _structure_preservation('lingam', 'uniform', seed, graphs, n_vertices, expected_edges, base_rows,
                                   added_points, augmenters, noise, weight_low, weight_high, CiTestConfig(),
                                   regressor, threads)


def _heldout_mse(spec: RegressorSpec, train: Dataset, test: Dataset, target: str, features: List[str]) -> float:
    model = regress.fit(spec, train.matrix(features), train.column(target))
    pred = regress.predict(model, test.matrix(features))
    return float((test.column(target) - pred).square().mean())


def _chain_cell(kind: str, spec: RegressorSpec, size: int, test_size: int, augment_ratio: float, seed: int,
                coefficient: float, sigma: float):
    scm = make_chain_scm(kind, seed, coefficient, sigma)

    @recorded()
    def run(replicate: int):
        train = sample(scm, size, derive_seed(seed, size, replicate, 0))
        test = sample(scm, test_size, derive_seed(seed, size, replicate, 1))
        extra = int(round(augment_ratio * size))
        augmented = augment(train, scm.dag, spec, extra, derive_seed(seed, size, replicate, 2))
        return tuple(_heldout_mse(spec, data, test, 'B', ['A', 'C']) for data in (train, augmented))

    return run


def run_chain_study(seed: int, chain_kinds: List[str], sizes: List[int], replicates: int, test_size: int,
                    augment_ratio: float, coefficient: float, sigma: float, regressor: Optional[str] = None,
                    threads: Optional[int] = None) -> Outcome:
    """
    Predicts B from (A, C) on the three-node chain, trained on the original rows or on the rows plus
    ``augment_ratio * N`` CRB rows. Mechanisms and the downstream predictor use the same regressor.
    """
    rows, failures, summary = [], [], {}
    for k, kind in enumerate(chain_kinds):
        spec = RegressorSpec.parse(regressor or CHAIN_STUDY_REGRESSORS[kind])
        kind_seed = derive_seed(seed, k)
        for size in sizes:
            run = _chain_cell(kind, spec, size, test_size, augment_ratio, kind_seed, coefficient, sigma)
            pairs = []
            for r, (value, error) in enumerate(map_cells(run, range(replicates), threads)):
                if error is None:
                    pairs.append(value)
                else:
                    failures.append({'kind': kind, 'N': size, 'replicate': r, 'error': error})
            mse = torch.tensor(pairs, dtype=torch.float64).reshape(-1, 2)
            gap = mse[:, 0] - mse[:, 1]
            rows.append({'kind': kind, 'regressor': str(spec), 'N': size,
                         'mse_original': float(mse[:, 0].mean()) if pairs else math.nan,
                         'mse_augmented': float(mse[:, 1].mean()) if pairs else math.nan,
                         'gap': float(gap.mean()) if pairs else math.nan, 'ci_half_width': half_width(gap),
                         'replicates': len(pairs)})
        kind_rows = [r for r in rows if r['kind'] == kind]
        summary[kind] = {'augmented_wins': sum(r['gap'] > 0 for r in kind_rows), 'sizes': len(kind_rows)}
    columns = ['kind', 'regressor', 'N', 'mse_original', 'mse_augmented', 'gap', 'ci_half_width', 'replicates']
    return Outcome({'chain_study': pd.DataFrame(rows, columns=columns)}, summary, failures)


def _known_dag(path: str, dataset: Dataset) -> Dag:
    g = read_dag(path)
    if set(g.vertices) != set(dataset.columns):
        raise VertexMismatch(f"DAG vertices {list(g.vertices)} differ from columns {list(dataset.columns)}")
    return Dag.from_names(dataset.columns, g.named_edges())


def run_prediction(seed: int, data: str, dag: Optional[str], targets: Optional[List[str]], sizes: List[int],
                   replicates: int, holdout_fraction: float, augment_ratio: float, discovery: str, alpha: float,
                   max_cond_size: Optional[int], regressor: Optional[str] = None,
                   threads: Optional[int] = None) -> Outcome:
    """
    Downstream prediction on a CSV. Each replicate holds out ``holdout_fraction`` of the rows and draws N training
    rows from the rest; every target column is then predicted from all other columns and the held-out MSE is
    averaged over targets.

    Variants train on the N rows alone (``none``), or on ``augment_ratio * N`` CRB rows appended to them or used
    alone (``generated-only``). CRB runs on the given DAG (``crb``) and on a DAG discovered from the N rows
    (``discovered-crb``). ``gap`` is the paired MSE reduction against ``none``.
    """
    spec = RegressorSpec.parse(regressor or 'ols')
    dataset = read_dataset(data)
    if len(dataset.columns) < 2:
        raise DataError("prediction needs at least two columns")
    targets = list(targets or dataset.columns)
    for t in targets:
        dataset.index(t)
    graphs = {'crb': _known_dag(dag, dataset)} if dag is not None else {}
    n_test = max(1, int(round(holdout_fraction * dataset.n_rows)))
    if max(sizes) > dataset.n_rows - n_test:
        raise InsufficientData(f"training size {max(sizes)} exceeds the {dataset.n_rows - n_test} rows left after "
                               f"holding out {n_test}")
    if int(round(augment_ratio * min(sizes))) < 1:
        raise ConfigError(f"augment_ratio {augment_ratio} generates no rows at N = {min(sizes)}")
    variants = ['none'] + [f"{name}/{mode}" for name in [*graphs, 'discovered-crb'] for mode in MODES]
    ci = CiTestConfig(alpha, max_cond_size)

    @recorded()
    def run_cell(cell):
        size, r = cell
        perm = torch.randperm(dataset.n_rows, generator=generator(seed, size, r, 0))
        test, train = dataset.rows(perm[:n_test]), dataset.rows(perm[n_test:n_test + size])
        extra = int(round(augment_ratio * size))
        sets = {'none': train}
        for name, g in {**graphs, 'discovered-crb': discovered_dag(train, discovery, ci)}.items():
            model = crb_fit(g, train, spec)
            for mode in MODES:
                sets[f"{name}/{mode}"] = augment(train, g, spec, extra, derive_seed(seed, size, r, 1), mode,
                                                 model=model)
        return {v: sum(_heldout_mse(spec, sets[v], test, t, [c for c in dataset.columns if c != t])
                       for t in targets) / len(targets) for v in variants}

    cells = [(size, r) for size in sizes for r in range(replicates)]
    outcomes = map_cells(run_cell, cells, threads)
    rows, failures = [], []
    for size in sizes:
        done = []
        for (n, r), (value, error) in zip(cells, outcomes):
            if n != size:
                continue
            if error is None:
                done.append(value)
            else:
                failures.append({'N': size, 'replicate': r, 'error': error})
        baseline = torch.tensor([v['none'] for v in done], dtype=torch.float64)
        for variant in variants:
            mse = torch.tensor([v[variant] for v in done], dtype=torch.float64)
            gap = baseline - mse
            rows.append({'variant': variant, 'N': size, 'mse': float(mse.mean()) if done else math.nan,
                         'gap': float(gap.mean()) if done else math.nan, 'ci_half_width': half_width(gap),
                         'replicates': len(done)})
    table = pd.DataFrame(rows, columns=['variant', 'N', 'mse', 'gap', 'ci_half_width', 'replicates'])
    summary = {v: {'wins': int((table.loc[table['variant'] == v, 'gap'] > 0).sum()), 'sizes': len(sizes)}
               for v in variants[1:]}
    return Outcome({'prediction': table}, summary, failures)


def run_augment(seed: int, data: str, dag: str, m: int, mode: str = 'append', regressor: Optional[str] = None,
                threads: Optional[int] = None) -> Outcome:
    spec = RegressorSpec.parse(regressor or 'ols')
    dataset = read_dataset(data)
    g = read_dag(dag)
    model = crb_fit(g, dataset, spec, threads) if m > 0 else None
    augmented = augment(dataset, g, spec, m, seed, mode, threads, model)
    tables = {'augmented': augmented.to_frame()}
    if model is not None:
        tables['residual_summary'] = residual_summary(model)
    return Outcome(tables, {'input_rows': dataset.n_rows, 'generated_rows': m, 'output_rows': augmented.n_rows})


RUNNERS: Dict[str, Callable[..., Outcome]] = {'mse-gap': run_mse_gap, 'shd-preservation': run_shd_preservation,
                                              'lingam-preservation': run_lingam_preservation,
                                              'chain-study': run_chain_study, 'augment-only': run_augment,
                                              'prediction': run_prediction}


def call_with(fn: Callable, config: Dict):
    signature = inspect.signature(fn)
    return fn(**{k: v for k, v in config.items() if k in signature.parameters})


@dataclass
class RunReport:
    config: ExperimentConfig
    outcome: Outcome
    duration: float
    version: str = __version__

    def write(self, out_dir) -> pathlib.Path:
        """
        Tables are written by this single writer after every cell has finished. Only ``report.json`` carries
        wall-clock data; all other files are reproducible byte for byte.
        """
        out = pathlib.Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, table in self.outcome.tables.items():
            table.to_csv(out / f"{name}.csv", index=False, float_format=utils.float_format)
        summary = {'exact': self.outcome.summary, 'rounded': _rounded(self.outcome.summary)}
        (out / 'summary.json').write_text(json.dumps(summary, indent=2, sort_keys=True) + '\n')
        report = {'config': self.config.to_dict(), 'version': self.version, 'seed': self.config.seed,
                  'environment': {'python': platform.python_version(), 'torch': torch.__version__},
                  'duration_seconds': self.duration, 'tables': sorted(f"{n}.csv" for n in self.outcome.tables),
                  'failures': self.outcome.failures}
        (out / 'report.json').write_text(json.dumps(report, indent=2) + '\n')
        return out


def _rounded(value):
    if isinstance(value, float):
        return float(f"{value:.4g}") if math.isfinite(value) else value
    if isinstance(value, dict):
        return {k: _rounded(v) for k, v in value.items()}
    return value


def output_dir(flag: Optional[str], configured: str) -> pathlib.Path:
    return pathlib.Path(flag or os.environ.get(utils.out_env) or configured)


def run_experiment(config: ExperimentConfig, out: Optional[str] = None) -> RunReport:
    start = time.perf_counter()
    outcome = call_with(RUNNERS[config.kind], config.to_dict())
    report = RunReport(config, outcome, time.perf_counter() - start)
    report.write(output_dir(out, config.out))
    return report
