"""
Causal-Residual Bootstrapping.

Learning: every non-root vertex is regressed on its parents and keeps its residuals; every root keeps its observed
column. Generation: vertices are filled in topological order, roots by resampling their column, non-roots by the
fitted regression on the already generated parents plus a resampled residual. All draws are with replacement.
"""
import functools
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple

import pandas as pd
import torch
from torch import Tensor

from . import regress
from .graph import Dag
from .regress import FittedRegressor, RegressorSpec
from .scm import Dataset
from .utils import CausalBootError, ConfigError, DataError, InsufficientData, generator, map_cells

MODES = ('append', 'generated-only')

Augmenter = Callable[..., Dataset]  # (data, m=..., rng_seed=...) -> data with m generated rows appended


@dataclass(frozen=True, eq=False)
class CrbModel:
    dag: Dag
    order: Tuple[int, ...]
    n_rows: int
    marginals: Dict[int, Tensor]  # roots
    regressors: Dict[int, FittedRegressor]  # non-roots
    residual_pools: Dict[int, Tensor]  # non-roots, one residual per training row


def _fit_node(g: Dag, data: Dataset, spec: RegressorSpec, j: int):
    name = g.vertices[j]
    target = data.column(name)
    if j in g.roots():
        return j, target.clone(), None, None
    parents = [g.vertices[i] for i in g.parents(j)]
    inputs = data.matrix(parents)
    try:
        model = regress.fit(spec, inputs, target)
        pool = regress.residuals(model, inputs, target)
    except CausalBootError as e:
        raise type(e)(f"vertex {name!r}: {e}") from e
    return j, None, model, pool


def crb_fit(g: Dag, data: Dataset, spec: RegressorSpec = RegressorSpec(), threads: int = 1) -> CrbModel:
    for v in g.vertices:
        data.index(v)
    if data.n_rows < 1:
        raise InsufficientData("cannot fit on an empty dataset")

    marginals, regressors, pools = {}, {}, {}
    for j, marginal, model, pool in map_cells(functools.partial(_fit_node, g, data, spec), g.order, threads):
        if model is None:
            marginals[j] = marginal
        else:
            regressors[j] = model
            pools[j] = pool
    return CrbModel(g, g.order, data.n_rows, marginals, regressors, pools)


def crb_generate(model: CrbModel, m: int, rng_seed: int) -> Dataset:
    """
    Vertex j draws its resampling indices from the stream ``(rng_seed, j)``, so each column is reproducible on
    its own.
    """
    if m < 1:
        raise InsufficientData(f"need m >= 1 generated rows, got {m}")
    g = model.dag
    out = torch.zeros((m, g.n), dtype=torch.float64)
    for j in model.order:
        pool = model.marginals[j] if j in model.marginals else model.residual_pools[j]
        draw = pool[torch.randint(pool.numel(), (m,), generator=generator(rng_seed, j))]
        if j in model.marginals:
            out[:, j] = draw
            continue
        out[:, j] = regress.predict(model.regressors[j], out[:, list(g.parents(j))]) + draw
    return Dataset(g.vertices, out)


def augment(data: Dataset, g: Dag, spec: RegressorSpec = RegressorSpec(), m: int = 0, rng_seed: int = 0,
            mode: str = 'append', threads: int = 1, model: Optional[CrbModel] = None) -> Dataset:
    """
    ``model``, when given, must have been fitted on ``data`` under ``g``; it is used instead of refitting.
    """
    if mode not in MODES:
        raise ConfigError(f"unknown augmentation mode {mode!r}, expected one of {MODES}")
    if m < 0:
        raise DataError(f"m must be >= 0, got {m}")
    for v in g.vertices:
        data.index(v)
    if mode == 'append':
        extra = [c for c in data.columns if c not in g.vertices]
        if extra:
            raise DataError(f"column {extra[0]!r} is not a vertex of the DAG, append mode cannot generate it")
    if m == 0:
        if mode == 'append':
            return data
        return Dataset(g.vertices, torch.zeros((0, g.n), dtype=torch.float64))
    model = crb_fit(g, data, spec, threads) if model is None else model
    if model.dag != g or model.n_rows != data.n_rows:
        raise DataError("the fitted CRB model does not belong to this dataset and DAG")
    generated = crb_generate(model, m, rng_seed)
    return generated if mode == 'generated-only' else data.append(generated)


def crb_augmenter(g: Dag, spec: RegressorSpec = RegressorSpec()) -> Augmenter:
    return functools.partial(augment, g=g, spec=spec, mode='append')


def residual_summary(model: CrbModel) -> pd.DataFrame:
    rows = []
    for j in model.order:
        pool = model.marginals.get(j, model.residual_pools.get(j))
        rows.append({'vertex': model.dag.vertices[j], 'role': 'root' if j in model.marginals else 'residual',
                     'size': int(pool.numel()), 'mean': float(pool.mean()),
                     'variance': float(torch.var(pool, correction=0))})
    return pd.DataFrame(rows, columns=['vertex', 'role', 'size', 'mean', 'variance'])
