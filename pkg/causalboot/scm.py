import dataclasses
import functools
import json
import math
import pathlib
from dataclasses import dataclass
from typing import Callable, Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import torch
from torch import Tensor, nn

from . import utils
from .graph import Dag, Edge
from .utils import DataError, InsufficientData, MissingColumn, SingularSystem, generator, promote

NOISE_FAMILIES = ('gaussian', 'uniform')
CHAIN_KINDS = ('linear-gaussian', 'linear-uniform', 'quadratic-gaussian', 'relu-gaussian')

Mechanism = Callable[[Tensor], Tensor]  # (rows, |parents|) -> (rows,)


@dataclass(frozen=True)
class NoiseSpec:
    family: str = 'gaussian'
    scale: float = 1.0  # standard deviation (gaussian) or half-width (uniform)

    def __post_init__(self):
        if self.family not in NOISE_FAMILIES:
            raise DataError(f"unknown noise family {self.family!r}, expected one of {NOISE_FAMILIES}")
        if not self.scale > 0:
            raise DataError(f"noise scale must be positive, got {self.scale}")

    @classmethod
    def with_std(cls, family: str, std: float) -> 'NoiseSpec':
        return cls(family, std * math.sqrt(3) if family == 'uniform' else std)

    @property
    def variance(self) -> float:
        return self.scale ** 2 / 3 if self.family == 'uniform' else self.scale ** 2

    def draw(self, n: int, gen: torch.Generator) -> Tensor:
        if self.family == 'gaussian':
            return torch.randn(n, generator=gen, dtype=torch.float64) * self.scale
        return (torch.rand(n, generator=gen, dtype=torch.float64) * 2 - 1) * self.scale


@dataclass(frozen=True, eq=False)
class Dataset:
    columns: Tuple[str, ...]
    values: Tensor

    def __post_init__(self):
        object.__setattr__(self, 'columns', tuple(str(c) for c in self.columns))
        values = promote(self.values)
        object.__setattr__(self, 'values', values)
        if values.dim() != 2 or values.shape[1] != len(self.columns):
            raise DataError(f"values of shape {tuple(values.shape)} do not match {len(self.columns)} columns")
        if len(set(self.columns)) != len(self.columns):
            raise DataError(f"column names must be unique, got {list(self.columns)}")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    def index(self, name: str) -> int:
        try:
            return self.columns.index(name)
        except ValueError:
            raise MissingColumn(f"missing column {name!r}; have {list(self.columns)}") from None

    def column(self, name: str) -> Tensor:
        return self.values[:, self.index(name)]

    def matrix(self, names: Sequence[str]) -> Tensor:
        return self.values[:, torch.tensor([self.index(n) for n in names], dtype=torch.long)]

    def select(self, names: Sequence[str]) -> 'Dataset':
        return Dataset(tuple(names), self.matrix(names))

    def append(self, other: 'Dataset') -> 'Dataset':
        return Dataset(self.columns, torch.cat([self.values, other.matrix(self.columns)], 0))

    def rows(self, idx) -> 'Dataset':
        return Dataset(self.columns, self.values[idx])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values.numpy(), columns=list(self.columns))

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> 'Dataset':
        bad = [c for c in frame.columns if not pd.api.types.is_numeric_dtype(frame[c])]
        if bad:
            raise DataError(f"non-numeric columns: {bad}")
        values = frame.to_numpy(dtype=np.float64)
        if not np.isfinite(values).all():
            rows, cols = np.nonzero(~np.isfinite(values))
            raise DataError(f"non-finite value in column {frame.columns[cols[0]]!r} at row {rows[0]}")
        return cls(tuple(frame.columns), torch.from_numpy(values.copy()))


def _linear(weights: Tensor, parents: Tensor) -> Tensor:
    return parents @ weights


def _quadratic(coefficient: float, parents: Tensor) -> Tensor:
    return coefficient * parents[:, 0].square()


class ReluMechanism(nn.Module):
    """
    Fixed random ReLU network (1 -> width -> ... -> 1) with i.i.d. standard normal weights and biases.
    """

    def __init__(self, gen: torch.Generator, width: int = 4, depth: int = 2, inputs: int = 1):
        super().__init__()
        layers = []
        for _ in range(depth):
            layers += [nn.Linear(inputs, width, dtype=torch.float64), nn.ReLU()]
            inputs = width
        layers.append(nn.Linear(inputs, 1, dtype=torch.float64))
        self.net = nn.Sequential(*layers)
        with torch.no_grad():
            for p in self.net.parameters():
                p.copy_(torch.randn(p.shape, generator=gen, dtype=torch.float64))
        self.requires_grad_(False)

    def forward(self, parents: Tensor) -> Tensor:
        with torch.no_grad():
            return self.net(parents).squeeze(-1)


@dataclass(frozen=True, eq=False)
class LinearScm:
    dag: Dag
    coefficients: Mapping[Edge, float]
    noise: Tuple[NoiseSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, 'coefficients', {(int(i), int(j)): float(w) for (i, j), w in
                                                  self.coefficients.items()})
        object.__setattr__(self, 'noise', tuple(self.noise))
        if set(self.coefficients) != set(self.dag.edges):
            raise DataError("coefficient keys must equal the DAG edge set")
        if len(self.noise) != self.dag.n:
            raise DataError(f"need {self.dag.n} noise specs, got {len(self.noise)}")

    def matrix(self) -> Tensor:
        out = torch.zeros((self.dag.n, self.dag.n), dtype=torch.float64)
        for (i, j), w in self.coefficients.items():
            out[j, i] = w
        return out

    def mechanism(self, j: int) -> Mechanism:
        weights = torch.tensor([self.coefficients[(i, j)] for i in self.dag.parents(j)], dtype=torch.float64)
        return functools.partial(_linear, weights)


@dataclass(frozen=True, eq=False)
class MechanismScm:
    dag: Dag
    mechanisms: Tuple[Optional[Mechanism], ...]  # None for roots
    noise: Tuple[NoiseSpec, ...]
    params: Optional[Dict] = None  # set by make_chain_scm, enables serialization

    def __post_init__(self):
        object.__setattr__(self, 'mechanisms', tuple(self.mechanisms))
        object.__setattr__(self, 'noise', tuple(self.noise))
        if len(self.mechanisms) != self.dag.n or len(self.noise) != self.dag.n:
            raise DataError(f"need one mechanism and one noise spec per vertex ({self.dag.n})")
        for j, fn in enumerate(self.mechanisms):
            if self.dag.parents(j) and fn is None:
                raise DataError(f"vertex {self.dag.vertices[j]!r} has parents but no mechanism")

    def mechanism(self, j: int) -> Mechanism:
        return self.mechanisms[j]


Scm = Union[LinearScm, MechanismScm]


def sample(scm: Scm, n: int, rng_seed: int) -> Dataset:
    """
    Forward simulation in topological order; vertex j draws its noise from the stream ``(rng_seed, j)``.
    """
    if n < 1:
        raise InsufficientData(f"need n >= 1 rows, got {n}")
    g = scm.dag
    out = torch.zeros((n, g.n), dtype=torch.float64)
    for j in g.order:
        value = scm.noise[j].draw(n, generator(rng_seed, j))
        parents = list(g.parents(j))
        if parents:
            value = value + scm.mechanism(j)(out[:, parents])
        out[:, j] = value
    if not torch.isfinite(out).all():
        raise DataError("simulation produced non-finite values")
    return Dataset(g.vertices, out)


def chain_dag() -> Dag:
    return Dag.from_names(('A', 'B', 'C'), [('A', 'B'), ('B', 'C')])


def confounded_dag() -> Dag:
    return Dag.from_names(('A', 'B', 'C', 'D'), [('A', 'B'), ('D', 'B'), ('B', 'C')])


def unit_linear_scm(g: Dag, weight: float = 1.0, sigma: float = 1.0, noise_family: str = 'gaussian') -> LinearScm:
    noise = NoiseSpec.with_std(noise_family, sigma)
    return LinearScm(g, {e: weight for e in g.edges}, (noise,) * g.n)


def random_linear_scm(g: Dag, rng_seed: int, weight_range: Tuple[float, float] = (0.5, 2.0),
                      noise_family: str = 'gaussian', sigma: float = 1.0) -> LinearScm:
    low, high = weight_range
    edges = sorted(g.edges)
    weights = torch.rand(len(edges), generator=generator(rng_seed), dtype=torch.float64) * (high - low) + low
    noise = NoiseSpec.with_std(noise_family, sigma)
    return LinearScm(g, dict(zip(edges, weights.tolist())), (noise,) * g.n)


def make_chain_scm(kind: str, rng_seed: int = 0, coefficient: float = 1.0, sigma: float = 0.5) -> MechanismScm:
    """
    Three-node chain A -> B -> C with one of four mechanism families. ``sigma`` is the noise standard deviation;
    uniform noise uses the half-width with the same variance.
    """
    if kind not in CHAIN_KINDS:
        raise DataError(f"unknown chain kind {kind!r}, expected one of {CHAIN_KINDS}")
    dag = chain_dag()
    noise = NoiseSpec.with_std('uniform' if kind == 'linear-uniform' else 'gaussian', sigma)

    def edge_mechanism(edge: int) -> Mechanism:
        if kind == 'quadratic-gaussian':
            return functools.partial(_quadratic, coefficient)
        if kind == 'relu-gaussian':
            return ReluMechanism(generator(rng_seed, edge))
        return functools.partial(_linear, torch.tensor([coefficient], dtype=torch.float64))

    params = {'kind': kind, 'seed': rng_seed, 'coefficient': coefficient, 'sigma': sigma}
    return MechanismScm(dag, (None, edge_mechanism(0), edge_mechanism(1)), (noise,) * 3, params)


def scm_population_covariance(scm: LinearScm) -> Tensor:
    if not isinstance(scm, LinearScm):
        raise DataError("population covariance needs a LinearScm")
    eye = torch.eye(scm.dag.n, dtype=torch.float64)
    try:
        inv = torch.linalg.solve(eye - scm.matrix(), eye)
    except torch.linalg.LinAlgError as e:
        raise SingularSystem("(I - B) is singular") from e
    if not torch.isfinite(inv).all():
        raise SingularSystem("(I - B) is numerically singular")
    cov = inv @ torch.diag(torch.tensor([n.variance for n in scm.noise], dtype=torch.float64)) @ inv.T
    return (cov + cov.T) / 2


def scm_to_dict(scm: Scm) -> Dict:
    g = scm.dag
    doc = {'dag': {'vertices': list(g.vertices), 'edges': [list(e) for e in g.named_edges()]},
           'noise': [{'family': n.family, 'scale': n.scale} for n in scm.noise]}
    if isinstance(scm, LinearScm):
        doc['coefficients'] = [[g.vertices[i], g.vertices[j], scm.coefficients[(i, j)]] for i, j in
                               sorted(scm.coefficients)]
    elif scm.params is not None:
        doc['mechanism'] = dict(scm.params)
    else:
        raise DataError("custom mechanisms cannot be serialized")
    return doc


def scm_from_dict(doc: Mapping) -> Scm:
    noise = tuple(NoiseSpec(n['family'], float(n['scale'])) for n in doc['noise'])
    if 'mechanism' in doc:
        params = doc['mechanism']
        scm = make_chain_scm(params['kind'], int(params.get('seed', 0)), float(params.get('coefficient', 1.0)),
                             float(params.get('sigma', 0.5)))
        return dataclasses.replace(scm, noise=noise)
    g = Dag.from_names(doc['dag']['vertices'], [tuple(e) for e in doc['dag']['edges']])
    coefficients = {(g.index(p), g.index(c)): float(w) for p, c, w in doc['coefficients']}
    return LinearScm(g, coefficients, noise)


def save_scm(scm: Scm, path):
    pathlib.Path(path).write_text(json.dumps(scm_to_dict(scm), indent=2) + '\n')


def load_scm(path) -> Scm:
    try:
        return scm_from_dict(json.loads(pathlib.Path(path).read_text(encoding='utf-8')))
    except (KeyError, TypeError, json.JSONDecodeError, UnicodeDecodeError) as e:
        raise DataError(f"{path}: malformed SCM document ({e})") from e


def read_dataset(path) -> Dataset:
    try:
        frame = pd.read_csv(path, float_precision='round_trip')
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataError(f"{path}: {e}") from e
    return Dataset.from_frame(frame)


def write_dataset(data: Dataset, path):
    data.to_frame().to_csv(path, index=False, float_format=utils.float_format)
