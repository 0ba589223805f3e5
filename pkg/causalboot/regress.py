import itertools
from dataclasses import dataclass
from typing import Optional

import torch
from torch import Tensor

from .utils import ArityMismatch, ConfigError, DataError, InsufficientData, RankDeficient, promote

rank_tolerance = 1e-10  # |R_ii| relative to the largest design column norm
knn_chunk_elements = 2 ** 24
KINDS = ('ols', 'polynomial', 'knn')


@dataclass(frozen=True)
class RegressorSpec:
    kind: str = 'ols'
    degree: int = 1
    k: int = 5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown regressor kind {self.kind!r}, expected one of {KINDS}")
        if self.degree < 1 or self.k < 1:
            raise ConfigError(f"degree and k must be >= 1, got degree={self.degree}, k={self.k}")

    @classmethod
    def parse(cls, text: str) -> 'RegressorSpec':
        """
        ``ols``, ``poly:<degree>`` (or ``polynomial:<degree>``) and ``knn:<k>``.
        """
        name, _, arg = str(text).strip().lower().partition(':')
        try:
            if name == 'ols' and not arg:
                return cls('ols')
            if name in ('poly', 'polynomial'):
                return cls('polynomial', degree=int(arg or 2))
            if name == 'knn':
                return cls('knn', k=int(arg or 5))
        except ValueError:
            pass
        raise ConfigError(f"cannot parse regressor {text!r}; use 'ols', 'poly:<degree>' or 'knn:<k>'")

    def __str__(self):
        if self.kind == 'polynomial':
            return f"poly:{self.degree}"
        if self.kind == 'knn':
            return f"knn:{self.k}"
        return 'ols'


@dataclass(frozen=True, eq=False)
class FittedRegressor:
    spec: RegressorSpec
    arity: int
    coefficients: Optional[Tensor] = None  # one per expanded term, intercept excluded
    intercept: float = 0.0
    powers: Optional[Tensor] = None  # (terms, arity) monomial exponents
    train_inputs: Optional[Tensor] = None
    train_targets: Optional[Tensor] = None


def _powers(arity: int, degree: int) -> Tensor:
    if arity == 0:
        return torch.zeros((0, 0), dtype=torch.float64)
    rows = []
    for total in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(range(arity), total):
            row = [0] * arity
            for c in combo:
                row[c] += 1
            rows.append(row)
    return torch.tensor(rows, dtype=torch.float64).reshape(-1, arity)


def _expand(inputs: Tensor, powers: Tensor) -> Tensor:
    return torch.prod(inputs[:, None, :] ** powers[None], dim=-1)


def _as_matrix(inputs) -> Tensor:
    inputs = promote(inputs)
    return inputs[:, None] if inputs.dim() == 1 else inputs


def least_squares(design: Tensor, targets: Tensor) -> Tensor:
    q, r = torch.linalg.qr(design)
    scale = torch.linalg.vector_norm(design, dim=0).max()
    weak = (r.diagonal().abs() <= rank_tolerance * scale).nonzero().flatten().tolist()
    if weak or not scale > 0:
        raise RankDeficient(f"design matrix is rank deficient (dependent columns {weak})")
    return torch.linalg.solve_triangular(r, (q.T @ targets)[:, None], upper=True).squeeze(-1)


def fit(spec: RegressorSpec, inputs, targets) -> FittedRegressor:
    inputs = _as_matrix(inputs)
    targets = promote(targets).reshape(-1)
    rows, arity = inputs.shape
    if targets.shape[0] != rows:
        raise DataError(f"{rows} input rows but {targets.shape[0]} targets")

    if spec.kind == 'knn':
        if rows < spec.k:
            raise InsufficientData(f"knn with k={spec.k} needs at least {spec.k} rows, got {rows}")
        return FittedRegressor(spec, arity, train_inputs=inputs.clone(), train_targets=targets.clone())

    powers = _powers(arity, spec.degree if spec.kind == 'polynomial' else 1)
    design = torch.cat([torch.ones((rows, 1), dtype=torch.float64), _expand(inputs, powers)], 1)
    if rows < design.shape[1]:
        raise InsufficientData(f"{spec} on {arity} inputs needs at least {design.shape[1]} rows, got {rows}")
    coef = least_squares(design, targets)
    return FittedRegressor(spec, arity, coef[1:], float(coef[0]), powers)


def _knn_predict(model: FittedRegressor, inputs: Tensor) -> Tensor:
    train = model.train_inputs
    chunk = max(1, knn_chunk_elements // max(1, train.shape[0]))
    out = []
    for start in range(0, inputs.shape[0], chunk):
        dist = torch.cdist(inputs[start:start + chunk], train, compute_mode='donot_use_mm_for_euclid_dist')
        nearest = torch.sort(dist, dim=1, stable=True).indices[:, :model.spec.k]  # ties: lowest training index
        out.append(model.train_targets[nearest].mean(1))
    return torch.cat(out) if out else torch.zeros(0, dtype=torch.float64)


def predict(model: FittedRegressor, inputs) -> Tensor:
    inputs = _as_matrix(inputs)
    if inputs.shape[1] != model.arity:
        raise ArityMismatch(f"model expects {model.arity} inputs, got {inputs.shape[1]}")
    if model.spec.kind == 'knn':
        return _knn_predict(model, inputs)
    return model.intercept + _expand(inputs, model.powers) @ model.coefficients


def residuals(model: FittedRegressor, inputs, targets) -> Tensor:
    return promote(targets).reshape(-1) - predict(model, inputs)
