"""
Gaussian estimation with and without DAG constraints, and Monte Carlo checks of what the constraints buy:
lower coefficient variance, a prediction-MSE gap decaying like C/N, and indifference to constraints outside the
target's Markov boundary.

The constrained fit is assembled from per-vertex OLS, which is the constrained maximum likelihood estimate:
``Omega = (I - B)^T diag(1 / sigma^2) (I - B)``. Its UDU factor is ``U = (I - B)^T`` under the DAG's topological
order, so ``U`` is exactly zero wherever the DAG has no edge.
"""
import json
import math
import pathlib
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import pandas as pd
import torch
from scipy.stats import norm
from torch import Tensor

from . import regress, utils
from .graph import Dag, markov_boundary
from .regress import RegressorSpec
from .scm import Dataset, LinearScm, sample
from .utils import (AllGapsNonpositive, CausalBootError, DataError, InsufficientData, NotPositiveDefinite,
                    PreconditionViolated, SingularFeatureBlock, ZeroResidualVariance, derive_seed, map_cells, promote,
                    recorded)

zero_variance_tolerance = 1e-12
confidence = 0.95


@dataclass(frozen=True, eq=False)
class GaussianFit:
    columns: Tuple[str, ...]
    n_rows: int
    mean: Tensor
    covariance: Tensor
    precision: Tensor
    U: Tensor  # unit upper-triangular once rows and columns are permuted into `order`
    D: Tensor
    order: Tuple[int, ...]
    dag: Optional[Dag] = None  # None for the unconstrained fit

    @property
    def provenance(self) -> str:
        return 'unconstrained' if self.dag is None else 'dag-constrained'

    def index(self, name: str) -> int:
        try:
            return self.columns.index(name)
        except ValueError:
            raise DataError(f"unknown column {name!r}; fit covers {list(self.columns)}") from None


@dataclass(frozen=True, eq=False)
class LinearPredictor:
    target: str
    features: Tuple[str, ...]
    coefficients: Tensor
    intercept: float
    noise_variance: float

    def predict(self, data: Dataset) -> Tensor:
        return self.intercept + data.matrix(self.features) @ self.coefficients


def udu_decompose(omega) -> Tuple[Tensor, Tensor]:
    """
    ``omega = U diag(D) U^T`` with unit upper-triangular ``U``, computed column by column from the last one:

        D_j  = omega_jj - sum_{k>j} U_jk^2 D_k
        U_ij = (omega_ij - sum_{k>j} U_ik U_jk D_k) / D_j        for i < j
    """
    omega = promote(omega)
    d = omega.shape[0]
    if omega.dim() != 2 or omega.shape[1] != d:
        raise DataError(f"expected a square matrix, got shape {tuple(omega.shape)}")
    if not torch.allclose(omega, omega.T, rtol=1e-10, atol=1e-12 * float(omega.abs().max().clamp(min=1))):
        raise DataError("matrix is not symmetric")
    U = torch.eye(d, dtype=torch.float64)
    D = torch.zeros(d, dtype=torch.float64)
    floor = utils.spd_tolerance * float(omega.diagonal().abs().max()) if d else 0.0
    for j in reversed(range(d)):
        tail = slice(j + 1, d)
        D[j] = omega[j, j] - (U[j, tail].square() * D[tail]).sum()
        if not D[j] > floor:
            raise NotPositiveDefinite(f"pivot {j} is {float(D[j]):.3g}, matrix is not positive definite")
        U[:j, j] = (omega[:j, j] - (U[:j, tail] * U[j, tail] * D[tail]).sum(1)) / D[j]
    return U, D


def _udu_in_order(omega: Tensor, order: Sequence[int]) -> Tuple[Tensor, Tensor]:
    idx = torch.tensor(order)
    u, d = udu_decompose(omega[idx][:, idx])
    U = torch.zeros_like(omega)
    U[idx[:, None], idx[None, :]] = u
    D = torch.zeros_like(d)
    D[idx] = d
    return U, D


def _spd_diagnostics(cov: Tensor, columns: Sequence[str]) -> str:
    eig = torch.linalg.eigvalsh(cov)
    variances = cov.diagonal()
    flat = [c for c, v in zip(columns, variances.tolist()) if v <= utils.spd_tolerance * float(variances.max())]
    msg = f"smallest/largest eigenvalue {float(eig[0]):.3g}/{float(eig[-1]):.3g}"
    if flat:
        msg += f"; (near-)constant columns: {flat}"
    return msg


def fit_unconstrained(data: Dataset, ddof: int = 0) -> GaussianFit:
    rows, d = data.values.shape
    if rows < d + 1:
        raise InsufficientData(f"need at least {d + 1} rows for {d} columns, got {rows}")
    mean = data.values.mean(0)
    centered = data.values - mean
    cov = centered.T @ centered / (rows - ddof)
    cov = (cov + cov.T) / 2
    if not utils.is_spd(cov):
        raise NotPositiveDefinite(f"empirical covariance is not positive definite: "
                                  f"{_spd_diagnostics(cov, data.columns)}")
    precision = torch.cholesky_inverse(torch.linalg.cholesky(cov))
    precision = (precision + precision.T) / 2
    order = tuple(range(d))
    U, D = _udu_in_order(precision, order)
    return GaussianFit(data.columns, rows, mean, cov, precision, U, D, order)


def fit_constrained(data: Dataset, g: Dag, ddof: int = 0) -> GaussianFit:
    data = data.select(g.vertices)
    values = data.values
    rows, d = values.shape
    if rows - ddof < 1:
        raise InsufficientData(f"need more than {ddof} rows, got {rows}")
    B = torch.zeros((d, d), dtype=torch.float64)
    variances = torch.zeros(d, dtype=torch.float64)
    for j in range(d):
        name = g.vertices[j]
        parents = list(g.parents(j))
        target = values[:, j]
        if parents:
            try:
                model = regress.fit(RegressorSpec('ols'), values[:, parents], target)
            except CausalBootError as e:
                raise type(e)(f"vertex {name!r}: {e}") from e
            B[j, parents] = model.coefficients
            resid = regress.residuals(model, values[:, parents], target)
        else:
            resid = target - target.mean()
        variances[j] = resid.square().sum() / (rows - ddof)
        if variances[j] <= zero_variance_tolerance:
            raise ZeroResidualVariance(f"vertex {name!r}: residual variance {float(variances[j]):.3g}")

    eye = torch.eye(d, dtype=torch.float64)
    U = (eye - B).T
    D = 1 / variances
    precision = U @ torch.diag(D) @ U.T
    inv = torch.linalg.solve(eye - B, eye)
    cov = inv @ torch.diag(variances) @ inv.T
    cov = (cov + cov.T) / 2
    return GaussianFit(g.vertices, rows, values.mean(0), cov, precision, U, D, g.order, g)


def regression_coefficients(fit: GaussianFit, target: str, features: Sequence[str]) -> LinearPredictor:
    features = tuple(features)
    if not features or target in features:
        raise DataError("features must be non-empty and exclude the target")
    t = fit.index(target)
    f = [fit.index(x) for x in features]
    sxx = fit.covariance[f][:, f]
    sxy = fit.covariance[f, t]
    chol, info = torch.linalg.cholesky_ex(sxx)
    if int(info) != 0 or not utils.is_spd(sxx):
        raise SingularFeatureBlock(f"feature covariance block {list(features)} is singular")
    beta = torch.cholesky_solve(sxy[:, None], chol).squeeze(-1)
    intercept = fit.mean[t] - beta @ fit.mean[f]
    noise = fit.covariance[t, t] - beta @ sxy
    return LinearPredictor(target, features, beta, float(intercept), float(noise))


def prediction_mse(model: LinearPredictor, test: Dataset, target: Optional[str] = None,
                   features: Optional[Sequence[str]] = None) -> float:
    target = model.target if target is None else target
    features = model.features if features is None else tuple(features)
    if len(features) != model.coefficients.numel():
        raise DataError(f"{len(features)} features for {model.coefficients.numel()} coefficients")
    pred = replace(model, features=features).predict(test)
    return float((test.column(target) - pred).square().mean())


def markov_boundary_predictor(data: Dataset, g: Dag, target: str) -> LinearPredictor:
    """
    OLS of ``target`` on its Markov boundary only; every other coefficient is fixed at zero.
    Features follow the dataset's column order, so two graphs with the same boundary give the same solve.
    """
    boundary = markov_boundary(g, target)
    features = tuple(c for c in data.columns if c in boundary)
    model = regress.fit(RegressorSpec('ols'), data.matrix(features), data.column(target))
    resid = regress.residuals(model, data.matrix(features), data.column(target))
    return LinearPredictor(target, features, model.coefficients, model.intercept, float(resid.square().mean()))


@dataclass
class MseGapResult:
    sizes: List[int]
    mse_full: List[float]
    mse_dag: List[float]
    gap: List[float]
    ci_half_width: List[float]
    replicates: List[int]
    C: float = math.nan
    slope: float = math.nan
    failures: List[Tuple[int, int, str]] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({'N': self.sizes, 'mse_full': self.mse_full, 'mse_dag': self.mse_dag, 'gap': self.gap,
                             'ci_half_width': self.ci_half_width, 'replicates': self.replicates})

    def summary(self) -> dict:
        return {'C': self.C, 'slope': self.slope}


def half_width(values: Tensor) -> float:
    if values.numel() < 2:
        return math.nan
    return float(norm.ppf(0.5 + confidence / 2) * values.std() / math.sqrt(values.numel()))


def fit_decay(sizes: Sequence[int], gaps: Sequence[float]) -> Tuple[float, float]:
    """
    Least-squares fit of ``log gap = log C - slope * log N`` over the sizes with a positive mean gap.
    """
    points = [(n, g) for n, g in zip(sizes, gaps) if g > 0 and math.isfinite(g)]
    if not points:
        raise AllGapsNonpositive("no sample size has a positive mean MSE gap")
    if len(points) == 1:
        n, g = points[0]
        return g * n, math.nan
    design = torch.tensor([[1.0, math.log(n)] for n, _ in points], dtype=torch.float64)
    coef = regress.least_squares(design, torch.tensor([math.log(g) for _, g in points], dtype=torch.float64))
    return math.exp(float(coef[0])), -float(coef[1])


def _check_sizes(scm: LinearScm, sizes: Sequence[int], replicates: int, minimum_replicates: int = 2):
    if replicates < minimum_replicates:
        raise DataError(f"need at least {minimum_replicates} replicates, got {replicates}")
    too_small = [n for n in sizes if n < scm.dag.n + 2]
    if too_small:
        raise DataError(f"sample sizes {too_small} are below d + 2 = {scm.dag.n + 2}")


def run_mse_gap_experiment(scm: LinearScm, target: str, features: Sequence[str], sizes: Sequence[int],
                           replicates: int = 500, test_size: int = 10000, rng_seed: int = 0, threads: int = 1,
                           ddof: int = 0) -> MseGapResult:
    sizes = [int(n) for n in sizes]
    _check_sizes(scm, sizes, replicates)

    @recorded()
    def run_cell(cell):
        a, r = cell
        train = sample(scm, sizes[a], derive_seed(rng_seed, a, r, 0))
        test = sample(scm, test_size, derive_seed(rng_seed, a, r, 1))
        full = regression_coefficients(fit_unconstrained(train, ddof), target, features)
        dag = regression_coefficients(fit_constrained(train, scm.dag, ddof), target, features)
        return prediction_mse(full, test), prediction_mse(dag, test)

    cells = [(a, r) for a in range(len(sizes)) for r in range(replicates)]
    outcomes = map_cells(run_cell, cells, threads)

    result = MseGapResult(sizes, [], [], [], [], [])
    for a, n in enumerate(sizes):
        pairs = []
        for r in range(replicates):
            value, error = outcomes[a * replicates + r]
            if error is None:
                pairs.append(value)
            else:
                result.failures.append((n, r, error))
        mse = torch.tensor(pairs, dtype=torch.float64).reshape(-1, 2)
        gap = mse[:, 0] - mse[:, 1]
        result.mse_full.append(float(mse[:, 0].mean()) if len(pairs) else math.nan)
        result.mse_dag.append(float(mse[:, 1].mean()) if len(pairs) else math.nan)
        result.gap.append(float(gap.mean()) if len(pairs) else math.nan)
        result.ci_half_width.append(half_width(gap))
        result.replicates.append(len(pairs))
    result.C, result.slope = fit_decay(sizes, result.gap)
    return result


@dataclass
class IrrelevanceReport:
    markov_boundary: Tuple[str, ...]
    cells: int
    identical_cells: int
    max_mse_difference: float

    @property
    def identical(self) -> bool:
        return self.cells == self.identical_cells


def _incident_edges(g: Dag, names) -> set:
    return {(p, c) for p, c in g.named_edges() if p in names or c in names}


def markov_boundary_irrelevance_check(g_base: Dag, g_extra: Dag, scm, target: str, sizes: Sequence[int],
                                      replicates: int, rng_seed: int = 0, test_size: int = 1000) -> IrrelevanceReport:
    if set(g_base.vertices) != set(g_extra.vertices):
        raise PreconditionViolated("graphs must share their vertex set")
    boundary = markov_boundary(g_base, target)
    if boundary != markov_boundary(g_extra, target):
        raise PreconditionViolated(f"Markov boundaries of {target!r} differ: {sorted(boundary)} vs "
                                   f"{sorted(markov_boundary(g_extra, target))}")
    names = boundary | {target}
    if _incident_edges(g_base, names) != _incident_edges(g_extra, names):
        raise PreconditionViolated("graphs differ on edges touching the Markov boundary")

    cells = identical = 0
    worst = 0.0
    for a, n in enumerate(sizes):
        for r in range(replicates):
            train = sample(scm, int(n), derive_seed(rng_seed, a, r, 0))
            test = sample(scm, test_size, derive_seed(rng_seed, a, r, 1))
            base = markov_boundary_predictor(train, g_base, target)
            extra = markov_boundary_predictor(train, g_extra, target)
            mse_base, mse_extra = prediction_mse(base, test), prediction_mse(extra, test)
            same = (base.features == extra.features and torch.equal(base.coefficients, extra.coefficients)
                    and base.intercept == extra.intercept and mse_base == mse_extra)
            cells += 1
            identical += same
            worst = max(worst, abs(mse_base - mse_extra))
    return IrrelevanceReport(tuple(sorted(boundary)), cells, identical, worst)


@dataclass(frozen=True, eq=False)
class VarianceComparison:
    beta_full: Tensor  # (replicates, features)
    beta_dag: Tensor

    @property
    def cov_full(self) -> Tensor:
        return torch.cov(self.beta_full.T)

    @property
    def cov_dag(self) -> Tensor:
        return torch.cov(self.beta_dag.T)

    def loewner_gap(self, directions: Tensor) -> Tuple[Tensor, Tensor]:
        """
        Estimates of ``x' (Cov_full - Cov_dag) x`` for each row ``x`` of ``directions`` and their Monte Carlo
        standard errors.
        """
        count = self.beta_full.shape[0]
        full = (self.beta_full - self.beta_full.mean(0)) @ directions.T
        dag = (self.beta_dag - self.beta_dag.mean(0)) @ directions.T
        terms = full.square() - dag.square()
        return terms.sum(0) / (count - 1), terms.std(0) / math.sqrt(count)


def estimator_covariances(scm: LinearScm, target: str, features: Sequence[str], n: int, replicates: int = 1000,
                          rng_seed: int = 0, threads: int = 1, ddof: int = 0) -> VarianceComparison:
    _check_sizes(scm, [n], replicates)

    @recorded()
    def run_cell(r):
        train = sample(scm, n, derive_seed(rng_seed, r))
        full = regression_coefficients(fit_unconstrained(train, ddof), target, features)
        dag = regression_coefficients(fit_constrained(train, scm.dag, ddof), target, features)
        return full.coefficients, dag.coefficients

    draws = [value for value, error in map_cells(run_cell, range(replicates), threads) if error is None]
    if len(draws) < 2:
        raise InsufficientData("fewer than two replicates succeeded")
    return VarianceComparison(torch.stack([f for f, _ in draws]), torch.stack([d for _, d in draws]))


def _write_matrix(mat: Tensor, columns: Sequence[str], path: pathlib.Path):
    pd.DataFrame(mat.reshape(-1, len(columns)).numpy(), columns=list(columns)).to_csv(
        path, index=False, float_format=utils.float_format)


def _read_matrix(path: pathlib.Path) -> Tensor:
    return torch.from_numpy(pd.read_csv(path, float_precision='round_trip').to_numpy(dtype='float64').copy())


def write_gaussian_fit(fit: GaussianFit, out_dir):
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, mat in (('sigma', fit.covariance), ('precision', fit.precision), ('U', fit.U), ('D', fit.D),
                      ('mean', fit.mean)):
        _write_matrix(mat, fit.columns, out / f"{name}.csv")
    header = {'provenance': fit.provenance, 'N': fit.n_rows, 'd': len(fit.columns), 'columns': list(fit.columns),
              'order': [fit.columns[i] for i in fit.order]}
    if fit.dag is not None:
        header['edges'] = [list(e) for e in fit.dag.named_edges()]
    (out / 'header.json').write_text(json.dumps(header, indent=2) + '\n')


def read_gaussian_fit(out_dir) -> GaussianFit:
    out = pathlib.Path(out_dir)
    header = json.loads((out / 'header.json').read_text())
    columns = tuple(header['columns'])
    dag = Dag.from_names(columns, [tuple(e) for e in header['edges']]) if 'edges' in header else None
    read = {name: _read_matrix(out / f"{name}.csv") for name in ('sigma', 'precision', 'U', 'D', 'mean')}
    return GaussianFit(columns, int(header['N']), read['mean'][0], read['sigma'], read['precision'], read['U'],
                       read['D'][0], tuple(columns.index(c) for c in header['order']), dag)
