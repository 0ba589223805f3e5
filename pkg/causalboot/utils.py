import functools
import os
import warnings
from typing import Callable, Iterable, List, Optional, Sequence

import joblib
import numpy as np
import torch
from torch import Tensor

spd_tolerance = 1e-10  # smallest eigenvalue relative to the largest
float_format = '%.17g'
out_env = 'CAUSALBOOT_OUT'


class CausalBootError(Exception):
    pass


class DataError(CausalBootError, ValueError):
    pass


class NumericError(CausalBootError, ArithmeticError):
    pass


class ConfigError(CausalBootError, ValueError):
    pass


class CycleDetected(DataError):
    pass


class InvalidDensity(DataError):
    pass


class UnknownVertex(DataError):
    pass


class VertexMismatch(DataError):
    pass


class MissingColumn(DataError):
    pass


class ArityMismatch(DataError):
    pass


class InsufficientData(DataError):
    pass


class InsufficientSamples(DataError):
    pass


class PreconditionViolated(DataError):
    pass


class RankDeficient(NumericError):
    pass


class SingularSystem(NumericError):
    pass


class NotPositiveDefinite(NumericError):
    pass


class ZeroResidualVariance(NumericError):
    pass


class SingularFeatureBlock(NumericError):
    pass


class DegenerateCorrelation(NumericError):
    pass


class InsufficientVariation(NumericError):
    pass


class AllGapsNonpositive(NumericError):
    pass


def set_torch():
    torch.set_default_dtype(torch.float64)
    torch.use_deterministic_algorithms(True, warn_only=True)


def promote(x) -> Tensor:
    if isinstance(x, Tensor):
        return x.to(torch.float64)
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def derive_seed(seed: int, *key: int) -> int:
    """
    Deterministic 63-bit seed for the stream identified by ``key`` under ``seed``.
    Streams with different keys are statistically independent, so cells of an experiment can run in any order.
    """
    if isinstance(seed, bool) or not 0 <= int(seed) < 2 ** 64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    state = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)).generate_state(2, np.uint32)
    return (int(state[0]) << 31) ^ int(state[1])


def generator(seed: int, *key: int) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(derive_seed(seed, *key))
    return gen


def default_threads() -> int:
    return os.cpu_count() or 1


def map_cells(fn: Callable, cells: Iterable, threads: Optional[int] = None) -> List:
    """
    Runs ``fn`` over ``cells`` on a thread pool of ``threads`` workers (all available cores when None);
    results keep the order of ``cells``.
    """
    cells = list(cells)
    threads = default_threads() if threads is None else threads
    if threads <= 1 or len(cells) <= 1:
        return [fn(c) for c in cells]
    return joblib.Parallel(n_jobs=threads, prefer='threads')(joblib.delayed(fn)(c) for c in cells)


def recorded(errors: tuple = (CausalBootError,)):
    """
    Turns a per-cell function into one returning ``(result, None)`` or ``(None, message)``,
    so a failing experiment cell is recorded and skipped instead of aborting the run.
    """

    def _decorator(fn):
        @functools.wraps(fn)
        def _fn(cell):
            try:
                return fn(cell), None
            except errors as e:
                warnings.warn(f"cell {cell} failed: {e}")
                return None, f"{type(e).__name__}: {e}"

        return _fn

    return _decorator


def is_spd(mat: Tensor, tolerance: Optional[float] = None) -> bool:
    tolerance = spd_tolerance if tolerance is None else tolerance
    eig = torch.linalg.eigvalsh(mat)
    return bool(eig[-1] > 0 and eig[0] > tolerance * eig[-1])


def partial_correlation(cov: Tensor, i: int, j: int, given: Sequence[int] = ()) -> float:
    """
    Partial correlation of ``i`` and ``j`` given ``given`` from a covariance (or correlation) matrix,
    read off the precision of the ``[i, j, *given]`` block.
    """
    idx = [i, j, *given]
    block = cov[idx][:, idx]
    prec = torch.linalg.pinv(block, hermitian=True)
    return float(-prec[0, 1] / torch.sqrt(prec[0, 0] * prec[1, 1]))
