import functools
import os
import pathlib
from typing import Optional

import torch
import typer

from . import utils
from .crb import augment as crb_augment, crb_fit, residual_summary
from .discovery import ALGORITHMS, CiTestConfig, LingamResult, discover as run_discovery
from .gausstheory import fit_constrained, fit_unconstrained, write_gaussian_fit
from .graph import Dag, dag_to_cpdag, read_dag, shd, write_cpdag, write_dag
from .harness import load_config, run_experiment
from .regress import RegressorSpec
from .scm import load_scm, read_dataset, sample, write_dataset
from .utils import ConfigError, DataError, NumericError

app = typer.Typer(pretty_exceptions_enable=False, no_args_is_help=True)

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


def exit_codes(fn):
    """
    Maps library errors to exit statuses: 2 configuration, 3 data/schema/I-O, 4 numeric failure.
    """

    @functools.wraps(fn)
    def _fn(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as e:
            typer.echo(f"config error: {e}", err=True)
            raise typer.Exit(EXIT_CONFIG)
        except DataError as e:
            typer.echo(f"schema error: {e}", err=True)
            raise typer.Exit(EXIT_DATA)
        except OSError as e:
            typer.echo(f"I/O error: {e}", err=True)
            raise typer.Exit(EXIT_DATA)
        except NumericError as e:
            typer.echo(f"fit error: {e}", err=True)
            raise typer.Exit(EXIT_NUMERIC)

    return _fn


def _output(out: Optional[pathlib.Path], default_name: str) -> pathlib.Path:
    if out is not None:
        return out / default_name if out.is_dir() else out
    base = pathlib.Path(os.environ.get(utils.out_env, '.'))
    base.mkdir(parents=True, exist_ok=True)
    return base / default_name


SEED = typer.Option(..., min=0, max=2 ** 64 - 1, help='Root seed; every random stream is derived from it')
OUT = typer.Option(None, help=f'Output file or directory (default: ${utils.out_env} or the working directory)')
THREADS = typer.Option(None, min=1, help='Worker threads (default: all available cores)')


def _torch_threads(threads: Optional[int]):
    torch.set_num_threads(utils.default_threads() if threads is None else threads)


@app.command()
@exit_codes
def augment(data: pathlib.Path, dag: pathlib.Path,
            regressor: str = typer.Option('ols', help='ols, poly:<d> or knn:<k>'),
            m: int = typer.Option(0, help='Rows to generate'),
            mode: str = typer.Option('append', help='append or generated-only'), seed: int = SEED,
            out: Optional[pathlib.Path] = OUT, threads: Optional[int] = THREADS):
    """
    Fits CRB on DATA under DAG and writes the augmented CSV.
    """
    spec = RegressorSpec.parse(regressor)
    dataset = read_dataset(data)
    g = read_dag(dag)
    model = crb_fit(g, dataset, spec, threads) if m > 0 else None
    result = crb_augment(dataset, g, spec, m, seed, mode, threads, model)
    path = _output(out, 'augmented.csv')
    write_dataset(result, path)
    typer.echo(f"input rows: {dataset.n_rows}, generated rows: {m}, output rows: {result.n_rows} -> {path}")
    if model is not None:
        typer.echo(residual_summary(model).to_string(index=False))


@app.command()
@exit_codes
def experiment(config: pathlib.Path,
               seed: Optional[int] = typer.Option(None, min=0, max=2 ** 64 - 1, help='Overrides the config seed'),
               out: Optional[str] = typer.Option(None, help=f'Report directory (overrides ${utils.out_env})'),
               threads: Optional[int] = typer.Option(None, min=1, help='Overrides the config thread count')):
    """
    Runs the experiment described by a flat JSON CONFIG.
    """
    cfg = load_config(config, seed=seed, threads=threads)
    report = run_experiment(cfg, out)
    for name, value in report.outcome.summary.items():
        typer.echo(f"{name}: {value}")
    if report.outcome.failures:
        typer.echo(f"{len(report.outcome.failures)} failed cells recorded in report.json", err=True)


@app.command('fit-gaussian')
@exit_codes
def fit_gaussian(data: pathlib.Path, dag: Optional[pathlib.Path] = typer.Option(None, help='Constrain to this DAG'),
                 ddof: int = typer.Option(0, help='0: maximum likelihood, 1: unbiased'),
                 out: Optional[pathlib.Path] = OUT, threads: Optional[int] = THREADS):
    """
    Writes Sigma, Omega, U, D and a JSON header for DATA; constrained when a DAG is given.
    """
    _torch_threads(threads)
    dataset = read_dataset(data)
    fit = fit_unconstrained(dataset, ddof) if dag is None else fit_constrained(dataset, read_dag(dag), ddof)
    target = out if out is not None else _output(None, 'gaussian_fit')
    write_gaussian_fit(fit, target)
    typer.echo(f"{fit.provenance} fit on {fit.n_rows} rows x {len(fit.columns)} columns -> {target}")


@app.command()
@exit_codes
def discover(data: pathlib.Path, algorithm: str = typer.Option('pc', help=f"One of {', '.join(ALGORITHMS)}"),
             alpha: float = typer.Option(0.05, help='Significance level of the Fisher-z test'),
             max_cond_size: Optional[int] = typer.Option(None, help='Largest conditioning set (default d - 2)'),
             threshold: float = typer.Option(0.0, help='LiNGAM edge pruning threshold'),
             truth: Optional[pathlib.Path] = typer.Option(None, help='True DAG; prints the SHD'),
             out: Optional[pathlib.Path] = OUT, threads: Optional[int] = THREADS):
    """
    Runs PC (CPDAG output) or DirectLiNGAM (DAG output) on DATA.
    """
    _torch_threads(threads)
    dataset = read_dataset(data)
    result = run_discovery(dataset, algorithm, CiTestConfig(alpha, max_cond_size), threshold)
    path = _output(out, f"{algorithm}.txt")
    if isinstance(result, LingamResult):
        write_dag(result.dag, path)
        cpdag = dag_to_cpdag(result.dag)
    else:
        write_cpdag(result, path)
        cpdag = result
    typer.echo(f"{algorithm} graph -> {path}")
    if truth is not None:
        reference = read_dag(truth)
        if set(reference.vertices) != set(dataset.columns):
            raise DataError(f"truth vertices {list(reference.vertices)} differ from columns {list(dataset.columns)}")
        reference = Dag.from_names(dataset.columns, reference.named_edges())
        typer.echo(f"SHD: {shd(cpdag, dag_to_cpdag(reference))}")


@app.command()
@exit_codes
def simulate(scm: pathlib.Path, n: int = typer.Option(..., help='Rows to sample'), seed: int = SEED,
             out: Optional[pathlib.Path] = OUT, threads: Optional[int] = THREADS):
    """
    Samples N rows from a serialized SCM into a CSV.
    """
    _torch_threads(threads)
    model = load_scm(scm)
    path = _output(out, 'simulated.csv')
    write_dataset(sample(model, n, seed), path)
    typer.echo(f"{n} rows -> {path}")


def main():
    utils.set_torch()
    app()


if __name__ == '__main__':
    main()
