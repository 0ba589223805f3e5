from typing import List

import typer

from causalboot.harness import ExperimentConfig, run_experiment
from causalboot.utils import set_torch

app = typer.Typer(pretty_exceptions_enable=False)
set_torch()


@app.command()
def main(structure: List[str] = typer.Option(['chain', 'confounded'], help='Structures to evaluate'),
         sizes: List[int] = typer.Option([25, 50, 100, 200, 400, 800], help='Training set sizes'),
         replicates: int = 500, test_size: int = 10_000, seed: int = 0, threads: int = 8, out: str = 'results/mse_gap'):
    cfg = ExperimentConfig('mse-gap', seed, out, threads, structures=structure, sizes=sizes, replicates=replicates,
                           test_size=test_size)
    report = run_experiment(cfg)
    for name, table in report.outcome.tables.items():
        summary = report.outcome.summary[name.removeprefix('mse_gap_')]
        ok = ((table['gap'] >= -table['ci_half_width']).all() and (table.loc[table['N'] <= 100, 'gap'] > 0).all()
              and 0.6 <= summary['slope'] <= 1.4)
        print(f"{name}: C={summary['C']:.4g} slope={summary['slope']:.3f} {'pass' if ok else 'FAIL'}")
        print(table.to_string(index=False))


if __name__ == '__main__':
    app()
