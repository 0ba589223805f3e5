from typing import List, Optional

import typer

from causalboot.harness import ExperimentConfig, run_experiment
from causalboot.scm import CHAIN_KINDS
from causalboot.utils import set_torch

app = typer.Typer(pretty_exceptions_enable=False)
set_torch()


@app.command()
def main(kind: List[str] = typer.Option(list(CHAIN_KINDS), help='Chain mechanisms and noise'),
         sizes: List[int] = typer.Option([10, 20, 50, 100, 200], help='Training set sizes'),
         regressor: Optional[str] = typer.Option(None, help='Overrides the per-kind regressor'),
         augment_ratio: float = 10.0, replicates: int = 100, test_size: int = 10_000, seed: int = 0,
         threads: int = 8, out: str = 'results/chain_study'):
    cfg = ExperimentConfig('chain-study', seed, out, threads, chain_kinds=kind, sizes=sizes, regressor=regressor,
                           augment_ratio=augment_ratio, replicates=replicates, test_size=test_size)
    report = run_experiment(cfg)
    print(report.outcome.tables['chain_study'].to_string(index=False))
    for name, result in report.outcome.summary.items():
        print(f"{name}: augmentation helps at {result['augmented_wins']}/{result['sizes']} sizes")


if __name__ == '__main__':
    app()
