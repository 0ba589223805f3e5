from typing import List

import typer

from causalboot.harness import ExperimentConfig, run_experiment
from causalboot.utils import set_torch

app = typer.Typer(pretty_exceptions_enable=False)
set_torch()


@app.command()
def main(algorithm: str = typer.Option('pc', help='pc or lingam'),
         augmenter: List[str] = typer.Option(['crb', 'shuffle'], help='Augmenters to compare'),
         added_points: List[int] = typer.Option([0, 500, 1000, 2000], help='Generated rows per curve point'),
         graphs: int = 30, vertices: int = 10, edges: float = 10.0, base_rows: int = 2000, alpha: float = 0.05,
         seed: int = 0, threads: int = 8, out: str = 'results/structure_preservation'):
    kind = 'shd-preservation' if algorithm == 'pc' else 'lingam-preservation'
    cfg = ExperimentConfig(kind, seed, f"{out}/{algorithm}", threads, graphs=graphs, n_vertices=vertices,
                           expected_edges=edges, base_rows=base_rows, added_points=added_points,
                           augmenters=augmenter, alpha=alpha)
    report = run_experiment(cfg)
    for name, table in report.outcome.tables.items():
        print(name)
        print(table.to_string(index=False))
    crb = report.outcome.summary.get('crb')
    if crb is not None:
        ok = crb['worst_increase'] <= 0.5
        print(f"crb: baseline {crb['baseline_shd']:.2f}, worst increase {crb['worst_increase']:.2f} "
              f"{'pass' if ok else 'FAIL'}")


if __name__ == '__main__':
    app()
