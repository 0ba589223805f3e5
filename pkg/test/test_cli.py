import json

import torch
from typer.testing import CliRunner

from causalboot import utils
from causalboot.cli import app
from causalboot.graph import Dag, write_dag
from causalboot.scm import (Dataset, LinearScm, NoiseSpec, chain_dag, read_dataset, sample, save_scm,
                            unit_linear_scm, write_dataset)

runner = CliRunner()


def _chain_csv(tmp_path, rows=300, seed=0xc1):
    path = tmp_path / 'data.csv'
    write_dataset(sample(unit_linear_scm(chain_dag()), rows, seed), path)
    write_dag(chain_dag(), tmp_path / 'dag.txt')
    return path


def test_simulate(tmp_path):
    save_scm(unit_linear_scm(chain_dag()), tmp_path / 'scm.json')
    for name in ('a.csv', 'b.csv'):
        result = runner.invoke(app, ['simulate', str(tmp_path / 'scm.json'), '--n', '100', '--seed', '42',
                                     '--out', str(tmp_path / name)])
        assert result.exit_code == 0, result.output
    assert (tmp_path / 'a.csv').read_bytes() == (tmp_path / 'b.csv').read_bytes()
    assert read_dataset(tmp_path / 'a.csv').n_rows == 100


def test_augment(tmp_path):
    data = _chain_csv(tmp_path)
    dag = str(tmp_path / 'dag.txt')
    result = runner.invoke(app, ['augment', str(data), dag, '--seed', '1', '--out', str(tmp_path / 'same.csv')])
    assert result.exit_code == 0, result.output
    assert (tmp_path / 'same.csv').read_bytes() == data.read_bytes()

    for name in ('x.csv', 'y.csv'):
        result = runner.invoke(app, ['augment', str(data), dag, '--m', '1000', '--seed', '7',
                                     '--out', str(tmp_path / name)])
        assert result.exit_code == 0, result.output
    assert (tmp_path / 'x.csv').read_bytes() == (tmp_path / 'y.csv').read_bytes()
    assert read_dataset(tmp_path / 'x.csv').n_rows == 1300
    assert 'residual' in result.output


def test_augment_errors(tmp_path):
    data = _chain_csv(tmp_path)
    result = runner.invoke(app, ['augment', str(data), str(tmp_path / 'dag.txt'), '--m', '10'])
    assert result.exit_code == 2  # --seed is required
    write_dag(Dag.from_names(('A', 'B', 'Z'), [('A', 'B'), ('B', 'Z')]), tmp_path / 'other.txt')
    result = runner.invoke(app, ['augment', str(data), str(tmp_path / 'other.txt'), '--m', '10', '--seed', '1'])
    assert result.exit_code == 3
    result = runner.invoke(app, ['augment', str(data), str(tmp_path / 'other.txt'), '--seed', '1',
                                 '--out', str(tmp_path / 'none.csv')])
    assert result.exit_code == 3 and not (tmp_path / 'none.csv').exists()
    result = runner.invoke(app, ['augment', str(data), str(tmp_path / 'dag.txt'), '--m', '10', '--seed', '1',
                                 '--regressor', 'lasso'])
    assert result.exit_code == 2


def test_augment_writes_to_env_directory(tmp_path):
    data = _chain_csv(tmp_path)
    env = {utils.out_env: str(tmp_path / 'env')}
    result = runner.invoke(app, ['augment', str(data), str(tmp_path / 'dag.txt'), '--m', '5', '--seed', '3'],
                           env=env)
    assert result.exit_code == 0, result.output
    assert read_dataset(tmp_path / 'env' / 'augmented.csv').n_rows == 305


def test_fit_gaussian(tmp_path):
    data = _chain_csv(tmp_path)
    result = runner.invoke(app, ['fit-gaussian', str(data), '--dag', str(tmp_path / 'dag.txt'),
                                 '--out', str(tmp_path / 'fit')])
    assert result.exit_code == 0, result.output
    u = read_dataset(tmp_path / 'fit' / 'U.csv').values
    assert int((u - torch.eye(3, dtype=torch.float64)).ne(0).sum()) == 2
    header = json.loads((tmp_path / 'fit' / 'header.json').read_text())
    assert header['provenance'] == 'dag-constrained' and header['N'] == 300

    values = torch.randn((40, 2), dtype=torch.float64)
    values[:, 1] = 5.0
    write_dataset(Dataset(('a', 'flat'), values), tmp_path / 'flat.csv')
    result = runner.invoke(app, ['fit-gaussian', str(tmp_path / 'flat.csv'), '--out', str(tmp_path / 'bad')])
    assert result.exit_code == 4


def test_discover_pc(tmp_path):
    data = _chain_csv(tmp_path, rows=5000, seed=0xd15c)
    result = runner.invoke(app, ['discover', str(data), '--alpha', '0.01', '--truth', str(tmp_path / 'dag.txt'),
                                 '--out', str(tmp_path / 'pc.txt')])
    assert result.exit_code == 0, result.output
    assert (tmp_path / 'pc.txt').read_text().splitlines()[1:] == ['A -- B', 'B -- C']
    assert 'SHD: 0' in result.output


def test_discover_lingam(tmp_path):
    g = Dag.from_names(('x1', 'x2'), [('x1', 'x2')])
    scm = LinearScm(g, {(0, 1): 1.5}, (NoiseSpec.with_std('uniform', 1.0),) * 2)
    write_dataset(sample(scm, 5000, 0x11).select(['x2', 'x1']), tmp_path / 'pair.csv')
    result = runner.invoke(app, ['discover', str(tmp_path / 'pair.csv'), '--algorithm', 'lingam',
                                 '--out', str(tmp_path)])
    assert result.exit_code == 0, result.output
    assert (tmp_path / 'lingam.txt').read_text().splitlines()[1:] == ['x1\tx2']

    result = runner.invoke(app, ['discover', str(tmp_path / 'pair.csv'), '--algorithm', 'ges'])
    assert result.exit_code == 2


def test_experiment(tmp_path):
    config = tmp_path / 'cfg.json'
    config.write_text(json.dumps({'kind': 'mse-gap', 'seed': 1, 'structures': ['chain'], 'sizes': [10, 20],
                                  'replicates': 100, 'test_size': 200}))
    result = runner.invoke(app, ['experiment', str(config), '--out', str(tmp_path / 'report')])
    assert result.exit_code == 0, result.output
    assert (tmp_path / 'report' / 'mse_gap_chain.csv').exists()
    assert json.loads((tmp_path / 'report' / 'report.json').read_text())['config']['seed'] == 1

    config.write_text(json.dumps({'kind': 'mse-gapp', 'seed': 1}))
    assert runner.invoke(app, ['experiment', str(config)]).exit_code == 2
    assert runner.invoke(app, ['experiment', str(tmp_path / 'missing.json')]).exit_code == 3


def test_undecodable_inputs_and_negative_seeds(tmp_path):
    data = _chain_csv(tmp_path)
    dag = str(tmp_path / 'dag.txt')
    (tmp_path / 'latin.csv').write_bytes(b'A,B,C\n\xe9\xff,1,2\n')
    assert runner.invoke(app, ['augment', str(tmp_path / 'latin.csv'), dag, '--seed', '1']).exit_code == 3
    (tmp_path / 'latin.txt').write_bytes(b'A\tB\n\xe9\xff\tC\n')
    assert runner.invoke(app, ['augment', str(data), str(tmp_path / 'latin.txt'), '--seed', '1']).exit_code == 3
    assert runner.invoke(app, ['fit-gaussian', str(tmp_path / 'latin.csv')]).exit_code == 3

    assert runner.invoke(app, ['augment', str(data), dag, '--m', '5', '--seed=-3']).exit_code == 2
    assert runner.invoke(app, ['augment', str(data), dag, '--m', '5', f'--seed={2 ** 64}']).exit_code == 2
    save_scm(unit_linear_scm(chain_dag()), tmp_path / 'scm.json')
    assert runner.invoke(app, ['simulate', str(tmp_path / 'scm.json'), '--n', '5', '--seed=-3']).exit_code == 2
    config = tmp_path / 'cfg.json'
    config.write_text(json.dumps({'kind': 'mse-gap', 'seed': 1}))
    assert runner.invoke(app, ['experiment', str(config), '--seed=-1']).exit_code == 2


def test_threads_flag_on_every_command(tmp_path):
    data = _chain_csv(tmp_path)
    dag = str(tmp_path / 'dag.txt')
    save_scm(unit_linear_scm(chain_dag()), tmp_path / 'scm.json')
    for threads in ('1', '3'):
        result = runner.invoke(app, ['simulate', str(tmp_path / 'scm.json'), '--n', '50', '--seed', '9',
                                     '--threads', threads, '--out', str(tmp_path / f'sim{threads}.csv')])
        assert result.exit_code == 0, result.output
        result = runner.invoke(app, ['augment', str(data), dag, '--m', '40', '--seed', '9', '--threads', threads,
                                     '--out', str(tmp_path / f'aug{threads}.csv')])
        assert result.exit_code == 0, result.output
    assert (tmp_path / 'sim1.csv').read_bytes() == (tmp_path / 'sim3.csv').read_bytes()
    assert (tmp_path / 'aug1.csv').read_bytes() == (tmp_path / 'aug3.csv').read_bytes()

    result = runner.invoke(app, ['fit-gaussian', str(data), '--threads', '2', '--out', str(tmp_path / 'fit')])
    assert result.exit_code == 0, result.output
    result = runner.invoke(app, ['discover', str(data), '--threads', '2', '--out', str(tmp_path / 'pc.txt')])
    assert result.exit_code == 0, result.output
    assert runner.invoke(app, ['discover', str(data), '--threads', '0']).exit_code == 2
