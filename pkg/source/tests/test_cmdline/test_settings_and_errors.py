import csv
import re

import pytest

from structseq.seqmodel import load_checkpoint


def _error_line(output: str) -> str:
    lines = [line for line in output.splitlines() if line.startswith('error=')]
    assert len(lines) == 1, output
    return lines[0]


def _metric_steps(path):
    return [row['step'] for row in csv.DictReader(path.read_text().splitlines())]


def test_empty_dataset(tmp_path, cli_runner):
    dataset = tmp_path / 'empty.jsonl'
    dataset.write_text('')
    result = cli_runner('serialize', '--dataset', dataset, '--output', tmp_path / 'corpus.jsonl', exit_code=3)
    assert _error_line(result.output).startswith('error=EmptyDataset exit=3 message=')
    assert not (tmp_path / 'corpus.jsonl').exists()


def test_unknown_kind(tmp_path, cli_runner):
    result = cli_runner('gen', '--kind', 'graph', '--output', tmp_path / 'out.jsonl', exit_code=2)
    assert _error_line(result.output).startswith('error=ConfigError exit=2 message=gen.kind')


def test_missing_checkpoint(tmp_path, cli_runner, set_dataset):
    result = cli_runner('recover', '--checkpoint', tmp_path / 'missing.ckpt', '--dataset', set_dataset, '--output',
                        tmp_path / 'densities.jsonl', exit_code=3)
    assert _error_line(result.output).startswith('error=MissingInput exit=3')


def test_missing_output(cli_runner, set_dataset):
    result = cli_runner('serialize', '--dataset', set_dataset, exit_code=2)
    assert 'paths.output is required' in _error_line(result.output)


def test_malformed_dataset_line(tmp_path, cli_runner):
    dataset = tmp_path / 'bad.jsonl'
    dataset.write_text('{"version": 1, "kind": "set", "elements": ["A"]}\n{"version": 1, "kind": "set"\n')
    result = cli_runner('serialize', '--dataset', dataset, '--output', tmp_path / 'corpus.jsonl', exit_code=3)
    assert _error_line(result.output).startswith('error=MalformedRecord exit=3')


def test_evaluating_a_generative_model(tmp_path, cli_runner, set_dataset):
    checkpoint = tmp_path / 'model.ckpt'
    cli_runner('train', '--dataset', set_dataset, '--checkpoint', checkpoint, '--steps', 1, '--hidden-dim', 2)
    result = cli_runner('eval', '--checkpoint', checkpoint, '--test-dataset', set_dataset, '--output',
                        tmp_path / 'predictions.csv', exit_code=3)
    assert _error_line(result.output).startswith('error=MissingHead exit=3')


def test_set_override(tmp_path, cli_runner, set_dataset):
    checkpoint, metrics = tmp_path / 'model.ckpt', tmp_path / 'metrics.csv'
    cli_runner('--set', 'train.max_steps=2', '--set', 'model.hidden_dim=3', 'train', '--dataset', set_dataset,
               '--checkpoint', checkpoint, '--metrics', metrics)
    assert _metric_steps(metrics) == ['1', '2']
    assert load_checkpoint(checkpoint).params.spec.hidden_dim == 3


def test_flags_beat_the_config_file(tmp_path, cli_runner, set_dataset):
    config = tmp_path / 'run.conf'
    config.write_text('# small run\ntrain.max_steps = 3\nmodel.hidden_dim = 2\n')
    metrics = tmp_path / 'metrics.csv'
    cli_runner('--config', config, 'train', '--dataset', set_dataset, '--checkpoint', tmp_path / 'a.ckpt',
               '--metrics', metrics)
    assert _metric_steps(metrics) == ['1', '2', '3']

    cli_runner('--config', config, 'train', '--dataset', set_dataset, '--checkpoint', tmp_path / 'b.ckpt',
               '--metrics', metrics, '--steps', 1)
    assert _metric_steps(metrics) == ['1']


def test_user_config_file_is_read(tmp_path, cli_runner, set_dataset, user_config_path):
    user_config_path.parent.mkdir(parents=True)
    user_config_path.write_text('train.max_steps = 1\n')
    metrics = tmp_path / 'metrics.csv'
    cli_runner('train', '--dataset', set_dataset, '--checkpoint', tmp_path / 'model.ckpt', '--metrics', metrics)
    assert _metric_steps(metrics) == ['1']


@pytest.mark.parametrize('args, code', [
    (('--set', 'train.max_steps', 'gen'), 2),
    (('--set', 'train.learning_rate=-1', 'gen'), 2),
    (('--set', 'train.nonsense=1', 'gen'), 2),
    (('--config', 'does-not-exist.conf', 'gen'), 2),
])
def test_bad_configuration(tmp_path, cli_runner, args, code):
    result = cli_runner(*args, '--output', tmp_path / 'out.jsonl', exit_code=code)
    assert re.match(rf'error=Config(File)?Error exit={code} ', _error_line(result.output))
