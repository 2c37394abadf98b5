import csv
import json
import math
from pathlib import Path

import pytest

from structseq.misc import manifest_path
from structseq.seqmodel import load_checkpoint
from structseq.structures.instances import read_instances


def _json_lines(path: Path):
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def _train(cli_runner, dataset: Path, checkpoint: Path, *args):
    return cli_runner('train', '--dataset', dataset, '--checkpoint', checkpoint, '--hidden-dim', 4, '--seed', 3, *args)


def test_gen_writes_instances_and_a_manifest(set_dataset):
    items = read_instances(set_dataset)
    assert [item.instance_id for item in items] == ['0', '1', '2', '3', '4']
    manifest = json.loads(manifest_path(set_dataset).read_text())
    assert manifest['command'] == 'gen'
    assert manifest['instances'] == 5
    assert manifest['config']['gen']['kind'] == 'set'


def test_gen_is_deterministic(tmp_path, cli_runner):
    first, second = tmp_path / 'first.jsonl', tmp_path / 'second.jsonl'
    for path in (first, second):
        cli_runner('gen', '--kind', 'tree', '--count', 10, '--max-nodes', 5, '--seed', 9, '--output', path)
    assert first.read_text() == second.read_text()


def test_serialize(tmp_path, cli_runner, set_dataset):
    corpus = tmp_path / 'corpus.jsonl'
    result = cli_runner('serialize', '--dataset', set_dataset, '--output', corpus, '--per-instance', 2)
    records = _json_lines(corpus)
    assert len(records) == 10
    assert [record['instance_index'] for record in records] == [0, 0, 1, 1, 2, 2, 3, 3, 4, 4]
    for record in records:
        assert record['elements'][-1] == {'sym': 'eos', 'val': None}
        assert record['path_log_prob'] == pytest.approx(sum(record['step_log_probs']))
    assert 'serializations=10 distinct_states=' in result.output
    assert any(line.startswith('length=') for line in result.output.splitlines())

    again = tmp_path / 'again.jsonl'
    cli_runner('serialize', '--dataset', set_dataset, '--output', again, '--per-instance', 2)
    assert again.read_text() == corpus.read_text()


def test_canonical_serialization(tmp_path, cli_runner, set_dataset):
    corpus = tmp_path / 'corpus.jsonl'
    cli_runner('serialize', '--dataset', set_dataset, '--output', corpus, '--per-instance', 3, '--mode', 'canonical')
    for record in _json_lines(corpus):
        symbols = [element['sym'] for element in record['elements']][:-1]
        assert symbols == sorted(symbols)
        assert record['path_log_prob'] == 0.0


def test_train_then_recover(tmp_path, cli_runner, set_dataset):
    checkpoint, metrics = tmp_path / 'model.ckpt', tmp_path / 'metrics.csv'
    _train(cli_runner, set_dataset, checkpoint, '--steps', 3, '--lambda', 0.5, '--metrics', metrics)
    saved = load_checkpoint(checkpoint)
    assert saved.step == 3
    assert saved.params.spec.hidden_dim == 4
    assert saved.params.spec.backend.kind == 'set'
    rows = list(csv.DictReader(metrics.read_text().splitlines()))
    assert [row['step'] for row in rows] == ['1', '2', '3']
    assert all(float(row['reg_value']) >= 0.0 for row in rows)

    densities = tmp_path / 'densities.jsonl'
    cli_runner('recover', '--checkpoint', checkpoint, '--test-dataset', set_dataset, '--output', densities, '-m', 4)
    reports = _json_lines(densities)
    assert [report['instance_id'] for report in reports] == ['0', '1', '2', '3', '4']
    for report in reports:
        assert report['m'] == 4
        assert report['mode'] == 'singleton'
        assert 0.0 < report['estimate']
        assert report['exact_status'] == 'ok'
        assert 0.0 < report['exact'] <= 1.0


def test_oracle_recovery_is_exact(tmp_path, cli_runner, set_dataset):
    densities = tmp_path / 'densities.jsonl'
    cli_runner('recover', '--model-source', 'oracle', '--dataset', set_dataset, '--output', densities, '-m', 3)
    items = read_instances(set_dataset)
    for item, report in zip(items, _json_lines(densities)):
        frequency = sum(other.instance == item.instance for other in items) / len(items)
        assert report['estimate'] == pytest.approx(frequency, abs=1e-12)
        assert report['exact'] == pytest.approx(frequency, abs=1e-12)
        assert report['stderr'] == pytest.approx(0.0, abs=1e-12)


def test_single_draw_reports_null_stderr(tmp_path, cli_runner, set_dataset):
    densities = tmp_path / 'densities.jsonl'
    cli_runner('recover', '--model-source', 'oracle', '--dataset', set_dataset, '--output', densities, '-m', 1)
    assert all(report['stderr'] is None for report in _json_lines(densities))


def test_training_is_reproducible(tmp_path, cli_runner, set_dataset):
    first, second = tmp_path / 'first.ckpt', tmp_path / 'second.ckpt'
    _train(cli_runner, set_dataset, first, '--steps', 2)
    _train(cli_runner, set_dataset, second, '--steps', 2)
    assert first.read_bytes() == second.read_bytes()


def test_resume_matches_an_uninterrupted_run(tmp_path, cli_runner, set_dataset):
    whole, half, resumed = tmp_path / 'whole.ckpt', tmp_path / 'half.ckpt', tmp_path / 'resumed.ckpt'
    metrics = tmp_path / 'metrics.csv'
    _train(cli_runner, set_dataset, whole, '--steps', 4, '--lambda', 1.0)
    _train(cli_runner, set_dataset, half, '--steps', 2, '--lambda', 1.0, '--metrics', metrics)
    _train(cli_runner, set_dataset, resumed, '--steps', 4, '--lambda', 1.0, '--metrics', metrics, '--resume', half)
    assert resumed.read_bytes() == whole.read_bytes()
    rows = list(csv.DictReader(metrics.read_text().splitlines()))
    assert [row['step'] for row in rows] == ['1', '2', '3', '4']
    assert json.loads(manifest_path(resumed).read_text())['resumed_from'] == str(half)


def test_classification_pipeline(tmp_path, cli_runner, propositional_dataset):
    checkpoint, predictions = tmp_path / 'classifier.ckpt', tmp_path / 'predictions.csv'
    _train(cli_runner, propositional_dataset, checkpoint, '--steps', 3, '--objective', 'classification')
    assert load_checkpoint(checkpoint).params.spec.target_dim == 2

    result = cli_runner('eval', '--checkpoint', checkpoint, '--test-dataset', propositional_dataset, '--output',
                        predictions, '--repeats', 2)
    rows = list(csv.DictReader(predictions.read_text().splitlines()))
    assert len(rows) == 12
    assert all(row['correct'] in ('0', '1') for row in rows)
    assert all(math.isfinite(float(row['nll'])) for row in rows)
    summary = next(line for line in result.output.splitlines() if line.startswith('instances='))
    assert summary.startswith('instances=12 accuracy=')
    manifest = json.loads(manifest_path(predictions).read_text())
    assert 0.0 <= manifest['accuracy'] <= 1.0


def test_recovery_is_reproducible(tmp_path, cli_runner, set_dataset):
    checkpoint = tmp_path / 'model.ckpt'
    _train(cli_runner, set_dataset, checkpoint, '--steps', 2)
    for source in ('checkpoint', 'oracle'):
        first, second = tmp_path / f'{source}.first.jsonl', tmp_path / f'{source}.second.jsonl'
        for path in (first, second):
            cli_runner('recover', '--model-source', source, '--checkpoint', checkpoint, '--dataset', set_dataset,
                       '--output', path, '-m', 5, '--seed', 4)
        assert first.read_text() == second.read_text()


def test_evaluation_is_reproducible(tmp_path, cli_runner, propositional_dataset):
    checkpoint = tmp_path / 'classifier.ckpt'
    _train(cli_runner, propositional_dataset, checkpoint, '--steps', 2, '--objective', 'classification')
    first, second = tmp_path / 'first.csv', tmp_path / 'second.csv'
    outputs = [cli_runner('eval', '--checkpoint', checkpoint, '--test-dataset', propositional_dataset, '--output', path,
                          '--repeats', 3, '--seed', 6).output for path in (first, second)]
    assert first.read_text() == second.read_text()
    summaries = [[line for line in output.splitlines() if line.startswith('instances=')] for output in outputs]
    assert summaries[0] == summaries[1] != []


def test_generate_from_a_trained_model(tmp_path, cli_runner, set_dataset):
    checkpoint = tmp_path / 'model.ckpt'
    _train(cli_runner, set_dataset, checkpoint, '--steps', 2)
    first, second = tmp_path / 'first.jsonl', tmp_path / 'second.jsonl'
    result = cli_runner('generate', '--checkpoint', checkpoint, '--output', first, '--count', 6, '--seed', 2)
    assert 'ok=6 malformed=0 truncated=0' in result.output
    items = read_instances(first)
    assert [item.instance_id for item in items] == ['0', '1', '2', '3', '4', '5']
    assert all(item.instance.elements <= {'A', 'B', 'C'} for item in items)
    manifest = json.loads(manifest_path(first).read_text())
    assert manifest['command'] == 'generate'
    assert manifest['draws'] == 6
    assert manifest['statuses'] == {'ok': 6}

    cli_runner('generate', '--checkpoint', checkpoint, '--output', second, '--count', 6, '--seed', 2)
    assert second.read_text() == first.read_text()


def test_generate_conditioned_on_features(tmp_path, cli_runner, propositional_dataset):
    checkpoint, generated = tmp_path / 'model.ckpt', tmp_path / 'generated.jsonl'
    _train(cli_runner, propositional_dataset, checkpoint, '--steps', 2)
    cli_runner('generate', '--checkpoint', checkpoint, '--dataset', propositional_dataset, '--output', generated,
               '--count', 1)
    sources = read_instances(propositional_dataset)
    items = read_instances(generated)
    assert len(items) == len(sources)
    for source, item in zip(sources, items):
        assert item.instance.numeric == source.instance.numeric
        assert item.instance.categorical == source.instance.categorical


def test_generate_needs_a_generative_model(tmp_path, cli_runner, propositional_dataset):
    checkpoint = tmp_path / 'classifier.ckpt'
    _train(cli_runner, propositional_dataset, checkpoint, '--steps', 1, '--objective', 'classification')
    result = cli_runner('generate', '--checkpoint', checkpoint, '--output', tmp_path / 'out.jsonl', exit_code=3)
    assert 'error=MissingHead exit=3' in result.output
