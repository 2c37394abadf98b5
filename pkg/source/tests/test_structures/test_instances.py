import json

import pytest

from structseq.core import BackendMismatch, EmptyDataset, MeasureKind, UnsupportedVersion
from structseq.structures import BackendSpec, PropositionalInstance, SeriesInstance, SetInstance, TreeInstance, \
    build_backend, default_measure, infer_backend_spec
from structseq.structures.instances import DatasetItem, MalformedRecord, format_record, parse_record, \
    read_instances, write_instances

from ..helpers import tree

INSTANCES = [
    DatasetItem(SetInstance.of('CA'), instance_id='s'),
    DatasetItem(TreeInstance(tree('A', tree('B'), tree('C', tree('D')))), target=1),
    DatasetItem(TreeInstance(None, ordered=True)),
    DatasetItem(SeriesInstance(variables=('y1',), values=((0.1, 0.2),), features={'k_offset': 0.2}),
                target=[0.5, -1.0]),
    DatasetItem(PropositionalInstance(numeric={'x1': 0.5}, categorical={'color': 'red'}, label='1')),
]


@pytest.mark.parametrize('item', INSTANCES)
def test_write_then_read(tmp_path, item):
    path = tmp_path / 'instances.jsonl'
    assert write_instances(path, [item, item]) == 2
    assert read_instances(path) == [item, item]


def test_format_omits_missing_fields():
    line = json.loads(format_record(DatasetItem(SetInstance.of('BA'))))
    assert line == {'version': 1, 'kind': 'set', 'elements': ['A', 'B']}


def test_nested_tree_record():
    item = parse_record('{"version": 1, "kind": "tree", "ordered": true, '
                        '"tree": {"label": "A", "children": [{"label": "B"}, {"label": "C"}]}}')
    assert item.instance == TreeInstance(tree('A', tree('B'), tree('C')), ordered=True)


@pytest.mark.parametrize('line', [
    'not json',
    '[1, 2]',
    '{"version": 1, "kind": "graph"}',
    '{"version": 1, "kind": "set", "elements": ["A"], "colour": "red"}',
    '{"version": 1, "kind": "set", "elements": ["A", "A"]}',
    '{"version": 1, "kind": "series", "variables": ["y1"], "values": [[1.0], [2.0]]}',
])
def test_malformed_records(line):
    with pytest.raises(MalformedRecord) as exc_info:
        parse_record(line, line_number=7)
    assert exc_info.value.line_number == 7


@pytest.mark.parametrize('line', ['{"kind": "set", "elements": []}', '{"version": 2, "kind": "set", "elements": []}'])
def test_unsupported_version(line):
    with pytest.raises(UnsupportedVersion):
        parse_record(line)


def test_malformed_line_aborts_the_read(tmp_path):
    path = tmp_path / 'instances.jsonl'
    path.write_text('{"version": 1, "kind": "set", "elements": ["A"]}\n\n{"version": 1, "kind": "nope"}\n')
    with pytest.raises(MalformedRecord) as exc_info:
        read_instances(path)
    assert exc_info.value.line_number == 3


def test_empty_dataset(tmp_path):
    path = tmp_path / 'empty.jsonl'
    path.write_text('\n')
    with pytest.raises(EmptyDataset):
        read_instances(path)
    assert not read_instances(path, allow_empty=True)


def test_infer_set_backend():
    spec = infer_backend_spec([SetInstance.of('CA'), SetInstance.of('B')])
    assert spec == BackendSpec(kind='set', symbols=['A', 'B', 'C'])
    assert build_backend(spec).spec == spec


def test_infer_propositional_backend():
    spec = infer_backend_spec([
        PropositionalInstance(numeric={'x1': 0.5}, categorical={'color': 'red'}, label='2'),
        PropositionalInstance(numeric={'x2': 0.5}, categorical={'color': 'blue'}, label='1'),
    ])
    assert spec.numeric == ['x1', 'x2']
    assert spec.categorical == {'color': ['blue', 'red']}
    assert spec.classes == ['1', '2']


def test_infer_tree_backend_keeps_ordering():
    spec = infer_backend_spec([TreeInstance(tree('B', tree('A')), ordered=True)])
    assert spec.kind == 'ordered-tree'
    assert build_backend(spec).ordered


def test_infer_rejects_mixed_kinds():
    with pytest.raises(BackendMismatch):
        infer_backend_spec([SetInstance.of('A'), TreeInstance(tree('A'))])
    with pytest.raises(BackendMismatch):
        infer_backend_spec([
            SeriesInstance(variables=('y1',), values=((0.0,),)),
            SeriesInstance(variables=('y2',), values=((0.0,),)),
        ])
    with pytest.raises(EmptyDataset):
        infer_backend_spec([])


def test_default_measure(series_backend, set_backend):
    assert default_measure(series_backend).kind is MeasureKind.UNIFORM
    conditional = default_measure(series_backend, 'conditional', feature_drop_probability=0.5)
    assert conditional.kind is MeasureKind.BIASED_FRONT
    assert conditional.front_fraction == 0.5
    assert conditional.feature_drop_probability == 0.5
    assert default_measure(set_backend, 'conditional').kind is MeasureKind.UNIFORM
    with pytest.raises(ValueError):
        default_measure(set_backend, 'sideways')


@pytest.mark.parametrize('text, target', [
    ('0.7', 0.7),
    ('2', 2),
    ('-1.5', -1.5),
    ('[0.25, 1.0]', [0.25, 1.0]),
])
def test_target_keeps_its_type(text, target):
    item = parse_record('{"version": 1, "kind": "set", "elements": ["A"], "target": ' + text + '}')
    assert item.target == target
    assert type(item.target) is type(target)
