"""
JSON-lines instance files.  One record per line, each carrying its kind and the format version:

    {"version": 1, "kind": "set", "elements": ["A", "C"]}
    {"version": 1, "kind": "tree", "ordered": false, "tree": {"label": "A", "children": [{"label": "B"}]}}
    {"version": 1, "kind": "series", "features": {"k_offset": 0.2}, "variables": ["y1"], "values": [[0.1, 0.2]]}
    {"version": 1, "kind": "propositional", "numeric": {"x1": 0.5}, "categorical": {"color": "red"}, "label": "1"}

Any record may carry "instance_id" and "target" (class index, real value or real value list).
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Literal, NamedTuple, Optional, TextIO, Type, Union

import pydantic

from ..core import DataError, EmptyDataset, FORMAT_VERSION, UnsupportedVersion
from ..misc import atomic_write
from .propositional import PropositionalInstance
from .series import SeriesInstance
from .sets import SetInstance
from .trees import TreeInstance, TreeNode

logger = logging.getLogger(__name__)

# A bare int is a class index; a real number is a one dimensional regression target.
Target = Union[pydantic.StrictInt, float, List[float]]


class MalformedRecord(DataError):

    def __init__(self, line_number: int, reason: str):
        super().__init__(f"line {line_number}: {reason}")
        self.line_number = line_number


class DatasetItem(NamedTuple):
    instance: Any
    instance_id: Optional[str] = None
    target: Optional[Target] = None


class _Record(pydantic.BaseModel):
    version: int = FORMAT_VERSION
    instance_id: Optional[str] = None
    target: Optional[Target] = None

    class Config:
        extra = pydantic.Extra.forbid

    def to_instance(self) -> Any:
        raise NotImplementedError()


class SetRecord(_Record):
    kind: Literal['set'] = 'set'
    elements: List[str]

    def to_instance(self) -> SetInstance:
        return SetInstance.of(self.elements)

    @classmethod
    def from_instance(cls, instance: SetInstance, **kwargs) -> "SetRecord":
        return cls(elements=sorted(instance.elements), **kwargs)


class TreeNodeRecord(pydantic.BaseModel):
    label: str
    children: List["TreeNodeRecord"] = []

    class Config:
        extra = pydantic.Extra.forbid

    def to_node(self) -> TreeNode:
        return TreeNode(self.label, tuple(child.to_node() for child in self.children))

    @classmethod
    def from_node(cls, node: TreeNode) -> "TreeNodeRecord":
        return cls(label=node.label, children=[cls.from_node(child) for child in node.children])


TreeNodeRecord.update_forward_refs()


class TreeRecord(_Record):
    kind: Literal['tree'] = 'tree'
    ordered: bool = False
    tree: Optional[TreeNodeRecord]

    def to_instance(self) -> TreeInstance:
        return TreeInstance(None if self.tree is None else self.tree.to_node(), ordered=self.ordered)

    @classmethod
    def from_instance(cls, instance: TreeInstance, **kwargs) -> "TreeRecord":
        tree = None if instance.root is None else TreeNodeRecord.from_node(instance.root)
        return cls(ordered=instance.ordered, tree=tree, **kwargs)


class SeriesRecord(_Record):
    kind: Literal['series'] = 'series'
    features: Dict[str, float] = {}
    variables: List[str]
    values: List[List[float]]

    def to_instance(self) -> SeriesInstance:
        return SeriesInstance(variables=tuple(self.variables), values=tuple(map(tuple, self.values)),
                              features=self.features)

    @classmethod
    def from_instance(cls, instance: SeriesInstance, **kwargs) -> "SeriesRecord":
        return cls(features=dict(instance.features), variables=list(instance.variables),
                   values=[list(row) for row in instance.values], **kwargs)


class PropositionalRecord(_Record):
    kind: Literal['propositional'] = 'propositional'
    numeric: Dict[str, float] = {}
    categorical: Dict[str, str] = {}
    label: Optional[str] = None

    def to_instance(self) -> PropositionalInstance:
        return PropositionalInstance(numeric=self.numeric, categorical=self.categorical, label=self.label)

    @classmethod
    def from_instance(cls, instance: PropositionalInstance, **kwargs) -> "PropositionalRecord":
        return cls(numeric=dict(instance.numeric), categorical=dict(instance.categorical), label=instance.label,
                   **kwargs)


RECORD_TYPES: Dict[str, Type[_Record]] = {
    'set': SetRecord,
    'tree': TreeRecord,
    'series': SeriesRecord,
    'propositional': PropositionalRecord,
}

_RECORDS_BY_INSTANCE = {
    SetInstance: SetRecord,
    TreeInstance: TreeRecord,
    SeriesInstance: SeriesRecord,
    PropositionalInstance: PropositionalRecord,
}


def instance_kind(instance: Any) -> str:
    return _RECORDS_BY_INSTANCE[type(instance)].__fields__['kind'].default


def parse_record(line: str, line_number: int = 1) -> DatasetItem:
    try:
        raw = json.loads(line)
    except json.JSONDecodeError as ex:
        raise MalformedRecord(line_number, f"invalid JSON: {ex.msg}") from ex
    if not isinstance(raw, dict):
        raise MalformedRecord(line_number, "a record must be a JSON object")
    version = raw.get('version')
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"line {line_number}: record version {version!r}, expected {FORMAT_VERSION}")
    record_type = RECORD_TYPES.get(raw.get('kind'))
    if record_type is None:
        raise MalformedRecord(line_number, f"unknown kind {raw.get('kind')!r}")
    try:
        record = record_type.parse_obj(raw)
        instance = record.to_instance()
    except (pydantic.ValidationError, ValueError) as ex:
        raise MalformedRecord(line_number, str(ex)) from ex
    return DatasetItem(instance, record.instance_id, record.target)


def format_record(item: DatasetItem) -> str:
    record_type = _RECORDS_BY_INSTANCE[type(item.instance)]
    record = record_type.from_instance(item.instance, instance_id=item.instance_id, target=item.target)
    return record.json(exclude_none=True)


def iter_records(file: TextIO) -> Iterator[DatasetItem]:
    for line_number, line in enumerate(file, start=1):
        if line.strip():
            yield parse_record(line, line_number)


def read_instances(path: Union[str, Path], allow_empty: bool = False) -> List[DatasetItem]:
    """
    Read a whole instance file.  Aborts on the first malformed line.
    """
    with Path(path).open('r', encoding='utf-8') as file:
        items = list(iter_records(file))
    logger.info(f"Read {len(items)} instance(s) from {path}")
    if not items and not allow_empty:
        raise EmptyDataset(f"empty dataset {path}")
    return items


def write_instances(path: Union[str, Path], items: Iterable[DatasetItem]) -> int:
    count = 0
    with atomic_write(path) as file:
        for item in items:
            file.write(format_record(item))
            file.write('\n')
            count += 1
    logger.info(f"Wrote {count} instance(s) to {path}")
    return count
