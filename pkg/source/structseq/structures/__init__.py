import logging
from typing import Any, Dict, Iterable, Literal

from ..core import BackendMismatch, EmptyDataset, SamplingMeasure, StructureBackend
from .base import BaseBackend
from .propositional import LABEL, PROPOSITIONAL_TAG, PropositionalBackend, PropositionalInstance
from .series import ADVANCE_TIME, SERIES_TAG, SeriesBackend, SeriesInstance, add_feature, add_ts, series_alphabet
from .sets import SET_TAG, SetBackend, SetInstance
from .spec import BackendSpec
from .trees import CLOSE, OPEN, ORDERED_TREE_TAG, TreeBackend, TreeInstance, TreeNode, UNORDERED_TREE_TAG, \
    describe_state

logger = logging.getLogger(__name__)

MeasureMode = Literal['unconditional', 'conditional']

DEFAULT_FRONT_FRACTION = 0.5


def build_backend(spec: BackendSpec) -> BaseBackend:
    if spec.kind == SET_TAG:
        return SetBackend(spec.symbols)
    if spec.is_tree:
        return TreeBackend(spec.symbols, ordered=spec.kind == ORDERED_TREE_TAG)
    if spec.kind == SERIES_TAG:
        return SeriesBackend(spec.variables, spec.features)
    return PropositionalBackend(spec.numeric, spec.categorical, spec.classes)


def infer_backend_spec(instances: Iterable[Any]) -> BackendSpec:
    """
    Smallest backend able to serialize every instance.  Symbol sets are sorted so the result does not depend on the
    order of the instances.
    """
    instances = list(instances)
    if not instances:
        raise EmptyDataset("Cannot infer a backend from an empty dataset")
    kinds = {_kind_of(instance) for instance in instances}
    if len(kinds) != 1:
        raise BackendMismatch(f"Dataset mixes structure kinds {sorted(kinds)}")
    kind = kinds.pop()

    if kind == SET_TAG:
        return BackendSpec(kind=kind, symbols=sorted(set().union(*(instance.elements for instance in instances))))

    if kind in (ORDERED_TREE_TAG, UNORDERED_TREE_TAG):
        labels = set()
        for instance in instances:
            if instance.root is not None:
                labels.update(instance.root.labels())
        return BackendSpec(kind=kind, symbols=sorted(labels))

    if kind == SERIES_TAG:
        variables = {instance.variables for instance in instances}
        if len(variables) != 1:
            raise BackendMismatch(f"Series disagree on their variables: {sorted(variables)}")
        features = sorted(set().union(*(instance.features for instance in instances)))
        return BackendSpec(kind=kind, variables=list(variables.pop()), features=features)

    numeric = set()
    categorical: Dict[str, set] = {}
    classes = set()
    for instance in instances:
        numeric.update(instance.numeric)
        for name, value in instance.categorical.items():
            categorical.setdefault(name, set()).add(value)
        if instance.label is not None:
            classes.add(instance.label)
    return BackendSpec(kind=kind, numeric=sorted(numeric),
                       categorical={name: sorted(values) for name, values in sorted(categorical.items())},
                       classes=sorted(classes))


def _kind_of(instance: Any) -> str:
    if isinstance(instance, SetInstance):
        return SET_TAG
    if isinstance(instance, TreeInstance):
        return ORDERED_TREE_TAG if instance.ordered else UNORDERED_TREE_TAG
    if isinstance(instance, SeriesInstance):
        return SERIES_TAG
    if isinstance(instance, PropositionalInstance):
        return PROPOSITIONAL_TAG
    raise TypeError(f"Not a structure instance: {type(instance).__name__}")


def default_measure(backend: StructureBackend, mode: MeasureMode = 'unconditional',
                    feature_drop_probability: float = 0.0,
                    front_fraction: float = DEFAULT_FRONT_FRACTION) -> SamplingMeasure:
    """
    Uniform for unconditional modelling.  In conditional mode series and propositional backends front-load their
    input features with probability front_fraction.
    """
    if mode == 'conditional' and backend.tag in (SERIES_TAG, PROPOSITIONAL_TAG):
        return SamplingMeasure.biased_front(front_fraction, feature_drop_probability)
    if mode not in ('conditional', 'unconditional'):
        raise ValueError(f"Unknown measure mode '{mode}'")
    return SamplingMeasure(feature_drop_probability=feature_drop_probability)


__all__ = [
    'ADVANCE_TIME', 'BackendSpec', 'BaseBackend', 'CLOSE', 'LABEL', 'OPEN', 'ORDERED_TREE_TAG', 'PROPOSITIONAL_TAG',
    'PropositionalBackend', 'PropositionalInstance', 'SERIES_TAG', 'SET_TAG', 'SeriesBackend', 'SeriesInstance',
    'SetBackend', 'SetInstance', 'TreeBackend', 'TreeInstance', 'TreeNode', 'UNORDERED_TREE_TAG', 'add_feature',
    'add_ts', 'build_backend', 'default_measure', 'describe_state', 'infer_backend_spec', 'series_alphabet',
]
