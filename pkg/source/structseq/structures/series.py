import itertools
import math
import re
from dataclasses import dataclass, field
from typing import Any, Dict, FrozenSet, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..core import Alphabet, DeadEnd, DuplicateName, EOS, EOS_ELEMENT, LexiconElement, MalformedSerialization, \
    StateKey, UnknownSymbol
from .base import BaseBackend
from .spec import BackendSpec

SERIES_TAG = "series"

ADVANCE_TIME = "AdvanceTime"
_ADD_TS = re.compile(r"AddTS\((.*)\)")
_ADD_FEATURE = re.compile(r"AddFeature\((.*)\)")


def add_ts(variable: str) -> str:
    return f"AddTS({variable})"


def add_feature(feature: str) -> str:
    return f"AddFeature({feature})"


def series_alphabet(variables: Sequence[str], features: Sequence[str] = ()) -> Alphabet:
    """
    {AdvanceTime} + {AddTS(v)} + {AddFeature(f)} + {eos}.  AddTS and AddFeature carry values.
    """
    for kind, names in (("variable", variables), ("feature", features)):
        duplicates = sorted({name for name in names if list(names).count(name) > 1})
        if duplicates:
            raise DuplicateName(f"Duplicate {kind} name(s) {duplicates}")
    value_symbols = [add_ts(name) for name in variables] + [add_feature(name) for name in features]
    return Alphabet([ADVANCE_TIME] + value_symbols, value_symbols=value_symbols)


@dataclass(frozen=True, eq=False)
class SeriesInstance:
    """
    Multivariate series: k named variables (rows) observed over l time steps (columns), with optional real valued
    input features.
    """
    variables: Tuple[str, ...]
    values: Tuple[Tuple[float, ...], ...]
    features: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, 'variables', tuple(self.variables))
        object.__setattr__(self, 'values', tuple(tuple(float(value) for value in row) for row in self.values))
        object.__setattr__(self, 'features', {name: float(value) for name, value in self.features.items()})
        if len(set(self.variables)) != len(self.variables):
            raise DuplicateName(f"Duplicate variable names {list(self.variables)}")
        if not self.variables:
            raise ValueError("A series needs at least one variable")
        if len(self.values) != len(self.variables):
            raise ValueError(f"{len(self.values)} value rows for {len(self.variables)} variables")
        lengths = {len(row) for row in self.values}
        if len(lengths) != 1 or 0 in lengths:
            raise ValueError(f"Every variable needs the same number (>= 1) of time steps, got {sorted(lengths)}")
        if not all(math.isfinite(value) for row in self.values for value in row) or \
                not all(math.isfinite(value) for value in self.features.values()):
            raise ValueError("Series values must be finite")

    @property
    def length(self) -> int:
        return len(self.values[0])

    def column(self, index: int) -> Dict[str, float]:
        return {variable: row[index] for variable, row in zip(self.variables, self.values)}

    def as_array(self) -> np.ndarray:
        return np.array(self.values, dtype=np.float64)

    def _key(self):
        return self.variables, self.values, tuple(sorted(self.features.items()))

    def __eq__(self, other):
        return isinstance(other, SeriesInstance) and other._key() == self._key()

    def __hash__(self):
        return hash(self._key())

    def __str__(self):
        return f"Series({len(self.variables)}x{self.length}, {len(self.features)} features)"


class SeriesBackend(BaseBackend):
    """
    Series are built cell by cell.  AddTS(v) fills variable v of the current column; AdvanceTime seals a complete
    column and starts the next; AddFeature(f) may appear anywhere before eos.

    The current column and the features are held as sorted (name, value) pairs so different interleavings of the
    same column are state-equal.  Sealed columns are kept in order.
    """

    def __init__(self, variables: Sequence[str], features: Sequence[str] = ()):
        super().__init__(SERIES_TAG, series_alphabet(variables, features))
        self._variables = tuple(variables)
        self._features = tuple(features)
        self._variable_set = frozenset(variables)
        self._feature_set = frozenset(features)

    @property
    def variables(self) -> Tuple[str, ...]:
        return self._variables

    @property
    def features(self) -> Tuple[str, ...]:
        return self._features

    @property
    def spec(self) -> BackendSpec:
        return BackendSpec(kind=SERIES_TAG, variables=list(self._variables), features=list(self._features))

    def _parse(self, symbol: str) -> Tuple[str, Optional[str]]:
        if symbol in (ADVANCE_TIME, EOS):
            return symbol, None
        match = _ADD_TS.fullmatch(symbol)
        if match and match.group(1) in self._variable_set:
            return "ts", match.group(1)
        match = _ADD_FEATURE.fullmatch(symbol)
        if match and match.group(1) in self._feature_set:
            return "feature", match.group(1)
        raise UnknownSymbol(f"Unknown series symbol '{symbol}'")

    def is_conditioning(self, symbol: str) -> bool:
        return _ADD_FEATURE.fullmatch(symbol) is not None

    def initial_state_value(self) -> Any:
        return (), (), (), False

    def advance(self, state: Any, element: LexiconElement) -> Any:
        sealed, current, features, ended = state
        if ended:
            raise MalformedSerialization("element after eos")
        kind, name = self._parse(element.symbol)
        if kind == EOS:
            if len(current) != len(self._variables):
                raise MalformedSerialization("eos before the last column was complete")
            return sealed, current, features, True
        if kind == ADVANCE_TIME:
            if len(current) != len(self._variables):
                raise MalformedSerialization("AdvanceTime before the column was complete")
            return sealed + (current,), (), features, False
        if kind == "ts":
            if any(variable == name for variable, _ in current):
                raise MalformedSerialization(f"variable '{name}' repeated within a time step")
            return sealed, tuple(sorted(current + ((name, element.value),))), features, False
        if any(feature == name for feature, _ in features):
            raise MalformedSerialization(f"feature '{name}' repeated")
        return sealed, current, tuple(sorted(features + ((name, element.value),))), False

    def instance_from_state(self, state: Any) -> SeriesInstance:
        sealed, current, features, _ = state
        columns = [dict(column) for column in sealed + (current,)]
        feature_values = dict(features)
        return SeriesInstance(
            variables=self._variables,
            values=tuple(tuple(column[variable] for column in columns) for variable in self._variables),
            features={name: feature_values[name] for name in self._features if name in feature_values},
        )

    def validate_instance(self, instance: Any) -> SeriesInstance:
        if not isinstance(instance, SeriesInstance):
            raise TypeError(f"Expected SeriesInstance, got {type(instance).__name__}")
        if instance.variables != self._variables:
            raise UnknownSymbol(f"Series variables {list(instance.variables)} do not match {list(self._variables)}")
        unknown = set(instance.features) - self._feature_set
        if unknown:
            raise UnknownSymbol(f"Unknown series feature(s) {sorted(unknown)}")
        return instance

    def count_serializations(self, instance: Any) -> int:
        instance = self.validate_instance(instance)
        k, l, d = len(instance.variables), instance.length, len(instance.features)
        output_tokens = l * k + l - 1
        return math.factorial(k) ** l * math.factorial(d) * math.comb(output_tokens + d, d)

    def _orderings(self, instance: SeriesInstance) -> Iterator[Tuple[LexiconElement, ...]]:
        columns = [
            [LexiconElement(add_ts(variable), instance.column(index)[variable]) for variable in instance.variables]
            for index in range(instance.length)
        ]
        feature_elements = [LexiconElement(add_feature(name), value) for name, value in instance.features.items()]
        for column_orders in itertools.product(*(itertools.permutations(column) for column in columns)):
            outputs: List[LexiconElement] = []
            for index, column in enumerate(column_orders):
                if index:
                    outputs.append(LexiconElement(ADVANCE_TIME))
                outputs.extend(column)
            total = len(outputs) + len(feature_elements)
            for positions in itertools.combinations(range(total), len(feature_elements)):
                for feature_order in itertools.permutations(feature_elements):
                    merged = []
                    output_iter = iter(outputs)
                    feature_iter = iter(feature_order)
                    position_set = set(positions)
                    for position in range(total):
                        merged.append(next(feature_iter) if position in position_set else next(output_iter))
                    yield tuple(merged)

    def candidate_next_elements(self, instance: Any, state: StateKey, prefix: Sequence[LexiconElement]
                                ) -> FrozenSet[LexiconElement]:
        sealed, current, features, ended = self.decode_state(state)
        step = len(sealed)
        if ended or step >= instance.length:
            raise DeadEnd(f"Prefix is past the end of {instance}")
        for index, column in enumerate(sealed):
            if dict(column) != instance.column(index):
                raise DeadEnd(f"Sealed column {index} differs from {instance}")
        target_column = instance.column(step)
        if any(target_column[variable] != value for variable, value in current):
            raise DeadEnd(f"Current column differs from {instance}")
        if any(instance.features.get(name) != value for name, value in features):
            raise DeadEnd(f"Features differ from {instance}")

        emitted_features = {name for name, _ in features}
        result = {
            LexiconElement(add_feature(name), value)
            for name, value in instance.features.items() if name not in emitted_features
        }
        filled = {variable for variable, _ in current}
        if len(filled) < len(self._variables):
            result.update(
                LexiconElement(add_ts(variable), target_column[variable])
                for variable in self._variables if variable not in filled
            )
        elif step < instance.length - 1:
            result.add(LexiconElement(ADVANCE_TIME))
        elif not result:
            result.add(EOS_ELEMENT)
        return frozenset(result)

    def instance_values(self, instance: Any) -> List[float]:
        return list(instance.features.values()) + [value for row in instance.values for value in row]

    def conditioning_names(self, instance: Any) -> List[str]:
        return list(instance.features)

    def without_conditioning(self, instance: Any, keep: Mapping[str, bool]) -> SeriesInstance:
        return SeriesInstance(
            variables=instance.variables,
            values=instance.values,
            features={name: value for name, value in instance.features.items() if keep.get(name, True)},
        )

    def conditioning_elements(self, instance: Any) -> List[Tuple[LexiconElement, ...]]:
        elements = [LexiconElement(add_feature(name), value) for name, value in instance.features.items()]
        return [(element,) for element in self.alphabet.canonical_order(elements)]
