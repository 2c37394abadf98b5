import itertools
import math
from dataclasses import dataclass, field
from typing import Any, Dict, FrozenSet, Iterator, List, Mapping, Optional, Sequence, Tuple

from ..core import Alphabet, DeadEnd, DuplicateName, EOS, EOS_ELEMENT, LexiconElement, MalformedSerialization, \
    StateKey, UnknownSymbol
from .base import BaseBackend
from .spec import BackendSpec

PROPOSITIONAL_TAG = "propositional"

LABEL = "label"


def value_token(name: str, value: str) -> str:
    return f"{name}={value}"


@dataclass(frozen=True, eq=False)
class PropositionalInstance:
    """
    A tabular record.  Numeric features carry real values, categorical features carry one of a declared set of
    values.  The label, when present, is one class name.
    """
    numeric: Mapping[str, float] = field(default_factory=dict)
    categorical: Mapping[str, str] = field(default_factory=dict)
    label: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, 'numeric', {name: float(value) for name, value in self.numeric.items()})
        object.__setattr__(self, 'categorical', {name: str(value) for name, value in self.categorical.items()})
        if self.label is not None:
            object.__setattr__(self, 'label', str(self.label))
        names = list(self.numeric) + list(self.categorical)
        if LABEL in names or len(set(names)) != len(names):
            raise DuplicateName(f"Feature names must be unique and may not be '{LABEL}': {names}")
        if not all(math.isfinite(value) for value in self.numeric.values()):
            raise ValueError("Numeric features must be finite")

    @property
    def item_count(self) -> int:
        return len(self.numeric) + len(self.categorical) + (self.label is not None)

    def without_label(self) -> "PropositionalInstance":
        return PropositionalInstance(numeric=self.numeric, categorical=self.categorical)

    def _key(self):
        return tuple(sorted(self.numeric.items())), tuple(sorted(self.categorical.items())), self.label

    def __eq__(self, other):
        return isinstance(other, PropositionalInstance) and other._key() == self._key()

    def __hash__(self):
        return hash(self._key())

    def __str__(self):
        items = [f"{name}={value!r}" for name, value in self.numeric.items()]
        items += [f"{name}={value}" for name, value in self.categorical.items()]
        if self.label is not None:
            items.append(f"{LABEL}={self.label}")
        return "{" + ", ".join(items) + "}"


class PropositionalBackend(BaseBackend):
    """
    Each item of a record is serialized as its name token; a numeric name token carries the value, a categorical
    (or label) name token is immediately followed by a value-free 'name=value' token.  Items come in any order.

    The state is the sorted set of completed items plus the categorical item waiting for its value.
    """

    def __init__(self, numeric: Sequence[str] = (), categorical: Optional[Mapping[str, Sequence[str]]] = None,
                 classes: Sequence[str] = ()):
        categorical = {name: list(values) for name, values in (categorical or {}).items()}
        classes = [str(item) for item in classes]
        names = list(numeric) + list(categorical)
        if len(set(names)) != len(names):
            raise DuplicateName(f"Duplicate feature names {names}")
        if LABEL in names:
            raise DuplicateName(f"'{LABEL}' is reserved")
        self._numeric = tuple(numeric)
        self._categorical = categorical
        self._classes = tuple(classes)
        self._item_kind: Dict[str, str] = {name: "numeric" for name in self._numeric}
        self._item_kind.update({name: "categorical" for name in categorical})
        value_tokens: Dict[str, Tuple[str, str]] = {}
        for name, values in list(categorical.items()) + ([(LABEL, classes)] if classes else []):
            if len(set(values)) != len(values):
                raise DuplicateName(f"Duplicate values for '{name}': {values}")
            for value in values:
                value_tokens[value_token(name, value)] = (name, value)
        if classes:
            self._item_kind[LABEL] = "categorical"
        self._value_tokens = value_tokens
        symbols = list(self._numeric) + list(categorical) + ([LABEL] if classes else [])
        symbols += list(value_tokens)
        if len(set(symbols)) != len(symbols):
            raise DuplicateName(f"Feature names collide with value tokens: {symbols}")
        super().__init__(PROPOSITIONAL_TAG, Alphabet(symbols, value_symbols=self._numeric))

    @property
    def numeric(self) -> Tuple[str, ...]:
        return self._numeric

    @property
    def categorical(self) -> Dict[str, List[str]]:
        return dict(self._categorical)

    @property
    def classes(self) -> Tuple[str, ...]:
        return self._classes

    @property
    def spec(self) -> BackendSpec:
        return BackendSpec(kind=PROPOSITIONAL_TAG, numeric=list(self._numeric), categorical=self.categorical,
                           classes=list(self._classes))

    def is_conditioning(self, symbol: str) -> bool:
        return symbol != LABEL and symbol in self._item_kind

    def initial_state_value(self) -> Any:
        return (), None, False

    def advance(self, state: Any, element: LexiconElement) -> Any:
        items, pending, ended = state
        symbol = element.symbol
        if ended:
            raise MalformedSerialization("element after eos")
        if pending is not None:
            name, value = self._value_tokens.get(symbol, (None, None))
            if name != pending:
                raise MalformedSerialization(f"expected a value for '{pending}', got '{symbol}'")
            return tuple(sorted(items + ((name, value),))), None, False
        if symbol == EOS:
            return items, None, True
        kind = self._item_kind.get(symbol)
        if kind is None:
            raise MalformedSerialization(f"'{symbol}' is not a feature name")
        if any(name == symbol for name, _ in items):
            raise MalformedSerialization(f"feature '{symbol}' repeated")
        if kind == "numeric":
            return tuple(sorted(items + ((symbol, element.value),))), None, False
        return items, symbol, False

    def instance_from_state(self, state: Any) -> PropositionalInstance:
        items = dict(state[0])
        return PropositionalInstance(
            numeric={name: items[name] for name in self._numeric if name in items},
            categorical={name: items[name] for name in self._categorical if name in items},
            label=items.get(LABEL),
        )

    def validate_instance(self, instance: Any) -> PropositionalInstance:
        if not isinstance(instance, PropositionalInstance):
            raise TypeError(f"Expected PropositionalInstance, got {type(instance).__name__}")
        for name in instance.numeric:
            if self._item_kind.get(name) != "numeric":
                raise UnknownSymbol(f"Unknown numeric feature '{name}'")
        for name, value in instance.categorical.items():
            if value not in self._categorical.get(name, ()):
                raise UnknownSymbol(f"Unknown categorical feature or value '{name}={value}'")
        if instance.label is not None and instance.label not in self._classes:
            raise UnknownSymbol(f"Unknown class '{instance.label}'")
        return instance

    def count_serializations(self, instance: Any) -> int:
        return math.factorial(self.validate_instance(instance).item_count)

    def _item_elements(self, instance: PropositionalInstance) -> List[Tuple[LexiconElement, ...]]:
        items = [(LexiconElement(name, value),) for name, value in instance.numeric.items()]
        items += [
            (LexiconElement(name), LexiconElement(value_token(name, value)))
            for name, value in instance.categorical.items()
        ]
        if instance.label is not None:
            items.append((LexiconElement(LABEL), LexiconElement(value_token(LABEL, instance.label))))
        return items

    def _orderings(self, instance: PropositionalInstance) -> Iterator[Tuple[LexiconElement, ...]]:
        for order in itertools.permutations(self._item_elements(instance)):
            yield tuple(itertools.chain.from_iterable(order))

    def _instance_items(self, instance: PropositionalInstance) -> Dict[str, Any]:
        items: Dict[str, Any] = dict(instance.numeric)
        items.update(instance.categorical)
        if instance.label is not None:
            items[LABEL] = instance.label
        return items

    def candidate_next_elements(self, instance: Any, state: StateKey, prefix: Sequence[LexiconElement]
                                ) -> FrozenSet[LexiconElement]:
        items, pending, ended = self.decode_state(state)
        target = self._instance_items(instance)
        if ended or any(target.get(name, None) != value or name not in target for name, value in items):
            raise DeadEnd(f"Prefix {[str(item) for item in prefix]} does not extend to a serialization of {instance}")
        if pending is not None:
            if pending not in target:
                raise DeadEnd(f"'{pending}' is not part of {instance}")
            return frozenset((LexiconElement(value_token(pending, target[pending])),))
        done = {name for name, _ in items}
        result = set()
        for name, value in target.items():
            if name in done:
                continue
            if self._item_kind[name] == "numeric":
                result.add(LexiconElement(name, value))
            else:
                result.add(LexiconElement(name))
        if not result:
            result.add(EOS_ELEMENT)
        return frozenset(result)

    def instance_values(self, instance: Any) -> List[float]:
        return list(instance.numeric.values())

    def conditioning_names(self, instance: Any) -> List[str]:
        return list(instance.numeric) + list(instance.categorical)

    def without_conditioning(self, instance: Any, keep: Mapping[str, bool]) -> PropositionalInstance:
        return PropositionalInstance(
            numeric={name: value for name, value in instance.numeric.items() if keep.get(name, True)},
            categorical={name: value for name, value in instance.categorical.items() if keep.get(name, True)},
            label=instance.label,
        )

    def conditioning_elements(self, instance: Any) -> List[Tuple[LexiconElement, ...]]:
        groups = [group for group in self._item_elements(instance) if self.is_conditioning(group[0].symbol)]
        return sorted(groups, key=lambda group: self.alphabet.sort_key(group[0]))
