import itertools
import math
from dataclasses import dataclass
from typing import Any, FrozenSet, Iterable, Iterator, Sequence, Tuple

from ..core import Alphabet, DeadEnd, DuplicateName, EOS, EOS_ELEMENT, LexiconElement, MalformedSerialization, \
    StateKey, UnknownSymbol
from .base import BaseBackend
from .spec import BackendSpec

SET_TAG = "set"


@dataclass(frozen=True)
class SetInstance:
    elements: FrozenSet[str]

    @classmethod
    def of(cls, elements: Iterable[str]) -> "SetInstance":
        elements = list(elements)
        if len(set(elements)) != len(elements):
            raise DuplicateName(f"Duplicate elements in set {elements}")
        return cls(frozenset(elements))

    def __len__(self):
        return len(self.elements)

    def __str__(self):
        return "{" + ",".join(sorted(self.elements)) + "}"


class SetBackend(BaseBackend):
    """
    Sets of distinct symbols.  A serialization lists every member once in any order.  The state is the sorted tuple
    of members emitted so far.
    """

    def __init__(self, symbols: Sequence[str]):
        super().__init__(SET_TAG, Alphabet(symbols))
        self._symbols = tuple(symbol for symbol in self.alphabet.symbols if symbol != EOS)

    @property
    def spec(self) -> BackendSpec:
        return BackendSpec(kind=SET_TAG, symbols=list(self._symbols))

    def initial_state_value(self) -> Any:
        return (), False

    def advance(self, state: Any, element: LexiconElement) -> Any:
        members, ended = state
        if ended:
            raise MalformedSerialization("element after eos")
        if element.symbol == EOS:
            return members, True
        if element.symbol in members:
            raise MalformedSerialization(f"duplicate element '{element.symbol}'")
        return tuple(sorted(members + (element.symbol,))), False

    def instance_from_state(self, state: Any) -> SetInstance:
        return SetInstance(frozenset(state[0]))

    def validate_instance(self, instance: Any) -> SetInstance:
        if not isinstance(instance, SetInstance):
            raise TypeError(f"Expected SetInstance, got {type(instance).__name__}")
        for symbol in instance.elements:
            if symbol not in self.alphabet or symbol == EOS:
                raise UnknownSymbol(f"Unknown set element '{symbol}'")
        return instance

    def count_serializations(self, instance: Any) -> int:
        return math.factorial(len(self.validate_instance(instance)))

    def _orderings(self, instance: SetInstance) -> Iterator[Tuple[LexiconElement, ...]]:
        members = sorted(instance.elements, key=self.alphabet.index)
        for ordering in itertools.permutations(members):
            yield tuple(LexiconElement(symbol) for symbol in ordering)

    def candidate_next_elements(self, instance: Any, state: StateKey, prefix: Sequence[LexiconElement]
                                ) -> FrozenSet[LexiconElement]:
        members, ended = self.decode_state(state)
        if ended or not set(members) <= instance.elements:
            raise DeadEnd(f"Prefix {[str(item) for item in prefix]} does not extend to a serialization of {instance}")
        remaining = instance.elements.difference(members)
        if not remaining:
            return frozenset((EOS_ELEMENT,))
        return frozenset(LexiconElement(symbol) for symbol in remaining)
