import logging
from abc import abstractmethod
from typing import Any, Iterator, List, Tuple

from ..core import Alphabet, EOS_ELEMENT, EnumerationTooLarge, LexiconElement, MalformedSerialization, \
    Serialization, StructureBackend, UnknownSymbol

logger = logging.getLogger(__name__)


class BaseBackend(StructureBackend):
    """
    Shared plumbing for the concrete backends: alphabet bookkeeping, de-serialization by replaying the state machine,
    and bounded enumeration.
    """

    def __init__(self, tag: str, alphabet: Alphabet):
        self._tag = tag
        self._alphabet = alphabet

    @property
    def tag(self) -> str:
        return self._tag

    @property
    def alphabet(self) -> Alphabet:
        return self._alphabet

    def __repr__(self):
        return f"{type(self).__name__}({self.spec!r})"

    def __eq__(self, other):
        return type(other) is type(self) and other.spec == self.spec

    def __hash__(self):
        return hash((type(self), self.tag))

    @property
    @abstractmethod
    def spec(self):
        """BackendSpec from which an identical backend can be rebuilt"""

    @abstractmethod
    def instance_from_state(self, state: Any) -> Any:
        """Instance built by a terminated state"""

    @abstractmethod
    def _orderings(self, instance: Any) -> Iterator[Tuple[LexiconElement, ...]]:
        """Every distinct serialization of the instance, without the closing eos"""

    def deserialize(self, serialization: Serialization) -> Any:
        state = self.initial_state_value()
        for position, element in enumerate(serialization):
            try:
                self._alphabet.check(element)
                state = self.advance(state, element)
            except UnknownSymbol as ex:
                raise MalformedSerialization(str(ex), position=position) from ex
            except MalformedSerialization as ex:
                if ex.position is not None:
                    raise
                raise MalformedSerialization(ex.reason, position=position) from ex
        return self.instance_from_state(state)

    def enumerate_serializations(self, instance: Any, bound: int) -> List[Serialization]:
        instance = self.validate_instance(instance)
        count = self.count_serializations(instance)
        if count > bound:
            raise EnumerationTooLarge(count, bound)
        result = [Serialization(ordering + (EOS_ELEMENT,)) for ordering in self._orderings(instance)]
        result.sort(key=self.serialization_sort_key)
        if len(result) != count:
            logger.error(f"Enumerated {len(result)} serializations of {instance} but counted {count}")
        return result

    def serialization_sort_key(self, serialization: Serialization):
        return tuple(self._alphabet.sort_key(element) for element in serialization)
