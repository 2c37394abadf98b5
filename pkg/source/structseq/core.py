import enum
import math
import struct
from abc import abstractmethod
from dataclasses import dataclass
from typing import Any, Dict, FrozenSet, Iterable, Iterator, List, Mapping, NamedTuple, Optional, Protocol, \
    Sequence, Tuple, Union

# File formats written by this package carry this version.  Readers reject anything else.
FORMAT_VERSION = 1

ENCODING = "utf-8"

EOS = "eos"


class LexiconElement(NamedTuple):
    """
    One token of a serialization.  Value-free symbols carry None and embed as zero.
    """
    symbol: str
    value: Optional[float] = None

    def embedded_value(self) -> float:
        return 0.0 if self.value is None else self.value

    def __str__(self):
        if self.value is None:
            return self.symbol
        return f"{self.symbol}:{self.value!r}"


EOS_ELEMENT = LexiconElement(EOS)

Prefix = Tuple[LexiconElement, ...]


class Alphabet:
    """
    Finite ordered symbol set of a structure backend.  The declaration order is the canonical symbol order used
    whenever candidates have to be iterated deterministically.
    """

    def __init__(self, symbols: Iterable[str], value_symbols: Iterable[str] = ()):
        symbols = list(symbols)
        if EOS in symbols:
            symbols.remove(EOS)
        symbols.append(EOS)
        if len(set(symbols)) != len(symbols):
            raise DuplicateName(f"Duplicate symbol in alphabet {symbols}")
        self._symbols: Tuple[str, ...] = tuple(symbols)
        self._index: Dict[str, int] = {symbol: position for position, symbol in enumerate(self._symbols)}
        self._value_symbols: FrozenSet[str] = frozenset(value_symbols)
        unknown = self._value_symbols - self._index.keys()
        if unknown:
            raise UnknownSymbol(f"Value carrying symbols not in alphabet: {sorted(unknown)}")
        if EOS in self._value_symbols:
            raise ValueError("eos is reserved and value-free")

    @property
    def symbols(self) -> Tuple[str, ...]:
        return self._symbols

    @property
    def value_symbols(self) -> FrozenSet[str]:
        return self._value_symbols

    def __len__(self):
        return len(self._symbols)

    def __iter__(self) -> Iterator[str]:
        return iter(self._symbols)

    def __contains__(self, symbol) -> bool:
        return symbol in self._index

    def __eq__(self, other):
        return isinstance(other, Alphabet) and other.symbols == self.symbols \
            and other.value_symbols == self.value_symbols

    def __hash__(self):
        return hash(self._symbols)

    def __repr__(self):
        return f"Alphabet({list(self._symbols)!r})"

    def index(self, symbol: str) -> int:
        try:
            return self._index[symbol]
        except KeyError:
            raise UnknownSymbol(f"Unknown symbol '{symbol}'") from None

    def carries_value(self, symbol: str) -> bool:
        return symbol in self._value_symbols

    def element(self, symbol: str, value: Optional[float] = None) -> LexiconElement:
        """
        Build a validated element: value must be present iff the symbol is value carrying, and finite.
        """
        self.index(symbol)
        if symbol in self._value_symbols:
            if value is None:
                raise MalformedSerialization(f"Symbol '{symbol}' requires a value")
            value = float(value)
            if not math.isfinite(value):
                raise MalformedSerialization(f"Non-finite value {value} for '{symbol}'")
        elif value is not None:
            raise MalformedSerialization(f"Symbol '{symbol}' is value-free but got {value}")
        return LexiconElement(symbol, value)

    def check(self, element: LexiconElement) -> LexiconElement:
        return self.element(element.symbol, element.value)

    def sort_key(self, element: LexiconElement) -> Tuple[int, float]:
        return self.index(element.symbol), element.embedded_value()

    def canonical_order(self, elements: Iterable[LexiconElement]) -> List[LexiconElement]:
        return sorted(elements, key=self.sort_key)


@dataclass(frozen=True)
class Serialization:
    """
    A complete serialization.  step_log_probs, when recorded by the sampler, sums to log q(a|x).
    """
    elements: Prefix
    step_log_probs: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, 'elements', tuple(LexiconElement(*item) for item in self.elements))
        if not self.elements:
            raise MalformedSerialization("Empty serialization", position=0)
        eos_positions = [pos for pos, item in enumerate(self.elements) if item.symbol == EOS]
        if eos_positions != [len(self.elements) - 1]:
            raise MalformedSerialization("eos must appear exactly once, at the end",
                                         position=eos_positions[0] if eos_positions else len(self.elements) - 1)
        if self.step_log_probs is not None:
            log_probs = tuple(float(item) for item in self.step_log_probs)
            if len(log_probs) != len(self.elements):
                raise ValueError(f"{len(log_probs)} step log probabilities for {len(self.elements)} elements")
            if any(item > 0.0 or math.isnan(item) for item in log_probs):
                raise ValueError("Step log probabilities must be <= 0")
            object.__setattr__(self, 'step_log_probs', log_probs)

    def __len__(self):
        return len(self.elements)

    def __iter__(self) -> Iterator[LexiconElement]:
        return iter(self.elements)

    def __getitem__(self, item):
        return self.elements[item]

    @property
    def symbols(self) -> Tuple[str, ...]:
        return tuple(item.symbol for item in self.elements)

    @property
    def path_log_prob(self) -> Optional[float]:
        if self.step_log_probs is None:
            return None
        return math.fsum(self.step_log_probs)

    @classmethod
    def of(cls, *items: Union[str, Tuple[str, Optional[float]], LexiconElement],
           step_log_probs: Optional[Sequence[float]] = None) -> "Serialization":
        """
        Shorthand: Serialization.of('A', 'B', 'eos') or Serialization.of(('AddTS(v1)', 0.5), 'eos')
        """
        elements = tuple(LexiconElement(item) if isinstance(item, str) else LexiconElement(*item) for item in items)
        return cls(elements, None if step_log_probs is None else tuple(step_log_probs))


class StateKey(NamedTuple):
    """
    Canonical encoding of the state of a partial serialization.  Equal keys mean equivalent prefixes.
    """
    backend_tag: str
    payload: bytes


# Canonical state codec.  Length prefixed, type tagged; floats by exact bit pattern.
_NONE = b'N'
_TRUE = b'T'
_FALSE = b'F'
_INT = b'I'
_FLOAT = b'D'
_STR = b'S'
_TUPLE = b'U'


def pack_state(value: Any) -> bytes:
    buffer = bytearray()
    _pack(value, buffer)
    return bytes(buffer)


def _pack(value: Any, buffer: bytearray):
    if value is None:
        buffer += _NONE
    elif value is True:
        buffer += _TRUE
    elif value is False:
        buffer += _FALSE
    elif isinstance(value, int):
        buffer += _INT + struct.pack('<q', value)
    elif isinstance(value, float):
        buffer += _FLOAT + struct.pack('<d', value)
    elif isinstance(value, str):
        raw = value.encode(ENCODING)
        buffer += _STR + struct.pack('<I', len(raw)) + raw
    elif isinstance(value, tuple):
        buffer += _TUPLE + struct.pack('<I', len(value))
        for item in value:
            _pack(item, buffer)
    else:
        raise TypeError(f"Cannot encode {type(value).__name__} in a state")


def unpack_state(payload: bytes) -> Any:
    value, offset = _unpack(payload, 0)
    if offset != len(payload):
        raise ValueError(f"Trailing bytes in state payload at {offset}")
    return value


def _unpack(payload: bytes, offset: int) -> Tuple[Any, int]:
    tag = payload[offset:offset + 1]
    offset += 1
    if tag == _NONE:
        return None, offset
    if tag == _TRUE:
        return True, offset
    if tag == _FALSE:
        return False, offset
    if tag == _INT:
        return struct.unpack_from('<q', payload, offset)[0], offset + 8
    if tag == _FLOAT:
        return struct.unpack_from('<d', payload, offset)[0], offset + 8
    if tag == _STR:
        (length,) = struct.unpack_from('<I', payload, offset)
        offset += 4
        return payload[offset:offset + length].decode(ENCODING), offset + length
    if tag == _TUPLE:
        (length,) = struct.unpack_from('<I', payload, offset)
        offset += 4
        items = []
        for _ in range(length):
            item, offset = _unpack(payload, offset)
            items.append(item)
        return tuple(items), offset
    raise ValueError(f"Bad state tag {tag!r} at {offset - 1}")


class MeasureKind(enum.Enum):
    UNIFORM = "uniform"
    TABLE = "table"
    BIASED_FRONT = "biased-front"


@dataclass(frozen=True)
class SamplingMeasure:
    """
    Strictly positive weight on (state, symbol) pairs.

    A biased-front measure weighs every candidate uniformly but, with probability front_fraction per serialization,
    restricts candidates to the backend's conditioning symbols while any remain.
    """
    kind: MeasureKind = MeasureKind.UNIFORM
    weights: Optional[Mapping[Tuple[StateKey, str], float]] = None
    front_fraction: Optional[float] = None
    feature_drop_probability: float = 0.0

    def __post_init__(self):
        if self.kind is MeasureKind.TABLE:
            if self.weights is None:
                raise ValueError("Table measure requires weights")
            for key, weight in self.weights.items():
                if not weight > 0.0 or not math.isfinite(weight):
                    raise ValueError(f"Measure weights must be strictly positive and finite: {key} -> {weight}")
            object.__setattr__(self, 'weights', dict(self.weights))
        elif self.weights is not None:
            raise ValueError(f"{self.kind.value} measure takes no weights")
        if self.kind is MeasureKind.BIASED_FRONT:
            if self.front_fraction is None or not 0.0 < self.front_fraction <= 1.0:
                raise ValueError(f"front_fraction must be in (0, 1], got {self.front_fraction}")
        elif self.front_fraction is not None:
            raise ValueError(f"{self.kind.value} measure takes no front_fraction")
        if not 0.0 <= self.feature_drop_probability < 1.0:
            raise ValueError(f"feature_drop_probability must be in [0, 1), got {self.feature_drop_probability}")

    @classmethod
    def uniform(cls) -> "SamplingMeasure":
        return cls()

    @classmethod
    def table(cls, weights: Mapping[Tuple[StateKey, str], float]) -> "SamplingMeasure":
        return cls(kind=MeasureKind.TABLE, weights=weights)

    @classmethod
    def biased_front(cls, front_fraction: float = 0.5, feature_drop_probability: float = 0.0) -> "SamplingMeasure":
        return cls(kind=MeasureKind.BIASED_FRONT, front_fraction=front_fraction,
                   feature_drop_probability=feature_drop_probability)


def measure_weight(mu: SamplingMeasure, state: StateKey, symbol: str) -> float:
    if mu.kind is MeasureKind.TABLE:
        try:
            return mu.weights[(state, symbol)]
        except KeyError:
            raise MissingWeight(f"No weight for symbol '{symbol}' in state {state.payload.hex()}") from None
    return 1.0


class StructureBackend(Protocol):
    """
    Contract every structure backend satisfies.  Backends are stateless after construction.

    A backend's state is any tree of None/bool/int/float/str/tuple values, canonicalised by the backend (sorted
    wherever order does not matter) and packed into a StateKey.
    """

    @property
    @abstractmethod
    def tag(self) -> str:
        """Structure kind identifier carried in every StateKey"""

    @property
    @abstractmethod
    def alphabet(self) -> Alphabet:
        """Finite symbol set including eos"""

    @abstractmethod
    def initial_state_value(self) -> Any:
        """Unpacked state s^0"""

    @abstractmethod
    def advance(self, state: Any, element: LexiconElement) -> Any:
        """
        Unpacked state transition f(s, a).  Raises MalformedSerialization when the element cannot follow the state
        under the backend's grammar.
        """

    @abstractmethod
    def deserialize(self, serialization: Serialization) -> Any:
        """
        Rebuild the unique instance x with serialization in X^-1(x).
        :raises MalformedSerialization: with the offending position
        """

    @abstractmethod
    def count_serializations(self, instance: Any) -> int:
        """Exact size of X^-1(x)"""

    @abstractmethod
    def enumerate_serializations(self, instance: Any, bound: int) -> List[Serialization]:
        """
        Every distinct serialization of the instance, independently of the streaming candidate logic.
        :raises EnumerationTooLarge: when there are more than bound
        """

    @abstractmethod
    def candidate_next_elements(self, instance: Any, state: StateKey, prefix: Sequence[LexiconElement]
                                ) -> FrozenSet[LexiconElement]:
        """
        Distinct elements that can follow prefix in some serialization of the instance.
        :raises DeadEnd: if the prefix extends to no serialization
        """

    @abstractmethod
    def validate_instance(self, instance: Any) -> Any:
        """Check the instance belongs to this backend, returning it"""

    def is_conditioning(self, symbol: str) -> bool:
        """Conditioning symbols are front-loaded by biased-front measures"""
        return False

    def instance_values(self, instance: Any) -> List[float]:
        """All real values a serialization of the instance carries"""
        return []

    def conditioning_names(self, instance: Any) -> List[str]:
        """Names of the conditioning features present in the instance"""
        return []

    def without_conditioning(self, instance: Any, keep: Mapping[str, bool]) -> Any:
        """Drop conditioning features whose name maps to False.  Backends without features return the instance."""
        return instance

    def conditioning_elements(self, instance: Any) -> List[Tuple[LexiconElement, ...]]:
        """
        One group of elements per conditioning feature of the instance, in canonical symbol order.  Concatenated
        they form a serialization prefix that fixes every conditioning feature.
        """
        return []

    def initial_state(self) -> StateKey:
        return self.canonical_state(self.initial_state_value())

    def canonical_state(self, value: Any) -> StateKey:
        return StateKey(self.tag, pack_state(value))

    def decode_state(self, state: StateKey) -> Any:
        if state.backend_tag != self.tag:
            raise BackendMismatch(f"State from '{state.backend_tag}' given to '{self.tag}'")
        return unpack_state(state.payload)

    def transition(self, state: StateKey, element: LexiconElement) -> StateKey:
        if element.symbol not in self.alphabet:
            raise UnknownSymbol(f"Unknown symbol '{element.symbol}' for {self.tag}")
        return self.canonical_state(self.advance(self.decode_state(state), element))

    def replay_states(self, elements: Iterable[LexiconElement]) -> List[StateKey]:
        states = [self.initial_state()]
        for element in elements:
            states.append(self.transition(states[-1], element))
        return states


def transition(backend: StructureBackend, state: StateKey, element: LexiconElement) -> StateKey:
    return backend.transition(state, element)


def replay_states(backend: StructureBackend, serialization: Union[Serialization, Iterable[LexiconElement]]
                  ) -> List[StateKey]:
    """
    Fold transition over the elements: [s^0, s^1, ..., s^T]
    """
    return backend.replay_states(serialization)


class StructSeqError(Exception):
    exit_code: int = 1


class ConfigError(StructSeqError):
    exit_code = 2


class DataError(StructSeqError):
    exit_code = 3


class NumericError(StructSeqError):
    exit_code = 4


class UnknownSymbol(DataError, ValueError):
    pass


class BackendMismatch(DataError, ValueError):
    pass


class MissingWeight(DataError, KeyError):

    def __str__(self):
        return Exception.__str__(self)


class MalformedSerialization(DataError, ValueError):

    def __init__(self, reason: str, position: Optional[int] = None):
        super().__init__(reason if position is None else f"position {position}: {reason}")
        self.reason = reason
        self.position = position


class EnumerationTooLarge(DataError):

    def __init__(self, count: int, bound: int, exact: bool = True):
        qualifier = "" if exact else "at least "
        super().__init__(f"{qualifier}{count} serializations exceed the enumeration bound {bound}")
        self.count = count
        self.bound = bound
        self.exact = exact


class DeadEnd(DataError):
    pass


class DuplicateName(DataError, ValueError):
    pass


class EmptyCandidates(DataError, ValueError):
    pass


class InternalInconsistency(StructSeqError, AssertionError):
    pass


class NotASerializationOf(DataError, ValueError):
    pass


class UnrealizableProperty(DataError, ValueError):
    pass


class DivisionUndefined(NumericError, ZeroDivisionError):
    pass


class MissingHead(DataError):
    pass


class EmptyDataset(DataError):
    pass


class UnsupportedVersion(DataError):
    pass


class NonFiniteActivation(NumericError, FloatingPointError):
    pass


class NonFiniteTrajectory(NumericError, FloatingPointError):
    pass


class TrainingDiverged(NumericError):

    def __init__(self, message: str, last_finite_step: int):
        super().__init__(f"{message} (last finite step {last_finite_step})")
        self.last_finite_step = last_finite_step


EXCEPTIONS_BY_NAME: Dict[str, type] = {
    name: ex for name, ex in list(globals().items()) if isinstance(ex, type) and issubclass(ex, StructSeqError)
}

