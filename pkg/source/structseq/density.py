"""
Probabilities on the structure space from probabilities on serializations.

    pushforward      P(x) = sum over the fiber of x of P(a)
    normalizer       P(o|x) = mu(fiber of x with property o) / mu(fiber of x)
    frac_prob        P(x) = [sum over the fiber of x with property o of P(a)] / P(o|x)
    recovery         P(x) ~ mean over a_j ~ q(.|x) of P(a_j) / q(a_j|x)

All fiber sums are taken in log space.
"""
import logging
import math
from abc import abstractmethod
from dataclasses import dataclass
from typing import Any, Callable, Dict, Hashable, Iterable, List, Literal, Mapping, NamedTuple, Optional, Protocol, \
    Sequence, Union

import numpy as np
from scipy.special import logsumexp

from .core import DivisionUndefined, InternalInconsistency, LexiconElement, NotASerializationOf, Prefix, \
    Serialization, StructureBackend, UnrealizableProperty
from .sampler import Sampler

logger = logging.getLogger(__name__)

NORMALIZATION_TOLERANCE = 1e-12


class SequenceScorer(Protocol):

    @abstractmethod
    def log_prob(self, serialization: Serialization) -> float:
        """log P(a); -inf for sequences outside the model's support"""


class TabularSeqModel(SequenceScorer):
    """
    An explicit sequence distribution: for every reachable prefix, a normalised distribution over next elements.
    """

    def __init__(self, conditionals: Mapping[Prefix, Mapping[LexiconElement, float]]):
        """
        conditionals maps each prefix to log probabilities of its next elements.
        """
        self._conditionals: Dict[Prefix, Dict[LexiconElement, float]] = {}
        for prefix, distribution in conditionals.items():
            total = math.fsum(math.exp(log_prob) for log_prob in distribution.values())
            if abs(total - 1.0) > NORMALIZATION_TOLERANCE:
                raise ValueError(f"Next element distribution after {list(prefix)} sums to {total}")
            self._conditionals[tuple(prefix)] = dict(distribution)

    @classmethod
    def from_log_masses(cls, log_masses: Mapping[Prefix, float]) -> "TabularSeqModel":
        """
        Build from log masses of complete sequences.  The masses must sum to one.
        """
        supported = {tuple(sequence): mass for sequence, mass in log_masses.items() if mass > -math.inf}
        if not supported:
            raise ValueError("A tabular model needs at least one sequence of positive mass")
        total = float(logsumexp(list(supported.values())))
        if abs(math.expm1(total)) > NORMALIZATION_TOLERANCE:
            raise ValueError(f"Sequence masses sum to {math.exp(total)}, not 1")

        prefix_totals: Dict[Prefix, List[float]] = {}
        for sequence, mass in supported.items():
            for length in range(len(sequence) + 1):
                prefix_totals.setdefault(sequence[:length], []).append(mass)
        log_totals = {prefix: float(logsumexp(masses)) for prefix, masses in prefix_totals.items()}

        conditionals: Dict[Prefix, Dict[LexiconElement, float]] = {}
        for prefix, log_total in log_totals.items():
            if not prefix:
                continue
            parent = prefix[:-1]
            conditionals.setdefault(parent, {})[prefix[-1]] = log_total - log_totals[parent]
        return cls(conditionals)

    @property
    def prefixes(self) -> Iterable[Prefix]:
        return self._conditionals.keys()

    def conditional(self, prefix: Sequence[LexiconElement]) -> Dict[LexiconElement, float]:
        """Next element probabilities after the prefix; empty for prefixes outside the support"""
        return {element: math.exp(log_prob) for element, log_prob in self._conditionals.get(tuple(prefix), {}).items()}

    def log_prob(self, serialization: Serialization) -> float:
        elements = tuple(serialization)
        terms = []
        for position, element in enumerate(elements):
            log_prob = self._conditionals.get(elements[:position], {}).get(element)
            if log_prob is None:
                return -math.inf
            terms.append(log_prob)
        return math.fsum(terms)

    def prob(self, serialization: Serialization) -> float:
        return math.exp(self.log_prob(serialization))


def build_tabular_oracle(dataset: Sequence[Any], backend: StructureBackend, sampler: Sampler, bound: int
                         ) -> TabularSeqModel:
    """
    The exact serialization distribution a learner sees: an instance chosen uniformly from the dataset, then a
    serialization drawn by the sampler.  Duplicate instances count as often as they occur.
    """
    if not dataset:
        raise ValueError("Cannot build an oracle from an empty dataset")
    log_weight = -math.log(len(dataset))
    log_masses: Dict[Prefix, float] = {}
    for instance in dataset:
        for serialization in backend.enumerate_serializations(instance, bound):
            mass = log_weight + sampler.path_log_prob(instance, serialization)
            previous = log_masses.get(serialization.elements, -math.inf)
            log_masses[serialization.elements] = float(np.logaddexp(previous, mass))
    logger.debug(f"Tabular oracle over {len(log_masses)} serialization(s) of {len(dataset)} instance(s)")
    return TabularSeqModel.from_log_masses(log_masses)


def pushforward_log_prob(instance: Any, model: SequenceScorer, backend: StructureBackend, bound: int) -> float:
    log_probs = [model.log_prob(serialization) for serialization in backend.enumerate_serializations(instance, bound)]
    return float(logsumexp(log_probs)) if log_probs else -math.inf


def pushforward_prob(instance: Any, model: SequenceScorer, backend: StructureBackend, bound: int) -> float:
    """
    Model probability of the instance: total model mass on its serializations.
    """
    return math.exp(pushforward_log_prob(instance, model, backend, bound))


PropertyFunction = Callable[[Serialization], Hashable]
PropertyNormalizer = Callable[[Any, Hashable], float]


@dataclass(frozen=True)
class PropertyView:
    """
    How serializations are grouped into properties.  In singleton mode the property of a serialization is its
    element sequence.  Custom mode supplies property_of and optionally normalizer(instance, o) = P(o|x); without a
    normalizer P(o|x) is found by enumerating the fiber.
    """
    mode: Literal['singleton', 'custom'] = 'singleton'
    property_of: Optional[PropertyFunction] = None
    normalizer: Optional[PropertyNormalizer] = None

    def __post_init__(self):
        if self.mode == 'custom' and self.property_of is None:
            raise ValueError("A custom property view needs property_of")
        if self.mode == 'singleton' and (self.property_of is not None or self.normalizer is not None):
            raise ValueError("A singleton property view takes no functions")

    @classmethod
    def singleton(cls) -> "PropertyView":
        return cls()

    @classmethod
    def custom(cls, property_of: PropertyFunction, normalizer: Optional[PropertyNormalizer] = None
               ) -> "PropertyView":
        return cls('custom', property_of, normalizer)

    def property(self, serialization: Serialization) -> Hashable:
        if self.mode == 'singleton':
            return serialization.elements
        return self.property_of(serialization)


SINGLETON = PropertyView()


def _as_serialization(prop: Union[Serialization, Sequence]) -> Serialization:
    if isinstance(prop, Serialization):
        return prop
    try:
        return Serialization(tuple(prop))
    except (TypeError, ValueError) as ex:
        raise UnrealizableProperty(f"{prop!r} is not a serialization") from ex


def _members(instance: Any, prop: Hashable, sampler: Sampler, view: PropertyView, bound: int
             ) -> List[Serialization]:
    """Serializations of the instance having the property"""
    if view.mode == 'singleton':
        serialization = _as_serialization(prop)
        try:
            rebuilt = sampler.backend.deserialize(serialization)
        except ValueError as ex:
            raise UnrealizableProperty(f"{list(serialization.symbols)} is not a serialization of {instance}") from ex
        if rebuilt != instance:
            raise UnrealizableProperty(f"{list(serialization.symbols)} is not a serialization of {instance}")
        return [serialization]
    members = [serialization for serialization in sampler.backend.enumerate_serializations(instance, bound)
               if view.property(serialization) == prop]
    if not members:
        raise UnrealizableProperty(f"No serialization of {instance} has property {prop!r}")
    return members


def property_normalizer(instance: Any, prop: Hashable, sampler: Sampler, view: PropertyView = SINGLETON,
                        bound: int = 100_000) -> float:
    """
    P(o|x) under the sampler's measure.  In singleton mode this is the path probability q(o|x).
    """
    members = _members(instance, prop, sampler, view, bound)
    if view.mode == 'custom' and view.normalizer is not None:
        return float(view.normalizer(instance, prop))
    try:
        log_probs = [sampler.path_log_prob(instance, serialization) for serialization in members]
    except NotASerializationOf as ex:
        raise UnrealizableProperty(str(ex)) from ex
    return math.exp(float(logsumexp(log_probs)))


def frac_prob(instance: Any, prop: Hashable, model: SequenceScorer, sampler: Sampler,
              view: PropertyView = SINGLETON, bound: int = 100_000) -> float:
    """
    P(x) through one property: model mass of the serializations with property o divided by P(o|x).
    """
    normalizer = property_normalizer(instance, prop, sampler, view, bound)
    if normalizer <= 0.0:
        raise DivisionUndefined(f"P(o|x) is zero for property {prop!r}")
    members = _members(instance, prop, sampler, view, bound)
    numerator = math.exp(float(logsumexp([model.log_prob(serialization) for serialization in members])))
    return numerator / normalizer


class RecoveryResult(NamedTuple):
    estimate: float
    stderr: float
    m: int

    def report(self, instance_id: Optional[str] = None, exact: Optional[float] = None,
               exact_available: Optional[bool] = None) -> Dict[str, Any]:
        result = {
            'instance_id': instance_id,
            'estimate': self.estimate,
            'stderr': None if math.isnan(self.stderr) else self.stderr,
            'm': self.m,
            'mode': 'singleton',
        }
        if exact_available is not None:
            result['exact'] = exact if exact_available else None
            result['exact_status'] = 'ok' if exact_available else 'unavailable'
        return result


def recovery_terms(instance: Any, model: SequenceScorer, m: int, sampler: Sampler, rng: np.random.Generator
                   ) -> np.ndarray:
    """
    P(a_j) / q(a_j|x) for m serializations drawn by the sampler.
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    terms = np.empty(m)
    for draw in range(m):
        serialization = sampler.sample(instance, rng)
        log_q = serialization.path_log_prob
        if log_q == -math.inf:
            raise InternalInconsistency(f"Sampler drew {list(serialization.symbols)} with zero probability")
        terms[draw] = math.exp(model.log_prob(serialization) - log_q)
    return terms


def recover_density(instance: Any, model: SequenceScorer, m: int, sampler: Sampler, rng: np.random.Generator
                    ) -> RecoveryResult:
    """
    Monte Carlo estimate of P(x) without enumerating the fiber, with its standard error (nan when m is 1).
    """
    terms = recovery_terms(instance, model, m, sampler, rng)
    stderr = float(np.std(terms, ddof=1) / math.sqrt(m)) if m > 1 else math.nan
    return RecoveryResult(float(np.mean(terms)), stderr, m)
