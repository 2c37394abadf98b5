"""
Element-wise sampling of serializations.

At every step the set of admissible next elements is found, either by filtering the full enumeration of the
instance's serializations (enumerating mode) or by asking the backend directly (streaming mode).  One element is then
drawn with probability proportional to the measure's weight for (state, symbol).  Step log probabilities are recorded
so that their sum is log q(a|x).
"""
import enum
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Collection, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .core import Alphabet, EOS, EmptyCandidates, FORMAT_VERSION, InternalInconsistency, LexiconElement, \
    MalformedSerialization, MeasureKind, NotASerializationOf, SamplingMeasure, Serialization, StateKey, \
    StructureBackend, measure_weight
from .misc import atomic_write
from .random import STREAM_SAMPLER, make_rng

logger = logging.getLogger(__name__)


class SamplerMode(enum.Enum):
    ENUMERATING = "enumerating"
    STREAMING = "streaming"
    # Always the first candidate in canonical symbol order.  A fixed ordering baseline, q = 1.
    CANONICAL = "canonical"


@dataclass(frozen=True)
class SamplerConfig:
    mode: SamplerMode = SamplerMode.STREAMING
    measure: SamplingMeasure = field(default_factory=SamplingMeasure)
    enumeration_bound: int = 100_000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'mode', SamplerMode(self.mode))
        if self.enumeration_bound < 1:
            raise ValueError(f"enumeration_bound must be >= 1, got {self.enumeration_bound}")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError(f"seed must be a 64 bit unsigned integer, got {self.seed}")


def possible_elements(t: int, candidates: Sequence[Serialization]) -> FrozenSet[LexiconElement]:
    """
    Distinct elements at (1-based) position t across the candidates.
    """
    if not candidates:
        raise EmptyCandidates(f"No candidate serializations at step {t}")
    if any(len(candidate) < t for candidate in candidates):
        raise ValueError(f"Every candidate must have at least {t} elements")
    return frozenset(candidate[t - 1] for candidate in candidates)


def update_list(candidates: Sequence[Serialization], chosen: LexiconElement, t: int) -> List[Serialization]:
    """
    Keep the candidates whose element at (1-based) position t is the chosen one.
    """
    result = [candidate for candidate in candidates if len(candidate) >= t and candidate[t - 1] == chosen]
    if not result:
        raise InternalInconsistency(f"No candidate has {chosen} at step {t}")
    return result


def _canonical_key(alphabet: Optional[Alphabet]) -> Callable[[LexiconElement], Any]:
    if alphabet is None:
        return lambda element: (element.symbol, element.embedded_value())
    return alphabet.sort_key


def sample_next(mu: SamplingMeasure, state: StateKey, pool: Collection[LexiconElement], rng: np.random.Generator,
                alphabet: Optional[Alphabet] = None) -> Tuple[LexiconElement, float]:
    """
    Draw one element with probability mu(state, symbol) / sum over the pool.  Candidates are visited in canonical
    order and the draw is by cumulative weight inversion, so the (generator state -> element) map is deterministic.
    """
    if not pool:
        raise EmptyCandidates("Cannot sample from an empty pool")
    ordered = sorted(pool, key=_canonical_key(alphabet))
    weights = [measure_weight(mu, state, element.symbol) for element in ordered]
    total = math.fsum(weights)
    threshold = rng.random() * total
    cumulative = 0.0
    chosen = len(ordered) - 1
    for index, weight in enumerate(weights):
        cumulative += weight
        if threshold < cumulative:
            chosen = index
            break
    return ordered[chosen], math.log(weights[chosen]) - math.log(total)


def _log_prob_of(mu: SamplingMeasure, state: StateKey, pool: Collection[LexiconElement],
                 element: LexiconElement) -> float:
    if element not in pool:
        return -math.inf
    total = math.fsum(measure_weight(mu, state, item.symbol) for item in pool)
    return math.log(measure_weight(mu, state, element.symbol)) - math.log(total)


class Sampler:
    """
    Samples serializations of instances of one backend under one configuration.  Holds no mutable state; every
    call takes its own generator.
    """

    def __init__(self, backend: StructureBackend, config: SamplerConfig = SamplerConfig()):
        self.backend = backend
        self.config = config

    @property
    def measure(self) -> SamplingMeasure:
        return self.config.measure

    def _front_pool(self, pool: FrozenSet[LexiconElement]) -> FrozenSet[LexiconElement]:
        front = frozenset(element for element in pool if self.backend.is_conditioning(element.symbol))
        return front or pool

    def _walk(self, instance: Any, choose: Callable[[int, StateKey, FrozenSet[LexiconElement], bool],
                                                        LexiconElement], front: bool) -> Serialization:
        """
        Drive the state machine from s^0 to eos.  choose(t, state, pool, front) picks the element at 1-based step t.
        The recorded step log probabilities are exact for the configured measure, including the two component mixture
        of a biased-front measure.
        """
        mode = self.config.mode
        mu = self.config.measure
        biased = mu.kind is MeasureKind.BIASED_FRONT
        if biased:
            log_front = math.log(mu.front_fraction)
            log_interleaved = math.log1p(-mu.front_fraction) if mu.front_fraction < 1.0 else -math.inf

        candidates = None
        if mode is SamplerMode.ENUMERATING:
            candidates = self.backend.enumerate_serializations(instance, self.config.enumeration_bound)

        state = self.backend.initial_state()
        elements: List[LexiconElement] = []
        step_log_probs: List[float] = []
        # Log path probability of the prefix under each mixture component.
        prefix_front = prefix_interleaved = 0.0
        previous_mixture = 0.0
        t = 0
        while not elements or elements[-1].symbol != EOS:
            t += 1
            if candidates is not None:
                pool = possible_elements(t, candidates)
            else:
                pool = self.backend.candidate_next_elements(instance, state, elements)
            element = choose(t, state, pool, front)
            if element not in pool:
                raise NotASerializationOf(f"{element} cannot follow at step {t}")

            if mode is SamplerMode.CANONICAL:
                step_log_probs.append(0.0)
            elif biased:
                prefix_front += _log_prob_of(mu, state, self._front_pool(pool), element)
                prefix_interleaved += _log_prob_of(mu, state, pool, element)
                mixture = float(np.logaddexp(log_front + prefix_front, log_interleaved + prefix_interleaved))
                if previous_mixture == -math.inf:
                    step_log_probs.append(0.0)
                else:
                    step_log_probs.append(min(0.0, mixture - previous_mixture))
                previous_mixture = mixture
            else:
                step_log_probs.append(_log_prob_of(mu, state, pool, element))

            if candidates is not None:
                candidates = update_list(candidates, element, t)
            elements.append(element)
            state = self.backend.transition(state, element)
        return Serialization(tuple(elements), tuple(step_log_probs))

    def sample(self, instance: Any, rng: np.random.Generator) -> Serialization:
        """
        Sample one serialization of the instance.
        """
        instance = self.backend.validate_instance(instance)
        mu = self.config.measure
        alphabet = self.backend.alphabet
        front = False
        if self.config.mode is not SamplerMode.CANONICAL and mu.kind is MeasureKind.BIASED_FRONT:
            front = bool(rng.random() < mu.front_fraction)

        def _choose(_, state, pool, use_front):
            if self.config.mode is SamplerMode.CANONICAL:
                return min(pool, key=alphabet.sort_key)
            if use_front:
                pool = self._front_pool(pool)
            return sample_next(mu, state, pool, rng, alphabet)[0]

        return self._walk(instance, _choose, front)

    def path_log_prob(self, instance: Any, serialization: Serialization) -> float:
        """
        log q(a|x): replay the candidate filtering and per-step normalisation of the sampler along a.
        """
        instance = self.backend.validate_instance(instance)
        try:
            rebuilt = self.backend.deserialize(serialization)
        except MalformedSerialization as ex:
            raise NotASerializationOf(f"Not a serialization: {ex}") from ex
        if rebuilt != instance:
            raise NotASerializationOf(f"Serialization builds {rebuilt}, not {instance}")

        if self.config.mode is SamplerMode.CANONICAL:
            sort_key = self.backend.alphabet.sort_key
            canonical = self._walk(instance, lambda t, state, pool, front: min(pool, key=sort_key), False)
            return 0.0 if canonical.elements == serialization.elements else -math.inf

        replayed = self._walk(instance, lambda t, _, __, ___: serialization[t - 1], False)
        return replayed.path_log_prob

    def drop_features(self, instance: Any, rng: np.random.Generator) -> Any:
        """
        Training augmentation: remove each conditioning feature independently with the measure's drop probability.
        """
        probability = self.config.measure.feature_drop_probability
        names = self.backend.conditioning_names(instance)
        if probability <= 0.0 or not names:
            return instance
        keep = {name: bool(draw >= probability) for name, draw in zip(names, rng.random(len(names)))}
        return self.backend.without_conditioning(instance, keep)

    def sample_corpus(self, instances: Iterable[Any], per_instance: int, seed: Optional[int] = None
                      ) -> List[Tuple[int, Serialization]]:
        """
        per_instance serializations of every instance, each instance drawing from its own stream.
        """
        seed = self.config.seed if seed is None else seed
        result = []
        for index, instance in enumerate(instances):
            rng = make_rng(seed, STREAM_SAMPLER, index)
            for _ in range(per_instance):
                result.append((index, self.sample(instance, rng)))
        return result


def sample_serialization(backend: StructureBackend, instance: Any, config: SamplerConfig,
                         rng: np.random.Generator) -> Serialization:
    return Sampler(backend, config).sample(instance, rng)


def path_log_prob(backend: StructureBackend, instance: Any, serialization: Serialization,
                  config: SamplerConfig) -> float:
    return Sampler(backend, config).path_log_prob(instance, serialization)


def corpus_record(instance_index: int, serialization: Serialization, instance_id: Optional[str] = None) -> str:
    """
    One line of a serialization corpus:

        {"version": 1, "instance_index": 0, "instance_id": "a",
         "elements": [{"sym": "A", "val": null}, {"sym": "eos", "val": null}],
         "step_log_probs": [-0.69, 0.0], "path_log_prob": -0.69}
    """
    record = {
        'version': FORMAT_VERSION,
        'instance_index': instance_index,
        'instance_id': instance_id,
        'elements': [{'sym': element.symbol, 'val': element.value} for element in serialization],
        'step_log_probs': None if serialization.step_log_probs is None else list(serialization.step_log_probs),
        'path_log_prob': serialization.path_log_prob,
    }
    return json.dumps(record)


def write_corpus(path: Union[str, Path], rows: Iterable[Tuple[int, Optional[str], Serialization]]) -> int:
    count = 0
    with atomic_write(path) as file:
        for instance_index, instance_id, serialization in rows:
            file.write(corpus_record(instance_index, serialization, instance_id))
            file.write('\n')
            count += 1
    logger.info(f"Wrote {count} serialization(s) to {path}")
    return count
