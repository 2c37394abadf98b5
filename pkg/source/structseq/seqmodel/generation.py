"""
Drawing new structures from a generative model.

The model is run forward one element at a time.  Each symbol is drawn from P(a^t | h^{t-1}) and, for a value carrying
symbol, its value is drawn from the symbol's mixture.  With constrained sampling the categorical distribution is
restricted to the symbols the backend's grammar accepts in the current state and renormalised, so every finished
sequence deserializes.  Unconstrained sampling stops at the first element the grammar rejects.
"""
import itertools
import logging
import math
from typing import Any, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm

from ..core import DeadEnd, EOS, LexiconElement, MalformedSerialization, MissingHead, NonFiniteActivation, \
    Serialization, StructureBackend, UnknownSymbol
from .cells import make_cell
from .model import forward, mixture_nll, mixture_parameters
from .params import ModelParams

logger = logging.getLogger(__name__)

DEFAULT_MAX_LENGTH = 200


class Generated(NamedTuple):
    """
    One generated sequence.  log_prob is the log probability of the drawn continuation under the distribution it was
    drawn from (the masked one when constrained), values included as densities in original units.
    instance is None when the sequence is truncated or breaks the grammar.
    """
    elements: Tuple[LexiconElement, ...]
    log_prob: float
    status: str
    instance: Optional[Any]

    @property
    def complete(self) -> bool:
        return self.status == 'ok'


class _Stepper:
    """Incremental forward pass over a single sequence"""

    def __init__(self, params: ModelParams):
        spec = params.spec
        self.params = params
        self.cell = make_cell(spec.cell, spec.activation)
        self.index = {symbol: position for position, symbol in enumerate(spec.symbols)}
        self.value_symbols = frozenset(spec.value_symbols)
        self.states = [np.zeros((1, spec.hidden_dim)) for _ in range(spec.layers)]

    @property
    def hidden(self) -> np.ndarray:
        return self.states[-1][0]

    def feed(self, element: LexiconElement):
        spec = self.params.spec
        layer_input = np.zeros((1, spec.input_dim))
        try:
            layer_input[0, self.index[element.symbol]] = 1.0
        except KeyError:
            raise UnknownSymbol(f"Symbol '{element.symbol}' is not in the model's alphabet") from None
        if element.symbol in self.value_symbols:
            layer_input[0, -1] = float(spec.value_scaler.transform(element.embedded_value()))
        for layer in range(spec.layers):
            self.states[layer], _ = self.cell.step(self.params.blocks, layer, layer_input, self.states[layer])
            layer_input = self.states[layer]
        if not np.all(np.isfinite(layer_input)):
            raise NonFiniteActivation("Non-finite hidden state while generating")


def _trial_element(symbol: str, value_symbols) -> LexiconElement:
    return LexiconElement(symbol, 0.0 if symbol in value_symbols else None)


def allowed_symbols(backend: StructureBackend, state: Any, symbols: Sequence[str], value_symbols=()) -> np.ndarray:
    """
    Boolean mask over symbols: those the backend's grammar accepts after the unpacked state.
    """
    value_symbols = frozenset(value_symbols)
    allowed = np.zeros(len(symbols), dtype=bool)
    for position, symbol in enumerate(symbols):
        try:
            backend.advance(state, _trial_element(symbol, value_symbols))
        except (MalformedSerialization, UnknownSymbol):
            continue
        allowed[position] = True
    return allowed


def _draw_value(params: ModelParams, hidden: np.ndarray, symbol_index: int, rng: np.random.Generator
                ) -> Tuple[float, float]:
    """(value in original units, its log density in original units)"""
    spec = params.spec
    m = spec.mixture_components
    raw = hidden @ params['W_mix'].T + params['b_mix'] + params['B_sym'][symbol_index]
    weights, means, variances = mixture_parameters(raw, m)
    component = int(rng.choice(m, p=weights / weights.sum()))
    z = float(rng.normal(means[component], math.sqrt(variances[component])))
    log_density = -float(mixture_nll(raw[None, :], np.array([z]), m)[0][0]) - math.log(spec.value_scaler.scale)
    return float(spec.value_scaler.inverse(z)), log_density


def generate(params: ModelParams, backend: StructureBackend, rng: np.random.Generator,
             prefix: Sequence[LexiconElement] = (), max_length: int = DEFAULT_MAX_LENGTH,
             constrained: bool = True) -> Generated:
    """
    Continue prefix (possibly empty) until eos or max_length elements, then deserialize.
    :raises MalformedSerialization: if the prefix itself breaks the grammar
    :raises DeadEnd: if constrained and no symbol can follow some state
    """
    spec = params.spec
    if not spec.generative:
        raise MissingHead("Generation needs a generative model")
    if max_length < 1:
        raise ValueError(f"max_length must be >= 1, got {max_length}")
    symbols = list(spec.symbols)
    value_symbols = frozenset(spec.value_symbols)
    stepper = _Stepper(params)

    state = backend.initial_state_value()
    elements: List[LexiconElement] = []
    for element in prefix:
        element = LexiconElement(*element)
        if element.symbol == EOS:
            raise MalformedSerialization("eos inside a generation prefix", position=len(elements))
        state = backend.advance(state, element)
        stepper.feed(element)
        elements.append(element)

    log_prob = 0.0
    while len(elements) < max_length:
        hidden = stepper.hidden
        logits = hidden @ params['W_cat'].T + params['b_cat']
        if constrained:
            allowed = allowed_symbols(backend, state, symbols, value_symbols)
            if not allowed.any():
                raise DeadEnd(f"No symbol can follow {[str(item) for item in elements]}")
            logits = np.where(allowed, logits, -np.inf)
        log_probs = logits - logsumexp(logits)
        probabilities = np.exp(log_probs)
        choice = int(rng.choice(len(symbols), p=probabilities / probabilities.sum()))
        log_prob += float(log_probs[choice])
        symbol = symbols[choice]
        if symbol in value_symbols:
            value, log_density = _draw_value(params, hidden, choice, rng)
            element = LexiconElement(symbol, value)
            log_prob += log_density
        else:
            element = LexiconElement(symbol)
        elements.append(element)

        try:
            state = backend.advance(state, element)
        except MalformedSerialization as ex:
            logger.debug("Generated element %s rejected: %s", element, ex)
            return Generated(tuple(elements), log_prob, 'malformed', None)
        if symbol == EOS:
            try:
                instance = backend.deserialize(Serialization(tuple(elements)))
            except MalformedSerialization as ex:
                logger.debug("Generated sequence does not deserialize: %s", ex)
                return Generated(tuple(elements), log_prob, 'malformed', None)
            return Generated(tuple(elements), log_prob, 'ok', instance)
        stepper.feed(element)

    return Generated(tuple(elements), log_prob, 'truncated', None)


def conditioning_prefix(backend: StructureBackend, instance: Any) -> Tuple[LexiconElement, ...]:
    """
    The conditioning features of the instance written as a serialization prefix, in canonical order.
    """
    instance = backend.validate_instance(instance)
    return tuple(itertools.chain.from_iterable(backend.conditioning_elements(instance)))


def generate_conditional(params: ModelParams, backend: StructureBackend, instance: Any, rng: np.random.Generator,
                         max_length: int = DEFAULT_MAX_LENGTH, constrained: bool = True) -> Generated:
    """
    Draw the rest of a structure given the conditioning features of instance.
    """
    return generate(params, backend, rng, conditioning_prefix(backend, instance), max_length, constrained)


def step_nll(params: ModelParams, serialization: Serialization) -> np.ndarray:
    """
    -log P(a^t | h^{t-1}) for every element, values included as densities in original units.
    """
    if not params.spec.generative:
        raise MissingHead("Scoring needs a generative model")
    trace = forward(params, serialization)
    index = {symbol: position for position, symbol in enumerate(params.spec.symbols)}
    result = np.empty(len(serialization))
    for t, (element, prediction) in enumerate(zip(serialization, trace.predictions)):
        nll = -math.log(prediction.probabilities[index[element.symbol]])
        mixture = prediction.mixtures.get(element.symbol)
        if mixture is not None:
            weights, means, deviations = mixture
            nll -= float(logsumexp(np.log(weights) + norm.logpdf(element.embedded_value(), means, deviations)))
        result[t] = nll
    return result


def conditional_nll(params: ModelParams, serialization: Serialization, prefix_length: int) -> float:
    """
    -log P(a^{k+1..T} | a^{1..k}) with k = prefix_length: the model's loss on the continuation of a given prefix.
    """
    if not 0 <= prefix_length < len(serialization):
        raise ValueError(f"prefix_length must be in [0, {len(serialization)}), got {prefix_length}")
    return float(math.fsum(step_nll(params, serialization)[prefix_length:]))
