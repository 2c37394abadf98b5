"""
Forward and reverse passes of the recurrent sequence model.

h^0 = 0 and h^t = cell(h^{t-1}, x(a^t)) where x(a) is the one-hot symbol of a followed by its standardised value.
The element a^t is predicted from h^{t-1}: a categorical distribution over symbols and, for a value carrying symbol,
a Gaussian mixture over its value whose raw parameters get a per-symbol bias.  The discriminative variant instead
predicts a target from h^T.

Batches are padded to a common length.  Padded steps are computed but masked out of every loss term, and since they
come after the real steps no gradient flows from them into real states.
"""
import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import logsumexp

from ..constraints import ConstraintMatrix
from ..core import MissingHead, NonFiniteActivation, Serialization, UnknownSymbol
from .cells import make_cell
from .params import LOG_VARIANCE_LIMIT, ModelParams, ModelSpec

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)

# Hidden states with a smaller norm are normalised by this instead.
NORM_FLOOR = 1e-12

Grads = Dict[str, np.ndarray]
Target = Union[int, Sequence[float]]


@dataclass
class EncodedBatch:
    symbols: np.ndarray  # (T, B) symbol index of a^t
    values: np.ndarray  # (T, B) standardised value, 0 for value-free symbols
    has_value: np.ndarray  # (T, B)
    mask: np.ndarray  # (T, B) real (not padding) step
    lengths: np.ndarray  # (B,)
    inputs: np.ndarray  # (T, B, V + 1)

    @property
    def steps(self) -> int:
        return self.symbols.shape[0]

    @property
    def size(self) -> int:
        return self.symbols.shape[1]


def encode_batch(spec: ModelSpec, serializations: Sequence[Serialization]) -> EncodedBatch:
    index = {symbol: position for position, symbol in enumerate(spec.symbols)}
    value_symbols = frozenset(spec.value_symbols)
    size = len(serializations)
    steps = max((len(item) for item in serializations), default=0)
    symbols = np.zeros((steps, size), dtype=np.int64)
    raw_values = np.zeros((steps, size))
    has_value = np.zeros((steps, size), dtype=bool)
    mask = np.zeros((steps, size), dtype=bool)
    for column, serialization in enumerate(serializations):
        for row, element in enumerate(serialization):
            try:
                symbols[row, column] = index[element.symbol]
            except KeyError:
                raise UnknownSymbol(f"Symbol '{element.symbol}' is not in the model's alphabet") from None
            if element.symbol in value_symbols:
                has_value[row, column] = True
                raw_values[row, column] = element.embedded_value()
            mask[row, column] = True
    values = np.where(has_value, spec.value_scaler.transform(raw_values), 0.0)
    inputs = np.zeros((steps, size, spec.input_dim))
    rows, columns = np.nonzero(mask)
    inputs[rows, columns, symbols[rows, columns]] = 1.0
    inputs[:, :, -1] = values
    return EncodedBatch(symbols, values, has_value, mask,
                        np.array([len(item) for item in serializations], dtype=np.int64), inputs)


@dataclass
class ForwardPass:
    batch: EncodedBatch
    hidden: np.ndarray  # (T + 1, B, H) output of the last layer
    caches: List[List[Any]]  # caches[t - 1][layer]


def forward_batch(params: ModelParams, batch: EncodedBatch) -> ForwardPass:
    spec = params.spec
    cell = make_cell(spec.cell, spec.activation)
    states = [np.zeros((batch.size, spec.hidden_dim)) for _ in range(spec.layers)]
    hidden = np.zeros((batch.steps + 1, batch.size, spec.hidden_dim))
    caches = []
    for t in range(1, batch.steps + 1):
        layer_input = batch.inputs[t - 1]
        step_caches = []
        for layer in range(spec.layers):
            states[layer], cache = cell.step(params.blocks, layer, layer_input, states[layer])
            step_caches.append(cache)
            layer_input = states[layer]
        hidden[t] = layer_input
        caches.append(step_caches)
    if not np.all(np.isfinite(hidden)):
        bad_step = int(np.argmax(~np.all(np.isfinite(hidden), axis=(1, 2))))
        raise NonFiniteActivation(f"Non-finite hidden state at step {bad_step}")
    return ForwardPass(batch, hidden, caches)


def backward_batch(params: ModelParams, forward_pass: ForwardPass, d_hidden: np.ndarray, grads: Grads):
    """
    Back propagate d loss / d h^t (last layer, all t) through the recurrence into grads.
    """
    spec = params.spec
    cell = make_cell(spec.cell, spec.activation)
    carry = [np.zeros((forward_pass.batch.size, spec.hidden_dim)) for _ in range(spec.layers)]
    for t in range(forward_pass.batch.steps, 0, -1):
        gradient = d_hidden[t] + carry[-1]
        for layer in range(spec.layers - 1, -1, -1):
            if layer < spec.layers - 1:
                gradient = gradient + carry[layer]
            gradient, carry[layer] = cell.backward(params.blocks, layer, forward_pass.caches[t - 1][layer], gradient,
                                                   grads)


def mixture_nll(raw: np.ndarray, z: np.ndarray, components: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Negative log density of z under Gaussian mixtures given raw parameters [means, log variances, logits] per row.
    Returns (nll per row, d nll / d raw).
    """
    m = components
    means = raw[:, :m]
    raw_log_var = raw[:, m:2 * m]
    log_var = np.clip(raw_log_var, -LOG_VARIANCE_LIMIT, LOG_VARIANCE_LIMIT)
    logits = raw[:, 2 * m:]
    log_weights = logits - logsumexp(logits, axis=1, keepdims=True)
    precision = np.exp(-log_var)
    residual = z[:, None] - means
    log_normal = -0.5 * LOG_2PI - 0.5 * log_var - 0.5 * residual * residual * precision
    joint = log_weights + log_normal
    log_density = logsumexp(joint, axis=1)
    responsibility = np.exp(joint - log_density[:, None])

    d_raw = np.empty_like(raw)
    d_raw[:, :m] = -responsibility * residual * precision
    inside = (raw_log_var > -LOG_VARIANCE_LIMIT) & (raw_log_var < LOG_VARIANCE_LIMIT)
    d_raw[:, m:2 * m] = responsibility * (0.5 - 0.5 * residual * residual * precision) * inside
    d_raw[:, 2 * m:] = np.exp(log_weights) - responsibility
    return -log_density, d_raw


def mixture_parameters(raw: np.ndarray, components: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(weights, means, variances) from raw rows, in standardised units"""
    m = components
    log_var = np.clip(raw[..., m:2 * m], -LOG_VARIANCE_LIMIT, LOG_VARIANCE_LIMIT)
    logits = raw[..., 2 * m:]
    weights = np.exp(logits - logsumexp(logits, axis=-1, keepdims=True))
    return weights, raw[..., :m], np.exp(log_var)


def _generative_terms(params: ModelParams, forward_pass: ForwardPass, grads: Optional[Grads]
                      ) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """
    Per-sequence NLL and, when grads is given, d NLL / d hidden.
    """
    spec = params.spec
    if not spec.generative:
        raise MissingHead("Model has no generative head")
    batch = forward_pass.batch
    steps, size, hidden_dim = batch.steps, batch.size, spec.hidden_dim
    previous = forward_pass.hidden[:-1].reshape(steps * size, hidden_dim)
    symbols = batch.symbols.reshape(-1)
    mask = batch.mask.reshape(-1)
    rows = np.arange(steps * size)

    logits = previous @ params['W_cat'].T + params['b_cat']
    log_probs = logits - logsumexp(logits, axis=1, keepdims=True)
    nll = -log_probs[rows, symbols] * mask

    value_rows = np.nonzero(batch.has_value.reshape(-1) & mask)[0]
    m = spec.mixture_components
    if value_rows.size:
        raw = previous[value_rows] @ params['W_mix'].T + params['b_mix'] + params['B_sym'][symbols[value_rows]]
        value_nll, d_raw = mixture_nll(raw, batch.values.reshape(-1)[value_rows], m)
        nll[value_rows] += value_nll + math.log(spec.value_scaler.scale)

    per_sequence = nll.reshape(steps, size).sum(axis=0)
    if grads is None:
        return per_sequence, None

    d_logits = np.exp(log_probs)
    d_logits[rows, symbols] -= 1.0
    d_logits *= mask[:, None]
    grads['W_cat'] += d_logits.T @ previous
    grads['b_cat'] += d_logits.sum(axis=0)
    d_previous = d_logits @ params['W_cat']
    if value_rows.size:
        grads['W_mix'] += d_raw.T @ previous[value_rows]
        grads['b_mix'] += d_raw.sum(axis=0)
        np.add.at(grads['B_sym'], symbols[value_rows], d_raw)
        d_previous[value_rows] += d_raw @ params['W_mix']
    d_hidden = np.zeros_like(forward_pass.hidden)
    d_hidden[:-1] = d_previous.reshape(steps, size, hidden_dim)
    return per_sequence, d_hidden


def _final_hidden(forward_pass: ForwardPass) -> np.ndarray:
    batch = forward_pass.batch
    return forward_pass.hidden[batch.lengths, np.arange(batch.size)]


def _discriminative_terms(params: ModelParams, forward_pass: ForwardPass, targets: Sequence[Target],
                          grads: Optional[Grads]) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    spec = params.spec
    if spec.generative:
        raise MissingHead("Model has no discriminative head")
    batch = forward_pass.batch
    if len(targets) != batch.size:
        raise ValueError(f"{len(targets)} targets for {batch.size} serializations")
    final = _final_hidden(forward_pass)
    raw = final @ params['W_y'].T + params['b_y']

    if spec.objective == 'classification':
        classes = np.array([_class_index(target, spec.target_dim) for target in targets], dtype=np.int64)
        log_probs = raw - logsumexp(raw, axis=1, keepdims=True)
        loss = -log_probs[np.arange(batch.size), classes]
        d_raw = np.exp(log_probs)
        d_raw[np.arange(batch.size), classes] -= 1.0
    else:
        m = spec.mixture_components
        dims = spec.target_dim
        values = np.array([_regression_target(target, dims) for target in targets])
        standardised = np.stack([scaler.transform(values[:, dim]) for dim, scaler in enumerate(spec.target_scalers)],
                                axis=1)
        dim_nll, d_rows = mixture_nll(raw.reshape(batch.size * dims, 3 * m), standardised.reshape(-1), m)
        log_scales = sum(math.log(scaler.scale) for scaler in spec.target_scalers)
        loss = dim_nll.reshape(batch.size, dims).sum(axis=1) + log_scales
        d_raw = d_rows.reshape(batch.size, dims * 3 * m)

    if grads is None:
        return loss, None
    grads['W_y'] += d_raw.T @ final
    grads['b_y'] += d_raw.sum(axis=0)
    d_hidden = np.zeros_like(forward_pass.hidden)
    d_hidden[batch.lengths, np.arange(batch.size)] = d_raw @ params['W_y']
    return loss, d_hidden


def _class_index(target: Target, classes: int) -> int:
    if isinstance(target, (list, tuple, np.ndarray)):
        raise ValueError(f"Classification target must be a class index, got {target}")
    index = int(target)
    if not 0 <= index < classes:
        raise ValueError(f"Class index {index} out of range for {classes} classes")
    return index


def _regression_target(target: Target, dims: int) -> np.ndarray:
    values = np.atleast_1d(np.asarray(target, dtype=np.float64))
    if values.shape != (dims,):
        raise ValueError(f"Regression target must have {dims} value(s), got {target}")
    return values


def _padded_hidden(hidden_states: Union[np.ndarray, Sequence[np.ndarray]]) -> np.ndarray:
    if isinstance(hidden_states, np.ndarray) and hidden_states.ndim == 3:
        return hidden_states
    steps = max(len(item) for item in hidden_states)
    padded = np.zeros((steps, len(hidden_states), hidden_states[0].shape[-1]))
    for index, item in enumerate(hidden_states):
        padded[:len(item), index] = item
    return padded


def _regularizer_terms(hidden: np.ndarray, constraints: ConstraintMatrix, want_grad: bool
                       ) -> Tuple[float, Optional[np.ndarray]]:
    j, k, t = constraints.as_arrays()
    if not j.size:
        return 0.0, (np.zeros_like(hidden) if want_grad else None)
    h_j, h_k = hidden[t, j], hidden[t, k]
    norm_j = np.maximum(np.linalg.norm(h_j, axis=1), NORM_FLOOR)
    norm_k = np.maximum(np.linalg.norm(h_k, axis=1), NORM_FLOOR)
    unit_j = h_j / norm_j[:, None]
    unit_k = h_k / norm_k[:, None]
    difference = unit_j - unit_k
    distance = np.linalg.norm(difference, axis=1)
    value = float(np.sum(distance))
    if not want_grad:
        return value, None

    direction = np.divide(difference, distance[:, None], out=np.zeros_like(difference),
                          where=distance[:, None] > 0.0)
    d_hidden = np.zeros_like(hidden)
    for rows, unit, norm, sign in ((j, unit_j, norm_j, 1.0), (k, unit_k, norm_k, -1.0)):
        upstream = sign * direction
        projected = upstream - unit * np.sum(unit * upstream, axis=1, keepdims=True)
        clamped = norm <= NORM_FLOOR
        projected[clamped] = upstream[clamped]
        np.add.at(d_hidden, (t, rows), projected / norm[:, None])
    return value, d_hidden


def regularizer(hidden_states: Union[np.ndarray, Sequence[np.ndarray]], constraints: ConstraintMatrix) -> float:
    """
    Sum over constraint entries (j, k, t) of || h_j^t / ||h_j^t|| - h_k^t / ||h_k^t|| ||.

    hidden_states is either one (T_j + 1, H) array per serialization or a padded (T + 1, B, H) array.
    """
    return _regularizer_terms(_padded_hidden(hidden_states), constraints, False)[0]


def regularizer_grad(hidden_states: Union[np.ndarray, Sequence[np.ndarray]], constraints: ConstraintMatrix
                     ) -> np.ndarray:
    return _regularizer_terms(_padded_hidden(hidden_states), constraints, True)[1]


class LossBreakdown(NamedTuple):
    total: float
    nll: float
    reg: float
    per_sequence: np.ndarray


def loss_and_grad(params: ModelParams, batch: Sequence[Serialization], constraints: Optional[ConstraintMatrix],
                  lam: float, targets: Optional[Sequence[Target]] = None, want_grad: bool = True
                  ) -> Tuple[LossBreakdown, Optional[Grads]]:
    """
    L = sum of per-serialization NLL (or discriminative loss when targets are given) + lam * regularizer, and its
    exact gradient by reverse accumulation through the whole recurrence.
    """
    forward_pass = forward_batch(params, encode_batch(params.spec, batch))
    grads = params.zeros_like() if want_grad else None
    if targets is None:
        per_sequence, d_hidden = _generative_terms(params, forward_pass, grads)
    else:
        per_sequence, d_hidden = _discriminative_terms(params, forward_pass, targets, grads)

    reg = 0.0
    if constraints is not None:
        if constraints.batch_size != len(batch):
            raise ValueError(f"Constraint matrix is for {constraints.batch_size} serializations, batch has "
                             f"{len(batch)}")
        reg, d_reg = _regularizer_terms(forward_pass.hidden, constraints, want_grad and lam != 0.0)
        if d_reg is not None:
            d_hidden += lam * d_reg

    nll = float(np.sum(per_sequence))
    breakdown = LossBreakdown(nll + lam * reg, nll, reg, per_sequence)
    if want_grad:
        backward_batch(params, forward_pass, d_hidden, grads)
    return breakdown, grads


def loss(params: ModelParams, batch: Sequence[Serialization], constraints: Optional[ConstraintMatrix],
         lam: float, targets: Optional[Sequence[Target]] = None) -> float:
    return loss_and_grad(params, batch, constraints, lam, targets, want_grad=False)[0].total


def loss_grad(params: ModelParams, batch: Sequence[Serialization], constraints: Optional[ConstraintMatrix],
              lam: float, targets: Optional[Sequence[Target]] = None) -> Grads:
    return loss_and_grad(params, batch, constraints, lam, targets)[1]


def sequence_nll(params: ModelParams, serialization: Serialization) -> float:
    """
    -sum_t log P(a^t | h^{t-1}), values included as densities in original units.
    """
    forward_pass = forward_batch(params, encode_batch(params.spec, [serialization]))
    return float(_generative_terms(params, forward_pass, None)[0][0])


def batch_nll(params: ModelParams, serializations: Sequence[Serialization]) -> np.ndarray:
    forward_pass = forward_batch(params, encode_batch(params.spec, serializations))
    return _generative_terms(params, forward_pass, None)[0]


def discriminative_loss(params: ModelParams, serialization: Serialization, target: Target) -> float:
    """
    -log P(y | h^T): cross entropy for classification, mixture NLL for regression.
    """
    if params.spec.generative:
        raise MissingHead("Model has no discriminative head")
    forward_pass = forward_batch(params, encode_batch(params.spec, [serialization]))
    return float(_discriminative_terms(params, forward_pass, [target], None)[0][0])


class StepPrediction(NamedTuple):
    """
    Predictive distribution for one element: probabilities over the alphabet and, for each value carrying symbol,
    its mixture as (weights, means, standard deviations) in original units.
    """
    probabilities: np.ndarray
    mixtures: Mapping[str, Tuple[np.ndarray, np.ndarray, np.ndarray]]


class Trace(NamedTuple):
    hidden: np.ndarray  # (T + 1, H)
    predictions: List[StepPrediction]  # one per element


def forward(params: ModelParams, serialization: Serialization) -> Trace:
    spec = params.spec
    forward_pass = forward_batch(params, encode_batch(spec, [serialization]))
    hidden = forward_pass.hidden[:, 0]
    predictions = []
    if spec.generative:
        scaler = spec.value_scaler
        value_indices = [spec.symbols.index(symbol) for symbol in spec.value_symbols]
        for previous in hidden[:-1]:
            logits = previous @ params['W_cat'].T + params['b_cat']
            probabilities = np.exp(logits - logsumexp(logits))
            base = previous @ params['W_mix'].T + params['b_mix']
            mixtures = {}
            for symbol, index in zip(spec.value_symbols, value_indices):
                weights, means, variances = mixture_parameters(base + params['B_sym'][index],
                                                               spec.mixture_components)
                mixtures[symbol] = (weights, scaler.inverse(means), np.sqrt(variances) * scaler.scale)
            predictions.append(StepPrediction(probabilities, mixtures))
    return Trace(hidden, predictions)


def predict_class_probabilities(params: ModelParams, serializations: Sequence[Serialization]) -> np.ndarray:
    """(B, classes) P(y | h^T)"""
    if params.spec.objective != 'classification':
        raise MissingHead("Model has no classification head")
    final = _final_hidden(forward_batch(params, encode_batch(params.spec, serializations)))
    raw = final @ params['W_y'].T + params['b_y']
    return np.exp(raw - logsumexp(raw, axis=1, keepdims=True))


def predict_regression(params: ModelParams, serializations: Sequence[Serialization]) -> np.ndarray:
    """(B, target_dim) mixture means in original units"""
    spec = params.spec
    if spec.objective != 'regression':
        raise MissingHead("Model has no regression head")
    final = _final_hidden(forward_batch(params, encode_batch(spec, serializations)))
    raw = (final @ params['W_y'].T + params['b_y']).reshape(len(serializations), spec.target_dim,
                                                            3 * spec.mixture_components)
    weights, means, _ = mixture_parameters(raw, spec.mixture_components)
    standardised = np.sum(weights * means, axis=-1)
    return np.stack([scaler.inverse(standardised[:, dim]) for dim, scaler in enumerate(spec.target_scalers)], axis=1)


class RecurrentScorer:
    """
    Scores serializations with a trained generative model: log P(a).
    """

    def __init__(self, params: ModelParams):
        if not params.spec.generative:
            raise MissingHead("Scoring needs a generative model")
        self.params = params

    def log_prob(self, serialization: Serialization) -> float:
        return -sequence_nll(self.params, serialization)

    def log_probs(self, serializations: Sequence[Serialization]) -> np.ndarray:
        return -batch_nll(self.params, serializations)
