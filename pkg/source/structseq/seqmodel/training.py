"""
Adam training on serializations sampled on the fly.

Step n draws everything from the stream make_rng(seed, STREAM_TRAIN, n): the batch's instances, the feature drops and
the serializations.  A run resumed from a checkpoint taken after step n therefore continues exactly as the
uninterrupted run would have.
"""
import csv
import dataclasses
import logging
import math
import time
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pydantic

from ..constraints import build_constraint_matrix
from ..core import DataError, NonFiniteActivation, Serialization, StructureBackend, TrainingDiverged
from ..misc import atomic_write
from ..random import STREAM_EVAL, STREAM_INIT, STREAM_SPLIT, STREAM_TRAIN, make_rng
from ..sampler import Sampler, SamplerConfig
from ..structures import PropositionalBackend, PropositionalInstance
from ..structures.instances import DatasetItem
from .checkpoint import Checkpoint
from .model import Target, loss_and_grad
from .params import ModelParams, ModelSpec, Objective, ValueScaler

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ('step', 'train_nll', 'valid_nll', 'reg_value', 'wall_seconds')


class MissingTarget(DataError):
    pass


class TrainConfig(pydantic.BaseModel):
    lambda_: float = pydantic.Field(0.0, alias='lambda')
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    # Instances per step.
    batch: int = 32
    serializations_per_instance: int = 2
    max_steps: int = 1000
    # Gradients are clipped elementwise to [-clip, clip].
    clip: float = 5.0
    validation_fraction: float = 0.0
    valid_every: int = 100
    valid_serializations: int = 4
    max_wall_seconds: Optional[float] = None
    log_every: int = 100
    max_nonfinite_steps: int = 10
    record_wall_time: bool = False

    class Config:
        extra = pydantic.Extra.forbid
        allow_population_by_field_name = True

    @pydantic.validator('lambda_')
    def _non_negative(cls, value):  # pylint: disable=no-self-argument
        if not value >= 0.0:
            raise ValueError(f"lambda must be >= 0, got {value}")
        return value

    @pydantic.validator('learning_rate', 'epsilon', 'clip')
    def _positive(cls, value, field):  # pylint: disable=no-self-argument
        if not value > 0.0:
            raise ValueError(f"{field.name} must be > 0, got {value}")
        return value

    @pydantic.validator('beta1', 'beta2')
    def _beta(cls, value, field):  # pylint: disable=no-self-argument
        if not 0.0 <= value < 1.0:
            raise ValueError(f"{field.name} must be in [0, 1), got {value}")
        return value

    @pydantic.validator('batch', 'max_steps', 'valid_every', 'valid_serializations', 'log_every')
    def _at_least_one(cls, value, field):  # pylint: disable=no-self-argument
        if value < 1:
            raise ValueError(f"{field.name} must be >= 1, got {value}")
        return value

    @pydantic.validator('validation_fraction')
    def _fraction(cls, value):  # pylint: disable=no-self-argument
        if not 0.0 <= value < 1.0:
            raise ValueError(f"validation_fraction must be in [0, 1), got {value}")
        return value

    @pydantic.validator('serializations_per_instance')
    def _enough_serializations(cls, value, values):  # pylint: disable=no-self-argument
        if value < 1:
            raise ValueError(f"serializations_per_instance must be >= 1, got {value}")
        if values.get('lambda_', 0.0) > 0.0 and value < 2:
            raise ValueError("serializations_per_instance must be >= 2 when lambda > 0")
        return value


class TrainingExample(NamedTuple):
    instance: Any
    target: Optional[Target] = None


class MetricRow(NamedTuple):
    step: int
    train_nll: float
    valid_nll: Optional[float]
    reg_value: float
    wall_seconds: Optional[float]


def training_examples(backend: StructureBackend, items: Sequence[DatasetItem], objective: Objective
                      ) -> List[TrainingExample]:
    """
    Pair instances with targets for the objective.  Propositional records without a target use their label as the
    class, and the label is removed from the instance that gets serialized.
    """
    if objective == 'generative':
        return [TrainingExample(item.instance) for item in items]
    examples = []
    for position, item in enumerate(items):
        instance, target = item.instance, item.target
        if isinstance(instance, PropositionalInstance) and instance.label is not None:
            if target is None and objective == 'classification' and isinstance(backend, PropositionalBackend):
                if instance.label not in backend.classes:
                    raise MissingTarget(f"Instance {item.instance_id or position} has unknown class "
                                        f"'{instance.label}'")
                target = backend.classes.index(instance.label)
            instance = instance.without_label()
        if target is None:
            raise MissingTarget(f"Instance {item.instance_id or position} has no target")
        if objective == 'classification':
            if not isinstance(target, int):
                raise MissingTarget(f"Instance {item.instance_id or position} has a real valued target, "
                                    f"classification needs a class index")
        elif not isinstance(target, list):
            target = [float(target)]
        examples.append(TrainingExample(instance, target))
    return examples


def model_spec_for(backend: StructureBackend, examples: Sequence[TrainingExample], objective: Objective = 'generative',
                   **architecture) -> ModelSpec:
    """
    A model spec sized for the backend's alphabet with value and target scalers fitted on the examples.
    """
    symbols = list(backend.alphabet.symbols)
    value_symbols = [symbol for symbol in symbols if backend.alphabet.carries_value(symbol)]
    values = [value for example in examples for value in backend.instance_values(example.instance)]
    target_dim = 0
    target_scalers: List[ValueScaler] = []
    if objective == 'classification':
        target_dim = max(int(example.target) for example in examples) + 1
        if isinstance(backend, PropositionalBackend):
            target_dim = max(target_dim, len(backend.classes))
        target_dim = max(target_dim, 2)
    elif objective == 'regression':
        dims = {len(example.target) for example in examples}
        if len(dims) != 1:
            raise MissingTarget(f"Regression targets have differing dimensions {sorted(dims)}")
        target_dim = dims.pop()
        targets = np.array([example.target for example in examples], dtype=np.float64)
        target_scalers = [ValueScaler.fit(targets[:, dim]) for dim in range(target_dim)]
    return ModelSpec(symbols=symbols, value_symbols=value_symbols, objective=objective, target_dim=target_dim,
                     value_scaler=ValueScaler.fit(values), target_scalers=target_scalers,
                     backend=getattr(backend, 'spec', None), **architecture)


class Adam:
    """
    Adam with elementwise gradient clipping and bias correction.
    """

    def __init__(self, params: ModelParams, cfg: TrainConfig, first_moments: Optional[Dict[str, np.ndarray]] = None,
                 second_moments: Optional[Dict[str, np.ndarray]] = None, updates: int = 0):
        self.cfg = cfg
        self.first_moments = first_moments if first_moments is not None else params.zeros_like()
        self.second_moments = second_moments if second_moments is not None else params.zeros_like()
        self.updates = updates

    def proposed_update(self, params: ModelParams, grads: Dict[str, np.ndarray]
                        ) -> Tuple[Dict[str, np.ndarray], Dict[str, np.ndarray], Dict[str, np.ndarray]]:
        cfg = self.cfg
        updates = self.updates + 1
        blocks, first, second = {}, {}, {}
        for name, block in params.items():
            gradient = np.clip(grads[name], -cfg.clip, cfg.clip)
            first[name] = cfg.beta1 * self.first_moments[name] + (1.0 - cfg.beta1) * gradient
            second[name] = cfg.beta2 * self.second_moments[name] + (1.0 - cfg.beta2) * gradient * gradient
            first_hat = first[name] / (1.0 - cfg.beta1 ** updates)
            second_hat = second[name] / (1.0 - cfg.beta2 ** updates)
            blocks[name] = block - cfg.learning_rate * first_hat / (np.sqrt(second_hat) + cfg.epsilon)
        return blocks, first, second

    def step(self, params: ModelParams, grads: Dict[str, np.ndarray]) -> bool:
        """
        Apply one update in place.  Returns False, leaving everything untouched, if the update is not finite.
        """
        blocks, first, second = self.proposed_update(params, grads)
        if not all(np.all(np.isfinite(block)) for block in blocks.values()):
            return False
        params.blocks.update(blocks)
        self.first_moments, self.second_moments = first, second
        self.updates += 1
        return True


@dataclasses.dataclass
class TrainResult:
    checkpoint: Checkpoint
    metrics: List[MetricRow] = dataclasses.field(default_factory=list)
    train_indices: List[int] = dataclasses.field(default_factory=list)
    valid_indices: List[int] = dataclasses.field(default_factory=list)

    @property
    def params(self) -> ModelParams:
        return self.checkpoint.params


def split_examples(count: int, validation_fraction: float, seed: int) -> Tuple[List[int], List[int]]:
    if validation_fraction <= 0.0 or count < 2:
        return list(range(count)), []
    order = make_rng(seed, STREAM_SPLIT).permutation(count)
    valid_count = min(count - 1, max(1, int(round(validation_fraction * count))))
    return sorted(int(index) for index in order[valid_count:]), sorted(int(index) for index in order[:valid_count])


class Trainer:
    """
    One training run: a fixed dataset split, a fixed validation corpus and an optimizer.
    """

    def __init__(self, backend: StructureBackend, examples: Sequence[TrainingExample], cfg: TrainConfig,
                 sampler_config: SamplerConfig = SamplerConfig(), seed: int = 0):
        if not examples:
            raise DataError("Cannot train on an empty dataset")
        self.backend = backend
        self.examples = list(examples)
        self.cfg = cfg
        self.sampler = Sampler(backend, sampler_config)
        self.seed = seed
        self.train_indices, self.valid_indices = split_examples(len(self.examples), cfg.validation_fraction, seed)
        self._validation_corpus: Optional[Tuple[List[Serialization], List[Optional[Target]]]] = None

    @property
    def lam(self) -> float:
        return self.cfg.lambda_

    def validation_corpus(self) -> Tuple[List[Serialization], List[Optional[Target]]]:
        if self._validation_corpus is None:
            serializations, targets = [], []
            for index in self.valid_indices:
                rng = make_rng(self.seed, STREAM_EVAL, index)
                example = self.examples[index]
                for _ in range(self.cfg.valid_serializations):
                    serializations.append(self.sampler.sample(example.instance, rng))
                    targets.append(example.target)
            self._validation_corpus = serializations, targets
        return self._validation_corpus

    def sample_batch(self, step: int) -> Tuple[List[Serialization], List[Optional[Target]]]:
        rng = make_rng(self.seed, STREAM_TRAIN, step)
        count = len(self.train_indices)
        chosen = rng.choice(count, size=self.cfg.batch, replace=self.cfg.batch > count)
        serializations, targets = [], []
        for position in chosen:
            example = self.examples[self.train_indices[int(position)]]
            instance = self.sampler.drop_features(example.instance, rng)
            for _ in range(self.cfg.serializations_per_instance):
                serializations.append(self.sampler.sample(instance, rng))
                targets.append(example.target)
        return serializations, targets

    def validation_nll(self, params: ModelParams) -> Optional[float]:
        serializations, targets = self.validation_corpus()
        if not serializations:
            return None
        breakdown, _ = loss_and_grad(params, serializations, None, 0.0,
                                     None if params.spec.generative else targets, want_grad=False)
        return breakdown.nll / len(serializations)

    def initial_checkpoint(self, spec: ModelSpec) -> Checkpoint:
        return Checkpoint(ModelParams.initialise(spec, make_rng(self.seed, STREAM_INIT)))

    def run(self, start: Checkpoint) -> TrainResult:
        cfg = self.cfg
        params = start.params.copy()
        optimizer = Adam(params, cfg, start.first_moments, start.second_moments, start.updates)
        result = TrainResult(Checkpoint(params, start.step, start.updates), train_indices=self.train_indices,
                             valid_indices=self.valid_indices)
        generative = params.spec.generative
        started = time.monotonic()
        last_finite_step = start.step
        failures = 0

        for step in range(start.step + 1, cfg.max_steps + 1):
            if cfg.max_wall_seconds is not None and time.monotonic() - started > cfg.max_wall_seconds:
                logger.info(f"Wall clock budget of {cfg.max_wall_seconds}s used up before step {step}")
                break
            batch, targets = self.sample_batch(step)
            constraints = build_constraint_matrix(batch, self.backend)
            logger.debug(f"Step {step}: {len(batch)} serialization(s), {len(constraints)} constraint(s)")
            try:
                breakdown, grads = loss_and_grad(params, batch, constraints, self.lam,
                                                 None if generative else targets)
                finite = math.isfinite(breakdown.total) and optimizer.step(params, grads)
            except NonFiniteActivation as ex:
                logger.warning(f"Step {step}: {ex}")
                finite = False
            if not finite:
                failures += 1
                logger.warning(f"Skipped non-finite step {step} ({failures} in a row)")
                if failures > cfg.max_nonfinite_steps:
                    raise TrainingDiverged(f"{failures} consecutive non-finite steps", last_finite_step)
                continue
            failures = 0
            last_finite_step = step

            valid_nll = None
            if self.valid_indices and (step % cfg.valid_every == 0 or step == cfg.max_steps):
                valid_nll = self.validation_nll(params)
            wall_seconds = time.monotonic() - started if cfg.record_wall_time else None
            row = MetricRow(step, breakdown.nll / len(batch), valid_nll, breakdown.reg, wall_seconds)
            result.metrics.append(row)
            if step % cfg.log_every == 0:
                logger.info(f"Step {step}: train_nll={row.train_nll:.6f} valid_nll={row.valid_nll} "
                            f"reg={row.reg_value:.6f}")

        result.checkpoint = Checkpoint(params, last_finite_step, optimizer.updates, optimizer.first_moments,
                                       optimizer.second_moments)
        return result


def train(backend: StructureBackend, examples: Sequence[TrainingExample], cfg: TrainConfig,
          spec: Optional[ModelSpec] = None, sampler_config: SamplerConfig = SamplerConfig(), seed: int = 0,
          resume: Optional[Checkpoint] = None) -> TrainResult:
    """
    Train from scratch (spec) or continue a checkpoint (resume).
    """
    trainer = Trainer(backend, examples, cfg, sampler_config, seed)
    if resume is None:
        if spec is None:
            spec = model_spec_for(backend, examples)
        resume = trainer.initial_checkpoint(spec)
    logger.info(f"Training {resume.params.size} parameter(s) on {len(trainer.train_indices)} instance(s) "
                f"({len(trainer.valid_indices)} held out) from step {resume.step}")
    return trainer.run(resume)


def _format(value: Optional[float]) -> str:
    if value is None:
        return ''
    return repr(float(value))


def write_metrics(path: Union[str, Path], rows: Sequence[MetricRow], append: bool = False):
    """
    CSV with a header row.  Appending to an existing file keeps its header.
    """
    path = Path(path)
    previous = path.read_text(encoding='utf-8') if append and path.exists() else ''
    with atomic_write(path) as file:
        file.write(previous)
        writer = csv.writer(file, lineterminator='\n')
        if not previous:
            writer.writerow(METRIC_COLUMNS)
        for row in rows:
            writer.writerow([row.step, _format(row.train_nll), _format(row.valid_nll), _format(row.reg_value),
                             _format(row.wall_seconds)])
