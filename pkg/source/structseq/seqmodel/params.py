import logging
from typing import Dict, Iterator, List, Literal, Mapping, Optional, Tuple

import numpy as np
import pydantic

from ..structures import BackendSpec
from .cells import Activation, make_cell

logger = logging.getLogger(__name__)

Objective = Literal['generative', 'classification', 'regression']

# Mixture log variances are clipped to this range before use.
LOG_VARIANCE_LIMIT = 10.0


class ValueScaler(pydantic.BaseModel):
    """
    Affine standardisation z = (v - mean) / scale.  Densities in original units pick up -log(scale) per value.
    """
    mean: float = 0.0
    scale: float = 1.0

    class Config:
        extra = pydantic.Extra.forbid

    @pydantic.validator('scale')
    def _positive(cls, value):  # pylint: disable=no-self-argument
        if not value > 0.0 or not np.isfinite(value):
            raise ValueError(f"scale must be positive and finite, got {value}")
        return value

    @classmethod
    def fit(cls, values) -> "ValueScaler":
        values = np.asarray(list(values), dtype=np.float64)
        if values.size == 0:
            return cls()
        std = float(values.std())
        return cls(mean=float(values.mean()), scale=std if std > 1e-12 else 1.0)

    def transform(self, values):
        return (np.asarray(values, dtype=np.float64) - self.mean) / self.scale

    def inverse(self, values):
        return np.asarray(values, dtype=np.float64) * self.scale + self.mean


class ModelSpec(pydantic.BaseModel):
    """
    Architecture of a recurrent sequence model over one alphabet.
    """
    symbols: List[str]
    value_symbols: List[str] = []
    hidden_dim: int = 16
    mixture_components: int = 2
    cell: Literal['vanilla', 'gru'] = 'vanilla'
    activation: Activation = 'logistic'
    layers: int = 1
    objective: Objective = 'generative'
    # Number of classes (classification) or target dimensions (regression).
    target_dim: int = 0
    value_scaler: ValueScaler = ValueScaler()
    target_scalers: List[ValueScaler] = []
    backend: Optional[BackendSpec] = None

    class Config:
        extra = pydantic.Extra.forbid

    @pydantic.validator('hidden_dim', 'mixture_components')
    def _at_least_one(cls, value, field):  # pylint: disable=no-self-argument
        if value < 1:
            raise ValueError(f"{field.name} must be >= 1, got {value}")
        return value

    @pydantic.validator('layers')
    def _layer_count(cls, value):  # pylint: disable=no-self-argument
        if value not in (1, 2):
            raise ValueError(f"layers must be 1 or 2, got {value}")
        return value

    @pydantic.validator('target_dim')
    def _target_dim(cls, value, values):  # pylint: disable=no-self-argument
        objective = values.get('objective')
        if objective == 'classification' and value < 2:
            raise ValueError("classification needs target_dim >= 2 classes")
        if objective == 'regression' and value < 1:
            raise ValueError("regression needs target_dim >= 1")
        return value

    @pydantic.validator('target_scalers', always=True)
    def _target_scalers(cls, value, values):  # pylint: disable=no-self-argument
        if values.get('objective') == 'regression' and not value:
            return [ValueScaler() for _ in range(values.get('target_dim') or 0)]
        return value

    @property
    def vocab_size(self) -> int:
        return len(self.symbols)

    @property
    def input_dim(self) -> int:
        return len(self.symbols) + 1

    @property
    def generative(self) -> bool:
        return self.objective == 'generative'

    def block_shapes(self) -> Dict[str, Tuple[int, ...]]:
        """
        Parameter blocks in declaration order.  Checkpoints store blocks in exactly this order.
        """
        cell = make_cell(self.cell, self.activation)
        hidden = self.hidden_dim
        shapes: Dict[str, Tuple[int, ...]] = {}
        input_dim = self.input_dim
        for layer in range(self.layers):
            shapes.update(cell.block_shapes(layer, input_dim, hidden))
            input_dim = hidden
        m = self.mixture_components
        if self.generative:
            shapes['W_cat'] = (self.vocab_size, hidden)
            shapes['b_cat'] = (self.vocab_size,)
            shapes['W_mix'] = (3 * m, hidden)
            shapes['b_mix'] = (3 * m,)
            shapes['B_sym'] = (self.vocab_size, 3 * m)
        elif self.objective == 'classification':
            shapes['W_y'] = (self.target_dim, hidden)
            shapes['b_y'] = (self.target_dim,)
        else:
            shapes['W_y'] = (3 * m * self.target_dim, hidden)
            shapes['b_y'] = (3 * m * self.target_dim,)
        return shapes


class ModelParams:
    """
    Named parameter blocks of one model.  Blocks are plain float64 arrays; the optimizer updates them in place.
    """

    def __init__(self, spec: ModelSpec, blocks: Mapping[str, np.ndarray]):
        shapes = spec.block_shapes()
        if set(blocks) != set(shapes):
            raise ValueError(f"Parameter blocks {sorted(blocks)} do not match {sorted(shapes)}")
        self.spec = spec
        self.blocks: Dict[str, np.ndarray] = {}
        for name, shape in shapes.items():
            block = np.array(blocks[name], dtype=np.float64)
            if block.shape != shape:
                raise ValueError(f"Block {name} has shape {block.shape}, expected {shape}")
            self.blocks[name] = block

    @classmethod
    def zeros(cls, spec: ModelSpec) -> "ModelParams":
        return cls(spec, {name: np.zeros(shape) for name, shape in spec.block_shapes().items()})

    @classmethod
    def initialise(cls, spec: ModelSpec, rng: np.random.Generator) -> "ModelParams":
        """
        Weight matrices uniform in +-1/sqrt(fan in); biases and the per-symbol mixture bias start at zero.
        """
        blocks = {}
        for name, shape in spec.block_shapes().items():
            if len(shape) == 2 and name != 'B_sym':
                limit = 1.0 / np.sqrt(shape[1])
                blocks[name] = rng.uniform(-limit, limit, size=shape)
            else:
                blocks[name] = np.zeros(shape)
        return cls(spec, blocks)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.blocks[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.blocks)

    def items(self):
        return self.blocks.items()

    def keys(self):
        return self.blocks.keys()

    @property
    def size(self) -> int:
        return sum(block.size for block in self.blocks.values())

    def copy(self) -> "ModelParams":
        return ModelParams(self.spec, {name: block.copy() for name, block in self.blocks.items()})

    def zeros_like(self) -> Dict[str, np.ndarray]:
        return {name: np.zeros_like(block) for name, block in self.blocks.items()}

    def flatten(self) -> np.ndarray:
        return np.concatenate([block.ravel() for block in self.blocks.values()])

    def with_flat(self, vector: np.ndarray) -> "ModelParams":
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.size,):
            raise ValueError(f"Expected a vector of {self.size} parameters, got shape {vector.shape}")
        blocks = {}
        offset = 0
        for name, block in self.blocks.items():
            blocks[name] = vector[offset:offset + block.size].reshape(block.shape).copy()
            offset += block.size
        return ModelParams(self.spec, blocks)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(block)) for block in self.blocks.values())


def flatten_grads(params: ModelParams, grads: Mapping[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([grads[name].ravel() for name in params.keys()])
