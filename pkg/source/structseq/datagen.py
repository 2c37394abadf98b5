"""
Synthetic datasets.

The dynamical system is a harmonic oscillator driving a chain of two Van der Pol oscillators:

    y1'' = -|k|+ y1
    y2'' = |mu2|+ (1 - y2^2) y2' - y2 - y1
    y3'' = |mu3|+ (1 - y3^2) y3' - y3 - y2

where |.|+ is max(., 0).  It is integrated as a first order system in (y1, y2, y3, y1', y2', y3') by fixed step RK4.
"""
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pydantic

from .core import NonFiniteTrajectory
from .random import STREAM_DATAGEN, make_rng
from .structures import PropositionalInstance, SeriesInstance, SetInstance, TreeInstance, TreeNode
from .structures.instances import DatasetItem

logger = logging.getLogger(__name__)

VDP_VARIABLES = ('y1', 'y2', 'y3')
VDP_FEATURES = ('y1_0', 'y2_0', 'y3_0', 'dy1_0', 'dy2_0', 'dy3_0', 'k_offset', 'mu2_offset', 'mu3_offset')
# Input features carry k, mu2 and mu3 relative to this.
PARAMETER_OFFSET = 3.0

POSITION_RANGE = (-1.0, 1.0)
PARAMETER_RANGE = (2.0, 4.0)

PROPOSITIONAL_COLORS = ('red', 'blue')
PROPOSITIONAL_SHAPES = ('circle', 'square', 'triangle')
PROPOSITIONAL_CLASSES = ('1', '2')

LETTERS = tuple(chr(ord('A') + index) for index in range(26))


class VdpParams(pydantic.BaseModel):
    positions: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    velocities: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    k: float = 3.0
    mu2: float = 3.0
    mu3: float = 3.0
    # Number of sampled time steps, including t = 0.
    length: int = 21
    step_size: float = 0.1
    # RK4 steps per sampled step.
    substeps: int = 10

    class Config:
        extra = pydantic.Extra.forbid

    @pydantic.validator('positions', 'velocities', 'k', 'mu2', 'mu3')
    def _finite(cls, value, field):  # pylint: disable=no-self-argument
        if not np.all(np.isfinite(value)):
            raise ValueError(f"{field.name} must be finite, got {value}")
        return value

    @pydantic.validator('length')
    def _length(cls, value):  # pylint: disable=no-self-argument
        if value < 2:
            raise ValueError(f"length must be >= 2, got {value}")
        return value

    @pydantic.validator('step_size')
    def _step_size(cls, value):  # pylint: disable=no-self-argument
        if not value > 0.0 or not np.isfinite(value):
            raise ValueError(f"step_size must be positive, got {value}")
        return value

    @pydantic.validator('substeps')
    def _substeps(cls, value):  # pylint: disable=no-self-argument
        if value < 1:
            raise ValueError(f"substeps must be >= 1, got {value}")
        return value

    def features(self) -> dict:
        values = list(self.positions) + list(self.velocities) + [
            self.k - PARAMETER_OFFSET, self.mu2 - PARAMETER_OFFSET, self.mu3 - PARAMETER_OFFSET]
        return dict(zip(VDP_FEATURES, values))


def _vdp_derivative(state: np.ndarray, k: float, mu2: float, mu3: float) -> np.ndarray:
    y1, y2, y3, dy1, dy2, dy3 = state
    return np.array([
        dy1,
        dy2,
        dy3,
        -k * y1,
        mu2 * (1.0 - y2 * y2) * dy2 - y2 - y1,
        mu3 * (1.0 - y3 * y3) * dy3 - y3 - y2,
    ])


def integrate_vdp(params: VdpParams) -> np.ndarray:
    """
    (length, 6) trajectory of positions and velocities at multiples of step_size.
    """
    k, mu2, mu3 = max(params.k, 0.0), max(params.mu2, 0.0), max(params.mu3, 0.0)
    h = params.step_size / params.substeps
    state = np.array(list(params.positions) + list(params.velocities), dtype=np.float64)
    trajectory = np.empty((params.length, 6))
    trajectory[0] = state
    with np.errstate(over='ignore', invalid='ignore'):
        for step in range(1, params.length):
            for _ in range(params.substeps):
                k1 = _vdp_derivative(state, k, mu2, mu3)
                k2 = _vdp_derivative(state + 0.5 * h * k1, k, mu2, mu3)
                k3 = _vdp_derivative(state + 0.5 * h * k2, k, mu2, mu3)
                k4 = _vdp_derivative(state + h * k3, k, mu2, mu3)
                state = state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(state)):
                raise NonFiniteTrajectory(f"Integration blew up at step {step} of {params.length}")
            trajectory[step] = state
    return trajectory


def generate_vdp(params: VdpParams) -> SeriesInstance:
    """
    One series: y1, y2, y3 over params.length steps, with the nine initial condition and parameter features.
    """
    trajectory = integrate_vdp(params)
    return SeriesInstance(variables=VDP_VARIABLES, values=trajectory[:, :3].T.tolist(), features=params.features())


def sample_vdp_params(rng: np.random.Generator, length: int = 21, step_size: float = 0.1,
                      substeps: int = 10) -> VdpParams:
    low, high = POSITION_RANGE
    start = rng.uniform(low, high, size=6)
    k, mu2, mu3 = rng.uniform(*PARAMETER_RANGE, size=3)
    return VdpParams(positions=tuple(start[:3]), velocities=tuple(start[3:]), k=k, mu2=mu2, mu3=mu3, length=length,
                     step_size=step_size, substeps=substeps)


def generate_vdp_dataset(count: int, seed: int, length: int = 21, step_size: float = 0.1,
                         substeps: int = 10) -> List[DatasetItem]:
    items = []
    for index in range(count):
        params = sample_vdp_params(make_rng(seed, STREAM_DATAGEN, index), length, step_size, substeps)
        items.append(DatasetItem(generate_vdp(params), instance_id=str(index)))
    return items


def random_tree(labels: Sequence[str], max_nodes: int, rng: np.random.Generator) -> TreeNode:
    """
    Node count uniform in [1, max_nodes]; node i attaches to a uniformly chosen earlier node.
    """
    count = int(rng.integers(1, max_nodes + 1))
    node_labels = [labels[int(index)] for index in rng.integers(0, len(labels), size=count)]
    parents = [None] + [int(rng.integers(0, index)) for index in range(1, count)]
    children: List[List[int]] = [[] for _ in range(count)]
    for index, parent in enumerate(parents):
        if parent is not None:
            children[parent].append(index)

    def _build(index: int) -> TreeNode:
        return TreeNode(node_labels[index], tuple(_build(child) for child in children[index]))

    return _build(0)


def generate_random_trees(labels: Sequence[str], count: int, max_nodes: int, rng: np.random.Generator,
                          ordered: bool = False) -> List[TreeInstance]:
    if max_nodes < 1:
        raise ValueError(f"max_nodes must be >= 1, got {max_nodes}")
    if not labels:
        raise ValueError("Trees need at least one label")
    return [TreeInstance(random_tree(labels, max_nodes, rng), ordered) for _ in range(count)]


def generate_random_sets(symbols: Sequence[str], count: int, rng: np.random.Generator, min_size: int = 1,
                         max_size: Optional[int] = None) -> List[SetInstance]:
    """
    Size uniform in [min_size, max_size], members drawn without replacement.
    """
    max_size = len(symbols) if max_size is None else max_size
    if not 0 <= min_size <= max_size <= len(symbols):
        raise ValueError(f"Set sizes [{min_size}, {max_size}] impossible with {len(symbols)} symbols")
    result = []
    for _ in range(count):
        size = int(rng.integers(min_size, max_size + 1))
        chosen = rng.choice(len(symbols), size=size, replace=False)
        result.append(SetInstance(frozenset(symbols[int(index)] for index in chosen)))
    return result


def propositional_label(x1: float, color: str) -> str:
    return PROPOSITIONAL_CLASSES[0] if x1 + (0.5 if color == 'red' else -0.5) > 0.0 else PROPOSITIONAL_CLASSES[1]


def generate_propositional(count: int, rng: np.random.Generator) -> List[PropositionalInstance]:
    """
    Records with numeric x1, x2, x3 ~ N(0, 1), a color and a shape.  The label depends on x1 and the color only.
    """
    result = []
    for _ in range(count):
        x1, x2, x3 = (float(value) for value in rng.standard_normal(3))
        color = PROPOSITIONAL_COLORS[int(rng.integers(0, len(PROPOSITIONAL_COLORS)))]
        shape = PROPOSITIONAL_SHAPES[int(rng.integers(0, len(PROPOSITIONAL_SHAPES)))]
        result.append(PropositionalInstance(numeric={'x1': x1, 'x2': x2, 'x3': x3},
                                            categorical={'color': color, 'shape': shape},
                                            label=propositional_label(x1, color)))
    return result


def as_dataset(instances: Sequence) -> List[DatasetItem]:
    return [DatasetItem(instance, instance_id=str(index)) for index, instance in enumerate(instances)]
