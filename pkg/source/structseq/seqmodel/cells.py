"""
Recurrent cells over row-major batches: u is (batch, input_dim), h is (batch, hidden).  Every cell implements an
explicit backward step accumulating into a gradient dict keyed like the parameter blocks.
"""
from abc import abstractmethod
from typing import Any, Dict, Literal, Mapping, Protocol, Tuple

import numpy as np
from scipy.special import expit

Activation = Literal['logistic', 'tanh']
Blocks = Mapping[str, np.ndarray]
Grads = Dict[str, np.ndarray]


def _activate(activation: Activation, pre: np.ndarray) -> np.ndarray:
    return expit(pre) if activation == 'logistic' else np.tanh(pre)


def _activation_slope(activation: Activation, out: np.ndarray) -> np.ndarray:
    return out * (1.0 - out) if activation == 'logistic' else 1.0 - out * out


class Cell(Protocol):

    @abstractmethod
    def block_shapes(self, layer: int, input_dim: int, hidden: int) -> Dict[str, Tuple[int, ...]]:
        """Names and shapes of this layer's parameter blocks, in declaration order"""

    @abstractmethod
    def step(self, params: Blocks, layer: int, u: np.ndarray, h_prev: np.ndarray) -> Tuple[np.ndarray, Any]:
        """One time step: (h, cache)"""

    @abstractmethod
    def backward(self, params: Blocks, layer: int, cache: Any, dh: np.ndarray, grads: Grads
                 ) -> Tuple[np.ndarray, np.ndarray]:
        """Reverse of step: accumulate parameter gradients, return (du, dh_prev)"""


class VanillaCell(Cell):
    """
    h = act(W_hi u + W_hh h_prev + b_h)
    """

    def __init__(self, activation: Activation = 'logistic'):
        self.activation = activation

    def block_shapes(self, layer: int, input_dim: int, hidden: int) -> Dict[str, Tuple[int, ...]]:
        return {
            f"l{layer}.W_hi": (hidden, input_dim),
            f"l{layer}.W_hh": (hidden, hidden),
            f"l{layer}.b_h": (hidden,),
        }

    def step(self, params: Blocks, layer: int, u: np.ndarray, h_prev: np.ndarray) -> Tuple[np.ndarray, Any]:
        pre = u @ params[f"l{layer}.W_hi"].T + h_prev @ params[f"l{layer}.W_hh"].T + params[f"l{layer}.b_h"]
        h = _activate(self.activation, pre)
        return h, (u, h_prev, h)

    def backward(self, params: Blocks, layer: int, cache: Any, dh: np.ndarray, grads: Grads
                 ) -> Tuple[np.ndarray, np.ndarray]:
        u, h_prev, h = cache
        d_pre = dh * _activation_slope(self.activation, h)
        grads[f"l{layer}.W_hi"] += d_pre.T @ u
        grads[f"l{layer}.W_hh"] += d_pre.T @ h_prev
        grads[f"l{layer}.b_h"] += d_pre.sum(axis=0)
        return d_pre @ params[f"l{layer}.W_hi"], d_pre @ params[f"l{layer}.W_hh"]


class GRUCell(Cell):
    """
    z = sigmoid(W_z u + U_z h + b_z)
    r = sigmoid(W_r u + U_r h + b_r)
    n = tanh(W_n u + U_n (r * h) + b_n)
    h' = (1 - z) * n + z * h
    """

    def block_shapes(self, layer: int, input_dim: int, hidden: int) -> Dict[str, Tuple[int, ...]]:
        shapes = {}
        for gate in ('z', 'r', 'n'):
            shapes[f"l{layer}.W_{gate}"] = (hidden, input_dim)
            shapes[f"l{layer}.U_{gate}"] = (hidden, hidden)
            shapes[f"l{layer}.b_{gate}"] = (hidden,)
        return shapes

    def step(self, params: Blocks, layer: int, u: np.ndarray, h_prev: np.ndarray) -> Tuple[np.ndarray, Any]:
        prefix = f"l{layer}."
        z = expit(u @ params[prefix + 'W_z'].T + h_prev @ params[prefix + 'U_z'].T + params[prefix + 'b_z'])
        r = expit(u @ params[prefix + 'W_r'].T + h_prev @ params[prefix + 'U_r'].T + params[prefix + 'b_r'])
        reset = r * h_prev
        n = np.tanh(u @ params[prefix + 'W_n'].T + reset @ params[prefix + 'U_n'].T + params[prefix + 'b_n'])
        h = (1.0 - z) * n + z * h_prev
        return h, (u, h_prev, z, r, n, reset)

    def backward(self, params: Blocks, layer: int, cache: Any, dh: np.ndarray, grads: Grads
                 ) -> Tuple[np.ndarray, np.ndarray]:
        prefix = f"l{layer}."
        u, h_prev, z, r, n, reset = cache
        dh_prev = dh * z
        d_n_pre = dh * (1.0 - z) * (1.0 - n * n)
        d_z_pre = dh * (h_prev - n) * z * (1.0 - z)

        grads[prefix + 'W_n'] += d_n_pre.T @ u
        grads[prefix + 'U_n'] += d_n_pre.T @ reset
        grads[prefix + 'b_n'] += d_n_pre.sum(axis=0)
        d_reset = d_n_pre @ params[prefix + 'U_n']
        dh_prev += d_reset * r
        d_r_pre = d_reset * h_prev * r * (1.0 - r)

        du = d_n_pre @ params[prefix + 'W_n']
        for gate, d_pre in (('z', d_z_pre), ('r', d_r_pre)):
            grads[prefix + 'W_' + gate] += d_pre.T @ u
            grads[prefix + 'U_' + gate] += d_pre.T @ h_prev
            grads[prefix + 'b_' + gate] += d_pre.sum(axis=0)
            du += d_pre @ params[prefix + 'W_' + gate]
            dh_prev += d_pre @ params[prefix + 'U_' + gate]
        return du, dh_prev


def make_cell(kind: str, activation: Activation = 'logistic') -> Cell:
    if kind == 'vanilla':
        return VanillaCell(activation)
    if kind == 'gru':
        return GRUCell()
    raise ValueError(f"Unknown cell '{kind}'")
