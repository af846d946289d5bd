"""Hippocampal encoder: backbone, grid cells, DG, CA3 and CA1.

One :class:`HippocampalExpert` owns the grid → DG → CA3 → CA1 → head
stack; the dense :class:`Backbone` producing the features ``f`` is shared
by every expert of a model.
"""

import logging
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterator, List, Sequence, Tuple

import numpy as np

from .exceptions import ConfigError, DimensionError
from .models import EncoderConfig
from .tensor import (Tensor, as_tensor, concat, layer_norm, matmul, parameter, relu, sin,
                     topk_mask)

logger = logging.getLogger(__name__)


class Layer:
    """Container of named parameters and child layers"""

    def __init__(self):
        self._params: Dict[str, Tensor] = {}
        self._children: Dict[str, "Layer"] = {}

    def add_param(self, name: str, value: np.ndarray) -> Tensor:
        tensor = parameter(value, name)
        self._params[name] = tensor
        return tensor

    def add_child(self, name: str, layer: "Layer") -> "Layer":
        self._children[name] = layer
        return layer

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, tensor in self._params.items():
            yield f"{prefix}{name}", tensor
        for child_name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{child_name}.")


class Dense(Layer):
    """Affine map ``x · W + b`` (He-normal init, zero bias)"""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = self.add_param("W", rng.normal(0.0, np.sqrt(2.0 / in_dim), size=(in_dim, out_dim)))
        self.bias = self.add_param("b", np.zeros(out_dim)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = matmul(x, self.weight)
        return out + self.bias if self.bias is not None else out


class LayerNorm(Layer):
    """Learnable gain/bias initialised to 1/0"""

    def __init__(self, dim: int, eps: float):
        super().__init__()
        self.eps = eps
        self.gain = self.add_param("gain", np.ones(dim))
        self.bias = self.add_param("bias", np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, self.eps)


class Backbone(Layer):
    """Dense ReLU stack standing in for a convolutional feature extractor"""

    def __init__(self, input_dim: int, widths: Sequence[int], rng: np.random.Generator):
        super().__init__()
        self.input_dim = input_dim
        self.layers: List[Dense] = []
        previous = input_dim
        for index, width in enumerate(widths):
            self.layers.append(self.add_child(str(index), Dense(previous, width, rng)))
            previous = width

    def __call__(self, x) -> Tensor:
        """Compute backbone features f.

        Raises:
            DimensionError: If the input length differs from the configured one
        """
        x = as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise DimensionError(f"backbone expects inputs of shape (B, {self.input_dim}), got {x.shape}")
        for layer in self.layers:
            x = relu(layer(x))
        return x


class GridCellLayer(Layer):
    """M parallel sinusoidal units ``g_m = sin(W_m f + phi_m)``"""

    def __init__(self, in_dim: int, units: int, unit_dim: int, rng: np.random.Generator):
        super().__init__()
        self.weights: List[Tensor] = []
        self.phases: List[Tensor] = []
        for m in range(units):
            self.weights.append(self.add_param(f"W{m}", rng.normal(0.0, 1.0 / np.sqrt(in_dim), size=(in_dim, unit_dim))))
            self.phases.append(self.add_param(f"phi{m}", rng.uniform(0.0, 2.0 * np.pi, size=unit_dim)))

    def __call__(self, features: Tensor) -> Tensor:
        return concat([sin(matmul(features, w) + phi) for w, phi in zip(self.weights, self.phases)], axis=-1)


@dataclass
class DgCode:
    """Sparse separation codes of a batch.

    ``values`` is zero outside ``active_set``; ``pre_topk`` is the ReLU
    output z that the sparsity objective reads.
    """
    values: Tensor
    active_set: np.ndarray
    pre_topk: Tensor

    @property
    def k(self) -> int:
        return int(self.active_set.shape[-1])

    def active_sets(self) -> List[FrozenSet[int]]:
        return [frozenset(int(i) for i in row) for row in self.active_set]


@dataclass
class IntegratedCode:
    """CA1 concatenation [p_sep ; p_comp]"""
    values: Tensor
    dg_dim: int

    @property
    def separation_block(self) -> np.ndarray:
        return self.values.data[..., : self.dg_dim]

    @property
    def completion_block(self) -> np.ndarray:
        return self.values.data[..., self.dg_dim:]


class DentateGyrus(Layer):
    """``p_sep = TopK(LayerNorm(ReLU(W_DG g + b_DG)), k)``"""

    def __init__(self, in_dim: int, dg_dim: int, k: int, eps: float, rng: np.random.Generator):
        super().__init__()
        if k >= dg_dim or k < 1:
            raise ConfigError(f"DG top-k must satisfy 1 <= k < dg_dim, got k={k}, dg_dim={dg_dim}")
        self.k = k
        self.dense = self.add_child("dense", Dense(in_dim, dg_dim, rng))
        self.norm = self.add_child("norm", LayerNorm(dg_dim, eps))

    def __call__(self, g: Tensor) -> DgCode:
        z = relu(self.dense(g))
        values, active = topk_mask(self.norm(z), self.k)
        return DgCode(values=values, active_set=active, pre_topk=z)


class CA3(Layer):
    """Two-layer ReLU refinement followed by LayerNorm"""

    def __init__(self, dg_dim: int, widths: Tuple[int, int], eps: float, rng: np.random.Generator):
        super().__init__()
        self.first = self.add_child("l1", Dense(dg_dim, widths[0], rng))
        self.second = self.add_child("l2", Dense(widths[0], widths[1], rng))
        self.norm = self.add_child("norm", LayerNorm(widths[1], eps))

    def __call__(self, p_sep: Tensor) -> Tensor:
        return self.norm(relu(self.second(relu(self.first(p_sep)))))


class ExpertHead(Layer):
    """CA1 dense stack over the integrated code, then class logits"""

    def __init__(self, in_dim: int, widths: Sequence[int], n_classes: int, rng: np.random.Generator):
        super().__init__()
        self.hidden: List[Dense] = []
        previous = in_dim
        for index, width in enumerate(widths):
            self.hidden.append(self.add_child(str(index), Dense(previous, width, rng)))
            previous = width
        self.out = self.add_child("out", Dense(previous, n_classes, rng))

    def __call__(self, u: Tensor) -> Tensor:
        for layer in self.hidden:
            u = relu(layer(u))
        return self.out(u)


class HippocampalExpert(Layer):
    """One expert's trisynaptic stack on top of shared backbone features"""

    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        self.grid = self.add_child("grid", GridCellLayer(config.feature_dim, config.grid_units, config.grid_dim, rng))
        self.dg = self.add_child("dg", DentateGyrus(config.grid_out, config.dg_dim, config.k, config.layer_norm_eps, rng))
        self.ca3 = self.add_child("ca3", CA3(config.dg_dim, config.ca3_widths, config.layer_norm_eps, rng))
        self.head = self.add_child("ca1", ExpertHead(config.integrated_dim, config.ca1_widths, config.n_classes, rng))

    def grid_encode(self, features: Tensor) -> Tensor:
        return self.grid(features)

    def dg_separate(self, g: Tensor) -> DgCode:
        return self.dg(g)

    def ca3_refine(self, p_sep: Tensor) -> Tensor:
        return self.ca3(p_sep)

    def ca1_integrate(self, p_sep: Tensor, p_comp: Tensor) -> IntegratedCode:
        if p_sep.shape[:-1] != p_comp.shape[:-1]:
            raise DimensionError(f"ca1: batch shapes differ, {p_sep.shape} vs {p_comp.shape}")
        return IntegratedCode(values=concat([p_sep, p_comp], axis=-1), dg_dim=p_sep.shape[-1])

    def routing_code(self, features: Tensor) -> DgCode:
        """Grid and DG stages; every expert runs these to produce routing signals"""
        return self.dg_separate(self.grid_encode(features))

    def complete(self, p_sep: Tensor) -> Tensor:
        """CA3, CA1 and head on already separated codes; returns class logits"""
        integrated = self.ca1_integrate(p_sep, self.ca3_refine(p_sep))
        return self.head(integrated.values)

    def forward(self, features: Tensor) -> Tuple[Tensor, DgCode]:
        code = self.routing_code(features)
        return self.complete(code.values), code


def is_dg_parameter(name: str) -> bool:
    """True for W_DG, b_DG and the DG LayerNorm gain/bias"""
    return ".dg." in f".{name}"
