"""
Network architecture, training configuration and checkpoint types
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Annotated, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from gaitxai.core.errors import ShapeMismatch

N_CLASSES = 2
CHECKPOINT_VERSION = 1

Shape = Tuple[int, ...]


class Conv1dSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["conv1d"] = "conv1d"
    out_channels: int = Field(ge=1)
    kernel: int = Field(ge=1)
    stride: int = Field(default=1, ge=1)
    padding: int = Field(default=0, ge=0)


class ReLUSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["relu"] = "relu"


class MaxPool1dSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["maxpool1d"] = "maxpool1d"
    window: int = Field(ge=1)
    stride: int = Field(ge=1)


class GlobalAvgPoolSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["global_avg_pool"] = "global_avg_pool"


class DenseSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["dense"] = "dense"
    out_units: int = Field(ge=1)


class FlattenSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["flatten"] = "flatten"


LayerSpec = Annotated[
    Union[Conv1dSpec, ReLUSpec, MaxPool1dSpec, GlobalAvgPoolSpec, DenseSpec, FlattenSpec],
    Field(discriminator="kind"),
]

WEIGHTED_KINDS = ("conv1d", "dense")


def output_shape(spec: BaseModel, shape: Shape) -> Shape:
    """Shape produced by one layer, or ShapeMismatch when the layer cannot take `shape`"""
    kind = spec.kind
    if kind == "conv1d":
        if len(shape) != 2:
            raise ShapeMismatch(f"conv1d expects (channels, length) input, got {shape}")
        padded = shape[1] + 2 * spec.padding
        if spec.kernel > padded:
            raise ShapeMismatch(f"kernel {spec.kernel} exceeds padded input length {padded}")
        return (spec.out_channels, (padded - spec.kernel) // spec.stride + 1)
    if kind == "maxpool1d":
        if len(shape) != 2:
            raise ShapeMismatch(f"maxpool1d expects (channels, length) input, got {shape}")
        if spec.window > shape[1]:
            raise ShapeMismatch(f"pool window {spec.window} exceeds input length {shape[1]}")
        return (shape[0], (shape[1] - spec.window) // spec.stride + 1)
    if kind == "relu":
        return shape
    if kind == "global_avg_pool":
        if len(shape) != 2:
            raise ShapeMismatch(f"global_avg_pool expects (channels, length) input, got {shape}")
        return (shape[0],)
    if kind == "flatten":
        return (int(np.prod(shape)),)
    if kind == "dense":
        if len(shape) != 1:
            raise ShapeMismatch(f"dense expects a flat input, got {shape}; insert flatten or global_avg_pool")
        return (spec.out_units,)
    raise ShapeMismatch(f"unknown layer kind {kind}")


class LayerGraph(BaseModel):
    """Ordered layer chain; shapes are checked once at construction"""
    model_config = ConfigDict(frozen=True)

    input_shape: Tuple[int, int]
    layers: List[LayerSpec]

    @model_validator(mode="after")
    def _check_shapes(self) -> "LayerGraph":
        if min(self.input_shape) < 1:
            raise ShapeMismatch(f"input shape must be positive, got {self.input_shape}")
        shapes: List[Shape] = [tuple(self.input_shape)]
        for spec in self.layers:
            shapes.append(output_shape(spec, shapes[-1]))
        if shapes[-1] != (N_CLASSES,):
            raise ShapeMismatch(f"final layer must produce {N_CLASSES} logits, produces {shapes[-1]}")
        return self

    @property
    def shapes(self) -> List[Shape]:
        """Input shape of every layer followed by the output shape"""
        shapes: List[Shape] = [tuple(self.input_shape)]
        for spec in self.layers:
            shapes.append(output_shape(spec, shapes[-1]))
        return shapes


class OptimizerKind(str, Enum):
    SGD = "sgd"
    ADAM = "adam"


class InitScheme(str, Enum):
    UNIFORM_FAN_IN = "uniform_fan_in"
    ZEROS = "zeros"


class OptimizerConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: OptimizerKind = OptimizerKind.ADAM
    lr: float = Field(default=1e-3, gt=0)
    momentum: float = Field(default=0.0, ge=0, lt=1)
    beta1: float = Field(default=0.9, gt=0, lt=1)
    beta2: float = Field(default=0.999, gt=0, lt=1)
    eps: float = Field(default=1e-8, gt=0)


class TrainConfig(BaseModel):
    """Training schedule; the loss is always softmax cross-entropy"""
    model_config = ConfigDict(frozen=True)

    epochs: int = Field(default=200, ge=0)
    batch_size: int = Field(default=16, ge=1)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    init: InitScheme = InitScheme.UNIFORM_FAN_IN
    seed: int = Field(default=42, ge=0)


@dataclass(frozen=True)
class LayerParams:
    weight: np.ndarray
    bias: np.ndarray


Params = List[Optional[LayerParams]]


@dataclass(frozen=True)
class Checkpoint:
    """Immutable trained model: architecture, parameters and the run that produced them"""
    graph: LayerGraph
    params: Tuple[Optional[LayerParams], ...]
    train_config: TrainConfig
    seed: int
    final_loss: float = float("nan")
    loss_history: Tuple[float, ...] = field(default_factory=tuple)
    version: int = CHECKPOINT_VERSION
