"""
Deterministic float64 1D-CNN engine: forward pass, exact backpropagation, Adam/SGD training
and the GXAI checkpoint codec
"""

import io
import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import TypeAdapter, ValidationError

from gaitxai.core.errors import CheckpointMismatch, ConfigError, DegenerateSplit, ShapeMismatch
from gaitxai.core.monitoring import MetricType, metrics_collector
from gaitxai.models.network import (
    CHECKPOINT_VERSION,
    N_CLASSES,
    Checkpoint,
    Conv1dSpec,
    DenseSpec,
    FlattenSpec,
    GlobalAvgPoolSpec,
    InitScheme,
    LayerGraph,
    LayerParams,
    LayerSpec,
    MaxPool1dSpec,
    OptimizerKind,
    Params,
    ReLUSpec,
    TrainConfig,
)

logger = logging.getLogger(__name__)

MAGIC = b"GXAI"
DEFAULT_ARCHITECTURE = "conv:8:9:1:4,relu,maxpool:4:4,conv:16:9:1:4,relu,gap,dense:2"

_layer_adapter = TypeAdapter(LayerSpec)


# Architecture construction

def parse_architecture(text: str) -> List[LayerSpec]:
    """Parse a compact layer string such as `conv:8:9:1:4,relu,maxpool:4:4,gap,dense:2`"""
    layers: List[LayerSpec] = []
    for token in (t.strip() for t in text.split(",")):
        if not token:
            continue
        name, *args = token.split(":")
        try:
            numbers = [int(a) for a in args]
            if name == "conv":
                out_channels, kernel, *rest = numbers
                stride = rest[0] if len(rest) > 0 else 1
                padding = rest[1] if len(rest) > 1 else 0
                layers.append(Conv1dSpec(out_channels=out_channels, kernel=kernel, stride=stride, padding=padding))
            elif name == "relu" and not numbers:
                layers.append(ReLUSpec())
            elif name == "maxpool":
                window, stride = numbers
                layers.append(MaxPool1dSpec(window=window, stride=stride))
            elif name == "gap" and not numbers:
                layers.append(GlobalAvgPoolSpec())
            elif name == "flatten" and not numbers:
                layers.append(FlattenSpec())
            elif name == "dense":
                (out_units,) = numbers
                layers.append(DenseSpec(out_units=out_units))
            else:
                raise ConfigError(f"unknown layer token {token!r}")
        except (ValueError, ValidationError) as e:
            raise ConfigError(f"malformed layer token {token!r}: {e}")
    if not layers:
        raise ConfigError("architecture has no layers")
    return layers


def build_graph(input_shape: Tuple[int, int], architecture: Optional[str] = None) -> LayerGraph:
    return LayerGraph(input_shape=input_shape, layers=parse_architecture(architecture or DEFAULT_ARCHITECTURE))


def default_graph(input_shape: Tuple[int, int]) -> LayerGraph:
    return build_graph(input_shape, DEFAULT_ARCHITECTURE)


def param_shapes(graph: LayerGraph) -> List[Optional[Tuple[Tuple[int, ...], Tuple[int, ...]]]]:
    """(weight shape, bias shape) per layer, None for parameter-free layers"""
    shapes = []
    for spec, in_shape in zip(graph.layers, graph.shapes):
        if spec.kind == "conv1d":
            shapes.append(((spec.out_channels, in_shape[0], spec.kernel), (spec.out_channels,)))
        elif spec.kind == "dense":
            shapes.append(((spec.out_units, in_shape[0]), (spec.out_units,)))
        else:
            shapes.append(None)
    return shapes


def init_params(graph: LayerGraph, scheme: InitScheme = InitScheme.UNIFORM_FAN_IN, seed: int = 0) -> Params:
    """Weights uniform in ±sqrt(1/fan_in) from a seeded generator; biases start at zero"""
    rng = np.random.default_rng(seed)
    params: Params = []
    for shapes in param_shapes(graph):
        if shapes is None:
            params.append(None)
            continue
        w_shape, b_shape = shapes
        if InitScheme(scheme) is InitScheme.ZEROS:
            weight = np.zeros(w_shape)
        else:
            fan_in = int(np.prod(w_shape[1:]))
            bound = np.sqrt(1.0 / fan_in)
            weight = rng.uniform(-bound, bound, size=w_shape)
        params.append(LayerParams(weight=weight, bias=np.zeros(b_shape)))
    return params


# Convolution as a strided linear map

def _im2col(x: np.ndarray, kernel: int, stride: int, padding: int) -> np.ndarray:
    """(N, C, L) -> (N, C, L_out, kernel) windows over the zero-padded input"""
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding)))
    return sliding_window_view(xp, kernel, axis=2)[:, :, ::stride, :]


def _col2im(cols: np.ndarray, length: int, stride: int, padding: int) -> np.ndarray:
    """Adjoint of _im2col: accumulate window gradients back onto the unpadded input"""
    n, c, l_out, kernel = cols.shape
    padded = np.zeros((n, c, length + 2 * padding))
    span = stride * (l_out - 1) + 1
    for k in range(kernel):
        padded[:, :, k:k + span:stride] += cols[:, :, :, k]
    return padded[:, :, padding:padding + length]


def conv1d_apply(x: np.ndarray, weight: np.ndarray, stride: int, padding: int) -> np.ndarray:
    """Bias-free convolution (cross-correlation): (N, C, L) x (O, C, K) -> (N, O, L_out)"""
    cols = _im2col(x, weight.shape[2], stride, padding)
    return np.tensordot(cols, weight, axes=([1, 3], [1, 2])).transpose(0, 2, 1)


def conv1d_transpose(s: np.ndarray, weight: np.ndarray, length: int, stride: int, padding: int) -> np.ndarray:
    """Adjoint of conv1d_apply with respect to its input: (N, O, L_out) -> (N, C, L)"""
    cols = np.tensordot(s, weight, axes=([1], [0])).transpose(0, 2, 1, 3)
    return _col2im(cols, length, stride, padding)


def _pool_windows(x: np.ndarray, window: int, stride: int) -> np.ndarray:
    return sliding_window_view(x, window, axis=2)[:, :, ::stride, :]


def maxpool_winners(x: np.ndarray, window: int, stride: int) -> np.ndarray:
    """Offset of the first maximum inside every pooling window"""
    return _pool_windows(x, window, stride).argmax(axis=-1)


def maxpool_route(values: np.ndarray, winners: np.ndarray, length: int, window: int, stride: int) -> np.ndarray:
    """Send every pooled value back to its window's winning position"""
    n, c, l_out = values.shape
    routed = np.zeros((n, c, length))
    span = stride * (l_out - 1) + 1
    for w in range(window):
        routed[:, :, w:w + span:stride] += np.where(winners == w, values, 0.0)
    return routed


# Forward and backward

def _layer_forward(spec, p: Optional[LayerParams], x: np.ndarray) -> np.ndarray:
    kind = spec.kind
    if kind == "conv1d":
        return conv1d_apply(x, p.weight, spec.stride, spec.padding) + p.bias[None, :, None]
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "maxpool1d":
        return _pool_windows(x, spec.window, spec.stride).max(axis=-1)
    if kind == "global_avg_pool":
        return x.mean(axis=2)
    if kind == "flatten":
        return x.reshape(x.shape[0], -1)
    if kind == "dense":
        return x @ p.weight.T + p.bias
    raise ShapeMismatch(f"unknown layer kind {kind}")


def forward_batch(graph: LayerGraph, params: Sequence[Optional[LayerParams]],
                  x: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Logits (N, 2) and the trace: the input of every layer followed by the logits"""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or tuple(x.shape[1:]) != tuple(graph.input_shape):
        raise ShapeMismatch(f"expected input (N, {graph.input_shape[0]}, {graph.input_shape[1]}), got {x.shape}")
    trace = [x]
    for spec, p in zip(graph.layers, params):
        trace.append(_layer_forward(spec, p, trace[-1]))
    return trace[-1], trace


def forward(graph: LayerGraph, params: Sequence[Optional[LayerParams]],
            x: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Single-sample forward pass; the trace keeps each layer's input (batch axis of length 1)"""
    x = np.asarray(x, dtype=np.float64)
    if tuple(x.shape) != tuple(graph.input_shape):
        raise ShapeMismatch(f"expected input {tuple(graph.input_shape)}, got {tuple(x.shape)}")
    logits, trace = forward_batch(graph, params, x[None])
    return logits[0], trace


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_sum_exp(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1)
    return m + np.log(np.exp(logits - m[..., None]).sum(axis=-1))


def loss(logits: np.ndarray, label: int) -> float:
    """Softmax cross-entropy, -log softmax(logits)[label]"""
    logits = np.asarray(logits, dtype=np.float64)
    return float(max(log_sum_exp(logits) - logits[label], 0.0))


def batch_losses(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    return np.maximum(log_sum_exp(logits) - logits[np.arange(len(labels)), labels], 0.0)


@dataclass
class Gradients:
    params: List[Optional[LayerParams]]
    input: np.ndarray
    logits: np.ndarray


def _layer_backward(spec, p: Optional[LayerParams], x: np.ndarray,
                    g: np.ndarray) -> Tuple[np.ndarray, Optional[LayerParams]]:
    kind = spec.kind
    if kind == "conv1d":
        cols = _im2col(x, spec.kernel, spec.stride, spec.padding)
        d_weight = np.tensordot(g, cols, axes=([0, 2], [0, 2]))
        d_bias = g.sum(axis=(0, 2))
        dx = conv1d_transpose(g, p.weight, x.shape[2], spec.stride, spec.padding)
        return dx, LayerParams(weight=d_weight, bias=d_bias)
    if kind == "relu":
        return g * (x > 0), None
    if kind == "maxpool1d":
        winners = maxpool_winners(x, spec.window, spec.stride)
        return maxpool_route(g, winners, x.shape[2], spec.window, spec.stride), None
    if kind == "global_avg_pool":
        return np.repeat(g[:, :, None] / x.shape[2], x.shape[2], axis=2), None
    if kind == "flatten":
        return g.reshape(x.shape), None
    if kind == "dense":
        return g @ p.weight, LayerParams(weight=g.T @ x, bias=g.sum(axis=0))
    raise ShapeMismatch(f"unknown layer kind {kind}")


def backward_batch(graph: LayerGraph, params: Sequence[Optional[LayerParams]],
                   trace: List[np.ndarray], labels: np.ndarray) -> Gradients:
    """Gradients of the summed batch loss"""
    labels = np.asarray(labels, dtype=np.int64)
    logits = trace[-1]
    g = softmax(logits)
    g[np.arange(len(labels)), labels] -= 1.0
    logit_grad = g.copy()
    grads: List[Optional[LayerParams]] = [None] * len(graph.layers)
    for index in range(len(graph.layers) - 1, -1, -1):
        g, grads[index] = _layer_backward(graph.layers[index], params[index], trace[index], g)
    return Gradients(params=grads, input=g, logits=logit_grad)


def backward(graph: LayerGraph, params: Sequence[Optional[LayerParams]],
             trace: List[np.ndarray], label: int) -> Gradients:
    """Exact gradients of the single-sample loss for a trace produced by `forward`"""
    grads = backward_batch(graph, params, trace, np.asarray([label]))
    return Gradients(params=grads.params, input=grads.input[0], logits=grads.logits[0])


# Training

class _Optimizer:
    def __init__(self, config: TrainConfig, params: Params):
        self.config = config.optimizer
        self.step_count = 0
        self.state = [
            None if p is None else (
                LayerParams(weight=np.zeros_like(p.weight), bias=np.zeros_like(p.bias)),
                LayerParams(weight=np.zeros_like(p.weight), bias=np.zeros_like(p.bias)),
            )
            for p in params
        ]

    def step(self, params: Params, grads: List[Optional[LayerParams]]) -> None:
        self.step_count += 1
        cfg = self.config
        for p, g, state in zip(params, grads, self.state):
            if p is None:
                continue
            first, second = state
            for name in ("weight", "bias"):
                value, grad = getattr(p, name), getattr(g, name)
                if cfg.kind is OptimizerKind.ADAM:
                    m, v = getattr(first, name), getattr(second, name)
                    m *= cfg.beta1
                    m += (1.0 - cfg.beta1) * grad
                    v *= cfg.beta2
                    v += (1.0 - cfg.beta2) * grad * grad
                    m_hat = m / (1.0 - cfg.beta1 ** self.step_count)
                    v_hat = v / (1.0 - cfg.beta2 ** self.step_count)
                    value -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
                else:
                    velocity = getattr(first, name)
                    velocity *= cfg.momentum
                    velocity -= cfg.lr * grad
                    value += velocity


def _freeze(params: Params) -> Tuple[Optional[LayerParams], ...]:
    frozen = []
    for p in params:
        if p is None:
            frozen.append(None)
            continue
        weight, bias = p.weight.copy(), p.bias.copy()
        weight.setflags(write=False)
        bias.setflags(write=False)
        frozen.append(LayerParams(weight=weight, bias=bias))
    return tuple(frozen)


def mean_loss(graph: LayerGraph, params: Sequence[Optional[LayerParams]], x: np.ndarray, y: np.ndarray) -> float:
    logits, _ = forward_batch(graph, params, x)
    return float(batch_losses(logits, np.asarray(y)).mean())


def train(graph: LayerGraph, x: np.ndarray, y: np.ndarray, config: TrainConfig,
          tag: str = "") -> Checkpoint:
    """Mini-batch training on mean batch loss; deterministic for fixed (data order, config)"""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0 or len(np.unique(y)) < N_CLASSES:
        raise DegenerateSplit(f"training split needs both classes, got labels {sorted(set(y.tolist()))}")
    if x.ndim != 3 or tuple(x.shape[1:]) != tuple(graph.input_shape):
        raise ShapeMismatch(f"training inputs {x.shape} do not match graph input {tuple(graph.input_shape)}")

    params = init_params(graph, config.init, config.seed)
    optimizer = _Optimizer(config, params)
    shuffle_rng = np.random.default_rng([config.seed, 1])
    n = len(y)
    history: List[float] = []
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            logits, trace = forward_batch(graph, params, x[batch])
            epoch_loss += float(batch_losses(logits, y[batch]).sum())
            grads = backward_batch(graph, params, trace, y[batch])
            scale = 1.0 / len(batch)
            for g in grads.params:
                if g is not None:
                    g.weight[...] *= scale
                    g.bias[...] *= scale
            optimizer.step(params, grads.params)
        history.append(epoch_loss / n)
        metrics_collector.record_metric(MetricType.EPOCH_LOSS, history[-1], epoch=epoch, run=tag)
        logger.debug(f"[{tag}] epoch {epoch + 1}/{config.epochs} loss {history[-1]:.6f}")
        if (epoch + 1) % 10 == 0 or epoch + 1 == config.epochs:
            logger.info(f"[{tag}] epoch {epoch + 1}/{config.epochs}: mean training loss {history[-1]:.4f}")

    final = mean_loss(graph, params, x, y)
    return Checkpoint(
        graph=graph,
        params=_freeze(params),
        train_config=config,
        seed=config.seed,
        final_loss=final,
        loss_history=tuple(history),
    )


def _as_array(x) -> np.ndarray:
    channels = getattr(x, "channels", x)
    return np.asarray(channels, dtype=np.float64)


def predict(checkpoint: Checkpoint, x) -> Tuple[int, np.ndarray]:
    """Class index and softmax probabilities; equal logits resolve to class 0"""
    logits, _ = forward(checkpoint.graph, checkpoint.params, _as_array(x))
    return predict_from_logits(logits)


def predict_from_logits(logits: np.ndarray) -> Tuple[int, np.ndarray]:
    # argmax returns the first maximum, which is the class-0 tie rule
    return int(np.argmax(logits)), softmax(np.asarray(logits, dtype=np.float64))


def predict_batch(checkpoint: Checkpoint, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    logits, _ = forward_batch(checkpoint.graph, checkpoint.params, x)
    return np.argmax(logits, axis=1), softmax(logits)


def accuracy(checkpoint: Checkpoint, x: np.ndarray, y: np.ndarray) -> float:
    predicted, _ = predict_batch(checkpoint, x)
    return float((predicted == np.asarray(y)).mean())


# Checkpoint codec: magic, u16 version, u32 record count, length-prefixed UTF-8
# records, then little-endian float64 weight/bias blocks in layer order

def _records(checkpoint: Checkpoint) -> List[str]:
    graph = checkpoint.graph
    records = [f"input_shape={graph.input_shape[0]},{graph.input_shape[1]}"]
    for spec in graph.layers:
        records.append("layer=" + json.dumps(spec.model_dump(mode="json"), sort_keys=True, separators=(",", ":")))
    records.append("train_config=" + json.dumps(checkpoint.train_config.model_dump(mode="json"),
                                                sort_keys=True, separators=(",", ":")))
    records.append(f"seed={checkpoint.seed}")
    records.append(f"final_loss={checkpoint.final_loss!r}")
    records.append("loss_history=" + json.dumps(list(checkpoint.loss_history), separators=(",", ":")))
    return records


def serialize(checkpoint: Checkpoint) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<H", checkpoint.version))
    records = _records(checkpoint)
    out.write(struct.pack("<I", len(records)))
    for record in records:
        data = record.encode("utf-8")
        out.write(struct.pack("<I", len(data)))
        out.write(data)
    for p in checkpoint.params:
        if p is None:
            continue
        out.write(np.ascontiguousarray(p.weight, dtype="<f8").tobytes())
        out.write(np.ascontiguousarray(p.bias, dtype="<f8").tobytes())
    return out.getvalue()


def deserialize(data: bytes) -> Checkpoint:
    if len(data) < 10 or data[:4] != MAGIC:
        raise CheckpointMismatch("not a GXAI checkpoint (bad magic)")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointMismatch(f"unsupported checkpoint version {version}")
    (count,) = struct.unpack_from("<I", data, 6)
    offset = 10
    fields = {"layer": []}
    try:
        for _ in range(count):
            (length,) = struct.unpack_from("<I", data, offset)
            offset += 4
            record = data[offset:offset + length].decode("utf-8")
            offset += length
            key, value = record.split("=", 1)
            if key == "layer":
                fields["layer"].append(_layer_adapter.validate_python(json.loads(value)))
            else:
                fields[key] = value
        input_shape = tuple(int(v) for v in fields["input_shape"].split(","))
        graph = LayerGraph(input_shape=input_shape, layers=fields["layer"])
        train_config = TrainConfig.model_validate(json.loads(fields["train_config"]))
        seed = int(fields["seed"])
        final_loss = float(fields["final_loss"])
        loss_history = tuple(float(v) for v in json.loads(fields["loss_history"]))
    except (KeyError, ValueError, struct.error, UnicodeDecodeError, ValidationError, ShapeMismatch) as e:
        raise CheckpointMismatch(f"corrupt checkpoint header: {e}")

    params: List[Optional[LayerParams]] = []
    for shapes in param_shapes(graph):
        if shapes is None:
            params.append(None)
            continue
        arrays = []
        for shape in shapes:
            count_values = int(np.prod(shape))
            if offset + 8 * count_values > len(data):
                raise CheckpointMismatch("checkpoint parameter block is truncated")
            block = np.frombuffer(data, dtype="<f8", count=count_values, offset=offset)
            arrays.append(block.astype(np.float64).reshape(shape))
            offset += 8 * count_values
        params.append(LayerParams(weight=arrays[0], bias=arrays[1]))
    if offset != len(data):
        raise CheckpointMismatch(f"checkpoint has {len(data) - offset} trailing bytes")
    return Checkpoint(
        graph=graph,
        params=_freeze(params),
        train_config=train_config,
        seed=seed,
        final_loss=final_loss,
        loss_history=loss_history,
        version=version,
    )


def save_checkpoint(checkpoint: Checkpoint, target: Union[str, Path, BinaryIO]) -> None:
    data = serialize(checkpoint)
    if isinstance(target, (str, Path)):
        Path(target).write_bytes(data)
    else:
        target.write(data)


def load_checkpoint(source: Union[str, Path]) -> Checkpoint:
    path = Path(source)
    if not path.is_file():
        raise CheckpointMismatch(f"checkpoint not found: {path}")
    return deserialize(path.read_bytes())
