"""
Layer-wise relevance propagation over nn_engine traces.

Weighted layers are handled by one redistribution routine parameterized by the layer's
linear map (forward) and its adjoint (backward): dense layers use the weight matrix,
convolutions use the im2col map. Each weighted layer also reports how much relevance
its bias and stabilizer absorbed so conservation can be checked on biased networks.
"""

import logging
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from gaitxai.core.errors import EmptyGroup, MissingInput, ShapeMismatch
from gaitxai.core.monitoring import MetricType, metrics_collector
from gaitxai.models.explanation import LrpConfig, LrpRule, RelevanceGrouping, RelevanceMap, TargetConvention
from gaitxai.models.gait import InputSample
from gaitxai.models.network import Checkpoint, Conv1dSpec, LayerParams, MaxPool1dSpec
from gaitxai.services.nn_engine import (
    conv1d_apply,
    conv1d_transpose,
    forward_batch,
    maxpool_route,
    maxpool_winners,
)

logger = logging.getLogger(__name__)

LinearMap = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _stabilized(z: np.ndarray, epsilon: float) -> np.ndarray:
    # sign(0) counts as +1 so a zero pre-activation still gets +epsilon
    return z + epsilon * np.where(z >= 0, 1.0, -1.0)


def _safe_divide(numerator: np.ndarray, denominator: np.ndarray) -> np.ndarray:
    """numerator / denominator with 0 wherever the denominator is exactly 0"""
    return np.divide(numerator, denominator, out=np.zeros_like(numerator), where=denominator != 0)


def _sum_per_sample(values: np.ndarray) -> np.ndarray:
    return values.reshape(values.shape[0], -1).sum(axis=1)


def _redistribute(a: np.ndarray, weight: np.ndarray, bias_view: np.ndarray, R_out: np.ndarray,
                  fwd: LinearMap, bwd: LinearMap, config: LrpConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Batched relevance for one weighted layer; returns (R_in, absorbed relevance per sample)"""
    if config.rule is LrpRule.EPSILON:
        z = fwd(a, weight) + bias_view
        denominator = _stabilized(z, config.epsilon)
        s = _safe_divide(R_out, denominator)
        absorbed = (bias_view + (denominator - z)) * s
        return a * bwd(s, weight), _sum_per_sample(absorbed)

    a_pos, a_neg = np.maximum(a, 0.0), np.minimum(a, 0.0)
    w_pos, w_neg = np.maximum(weight, 0.0), np.minimum(weight, 0.0)
    b_pos, b_neg = np.maximum(bias_view, 0.0), np.minimum(bias_view, 0.0)

    z_pos = fwd(a_pos, w_pos) + fwd(a_neg, w_neg) + b_pos
    z_neg = fwd(a_pos, w_neg) + fwd(a_neg, w_pos) + b_neg
    s_pos = _safe_divide(R_out, z_pos)
    s_neg = _safe_divide(R_out, z_neg)
    R_in = config.alpha * (a_pos * bwd(s_pos, w_pos) + a_neg * bwd(s_pos, w_neg))
    if config.beta:
        R_in = R_in - config.beta * (a_pos * bwd(s_neg, w_neg) + a_neg * bwd(s_neg, w_pos))
    absorbed = config.alpha * b_pos * s_pos - config.beta * b_neg * s_neg
    return R_in, _sum_per_sample(absorbed)


def _dense_batch(p: LayerParams, a: np.ndarray, R_out: np.ndarray,
                 config: LrpConfig) -> Tuple[np.ndarray, np.ndarray]:
    return _redistribute(
        a, p.weight, p.bias[None, :], R_out,
        fwd=lambda x, w: x @ w.T,
        bwd=lambda s, w: s @ w,
        config=config,
    )


def _conv_batch(spec: Conv1dSpec, p: LayerParams, a: np.ndarray, R_out: np.ndarray,
                config: LrpConfig) -> Tuple[np.ndarray, np.ndarray]:
    length = a.shape[2]
    return _redistribute(
        a, p.weight, p.bias[None, :, None], R_out,
        fwd=lambda x, w: conv1d_apply(x, w, spec.stride, spec.padding),
        bwd=lambda s, w: conv1d_transpose(s, w, length, spec.stride, spec.padding),
        config=config,
    )


def _global_avg_pool_batch(a: np.ndarray, R_out: np.ndarray) -> np.ndarray:
    total = a.sum(axis=2, keepdims=True)
    share = np.divide(a, total, out=np.full_like(a, 1.0 / a.shape[2]), where=total != 0)
    return share * R_out[:, :, None]


def _maxpool_batch(spec: MaxPool1dSpec, a: np.ndarray, R_out: np.ndarray) -> np.ndarray:
    winners = maxpool_winners(a, spec.window, spec.stride)
    return maxpool_route(R_out, winners, a.shape[2], spec.window, spec.stride)


def _check_layer_shapes(p: LayerParams, a: np.ndarray, R_out: np.ndarray, in_axis: int) -> None:
    if p.weight.shape[0] != R_out.shape[0] or p.bias.shape != (p.weight.shape[0],):
        raise ShapeMismatch(f"weights {p.weight.shape} / bias {p.bias.shape} do not match relevance {R_out.shape}")
    if p.weight.shape[in_axis] != a.shape[0]:
        raise ShapeMismatch(f"weights {p.weight.shape} do not match activations {a.shape}")


def lrp_dense(weights: np.ndarray, bias: np.ndarray, a: np.ndarray, R_out: np.ndarray,
              config: Optional[LrpConfig] = None) -> np.ndarray:
    """Relevance of a dense layer's inputs; weights are (out, in)"""
    p = LayerParams(weight=np.asarray(weights, dtype=np.float64), bias=np.asarray(bias, dtype=np.float64))
    a = np.asarray(a, dtype=np.float64)
    R_out = np.asarray(R_out, dtype=np.float64)
    if p.weight.ndim != 2 or a.ndim != 1 or R_out.ndim != 1:
        raise ShapeMismatch("lrp_dense expects 2-D weights and 1-D activations and relevance")
    _check_layer_shapes(p, a, R_out, in_axis=1)
    R_in, _ = _dense_batch(p, a[None], R_out[None], config or LrpConfig())
    return R_in[0]


def lrp_conv(spec: Conv1dSpec, params: LayerParams, a: np.ndarray, R_out: np.ndarray,
             config: Optional[LrpConfig] = None) -> np.ndarray:
    """Relevance of a convolution's inputs, treating it as its equivalent sparse linear map"""
    a = np.asarray(a, dtype=np.float64)
    R_out = np.asarray(R_out, dtype=np.float64)
    if a.ndim != 2 or R_out.ndim != 2 or params.weight.ndim != 3:
        raise ShapeMismatch("lrp_conv expects (C, L) activations, (O, L_out) relevance and (O, C, K) weights")
    _check_layer_shapes(params, a, R_out, in_axis=1)
    expected = conv1d_apply(a[None], params.weight, spec.stride, spec.padding).shape[1:]
    if expected != R_out.shape:
        raise ShapeMismatch(f"relevance {R_out.shape} does not match conv output {expected}")
    R_in, _ = _conv_batch(spec, params, a[None], R_out[None], config or LrpConfig())
    return R_in[0]


def lrp_pool(spec, a: np.ndarray, R_out: np.ndarray) -> np.ndarray:
    """Max pooling sends relevance to the window winner; global average pooling shares it
    in proportion to activation, uniformly when the channel sums to zero"""
    a = np.asarray(a, dtype=np.float64)
    R_out = np.asarray(R_out, dtype=np.float64)
    if spec.kind == "maxpool1d":
        return _maxpool_batch(spec, a[None], R_out[None])[0]
    if spec.kind == "global_avg_pool":
        return _global_avg_pool_batch(a[None], R_out[None])[0]
    raise ShapeMismatch(f"lrp_pool does not handle {spec.kind} layers")


def propagate(checkpoint: Checkpoint, trace: List[np.ndarray], R: np.ndarray,
              config: LrpConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Run relevance from the logits back to the input; returns (R_input, absorbed per sample)"""
    absorbed = np.zeros(R.shape[0])
    for index in range(len(checkpoint.graph.layers) - 1, -1, -1):
        spec = checkpoint.graph.layers[index]
        p = checkpoint.params[index]
        a = trace[index]
        if spec.kind == "dense":
            R, taken = _dense_batch(p, a, R, config)
            absorbed += taken
        elif spec.kind == "conv1d":
            R, taken = _conv_batch(spec, p, a, R, config)
            absorbed += taken
        elif spec.kind == "maxpool1d":
            R = _maxpool_batch(spec, a, R)
        elif spec.kind == "global_avg_pool":
            R = _global_avg_pool_batch(a, R)
        elif spec.kind == "flatten":
            R = R.reshape(a.shape)
        # ReLU passes relevance through unchanged
    return R, absorbed


def _inputs(samples: Sequence[Union[InputSample, np.ndarray]]) -> np.ndarray:
    return np.stack([np.asarray(getattr(s, "channels", s), dtype=np.float64) for s in samples])


def explain_batch(checkpoint: Checkpoint, samples: Sequence[InputSample],
                  config: Optional[LrpConfig] = None,
                  target_classes: Optional[Sequence[int]] = None,
                  tag: str = "") -> List[RelevanceMap]:
    """Relevance maps for many samples in one batched pass"""
    config = config or LrpConfig()
    if not samples:
        return []
    x = _inputs(samples)
    logits, trace = forward_batch(checkpoint.graph, checkpoint.params, x)
    if target_classes is not None:
        targets = np.asarray(target_classes, dtype=np.int64)
    elif config.target is TargetConvention.PREDICTED:
        targets = np.argmax(logits, axis=1)
    else:
        predicted = np.argmax(logits, axis=1)
        # raw arrays carry no label and fall back to the predicted class
        targets = np.asarray([getattr(s, "label", predicted[i]) for i, s in enumerate(samples)], dtype=np.int64)

    rows = np.arange(len(samples))
    scores = logits[rows, targets]
    R_top = np.zeros_like(logits)
    R_top[rows, targets] = scores
    R_in, absorbed = propagate(checkpoint, trace, R_top, config)

    maps = []
    for i, sample in enumerate(samples):
        R = R_in[i].copy()
        R.setflags(write=False)
        maps.append(RelevanceMap(
            origin=getattr(sample, "origin", ("", "")),
            label=int(getattr(sample, "label", targets[i])),
            target_class=int(targets[i]),
            R=R,
            output_score=float(scores[i]),
            channel_names=tuple(getattr(sample, "channel_names", ())),
            absorbed=float(absorbed[i]),
        ))
    worst = max(abs(m.unaccounted) / max(abs(m.output_score), 1e-12) for m in maps)
    metrics_collector.record_metric(MetricType.CONSERVATION_RESIDUAL, worst, run=tag, n_maps=len(maps))
    logger.debug(f"[{tag}] explained {len(maps)} samples, worst relative unaccounted relevance {worst:.3g}")
    return maps


def explain(checkpoint: Checkpoint, x: InputSample, target_class: Optional[int] = None,
            config: Optional[LrpConfig] = None) -> RelevanceMap:
    """Relevance map for one sample, starting from the target logit with the other logit masked"""
    channels = np.asarray(getattr(x, "channels", x), dtype=np.float64)
    if tuple(channels.shape) != tuple(checkpoint.graph.input_shape):
        raise ShapeMismatch(f"expected input {tuple(checkpoint.graph.input_shape)}, got {tuple(channels.shape)}")
    targets = None if target_class is None else [target_class]
    return explain_batch(checkpoint, [x], config, targets)[0]


# Aggregation

def average_relevance(maps: Sequence[RelevanceMap],
                      by: RelevanceGrouping = RelevanceGrouping.TARGET) -> Dict[int, np.ndarray]:
    """Element-wise mean map per class"""
    groups: Dict[int, List[np.ndarray]] = {0: [], 1: []}
    shape = None
    for m in maps:
        if shape is None:
            shape = m.R.shape
        elif m.R.shape != shape:
            raise ShapeMismatch(f"relevance maps differ in shape: {shape} vs {m.R.shape}")
        key = m.target_class if RelevanceGrouping(by) is RelevanceGrouping.TARGET else m.label
        groups[key].append(m.R)
    for cls, members in groups.items():
        if not members:
            raise EmptyGroup(f"no relevance maps for class {cls}")
    return {cls: np.mean(np.stack(members), axis=0) for cls, members in groups.items()}


def total_relevance(mean_class0: np.ndarray, mean_class1: np.ndarray) -> np.ndarray:
    """|mean_0| + |mean_1| per input node"""
    mean_class0 = np.asarray(mean_class0, dtype=np.float64)
    mean_class1 = np.asarray(mean_class1, dtype=np.float64)
    if mean_class0.shape != mean_class1.shape:
        raise ShapeMismatch(f"class means differ in shape: {mean_class0.shape} vs {mean_class1.shape}")
    return np.abs(mean_class0) + np.abs(mean_class1)


def normalize_for_display(*curves: np.ndarray) -> List[np.ndarray]:
    """Scale curves jointly into [-1, 1] by their shared max |r|; an all-zero set stays zero"""
    arrays = [np.asarray(c, dtype=np.float64) for c in curves]
    peak = max((float(np.abs(c).max()) for c in arrays if c.size), default=0.0)
    if peak == 0.0:
        return [np.zeros_like(c) for c in arrays]
    return [c / peak for c in arrays]


# CSV exports

def _long_rows(R: np.ndarray, channel_names: Sequence[str]) -> Tuple[List[str], np.ndarray, np.ndarray]:
    names = list(channel_names) or [str(i) for i in range(R.shape[0])]
    channel = np.repeat(names, R.shape[1]).tolist()
    node = np.tile(np.arange(R.shape[1]), R.shape[0])
    return channel, node, R.reshape(-1)


def relevance_frame(maps: Sequence[RelevanceMap]) -> pd.DataFrame:
    """One row per (map, input node)"""
    frames = []
    for m in maps:
        channel, node, values = _long_rows(m.R, m.channel_names)
        frames.append(pd.DataFrame({
            "subject_id": m.origin[0],
            "trial_id": m.origin[1],
            "target_class": m.target_class,
            "channel": channel,
            "node_index": node,
            "relevance": values,
        }))
    columns = ["subject_id", "trial_id", "target_class", "channel", "node_index", "relevance"]
    if not frames:
        return pd.DataFrame(columns=columns)
    return pd.concat(frames, ignore_index=True)[columns]


def relevance_maps_to_csv(maps: Sequence[RelevanceMap], path: Union[str, Path]) -> None:
    relevance_frame(maps).to_csv(path, index=False, lineterminator="\n")


def read_relevance_csv(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path, dtype={"subject_id": str, "trial_id": str, "channel": str},
                       float_precision="round_trip")


def write_mean_relevance(means: Dict[int, np.ndarray], channel_names: Sequence[str],
                         path: Union[str, Path]) -> None:
    frames = []
    for cls in sorted(means):
        channel, node, values = _long_rows(means[cls], channel_names)
        frames.append(pd.DataFrame({"class": cls, "channel": channel, "node_index": node, "relevance": values}))
    pd.concat(frames, ignore_index=True).to_csv(path, index=False, lineterminator="\n")


def write_total_relevance(total: np.ndarray, channel_names: Sequence[str], path: Union[str, Path]) -> None:
    channel, node, values = _long_rows(total, channel_names)
    frame = pd.DataFrame({"channel": channel, "node_index": node, "relevance": values})
    frame.to_csv(path, index=False, lineterminator="\n")


def _wide(frame: pd.DataFrame, channel_names: Sequence[str], source: Union[str, Path]) -> np.ndarray:
    rows = []
    for name in channel_names:
        part = frame[frame["channel"] == name].sort_values("node_index")
        if part.empty:
            raise MissingInput(f"{source} has no relevance for input channel {name!r}; rerun explain")
        rows.append(part["relevance"].to_numpy(dtype=np.float64))
    if len({len(r) for r in rows}) != 1:
        raise MissingInput(f"{source} holds channels of unequal length")
    return np.stack(rows)


def read_mean_relevance(path: Union[str, Path], channel_names: Sequence[str]) -> Dict[int, np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise MissingInput(f"mean relevance not found: {path}; run explain first")
    frame = pd.read_csv(path, dtype={"channel": str}, float_precision="round_trip")
    return {cls: _wide(frame[frame["class"] == cls], channel_names, path) for cls in (0, 1)}


def read_total_relevance(path: Union[str, Path], channel_names: Sequence[str]) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise MissingInput(f"total relevance not found: {path}; run explain first")
    return _wide(pd.read_csv(path, dtype={"channel": str}, float_precision="round_trip"), channel_names, path)
