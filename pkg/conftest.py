"""
Shared fixtures: small synthetic datasets, tiny graphs and random checkpoints
"""

from typing import Callable

import numpy as np
import pytest

from gaitxai.core.monitoring import metrics_collector
from gaitxai.models.gait import Dataset, SyntheticSpec
from gaitxai.models.network import Checkpoint, LayerGraph, LayerParams, TrainConfig
from gaitxai.services import data_ingest, nn_engine

TINY_ARCHITECTURE = "conv:3:3:1:1,relu,maxpool:2:2,conv:2:3,relu,gap,dense:2"


@pytest.fixture(autouse=True)
def _fresh_metrics():
    metrics_collector.reset()
    yield
    metrics_collector.reset()


@pytest.fixture
def small_spec() -> SyntheticSpec:
    return SyntheticSpec(
        n_subjects_per_class=4,
        trials_per_subject=2,
        T=41,
        bump_center=12,
        bump_width=4,
        bump_amplitude=0.5,
        noise_sd=0.05,
    )


@pytest.fixture
def small_dataset(small_spec) -> Dataset:
    return data_ingest.generate_synthetic(small_spec, seed=7)


@pytest.fixture
def tiny_graph() -> LayerGraph:
    return nn_engine.build_graph((2, 12), TINY_ARCHITECTURE)


def random_checkpoint(graph: LayerGraph, seed: int, with_bias: bool = False) -> Checkpoint:
    """Checkpoint with normally distributed weights (and optionally biases)"""
    rng = np.random.default_rng(seed)
    params = []
    for shapes in nn_engine.param_shapes(graph):
        if shapes is None:
            params.append(None)
            continue
        w_shape, b_shape = shapes
        bias = rng.normal(0.0, 0.1, size=b_shape) if with_bias else np.zeros(b_shape)
        params.append(LayerParams(weight=rng.normal(0.0, 0.5, size=w_shape), bias=bias))
    return Checkpoint(graph=graph, params=tuple(params), train_config=TrainConfig(epochs=0), seed=seed)


def random_graph(rng: np.random.Generator) -> LayerGraph:
    """A small random conv/pool/dense stack that always ends in two logits"""
    channels = int(rng.integers(1, 4))
    length = int(rng.integers(10, 20))
    kernel = int(rng.integers(2, 5))
    padding = int(rng.integers(0, 2))
    stride = int(rng.integers(1, 3))
    tokens = [f"conv:{int(rng.integers(2, 5))}:{kernel}:{stride}:{padding}", "relu"]
    if rng.random() < 0.5:
        tokens += ["maxpool:2:2"]
    if rng.random() < 0.5:
        tokens += ["flatten", f"dense:{int(rng.integers(2, 6))}", "relu", "dense:2"]
    else:
        tokens += ["gap", "dense:2"]
    return nn_engine.build_graph((channels, length), ",".join(tokens))


@pytest.fixture
def make_checkpoint() -> Callable[..., Checkpoint]:
    return random_checkpoint
