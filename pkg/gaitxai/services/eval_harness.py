"""
Cross-validation orchestration, baselines, signal aggregation and region overlap scoring
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError

from gaitxai.core.config import settings
from gaitxai.core.errors import (
    DegenerateSplit,
    EmptyGroup,
    MissingInput,
    SchemaError,
    ShapeMismatch,
    ZeroCurve,
)
from gaitxai.core.monitoring import MetricType, metrics_collector
from gaitxai.models.evaluation import ConfusionCounts, EvalReport, FoldResult, Provenance, Region, RegionSet
from gaitxai.models.explanation import LrpConfig, RelevanceMap
from gaitxai.models.gait import (
    CHANNEL_ORDER,
    COMPONENT_ORDER,
    ChannelId,
    Component,
    Dataset,
    FoldPlan,
    InputLayout,
    InputSample,
)
from gaitxai.models.network import Checkpoint, LayerGraph, TrainConfig
from gaitxai.models.statistics import AnalysisUnit, SpmConfig, SpmResult
from gaitxai.services import lrp, nn_engine, spm1d
from gaitxai.services.data_ingest import (
    assemble_input,
    assemble_inputs,
    input_channel_names,
    input_segments,
    make_folds,
    min_max_normalize,
    stack_inputs,
)

logger = logging.getLogger(__name__)


def zero_rule(dataset: Dataset) -> float:
    """Majority-class share at trial level"""
    counts = dataset.class_counts()
    return max(counts.values()) / sum(counts.values())


@dataclass
class CvOutcome:
    report: EvalReport
    checkpoints: List[Checkpoint]
    plan: FoldPlan


def _population_std(values: Sequence[float]) -> float:
    return float(np.std(np.asarray(values, dtype=np.float64)))


def _train_fold(fold: int, plan: FoldPlan, dataset: Dataset, samples: List[InputSample],
                graph: LayerGraph, train_config: TrainConfig, seed: int,
                checkpoint_dir: Optional[Path]) -> Tuple[FoldResult, Checkpoint, ConfusionCounts]:
    test_subjects = set(plan.subjects_in(fold))
    train_subjects = set(plan.subjects_outside(fold))
    if test_subjects & train_subjects:
        raise DegenerateSplit(f"fold {fold}: subjects appear in both training and test data")
    train_samples = [s for s in samples if s.origin[0] in train_subjects]
    test_samples = [s for s in samples if s.origin[0] in test_subjects]
    if not test_samples:
        raise DegenerateSplit(f"fold {fold} has no test trials")
    if not train_samples:
        raise DegenerateSplit(f"fold {fold} has no training trials")

    x_train, y_train = stack_inputs(train_samples)
    x_test, y_test = stack_inputs(test_samples)
    fold_config = train_config.model_copy(update={"seed": seed ^ fold})
    checkpoint = nn_engine.train(graph, x_train, y_train, fold_config, tag=f"fold {fold:02d}")

    predicted, _ = nn_engine.predict_batch(checkpoint, x_test)
    confusion = ConfusionCounts()
    for true_label, pred in zip(y_test.tolist(), predicted.tolist()):
        confusion.add(true_label, pred)
    accuracy = float((predicted == y_test).mean())
    metrics_collector.record_metric(MetricType.FOLD_ACCURACY, accuracy, fold=fold)
    logger.info(f"fold {fold:02d}: accuracy {accuracy:.3f} on {len(y_test)} trials "
                f"({len(test_subjects)} subjects), final loss {checkpoint.final_loss:.4f}")

    reference = None
    if checkpoint_dir is not None:
        name = f"fold_{fold:02d}.gxai"
        nn_engine.save_checkpoint(checkpoint, checkpoint_dir / name)
        reference = name
    result = FoldResult(
        fold=fold,
        n_train=len(y_train),
        n_test=len(y_test),
        accuracy=accuracy,
        final_loss=checkpoint.final_loss,
        checkpoint=reference,
        test_subjects=sorted(test_subjects),
    )
    return result, checkpoint, confusion


def cross_validate(dataset: Dataset, graph: Optional[LayerGraph], train_config: TrainConfig, k: int, seed: int,
                   layout: InputLayout = InputLayout.TEMPORAL_CONCAT,
                   channel_subset: Iterable[Component] = COMPONENT_ORDER,
                   checkpoint_dir: Optional[Union[str, Path]] = None,
                   max_workers: Optional[int] = None,
                   config_echo: Optional[Dict[str, object]] = None) -> CvOutcome:
    """Subject-disjoint k-fold training and trial-level evaluation; folds train concurrently"""
    plan = make_folds(dataset, k, seed)
    samples = assemble_inputs(dataset.trials, layout, channel_subset)
    if graph is None:
        graph = nn_engine.default_graph(samples[0].shape)
    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)

    workers = max(1, max_workers or settings.MAX_WORKERS)
    logger.info(f"Cross-validating {len(dataset.trials)} trials in {plan.k} folds with {workers} worker(s)")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        outcomes = list(pool.map(
            lambda fold: _train_fold(fold, plan, dataset, samples, graph, train_config, seed, checkpoint_dir),
            range(plan.k),
        ))

    folds = [o[0] for o in outcomes]
    confusion = ConfusionCounts()
    for _, _, fold_confusion in outcomes:
        for name, value in fold_confusion.model_dump().items():
            setattr(confusion, name, getattr(confusion, name) + value)
    accuracies = [f.accuracy for f in folds]
    report = EvalReport(
        folds=folds,
        mean_accuracy=float(np.mean(accuracies)),
        std_accuracy=_population_std(accuracies),
        zero_rule_accuracy=zero_rule(dataset),
        confusion=confusion,
        k=plan.k,
        seed=seed,
        config_echo=dict(config_echo or {}),
        metrics=metrics_collector.summary(),
    )
    return CvOutcome(report=report, checkpoints=[o[1] for o in outcomes], plan=plan)


def run_cv(dataset: Dataset, graph: Optional[LayerGraph], train_config: TrainConfig, k: int, seed: int,
           **kwargs) -> EvalReport:
    return cross_validate(dataset, graph, train_config, k, seed, **kwargs).report


def explain_cv(dataset: Dataset, checkpoints: Sequence[Checkpoint], plan: FoldPlan,
               layout: InputLayout = InputLayout.TEMPORAL_CONCAT,
               channel_subset: Iterable[Component] = COMPONENT_ORDER,
               config: Optional[LrpConfig] = None) -> List[RelevanceMap]:
    """Explain every trial with the model of the fold that held it out; output keeps dataset order"""
    if len(checkpoints) != plan.k:
        raise ShapeMismatch(f"{len(checkpoints)} checkpoints for {plan.k} folds")
    components = tuple(channel_subset)
    by_fold: Dict[int, List[int]] = {}
    for index, trial in enumerate(dataset.trials):
        by_fold.setdefault(plan.assignments[trial.subject_id], []).append(index)
    maps: List[Optional[RelevanceMap]] = [None] * len(dataset.trials)
    for fold in sorted(by_fold):
        indices = by_fold[fold]
        samples = [assemble_input(dataset.trials[i], layout, components) for i in indices]
        for i, m in zip(indices, lrp.explain_batch(checkpoints[fold], samples, config, tag=f"fold {fold:02d}")):
            maps[i] = m
    return maps


def aggregate_signals(dataset: Dataset, label: int) -> Dict[ChannelId, Tuple[np.ndarray, np.ndarray]]:
    """Node-wise mean and population standard deviation of the raw curves of one class"""
    trials = dataset.of_class(label)
    if not trials:
        raise EmptyGroup(f"no trials of class {label}")
    signals = {}
    for channel in CHANNEL_ORDER:
        curves = np.stack([t.curves[channel] for t in trials])
        signals[channel] = (curves.mean(axis=0), curves.std(axis=0))
    return signals


# Regions

def _merge_runs(nodes: Sequence[int]) -> List[Tuple[int, int]]:
    runs: List[Tuple[int, int]] = []
    for node in sorted(nodes):
        if runs and node == runs[-1][1] + 1:
            runs[-1] = (runs[-1][0], node)
        else:
            runs.append((node, node))
    return runs


def relevance_regions(curve: np.ndarray, mass_fraction: float = 0.5,
                      channel_names: Optional[Sequence[str]] = None) -> RegionSet:
    """Fewest nodes (highest first, lower index on ties) holding at least mass_fraction of the
    total, merged into contiguous intervals per channel"""
    values = np.atleast_2d(np.asarray(curve, dtype=np.float64))
    if not 0 < mass_fraction <= 1:
        raise ZeroCurve(f"mass fraction must be in (0, 1], got {mass_fraction}")
    names = list(channel_names) if channel_names is not None else [str(i) for i in range(values.shape[0])]
    if len(names) != values.shape[0]:
        raise ShapeMismatch(f"{len(names)} channel names for {values.shape[0]} channels")
    flat = values.ravel()
    total = float(flat.sum())
    if (flat < 0).any() or total <= 0:
        raise ZeroCurve("relevance curve must be nonnegative with positive total mass")

    order = np.lexsort((np.arange(flat.size), -flat))
    cumulative = np.cumsum(flat[order])
    count = int(np.searchsorted(cumulative, mass_fraction * total * (1 - 1e-12), side="left")) + 1
    chosen = order[:min(count, flat.size)]

    regions = []
    length = values.shape[1]
    for row, name in enumerate(names):
        nodes = [int(i) - row * length for i in chosen if row * length <= i < (row + 1) * length]
        for number, (start, end) in enumerate(_merge_runs(nodes), start=1):
            regions.append(Region(name=f"lrp_{name}_{number}", channel=name, start=start, end=end))
    return RegionSet(provenance=Provenance.LRP, regions=regions)


def grf_regions_from_input(regions: RegionSet, layout: InputLayout, channel_subset: Iterable[Component],
                           T: int) -> RegionSet:
    """Re-express input-node regions in GRF channel coordinates, splitting at segment borders"""
    components = tuple(channel_subset)
    names = input_channel_names(layout, components)
    segments = input_segments(layout, components, T)
    mapped = []
    for region in regions.regions:
        if region.channel not in names:
            raise ShapeMismatch(f"region {region.name} refers to unknown input channel {region.channel}")
        index = names.index(region.channel)
        for seg_index, seg_start, channel in segments:
            if seg_index != index:
                continue
            lo = max(region.start, seg_start)
            hi = min(region.end, seg_start + T - 1)
            if lo <= hi:
                mapped.append(Region(
                    name=f"{region.name}_{channel.value}",
                    channel=channel.value,
                    start=lo - seg_start,
                    end=hi - seg_start,
                ))
    return RegionSet(provenance=regions.provenance, regions=mapped)


def spm_regions(results: Iterable[SpmResult]) -> RegionSet:
    regions = []
    for result in results:
        for number, cluster in enumerate(result.clusters, start=1):
            regions.append(Region(
                name=f"spm_{result.channel}_{number}",
                channel=result.channel,
                start=cluster.start,
                end=cluster.end,
            ))
    return RegionSet(provenance=Provenance.SPM, regions=regions)


def overlap_score(set_a: RegionSet, set_b: RegionSet) -> Tuple[Dict[str, float], float]:
    """Per-channel Jaccard index and the node-weighted overall index"""
    per_channel: Dict[str, float] = {}
    intersection_total = union_total = 0
    for channel in sorted(set(set_a.channels()) | set(set_b.channels())):
        a, b = set_a.covered(channel), set_b.covered(channel)
        union = len(a | b)
        if union == 0:
            continue
        intersection = len(a & b)
        per_channel[channel] = intersection / union
        intersection_total += intersection
        union_total += union
    # two empty sets count as identical
    overall = intersection_total / union_total if union_total else 1.0
    return per_channel, overall


def region_consistency(literature: RegionSet, lrp_set: RegionSet, spm_set: RegionSet) -> List[Dict[str, object]]:
    """For each literature region, whether LRP and SPM regions touch it"""
    rows = []
    for region in literature.regions:
        nodes = set(region.nodes())
        rows.append({
            "name": region.name,
            "channel": region.channel,
            "start": region.start,
            "end": region.end,
            "lrp": bool(nodes & lrp_set.covered(region.channel)),
            "spm": bool(nodes & spm_set.covered(region.channel)),
        })
    return rows


REGION_COLUMNS = ["name", "channel", "start", "end", "provenance"]


def load_regions(path: Union[str, Path], T: Optional[int] = None) -> Dict[Provenance, RegionSet]:
    """Read a regions CSV, grouped by provenance; GRF channel names are required"""
    path = Path(path)
    if not path.is_file():
        raise MissingInput(f"regions file not found: {path}")
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, comment="#")
    if list(frame.columns) != REGION_COLUMNS:
        raise SchemaError(f"regions file header must be {','.join(REGION_COLUMNS)}")
    valid_channels = {c.value for c in CHANNEL_ORDER}
    grouped: Dict[Provenance, List[Region]] = {}
    try:
        for row in frame.itertuples(index=False):
            if row.channel not in valid_channels:
                raise SchemaError(f"region {row.name}: unknown channel {row.channel!r}")
            region = Region(name=row.name, channel=row.channel, start=int(row.start), end=int(row.end))
            if T is not None and region.end >= T:
                raise SchemaError(f"region {row.name} ends at {region.end}, beyond the series length {T}")
            grouped.setdefault(Provenance(row.provenance), []).append(region)
        return {p: RegionSet(provenance=p, regions=regions) for p, regions in grouped.items()}
    except (ValueError, ValidationError) as e:
        raise SchemaError(f"invalid regions file {path}: {e}")


def write_regions(sets: Iterable[RegionSet], path: Union[str, Path]) -> None:
    rows = [
        {"name": r.name, "channel": r.channel, "start": r.start, "end": r.end, "provenance": s.provenance.value}
        for s in sets for r in s.regions
    ]
    pd.DataFrame(rows, columns=REGION_COLUMNS).to_csv(path, index=False, lineterminator="\n")


# SPM over channels

def spm_per_channel(dataset: Dataset, config: Optional[SpmConfig] = None,
                    channel_subset: Iterable[Component] = COMPONENT_ORDER) -> Dict[ChannelId, SpmResult]:
    """Two-group SPM for both sides of every selected component"""
    config = config or SpmConfig()
    if config.unit is AnalysisUnit.SUBJECT:
        dataset = spm1d.subject_means(dataset)
    components = set(channel_subset)
    results = {}
    for channel in CHANNEL_ORDER:
        if channel.component not in components:
            continue
        group_0, group_1 = spm1d.channel_groups(dataset, channel)
        if config.normalized:
            group_0, group_1 = (
                g.model_copy(update={"curves": _min_max_rows(g.curves)}) for g in (group_0, group_1)
            )
        results[channel] = spm1d.spm_two_sample(group_0, group_1, config, channel=channel.value)
    return results


def _min_max_rows(curves: np.ndarray) -> np.ndarray:
    return np.stack([min_max_normalize(row) for row in curves])


# Report rendering

def _percent(value: float) -> str:
    return f"{100.0 * value:.1f}%"


def report_text(report: EvalReport) -> str:
    lines = [
        f"Cross-validated accuracy (k={report.k}, seed={report.seed})",
        "",
    ]
    for fold in report.folds:
        lines.append(f"  fold {fold.fold:02d}: {_percent(fold.accuracy)}  "
                     f"(train {fold.n_train}, test {fold.n_test}, final loss {fold.final_loss:.4f})")
    lines += [
        "",
        f"mean accuracy: {_percent(report.mean_accuracy)} ± {_percent(report.std_accuracy)} "
        f"({report.std_convention} standard deviation over folds)",
        f"zero-rule baseline: {_percent(report.zero_rule_accuracy)}",
        "",
        "confusion (rows true class, columns predicted class):",
        f"  class 0: {report.confusion.true_0_pred_0:5d} {report.confusion.true_0_pred_1:5d}",
        f"  class 1: {report.confusion.true_1_pred_0:5d} {report.confusion.true_1_pred_1:5d}",
    ]
    return "\n".join(lines) + "\n"


def report_json(report: EvalReport) -> str:
    return report.model_dump_json(indent=2) + "\n"


def read_report(path: Union[str, Path]) -> EvalReport:
    path = Path(path)
    if not path.is_file():
        raise MissingInput(f"report not found: {path}")
    return EvalReport.model_validate_json(path.read_text(encoding="utf-8"))
