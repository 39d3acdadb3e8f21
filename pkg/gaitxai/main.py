"""
Command-line entry point: synth, train, explain, spm and report subcommands
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from gaitxai.core.config import flatten_run_config, load_run_config, parse_override, settings
from gaitxai.core.errors import (
    BadFlag,
    CheckpointMismatch,
    ExitCode,
    GaitXaiError,
    IoError,
    MissingInput,
    format_error_line,
)
from gaitxai.core.monitoring import metrics_collector, performance_monitor, setup_logging
from gaitxai.figures import panels
from gaitxai.models.config import RunConfig
from gaitxai.models.evaluation import Provenance, RegionSet
from gaitxai.models.gait import Dataset
from gaitxai.models.network import Checkpoint, LayerGraph
from gaitxai.services import data_ingest, eval_harness, lrp, nn_engine, spm1d

logger = logging.getLogger(__name__)

SYNTH_FLAGS = {
    "subjects_per_class": "synth.subjects_per_class",
    "female_subjects": "synth.female_subjects",
    "male_subjects": "synth.male_subjects",
    "trials": "synth.trials",
    "length": "synth.length",
    "bump_center": "synth.bump_center",
    "bump_width": "synth.bump_width",
    "bump_amplitude": "synth.bump_amplitude",
    "noise_sd": "synth.noise_sd",
}


class _Parser(argparse.ArgumentParser):
    """Reports flag problems as BadFlag instead of exiting"""

    def error(self, message: str):
        raise BadFlag(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key=value configuration file")
    common.add_argument("--seed", type=int, help="run seed (default from config or GAITXAI_DEFAULT_SEED)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--log-level", default=None, help="debug, info, warning or error")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration key; repeatable")

    parser = _Parser(prog="gaitxai", description="Explainable sex classification from gait GRF curves")
    commands = parser.add_subparsers(dest="command", parser_class=_Parser)
    commands.required = True

    synth = commands.add_parser("synth", parents=[common], help="write a synthetic planted-feature dataset")
    synth.add_argument("--subjects-per-class", type=int)
    synth.add_argument("--female-subjects", type=int)
    synth.add_argument("--male-subjects", type=int)
    synth.add_argument("--trials", type=int)
    synth.add_argument("--length", type=int)
    synth.add_argument("--bump-center", type=int)
    synth.add_argument("--bump-width", type=int)
    synth.add_argument("--bump-amplitude", type=float)
    synth.add_argument("--noise-sd", type=float)
    synth.add_argument("--output", help="CSV path (default <out>/synthetic.csv)")

    commands.add_parser("train", parents=[common], help="cross-validated training")
    commands.add_parser("explain", parents=[common], help="LRP relevance for every held-out trial")
    commands.add_parser("spm", parents=[common], help="two-group SPM per GRF channel")
    commands.add_parser("report", parents=[common], help="SVG panels and the region overlap table")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    overrides: Dict[str, str] = {}
    for text in args.overrides:
        key, value = parse_override(text)
        overrides[key] = value
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.out is not None:
        overrides["out"] = args.out
    for flag, key in SYNTH_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = str(value)
    return load_run_config(args.config, overrides)


# Shared helpers

def load_dataset(config: RunConfig) -> Dataset:
    if not config.data.path:
        raise MissingInput("data.path is not set; pass --set data.path=<file or directory>")
    path = Path(config.data.path)
    mapping = data_ingest.load_gaitrec_mapping(config.data.mapping) if config.data.mapping else None
    if path.is_dir():
        return data_ingest.load_gaitrec_directory(path, mapping)
    return data_ingest.parse_trials(path, config.data.schema_kind, mapping)


def expected_graph(dataset: Dataset, config: RunConfig) -> LayerGraph:
    sample = data_ingest.assemble_input(dataset.trials[0], config.input.layout, config.input.channels)
    return nn_engine.build_graph(sample.shape, config.model.architecture)


def _ensure_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IoError(f"cannot create {path}: {e}")
    return path


def _write_text(path: Path, text: str) -> None:
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}")


def load_fold_checkpoints(out: Path, k: int, graph: LayerGraph) -> List[Checkpoint]:
    directory = out / "checkpoints"
    files = sorted(directory.glob("fold_*.gxai")) if directory.is_dir() else []
    if not files:
        raise CheckpointMismatch(f"no checkpoints in {directory}; run train first")
    if len(files) != k:
        raise CheckpointMismatch(f"found {len(files)} checkpoints in {directory}, configuration has k={k}")
    checkpoints = [nn_engine.load_checkpoint(f) for f in files]
    for path, checkpoint in zip(files, checkpoints):
        if checkpoint.graph != graph:
            raise CheckpointMismatch(f"{path.name} was trained for a different architecture or input shape")
    return checkpoints


# Subcommands

@performance_monitor.time_function("synth")
def cmd_synth(config: RunConfig, output: Optional[str] = None) -> Path:
    target = Path(output) if output else Path(config.out) / "synthetic.csv"
    _ensure_dir(target.parent)
    dataset = data_ingest.generate_synthetic(config.synth, config.seed)
    try:
        data_ingest.write_trials(dataset, target)
    except OSError as e:
        raise IoError(f"cannot write {target}: {e}")
    print(f"seed={config.seed}")
    print(f"wrote {len(dataset.trials)} trials to {target}")
    return target


@performance_monitor.time_function("train")
def cmd_train(config: RunConfig) -> Path:
    dataset = load_dataset(config)
    graph = expected_graph(dataset, config)
    out = _ensure_dir(Path(config.out))
    checkpoint_dir = _ensure_dir(out / "checkpoints")
    for stale in checkpoint_dir.glob("fold_*.gxai"):
        stale.unlink()
    outcome = eval_harness.cross_validate(
        dataset, graph, config.train, config.cv.k, config.seed,
        layout=config.input.layout,
        channel_subset=config.input.channels,
        checkpoint_dir=checkpoint_dir,
        config_echo=flatten_run_config(config),
    )
    text = eval_harness.report_text(outcome.report)
    _write_text(out / "report.json", eval_harness.report_json(outcome.report))
    _write_text(out / "report.txt", text)
    sys.stdout.write(text)
    return out


@performance_monitor.time_function("explain")
def cmd_explain(config: RunConfig) -> Path:
    out = Path(config.out)
    dataset = load_dataset(config)
    graph = expected_graph(dataset, config)
    checkpoints = load_fold_checkpoints(out, config.cv.k, graph)
    plan = data_ingest.make_folds(dataset, config.cv.k, config.seed)
    report_path = out / "report.json"
    if report_path.is_file():
        report = eval_harness.read_report(report_path)
        for fold in report.folds:
            if sorted(plan.subjects_in(fold.fold)) != fold.test_subjects:
                raise CheckpointMismatch(f"fold {fold.fold} of the saved report used a different subject split")

    maps = eval_harness.explain_cv(dataset, checkpoints, plan, config.input.layout, config.input.channels, config.lrp)
    means = lrp.average_relevance(maps, by=config.lrp.grouping)
    total = lrp.total_relevance(means[0], means[1])
    names = data_ingest.input_channel_names(config.input.layout, config.input.channels)

    directory = _ensure_dir(out / "relevance")
    lrp.relevance_maps_to_csv(maps, directory / "relevance_maps.csv")
    lrp.write_mean_relevance(means, names, directory / "mean_relevance.csv")
    lrp.write_total_relevance(total, names, directory / "total_relevance.csv")

    row, node = np.unravel_index(int(np.argmax(total)), total.shape)
    channel, grf_node = data_ingest.node_to_grf(config.input.layout, config.input.channels, dataset.T, row, node)
    residuals = [abs(m.residual) for m in maps]
    print(f"explained {len(maps)} trials; peak total relevance at {channel.value} node {grf_node}")
    print(f"largest |logit - sum R| = {max(residuals):.3g} (bias and stabilizer absorption included)")
    return directory


@performance_monitor.time_function("spm")
def cmd_spm(config: RunConfig) -> Path:
    dataset = load_dataset(config)
    results = eval_harness.spm_per_channel(dataset, config.spm, config.input.channels)
    directory = _ensure_dir(Path(config.out) / "spm")
    spm1d.spm_result_to_csv(list(results.values()), directory / "spm_curves.csv")
    for result in results.values():
        spm1d.write_summary(result, directory / f"{result.channel}.summary.txt")
    spm1d.clusters_frame(list(results.values())).to_csv(directory / "clusters.csv", index=False, lineterminator="\n")
    for result in results.values():
        triples = ", ".join(c.as_triple() for c in result.clusters) or "none"
        print(f"{result.channel}: t*={result.t_star:.4f} fwhm={result.fwhm:.2f} clusters: {triples}")
    return directory


@performance_monitor.time_function("report")
def cmd_report(config: RunConfig) -> Path:
    out = Path(config.out)
    dataset = load_dataset(config)
    layout, subset, T = config.input.layout, config.input.channels, dataset.T
    names = data_ingest.input_channel_names(layout, subset)

    means_input = lrp.read_mean_relevance(out / "relevance" / "mean_relevance.csv", names)
    total_input = lrp.read_total_relevance(out / "relevance" / "total_relevance.csv", names)
    results = spm1d.read_spm_results(out / "spm")

    signals = {label: eval_harness.aggregate_signals(dataset, label) for label in (0, 1)}
    relevance_grf = {label: data_ingest.input_to_grf(means_input[label], layout, subset, T) for label in (0, 1)}

    lrp_regions = eval_harness.grf_regions_from_input(
        eval_harness.relevance_regions(total_input, config.regions.mass_fraction, names), layout, subset, T,
    )
    spm_regions = eval_harness.spm_regions(results.values())
    literature = RegionSet(provenance=Provenance.LITERATURE)
    if config.regions.path:
        literature = eval_harness.load_regions(config.regions.path, T).get(Provenance.LITERATURE, literature)

    directory = _ensure_dir(out / "report")
    figures = {
        "panel_a.svg": panels.build_panel_a(
            {label: {ch: s[0] for ch, s in signals[label].items()} for label in (0, 1)},
            {name: r.clusters for name, r in results.items()},
        ),
        "panel_b.svg": panels.build_class_panel(0, signals[0], relevance_grf[0], panels.class_title(0)),
        "panel_c.svg": panels.build_class_panel(1, signals[1], relevance_grf[1], panels.class_title(1)),
        "panel_d.svg": panels.build_panel_d(
            {name: r.d_curve for name, r in results.items()},
            data_ingest.input_to_grf(total_input, layout, subset, T),
        ),
    }
    for name, svg in figures.items():
        _write_text(directory / name, svg)

    pairs = [
        ("LRP vs SPM", *eval_harness.overlap_score(lrp_regions, spm_regions)),
        ("LRP vs literature", *eval_harness.overlap_score(lrp_regions, literature)),
        ("SPM vs literature", *eval_harness.overlap_score(spm_regions, literature)),
    ]
    consistency = eval_harness.region_consistency(literature, lrp_regions, spm_regions)
    table = panels.overlap_table(pairs, consistency, config.regions.mass_fraction)
    _write_text(directory / "overlap_table.txt", table)
    eval_harness.write_regions([lrp_regions, spm_regions, literature], directory / "regions.csv")
    sys.stdout.write(table)
    return directory


def run(args: argparse.Namespace) -> None:
    config = resolve_config(args)
    if args.command == "synth":
        cmd_synth(config, args.output)
    elif args.command == "train":
        cmd_train(config)
    elif args.command == "explain":
        cmd_explain(config)
    elif args.command == "spm":
        cmd_spm(config)
    elif args.command == "report":
        cmd_report(config)


def main(argv: Optional[Sequence[str]] = None) -> int:
    metrics_collector.reset()
    try:
        args = build_parser().parse_args(argv)
        setup_logging(args.log_level or settings.LOG_LEVEL, settings.LOG_FILE or None)
        run(args)
        return ExitCode.SUCCESS
    except GaitXaiError as e:
        logger.debug("command failed", exc_info=True)
        print(format_error_line(e), file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.exception("unexpected failure")
        print(format_error_line(e), file=sys.stderr)
        return ExitCode.UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
