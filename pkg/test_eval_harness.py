"""
Tests for cross-validation, baselines, aggregation and region scoring
"""

from pathlib import Path

import numpy as np
import pytest

from gaitxai.core.errors import EmptyGroup, MissingInput, SchemaError, ShapeMismatch, TooFewSubjects, ZeroCurve
from gaitxai.core.monitoring import metrics_collector
from gaitxai.models.evaluation import ConfusionCounts, EvalReport, Provenance, Region, RegionSet
from gaitxai.models.gait import COMPONENT_ORDER, ChannelId, Component, Dataset, InputLayout, SyntheticSpec
from gaitxai.models.network import TrainConfig
from gaitxai.models.statistics import AnalysisUnit, SpmConfig
from gaitxai.services import data_ingest, eval_harness, lrp, nn_engine

SMALL_ARCHITECTURE = "conv:4:5:1:2,relu,maxpool:4:4,conv:4:5:1:2,relu,gap,dense:2"


def _regions(provenance: Provenance, *spans) -> RegionSet:
    return RegionSet(provenance=provenance, regions=[
        Region(name=f"r{i}", channel=channel, start=start, end=end) for i, (channel, start, end) in enumerate(spans)
    ])


@pytest.fixture
def unequal_dataset() -> Dataset:
    spec = SyntheticSpec(n_female_subjects=34, n_male_subjects=28, trials_per_subject=5, T=21,
                         bump_center=8, bump_width=3)
    return data_ingest.generate_synthetic(spec, seed=42)


class TestZeroRule:
    def test_majority_share(self, unequal_dataset):
        assert eval_harness.zero_rule(unequal_dataset) == pytest.approx(170 / 310)
        assert eval_harness.zero_rule(unequal_dataset) == pytest.approx(0.548387, abs=1e-6)

    def test_report_prints_one_decimal(self, unequal_dataset):
        report = EvalReport(folds=[], mean_accuracy=0.833, std_accuracy=0.114,
                            zero_rule_accuracy=eval_harness.zero_rule(unequal_dataset),
                            confusion=ConfusionCounts(), k=10, seed=42)
        text = eval_harness.report_text(report)
        assert "zero-rule baseline: 54.8%" in text
        assert "mean accuracy: 83.3% ± 11.4%" in text


class TestCrossValidation:
    def _run(self, dataset, tmp_path=None, workers=1, **kwargs):
        samples = data_ingest.assemble_inputs(dataset.trials[:1], **kwargs)
        graph = nn_engine.build_graph(samples[0].shape, SMALL_ARCHITECTURE)
        return eval_harness.cross_validate(dataset, graph, TrainConfig(epochs=3, batch_size=4), k=2, seed=1,
                                           checkpoint_dir=tmp_path, max_workers=workers, **kwargs)

    def test_folds_cover_every_trial_once(self, small_dataset, tmp_path):
        outcome = self._run(small_dataset, tmp_path)
        report = outcome.report
        assert report.k == 2
        assert sum(f.n_test for f in report.folds) == len(small_dataset.trials)
        tested = [s for f in report.folds for s in f.test_subjects]
        assert sorted(tested) == sorted(small_dataset.subjects())
        assert report.checkpoints == ["fold_00.gxai", "fold_01.gxai"]
        assert (tmp_path / "fold_01.gxai").is_file()
        confusion = report.confusion.model_dump()
        assert sum(confusion.values()) == len(small_dataset.trials)
        assert report.mean_accuracy == pytest.approx(np.mean(report.fold_accuracies))
        assert report.zero_rule_accuracy == 0.5
        assert report.metrics["fold_accuracy"]["count"] == 2

    def test_repeatable_and_independent_of_workers(self, small_dataset):
        first = self._run(small_dataset).report
        metrics_collector.reset()
        second = self._run(small_dataset).report
        metrics_collector.reset()
        threaded = self._run(small_dataset, workers=2).report
        assert eval_harness.report_json(first) == eval_harness.report_json(second)
        assert eval_harness.report_json(threaded) == eval_harness.report_json(first)

    def test_vertical_only_inputs(self, small_dataset):
        outcome = self._run(small_dataset, channel_subset=[Component.V])
        assert outcome.checkpoints[0].graph.input_shape == (1, 2 * small_dataset.T)

    def test_too_many_folds(self, small_dataset):
        with pytest.raises(TooFewSubjects):
            eval_harness.cross_validate(small_dataset, None, TrainConfig(epochs=1), k=9, seed=0)

    def test_explanations_follow_dataset_order(self, small_dataset):
        outcome = self._run(small_dataset)
        maps = eval_harness.explain_cv(small_dataset, outcome.checkpoints, outcome.plan)
        assert [m.origin for m in maps] == [t.origin for t in small_dataset.trials]
        trial = small_dataset.trials[-1]
        fold = outcome.plan.assignments[trial.subject_id]
        single = lrp.explain(outcome.checkpoints[fold], data_ingest.assemble_input(trial).channels,
                             target_class=trial.label)
        np.testing.assert_allclose(maps[-1].R, single.R, rtol=1e-12, atol=1e-14)
        with pytest.raises(ShapeMismatch):
            eval_harness.explain_cv(small_dataset, outcome.checkpoints[:1], outcome.plan)

    @pytest.mark.slow
    def test_planted_bump_is_learned_and_localized(self):
        spec = SyntheticSpec(n_subjects_per_class=20, trials_per_subject=5, bump_amplitude=0.3, noise_sd=0.05)
        dataset = data_ingest.generate_synthetic(spec, seed=42)
        outcome = eval_harness.cross_validate(dataset, None, TrainConfig(), k=10, seed=42)
        report = outcome.report
        assert report.mean_accuracy >= 0.95
        assert report.mean_accuracy > report.zero_rule_accuracy

        maps = eval_harness.explain_cv(dataset, outcome.checkpoints, outcome.plan)
        means = lrp.average_relevance(maps)
        total = lrp.total_relevance(means[0], means[1])
        input_regions = eval_harness.relevance_regions(total, 0.5, maps[0].channel_names)
        lrp_regions = eval_harness.grf_regions_from_input(input_regions, InputLayout.TEMPORAL_CONCAT,
                                                          COMPONENT_ORDER, dataset.T)
        lo, hi = spec.window
        assert lrp_regions.covered("L_V") & set(range(lo, hi + 1))

        spm_regions = eval_harness.spm_regions(eval_harness.spm_per_channel(dataset).values())
        assert spm_regions.covered("L_V")
        _, overall = eval_harness.overlap_score(lrp_regions, spm_regions)
        assert overall > 0


class TestAggregation:
    def test_class_signals(self, small_dataset):
        signals = eval_harness.aggregate_signals(small_dataset, 1)
        curves = np.stack([t.curves[ChannelId.L_V] for t in small_dataset.of_class(1)])
        mean, sd = signals[ChannelId.L_V]
        np.testing.assert_allclose(mean, curves.mean(axis=0))
        np.testing.assert_allclose(sd, curves.std(axis=0))

    def test_missing_class(self, small_dataset):
        females = small_dataset.subset([t.subject_id for t in small_dataset.of_class(0)])
        with pytest.raises(EmptyGroup):
            eval_harness.aggregate_signals(females, 1)

    def test_spm_per_channel_subset_and_unit(self, small_dataset):
        results = eval_harness.spm_per_channel(small_dataset, SpmConfig(unit=AnalysisUnit.SUBJECT), [Component.V])
        assert list(results) == [ChannelId.L_V, ChannelId.R_V]
        assert results[ChannelId.L_V].n_a == 4


class TestRegions:
    def test_fewest_nodes_reaching_the_mass_fraction(self):
        regions = eval_harness.relevance_regions(np.array([[0.0, 5.0, 1.0, 4.0, 0.0]]), 0.5, ["V"])
        assert [(r.name, r.start, r.end) for r in regions.regions] == [("lrp_V_1", 1, 1)]
        regions = eval_harness.relevance_regions(np.array([[0.0, 5.0, 1.0, 4.0, 0.0]]), 0.8, ["V"])
        assert [(r.start, r.end) for r in regions.regions] == [(1, 1), (3, 3)]
        assert regions.provenance is Provenance.LRP

    def test_ties_prefer_lower_index_and_merge(self):
        regions = eval_harness.relevance_regions(np.full((1, 4), 2.0), 0.5)
        assert [(r.start, r.end) for r in regions.regions] == [(0, 1)]
        regions = eval_harness.relevance_regions(np.array([[0.0, 3.0], [3.0, 0.0]]), 1.0, ["A", "B"])
        assert [(r.channel, r.start) for r in regions.regions] == [("A", 1), ("B", 0)]

    @pytest.mark.parametrize("curve", [np.zeros((1, 5)), np.array([[1.0, -0.5, 2.0]])])
    def test_zero_or_signed_curves(self, curve):
        with pytest.raises(ZeroCurve):
            eval_harness.relevance_regions(curve)

    def test_input_regions_split_at_segment_borders(self):
        regions = _regions(Provenance.LRP, ("V", 8, 12))
        mapped = eval_harness.grf_regions_from_input(regions, InputLayout.TEMPORAL_CONCAT, [Component.V], 10)
        assert [(r.channel, r.start, r.end) for r in mapped.regions] == [("L_V", 8, 9), ("R_V", 0, 2)]
        with pytest.raises(ShapeMismatch):
            eval_harness.grf_regions_from_input(_regions(Provenance.LRP, ("ML", 0, 1)),
                                                InputLayout.TEMPORAL_CONCAT, [Component.V], 10)

    def test_overlap_scores(self):
        a = _regions(Provenance.LRP, ("L_V", 0, 9), ("R_V", 0, 4))
        b = _regions(Provenance.SPM, ("L_V", 5, 14))
        per_channel, overall = eval_harness.overlap_score(a, b)
        assert per_channel == {"L_V": pytest.approx(1 / 3), "R_V": 0.0}
        assert overall == pytest.approx(0.25)
        assert eval_harness.overlap_score(RegionSet(provenance=Provenance.LRP),
                                          RegionSet(provenance=Provenance.SPM)) == ({}, 1.0)

    @pytest.mark.parametrize("fraction", [0.1, 0.5, 0.9])
    def test_selected_mass_is_minimal(self, fraction):
        rng = np.random.default_rng(12)
        for _ in range(20):
            curve = rng.random((2, 30))
            regions = eval_harness.relevance_regions(curve, fraction, ["A", "B"])
            chosen = np.zeros_like(curve, dtype=bool)
            for row, name in enumerate(["A", "B"]):
                chosen[row, sorted(regions.covered(name))] = True
            target = fraction * curve.sum()
            mass = curve[chosen].sum()
            assert mass >= target * (1 - 1e-9)
            assert mass - curve[chosen].min() < target
            assert curve[chosen].min() >= curve[~chosen].max(initial=0.0)

    def test_overlap_is_symmetric(self):
        rng = np.random.default_rng(13)

        def random_set(provenance: Provenance) -> RegionSet:
            spans = []
            for _ in range(int(rng.integers(0, 4))):
                start = int(rng.integers(0, 40))
                spans.append((str(rng.choice(["L_V", "R_V", "L_AP"])), start, start + int(rng.integers(0, 10))))
            return _regions(provenance, *spans)

        for _ in range(50):
            a, b = random_set(Provenance.LRP), random_set(Provenance.SPM)
            assert eval_harness.overlap_score(a, b) == eval_harness.overlap_score(b, a)
            assert eval_harness.overlap_score(a, a)[1] == 1.0
            assert 0.0 <= eval_harness.overlap_score(a, b)[1] <= 1.0

    def test_consistency_with_literature(self):
        literature = _regions(Provenance.LITERATURE, ("L_V", 10, 20), ("R_AP", 0, 3))
        rows = eval_harness.region_consistency(literature, _regions(Provenance.LRP, ("L_V", 18, 30)),
                                               _regions(Provenance.SPM, ("R_AP", 5, 9)))
        assert [(r["lrp"], r["spm"]) for r in rows] == [(True, False), (False, False)]

    def test_regions_file(self, tmp_path):
        path = tmp_path / "regions.csv"
        eval_harness.write_regions([_regions(Provenance.LITERATURE, ("L_V", 1, 4)),
                                    _regions(Provenance.SPM, ("R_ML", 0, 0))], path)
        loaded = eval_harness.load_regions(path, T=10)
        assert set(loaded) == {Provenance.LITERATURE, Provenance.SPM}
        assert loaded[Provenance.LITERATURE].regions[0] == Region(name="r0", channel="L_V", start=1, end=4)

    @pytest.mark.parametrize("body", [
        "name,channel,start,end\nr,L_V,1,2\n",
        "name,channel,start,end,provenance\nr,V,1,2,literature\n",
        "name,channel,start,end,provenance\nr,L_V,5,2,literature\n",
        "name,channel,start,end,provenance\nr,L_V,5,12,literature\n",
        "name,channel,start,end,provenance\nr,L_V,1,2,guess\n",
    ])
    def test_invalid_regions_files(self, tmp_path, body):
        path = tmp_path / "regions.csv"
        path.write_text("# hand-made\n" + body)
        with pytest.raises(SchemaError):
            eval_harness.load_regions(path, T=10)

    def test_missing_regions_file(self, tmp_path):
        with pytest.raises(MissingInput):
            eval_harness.load_regions(tmp_path / "absent.csv")

    def test_bundled_example_file(self):
        path = Path(__file__).parent / "data" / "literature_regions.example.csv"
        loaded = eval_harness.load_regions(path, T=101)
        assert list(loaded) == [Provenance.LITERATURE]
        assert len(loaded[Provenance.LITERATURE].regions) == 7
