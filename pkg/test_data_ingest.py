"""
Tests for GRF ingestion, input assembly, fold planning and synthetic data
"""

import io

import numpy as np
import pytest

from gaitxai.core.errors import (
    DataNotFound,
    EmptyDataset,
    ExitCode,
    LabelConflict,
    LengthMismatch,
    NonFiniteValue,
    SchemaError,
    ShapeMismatch,
    TooFewSubjects,
)
from gaitxai.models.gait import CHANNEL_ORDER, ChannelId, Component, CsvSchema, Dataset, InputLayout, SyntheticSpec
from gaitxai.services import data_ingest

HEADER = "subject_id,trial_id,sex,body_mass_kg,channel,v_0,v_1,v_2\n"


def canonical_rows(subject: str, trial: str, sex: str, mass: str = "70.0", offset: float = 0.0) -> str:
    return "".join(
        f"{subject},{trial},{sex},{mass},{channel.value},{offset + i},{offset + i + 1.5},{offset - i}\n"
        for i, channel in enumerate(CHANNEL_ORDER)
    )


class TestCanonicalParsing:
    def test_parses_and_orders_trials(self):
        text = HEADER + canonical_rows("S2", "T01", "M") + canonical_rows("S1", "T02", "F") + canonical_rows("S1", "T01", "F")
        dataset = data_ingest.parse_trials(text.encode())
        assert [t.origin for t in dataset.trials] == [("S1", "T01"), ("S1", "T02"), ("S2", "T01")]
        assert dataset.T == 3
        np.testing.assert_array_equal(dataset.trials[0].curves[ChannelId.L_AP], [1.0, 2.5, -1.0])
        assert dataset.class_counts() == {0: 2, 1: 1}

    def test_reads_from_path_and_stream(self, tmp_path):
        text = HEADER + canonical_rows("S1", "T01", "F")
        path = tmp_path / "trials.csv"
        path.write_text(text)
        assert len(data_ingest.parse_trials(path).trials) == 1
        assert len(data_ingest.parse_trials(io.BytesIO(text.encode())).trials) == 1

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataNotFound):
            data_ingest.parse_trials(tmp_path / "absent.csv")

    def test_short_row(self):
        rows = canonical_rows("S1", "T01", "F").splitlines()
        rows[2] = rows[2].rsplit(",", 1)[0]
        with pytest.raises(LengthMismatch):
            data_ingest.parse_trials((HEADER + "\n".join(rows) + "\n").encode())

    def test_non_finite_value(self):
        text = HEADER + canonical_rows("S1", "T01", "F").replace(",1.5,", ",nan,", 1)
        with pytest.raises(NonFiniteValue):
            data_ingest.parse_trials(text.encode())

    def test_conflicting_sex(self):
        text = HEADER + canonical_rows("S1", "T01", "F") + canonical_rows("S1", "T02", "M")
        with pytest.raises(LabelConflict):
            data_ingest.parse_trials(text.encode())

    @pytest.mark.parametrize("text", [
        "subject,trial_id,sex,body_mass_kg,channel,v_0,v_1\nS1,T01,F,70,L_V,1,2\n",
        HEADER + canonical_rows("S1", "T01", "F").replace("L_V", "L_X"),
        HEADER + canonical_rows("S1", "T01", "X"),
        HEADER + "".join(canonical_rows("S1", "T01", "F").splitlines(keepends=True)[1:]),
        HEADER + canonical_rows("S1", "T01", "F", mass="-3"),
        HEADER,
    ])
    def test_schema_errors(self, text):
        with pytest.raises(SchemaError):
            data_ingest.parse_trials(text.encode())

    def test_writer_output_parses_back(self, small_dataset, tmp_path):
        path = tmp_path / "synthetic.csv"
        data_ingest.write_trials(small_dataset, path)
        parsed = data_ingest.parse_trials(path)
        assert [t.origin for t in parsed.trials] == [t.origin for t in small_dataset.trials]
        for a, b in zip(parsed.trials, small_dataset.trials):
            for channel in CHANNEL_ORDER:
                np.testing.assert_array_equal(a.curves[channel], b.curves[channel])
            assert a.body_mass_kg == b.body_mass_kg

    @pytest.mark.parametrize("seed", range(5))
    def test_canonical_file_is_rewritten_byte_for_byte(self, seed):
        rng = np.random.default_rng(seed)
        T = int(rng.integers(2, 9))
        lines = [",".join(["subject_id", "trial_id", "sex", "body_mass_kg", "channel"] + [f"v_{i}" for i in range(T)])]
        for subject in range(int(rng.integers(1, 4))):
            sex = "FM"[int(rng.integers(2))]
            mass = repr(round(float(rng.uniform(40.0, 110.0)), 1))
            for trial in range(int(rng.integers(1, 3))):
                for channel in CHANNEL_ORDER:
                    values = ",".join(repr(float(v)) for v in rng.normal(0.0, 500.0, size=T))
                    lines.append(f"S{subject:02d},T{trial:02d},{sex},{mass},{channel.value},{values}")
        text = "\n".join(lines) + "\n"
        assert data_ingest.trials_to_csv(data_ingest.parse_trials(text.encode())) == text


class TestGaitrec:
    def _write_directory(self, directory):
        mapping = data_ingest.GaitrecMapping()
        (directory / mapping.metadata_file).write_text(
            "SUBJECT_ID,SEX,BODY_WEIGHT,AGE\n1,0,61.5,30\n2,1,82.0,41\n"
        )
        for i, channel in enumerate(CHANNEL_ORDER):
            component = channel.component.value
            lines = [f"SUBJECT_ID,SESSION_ID,TRIAL_ID,F_{component}_PRO_1,F_{component}_PRO_2,F_{component}_PRO_3"]
            lines += [f"1,10,1,{i},{i + 1},{i + 2}", f"2,20,1,{-i},{-i - 1},{-i - 2}"]
            (directory / mapping.files[channel]).write_text("\n".join(lines) + "\n")

    def test_directory_join(self, tmp_path):
        self._write_directory(tmp_path)
        dataset = data_ingest.load_gaitrec_directory(tmp_path)
        assert [t.origin for t in dataset.trials] == [("1", "10_1"), ("2", "20_1")]
        assert [t.sex.value for t in dataset.trials] == ["F", "M"]
        np.testing.assert_array_equal(dataset.trials[0].curves[ChannelId.R_V], [3.0, 4.0, 5.0])
        assert dataset.trials[1].body_mass_kg == 82.0

    def test_missing_channel_file(self, tmp_path):
        self._write_directory(tmp_path)
        (tmp_path / "GRF_F_ML_PRO_right.csv").unlink()
        with pytest.raises(DataNotFound):
            data_ingest.load_gaitrec_directory(tmp_path)

    def test_stacked_file_with_mapping(self, tmp_path):
        mapping_path = tmp_path / "mapping.txt"
        mapping_path.write_text("# site export\nsex.female=f\nsex.male=m\nchannel.L_V=LV\n")
        mapping = data_ingest.load_gaitrec_mapping(mapping_path)
        assert mapping.sex_female == "f"
        assert mapping.channel_codes[ChannelId.L_V] == "LV"
        assert mapping.channel_codes[ChannelId.R_ML] == "F_ML_PRO_right"

        header = "SUBJECT_ID,SESSION_ID,TRIAL_ID,SEX,BODY_WEIGHT,CHANNEL,F_GRF_PRO_1,F_GRF_PRO_2\n"
        rows = "".join(f"7,1,2,m,90,{mapping.channel_codes[c]},{i},{i * 2}\n" for i, c in enumerate(CHANNEL_ORDER))
        dataset = data_ingest.parse_trials((header + rows).encode(), CsvSchema.GAITREC_ADAPTER, mapping)
        assert dataset.trials[0].origin == ("7", "1_2")
        assert dataset.trials[0].label == 1
        np.testing.assert_array_equal(dataset.trials[0].curves[ChannelId.L_AP], [1.0, 2.0])

    def test_unmapped_codes(self):
        header = "SUBJECT_ID,SESSION_ID,TRIAL_ID,SEX,BODY_WEIGHT,CHANNEL,F_GRF_PRO_1,F_GRF_PRO_2\n"
        with pytest.raises(SchemaError):
            data_ingest.parse_trials((header + "1,1,1,2,70,F_V_PRO_left,1,2\n").encode(), CsvSchema.GAITREC_ADAPTER)


class TestInputAssembly:
    def test_min_max_normalize(self):
        np.testing.assert_allclose(data_ingest.min_max_normalize([2.0, 4.0, 6.0]), [0.0, 0.5, 1.0])
        np.testing.assert_array_equal(data_ingest.min_max_normalize([3.0, 3.0]), [0.5, 0.5])
        with pytest.raises(NonFiniteValue):
            data_ingest.min_max_normalize([1.0, np.inf])

    def test_min_max_normalize_properties(self):
        rng = np.random.default_rng(12)
        for _ in range(50):
            x = rng.normal(rng.normal(0.0, 100.0), rng.uniform(0.1, 50.0), size=int(rng.integers(2, 60)))
            y = data_ingest.min_max_normalize(x)
            assert y.min() == 0.0 and y.max() == 1.0
            order = np.argsort(x, kind="stable")
            assert np.all(np.diff(y[order]) >= 0)
            np.testing.assert_array_equal(data_ingest.min_max_normalize(y), y)

    def test_temporal_concat_layout(self, small_dataset):
        trial = small_dataset.trials[0]
        sample = data_ingest.assemble_input(trial)
        T = small_dataset.T
        assert sample.shape == (3, 2 * T)
        assert sample.channel_names == ("V", "AP", "ML")
        np.testing.assert_allclose(sample.channels[1, T:], data_ingest.min_max_normalize(trial.curves[ChannelId.R_AP]))
        assert sample.channels.min() >= 0.0 and sample.channels.max() <= 1.0

    def test_channel_stack_layout(self, small_dataset):
        sample = data_ingest.assemble_input(small_dataset.trials[0], InputLayout.CHANNEL_STACK)
        assert sample.shape == (6, small_dataset.T)
        assert sample.channel_names == ("L_V", "R_V", "L_AP", "R_AP", "L_ML", "R_ML")

    def test_vertical_only_subset(self, small_dataset):
        sample = data_ingest.assemble_input(small_dataset.trials[0], channel_subset=[Component.V])
        assert sample.shape == (1, 2 * small_dataset.T)

    def test_mapping_back_to_grf(self, small_dataset):
        T = small_dataset.T
        sample = data_ingest.assemble_input(small_dataset.trials[0])
        curves = data_ingest.input_to_grf(sample.channels, InputLayout.TEMPORAL_CONCAT, COMPONENTS, T)
        assert set(curves) == set(CHANNEL_ORDER)
        np.testing.assert_array_equal(curves[ChannelId.R_ML], sample.channels[2, T:])
        assert data_ingest.node_to_grf(InputLayout.TEMPORAL_CONCAT, COMPONENTS, T, 0, T + 3) == (ChannelId.R_V, 3)
        assert data_ingest.node_to_grf(InputLayout.CHANNEL_STACK, COMPONENTS, T, 2, 5) == (ChannelId.L_AP, 5)
        with pytest.raises(ShapeMismatch):
            data_ingest.node_to_grf(InputLayout.TEMPORAL_CONCAT, COMPONENTS, T, 3, 0)

    def test_stack_inputs(self, small_dataset):
        x, y = data_ingest.stack_inputs(data_ingest.assemble_inputs(small_dataset.trials))
        assert x.shape == (len(small_dataset.trials), 3, 2 * small_dataset.T)
        assert y.tolist() == [t.label for t in small_dataset.trials]


COMPONENTS = (Component.V, Component.AP, Component.ML)


class TestFolds:
    def test_folds_are_subject_disjoint_and_stratified(self, small_dataset):
        plan = data_ingest.make_folds(small_dataset, 4, seed=1)
        labels = small_dataset.subject_labels()
        for fold in range(4):
            test = plan.subjects_in(fold)
            assert not set(test) & set(plan.subjects_outside(fold))
            assert sorted(labels[s] for s in test) == [0, 1]
        assert sorted(plan.assignments) == sorted(small_dataset.subjects())

    def test_same_seed_same_plan(self, small_dataset):
        assert data_ingest.make_folds(small_dataset, 2, 5) == data_ingest.make_folds(small_dataset, 2, 5)

    def test_single_fold(self, small_dataset):
        plan = data_ingest.make_folds(small_dataset, 1, 0)
        assert set(plan.assignments.values()) == {0}

    def test_too_many_folds(self, small_dataset):
        with pytest.raises(TooFewSubjects):
            data_ingest.make_folds(small_dataset, 5, 0)

    def test_unequal_classes_in_ten_folds(self):
        spec = SyntheticSpec(n_female_subjects=34, n_male_subjects=28, trials_per_subject=1, T=11,
                             bump_center=5, bump_width=2)
        dataset = data_ingest.generate_synthetic(spec, 0)
        labels = dataset.subject_labels()
        for seed in (0, 42):
            plan = data_ingest.make_folds(dataset, 10, seed)
            for fold in range(10):
                test = plan.subjects_in(fold)
                assert len(test) in (6, 7)
                assert sum(labels[s] == 0 for s in test) in (3, 4)

    def test_empty_dataset_is_rejected(self, small_dataset):
        with pytest.raises(EmptyDataset) as info:
            Dataset(trials=[], T=5)
        assert info.value.exit_code is ExitCode.PRECONDITION
        with pytest.raises(EmptyDataset):
            small_dataset.subset(["S999"])


class TestSynthetic:
    def test_counts_and_determinism(self, small_spec):
        first = data_ingest.generate_synthetic(small_spec, 3)
        second = data_ingest.generate_synthetic(small_spec, 3)
        assert data_ingest.trials_to_csv(first) == data_ingest.trials_to_csv(second)
        assert len(first.trials) == 16
        assert first.class_counts() == {0: 8, 1: 8}

    def test_bump_only_on_class_one_left_vertical(self, small_spec, small_dataset):
        lo, hi = small_spec.window
        means = {
            (label, channel): np.mean([t.curves[channel] for t in small_dataset.of_class(label)], axis=0)
            for label in (0, 1) for channel in (ChannelId.L_V, ChannelId.R_V)
        }
        left_gap = means[(1, ChannelId.L_V)] - means[(0, ChannelId.L_V)]
        right_gap = means[(1, ChannelId.R_V)] - means[(0, ChannelId.R_V)]
        assert left_gap[small_spec.bump_center] > 0.4
        assert np.abs(right_gap).max() < 0.15
        assert np.abs(np.delete(left_gap, range(lo, hi + 1))).max() < 0.15

    def test_noise_free_classes_differ_only_in_the_window(self):
        flat = SyntheticSpec(n_subjects_per_class=2, trials_per_subject=2, T=31, bump_center=10, bump_width=3,
                             bump_amplitude=0.0, noise_sd=0.0)
        dataset = data_ingest.generate_synthetic(flat, 1)
        reference = dataset.trials[0]
        for trial in dataset.trials:
            for channel in CHANNEL_ORDER:
                np.testing.assert_array_equal(trial.curves[channel], reference.curves[channel])

        bumped = data_ingest.generate_synthetic(flat.model_copy(update={"bump_amplitude": 0.4}), 1)
        female, male = bumped.of_class(0)[0], bumped.of_class(1)[0]
        lo, hi = flat.window
        gap = male.curves[ChannelId.L_V] - female.curves[ChannelId.L_V]
        assert np.flatnonzero(gap).tolist() == list(range(lo, hi + 1))
        for channel in CHANNEL_ORDER[1:]:
            np.testing.assert_array_equal(male.curves[channel], female.curves[channel])

    def test_unequal_classes(self):
        spec = SyntheticSpec(n_female_subjects=34, n_male_subjects=28, T=21, bump_center=8, bump_width=3)
        dataset = data_ingest.generate_synthetic(spec, 42)
        assert dataset.class_counts() == {0: 170, 1: 140}

    def test_window_must_fit(self):
        with pytest.raises(ValueError):
            SyntheticSpec(T=21, bump_center=2, bump_width=5)
