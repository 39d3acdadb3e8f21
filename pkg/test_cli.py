"""
End-to-end tests for the command-line pipeline and its exit codes
"""

from pathlib import Path
from typing import Dict

import pandas as pd
import pytest

from gaitxai.main import main
from gaitxai.services import data_ingest

SYNTH_ARGS = [
    "--subjects-per-class", "6", "--trials", "2", "--length", "41",
    "--bump-center", "12", "--bump-width", "4", "--bump-amplitude", "0.5",
]
STAGES = ("train", "explain", "spm", "report")


def _common(out: Path, data: Path, *extra: str) -> list:
    return ["--out", str(out), "--seed", "5", "--log-level", "warning",
            "--set", f"data.path={data}", "--set", "cv.k=3", "--set", "train.epochs=30", *extra]


def _run_pipeline(out: Path, *extra: str) -> Path:
    assert main(["synth", "--out", str(out), "--seed", "5", "--log-level", "warning", *SYNTH_ARGS]) == 0
    data = out / "synthetic.csv"
    for stage in STAGES:
        assert main([stage, *_common(out, data, *extra)]) == 0, stage
    return data


def _snapshot(out: Path) -> Dict[str, bytes]:
    return {str(p.relative_to(out)): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    literature = out / "literature.csv"
    literature.write_text(
        "# illustrative\nname,channel,start,end,provenance\n"
        "bump_window,L_V,8,16,literature\npush_off,R_AP,30,38,literature\n"
    )
    data = _run_pipeline(out, "--set", f"regions.path={literature}")
    return out, data, literature


@pytest.fixture
def data_file(tmp_path, small_dataset) -> Path:
    path = tmp_path / "trials.csv"
    data_ingest.write_trials(small_dataset, path)
    return path


class TestExitCodes:
    @pytest.mark.parametrize("argv,code,error", [
        (["train", "--bogus"], 4, "BadFlag"),
        ([], 4, "BadFlag"),
        (["train", "--set", "cv.folds=3"], 4, "ConfigError"),
        (["train", "--set", "cv.k=zero"], 4, "ConfigError"),
        (["train"], 2, "MissingInput"),
        (["train", "--config", "no-such.cfg"], 2, "MissingInput"),
        (["train", "--set", "data.path=no-such.csv"], 2, "DataNotFound"),
    ])
    def test_argument_and_config_errors(self, argv, code, error, capsys):
        assert main(argv) == code
        assert capsys.readouterr().err.strip().splitlines()[-1].startswith(f"{error}: ")

    def test_explain_before_train(self, tmp_path, data_file, capsys):
        assert main(["explain", "--out", str(tmp_path / "out"), "--set", f"data.path={data_file}"]) == 2
        assert capsys.readouterr().err.strip().splitlines()[-1].startswith("CheckpointMismatch: ")

    def test_more_folds_than_subjects(self, tmp_path, data_file, capsys):
        argv = ["train", "--out", str(tmp_path / "out"), "--set", f"data.path={data_file}", "--set", "cv.k=9"]
        assert main(argv) == 3
        assert capsys.readouterr().err.strip().splitlines()[-1].startswith("TooFewSubjects: ")

    def test_malformed_data(self, tmp_path, capsys):
        path = tmp_path / "bad.csv"
        path.write_text("subject_id,trial_id\nS1,T01\n")
        assert main(["spm", "--out", str(tmp_path), "--set", f"data.path={path}"]) == 3
        assert capsys.readouterr().err.strip().splitlines()[-1].startswith("SchemaError: ")


class TestSynth:
    def test_repeatable_output(self, tmp_path, capsys):
        for name in ("a.csv", "b.csv"):
            argv = ["synth", "--seed", "9", "--output", str(tmp_path / name), *SYNTH_ARGS]
            assert main(argv) == 0
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        assert "seed=9" in capsys.readouterr().out
        dataset = data_ingest.parse_trials(tmp_path / "a.csv")
        assert dataset.T == 41
        assert dataset.class_counts() == {0: 12, 1: 12}

    def test_unequal_classes(self, tmp_path):
        argv = ["synth", "--output", str(tmp_path / "c.csv"), "--female-subjects", "3", "--male-subjects", "2",
                "--trials", "1", "--length", "21", "--bump-center", "8", "--bump-width", "3"]
        assert main(argv) == 0
        assert data_ingest.parse_trials(tmp_path / "c.csv").class_counts() == {0: 3, 1: 2}


class TestPipeline:
    def test_outputs_are_written(self, pipeline):
        out, _, _ = pipeline
        for name in ("report.json", "report.txt", "checkpoints/fold_00.gxai", "checkpoints/fold_02.gxai",
                     "relevance/relevance_maps.csv", "relevance/mean_relevance.csv",
                     "relevance/total_relevance.csv", "spm/spm_curves.csv", "spm/L_V.summary.txt",
                     "spm/clusters.csv", "report/panel_a.svg", "report/panel_b.svg", "report/panel_c.svg",
                     "report/panel_d.svg", "report/overlap_table.txt", "report/regions.csv"):
            assert (out / name).is_file(), name
        assert "zero-rule baseline: 50.0%" in (out / "report.txt").read_text()

    def test_overlap_table_and_regions(self, pipeline):
        out, _, _ = pipeline
        table = (out / "report" / "overlap_table.txt").read_text()
        for pair in ("LRP vs SPM", "LRP vs literature", "SPM vs literature"):
            assert f"{pair}: overall " in table
        assert "bump_window" in table
        regions = pd.read_csv(out / "report" / "regions.csv")
        assert set(regions["provenance"]) >= {"lrp", "literature"}
        assert set(regions.loc[regions["provenance"] == "spm", "channel"]) <= {
            "L_V", "L_AP", "L_ML", "R_V", "R_AP", "R_ML"}

    def test_planted_bump_is_significant(self, pipeline):
        out, _, _ = pipeline
        clusters = pd.read_csv(out / "spm" / "clusters.csv")
        left_vertical = clusters[clusters["channel"] == "L_V"]
        assert ((left_vertical["start"] <= 16) & (left_vertical["end"] >= 8)).any()

    def test_rerun_is_byte_identical(self, pipeline):
        out, _, literature = pipeline
        before = _snapshot(out)
        _run_pipeline(out, "--set", f"regions.path={literature}")
        assert _snapshot(out) == before

    def test_explain_refuses_a_different_fold_count(self, pipeline, capsys):
        out, data, _ = pipeline
        argv = ["explain", "--out", str(out), "--seed", "5", "--set", f"data.path={data}", "--set", "cv.k=2"]
        assert main(argv) == 2
        assert capsys.readouterr().err.strip().splitlines()[-1].startswith("CheckpointMismatch: ")


class TestVerticalOnly:
    def test_ablation_runs_end_to_end(self, tmp_path):
        _run_pipeline(tmp_path, "--set", "input.channels=V")
        assert "mean accuracy:" in (tmp_path / "report.txt").read_text()
        regions = pd.read_csv(tmp_path / "report" / "regions.csv")
        assert set(regions["channel"]) <= {"L_V", "R_V"}
        assert (tmp_path / "report" / "panel_d.svg").is_file()
