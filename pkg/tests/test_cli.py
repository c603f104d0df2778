import json

import pandas as pd
import pytest

from dasnlab.services.metrics import evaluate
from dasnlab.services.storage import read_json, read_scores


@pytest.fixture
def lab(tmp_path, cli, runner):
    """A small laboratory: config file, data and run directories under tmp_path."""

    class Lab:
        root = tmp_path
        data_dir = tmp_path / "data"
        config_path = tmp_path / "config.json"

        def run_dir(self, name):
            return tmp_path / "runs" / name

        def invoke(self, *args, out="dasn"):
            argv = [
                args[0],
                "--config", str(self.config_path),
                "--set", f"paths.data_dir={self.data_dir}",
                "--set", f"paths.out_dir={self.run_dir(out)}",
                *args[1:],
            ]
            return runner.invoke(cli, argv, catch_exceptions=False)

    Lab.config_path.write_text(json.dumps({
        "config_version": 1,
        "seed": 1,
        "task": "OCI_to_M",
        "data": {"input_dim": 6, "samples_per_identity": 4},
        "model": {"feature_dim": 4, "hidden_dim": 4},
        "train": {"mode": "DASN", "lr": 0.01, "epochs": 2, "batch_size": 32},
        "probe": {"epochs": 20, "factors": ["environment", "sensor"]},
    }))
    return Lab()


def ok(result):
    assert result.exit_code == 0, result.output
    return result


def test_gen_data_is_byte_reproducible(lab):
    ok(lab.invoke("gen-data"))
    first = {p.name: p.read_bytes() for p in lab.data_dir.glob("*") if p.suffix in (".csv", ".json")}
    lab.data_dir = lab.root / "again"
    ok(lab.invoke("gen-data"))
    second = {p.name: p.read_bytes() for p in lab.data_dir.glob("*") if p.suffix in (".csv", ".json")}
    for name in ("M.csv", "C.csv", "I.csv", "O.csv", "manifest.json"):
        assert first[name] == second[name]
    assert "resolved_config.gen-data.json" in second


def test_train_eval_probe_report(lab):
    ok(lab.invoke("gen-data"))
    ok(lab.invoke("train"))
    run = lab.run_dir("dasn")
    for name in ("model.dasn", "optimizer.dasn", "trainer_state.json", "architecture.json",
                 "history.csv", "divergence.json", "resolved_config.train.json"):
        assert (run / name).is_file(), name
    history = pd.read_csv(run / "history.csv")
    # 220 source samples in batches of 32: seven iterations per epoch
    assert len(history) == 14
    assert set(read_json(run / "divergence.json")["factors"]) == {"identity", "environment", "sensor"}

    ok(lab.invoke("eval"))
    report = read_json(run / "report.json")
    assert report["task"] == "OCI_to_M"
    assert report["samples"] == 60
    rescored = evaluate(read_scores(run / "scores.csv"))
    assert report["hter"] == rescored.hter
    assert report["auc"] == rescored.auc
    scores = (run / "scores.csv").read_bytes()

    pruned_dir = lab.root / "pruned"
    ok(lab.invoke("eval", "--prune-heads", "--output-dir", str(pruned_dir)))
    assert (pruned_dir / "scores.csv").read_bytes() == scores
    assert read_json(pruned_dir / "report.json")["pruned"] is True

    ok(lab.invoke("train", "--set", "train.mode=baseline", out="baseline"))
    ok(lab.invoke("probe", "--baseline", str(lab.run_dir("baseline"))))
    probe = read_json(run / "probe_report.json")
    assert set(probe["deltas"]) == {"environment", "sensor"}
    assert probe["baseline"]["label"] == "baseline"
    assert (run / "features_baseline.csv").is_file()
    assert (run / "features_target.csv").is_file()

    ok(lab.invoke("report", str(lab.run_dir("dasn")), str(lab.run_dir("baseline")),
                  "--output-dir", str(lab.root)))
    table = (lab.root / "ablation.md").read_text().splitlines()
    assert table[0] == "| Method | SiFs | Task | HTER(%) | AUC(%) |"
    assert len(table) == 4
    assert table[2].startswith("| DASN | identity+environment+sensor | OCI_to_M |")
    assert table[3].startswith("| baseline | - | OCI_to_M |")
    rows = pd.read_csv(lab.root / "ablation.csv")
    assert rows["HTER(%)"].iloc[0] == pytest.approx(100 * report["hter"], abs=0.005)


def test_probe_without_baseline(lab):
    ok(lab.invoke("gen-data"))
    ok(lab.invoke("train", "--set", "train.mode=ASN", "--set", 'train.factors=["sensor"]'))
    ok(lab.invoke("probe", "--set", "probe.export_features=false"))
    run = lab.run_dir("dasn")
    probe = read_json(run / "probe_report.json")
    assert probe["label"] == "ASN"
    assert set(probe["factors"]) == {"environment", "sensor"}
    assert not list(run.glob("features_*.csv"))


def test_resume_matches_uninterrupted_run(lab):
    ok(lab.invoke("gen-data"))
    ok(lab.invoke("train", out="straight"))
    ok(lab.invoke("train", "--set", "train.epochs=1", out="resumed"))
    ok(lab.invoke("train", "--resume", out="resumed"))
    straight, resumed = lab.run_dir("straight"), lab.run_dir("resumed")
    assert (resumed / "model.dasn").read_bytes() == (straight / "model.dasn").read_bytes()
    assert (resumed / "history.csv").read_bytes() == (straight / "history.csv").read_bytes()


def test_resume_rejects_other_mode(lab):
    ok(lab.invoke("gen-data"))
    ok(lab.invoke("train", "--set", "train.epochs=1"))
    result = lab.invoke("train", "--resume", "--set", "train.mode=ASN")
    assert result.exit_code == 1


def test_configuration_errors_exit_1(lab):
    ok(lab.invoke("gen-data"))
    assert lab.invoke("train", "--set", "train.lr=-1").exit_code == 1
    assert lab.invoke("train", "--set", "task=OCI_to_X").exit_code == 1
    assert lab.invoke("train", "--set", "train.unknown=3").exit_code == 1
    assert lab.invoke("train", "--no-such-flag").exit_code == 1
    assert lab.invoke("eval").exit_code == 1
    assert lab.invoke("report").exit_code == 1


def test_missing_inputs_exit_2(lab):
    assert lab.invoke("train").exit_code == 2
    lab.config_path = lab.root / "missing.json"
    assert lab.invoke("gen-data").exit_code == 2


def test_divergence_exits_3(lab):
    ok(lab.invoke("gen-data"))
    result = lab.invoke("train", "--set", "train.lr=1e300")
    assert result.exit_code == 3
    assert not (lab.run_dir("dasn") / "model.dasn").exists()


def test_report_is_byte_identical_on_rerun(lab):
    ok(lab.invoke("gen-data"))
    ok(lab.invoke("train", "--set", "train.epochs=1"))
    run = str(lab.run_dir("dasn"))
    ok(lab.invoke("report", run, "--output-dir", str(lab.root / "first")))
    ok(lab.invoke("report", run, "--output-dir", str(lab.root / "second")))
    first = (lab.root / "first" / "ablation.md").read_bytes()
    assert first == (lab.root / "second" / "ablation.md").read_bytes()
    assert len(first.decode().splitlines()) == 3
