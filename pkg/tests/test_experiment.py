import json

import pytest

from ecgvae.experiment import ExperimentConfig, ModelSpec

from helpers import run_cli


class TestConfig:
    def test_names(self):
        assert ModelSpec(2).naive_name == "naive_L2"
        assert ModelSpec(2).specific_name == "specific_L2"
        assert ModelSpec(10, 2).specific_name == "split_L10_P2"
        assert ModelSpec(4, 4).specific_name == "specific_L4"

    def test_json_roundtrip(self):
        cfg = ExperimentConfig(models=(ModelSpec(3), ModelSpec(6, 2)), folds=(0, 2))
        back = ExperimentConfig(**json.loads(json.dumps(cfg.to_dict())))
        assert back == cfg

    def test_train_config(self):
        tc = ExperimentConfig(beta=2.0, gamma=50.0, patience=7).train_config(11, seed_offset=3)
        assert (tc.weights.beta, tc.weights.gamma, tc.patience_epochs, tc.max_epochs, tc.seed) == (2.0, 50.0, 7, 11, 3)


@pytest.fixture(scope="module")
def toy_report(tmp_path_factory):
    out = tmp_path_factory.mktemp("exp") / "report.json"
    code = run_cli("experiment", "--patients", 20, "--records-per-patient", 1, "--prevalence", 0.3,
                   "--pretrain-patients", 12, "--pretrain-epochs", 1, "--head-epochs", 1, "--full-epochs", 1,
                   "--batch-size", 16, "--latent-dims", 2, "--split", "4:1", "--folds", 0, "--out", out)
    assert code == 0
    return json.loads(out.read_text())


class TestToyExperiment:
    def test_rows(self, toy_report):
        fold_rows = [r for r in toy_report["rows"] if r["fold"] == "0"]
        assert [r["config"] for r in fold_rows] == [
            "naive_L2", "specific_L2_head", "specific_L2", "naive_L4", "split_L4_P1_head", "split_L4_P1",
            "pca_k2", "sexage"]
        means = [r for r in toy_report["rows"] if r["fold"] == "mean"]
        assert len(means) == len(fold_rows)

    def test_paired_p_values(self, toy_report):
        by = {r["config"]: r for r in toy_report["rows"] if r["fold"] == "0"}
        assert by["specific_L2"]["p_value_vs"] == "naive_L2"
        assert by["split_L4_P1"]["p_value_vs"] == "naive_L4"
        assert 0 <= by["split_L4_P1"]["p_value"] <= 1
        assert by["naive_L2"]["p_value"] is None

    def test_metadata(self, toy_report):
        models = toy_report["meta"]["experiment"]["models"]
        assert models == [{"latent_dim": 2, "pred_dim": None}, {"latent_dim": 4, "pred_dim": 1}]

    def test_bad_split_flag(self, tmp_path):
        assert run_cli("experiment", "--split", "4-1", "--out", tmp_path / "r.json") == 2
