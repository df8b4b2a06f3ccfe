"""Harness: training loop, schedule, evaluation, ablations, sweeps,
attention export, gradient audit, and the CLI."""

import json

import numpy as np
import pytest

from treevqa.checkpoint import load_model
from treevqa.cli import main as cli_main
from treevqa.config import ModelConfig
from treevqa.data import DataError, load_dataset
from treevqa.synth import SynthSpec, generate, write_dataset
from treevqa.train import (ablate, evaluate, export_attention, gradcheck,
                           round_sig, sweep_t, train)
from util import tiny_config


TRAIN_CFG = dict(d_x=8, d_t=6, d_h=8, num_heads=2, d_v=32, d_out=8,
                 num_steps=2, n_ans=8, batch_size=8, epochs=3,
                 val_fraction=0.25, seed=0)


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("data")
    write_dataset(generate(SynthSpec(num_instances=16, k_range=(3, 5), seed=5)),
                  path)
    return path


class TestTrain:
    def test_lr_schedule_starts_at_base(self, dataset_dir, tmp_path):
        report = train(ModelConfig(**TRAIN_CFG), dataset_dir,
                       tmp_path / "m.ckpt", quiet=True)
        assert report["epochs"][0]["lr"] == 1e-3
        assert report["epochs"][1]["lr"] == 2e-3  # linear warmup toward 4e-3

    def test_deterministic_runs_byte_identical(self, dataset_dir, tmp_path):
        blobs = []
        for sub in ("a", "b"):
            out = tmp_path / sub / "m.ckpt"
            train(ModelConfig(**TRAIN_CFG), dataset_dir, out, quiet=True)
            blobs.append((out.read_bytes(),
                          (tmp_path / sub / "m.ckpt.report.json").read_bytes()))
        assert blobs[0][0] == blobs[1][0]
        assert blobs[0][1] == blobs[1][1]

    def test_report_written_and_checkpoint_loads(self, dataset_dir, tmp_path):
        out = tmp_path / "m.ckpt"
        report = train(ModelConfig(**TRAIN_CFG), dataset_dir, out, quiet=True)
        on_disk = json.loads((tmp_path / "m.ckpt.report.json").read_text())
        assert on_disk["best_epoch"] == report["best_epoch"]
        model = load_model(out)
        assert model.space.size == 8

    def test_empty_dataset_errors_before_training(self, tmp_path):
        with pytest.raises(DataError):
            train(ModelConfig(**TRAIN_CFG), tmp_path / "nope", tmp_path / "m.ckpt")

    def test_entity_dim_mismatch_rejected(self, dataset_dir, tmp_path):
        cfg = ModelConfig(**{**TRAIN_CFG, "d_v": 16})
        with pytest.raises(DataError, match="d_v"):
            train(cfg, dataset_dir, tmp_path / "m.ckpt")


class TestEvaluate:
    def test_random_checkpoint_near_chance(self, tmp_path):
        # Chance level for 8 answers with 8/10 majority and 2 noise votes:
        # E[score] = (1/8) * (1 + 2/3) = 5/24, since prediction is
        # independent of the answer assignment at random init.
        data = tmp_path / "data"
        write_dataset(generate(SynthSpec(num_instances=64, k_range=(3, 5),
                                         seed=11)), data)
        cfg = ModelConfig(**{**TRAIN_CFG, "epochs": 1, "val_fraction": 0.0,
                             "base_lr": 1e-9, "peak_lr": 1e-9})
        out = tmp_path / "m.ckpt"
        train(cfg, data, out, quiet=True)
        result = evaluate(out, data, "all")
        chance = 5.0 / 24.0
        sigma = np.sqrt(chance * (1 - chance) / 64)
        assert abs(result["mean_score"] - chance) <= 3 * sigma + 0.05

    def test_split_selection_and_empty_split(self, dataset_dir, tmp_path):
        out = tmp_path / "m.ckpt"
        train(ModelConfig(**TRAIN_CFG), dataset_dir, out, quiet=True)
        val = evaluate(out, dataset_dir, "val")
        assert val["n"] == 4
        with pytest.raises(DataError, match="empty"):
            evaluate(out, dataset_dir, "test")

    def test_per_template_breakdown(self, dataset_dir, tmp_path):
        out = tmp_path / "m.ckpt"
        train(ModelConfig(**TRAIN_CFG), dataset_dir, out, quiet=True)
        result = evaluate(out, dataset_dir, "all")
        assert result["n"] == 16
        assert set(result["per_template"]) == {
            "attribute", "relational_left", "relational_right", "superlative"}
        total = sum(v["n"] for v in result["per_template"].values())
        assert total == 16

    def test_threads_match_serial(self, dataset_dir, tmp_path):
        out = tmp_path / "m.ckpt"
        train(ModelConfig(**TRAIN_CFG), dataset_dir, out, quiet=True)
        serial = evaluate(out, dataset_dir, "all", threads=1)
        threaded = evaluate(out, dataset_dir, "all", threads=4)
        assert serial["mean_score"] == threaded["mean_score"]


class TestAblateAndSweep:
    def test_ablation_csv_has_four_rows(self, dataset_dir, tmp_path):
        rows = ablate(ModelConfig(**TRAIN_CFG), dataset_dir,
                      tmp_path / "ablate.csv")
        assert [r["variant"] for r in rows] == [
            "full", "no_tree_conv", "no_message_passing", "no_fused_attention"]
        lines = (tmp_path / "ablate.csv").read_text().strip().splitlines()
        assert len(lines) == 5  # header + 4 rows

    def test_sweep_rows_and_t0_matches_ablation(self, dataset_dir, tmp_path):
        cfg = ModelConfig(**TRAIN_CFG)
        rows = sweep_t(cfg, dataset_dir, [0, 1], tmp_path / "sweep.csv")
        assert [r["T"] for r in rows] == [0, 1]
        ablation = ablate(cfg, dataset_dir, tmp_path / "ablate.csv")
        no_mp = next(r for r in ablation if r["variant"] == "no_message_passing")
        # T=0 and the message-passing ablation are the same code path.
        assert rows[0]["overall"] == no_mp["val_score"]

    def test_sweep_rejects_bad_values(self, dataset_dir, tmp_path):
        with pytest.raises(ValueError):
            sweep_t(ModelConfig(**TRAIN_CFG), dataset_dir, [],
                    tmp_path / "s.csv")
        with pytest.raises(ValueError):
            sweep_t(ModelConfig(**TRAIN_CFG), dataset_dir, [-1],
                    tmp_path / "s.csv")


class TestExportAttention:
    def test_trace_file_contents(self, dataset_dir, tmp_path):
        out = tmp_path / "m.ckpt"
        train(ModelConfig(**TRAIN_CFG), dataset_dir, out, quiet=True)
        payload = export_attention(out, dataset_dir, "q00001",
                                   tmp_path / "trace.json")
        on_disk = json.loads((tmp_path / "trace.json").read_text())
        assert on_disk == payload
        instances = load_dataset(dataset_dir)
        inst = next(i for i in instances if i.question_id == "q00001")
        k = inst.scene.num_entities
        steps = 2
        assert len(payload["instr_attn"]) == steps
        assert len(payload["msg_weights"]) == steps
        assert len(payload["msg_weights"][0]) == k
        # Every softmax row re-checks normalization at export time; the
        # values are rounded to 6 significant digits so allow that much.
        for row in payload["instr_attn"]:
            assert abs(sum(row) - 1.0) < 1e-5
        assert abs(sum(payload["final_attn"]) - 1.0) < 1e-5

    def test_exported_beta_matches_fresh_forward(self, dataset_dir, tmp_path):
        out = tmp_path / "m.ckpt"
        train(ModelConfig(**TRAIN_CFG), dataset_dir, out, quiet=True)
        payload = export_attention(out, dataset_dir, "q00002",
                                   tmp_path / "trace.json")
        model = load_model(out)
        inst = next(i for i in load_dataset(dataset_dir)
                    if i.question_id == "q00002")
        pred = model.forward(inst.tree, inst.scene).prediction
        np.testing.assert_allclose(payload["final_attn"], pred.beta,
                                   rtol=1e-5)
        assert payload["answer"] == pred.argmax_label

    def test_unknown_question_id(self, dataset_dir, tmp_path):
        out = tmp_path / "m.ckpt"
        train(ModelConfig(**TRAIN_CFG), dataset_dir, out, quiet=True)
        with pytest.raises(DataError, match="q99999"):
            export_attention(out, dataset_dir, "q99999", tmp_path / "t.json")


class TestGradcheck:
    def test_all_groups_within_tolerance(self):
        report = gradcheck(tiny_config(), seeds=(7,), coords_per_param=2)
        assert report["ok"], report
        assert report["max_rel_err"] < 1e-4

    def test_frozen_word_table_skipped(self):
        report = gradcheck(tiny_config(), seeds=(7,), coords_per_param=1)
        assert report["groups"]["embed.word"] == {"status": "skipped (frozen)"}

    def test_module_filter(self):
        report = gradcheck(tiny_config(), module_filter="tree-encoder",
                           seeds=(7,), coords_per_param=1)
        names = [n for n, e in report["groups"].items() if "max_rel_err" in e]
        assert names
        assert all(n.startswith("enc.") for n in names)


class TestRounding:
    def test_six_significant_digits(self):
        assert round_sig(0.123456789) == 0.123457
        assert round_sig(1234567.89) == 1234570.0
        assert round_sig(0.0) == 0.0


class TestCli:
    def test_usage_error_exit_1(self, capsys):
        assert cli_main(["train"]) == 1  # missing required flags

    def test_unknown_data_dir_exit_2(self, tmp_path):
        assert cli_main(["train", "--data", str(tmp_path / "none"),
                         "--out", str(tmp_path / "m.ckpt")]) == 2

    def test_gen_synth_and_train_eval_roundtrip(self, tmp_path, capsys):
        data = tmp_path / "data"
        assert cli_main(["gen-synth", "--out", str(data), "--num", "12",
                         "--k-min", "3", "--k-max", "5", "--seed", "3"]) == 0
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(TRAIN_CFG))
        out = tmp_path / "m.ckpt"
        assert cli_main(["train", "--config", str(cfg_path), "--data",
                         str(data), "--out", str(out)]) == 0
        capsys.readouterr()
        assert cli_main(["eval", "--ckpt", str(out), "--data", str(data),
                         "--split", "all"]) == 0
        result = json.loads(capsys.readouterr().out)
        assert result["n"] == 12 and "per_template" in result

    def test_predict_writes_jsonl(self, tmp_path):
        data = tmp_path / "data"
        cli_main(["gen-synth", "--out", str(data), "--num", "8",
                  "--k-min", "3", "--k-max", "5", "--seed", "3"])
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(TRAIN_CFG))
        out = tmp_path / "m.ckpt"
        cli_main(["train", "--config", str(cfg_path), "--data", str(data),
                  "--out", str(out)])
        pred_path = tmp_path / "preds.jsonl"
        assert cli_main(["predict", "--ckpt", str(out), "--data", str(data),
                         "--out", str(pred_path)]) == 0
        lines = pred_path.read_text().strip().splitlines()
        assert len(lines) == 8
        rec = json.loads(lines[0])
        assert set(rec) == {"scene_id", "question_id", "answer", "p_top5",
                            "beta"}
        assert len(rec["p_top5"]) == 5

    def test_bad_config_exit_1(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"d_h": 10, "num_heads": 3}))
        assert cli_main(["train", "--config", str(cfg_path), "--data",
                         str(tmp_path), "--out", str(tmp_path / "m")]) == 1

    def test_gradcheck_cli(self, capsys):
        assert cli_main(["gradcheck", "--seed", "7"]) == 0
        out = capsys.readouterr().out
        assert "skipped (frozen)" in out
        assert "ok" in out
