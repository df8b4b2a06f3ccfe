"""Configuration validation/IO and the binary checkpoint format."""

import json

import numpy as np
import pytest

from treevqa.checkpoint import MAGIC, CheckpointError, load_model, save_model
from treevqa.config import ConfigError, ModelConfig
from util import make_scene, relational_tree, tiny_config, tiny_model


class TestConfig:
    def test_defaults_follow_reference_settings(self):
        cfg = ModelConfig()
        assert cfg.d_x == 300 and cfg.d_t == 128
        assert cfg.d_h == 1024 and cfg.num_heads == 8
        assert cfg.conv_window == 3 and cfg.max_subtree_len == 4
        assert cfg.d_v == 2048 and cfg.d_out == 1024
        assert cfg.num_steps == 4 and cfg.epochs == 30
        assert cfg.base_lr == 1e-3 and cfg.peak_lr == 4e-3
        assert cfg.lr_decay == 0.5
        assert len(cfg.pos_tags) == 42

    def test_heads_must_divide_hidden(self):
        with pytest.raises(ConfigError, match="divisible"):
            ModelConfig(d_h=10, num_heads=3).validate()

    def test_unknown_field_rejected(self):
        with pytest.raises(ConfigError, match="unknown"):
            ModelConfig.from_dict({"d_h": 8, "bogus": 1})

    def test_json_load_and_overrides(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"d_h": 16, "num_heads": 2, "seed": 5}))
        cfg = ModelConfig.load_json(path)
        assert cfg.d_h == 16 and cfg.seed == 5
        assert cfg.d_x == 300  # untouched default
        assert cfg.with_overrides(seed=9).seed == 9

    def test_round_trip_dict(self):
        cfg = tiny_config(seed=3)
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg

    def test_ablation_steps(self):
        cfg = tiny_config(no_message_passing=True)
        assert cfg.effective_steps == 0

    def test_bad_values(self):
        for kwargs in ({"max_subtree_len": 1}, {"num_steps": -1},
                       {"val_fraction": 0.7, "test_fraction": 0.5},
                       {"lr_decay": 0.0}, {"base_lr": 5e-3}):
            with pytest.raises(ConfigError):
                ModelConfig(**kwargs).validate()


class TestCheckpoint:
    def test_round_trip_to_f32_precision(self, tmp_path):
        model = tiny_model(seed=31)
        path = tmp_path / "m.ckpt"
        save_model(model, path)
        loaded = load_model(path)
        assert loaded.config == model.config
        assert loaded.space.labels == model.space.labels
        assert loaded.word_vocab == model.word_vocab
        for (name_a, node_a), (name_b, node_b) in zip(model.store.items(),
                                                      loaded.store.items()):
            assert name_a == name_b
            assert node_a.trainable == node_b.trainable
            np.testing.assert_array_equal(
                node_a.value.array.astype(np.float32),
                node_b.value.array.astype(np.float32))

    def test_unknown_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOPE!" + b"\x00" * 64)
        with pytest.raises(CheckpointError, match="magic"):
            load_model(path)

    def test_truncated_file_rejected(self, tmp_path):
        model = tiny_model(seed=1)
        path = tmp_path / "m.ckpt"
        save_model(model, path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(CheckpointError, match="truncated"):
            load_model(path)

    def test_magic_constant(self):
        assert MAGIC == b"STCG1"

    def test_no_partial_file_on_failure(self, tmp_path):
        # Write into a directory path that exists; the temp file must be
        # cleaned up if the final rename cannot happen.
        model = tiny_model(seed=2)
        target = tmp_path / "sub" / "m.ckpt"
        save_model(model, target)
        assert target.exists()
        leftovers = [p for p in (tmp_path / "sub").iterdir()
                     if p.name != "m.ckpt"]
        assert leftovers == []

    def test_reload_is_idempotent_for_evaluation(self, tmp_path):
        # After the first float32 cast, save/load is lossless, so scores
        # from consecutive reloads are identical.
        model = tiny_model(seed=41)
        tree = relational_tree()
        scene = make_scene(np.random.default_rng(1), 4, model.config.d_v)
        path_a, path_b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_model(model, path_a)
        loaded_a = load_model(path_a)
        save_model(loaded_a, path_b)
        loaded_b = load_model(path_b)
        pred_a = loaded_a.forward(tree, scene).prediction
        pred_b = loaded_b.forward(tree, scene).prediction
        np.testing.assert_array_equal(pred_a.p, pred_b.p)
        assert pred_a.argmax_label == pred_b.argmax_label
