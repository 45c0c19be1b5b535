import numpy as np
import pytest

from rotmatch.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from rotmatch.config import Config, load_config
from rotmatch.model import MatcherModel, load_model, save_model


class TestCheckpointFormat:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        state = {
            "a.weight": rng.normal(size=(3, 4)).astype(np.float32),
            "b.bias": rng.normal(size=(7,)).astype(np.float64),
            "scalar": np.float32(2.5).reshape(()),
        }
        path = tmp_path / "m.rmckpt"
        save_checkpoint(path, state)
        back = load_checkpoint(path)
        assert list(back.keys()) == list(state.keys())
        for k in state:
            assert np.array_equal(back[k], np.asarray(state[k]))
            assert back[k].dtype == np.asarray(state[k]).dtype

    def test_magic_bytes(self, tmp_path):
        path = tmp_path / "m.rmckpt"
        save_checkpoint(path, {"x": np.zeros(2, dtype=np.float32)})
        assert path.read_bytes()[:8] == MAGIC == b"RMCKPT01"

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.rmckpt"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
        with pytest.raises(ValueError, match="magic"):
            load_checkpoint(path)

    def test_little_endian_payload(self, tmp_path):
        path = tmp_path / "m.rmckpt"
        save_checkpoint(path, {"x": np.array([1.0], dtype=np.float32)})
        data = path.read_bytes()
        assert data[-4:] == np.array([1.0], dtype="<f4").tobytes()


class TestModelCheckpoint:
    def test_save_load_identical_behaviour(self, tmp_path):
        cfg = Config.default()
        cfg.backbone.base_width = 8
        cfg.backbone.coarse_dim = 16
        cfg.backbone.fine_dim = 8
        cfg.matcher.d_model = 16
        cfg.matcher.n_blocks = 2
        model = MatcherModel(cfg, rng=np.random.default_rng(3))
        rng = np.random.default_rng(4)
        img_a = rng.random((3, 32, 32)).astype(np.float32)
        img_b = rng.random((3, 32, 32)).astype(np.float32)
        mset1, _, _ = model.match_pair(img_a, img_b)
        path = str(tmp_path / "model.rmckpt")
        save_model(path, model)
        back = load_model(path)
        mset2, _, _ = back.match_pair(img_a, img_b)
        assert np.array_equal(mset1.idx_a, mset2.idx_a)
        assert np.array_equal(mset1.confidence, mset2.confidence)

    def test_shape_mismatch_rejected(self, tmp_path):
        cfg = Config.default()
        cfg.backbone.base_width = 8
        cfg.backbone.coarse_dim = 16
        cfg.backbone.fine_dim = 8
        model = MatcherModel(cfg)
        path = str(tmp_path / "model.rmckpt")
        save_model(path, model)
        cfg2 = load_config(path + ".config")
        cfg2.backbone.base_width = 16
        other = MatcherModel(cfg2)
        from rotmatch.checkpoint import load_checkpoint as lc
        with pytest.raises(ValueError, match="shape mismatch"):
            other.load_state_dict(lc(path))


class TestConfig:
    def test_defaults_printable_and_reparseable(self, tmp_path):
        text = Config.default().to_text()
        assert "backbone.variant" in text and "matcher.theta_c" in text
        path = tmp_path / "c.cfg"
        path.write_text(text)
        cfg = load_config(path)
        assert cfg.to_text() == text

    def test_overrides(self):
        cfg = load_config(None, overrides=["backbone.variant=plain",
                                           "train.steps=7",
                                           "matcher.theta_c=0.4"])
        assert cfg.backbone.variant == "plain"
        assert cfg.train.steps == 7
        assert cfg.matcher.theta_c == 0.4

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown config key"):
            load_config(None, overrides=["backbone.nope=1"])

    def test_invalid_value_rejected(self):
        with pytest.raises(ValueError):
            load_config(None, overrides=["train.steps=0"])

    def test_hash_stable(self):
        assert Config.default().hash() == Config.default().hash()
        other = load_config(None, overrides=["train.steps=9"])
        assert other.hash() != Config.default().hash()
