import json

import pytest

from goalstack.config import PipelineConfig, config_from_dict, config_hash, config_to_dict, load_config
from goalstack.errors import ConfigError


class TestConfig:
    def test_defaults_follow_reference_sizing(self):
        cfg = PipelineConfig().validate()
        assert cfg.dim == 256
        assert (cfg.grid.h, cfg.grid.w, cfg.grid.half_extent) == (200, 200, 51.2)
        assert cfg.tracker.layers == 6 and cfg.map.layers == 6
        assert cfg.motion.layers == 3 and cfg.occ.blocks == 5 and cfg.plan.layers == 3
        assert cfg.motion.modes == 6 and cfg.motion.horizon == 12 and cfg.plan.horizon == 6
        assert cfg.map.n_things == 300
        assert (cfg.tracker.spawn_threshold, cfg.tracker.keep_threshold) == (0.4, 0.35)
        assert cfg.plan.sigma == 1.0 and cfg.plan.gate == 5.0
        assert cfg.plan.lam_coord == 1.0 and cfg.plan.lam_obs == 5.0
        assert cfg.plan.collision_pairs == ((1.0, 0.0), (0.4, 0.5), (0.1, 1.0))
        assert cfg.patience_frames(2.0) == 4

    def test_roundtrip(self):
        cfg = PipelineConfig(dim=64, heads=4)
        again = config_from_dict(config_to_dict(cfg))
        assert again == cfg

    def test_hash_stable_under_reordering(self, tmp_path):
        d = config_to_dict(PipelineConfig())
        reordered = dict(reversed(list(d.items())))
        assert config_from_dict(d) == config_from_dict(reordered)
        assert config_hash(config_from_dict(d)) == config_hash(config_from_dict(reordered))

    def test_hash_changes_with_content(self):
        a = config_from_dict({"seed": 1})
        b = config_from_dict({"seed": 2})
        assert config_hash(a) != config_hash(b)

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            config_from_dict({"dims": 64})
        with pytest.raises(ConfigError):
            config_from_dict({"tracker": {"spawn": 0.4}})

    def test_invalid_values_rejected(self):
        with pytest.raises(ConfigError):
            config_from_dict({"dim": 63})
        with pytest.raises(ConfigError):
            config_from_dict({"dim": 64, "heads": 5})
        with pytest.raises(ConfigError):
            config_from_dict({"grid": {"h": 50, "w": 50}})
        with pytest.raises(ConfigError):
            config_from_dict({"tracker": {"spawn_threshold": 1.5}})

    def test_load_config_errors(self, tmp_path):
        missing = tmp_path / "nope.json"
        with pytest.raises(FileNotFoundError):
            load_config(missing)
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(bad)

    def test_bundled_smoke_config_valid(self):
        from importlib import resources

        text = (resources.files("goalstack") / "data" / "smoke_config.json").read_text()
        cfg = config_from_dict(json.loads(text))
        assert cfg.dim == 64
