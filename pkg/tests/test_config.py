import pytest
import yaml

from rcfuse.config import AblationConfig, RunConfig, load_config
from rcfuse.scene import ConfigurationError


def test_defaults():
    cfg = load_config()
    assert cfg.scene.n_frames == 10
    assert cfg.train.epochs == 10
    assert cfg.ablation.seeds == (0, 1, 2)


def test_yaml_file_updates_nested(tmp_path):
    p = tmp_path / "cfg.yaml"
    p.write_text(yaml.safe_dump({
        "scene": {"n_frames": 4, "camera": {"focal": 120.0}},
        "train": {"epochs": 2, "lr": 0.01},
    }))
    cfg = load_config(p)
    assert cfg.scene.n_frames == 4
    assert cfg.scene.camera.focal == 120.0
    assert cfg.scene.dt == 0.5  # untouched default
    assert cfg.train.epochs == 2


def test_unknown_key_rejected(tmp_path):
    p = tmp_path / "cfg.yaml"
    p.write_text(yaml.safe_dump({"scene": {"frames": 4}}))
    with pytest.raises(ConfigurationError, match="frames"):
        load_config(p)


def test_non_mapping_rejected(tmp_path):
    p = tmp_path / "cfg.yaml"
    p.write_text("- just\n- a list\n")
    with pytest.raises(ConfigurationError):
        load_config(p)


def test_dotted_overrides():
    cfg = load_config(overrides=["train.lr=0.005", "scene.n_frames=7",
                                 "model.decoder.num_queries=12"])
    assert cfg.train.lr == 0.005
    assert cfg.scene.n_frames == 7
    assert cfg.model.decoder.num_queries == 12


def test_override_list_becomes_tuple():
    cfg = load_config(overrides=["scene.bev_extent=[-10, 10, -10, 10]"])
    assert cfg.scene.bev_extent == (-10, 10, -10, 10)


def test_bad_override_rejected():
    with pytest.raises(ConfigurationError):
        load_config(overrides=["train.nope=1"])
    with pytest.raises(ConfigurationError):
        load_config(overrides=["no_equals_sign"])
    with pytest.raises(ConfigurationError):
        load_config(overrides=["bogus.section.lr=1"])


def test_hash_stability_and_sensitivity():
    a = RunConfig()
    b = RunConfig()
    assert a.hash() == b.hash()
    assert len(a.hash()) == 16
    b.train.lr = 0.12345
    assert a.hash() != b.hash()


def test_ablation_defaults_subset_of_modes():
    from rcfuse.model import ABLATION_MODES

    cfg = AblationConfig()
    assert set(cfg.modes) <= set(ABLATION_MODES)
