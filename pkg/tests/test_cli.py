import json

import pytest
import yaml

from rcfuse.cli import main

TINY = {
    "scene": {
        "n_frames": 2,
        "bev_extent": [-20.0, 20.0, -20.0, 20.0],
        "objects_min": 2,
        "objects_max": 3,
        "speed_max": 4.0,
        "ego_speed": 1.0,
        "camera": {"image_height": 112, "image_width": 224, "focal": 140.0},
        "radar": {"points_per_object": 8.0, "clutter_rate": 6.0},
    },
    "model": {
        "backbone": {"stage_channels": [8, 16, 32, 64], "out_channels": 48,
                     "feat_hw": [8, 16]},
        "foundation": {"depth": 4, "embed_dim": 48, "num_heads": 4,
                       "input_hw": [112, 224], "tap_layers": [0, 1, 2, 3],
                       "inject_layers": [1, 2], "prior_channels": 16},
        "pillar": {"bev_extent": [-20.0, 20.0, -20.0, 20.0],
                   "grid_hw": [32, 32], "hidden": 32, "out_channels": 16,
                   "dense_out_channels": 32},
        "decoder": {"embed_dim": 48, "num_heads": 4, "ffn_dim": 96,
                    "num_queries": 16, "layers_train": 2, "layers_infer": 1,
                    "memory_capacity": 16, "memory_propagated": 4,
                    "bev_extent": [-20.0, 20.0, -20.0, 20.0],
                    "z_range": [-1.0, 4.0]},
        "use_adapter": False,
        "image_hw": [112, 224],
    },
    "train": {"epochs": 1, "radar_accum": 2, "grad_accum": 2,
              "score_threshold": 0.0},
}


@pytest.fixture(scope="module")
def cfg_file(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "tiny.yaml"
    p.write_text(yaml.safe_dump(TINY))
    return str(p)


@pytest.fixture(scope="module")
def dataset(cfg_file, tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "ds"
    rc = main(["generate", "--config", cfg_file, "--seed", "3",
               "--out", str(out)])
    assert rc == 0
    return str(out)


@pytest.fixture(scope="module")
def trained(cfg_file, dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "train"
    rc = main(["train", "--config", cfg_file, "--data", dataset,
               "--out", str(out), "--seed", "0"])
    assert rc == 0
    return str(out)


class TestGenerate:
    def test_writes_manifest(self, dataset):
        from pathlib import Path

        assert (Path(dataset) / "manifest.json").exists()
        manifest = json.loads((Path(dataset) / "manifest.json").read_text())
        assert manifest["num_frames"] == 2
        assert manifest["class_names"] == ["car", "truck", "pedestrian",
                                           "cyclist"]

    def test_refuses_nonempty_dir(self, cfg_file, dataset):
        assert main(["generate", "--config", cfg_file, "--out", dataset]) == 1

    def test_force_overwrites(self, cfg_file, dataset):
        assert main(["generate", "--config", cfg_file, "--out", dataset,
                     "--seed", "3", "--force"]) == 0

    def test_bad_frames_rejected(self, cfg_file, tmp_path):
        with pytest.raises(SystemExit):
            main(["generate", "--config", cfg_file, "--frames", "0",
                  "--out", str(tmp_path / "x")])

    def test_frames_flag(self, cfg_file, tmp_path):
        out = tmp_path / "ds3"
        assert main(["generate", "--config", cfg_file, "--frames", "3",
                     "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["num_frames"] == 3


class TestTrain:
    def test_artifacts(self, trained):
        from pathlib import Path

        out = Path(trained)
        assert (out / "final.ckpt").exists()
        assert (out / "epoch_0.ckpt").exists()
        records = [json.loads(l) for l in
                   (out / "train_log.jsonl").read_text().splitlines()]
        assert len(records) == 1
        assert "loss" in records[0]

    def test_warm_start(self, cfg_file, dataset, trained, tmp_path):
        out = tmp_path / "warm"
        rc = main(["train", "--config", cfg_file, "--data", dataset,
                   "--out", str(out), "--warm-start",
                   f"{trained}/final.ckpt"])
        assert rc == 0


class TestEval:
    def test_oracle_mode_perfect(self, cfg_file, dataset, tmp_path):
        out = tmp_path / "eval"
        rc = main(["eval", "--config", cfg_file, "--data", dataset,
                   "--out", str(out), "--oracle"])
        assert rc == 0
        report = json.loads((out / "metrics_report.json").read_text())
        assert report["mAP"] == pytest.approx(1.0)
        assert report["NDS"] == pytest.approx(1.0)
        assert "config_hash" in report

    def test_checkpoint_eval_outputs(self, cfg_file, dataset, trained,
                                     tmp_path):
        out = tmp_path / "eval"
        rc = main(["eval", "--config", cfg_file, "--data", dataset,
                   "--out", str(out), "--checkpoint",
                   f"{trained}/final.ckpt"])
        assert rc == 0
        report = json.loads((out / "metrics_report.json").read_text())
        assert 0.0 <= report["NDS"] <= 1.0
        # plots: one PR curve per class plus one BEV scatter per frame
        pngs = sorted(p.name for p in out.glob("*.png"))
        assert len(pngs) == 4 + 2

    def test_checkpoint_required(self, cfg_file, dataset, tmp_path):
        with pytest.raises(SystemExit):
            main(["eval", "--config", cfg_file, "--data", dataset,
                  "--out", str(tmp_path / "x")])


class TestAblateAndPlot:
    def test_ablate_writes_table(self, cfg_file, dataset, tmp_path):
        out = tmp_path / "abl"
        rc = main(["ablate", "--config", cfg_file, "--data", dataset,
                   "--val-data", dataset, "--out", str(out),
                   "--modes", "full_rc", "camera_one_stage",
                   "--seeds", "0"])
        assert rc == 0
        table = (out / "ablation_table.tsv").read_text().strip().splitlines()
        assert len(table) == 3
        rows = json.loads((out / "ablation_results.json").read_text())
        assert [r["mode"] for r in rows] == ["full_rc", "camera_one_stage"]

    def test_plot(self, cfg_file, dataset, tmp_path):
        out = tmp_path / "plots"
        rc = main(["plot", "--config", cfg_file, "--data", dataset,
                   "--out", str(out)])
        assert rc == 0
        assert len(list(out.glob("*.png"))) == 2


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as e:
        main(["--version"])
    assert e.value.code == 0


def test_set_override(cfg_file, tmp_path):
    out = tmp_path / "ds"
    rc = main(["generate", "--config", cfg_file, "--out", str(out),
               "--set", "scene.n_frames=4"])
    assert rc == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["num_frames"] == 4
