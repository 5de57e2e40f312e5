import json

import pytest
from PIL import Image

from lenspatch import cli, pipeline
from lenspatch.data import load_manifest
from lenspatch.patch_model import ManualParams, init_free_params, load_patch, save_patch


@pytest.fixture
def patch_file(tmp_path):
    return save_patch(init_free_params(ManualParams(), 0), tmp_path / "p.json")


def test_missing_config_is_a_user_error(tmp_path, capsys):
    assert cli.main(["train", "--config", str(tmp_path / "none.cfg")]) == 1
    assert "config file not found" in capsys.readouterr().err


def test_unknown_key_reports_line(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("run.seed = 1\noptimizer.momentum = 0.9\n")
    assert cli.main(["eval", "--config", str(path)]) == 1
    err = capsys.readouterr().err
    assert "bad.cfg:2" in err and "optimizer.momentum" in err


def test_unknown_condition(config_file, capsys):
    assert cli.main(["eval", "--config", str(config_file()), "--conditions", "CLEAN,BLUE"]) == 1
    assert "BLUE" in capsys.readouterr().err


def test_missing_checkpoint_names_the_path(config_file, tmp_path, capsys):
    path = config_file(detector__checkpoint=str(tmp_path / "gone.pt"), data__synthetic_scenes=20,
                       data__synthetic_test_scenes=5)
    assert cli.main(["train", "--config", str(path)]) == 1
    assert "gone.pt" in capsys.readouterr().err


def test_missing_patch_file(config_file, tmp_path, capsys):
    assert cli.main(["render", "--config", str(config_file()), "--patch", str(tmp_path / "x.json")]) == 1


def test_internal_failure_exits_two(config_file, monkeypatch, capsys):
    def boom(cfg):
        raise RuntimeError("kaput")

    monkeypatch.setattr(pipeline, "attack_scenes", boom)
    assert cli.main(["generate", "--config", str(config_file())]) == 2
    assert "RuntimeError: kaput" in capsys.readouterr().err


def test_generate_writes_a_loadable_manifest(config_file, tmp_path):
    path = config_file(data__synthetic_scenes=8, data__synthetic_test_scenes=4)
    assert cli.main(["generate", "--config", str(path), "--out", str(tmp_path / "o")]) == 0
    manifest = load_manifest(tmp_path / "o" / "data" / "manifest.txt")
    assert len(manifest) == 12
    assert {r.source for r in manifest.records} == {"synthetic", "synthetic-test"}


def test_export_print_raster(config_file, patch_file, tmp_path, capsys):
    out = tmp_path / "o"
    assert cli.main(["export", "--config", str(config_file()), "--patch", str(patch_file), "--out", str(out)]) == 0
    png = Image.open(out / "export" / "patch_print.png")
    assert png.size == (180, 99) and png.mode == "RGBA"
    assert round(png.info["dpi"][0]) == 300
    assert png.getchannel("A").getextrema()[1] <= round(0.4 * 255)
    assert load_patch(out / "export" / "patch_print.json") == load_patch(patch_file)
    assert "180x99 px at 300 dpi" in capsys.readouterr().out


def test_export_dims():
    assert cli.export_dims(300, 0.6, 0.33) == (180, 99)
    assert cli.export_dims(150, 1.0, 0.5) == (150, 75)
    with pytest.raises(cli.UsageError):
        cli.export_dims(0, 1, 1)


def test_render_at_detector_resolution(config_file, patch_file, tmp_path):
    png = tmp_path / "r.png"
    assert cli.main(["render", "--config", str(config_file()), "--patch", str(patch_file), "--png", str(png)]) == 0
    assert Image.open(png).size == (64, 64)


def test_eval_clean_only(config_file, toy_detector, tmp_path, capsys):
    out = tmp_path / "o"
    assert cli.main(["eval", "--config", str(config_file()), "--conditions", "clean", "--out", str(out)]) == 0
    doc = json.loads((out / "eval" / "CLEAN.json").read_text())
    assert doc["condition"] == "CLEAN"
    assert min(doc["per_class_ap"].values()) >= 0.9
    assert (out / "eval" / "pr_target.png").stat().st_size > 0
    assert not (out / "eval" / "PATCH.json").exists()
