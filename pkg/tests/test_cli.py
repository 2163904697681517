import json

import numpy as np
import pytest
import yaml
from click.testing import CliRunner
from PIL import Image

from wfmixer.cli import main
from wfmixer.data import load_mask_png


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    runner = CliRunner()
    root = tmp_path_factory.mktemp("cli_corpus")
    result = runner.invoke(
        main,
        ["toy-data", "--n", "10", "--size", "64x32", "--seed", "3",
         "--out", str(root), "--val", "2", "--test", "2"],
    )
    assert result.exit_code == 0, result.output
    return root


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory, corpus):
    runner = CliRunner()
    run_dir = tmp_path_factory.mktemp("cli_run")
    config = {
        "height": 32, "width": 64, "epochs": 1, "batch_size": 2,
        "base_channels": 8, "blocks_per_stage": [1, 1, 1, 1],
        "data_root": str(corpus), "out_dir": str(run_dir), "max_steps": 2,
        "val_scenes": 1,
    }
    cfg_path = run_dir / "config.yaml"
    cfg_path.write_text(yaml.safe_dump(config))
    result = runner.invoke(main, ["train", "--config", str(cfg_path)])
    assert result.exit_code == 0, result.output
    return run_dir / "latest.pt"


class TestMakeMasks:
    def test_writes_named_pngs(self, runner, tmp_path):
        out = tmp_path / "masks"
        result = runner.invoke(
            main,
            ["make-masks", "--kind", "rectangular", "--interval", "0.1,0.2",
             "--n", "3", "--size", "64x32", "--seed", "5", "--out", str(out)],
        )
        assert result.exit_code == 0, result.output
        files = sorted(out.glob("*.png"))
        assert [f.name for f in files] == [
            "rectangular_10-20_000005.png",
            "rectangular_10-20_000006.png",
            "rectangular_10-20_000007.png",
        ]
        raw = np.asarray(Image.open(files[0]))
        assert raw.shape == (32, 64)
        assert set(np.unique(raw)) <= {0, 255}
        ratio = (raw == 255).mean()
        assert 0.1 <= ratio < 0.2

    def test_deterministic_per_seed(self, runner, tmp_path):
        args = ["make-masks", "--kind", "quadrants", "--interval", "0.2,0.3",
                "--size", "64x32", "--seed", "9"]
        result_a = runner.invoke(main, args + ["--out", str(tmp_path / "a")])
        result_b = runner.invoke(main, args + ["--out", str(tmp_path / "b")])
        assert result_a.exit_code == result_b.exit_code == 0
        img_a = np.asarray(Image.open(next((tmp_path / "a").glob("*.png"))))
        img_b = np.asarray(Image.open(next((tmp_path / "b").glob("*.png"))))
        np.testing.assert_array_equal(img_a, img_b)

    def test_bad_interval_reported(self, runner, tmp_path):
        result = runner.invoke(
            main,
            ["make-masks", "--kind", "outpainting", "--interval", "0.6,0.7",
             "--size", "64x32", "--out", str(tmp_path / "m")],
        )
        assert result.exit_code != 0
        assert "0 < lo < hi <= 0.5" in result.output


class TestToyData:
    def test_index_written(self, corpus):
        index = json.loads((corpus / "index.json").read_text())
        assert index["height"] == 32 and index["width"] == 64
        splits = [s["split"] for s in index["scenes"]]
        assert splits.count("train") == 6
        assert splits.count("val") == 2
        assert splits.count("test") == 2

    def test_wrong_aspect_rejected(self, runner, tmp_path):
        result = runner.invoke(
            main, ["toy-data", "--n", "4", "--size", "48x32", "--out", str(tmp_path)]
        )
        assert result.exit_code != 0
        assert "W = 2H" in result.output


class TestTrain:
    def test_checkpoint_and_history_written(self, checkpoint):
        run_dir = checkpoint.parent
        assert checkpoint.exists()
        assert (run_dir / "loss_history.csv").exists()
        assert (run_dir / "loss_curves.png").exists()

    def test_unknown_config_key_rejected(self, runner, corpus, tmp_path):
        cfg = tmp_path / "bad.yaml"
        cfg.write_text(yaml.safe_dump({"data_root": str(corpus), "hieght": 32}))
        result = runner.invoke(main, ["train", "--config", str(cfg)])
        assert result.exit_code != 0
        assert "unknown config keys" in result.output

    def test_env_var_data_root(self, runner, corpus, tmp_path, monkeypatch):
        monkeypatch.setenv("WFM_DATA_ROOT", str(corpus))
        cfg = tmp_path / "c.yaml"
        cfg.write_text(yaml.safe_dump({
            "height": 32, "width": 64, "epochs": 1, "batch_size": 2,
            "base_channels": 8, "blocks_per_stage": [1, 1, 1, 1],
            "out_dir": str(tmp_path / "run"), "max_steps": 1, "val_scenes": 0,
        }))
        result = runner.invoke(main, ["train", "--config", str(cfg)])
        assert result.exit_code == 0, result.output

    def test_resume_from_checkpoint(self, runner, checkpoint):
        result = runner.invoke(main, ["train", "--resume", str(checkpoint)])
        assert result.exit_code == 0, result.output

    def test_preset_flag(self, runner, corpus, tmp_path):
        cfg = tmp_path / "c.yaml"
        cfg.write_text(yaml.safe_dump({
            "height": 32, "width": 64, "epochs": 1, "batch_size": 2,
            "base_channels": 8, "blocks_per_stage": [1, 1, 1, 1],
            "data_root": str(corpus), "out_dir": str(tmp_path / "run"),
            "max_steps": 1, "val_scenes": 0,
        }))
        result = runner.invoke(
            main, ["train", "--config", str(cfg), "--preset", "gated_only"]
        )
        assert result.exit_code == 0, result.output


class TestEvalAndReport:
    def test_eval_writes_metrics_json(self, runner, corpus, checkpoint, tmp_path):
        out = tmp_path / "metrics.json"
        result = runner.invoke(
            main,
            ["eval", "--ckpt", str(checkpoint), "--data", str(corpus),
             "--split", "test", "--limit", "1", "--out", str(out)],
        )
        assert result.exit_code == 0, result.output
        payload = json.loads(out.read_text())
        assert len(payload["cells"]) == 25
        assert {c["kind"] for c in payload["cells"]} == {
            "irregular", "rectangular", "segmentation", "outpainting", "quadrants"
        }

    def test_report_renders_csv_and_figures(self, runner, corpus, checkpoint, tmp_path):
        metrics = tmp_path / "metrics.json"
        runner.invoke(
            main,
            ["eval", "--ckpt", str(checkpoint), "--data", str(corpus),
             "--split", "test", "--limit", "1", "--out", str(metrics)],
        )
        result = runner.invoke(
            main, ["report", "--in", str(metrics), "--format", "csv",
                   "--out", str(tmp_path / "rep")],
        )
        assert result.exit_code == 0, result.output
        rep = tmp_path / "rep"
        assert (rep / "report.csv").exists()
        for metric in ("mae", "psnr", "ssim"):
            assert (rep / f"report_{metric}.png").exists()
        header = (rep / "report.csv").read_text().splitlines()[0]
        assert header == "kind,interval,mae,psnr,ssim,n"

    def test_report_markdown(self, runner, corpus, checkpoint, tmp_path):
        metrics = tmp_path / "metrics.json"
        runner.invoke(
            main,
            ["eval", "--ckpt", str(checkpoint), "--data", str(corpus),
             "--split", "test", "--limit", "1", "--out", str(metrics)],
        )
        result = runner.invoke(
            main, ["report", "--in", str(metrics), "--format", "md",
                   "--out", str(tmp_path / "rep_md")],
        )
        assert result.exit_code == 0, result.output
        md = (tmp_path / "rep_md" / "report.md").read_text()
        assert md.startswith("| Mask | Interval |")


class TestInpaint:
    def test_roundtrip(self, runner, corpus, checkpoint, tmp_path):
        scene = json.loads((corpus / "index.json").read_text())["scenes"][0]
        image_path = corpus / scene["empty"]
        mask_dir = tmp_path / "mask"
        runner.invoke(
            main,
            ["make-masks", "--kind", "rectangular", "--interval", "0.1,0.2",
             "--size", "64x32", "--seed", "1", "--out", str(mask_dir)],
        )
        mask_path = next(mask_dir.glob("*.png"))
        out_path = tmp_path / "out.png"
        result = runner.invoke(
            main,
            ["inpaint", "--ckpt", str(checkpoint), "--image", str(image_path),
             "--mask", str(mask_path), "--out", str(out_path), "--composite"],
        )
        assert result.exit_code == 0, result.output
        out = np.asarray(Image.open(out_path))
        assert out.shape == (32, 64, 3)
        # composite keeps original pixels outside the hole
        original = np.asarray(Image.open(image_path))
        mask = load_mask_png(mask_path)[0] == 1
        np.testing.assert_array_equal(out[~mask], original[~mask])

    def test_dim_mismatch_reported(self, runner, checkpoint, corpus, tmp_path):
        scene = json.loads((corpus / "index.json").read_text())["scenes"][0]
        image_path = corpus / scene["empty"]
        mask_dir = tmp_path / "mask"
        runner.invoke(
            main,
            ["make-masks", "--kind", "rectangular", "--interval", "0.1,0.2",
             "--size", "32x16", "--seed", "1", "--out", str(mask_dir)],
        )
        result = runner.invoke(
            main,
            ["inpaint", "--ckpt", str(checkpoint), "--image", str(image_path),
             "--mask", str(next(mask_dir.glob("*.png"))), "--out", str(tmp_path / "o.png")],
        )
        assert result.exit_code != 0
        assert "dims differ" in result.output
