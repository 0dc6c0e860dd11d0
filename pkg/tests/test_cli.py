import csv
import io
import os

import numpy as np
import pytest

from scet import imaging
from scet.checkpoint import save_checkpoint
from scet.cli import EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_OK, main
from scet.model import SCETConfig, SCETModel
from scet.training import corpus_dir


def read_csv(text):
    return list(csv.DictReader(io.StringIO(text)))


@pytest.fixture(scope="module")
def ckpt_x2(tmp_path_factory):
    path = tmp_path_factory.mktemp("ck") / "x2.scet"
    save_checkpoint(SCETModel(SCETConfig(num_blocks=1, channels=8, scale=2), seed=4), path)
    return str(path)


@pytest.fixture
def hr_dir(tmp_path, test_images):
    d = tmp_path / "hr"
    d.mkdir()
    for name, img in zip(("b.png", "a.png", "c.png"), test_images):
        imaging.save_png(img, d / name)
    return d


class TestAudit:
    def _totals(self, capsys, *flags):
        assert main(["audit", "--format", "csv", *flags]) == EXIT_OK
        rows = read_csv(capsys.readouterr().out)
        return int(rows[-1]["params"]), int(rows[-1]["multiadds"])

    def test_default(self, capsys):
        params, madds = self._totals(capsys)
        assert abs(params - 683_000) <= 0.05 * 683_000
        assert abs(madds - 78.72e9) <= 0.05 * 78.72e9

    def test_small(self, capsys):
        params, madds = self._totals(capsys, "--d", "8", "--w", "32")
        assert abs(params - 98_000) <= 0.05 * 98_000
        assert abs(madds - 11.46e9) <= 0.05 * 11.46e9

    def test_no_transformer(self, capsys):
        params, madds = self._totals(capsys, "--no-transformer")
        assert abs(params - 629_000) <= 0.05 * 629_000
        assert abs(madds - 72.59e9) <= 0.05 * 72.59e9

    def test_text_format_and_echo(self, capsys):
        assert main(["audit", "--d", "2", "--w", "16"]) == EXIT_OK
        out, err = capsys.readouterr()
        assert out.startswith("complexity at 1280x720 HR")
        assert "effective config" in err and "num_blocks = 2" in err

    def test_from_checkpoint_and_config(self, capsys, ckpt_x2, tmp_path):
        assert main(["audit", "--checkpoint", ckpt_x2, "--format", "csv"]) == EXIT_OK
        a = capsys.readouterr().out
        cfg = tmp_path / "m.cfg"
        cfg.write_text("d = 1\nw = 8\nscale = 2\n")
        assert main(["audit", "--config", str(cfg), "--format", "csv"]) == EXIT_OK
        assert capsys.readouterr().out == a

    def test_out_file(self, tmp_path, capsys):
        out = tmp_path / "t" / "audit.csv"
        assert main(["audit", "--format", "csv", "--out", str(out), "-q"]) == EXIT_OK
        assert out.read_text().startswith("name,params,multiadds\n")

    def test_indivisible_hr_size(self):
        assert main(["audit", "--hr-size", "1281x720"]) == EXIT_CONFIG

    def test_bad_hr_size(self):
        assert main(["audit", "--hr-size", "big"]) == EXIT_CONFIG


class TestDegrade:
    def test_crops_and_reports(self, tmp_path, rng, caplog):
        src = tmp_path / "hr"
        src.mkdir()
        imaging.save_png(rng.integers(0, 256, (100, 100, 3), dtype=np.uint8), src / "x.png")
        with caplog.at_level("INFO"):
            assert main(["degrade", "--data", str(src), "--scale", "3", "--out", str(tmp_path / "lr")]) == EXIT_OK
        assert imaging.load_png(tmp_path / "lr" / "x.png").shape == (33, 33, 3)
        assert "100x100 -> 99x99" in caplog.text

    def test_constant_and_idempotent(self, tmp_path):
        src = tmp_path / "hr"
        src.mkdir()
        imaging.save_png(np.full((12, 12, 3), 77, dtype=np.uint8), src / "k.png")
        for run in ("o1", "o2"):
            assert main(["degrade", "--data", str(src), "--scale", "2", "--out", str(tmp_path / run), "-q"]) == 0
        lr = imaging.load_png(tmp_path / "o1" / "k.png")
        assert (lr == 77).all()
        assert (tmp_path / "o1" / "k.png").read_bytes() == (tmp_path / "o2" / "k.png").read_bytes()

    def test_unreadable_input(self, tmp_path):
        src = tmp_path / "hr"
        src.mkdir()
        (src / "bad.png").write_bytes(b"nope")
        assert main(["degrade", "--data", str(src), "--scale", "2", "--out", str(tmp_path / "lr")]) == EXIT_DATA

    def test_missing_required_flag(self):
        assert main(["degrade", "--scale", "2"]) == EXIT_CONFIG


class TestInfer:
    def test_shape_range_and_determinism(self, tmp_path, rng):
        m = SCETModel(SCETConfig(num_blocks=1, channels=8, scale=4), seed=1)
        ck = tmp_path / "x4.scet"
        save_checkpoint(m, ck)
        imaging.save_png(rng.integers(0, 256, (48, 48, 3), dtype=np.uint8), tmp_path / "lr.png")
        for out in ("a.png", "b.png"):
            assert main(["infer", "--checkpoint", str(ck), "--input", str(tmp_path / "lr.png"),
                         "--out", str(tmp_path / out), "-q"]) == EXIT_OK
        sr = imaging.load_png(tmp_path / "a.png")
        assert sr.shape == (192, 192, 3) and sr.dtype == np.uint8
        assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()

    def test_scale_mismatch(self, tmp_path, ckpt_x2, rng):
        imaging.save_png(rng.integers(0, 256, (8, 8, 3), dtype=np.uint8), tmp_path / "lr.png")
        assert main(["infer", "--checkpoint", ckpt_x2, "--input", str(tmp_path / "lr.png"),
                     "--out", str(tmp_path / "o.png"), "--scale", "4"]) == EXIT_CONFIG

    def test_too_small_input(self, tmp_path, ckpt_x2, rng):
        imaging.save_png(rng.integers(0, 256, (7, 9, 3), dtype=np.uint8), tmp_path / "lr.png")
        assert main(["infer", "--checkpoint", ckpt_x2, "--input", str(tmp_path / "lr.png"),
                     "--out", str(tmp_path / "o.png")]) == EXIT_DATA

    def test_missing_checkpoint(self, tmp_path):
        assert main(["infer", "--checkpoint", str(tmp_path / "no.scet"), "--input", "x.png",
                     "--out", "y.png"]) == EXIT_DATA

    def test_corrupt_checkpoint(self, tmp_path):
        (tmp_path / "c.scet").write_bytes(b"SCETCKPT\x01")
        assert main(["infer", "--checkpoint", str(tmp_path / "c.scet"), "--input", "x.png",
                     "--out", "y.png"]) == EXIT_CONFIG


class TestEval:
    def test_bypass_hits_cap(self, hr_dir, capsys):
        assert main(["eval", "--bypass", "--scale", "2", "--data", str(hr_dir)]) == EXIT_OK
        rows = read_csv(capsys.readouterr().out)
        assert [r["image"] for r in rows] == ["a.png", "b.png", "c.png", "mean"]
        assert float(rows[-1]["psnr_db"]) == 100.0 and float(rows[-1]["ssim"]) == 1.0

    def test_rows_and_ordering_with_threads(self, hr_dir, ckpt_x2, tmp_path, monkeypatch):
        monkeypatch.setenv("SCET_THREADS", "3")
        out = tmp_path / "m.csv"
        assert main(["eval", "--checkpoint", ckpt_x2, "--data", str(hr_dir), "--out", str(out), "-q"]) == 0
        rows = read_csv(out.read_text())
        assert len(rows) == 3 + 1
        assert [r["image"] for r in rows[:-1]] == sorted(os.listdir(hr_dir))
        monkeypatch.setenv("SCET_THREADS", "1")
        out1 = tmp_path / "m1.csv"
        assert main(["eval", "--checkpoint", ckpt_x2, "--data", str(hr_dir), "--out", str(out1), "-q"]) == 0
        assert out1.read_text() == out.read_text()

    def test_bad_thread_count(self, hr_dir, monkeypatch):
        monkeypatch.setenv("SCET_THREADS", "zero")
        assert main(["eval", "--bypass", "--scale", "2", "--data", str(hr_dir)]) == EXIT_CONFIG

    def test_equals_manual_degrade_infer_metric(self, hr_dir, ckpt_x2, tmp_path, capsys):
        assert main(["eval", "--checkpoint", ckpt_x2, "--data", str(hr_dir)]) == EXIT_OK
        rows = {r["image"]: r for r in read_csv(capsys.readouterr().out)}
        lr_dir, sr_dir = tmp_path / "lr", tmp_path / "sr"
        assert main(["degrade", "--data", str(hr_dir), "--scale", "2", "--out", str(lr_dir), "-q"]) == 0
        for name in sorted(os.listdir(hr_dir)):
            assert main(["infer", "--checkpoint", ckpt_x2, "--input", str(lr_dir / name),
                         "--out", str(sr_dir / name), "-q"]) == 0
            hr, sr = imaging.load_png(hr_dir / name), imaging.load_png(sr_dir / name)
            assert rows[name]["psnr_db"] == f"{imaging.psnr_y(hr, sr, 2):.6f}"
            assert rows[name]["ssim"] == f"{imaging.ssim_y(hr, sr, 2):.6f}"

    def test_unreadable_image_fails_whole_run(self, hr_dir, ckpt_x2):
        (hr_dir / "z.png").write_bytes(b"junk")
        assert main(["eval", "--checkpoint", ckpt_x2, "--data", str(hr_dir)]) == EXIT_DATA

    def test_needs_checkpoint_or_mode(self, hr_dir):
        assert main(["eval", "--data", str(hr_dir)]) == EXIT_CONFIG
        assert main(["eval", "--bicubic", "--data", str(hr_dir)]) == EXIT_CONFIG
        assert main(["eval", "--bicubic", "--bypass", "--scale", "2", "--data", str(hr_dir)]) == EXIT_CONFIG

    def test_missing_dir(self, tmp_path):
        assert main(["eval", "--bypass", "--scale", "2", "--data", str(tmp_path / "none")]) == EXIT_DATA


class TestTrain:
    def test_desk_tiny_on_bundled_corpus(self, tmp_path, caplog):
        with caplog.at_level("INFO"):
            code = main(["train", "--preset", "desk-tiny", "--iters", "3", "--out", str(tmp_path / "run")])
        assert code == EXIT_OK
        assert (tmp_path / "run" / "final.scet").exists()
        assert len((tmp_path / "run" / "loss.csv").read_text().splitlines()) == 4
        assert "effective config" in caplog.text and corpus_dir("mini") in caplog.text

    def test_missing_dataset(self, tmp_path, caplog):
        missing = str(tmp_path / "nowhere")
        assert main(["train", "--data", missing, "--iters", "1"]) == EXIT_DATA
        assert missing in caplog.text

    def test_malformed_config_line(self, tmp_path, caplog):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("seed = 1\nlr==x\n")
        assert main(["train", "--config", str(cfg)]) == EXIT_CONFIG
        assert "bad.cfg:2" in caplog.text and "lr==x" in caplog.text

    def test_flags_override_file(self, tmp_path, caplog):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("iters = 50\nseed = 7\nd = 1\nw = 8\n")
        with caplog.at_level("INFO"):
            assert main(["train", "--config", str(cfg), "--iters", "1", "--out", str(tmp_path / "o")]) == 0
        assert "total_iters = 1" in caplog.text and "seed = 7" in caplog.text
        assert len((tmp_path / "o" / "loss.csv").read_text().splitlines()) == 2

    def test_unknown_preset(self):
        assert main(["train", "--preset", "giant"]) == EXIT_CONFIG

    def test_invalid_model_setting(self, tmp_path):
        assert main(["train", "--w", "7", "--iters", "1", "--out", str(tmp_path)]) == EXIT_CONFIG

    @pytest.mark.filterwarnings("ignore:overflow encountered:RuntimeWarning")
    def test_nan_exit_code(self, tmp_path):
        cfg = tmp_path / "nan.cfg"
        cfg.write_text("lr = 1e30\nlr_min = 0\nd = 1\nw = 8\niters = 30\nbatch = 1\n")
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o"), "-q"]) == EXIT_NUMERIC

    def test_seeded_runs_identical(self, tmp_path):
        for run in ("a", "b"):
            assert main(["train", "--iters", "2", "--d", "1", "--w", "8", "--seed", "5",
                         "--out", str(tmp_path / run), "-q"]) == 0
        assert (tmp_path / "a" / "final.scet").read_bytes() == (tmp_path / "b" / "final.scet").read_bytes()

    def test_checkpoint_beats_bicubic_on_its_training_image(self, tmp_path, capsys):
        data = tmp_path / "one"
        data.mkdir()
        hr = imaging.load_png(os.path.join(corpus_dir("train"), "astronaut_0.png"))[:64, :64]
        imaging.save_png(hr, data / "astronaut.png")
        cfg = tmp_path / "fit.cfg"
        cfg.write_text("d = 1\nw = 16\nscale = 2\niters = 600\nbatch = 2\npatch = 32\nlr = 5e-3\n"
                       "lr_min = 1e-6\nwd = 0\nseed = 0\n")
        assert main(["train", "--config", str(cfg), "--data", str(data), "--out", str(tmp_path / "o"), "-q"]) == 0
        capsys.readouterr()
        assert main(["eval", "--checkpoint", str(tmp_path / "o" / "final.scet"), "--data", str(data)]) == 0
        model = float(read_csv(capsys.readouterr().out)[-1]["psnr_db"])
        assert main(["eval", "--bicubic", "--scale", "2", "--data", str(data)]) == 0
        bicubic = float(read_csv(capsys.readouterr().out)[-1]["psnr_db"])
        assert model > bicubic


def test_no_subcommand():
    assert main([]) == EXIT_CONFIG


def test_module_entry_point():
    import subprocess
    import sys
    res = subprocess.run([sys.executable, "-m", "scet", "audit", "--d", "1", "--w", "8", "--format", "csv", "-q"],
                         capture_output=True, text=True, check=False)
    assert res.returncode == 0
    assert res.stdout.startswith("name,params,multiadds")
