import numpy as np
import pytest
import torch
import yaml

from evsim.cli import main
from evsim.datasets import read_events, save_grayscale, write_events
from evsim.networks import Generator, GeneratorConfig
from evsim.training import ScalarLog, save_checkpoint
from evsim.volumes import EventStream, read_volume


@pytest.fixture
def three_event_file(tmp_path):
    stream = EventStream([1, 5, 9], [2, 0, 11], [0.0, 0.25, 0.5], [1, -1, 1], 16, 16)
    path = tmp_path / "events.evs"
    write_events(stream, path)
    return path, stream


@pytest.fixture
def image_pair(tmp_path):
    rng = np.random.default_rng(0)
    import scipy.ndimage as ndi

    img = ndi.gaussian_filter(rng.uniform(0, 1, (32, 32)), 2.0)
    img = (img - img.min()) / (img.max() - img.min())
    a, b = tmp_path / "a.png", tmp_path / "b.png"
    save_grayscale(img, a)
    save_grayscale(np.roll(img, 3, axis=1), b)
    return a, b


class TestVoxelize:
    def test_three_event_fixture(self, three_event_file, tmp_path, capsys):
        events, stream = three_event_file
        out = tmp_path / "vol.evol"
        assert main(["voxelize", str(events), str(out)]) == 0
        volume = read_volume(out)
        assert volume.num_bins == 9  # default honored
        assert volume.data.sum() == pytest.approx(3.0, abs=1e-5)
        assert (tmp_path / "vol.evol.run.yaml").exists()

    def test_normalize_and_bins_flags(self, three_event_file, tmp_path):
        events, _ = three_event_file
        out = tmp_path / "vol.evol"
        assert main(["voxelize", str(events), str(out), "--bins", "3", "--normalize"]) == 0
        volume = read_volume(out)
        assert volume.num_bins == 3 and volume.normalized
        assert volume.data.max() == 1.0

    def test_invalid_file_nonzero_exit(self, tmp_path, capsys):
        bad = tmp_path / "bad.evs"
        bad.write_bytes(b"not an event file")
        code = main(["voxelize", str(bad), str(tmp_path / "out.evol")])
        assert code != 0
        err = capsys.readouterr().err
        assert err.startswith("error: ") and len(err.strip().splitlines()) == 1


class TestSimClassical:
    def test_identical_frames_empty_output(self, tmp_path, image_pair):
        a, _ = image_pair
        out = tmp_path / "out.evs"
        assert main(["sim-classical", str(a), str(a), str(out), "--mode", "pair"]) == 0
        assert len(read_events(out)) == 0

    def test_affine_seed_reproducibility(self, tmp_path, image_pair):
        a, _ = image_pair
        outs = []
        for name in ("one.evs", "two.evs"):
            out = tmp_path / name
            assert main(["sim-classical", str(a), str(out), "--mode", "affine",
                         "--translation", "3", "0", "--sigma", "0.02",
                         "--seed", "7", "--substeps", "10"]) == 0
            outs.append(read_events(out))
        assert outs[0] == outs[1]

    def test_theta_rejected(self, tmp_path, image_pair, capsys):
        a, b = image_pair
        code = main(["sim-classical", str(a), str(b), str(tmp_path / "o.evs"),
                     "--theta", "-0.5"])
        assert code != 0
        assert "theta" in capsys.readouterr().err


def write_run_config(path, out_dir, extra_train=None, **top):
    train = dict(epochs=1, steps_per_epoch=2, batch_size=2, crop_size=32,
                 num_bins=9, base_channels=8, num_encoder_levels=2,
                 num_residual_blocks=1, pretrain_steps=2, seed=0)
    train.update(extra_train or {})
    config = {
        "out_dir": str(out_dir),
        "dataset": {"kind": "toy", "size": 32, "num_substeps": 8},
        "train": train,
    }
    config.update(top)
    path.write_text(yaml.safe_dump(config))
    return path


class TestPretrainAndTrain:
    def test_pretrain_then_train(self, tmp_path, capsys):
        cfg = write_run_config(tmp_path / "run.yaml", tmp_path / "run")
        assert main(["pretrain", "--config", str(cfg)]) == 0
        out_dir = tmp_path / "run"
        assert (out_dir / "flow.ckpt").exists() and (out_dir / "recon.ckpt").exists()
        assert (out_dir / "run_config.yaml").exists()
        rows = ScalarLog.parse(out_dir / "pretrain_log.tsv")
        assert len(rows) == 2 and all(r["kind"] == "pretrain" for r in rows)

        train_dir = tmp_path / "gan"
        cfg2 = write_run_config(tmp_path / "train.yaml", train_dir,
                                cycle_checkpoints=str(out_dir))
        assert main(["train", "--config", str(cfg2)]) == 0
        assert (train_dir / "generator.ckpt").exists()
        rows = ScalarLog.parse(train_dir / "train_log.tsv")
        kinds = [r["kind"] for r in rows]
        assert kinds.count("d") == 2 * kinds.count("g")
        assert (train_dir / "training_curves.png").exists()

    def test_train_missing_checkpoints_names_path(self, tmp_path, capsys):
        cfg = write_run_config(tmp_path / "run.yaml", tmp_path / "gan",
                               cycle_checkpoints=str(tmp_path / "nowhere"))
        code = main(["train", "--config", str(cfg)])
        assert code != 0
        assert "nowhere" in capsys.readouterr().err

    def test_unknown_config_key_rejected(self, tmp_path, capsys):
        cfg = write_run_config(tmp_path / "run.yaml", tmp_path / "run")
        data = yaml.safe_load(cfg.read_text())
        data["bogus_key"] = 1
        cfg.write_text(yaml.safe_dump(data))
        assert main(["pretrain", "--config", str(cfg)]) != 0
        assert "bogus_key" in capsys.readouterr().err

    def test_unknown_train_key_rejected(self, tmp_path, capsys):
        cfg = write_run_config(tmp_path / "run.yaml", tmp_path / "run",
                               extra_train={"learning_rate": 1.0})
        assert main(["pretrain", "--config", str(cfg)]) != 0
        assert "learning_rate" in capsys.readouterr().err


class TestGenerate:
    @pytest.fixture
    def checkpoint(self, tmp_path):
        torch.manual_seed(0)
        g = Generator(GeneratorConfig(base_channels=8, num_encoder_levels=2,
                                      num_residual_blocks=1))
        path = tmp_path / "generator.ckpt"
        save_checkpoint(g, path, "generator")
        return path

    def test_shape_and_determinism(self, checkpoint, image_pair, tmp_path):
        a, b = image_pair
        out1, out2 = tmp_path / "v1.evol", tmp_path / "v2.evol"
        assert main(["generate", str(checkpoint), str(a), str(b), str(out1)]) == 0
        assert main(["generate", str(checkpoint), str(a), str(b), str(out2)]) == 0
        v1, v2 = read_volume(out1), read_volume(out2)
        assert v1.data.shape == (18, 32, 32)
        assert v1.data.min() >= 0.0
        assert np.array_equal(v1.data, v2.data)

    def test_viz_emits_two_images(self, checkpoint, image_pair, tmp_path):
        a, b = image_pair
        out = tmp_path / "v.evol"
        assert main(["generate", str(checkpoint), str(a), str(b), str(out), "--viz"]) == 0
        assert (tmp_path / "v_timestamps.png").exists()
        assert (tmp_path / "v_counts.png").exists()


class TestEval:
    def test_detection(self, tmp_path, capsys):
        (tmp_path / "det.txt").write_text("0 0 10 10 0.9\n")
        (tmp_path / "gt.txt").write_text("0 0 10 16 easy\n")
        out_dir = tmp_path / "eval"
        assert main(["eval", "detection", str(tmp_path / "det.txt"),
                     str(tmp_path / "gt.txt"), "--out-dir", str(out_dir)]) == 0
        report = (out_dir / "report.tsv").read_text()
        assert "precision\t1" in report and "ap\t1" in report
        assert (out_dir / "pr_curve.png").exists()

    def test_pose(self, tmp_path):
        (tmp_path / "pred.txt").write_text("0 0\n-5 10\n5 10\n11 12\n")
        (tmp_path / "gt.txt").write_text("0 0\n-5 10\n5 10\n8 8\n")
        out_dir = tmp_path / "eval"
        assert main(["eval", "pose", str(tmp_path / "pred.txt"),
                     str(tmp_path / "gt.txt"), "--out-dir", str(out_dir)]) == 0
        report = (out_dir / "report.tsv").read_text()
        assert "mpjpe\t1.25" in report  # single 3-4-5 joint offset / 4 joints
        assert (out_dir / "joint_errors.png").exists()

    def test_mirror_metric_fixtures(self, tmp_path):
        # exact pose -> mpjpe 0, pckh 100
        (tmp_path / "p.txt").write_text("0 0\n-5 10\n5 10\n")
        out_dir = tmp_path / "eval"
        assert main(["eval", "pose", str(tmp_path / "p.txt"), str(tmp_path / "p.txt"),
                     "--out-dir", str(out_dir)]) == 0
        report = (out_dir / "report.tsv").read_text()
        assert "mpjpe\t0" in report and "pckh50\t100" in report


def test_console_entry_point(three_event_file, tmp_path):
    import subprocess
    import sys

    events, _ = three_event_file
    out = tmp_path / "v.evol"
    proc = subprocess.run([sys.executable, "-m", "evsim.cli", "voxelize",
                           str(events), str(out)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert out.exists()
