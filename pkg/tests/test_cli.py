import hashlib
import json
from pathlib import Path

import numpy as np
import pytest
import torch
from click.testing import CliRunner

from hiervad.checkpoint import load_checkpoint, save_checkpoint
from hiervad.cli import main
from hiervad.config import ArchitectureSpec, BlockSpec, StackSpec, StreamSpec
from hiervad.data import Dataset, Video, save_dataset
from hiervad.hierarchy import VideoAnomalyModel
from hiervad.training import LossConfig, build_training_samples, train


def run_cli(*args):
    return CliRunner().invoke(main, list(args))


def tree_digest(root: Path) -> str:
    h = hashlib.md5()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def write_gen_config(path: Path, **overrides) -> Path:
    cfg = {
        "canvas": [32, 32],
        "frames_per_video": 14,
        "train_videos": {"1": 1, "2": 1},
        "test_videos": 1,
        "degrees": 3,
        "event_classes": [2],
        "event_frames": 4,
        "seed": 11,
    }
    cfg.update(overrides)
    path.write_text(json.dumps(cfg))
    return path


def micro_arch(stacks=1):
    stack_specs = tuple(
        StackSpec(
            blocks=(BlockSpec(size_class=None, hidden_layers=4, pattern_count=4),),
            degree=i + 1,
        )
        for i in range(stacks)
    )
    tolerance = {d: tuple(range(d)) for d in range(1, stacks + 1)}
    return ArchitectureSpec(
        streams={"appearance": StreamSpec(stacks=stack_specs)},
        frame_size=(32, 32), window=2, base_channels=4, n_scales=2,
        siamese_hidden=16, siamese_dim=8, fusion_weights={"appearance": 1.0},
        tolerance_map=tolerance,
    )


def write_arch(path: Path, stacks=1) -> Path:
    path.write_text(json.dumps(micro_arch(stacks).to_dict()))
    return path


class TestGenData:
    def test_same_seed_byte_identical_trees(self, tmp_path):
        cfg = write_gen_config(tmp_path / "gen.json")
        a, b = tmp_path / "a", tmp_path / "b"
        assert run_cli("gen-data", "--config", str(cfg), "--out", str(a)).exit_code == 0
        assert run_cli("gen-data", "--config", str(cfg), "--out", str(b)).exit_code == 0
        assert tree_digest(a) == tree_digest(b)

    def test_missing_config_exits_two_naming_path(self, tmp_path):
        result = run_cli("gen-data", "--config", str(tmp_path / "nope.json"),
                         "--out", str(tmp_path / "o"))
        assert result.exit_code == 2
        err = json.loads(result.stderr.strip().splitlines()[-1])
        assert "nope.json" in err["error"]

    def test_metadata_lists_three_degree_tags(self, tmp_path):
        cfg = write_gen_config(tmp_path / "gen.json")
        out = tmp_path / "data"
        result = run_cli("gen-data", "--config", str(cfg), "--out", str(out))
        assert result.exit_code == 0
        meta = json.loads((out / "dataset.json").read_text())
        assert meta["degrees"] == [1, 2, 3]

    def test_seed_override_changes_output(self, tmp_path):
        cfg = write_gen_config(tmp_path / "gen.json")
        a, b = tmp_path / "a", tmp_path / "b"
        run_cli("gen-data", "--config", str(cfg), "--out", str(a))
        run_cli("gen-data", "--config", str(cfg), "--out", str(b), "--seed", "99")
        assert tree_digest(a) != tree_digest(b)


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    cfg = write_gen_config(root / "gen.json")
    out = root / "data"
    result = run_cli("gen-data", "--config", str(cfg), "--out", str(out))
    assert result.exit_code == 0, result.output
    return out


class TestTrain:
    def test_plain_training_writes_outputs(self, tmp_path, tiny_dataset):
        arch = write_arch(tmp_path / "arch.json")
        out = tmp_path / "run"
        result = run_cli(
            "train", "--config", str(arch), "--data", str(tiny_dataset),
            "--out", str(out), "--epochs", "1", "--seed", "0",
        )
        assert result.exit_code == 0, result.output
        assert (out / "checkpoint.pt").exists()
        assert (out / "last.pt").exists()  # periodic checkpoint, loadable mid-run
        assert (out / "metrics.csv").read_text().startswith("epoch,total")
        model, _ = load_checkpoint(out / "last.pt")
        assert model is not None

    def test_progressive_dispatch_records_phases(self, tmp_path, tiny_dataset):
        arch = write_arch(tmp_path / "arch2.json", stacks=2)
        out = tmp_path / "prog"
        result = run_cli(
            "train", "--config", str(arch), "--data", str(tiny_dataset),
            "--out", str(out), "--epochs", "1", "--degrees", "1,2",
        )
        assert result.exit_code == 0, result.output
        _, payload = load_checkpoint(out / "checkpoint.pt")
        assert [p["degree"] for p in payload["phase_history"]] == [1, 2]
        assert (out / "metrics_phase1_degree1.csv").exists()
        assert (out / "metrics_phase2_degree2.csv").exists()

    def test_preset_and_config_mutually_exclusive(self, tmp_path, tiny_dataset):
        result = run_cli("train", "--data", str(tiny_dataset), "--out", str(tmp_path / "x"))
        assert result.exit_code == 2
        assert "exactly one" in result.stderr

    def test_unknown_progressive_degree_fails(self, tmp_path, tiny_dataset):
        arch = write_arch(tmp_path / "arch.json")
        result = run_cli(
            "train", "--config", str(arch), "--data", str(tiny_dataset),
            "--out", str(tmp_path / "x"), "--degrees", "1,7",
        )
        assert result.exit_code == 2
        assert "7" in result.stderr


@pytest.fixture(scope="module")
def flash_checkpoint(tmp_path_factory):
    """Trivially separable setup: constant videos, white flash at the end."""
    root = tmp_path_factory.mktemp("flash")
    h = w = 16
    frames = np.full((14, h, w), 0.2, dtype=np.float32)
    train_videos = [
        Video(f"train_{i}", frames.copy(), [[1]] * 14, split="train") for i in range(2)
    ]
    test_frames = frames.copy()
    test_frames[-3:] = 0.9
    classes = [[1]] * 11 + [[1, 2]] * 3
    test_video = Video("test_000", test_frames, classes)
    dataset = Dataset(train={1: train_videos}, test=[test_video], degrees=[1, 2])
    data_dir = root / "data"
    save_dataset(dataset, data_dir)

    torch.manual_seed(0)
    spec = ArchitectureSpec(
        streams={
            "appearance": StreamSpec(
                stacks=(
                    StackSpec(blocks=(BlockSpec(size_class=None, hidden_layers=4,
                                                pattern_count=4),)),
                )
            )
        },
        frame_size=(16, 16), window=2, base_channels=4, n_scales=2,
        siamese_hidden=16, siamese_dim=8, fusion_weights={"appearance": 1.0},
        tolerance_map={1: (0,)},
    )
    model = VideoAnomalyModel(spec)
    samples = build_training_samples(train_videos, spec)
    train(model, samples, LossConfig(epochs=30, learning_rate=1e-3), seed=0)
    ckpt_path = root / "ckpt.pt"
    save_checkpoint(model, ckpt_path, seed=0)
    return ckpt_path, data_dir


class TestEval:
    def test_perfect_separation_reaches_auc_one(self, tmp_path, flash_checkpoint):
        ckpt_path, data_dir = flash_checkpoint
        out = tmp_path / "eval"
        result = run_cli(
            "eval", "--checkpoint", str(ckpt_path), "--data", str(data_dir),
            "--tolerance", "1", "--out", str(out),
        )
        assert result.exit_code == 0, result.output
        summary = json.loads((out / "summary.json").read_text())
        assert summary["auc"] == 1.0
        assert summary["active_stacks"]["appearance"] == [0]
        assert (out / "scores" / "test_000.csv").exists()
        assert (out / "plots" / "test_000.png").exists()

    def test_unknown_tolerance_lists_degrees(self, tmp_path, flash_checkpoint):
        ckpt_path, data_dir = flash_checkpoint
        result = run_cli(
            "eval", "--checkpoint", str(ckpt_path), "--data", str(data_dir),
            "--tolerance", "5", "--out", str(tmp_path / "x"),
        )
        assert result.exit_code == 1
        err = json.loads(result.stderr.strip().splitlines()[-1])
        assert "unknown tolerance degree" in err["error"]
        assert "1" in err["error"]

    def test_missing_checkpoint_exits_two(self, tmp_path, flash_checkpoint):
        _, data_dir = flash_checkpoint
        result = run_cli(
            "eval", "--checkpoint", str(tmp_path / "no.pt"), "--data", str(data_dir),
            "--out", str(tmp_path / "x"),
        )
        assert result.exit_code == 2


class TestScore:
    def test_single_video_csv(self, tmp_path, flash_checkpoint):
        ckpt_path, data_dir = flash_checkpoint
        out_csv = tmp_path / "one.csv"
        result = run_cli(
            "score", "--checkpoint", str(ckpt_path), "--video",
            str(data_dir / "test" / "test_000"), "--out", str(out_csv),
            "--tolerance", "1", "--plot", str(tmp_path / "one.png"),
        )
        assert result.exit_code == 0, result.output
        lines = out_csv.read_text().strip().splitlines()
        assert lines[0] == "frame_index,raw_psnr,anomaly_score,label"
        assert len(lines) == 13  # 14 frames, window 2
        assert (tmp_path / "one.png").exists()


class TestToleranceActivationEcho:
    def test_different_tolerances_record_different_stacks(self, tmp_path, tiny_dataset):
        arch = write_arch(tmp_path / "arch2.json", stacks=2)
        out = tmp_path / "prog"
        result = run_cli(
            "train", "--config", str(arch), "--data", str(tiny_dataset),
            "--out", str(out), "--epochs", "1", "--degrees", "1,2",
        )
        assert result.exit_code == 0, result.output
        summaries = []
        for degree in (1, 2):
            eval_out = tmp_path / f"eval{degree}"
            result = run_cli(
                "eval", "--checkpoint", str(out / "checkpoint.pt"), "--data",
                str(tiny_dataset), "--tolerance", str(degree), "--out", str(eval_out),
            )
            assert result.exit_code == 0, result.output
            summaries.append(json.loads((eval_out / "summary.json").read_text()))
        assert summaries[0]["active_stacks"]["appearance"] == [0]
        assert summaries[1]["active_stacks"]["appearance"] == [0, 1]
