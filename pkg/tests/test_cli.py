"""End-to-end command-line workflow on a miniature dataset."""

import hashlib
from pathlib import Path

import numpy as np
import pytest

from fgseg.cli import main

SMALL = [
    "--set", "phantom.image_size=32",
    "--set", "phantom.frames_per_sequence=6",
    "--set", "phantom.artery_center=10,16",
    "--set", "phantom.artery_radius=4",
    "--set", "phantom.vein_center=22,16",
    "--set", "phantom.vein_semi_axes=4,4",
    "--set", "phantom.radius_range=3,4.5",
    "--set", "model.base_channels=8",
    "--set", "model.depth=2",
    "--set", "model.image_size=32",
]
FAST_TRAIN = [
    "--set", "train.max_epochs=1",
    "--set", "train.frames_per_seq=2",
    "--set", "train.val_frames_per_seq=2",
]


def tree_checksum(root):
    """Checksum of the dataset payload (manifest, frames, masks, forces).
    config.ini records the run's own paths and inspect-forces may drop a
    plot next to the data, so only the payload is compared."""
    digest = hashlib.sha256()
    for p in sorted(Path(root).rglob("*")):
        if p.is_file() and (p.suffix in (".png", ".csv") or p.name == "manifest.txt"):
            digest.update(p.relative_to(root).as_posix().encode())
            digest.update(p.read_bytes())
    return digest.hexdigest()


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data") / "phantom"
    code = main(["gen-phantom", "--out", str(root), "--sequences", "4",
                 "--seed", "11", "--set", "data.val_fraction=0.5"] + SMALL)
    assert code == 0
    return root


class TestGenPhantom:
    def test_layout_and_manifest(self, dataset):
        assert (dataset / "manifest.txt").exists()
        assert (dataset / "config.ini").exists()
        vids = sorted(p.name for p in dataset.iterdir() if p.is_dir())
        assert vids == [f"phantom{i:04d}" for i in range(4)]
        for v in vids:
            assert (dataset / v / "force.csv").exists()
            assert (dataset / v / "frames" / "000000.png").exists()
            assert (dataset / v / "masks" / "000000.png").exists()

    def test_repeat_same_seed_identical(self, tmp_path):
        args = ["--sequences", "3", "--seed", "5",
                "--set", "data.val_fraction=0.34"] + SMALL
        assert main(["gen-phantom", "--out", str(tmp_path / "a")] + args) == 0
        assert main(["gen-phantom", "--out", str(tmp_path / "b")] + args) == 0
        assert tree_checksum(tmp_path / "a") == tree_checksum(tmp_path / "b")

    def test_zero_sequences_usage_error(self, tmp_path):
        assert main(["gen-phantom", "--out", str(tmp_path / "x"),
                     "--sequences", "0"]) == 1


class TestTrain:
    def test_train_writes_artifacts(self, dataset, tmp_path):
        out = tmp_path / "run"
        code = main(["train", "--data", str(dataset), "--out", str(out),
                     "--variant", "fg_full", "--seed", "1"] + SMALL + FAST_TRAIN)
        assert code == 0
        assert (out / "checkpoint.fgc").exists()
        assert (out / "config.ini").exists()
        log = (out / "log.csv").read_text().splitlines()
        assert log[1] == "epoch,train_loss,val_loss,miou,dice,lr"
        # learning rate column never increases
        lrs = [float(line.split(",")[-1]) for line in log[2:]]
        assert all(a >= b for a, b in zip(lrs, lrs[1:]))

    def test_refuses_overwrite_without_force(self, dataset, tmp_path):
        out = tmp_path / "run"
        args = ["train", "--data", str(dataset), "--out", str(out),
                "--variant", "baseline", "--seed", "1"] + SMALL + FAST_TRAIN
        assert main(args) == 0
        assert main(args) == 1
        assert main(args + ["--force"]) == 0

    def test_unknown_variant_lists_names(self, dataset, tmp_path, capsys):
        code = main(["train", "--data", str(dataset), "--out",
                     str(tmp_path / "x"), "--variant", "fg_extra"])
        assert code == 1
        err = capsys.readouterr().err
        assert "baseline" in err and "fg_full" in err

    def test_missing_data_is_data_error(self, tmp_path):
        code = main(["train", "--data", str(tmp_path / "nope"), "--out",
                     str(tmp_path / "run"), "--variant", "baseline"] + SMALL)
        assert code == 2


class TestEval:
    def test_eval_roundtrip(self, dataset, tmp_path):
        run = tmp_path / "run"
        assert main(["train", "--data", str(dataset), "--out", str(run),
                     "--variant", "baseline", "--seed", "1"]
                    + SMALL + FAST_TRAIN) == 0
        out1 = tmp_path / "eval1"
        out2 = tmp_path / "eval2"
        for out in (out1, out2):
            code = main(["eval", "--checkpoint", str(run / "checkpoint.fgc"),
                         "--data", str(dataset), "--out", str(out)])
            assert code == 0
        assert (out1 / "metrics.csv").read_bytes() == (out2 / "metrics.csv").read_bytes()

    def test_missing_checkpoint_is_data_error(self, dataset, tmp_path):
        code = main(["eval", "--checkpoint", str(tmp_path / "none.fgc"),
                     "--data", str(dataset), "--out", str(tmp_path / "o")])
        assert code == 2

    def test_architecture_mismatch_is_data_error(self, dataset, tmp_path):
        run = tmp_path / "run"
        assert main(["train", "--data", str(dataset), "--out", str(run),
                     "--variant", "baseline", "--seed", "1"]
                    + SMALL + FAST_TRAIN) == 0
        # evaluating with a different architecture must be refused
        code = main(["eval", "--checkpoint", str(run / "checkpoint.fgc"),
                     "--data", str(dataset), "--out", str(tmp_path / "o"),
                     "--set", "model.base_channels=16"])
        assert code == 2


class TestAblate:
    def test_two_seeds_accounting(self, dataset, tmp_path):
        out = tmp_path / "abl"
        code = main(["ablate", "--data", str(dataset), "--out", str(out),
                     "--seeds", "1,2"] + SMALL + FAST_TRAIN)
        assert code == 0
        report = (out / "report.csv").read_text().splitlines()
        assert report[0] == "variant,seed,miou,dice,flops"
        assert len(report) == 1 + 4 * 2  # header + variants x seeds
        assert (out / "summary.csv").exists()
        assert (out / "chart.svg").exists()
        assert (out / "STATUS").read_text().strip() == "complete"
        for variant in ("baseline", "fg_full", "fg_wo_fbw", "fg_wo_kfs_fbw"):
            for seed in (1, 2):
                assert (out / f"log_{variant}_seed{seed}.csv").exists()

    def test_bad_seed_string_rejected(self, dataset, tmp_path):
        assert main(["ablate", "--data", str(dataset), "--out",
                     str(tmp_path / "x"), "--seeds", "1,,3"]) == 1


class TestInspectForces:
    def test_prints_selection_and_writes_svg(self, dataset, tmp_path, capsys):
        svg = tmp_path / "curve.svg"
        code = main(["inspect-forces", "--data", str(dataset),
                     "--video", "phantom0000", "--out", str(svg)])
        assert code == 0
        out = capsys.readouterr().out
        assert "K_min" in out and "K_max" in out
        text = svg.read_text()
        assert text.startswith("<?xml") and "<polyline" in text

    def test_weights_rows_sum_to_one(self, dataset, capsys):
        main(["inspect-forces", "--data", str(dataset), "--video", "phantom0001"])
        rows = [line.split() for line in capsys.readouterr().out.splitlines()
                if line and line[0].isdigit()]
        for row in rows:
            assert abs(float(row[2]) + float(row[3]) - 1.0) < 2e-4

    def test_ramp_profile_extremes(self, dataset, capsys):
        main(["inspect-forces", "--data", str(dataset), "--video", "phantom0000"])
        out = capsys.readouterr().out
        head = out.splitlines()[0]
        # min at an endpoint, max near the middle of a 6-frame ramp
        idx_min = int(head.split("@ frame")[1].split(",")[0])
        idx_max = int(head.split("@ frame")[2])
        assert idx_min in (0, 5)
        assert idx_max in (2, 3)

    def test_unknown_video_is_data_error(self, dataset):
        assert main(["inspect-forces", "--data", str(dataset),
                     "--video", "nope"]) == 2


class TestConfigArtifact:
    def test_resolved_config_reproduces_dataset(self, dataset, tmp_path):
        # regenerate purely from the emitted config file
        out = tmp_path / "again"
        code = main(["gen-phantom", "--config", str(dataset / "config.ini"),
                     "--out", str(out), "--sequences", "4", "--seed", "11"])
        assert code == 0
        assert tree_checksum(dataset) == tree_checksum(out)
