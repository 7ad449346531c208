import json
from pathlib import Path

import numpy as np
import pytest

from sinco.cli import main, manifest_to_args
from sinco.codec import CompressedContainer, compute_bpp
from sinco.imageio import ImagePlane, load_image, save_image, save_mask, synth_phantom


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Small phantom pair on disk plus a quickly trained segmenter checkpoint."""
    root = tmp_path_factory.mktemp("cli")
    img, mask = synth_phantom(11, 32, 32)
    save_image(img, root / "img_000.pgm")
    save_mask(mask, root / "mask_000.pgm")
    ckpt = root / "seg.ckpt"
    rc = main(
        [
            "train-seg",
            "--synthetic", "8",
            "--size", "32",
            "--out", str(ckpt),
            "--levels", "2",
            "--base-channels", "4",
            "--epochs", "2",
            "--lr", "1e-3",
            "--seed", "0",
        ]
    )
    assert rc == 0
    return root


def test_train_seg_writes_checkpoint_and_manifest(workspace):
    ckpt = workspace / "seg.ckpt"
    assert ckpt.exists()
    manifest = json.loads((workspace / "seg.ckpt.manifest.json").read_text())
    assert manifest["command"] == "train-seg"
    assert manifest["pairs"] == 8
    assert manifest["wall_seconds"] > 0


def test_train_seg_deterministic(tmp_path):
    outs = []
    for name in ("a.ckpt", "b.ckpt"):
        rc = main(
            ["train-seg", "--synthetic", "4", "--size", "32", "--out", str(tmp_path / name),
             "--levels", "1", "--base-channels", "2", "--epochs", "1", "--batch", "4", "--seed", "7"]
        )
        assert rc == 0
        outs.append((tmp_path / name).read_bytes())
    assert outs[0] == outs[1]


def test_train_seg_missing_masks_is_exit_2(tmp_path):
    img, _ = synth_phantom(0, 32, 32)
    save_image(img, tmp_path / "img_000.pgm")
    rc = main(["train-seg", "--data-dir", str(tmp_path), "--out", str(tmp_path / "x.ckpt"), "--epochs", "1"])
    assert rc == 2


def test_train_seg_epoch_one_smoke(tmp_path):
    out = tmp_path / "smoke.ckpt"
    rc = main(
        ["train-seg", "--synthetic", "3", "--size", "32", "--out", str(out),
         "--levels", "1", "--base-channels", "2", "--epochs", "1", "--batch", "3", "--seed", "1"]
    )
    assert rc == 0
    blob = out.read_bytes()
    CompressedContainer.from_bytes(blob)  # valid container


def test_compress_decompress_evaluate_round_trip(workspace, tmp_path, capsys):
    out = tmp_path / "img.sinco"
    rc = main(
        ["compress", "--input", str(workspace / "img_000.pgm"), "--output", str(out),
         "--bpp", "2.0", "--arch", "siren", "--lambda", "0", "--epochs", "200", "--seed", "3"]
    )
    assert rc == 0
    assert out.exists()
    manifest = json.loads((tmp_path / "img.sinco.manifest.json").read_text())
    assert manifest["achieved_bpp"] <= 2.0
    cont = CompressedContainer.from_bytes(out.read_bytes())
    assert manifest["achieved_bpp"] == compute_bpp(cont.weight_count, 16, cont.h, cont.w)
    losses = Path(manifest["loss_trace"]).read_text()
    assert losses.splitlines()[0] == "epoch,total,compress,regularize"

    rec = tmp_path / "rec.pgm"
    rc = main(["decompress", "--input", str(out), "--output", str(rec)])
    assert rc == 0
    rec_img = load_image(rec)
    assert rec_img.pixels.shape == (32, 32)

    capsys.readouterr()
    rc = main(
        ["evaluate", "--original", str(workspace / "img_000.pgm"), "--compressed", str(out),
         "--mask", str(workspace / "mask_000.pgm"), "--seg", str(workspace / "seg.ckpt")]
    )
    assert rc == 0
    row = json.loads(capsys.readouterr().out.splitlines()[0])
    assert row["bpp"] == pytest.approx(manifest["achieved_bpp"])
    assert row["psnr_db"] > 10.0
    assert row["dice"] is not None


def test_compress_lambda_needs_mask_and_seg(workspace, tmp_path):
    rc = main(
        ["compress", "--input", str(workspace / "img_000.pgm"), "--output", str(tmp_path / "x.sinco"),
         "--lambda", "1", "--epochs", "10"]
    )
    assert rc == 2


def test_compress_infeasible_budget_is_exit_2(workspace, tmp_path):
    rc = main(
        ["compress", "--input", str(workspace / "img_000.pgm"), "--output", str(tmp_path / "x.sinco"),
         "--bpp", "0.05", "--lambda", "0", "--epochs", "10"]
    )
    assert rc == 2


def test_compress_deterministic_bytes(workspace, tmp_path):
    blobs = []
    for name in ("a.sinco", "b.sinco"):
        rc = main(
            ["compress", "--input", str(workspace / "img_000.pgm"), "--output", str(tmp_path / name),
             "--bpp", "1.2", "--lambda", "0", "--epochs", "60", "--seed", "5"]
        )
        assert rc == 0
        blobs.append((tmp_path / name).read_bytes())
    assert blobs[0] == blobs[1]


def test_compress_manifest_round_trip(workspace, tmp_path):
    out = tmp_path / "m.sinco"
    rc = main(
        ["compress", "--input", str(workspace / "img_000.pgm"), "--output", str(out),
         "--bpp", "1.5", "--lambda", "0", "--epochs", "40", "--seed", "9"]
    )
    assert rc == 0
    first = out.read_bytes()
    manifest = json.loads((tmp_path / "m.sinco.manifest.json").read_text())
    rc = main(manifest_to_args(manifest))
    assert rc == 0
    assert out.read_bytes() == first


def test_decompress_truncated_is_exit_3(workspace, tmp_path):
    out = tmp_path / "t.sinco"
    rc = main(
        ["compress", "--input", str(workspace / "img_000.pgm"), "--output", str(out),
         "--bpp", "1.2", "--lambda", "0", "--epochs", "5", "--seed", "0"]
    )
    assert rc == 0
    (tmp_path / "trunc.sinco").write_bytes(out.read_bytes()[:-5])
    rc = main(["decompress", "--input", str(tmp_path / "trunc.sinco"), "--output", str(tmp_path / "y.pgm")])
    assert rc == 3


def test_decompress_corrupt_magic_is_exit_3(tmp_path):
    bad = tmp_path / "bad.sinco"
    bad.write_bytes(b"JUNKxxxxxxxxxxxxxxxxxxxxxxxxxxxx")
    rc = main(["decompress", "--input", str(bad), "--output", str(tmp_path / "z.pgm")])
    assert rc == 3


def test_evaluate_identical_images_reports_inf(tmp_path, capsys):
    img = ImagePlane(np.random.default_rng(0).uniform(0, 1, size=(16, 16)).astype(np.float32))
    a, b = tmp_path / "a.pgm", tmp_path / "b.pgm"
    save_image(img, a)
    save_image(img, b)
    capsys.readouterr()
    rc = main(["evaluate", "--original", str(a), "--compressed", str(b)])
    assert rc == 0
    row = json.loads(capsys.readouterr().out.splitlines()[0])
    assert row["psnr_db"] == "inf"
    assert row["ssim"] == 1.0


def test_evaluate_shape_mismatch_is_exit_3(tmp_path):
    save_image(ImagePlane(np.zeros((16, 16), dtype=np.float32)), tmp_path / "a.pgm")
    save_image(ImagePlane(np.zeros((20, 20), dtype=np.float32)), tmp_path / "b.pgm")
    rc = main(["evaluate", "--original", str(tmp_path / "a.pgm"), "--compressed", str(tmp_path / "b.pgm")])
    assert rc == 3


def test_evaluate_batch_emits_mean_row(workspace, tmp_path, capsys):
    orig_dir = tmp_path / "orig"
    comp_dir = tmp_path / "comp"
    orig_dir.mkdir()
    comp_dir.mkdir()
    for i in range(3):
        img, mask = synth_phantom(50 + i, 32, 32)
        save_image(img, orig_dir / f"img_{i:03d}.pgm")
        save_mask(mask, orig_dir / f"mask_{i:03d}.pgm")
        rc = main(
            ["compress", "--input", str(orig_dir / f"img_{i:03d}.pgm"),
             "--output", str(comp_dir / f"img_{i:03d}.sinco"),
             "--bpp", "1.2", "--lambda", "0", "--epochs", "30", "--seed", str(i)]
        )
        assert rc == 0
    capsys.readouterr()
    rc = main(
        ["evaluate", "--original", str(orig_dir), "--compressed", str(comp_dir),
         "--seg", str(workspace / "seg.ckpt"), "--output", str(tmp_path / "report.jsonl")]
    )
    assert rc == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 4
    rows = [json.loads(line) for line in lines]
    assert rows[-1]["file"] == "mean"
    per_image = [r["psnr_db"] for r in rows[:-1]]
    assert rows[-1]["psnr_db"] == pytest.approx(sum(per_image) / 3)
    assert (tmp_path / "report.jsonl").read_text().strip().splitlines() == lines


def test_sweep_writes_csv_with_mean_rows(workspace, tmp_path):
    out_dir = tmp_path / "sweep"
    rc = main(
        ["sweep", "--synthetic", "2", "--size", "32", "--seg", str(workspace / "seg.ckpt"),
         "--lambdas", "0,1", "--bpp", "1.2", "--epochs", "40", "--seed", "0",
         "--out-dir", str(out_dir)]
    )
    assert rc == 0
    lines = (out_dir / "sweep.csv").read_text().strip().splitlines()
    assert lines[0].startswith("image,lambda,seed,psnr_db,ssim,dice,bpp")
    # 2 images x 2 lambdas + 2 mean rows
    assert len(lines) == 1 + 4 + 2
    assert (out_dir / "lambda_0" / "img_000.sinco").exists()
    assert (out_dir / "lambda_1" / "img_001.sinco").exists()
    mean_rows = [line for line in lines[1:] if line.startswith("mean,")]
    assert len(mean_rows) == 2


def test_sweep_positive_lambda_requires_seg(tmp_path):
    rc = main(
        ["sweep", "--synthetic", "1", "--size", "32", "--lambdas", "0,1",
         "--epochs", "5", "--out-dir", str(tmp_path / "s")]
    )
    assert rc == 2


def test_usage_error_is_exit_2():
    assert main(["compress"]) == 2  # missing required --input


def test_unknown_command_is_exit_2():
    assert main(["frobnicate"]) == 2
