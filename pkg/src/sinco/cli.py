"""Command-line surface: segmenter pretraining, compression,
decompression, evaluation and lambda-sweep experiments.

Exit codes: 0 success, 1 internal error, 2 usage/config error,
3 data/format error. Every artifact is written atomically with a JSON
manifest beside it that echoes the flags needed to reproduce the run.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .codec import (
    CodecBudget,
    CompressedContainer,
    decompress,
    deserialize_container,
    deserialize_segnet,
    serialize_container,
    serialize_segnet,
    size_model_for_budget,
)
from .errors import ConfigError, DataError, FormatError, SincoError
from .imageio import (
    ImagePlane,
    MaskPlane,
    load_image,
    load_mask,
    save_image,
    synth_phantom,
    write_bytes_atomic,
)
from .metrics import EvalReport, dice_score, psnr, ssim
from .nets import SegNet, init_params, make_inr, make_segnet, unet_forward
from .tensor import Tensor
from .training import SegDataset, TrainConfig, train_compress, train_segmenter, segmenter_dataset_bce

FP16_BITS = 16


def _json_value(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return v


def _write_manifest(path: Path, manifest: dict) -> None:
    write_bytes_atomic(path, (json.dumps(manifest, indent=2, default=_json_value) + "\n").encode())


def _load_segmenter(path) -> SegNet:
    with open(path, "rb") as f:
        return deserialize_segnet(f.read()).freeze()


def _predict_mask(g: SegNet, img: ImagePlane) -> np.ndarray:
    out = unet_forward(g, Tensor(img.pixels.reshape(1, img.h, img.w)))
    return out.data.reshape(img.h, img.w)


def find_pairs(data_dir) -> list[tuple[Path, Path]]:
    """Match img_*.pgm with mask_*.pgm by shared suffix."""
    root = Path(data_dir)
    imgs = sorted(root.glob("img_*.pgm"))
    if not imgs:
        raise ConfigError(f"no img_*.pgm files found in {root}")
    pairs = []
    for img_path in imgs:
        mask_path = root / ("mask_" + img_path.name[4:])
        if not mask_path.exists():
            raise ConfigError(f"missing mask for {img_path.name}: expected {mask_path.name}")
        pairs.append((img_path, mask_path))
    return pairs


def _synthetic_dataset(count: int, size: int, seed: int) -> SegDataset:
    return SegDataset([synth_phantom(seed + i, size, size) for i in range(count)])


# ---------------------------------------------------------------------------
# train-seg


def cmd_train_seg(args) -> int:
    start = time.perf_counter()
    if (args.synthetic is None) == (args.data_dir is None):
        raise ConfigError("provide exactly one of --synthetic or --data-dir")
    if args.synthetic is not None:
        ds = _synthetic_dataset(args.synthetic, args.size, args.seed)
    else:
        ds = SegDataset([(load_image(i), load_mask(m)) for i, m in find_pairs(args.data_dir)])
    cfg = TrainConfig(
        lam=0.0,
        lr=args.lr,
        epochs=args.epochs,
        seed=args.seed,
        batch_size=args.batch,
        log_every=1,
    )
    g = make_segnet(levels=args.levels, base_channels=args.base_channels)
    init_params(g, seed=args.seed)
    g = train_segmenter(ds, g, cfg)
    final_bce = segmenter_dataset_bce(ds, g)

    out = Path(args.out)
    write_bytes_atomic(out, serialize_segnet(g))
    manifest = {
        "command": "train-seg",
        "flags": {
            "synthetic": args.synthetic,
            "data_dir": args.data_dir,
            "size": args.size,
            "out": str(out),
            "levels": args.levels,
            "base_channels": args.base_channels,
            "epochs": args.epochs,
            "batch": args.batch,
            "lr": args.lr,
            "seed": args.seed,
        },
        "seed": args.seed,
        "param_count": g.param_count,
        "pairs": len(ds),
        "final_train_bce": final_bce,
        "wall_seconds": time.perf_counter() - start,
    }
    _write_manifest(out.with_suffix(out.suffix + ".manifest.json"), manifest)
    print(f"wrote {out} ({g.param_count} parameters, train bce {final_bce:.4f})")
    return 0


# ---------------------------------------------------------------------------
# compress


def _compress_one(
    img: ImagePlane,
    mask: MaskPlane | None,
    seg: SegNet | None,
    *,
    arch: str,
    bpp: float,
    lam: float,
    epochs: int,
    lr: float,
    seed: int,
    l_f: int,
    omega0: float,
    log_every: int,
):
    """Size for the budget, fit, quantize, serialize. Returns
    (container bytes, model, trace, achieved bpp)."""
    budget = CodecBudget(target_bpp=bpp, bits_per_param=FP16_BITS, pixel_count=img.h * img.w)
    depth, width, count = size_model_for_budget(arch, l_f, budget)
    m = make_inr(arch, depth, width, l_f=l_f, omega0=omega0)
    init_params(m, seed=seed)
    cfg = TrainConfig(lam=lam, lr=lr, epochs=epochs, seed=seed, log_every=log_every)
    m, trace = train_compress(img, mask, seg, m, cfg)
    blob = serialize_container(m, img.h, img.w)
    achieved = CompressedContainer.from_bytes(blob).bpp()
    return blob, m, trace, achieved


def cmd_compress(args) -> int:
    start = time.perf_counter()
    if args.lam > 0 and (args.mask is None or args.seg is None):
        raise ConfigError("--lambda > 0 requires --mask and --seg")
    img = load_image(args.input)
    mask = load_mask(args.mask) if args.mask is not None else None
    seg = _load_segmenter(args.seg) if args.seg is not None else None

    blob, m, trace, achieved = _compress_one(
        img,
        mask,
        seg,
        arch=args.arch,
        bpp=args.bpp,
        lam=args.lam,
        epochs=args.epochs,
        lr=args.lr,
        seed=args.seed,
        l_f=args.l_f,
        omega0=args.omega0,
        log_every=args.log_every,
    )
    out = Path(args.output) if args.output else Path(args.input).with_suffix(".sinco")
    write_bytes_atomic(out, blob)
    trace_path = out.with_suffix(out.suffix + ".losses.csv")
    write_bytes_atomic(trace_path, trace.to_csv().encode())

    recon = decompress(blob)
    report = EvalReport(psnr_db=psnr(recon, img), ssim=ssim(recon, img), bpp=achieved)
    if seg is not None and mask is not None:
        report.dice = dice_score(_predict_mask(seg, recon), mask.values)
    final_epoch, total, c, r = trace.final
    manifest = {
        "command": "compress",
        "flags": {
            "input": str(args.input),
            "output": str(out),
            "bpp": args.bpp,
            "arch": args.arch,
            "lambda": args.lam,
            "mask": str(args.mask) if args.mask else None,
            "seg": str(args.seg) if args.seg else None,
            "epochs": args.epochs,
            "lr": args.lr,
            "seed": args.seed,
            "l_f": args.l_f,
            "omega0": args.omega0,
            "log_every": args.log_every,
        },
        "seed": args.seed,
        "arch": {"name": m.arch, "depth": m.depth, "width": m.width, "l_f": m.l_f, "omega0": m.omega0},
        "param_count": m.param_count,
        "requested_bpp": args.bpp,
        "achieved_bpp": achieved,
        "compression_ratio_vs_raw": achieved / args.raw_bits,
        "raw_bits_per_pixel": args.raw_bits,
        "final_loss": {"epoch": final_epoch, "total": total, "compress": c, "regularize": r},
        "metrics": json.loads(report.to_json()),
        "loss_trace": str(trace_path),
        "wall_seconds": time.perf_counter() - start,
    }
    _write_manifest(out.with_suffix(out.suffix + ".manifest.json"), manifest)
    print(f"wrote {out} ({m.param_count} params, {achieved:.4f} bpp, psnr {report.psnr_db:.2f} dB)")
    return 0


def manifest_to_args(manifest: dict) -> list[str]:
    """Rebuild the argv of a compress run from its manifest."""
    if manifest.get("command") != "compress":
        raise ConfigError(f"not a compress manifest: {manifest.get('command')!r}")
    f = manifest["flags"]
    argv = ["compress", "--input", f["input"], "--output", f["output"]]
    argv += ["--bpp", str(f["bpp"]), "--arch", f["arch"], "--lambda", str(f["lambda"])]
    if f.get("mask"):
        argv += ["--mask", f["mask"]]
    if f.get("seg"):
        argv += ["--seg", f["seg"]]
    argv += ["--epochs", str(f["epochs"]), "--lr", str(f["lr"]), "--seed", str(f["seed"])]
    argv += ["--l-f", str(f["l_f"]), "--omega0", str(f["omega0"]), "--log-every", str(f["log_every"])]
    return argv


# ---------------------------------------------------------------------------
# decompress


def cmd_decompress(args) -> int:
    start = time.perf_counter()
    with open(args.input, "rb") as f:
        blob = f.read()
    img = decompress(blob)
    out = Path(args.output) if args.output else Path(args.input).with_suffix(".pgm")
    save_image(img, out, bits=args.bits)
    cont = CompressedContainer.from_bytes(blob)
    manifest = {
        "command": "decompress",
        "flags": {"input": str(args.input), "output": str(out), "bits": args.bits},
        "container": {
            "arch": cont.arch,
            "depth": cont.depth,
            "width": cont.width,
            "l_f": cont.l_f,
            "omega0": cont.omega0,
            "h": cont.h,
            "w": cont.w,
            "weight_count": cont.weight_count,
            "bpp": cont.bpp(),
        },
        "wall_seconds": time.perf_counter() - start,
    }
    _write_manifest(out.with_suffix(out.suffix + ".manifest.json"), manifest)
    print(f"wrote {out} ({cont.h}x{cont.w})")
    return 0


# ---------------------------------------------------------------------------
# evaluate


def _evaluate_pair(original: ImagePlane, compressed_path: Path, mask, seg) -> EvalReport:
    if compressed_path.suffix == ".sinco":
        with open(compressed_path, "rb") as f:
            blob = f.read()
        recon = decompress(blob)
        bpp = CompressedContainer.from_bytes(blob).bpp()
    else:
        recon = load_image(compressed_path)
        bpp = None
    if recon.pixels.shape != original.pixels.shape:
        raise DataError(
            f"reconstruction {recon.pixels.shape} does not match original {original.pixels.shape}"
        )
    report = EvalReport(psnr_db=psnr(recon, original), ssim=ssim(recon, original), bpp=bpp)
    if mask is not None and seg is not None:
        report.dice = dice_score(_predict_mask(seg, recon), mask.values)
    return report


def _mean_row(reports: list[EvalReport]) -> dict:
    def mean_of(values):
        values = [v for v in values if v is not None]
        if not values:
            return None
        if any(math.isinf(v) for v in values):
            return math.inf
        return sum(values) / len(values)

    return {
        "file": "mean",
        "psnr_db": _json_value(mean_of([r.psnr_db for r in reports])),
        "ssim": mean_of([r.ssim for r in reports]),
        "dice": mean_of([r.dice for r in reports]),
        "bpp": mean_of([r.bpp for r in reports]),
    }


def cmd_evaluate(args) -> int:
    seg = _load_segmenter(args.seg) if args.seg is not None else None
    original = Path(args.original)
    compressed = Path(args.compressed)
    lines: list[str] = []
    if original.is_dir():
        if not compressed.is_dir():
            raise ConfigError("batch mode needs --compressed to be a directory too")
        imgs = sorted(original.glob("img_*.pgm"))
        if not imgs:
            raise ConfigError(f"no img_*.pgm files found in {original}")
        reports = []
        for img_path in imgs:
            comp_path = compressed / (img_path.stem + ".sinco")
            if not comp_path.exists():
                comp_path = compressed / img_path.name
            if not comp_path.exists():
                raise ConfigError(f"no compressed artifact for {img_path.name} in {compressed}")
            mask = None
            if seg is not None:
                mask_dir = Path(args.mask) if args.mask is not None else original
                mask_path = mask_dir / ("mask_" + img_path.name[4:])
                if not mask_path.exists():
                    raise ConfigError(f"missing mask for {img_path.name}: expected {mask_path}")
                mask = load_mask(mask_path)
            rep = _evaluate_pair(load_image(img_path), comp_path, mask, seg)
            lines.append(json.dumps({"file": img_path.name, **json.loads(rep.to_json())}))
            reports.append(rep)
        lines.append(json.dumps(_mean_row(reports)))
    else:
        mask = load_mask(args.mask) if args.mask is not None else None
        rep = _evaluate_pair(load_image(original), compressed, mask, seg)
        lines.append(json.dumps({"file": original.name, **json.loads(rep.to_json())}))
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.output:
        write_bytes_atomic(args.output, text.encode())
    return 0


# ---------------------------------------------------------------------------
# sweep


def cmd_sweep(args) -> int:
    start = time.perf_counter()
    lambdas = [float(tok) for tok in args.lambdas.split(",") if tok != ""]
    if not lambdas:
        raise ConfigError("--lambdas must list at least one value")
    if any(l < 0 for l in lambdas):
        raise ConfigError("lambda values must be >= 0")
    seg = _load_segmenter(args.seg) if args.seg is not None else None
    if any(l > 0 for l in lambdas) and seg is None:
        raise ConfigError("positive lambda values require --seg")

    if (args.synthetic is None) == (args.data_dir is None):
        raise ConfigError("provide exactly one of --synthetic or --data-dir")
    if args.synthetic is not None:
        items = []
        for i in range(args.synthetic):
            img, mask = synth_phantom(args.seed + i, args.size, args.size)
            items.append((f"img_{i:03d}", img, mask, args.seed + i))
    else:
        items = []
        for i, (img_path, mask_path) in enumerate(find_pairs(args.data_dir)):
            items.append((img_path.stem, load_image(img_path), load_mask(mask_path), args.seed + i))

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def run_arm(item, lam):
        name, img, mask, seed = item
        blob, m, trace, achieved = _compress_one(
            img,
            mask,
            seg if lam > 0 else None,
            arch=args.arch,
            bpp=args.bpp,
            lam=lam,
            epochs=args.epochs,
            lr=args.lr,
            seed=seed,
            l_f=args.l_f,
            omega0=args.omega0,
            log_every=max(args.epochs // 4, 1),
        )
        arm_dir = out_dir / f"lambda_{lam:g}"
        arm_dir.mkdir(parents=True, exist_ok=True)
        write_bytes_atomic(arm_dir / f"{name}.sinco", blob)
        recon = decompress(blob)
        row = {
            "image": name,
            "lambda": lam,
            "seed": seed,
            "psnr_db": psnr(recon, img),
            "ssim": ssim(recon, img),
            "dice": dice_score(_predict_mask(seg, recon), mask.values) if seg is not None else None,
            "bpp": achieved,
            "final_compress": trace.final[2],
            "final_regularize": trace.final[3],
        }
        return row

    jobs = [(item, lam) for lam in lambdas for item in items]
    workers = int(os.environ.get("SINCO_THREADS", "1"))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda job: run_arm(*job), jobs))
    else:
        rows = [run_arm(*job) for job in jobs]

    header = ["image", "lambda", "seed", "psnr_db", "ssim", "dice", "bpp", "final_compress", "final_regularize"]
    csv_lines = [",".join(header)]
    for row in rows:
        csv_lines.append(",".join("" if row[k] is None else f"{row[k]}" for k in header))
    for lam in lambdas:
        arm = [r for r in rows if r["lambda"] == lam]
        mean = {
            "image": "mean",
            "lambda": lam,
            "seed": "",
            "psnr_db": sum(r["psnr_db"] for r in arm) / len(arm),
            "ssim": sum(r["ssim"] for r in arm) / len(arm),
            "dice": (sum(r["dice"] for r in arm) / len(arm)) if arm[0]["dice"] is not None else "",
            "bpp": sum(r["bpp"] for r in arm) / len(arm),
            "final_compress": sum(r["final_compress"] for r in arm) / len(arm),
            "final_regularize": sum(r["final_regularize"] for r in arm) / len(arm),
        }
        csv_lines.append(",".join(f"{mean[k]}" for k in header))
    csv_path = out_dir / "sweep.csv"
    write_bytes_atomic(csv_path, ("\n".join(csv_lines) + "\n").encode())

    manifest = {
        "command": "sweep",
        "flags": {
            "synthetic": args.synthetic,
            "data_dir": args.data_dir,
            "size": args.size,
            "seg": str(args.seg) if args.seg else None,
            "lambdas": args.lambdas,
            "arch": args.arch,
            "bpp": args.bpp,
            "epochs": args.epochs,
            "lr": args.lr,
            "seed": args.seed,
            "l_f": args.l_f,
            "omega0": args.omega0,
            "out_dir": str(out_dir),
        },
        "rows": len(rows),
        "wall_seconds": time.perf_counter() - start,
    }
    _write_manifest(out_dir / "sweep.manifest.json", manifest)
    print(f"wrote {csv_path} ({len(rows)} arms)")
    return 0


# ---------------------------------------------------------------------------
# parser & entry


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sinco", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-seg", help="pretrain the segmenter and write a checkpoint")
    p.add_argument("--synthetic", type=int, default=None, metavar="N", help="train on N synthetic phantoms")
    p.add_argument("--data-dir", default=None, help="directory of paired img_*.pgm / mask_*.pgm")
    p.add_argument("--size", type=int, default=64, help="phantom size for --synthetic")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--levels", type=int, default=2)
    p.add_argument("--base-channels", type=int, default=16)
    p.add_argument("--epochs", type=int, default=75)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_seg)

    p = sub.add_parser("compress", help="fit an INR to an image and write a .sinco container")
    p.add_argument("--input", required=True, help="grayscale PGM to compress")
    p.add_argument("--output", default=None, help="output .sinco path (default: input with .sinco)")
    p.add_argument("--bpp", type=float, default=1.2)
    p.add_argument("--arch", choices=["siren", "pemlp"], default="siren")
    p.add_argument("--lambda", dest="lam", type=float, default=1.0, help="regularization weight")
    p.add_argument("--mask", default=None, help="groundtruth mask PGM (needed when lambda > 0)")
    p.add_argument("--seg", default=None, help="segmenter checkpoint (needed when lambda > 0)")
    p.add_argument("--epochs", type=int, default=50000)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--l-f", dest="l_f", type=int, default=12, help="frequency count for pemlp")
    p.add_argument("--omega0", type=float, default=30.0, help="first-layer frequency scale for siren")
    p.add_argument("--log-every", type=int, default=500)
    p.add_argument("--raw-bits", type=int, default=8, help="raw bits/pixel used for the ratio report")
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("decompress", help="evaluate a .sinco container back into a PGM")
    p.add_argument("--input", required=True)
    p.add_argument("--output", default=None)
    p.add_argument("--bits", type=int, choices=[8, 16], default=8)
    p.set_defaults(func=cmd_decompress)

    p = sub.add_parser("evaluate", help="report PSNR/SSIM (and Dice) for reconstructions")
    p.add_argument("--original", required=True, help="original PGM, or a directory of img_*.pgm")
    p.add_argument("--compressed", required=True, help=".sinco/.pgm file, or a directory")
    p.add_argument("--mask", default=None, help="mask PGM (or directory of mask_*.pgm)")
    p.add_argument("--seg", default=None, help="segmenter checkpoint for Dice")
    p.add_argument("--output", default=None, help="also write the JSON lines here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="run a lambda sweep and write a comparison CSV")
    p.add_argument("--synthetic", type=int, default=None, metavar="N")
    p.add_argument("--data-dir", default=None)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seg", default=None)
    p.add_argument("--lambdas", default="0,1")
    p.add_argument("--arch", choices=["siren", "pemlp"], default="siren")
    p.add_argument("--bpp", type=float, default=1.2)
    p.add_argument("--epochs", type=int, default=2000, help="desk-scale default")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--l-f", dest="l_f", type=int, default=12)
    p.add_argument("--omega0", type=float, default=30.0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (FormatError, DataError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except SincoError as e:
        print(f"internal error: {e}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
