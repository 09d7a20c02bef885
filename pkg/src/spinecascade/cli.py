"""Command-line interface: synth, train, infer, eval, experiment, plot."""

from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

import numpy as np
import torch

from .archive import ArchiveError, load_model, save_model
from .cascade import TrainConfig, TrainingDivergedError, stage_mses
from .imaging import GrayImage, read_pgm, write_pgm
from .manifest import (
    Manifest,
    ManifestEntry,
    ManifestError,
    PredictionRecord,
    export_predictions,
    load_manifest,
    save_manifest,
)
from .metrics import cobb_angles, normalized_mse
from .pipeline import (
    FullModel,
    FullTrainConfig,
    PreprocessConfig,
    _corner_roi_samples,
    _working_samples,
    centers_from_corners,
    full_inference,
    init_sensitivity_experiment,
    run_pipeline,
    train_full,
)
from .plotting import error_curve_image, overlay_image, save_plot
from .shapes import Shape
from .synth import SynthConfig, synth_generate

EXIT_OK = 0
EXIT_DATA = 3
EXIT_ARCHIVE = 4
EXIT_DIVERGED = 5
EXIT_INVALID = 6


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spinecascade",
        description="Cascaded, PCA-shape-constrained vertebral landmark localization.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic annotated dataset")
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--amp-min", type=float, default=2.0)
    p.add_argument("--amp-max", type=float, default=10.0)
    p.add_argument("--noise", type=float, default=0.03)

    p = sub.add_parser("train", help="train both localization steps")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out-model", type=Path, required=True)
    p.add_argument("--stages", type=int, default=3)
    p.add_argument("--epochs", type=int, default=8)
    p.add_argument("--batch-size", type=int, default=2)
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--q-centers", type=int, default=8)
    p.add_argument("--q-corners", type=int, default=5)
    p.add_argument("--no-pca", action="store_true")
    p.add_argument("--no-flip", action="store_true")
    p.add_argument("--val-fraction", type=float, default=0.2)

    p = sub.add_parser("infer", help="predict 68 landmarks per image")
    p.add_argument("--model", type=Path, required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--manifest", type=Path)
    group.add_argument("--image", type=Path)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("eval", help="per-stage and final MSE plus Cobb SMAPE")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)

    p = sub.add_parser("experiment", help="runnable experiment modes")
    exp = p.add_subparsers(dest="experiment", required=True)
    ps = exp.add_parser("init-sensitivity", help="perturb the initialization and re-evaluate")
    ps.add_argument("--model", type=Path, required=True)
    ps.add_argument("--manifest", type=Path, required=True)
    ps.add_argument("--sigmas", type=str, default="0,0.01,0.02,0.04")
    ps.add_argument("--draws", type=int, default=10)
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--out", type=Path)

    p = sub.add_parser("plot", help="stage error curves and landmark overlays")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--limit", type=int, default=4)
    return parser


def _load_dataset(manifest_path: Path) -> list[tuple[GrayImage, Shape, ManifestEntry]]:
    manifest = load_manifest(manifest_path)
    out = []
    for entry in manifest.entries:
        img = read_pgm(entry.resolve_path(manifest.base_dir))
        out.append((img, entry.shape, entry))
    return out


def _cmd_synth(args) -> int:
    cfg = SynthConfig(
        count=args.count, amp_range=(args.amp_min, args.amp_max), noise_sigma=args.noise
    )
    samples = synth_generate(cfg, args.seed)
    out: Path = args.out
    (out / "images").mkdir(parents=True, exist_ok=True)
    entries = []
    cobb_rows = []
    for i, sample in enumerate(samples):
        rel = f"images/sample_{i:04d}.pgm"
        write_pgm(out / rel, sample.image)
        entries.append(ManifestEntry(image_path=rel, shape=sample.corners))
        cobb_rows.append(
            [rel, f"{sample.true_cobb.pt:.6f}", f"{sample.true_cobb.mt:.6f}", f"{sample.true_cobb.tl:.6f}"]
        )
    save_manifest(Manifest(entries=entries, base_dir=out), out / "manifest.txt")
    with open(out / "true_cobb.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image", "pt", "mt", "tl"])
        writer.writerows(cobb_rows)
    print(f"wrote {len(samples)} samples to {out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    data = _load_dataset(args.manifest)
    tagged = any(e.split for _, _, e in data)
    if tagged:
        train = [(img, s) for img, s, e in data if e.split != "val"]
        val = [(img, s) for img, s, e in data if e.split == "val"]
    else:
        rng = np.random.default_rng(args.seed)
        order = rng.permutation(len(data))
        n_val = int(round(args.val_fraction * len(data)))
        val_idx = set(order[:n_val].tolist())
        train = [(data[i][0], data[i][1]) for i in range(len(data)) if i not in val_idx]
        val = [(data[i][0], data[i][1]) for i in sorted(val_idx)]

    cfg = FullTrainConfig(
        train=TrainConfig(
            epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, seed=args.seed
        ),
        n_stages=args.stages,
        q_centers=args.q_centers,
        q_corners=args.q_corners,
        use_pca=not args.no_pca,
        flip_augment=not args.no_flip,
    )
    model = train_full(train, val, cfg)
    snapshot = {
        "stages": args.stages,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "lr": args.lr,
        "seed": args.seed,
        "q_centers": args.q_centers,
        "q_corners": args.q_corners,
        "use_pca": not args.no_pca,
        "flip_augment": not args.no_flip,
        "train_size": len(train),
        "val_size": len(val),
    }
    save_model(args.out_model, model, config_snapshot=snapshot)
    print(f"saved model to {args.out_model}")
    for step in ("center", "corner"):
        mses = model.history.get(f"{step}_val_stage_mse")
        if mses:
            row = "  ".join(f"s{i}={m:.3e}" for i, m in enumerate(mses))
            print(f"{step} val MSE per stage: {row}")
    return EXIT_OK


def _cmd_infer(args) -> int:
    model = load_model(args.model)
    records = []
    if args.image is not None:
        img = read_pgm(args.image)
        pred = full_inference(img, model)
        records.append(
            PredictionRecord(image_path=str(args.image), shape=pred, cobb=cobb_angles(pred))
        )
    else:
        for img, gt, entry in _load_dataset(args.manifest):
            pred = full_inference(img, model)
            records.append(
                PredictionRecord(
                    image_path=entry.image_path,
                    shape=pred,
                    mse=normalized_mse(pred, gt, img.width, img.height),
                    cobb=cobb_angles(pred),
                )
            )
    export_predictions(records, args.out)
    print(f"wrote {len(records)} predictions to {args.out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    model = load_model(args.model)
    data = [(img, s) for img, s, _ in _load_dataset(args.manifest)]

    working = _working_samples(data, model.preprocess)
    center_samples = [(f, centers_from_corners(s)) for f, s in working]
    corner_samples = _corner_roi_samples(working, jitter=0.0, rng=None)
    center_curve = stage_mses(model.center_model, center_samples)
    corner_curve = stage_mses(model.corner_model, corner_samples)

    finals, pred_cobbs, gt_cobbs = [], [], []
    for img, gt in data:
        pred = full_inference(img, model)
        finals.append(normalized_mse(pred, gt, img.width, img.height))
        pred_cobbs.append(cobb_angles(pred))
        gt_cobbs.append(cobb_angles(gt))
    from .metrics import smape

    print("center stage MSE: " + "  ".join(f"s{i}={m:.3e}" for i, m in enumerate(center_curve)))
    print("corner stage MSE (GT-center RoIs): " + "  ".join(f"s{i}={m:.3e}" for i, m in enumerate(corner_curve)))
    print(f"final landmark MSE: {float(np.mean(finals)):.3e}")
    print(f"Cobb SMAPE: {smape(pred_cobbs, gt_cobbs):.2f}%")
    return EXIT_OK


def _cmd_experiment(args) -> int:
    model = load_model(args.model)
    data = [(img, s) for img, s, _ in _load_dataset(args.manifest)]
    sigmas = [float(s) for s in args.sigmas.split(",") if s.strip()]
    rows = init_sensitivity_experiment(model, data, sigmas, draws=args.draws, seed=args.seed)
    print(f"{'sigma':>8}  {'initial MSE':>12}  {'final MSE':>12}")
    for row in rows:
        print(f"{row['sigma']:>8.4f}  {row['initial_mse']:>12.4e}  {row['final_mse']:>12.4e}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["sigma", "initial_mse", "final_mse"])
            writer.writeheader()
            writer.writerows(rows)
    return EXIT_OK


def _cmd_plot(args) -> int:
    model = load_model(args.model)
    data = [(img, s) for img, s, _ in _load_dataset(args.manifest)]
    out_dir: Path = args.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    working = _working_samples(data, model.preprocess)
    center_samples = [(f, centers_from_corners(s)) for f, s in working]
    corner_samples = _corner_roi_samples(working, jitter=0.0, rng=None)
    curves = {
        "center": stage_mses(model.center_model, center_samples),
        "corner": stage_mses(model.corner_model, corner_samples),
    }
    save_plot(error_curve_image(curves), out_dir / "stage_errors.pgm")

    for i, (img, gt) in enumerate(data[: args.limit]):
        result = run_pipeline(img, model)
        gt_working = Shape(gt.points * np.array(result.scale), gt.kind)
        for n, stage_shape in enumerate(result.center_stages):
            overlay = overlay_image(
                result.working,
                [(centers_from_corners(gt_working), 1.0), (stage_shape, 0.0)],
            )
            save_plot(overlay, out_dir / f"img{i:03d}_centers_s{n}.pgm")
        overlay = overlay_image(result.working, [(gt_working, 1.0), (result.corners_working, 0.0)])
        save_plot(overlay, out_dir / f"img{i:03d}_corners.pgm")
    print(f"wrote plots to {out_dir}")
    return EXIT_OK


def main(argv=None) -> int:
    threads = os.environ.get("SPINECASCADE_THREADS")
    if threads:
        torch.set_num_threads(max(1, int(threads)))
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "synth": _cmd_synth,
        "train": _cmd_train,
        "infer": _cmd_infer,
        "eval": _cmd_eval,
        "experiment": _cmd_experiment,
        "plot": _cmd_plot,
    }
    try:
        return handlers[args.command](args)
    except (ManifestError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ArchiveError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARCHIVE
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
