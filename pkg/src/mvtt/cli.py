"""Command-line entry point: phantom generation, training, inference,
baseline comparison, and evaluation reports.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

Every command is deterministic given its flags and seed: reruns reproduce
output bytes exactly.  For that reason run manifests record wall-clock
timestamps as null; actual timing goes to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import __version__, baselines, fileio, metrics, phantom, train
from .network import ModelVariant, load_checkpoint, save_checkpoint


class UsageError(Exception):
    """Bad flags or invalid configuration (exit 1)."""


class DataError(Exception):
    """Missing, malformed, or mismatched input data (exit 2)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); we want exit 1
        raise UsageError(message)


# -- small output helpers ----------------------------------------------------


def _write_json(path, obj) -> None:
    data = json.dumps(obj, indent=2, sort_keys=True).encode() + b"\n"
    fileio.atomic_write_bytes(path, data)


def _write_text(path, text: str) -> None:
    fileio.atomic_write_bytes(path, text.encode())


def _write_manifest(out: Path, command: str, config_echo: dict, seed, artifacts) -> None:
    manifest = {
        "command": command,
        "config": config_echo,
        "seed": seed,
        "timestamps": None,  # kept null so reruns are byte-identical
        "version": __version__,
        "artifacts": sorted(str(Path(a).relative_to(out)) for a in artifacts),
    }
    _write_json(out / "manifest.json", manifest)


def _loss_csv(losses) -> str:
    lines = ["epoch,loss"]
    lines += [f"{i},{value!r}" for i, value in enumerate(losses)]
    return "\n".join(lines) + "\n"


def _load_dataset(data_dir: Path):
    """Sorted (stem, Volume) pairs from every .mvttvol file in a directory."""
    if not data_dir.is_dir():
        raise DataError(f"dataset directory not found: {data_dir}")
    paths = sorted(data_dir.glob("*.mvttvol"))
    if not paths:
        raise DataError(f"no .mvttvol volumes in {data_dir}")
    return [(p.stem, phantom.load(p)) for p in paths]


# -- overlays ----------------------------------------------------------------

_SCALE = 4  # nearest-neighbor upscale for visibility


def _contour2d(mask: np.ndarray) -> np.ndarray:
    """Boundary pixels of a 2-D mask: mask minus its erosion."""
    if not mask.any():
        return np.zeros_like(mask)
    return mask & ~ndimage.binary_erosion(mask, border_value=0)


def _upscale(img: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(img, _SCALE, axis=0), _SCALE, axis=1)


def write_pgm(path, gray: np.ndarray) -> None:
    h, w = gray.shape
    header = f"P5\n{w} {h}\n255\n".encode()
    fileio.atomic_write_bytes(path, header + gray.astype(np.uint8).tobytes())


def _slice_overlays(intensities, pred_mask, truth_mask, out_dir: Path, png: bool):
    """Per-slice overlay images: base anatomy with prediction and truth
    contours (PGM always; optional color PNG with red pred / green truth)."""
    out_dir.mkdir(parents=True, exist_ok=True)
    peak = float(intensities.max()) or 1.0
    written = []
    for s in range(intensities.shape[0]):
        base = _upscale((intensities[s] / peak * 160.0).astype(np.uint8))
        pred = _upscale(_contour2d(pred_mask[s])) if pred_mask is not None else None
        truth = _upscale(_contour2d(truth_mask[s])) if truth_mask is not None else None
        gray = base.copy()
        if truth is not None:
            gray[truth] = 208
        if pred is not None:
            gray[pred] = 255
        pgm_path = out_dir / f"slice_{s:03d}.pgm"
        write_pgm(pgm_path, gray)
        written.append(pgm_path)
        if png:
            from PIL import Image

            rgb = np.stack([base, base, base], axis=-1)
            if truth is not None:
                rgb[truth] = (0, 200, 0)
            if pred is not None:
                rgb[pred] = (255, 0, 0)
            png_path = out_dir / f"slice_{s:03d}.png"
            Image.fromarray(rgb).save(png_path)
            written.append(png_path)
    return written


# -- commands ----------------------------------------------------------------


def cmd_phantom(args) -> int:
    if args.count < 1:
        raise UsageError(f"--count must be >= 1, got {args.count}")
    try:
        spec = phantom.PhantomSpec(extents=(args.size, args.size, args.size))
    except ValueError as e:
        raise UsageError(str(e)) from e
    folds = args.folds if args.folds else min(args.count, 10)
    if args.count < folds:
        raise UsageError(f"--count {args.count} is smaller than --folds {folds}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    volumes, assignment = phantom.make_dataset(args.count, spec, seed=args.seed, folds=folds)
    artifacts = []
    for i, vol in enumerate(volumes):
        path = out / f"vol{i:03d}.mvttvol"
        phantom.save(vol, path)
        artifacts.append(path)
    dataset = {
        "spec": spec.to_dict(),
        "count": args.count,
        "folds": folds,
        "fold_assignment": assignment,
        "volumes": [f"vol{i:03d}.mvttvol" for i in range(args.count)],
    }
    _write_json(out / "dataset.json", dataset)
    artifacts.append(out / "dataset.json")
    _write_manifest(out, "phantom", dataset, args.seed, artifacts)
    return 0


def _train_config(args) -> train.TrainConfig:
    fields = {}
    if args.config:
        try:
            fields = json.loads(Path(args.config).read_text())
        except FileNotFoundError as e:
            raise DataError(f"config file not found: {args.config}") from e
        except json.JSONDecodeError as e:
            raise UsageError(f"config file {args.config} is not valid JSON: {e}") from e
    # flags override file values
    for key, value in (
        ("variant", args.variant),
        ("epochs", args.epochs),
        ("seed", args.seed),
        ("folds", args.folds),
    ):
        if value is not None:
            fields[key] = value
    try:
        return train.TrainConfig(**fields)
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid training configuration: {e}") from e


def cmd_train(args) -> int:
    config = _train_config(args)  # validated before any compute
    named = _load_dataset(Path(args.data))
    names = [n for n, _ in named]
    volumes = [v for _, v in named]
    for name, vol in named:
        if vol.la_pv is None or vol.scar is None:
            raise DataError(f"volume {name} lacks ground-truth masks required for training")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    artifacts = []
    t0 = time.monotonic()
    if config.folds == 0:  # overfit mode: train and evaluate on the full set
        model, losses = train.train_model(volumes, config)
        report = train.evaluate(model, volumes, config, names=names)
        ckpt = out / "checkpoint.mvttckpt"
        save_checkpoint(model, ckpt)
        _write_text(out / "loss.csv", _loss_csv(losses))
        artifacts += [ckpt, out / "loss.csv"]
    else:
        assignment = [i % config.folds for i in range(len(volumes))]
        if len(volumes) < config.folds:
            raise DataError(
                f"{len(volumes)} volumes cannot fill {config.folds} folds"
            )
        result = train.cross_validate(volumes, assignment, config)
        report = metrics.MetricsReport(
            rows=[
                metrics.MetricsRow(
                    volume=names[int(r.volume[3:])],
                    task=r.task,
                    metrics=r.metrics,
                    scar_percentage_pred=r.scar_percentage_pred,
                    scar_percentage_true=r.scar_percentage_true,
                )
                for fr in result.fold_results
                for r in fr.report.rows
            ]
        )
        for fr in result.fold_results:
            fold_dir = out / f"fold{fr.fold}"
            fold_dir.mkdir(exist_ok=True)
            ckpt = fold_dir / "checkpoint.mvttckpt"
            save_checkpoint(fr.model, ckpt)
            _write_text(fold_dir / "loss.csv", _loss_csv(fr.losses))
            artifacts += [ckpt, fold_dir / "loss.csv"]
    _write_json(out / "report.json", report.to_json_dict())
    _write_text(out / "report.csv", report.to_csv())
    artifacts += [out / "report.json", out / "report.csv"]
    _write_manifest(out, "train", config.to_dict(), config.seed, artifacts)
    print(f"trained in {time.monotonic() - t0:.1f}s", file=sys.stderr)
    return 0


def cmd_infer(args) -> int:
    model = load_checkpoint(args.checkpoint)
    volume = phantom.load(args.volume)
    if volume.intensities.shape != model.config.extents:
        raise DataError(
            f"volume extents {volume.intensities.shape} do not match "
            f"checkpoint extents {model.config.extents}"
        )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    threshold = model.config.threshold
    la_p, scar_p = model.forward(train.normalized_input(volume))
    artifacts = []
    la_mask = scar_mask = None
    if la_p is not None:
        la_mask = la_p[:, 0] > threshold
        phantom.save(
            phantom.Volume(intensities=la_p[:, 0], spacing=volume.spacing),
            out / "la_prob.mvttvol",
        )
        artifacts.append(out / "la_prob.mvttvol")
    if scar_p is not None:
        scar_mask = scar_p[:, 0] > threshold
        phantom.save(
            phantom.Volume(intensities=scar_p[:, 0], spacing=volume.spacing),
            out / "scar_prob.mvttvol",
        )
        artifacts.append(out / "scar_prob.mvttvol")
    phantom.save(
        phantom.Volume(
            intensities=volume.intensities,
            spacing=volume.spacing,
            la_pv=la_mask,
            scar=scar_mask,
        ),
        out / "pred_masks.mvttvol",
    )
    artifacts.append(out / "pred_masks.mvttvol")
    for task, pred, truth in (
        ("la_pv", la_mask, volume.la_pv),
        ("scar", scar_mask, volume.scar),
    ):
        if pred is None:
            continue
        artifacts += _slice_overlays(
            volume.intensities, pred, truth, out / "overlays" / task, args.png
        )
    _write_manifest(
        out,
        "infer",
        {"checkpoint": str(args.checkpoint), "volume": str(args.volume), "png": args.png},
        model.config.seed,
        artifacts,
    )
    return 0


_BASELINE_METHODS = ("2sd", "kmeans", "fcm")


def _run_baseline(method, intensities, wall, seed):
    if method == "2sd":
        return baselines.sd_threshold(intensities, wall)
    if method == "kmeans":
        return baselines.kmeans_scar(intensities, wall, seed=seed)
    return baselines.fcm_scar(intensities, wall, seed=seed)


def cmd_baselines(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    unknown = [m for m in methods if m not in _BASELINE_METHODS]
    if unknown or not methods:
        raise UsageError(
            f"unknown method tags {unknown}; valid: {', '.join(_BASELINE_METHODS)}"
        )
    named = _load_dataset(Path(args.data))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    artifacts = []
    reports: dict[str, metrics.MetricsReport] = {m: metrics.MetricsReport(rows=[]) for m in methods}
    for name, vol in named:
        if vol.la_pv is None or vol.scar is None:
            raise DataError(f"volume {name} lacks ground-truth masks")
        wall = baselines.wall_region(vol.la_pv, args.wall_radius)
        for method in methods:
            result = _run_baseline(method, vol.intensities, wall, args.seed)
            flags = result.flags
            row = metrics.MetricsRow(
                volume=name,
                task="scar",
                metrics=metrics.derive(metrics.confusion(result.scar, vol.scar)),
            )
            reports[method].rows.append(row)
            mask_dir = out / "masks" / method
            mask_dir.mkdir(parents=True, exist_ok=True)
            mask_path = mask_dir / f"{name}.mvttvol"
            phantom.save(
                phantom.Volume(
                    intensities=vol.intensities, spacing=vol.spacing, scar=result.scar
                ),
                mask_path,
            )
            sidecar = {
                "method": method,
                "volume": name,
                "flags": list(flags),
                "dice": row.metrics.dice,
            }
            _write_json(mask_dir / f"{name}.json", sidecar)
            artifacts += [mask_path, mask_dir / f"{name}.json"]
    comparison = ["volume,method,accuracy,sensitivity,specificity,dice"]
    for method in methods:
        report = reports[method]
        _write_json(out / f"report_{method}.json", report.to_json_dict())
        artifacts.append(out / f"report_{method}.json")
        for row in report.rows:
            m = row.metrics
            comparison.append(
                f"{row.volume},{method},{m.accuracy!r},{m.sensitivity!r},"
                f"{m.specificity!r},{m.dice!r}"
            )
    _write_text(out / "comparison.csv", "\n".join(comparison) + "\n")
    artifacts.append(out / "comparison.csv")
    _write_manifest(
        out,
        "baselines",
        {"methods": methods, "wall_radius": args.wall_radius},
        args.seed,
        artifacts,
    )
    return 0


def cmd_eval(args) -> int:
    pred_dir, truth_dir = Path(args.pred), Path(args.truth)
    preds = {p.stem: p for p in sorted(pred_dir.glob("*.mvttvol"))}
    truths = {p.stem: p for p in sorted(truth_dir.glob("*.mvttvol"))}
    if not truths:
        raise DataError(f"no .mvttvol volumes in {truth_dir}")
    orphans = sorted(set(preds) ^ set(truths))
    if orphans:
        raise DataError(f"unmatched volume files (by stem): {', '.join(orphans)}")
    rows = []
    pct_pred, pct_true = [], []
    for stem in sorted(preds):
        pred = phantom.load(preds[stem])
        truth = phantom.load(truths[stem])
        for task in ("la_pv", "scar"):
            p_mask, t_mask = getattr(pred, task), getattr(truth, task)
            if p_mask is None or t_mask is None:
                continue
            row_kwargs = {}
            if task == "scar" and truth.la_pv is not None and truth.la_pv.any():
                pp = metrics.scar_percentage(p_mask, truth.la_pv, args.wall_radius)
                tt = metrics.scar_percentage(t_mask, truth.la_pv, args.wall_radius)
                pct_pred.append(pp)
                pct_true.append(tt)
                row_kwargs = {"scar_percentage_pred": pp, "scar_percentage_true": tt}
            rows.append(
                metrics.MetricsRow(
                    volume=stem,
                    task=task,
                    metrics=metrics.derive(metrics.confusion(p_mask, t_mask)),
                    **row_kwargs,
                )
            )
    if not rows:
        raise DataError("no comparable masks found in the matched volumes")
    report = metrics.MetricsReport(rows=rows)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = report.to_json_dict()
    doc["agreement"] = None
    if len(pct_pred) >= 2:
        ba = metrics.bland_altman(pct_pred, pct_true)
        try:
            r = metrics.pearson(pct_pred, pct_true)
        except ValueError:
            r = None  # zero variance across volumes; flagged by omission
        doc["agreement"] = {
            "pearson_r": r,
            "mean_diff": ba.mean_diff,
            "loa_low": ba.loa_low,
            "loa_high": ba.loa_high,
            "fraction_within": ba.fraction_within,
            "n": len(pct_pred),
        }
    _write_json(out / "report.json", doc)
    _write_text(out / "report.csv", report.to_csv())
    _write_manifest(
        out,
        "eval",
        {"pred": str(pred_dir), "truth": str(truth_dir), "wall_radius": args.wall_radius},
        None,
        [out / "report.json", out / "report.csv"],
    )
    return 0


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mvtt", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("phantom", help="generate a synthetic phantom dataset")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--size", type=int, default=32, help="cube edge length in voxels")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--folds", type=int, default=0, help="0 = min(count, 10)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("train", help="train a model variant on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variant", choices=[v.value for v in ModelVariant])
    p.add_argument("--config", help="JSON file with TrainConfig fields; flags override")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--folds", type=int, help="0 = no cross-validation (overfit mode)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="run a checkpoint on one volume")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--volume", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--png", action="store_true", help="also write color PNG overlays")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("baselines", help="run unsupervised scar baselines")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--methods", default="2sd,kmeans,fcm")
    p.add_argument("--wall-radius", type=float, default=baselines.DEFAULT_WALL_RADIUS)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_baselines)

    p = sub.add_parser("eval", help="compare predicted vs truth mask volumes")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--wall-radius", type=float, default=baselines.DEFAULT_WALL_RADIUS)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (DataError, fileio.FileFormatError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except (FloatingPointError, ZeroDivisionError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
