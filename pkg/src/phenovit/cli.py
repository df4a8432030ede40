"""Experiment runner CLI: single runs, ablation grids, cost tables.

Subcommands: ``run`` (train + evaluate one design point), ``grid`` (the
24-way input grid, the 4-row architecture stage, or the square-window
sweep), ``cost`` (analytic parameter/FLOP tables), ``synth`` (write a
synthetic dataset as a manifest directory), ``rhythm`` (per-pixel channel
trace CSV).

Every design field is exposed both as a flat dotted key in a JSON config
file and as the identically named CLI flag; flags override the file. Run
directories are content-addressed by (design, dataset digest), so grids are
resumable and re-running a cell only touches its own artifacts.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .complexity import (REFERENCE_NOTE, cost_report, rows_to_csv,
                         scaling_report, sweep_annotations)
from .dataset import (SyntheticSpec, export_visual_rhythm, generate_synthetic,
                      labeled_pixels, load_manifest, preset_spec, save_manifest,
                      split_validation, visual_rhythm_csv, PixelIndex)
from .design import FLAT_KEYS, DesignPoint, canonical_json, design_hash
from .errors import ConfigError, DataError, PhenovitError
from .metrics import (accuracy, balanced_accuracy, confusion, confusion_to_csv,
                      confusion_to_json, per_class_recall)
from .model import save_checkpoint
from .tokenizer import sequence_geometry
from .train import encode_pixels, predict_batch, train

DEFAULT_ARTIFACTS_ENV = "PHENOVIT_ARTIFACTS"

WINDOW_SWEEP = [3, 7, 13, 19, 25]

# (boundary, use_pos_enc, aggregation) rows of the architecture stage.
ARCH_STAGE_ROWS = [
    ("black_padding", True, "cls"),
    ("real_value", True, "cls"),
    ("black_padding", False, "cls"),
    ("black_padding", True, "gap"),
]


def input24_settings() -> list[tuple[str, str, str, str]]:
    """(normalization, arrangement, window, tokenization) for settings 1-24.

    Cross/square windows come first, the single-pixel block last, matching
    the canonical enumeration of the input-representation grid.
    """
    rows = []
    for norm in ("raw", "chromaticity"):
        for arr in ("rgbrgb", "rrggbb"):
            for window in ("cross", "square"):
                for token in ("temporal", "spatial"):
                    rows.append((norm, arr, window, token))
    for norm in ("raw", "chromaticity"):
        for arr in ("rgbrgb", "rrggbb"):
            for token in ("temporal", "spatial"):
                rows.append((norm, arr, "single", token))
    return rows


# ---------------------------------------------------------------------------
# dataset resolution


def resolve_dataset(design: DesignPoint):
    """Load or generate the dataset a design references; returns
    (series, mask, digest)."""
    if design.manifest:
        series, mask = load_manifest(design.manifest)
        digest = _manifest_digest(Path(design.manifest))
        return series, mask, digest
    value = design.synthetic
    if value.endswith(".json"):
        spec = SyntheticSpec.from_json(json.loads(Path(value).read_text(encoding="utf-8")))
    else:
        spec = preset_spec(value)
    series, mask = generate_synthetic(spec)
    digest = hashlib.sha256(
        json.dumps(spec.to_json(), sort_keys=True).encode()).hexdigest()
    return series, mask, digest


def _manifest_digest(path: Path) -> str:
    payload = json.loads(path.read_text(encoding="utf-8"))
    digest = hashlib.sha256(path.read_bytes())
    for entry in payload.get("frames", []):
        digest.update((path.parent / entry["file"]).read_bytes())
    mask_file = payload.get("mask", {}).get("file")
    if mask_file:
        digest.update((path.parent / mask_file).read_bytes())
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# single run


def run_design(design: DesignPoint, artifacts_root: Path) -> dict:
    """Train and evaluate one design point; writes a content-addressed
    artifacts directory and returns the summary row."""
    design.validate()
    series, mask, digest = resolve_dataset(design)
    train_px, test_px = labeled_pixels(mask)
    if not train_px:
        raise DataError("dataset has no training pixels")
    if not test_px:
        raise DataError("dataset has no test pixels")
    fit_px, val_px = split_validation(train_px, design.val_fraction, seed=design.seed)

    run_dir = artifacts_root / f"run-{design_hash(design, digest)}"
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(canonical_json(design), encoding="utf-8")

    sampler_cfg = design.to_sampler_config()
    x_test, y_test = encode_pixels(series, mask, test_px, sampler_cfg,
                                   design.tokenization)

    candidates = []
    for rep in range(design.repeats):
        seed = design.seed + rep
        params, report = train(series, mask, fit_px, val_px, design,
                               design.to_train_config(seed=seed))
        preds = predict_batch(params, x_test)
        cm = confusion(y_test, preds, mask.class_names)
        candidates.append({
            "seed": seed, "params": params, "report": report, "cm": cm,
            "accuracy": accuracy(cm), "balanced_accuracy": balanced_accuracy(cm),
        })
    best = max(candidates, key=lambda c: (c["balanced_accuracy"], -c["seed"]))

    n, d_in = sequence_geometry(design.tokenization, series.num_frames,
                                design.to_window_spec())
    model_cfg = design.to_model_config(num_classes=mask.num_classes,
                                       num_tokens=n, token_dim=d_in)
    cost = cost_report(model_cfg)

    metrics_payload = {
        "accuracy": best["accuracy"],
        "balanced_accuracy": best["balanced_accuracy"],
        "per_class_recall": per_class_recall(best["cm"]),
        "best_val_accuracy": best["report"].best_val_accuracy,
        "best_epoch": best["report"].best_epoch,
        "seed": best["seed"],
        "config_hash": design_hash(design, digest),
        "repeats": [{"seed": c["seed"], "accuracy": c["accuracy"],
                     "balanced_accuracy": c["balanced_accuracy"]}
                    for c in candidates],
    }
    (run_dir / "metrics.json").write_text(
        json.dumps(metrics_payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    (run_dir / "report.json").write_text(
        json.dumps(best["report"].to_json(), sort_keys=True, indent=2) + "\n",
        encoding="utf-8")
    (run_dir / "confusion.csv").write_text(confusion_to_csv(best["cm"]),
                                           encoding="utf-8")
    (run_dir / "confusion_percent.csv").write_text(
        confusion_to_csv(best["cm"], percent=True), encoding="utf-8")
    (run_dir / "confusion.json").write_text(
        json.dumps(confusion_to_json(best["cm"]), sort_keys=True, indent=2) + "\n",
        encoding="utf-8")
    (run_dir / "cost.json").write_text(
        json.dumps(cost.to_json(), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    save_checkpoint(best["params"], run_dir / "checkpoint.json",
                    lineage={"init_seed": best["seed"],
                             "best_epoch": best["report"].best_epoch,
                             "dataset_digest": digest})

    return {
        "run_dir": str(run_dir),
        "best_val_acc": best["report"].best_val_accuracy,
        "test_accuracy": best["accuracy"],
        "test_bacc": best["balanced_accuracy"],
        "params": cost.params,
        "flops": cost.flops,
    }


# ---------------------------------------------------------------------------
# grids


def _grid_cells(stage: str, base: DesignPoint,
                input24_summary: Path | None) -> list[tuple[str, DesignPoint]]:
    if stage == "input24":
        cells = []
        for i, (norm, arr, window, token) in enumerate(input24_settings(), start=1):
            cells.append((str(i), base.with_overrides(
                normalization=norm, arrangement=arr, window=window,
                k=3 if window == "square" else 1, tokenization=token,
                boundary="black_padding", use_pos_enc=True, aggregation="cls")))
        return cells
    if stage == "arch":
        winner = _input24_winner(input24_summary)
        cells = []
        for boundary, pos, agg in ARCH_STAGE_ROWS:
            label = f"{boundary}/{'pos' if pos else 'nopos'}/{agg}"
            cells.append((label, base.with_overrides(
                normalization=winner["normalization"],
                arrangement=winner["arrangement"], window=winner["window"],
                k=int(winner["k"]), tokenization=winner["tokenization"],
                boundary=boundary, use_pos_enc=pos, aggregation=agg)))
        return cells
    if stage == "windows":
        return [(str(k), base.with_overrides(window="square", k=k))
                for k in WINDOW_SWEEP]
    raise ConfigError(f"grid stage must be input24|arch|windows, got '{stage}'")


def _input24_winner(summary_path: Path | None) -> dict:
    """Best input-grid row (highest validation accuracy, lowest setting id)."""
    if summary_path is None or not summary_path.exists():
        raise ConfigError(
            "the arch stage derives its input configuration from the input24 "
            "summary; run `grid --stage input24` first or pass --input24-summary")
    rows = _read_csv(summary_path)
    scored = [r for r in rows if r.get("status") == "ok"]
    if not scored:
        raise DataError(f"no successful cells in {summary_path}")
    return max(scored, key=lambda r: (float(r["best_val_acc"]), -int(r["setting"])))


def _read_csv(path: Path) -> list[dict]:
    import csv
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _run_cell(args):
    """One grid cell; failures become data instead of crashing the stage."""
    label, design, root = args
    try:
        return label, run_design(design, root)
    except PhenovitError as exc:
        return label, {"error": str(exc)}


def run_grid(stage: str, base: DesignPoint, artifacts_root: Path,
             jobs: int = 1, input24_summary: Path | None = None) -> tuple[Path, int]:
    """Run one grid stage; returns (summary path, number of failed cells)."""
    cells = _grid_cells(stage, base, input24_summary)
    tasks = [(label, design, artifacts_root) for label, design in cells]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = dict(pool.map(_run_cell, tasks))
    else:
        results = dict(map(_run_cell, tasks))
    failures = sum(1 for summary in results.values() if "error" in summary)

    header = ["setting", "normalization", "arrangement", "window", "k",
              "tokenization", "boundary", "use_pos_enc", "aggregation",
              "best_val_acc", "test_accuracy", "test_bacc", "params", "flops",
              "run_dir", "status"]
    lines = [",".join(header)]
    for label, design in cells:
        summary = results[label]
        ok = "error" not in summary
        row = [label, design.normalization, design.arrangement, design.window,
               str(design.k if design.window == "square" else 1),
               design.tokenization, design.boundary, str(design.use_pos_enc),
               design.aggregation]
        if ok:
            row += [f"{summary['best_val_acc']:.6f}" if summary["best_val_acc"] is not None else "",
                    f"{summary['test_accuracy']:.6f}", f"{summary['test_bacc']:.6f}",
                    str(summary["params"]), str(summary["flops"]),
                    summary["run_dir"], "ok"]
        else:
            reason = summary["error"].replace(",", ";").replace("\n", " ")
            row += ["", "", "", "", "", "", f"failed: {reason}"]
        lines.append(",".join(row))
    summary_path = artifacts_root / f"grid_{stage}_summary.csv"
    artifacts_root.mkdir(parents=True, exist_ok=True)
    summary_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return summary_path, failures


# ---------------------------------------------------------------------------
# argument plumbing


def _flag_dest(key: str) -> str:
    return key.replace(".", "__")


def _add_design_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=str, default=None,
                        help="JSON file of flat dotted design keys")
    for key in FLAT_KEYS:
        parser.add_argument(f"--{key}", dest=_flag_dest(key), default=None,
                            metavar="V")


def _add_artifacts_flag(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--artifacts", type=str,
                        default=os.environ.get(DEFAULT_ARTIFACTS_ENV, "artifacts"),
                        help="artifacts root directory (env "
                             f"{DEFAULT_ARTIFACTS_ENV} overrides the default)")


def resolve_design(args: argparse.Namespace) -> DesignPoint:
    mapping: dict = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        payload = json.loads(path.read_text(encoding="utf-8"))
        if not isinstance(payload, dict):
            raise ConfigError("config file must hold a JSON object of flat keys")
        mapping.update(payload)
    for key in FLAT_KEYS:
        value = getattr(args, _flag_dest(key), None)
        if value is not None:
            mapping[key] = value
    return DesignPoint.from_flat(mapping)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="phenovit",
        description="Spatio-temporal vegetation pixel classification experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="train and evaluate one design point")
    _add_design_flags(p_run)
    _add_artifacts_flag(p_run)

    p_grid = sub.add_parser("grid", help="run an ablation stage")
    p_grid.add_argument("--stage", required=True,
                        choices=("input24", "arch", "windows"))
    p_grid.add_argument("--jobs", type=int, default=1)
    p_grid.add_argument("--input24-summary", type=str, default=None,
                        help="summary CSV the arch stage derives its winner from")
    _add_design_flags(p_grid)
    _add_artifacts_flag(p_grid)

    p_cost = sub.add_parser("cost", help="analytic parameter/FLOP accounting")
    p_cost.add_argument("--M", type=int, default=13, help="series length")
    p_cost.add_argument("--k", type=int, default=3, help="square window side")
    p_cost.add_argument("--sweep-k", type=str, default=None,
                        help="comma-separated window sides")
    p_cost.add_argument("--sweep-M", type=str, default=None,
                        help="comma-separated series lengths")
    p_cost.add_argument("--tokenization", default="temporal",
                        choices=("temporal", "spatial"))
    p_cost.add_argument("--classes", type=int, default=4)
    p_cost.add_argument("--dim", type=int, default=256)
    p_cost.add_argument("--layers", type=int, default=6)
    p_cost.add_argument("--heads", type=int, default=8)
    p_cost.add_argument("--mlp-width", type=int, default=512)
    p_cost.add_argument("--aggregation", default="cls", choices=("cls", "gap"))
    p_cost.add_argument("--use-pos-enc", default="true")
    p_cost.add_argument("--out-csv", type=str, default=None)
    p_cost.add_argument("--out-json", type=str, default=None)

    p_synth = sub.add_parser("synth", help="write a synthetic dataset manifest")
    p_synth.add_argument("--preset", type=str, default=None,
                         choices=("four-class", "intensity-pair"))
    p_synth.add_argument("--spec", type=str, default=None,
                         help="JSON file describing a synthetic spec")
    p_synth.add_argument("--out", type=str, required=True)

    p_rhythm = sub.add_parser("rhythm", help="export one pixel's channel trace")
    p_rhythm.add_argument("--manifest", type=str, required=True)
    p_rhythm.add_argument("--x", type=int, required=True)
    p_rhythm.add_argument("--y", type=int, required=True)
    p_rhythm.add_argument("--normalized", action="store_true")
    p_rhythm.add_argument("--out", type=str, default=None,
                          help="CSV path (stdout when omitted)")
    return parser


# ---------------------------------------------------------------------------
# subcommand bodies


def _cmd_run(args) -> int:
    design = resolve_design(args)
    summary = run_design(design, Path(args.artifacts))
    print(f"run dir: {summary['run_dir']}")
    if summary["best_val_acc"] is not None:
        print(f"best validation accuracy: {summary['best_val_acc']:.4f}")
    print(f"test accuracy: {summary['test_accuracy']:.4f}")
    print(f"test balanced accuracy: {summary['test_bacc']:.4f}")
    print(f"params: {summary['params']}  flops/sample: {summary['flops']}")
    return 0


def _cmd_grid(args) -> int:
    base = resolve_design(args)
    summary_source = Path(args.input24_summary) if args.input24_summary else \
        Path(args.artifacts) / "grid_input24_summary.csv"
    path, failures = run_grid(args.stage, base, Path(args.artifacts),
                              jobs=args.jobs,
                              input24_summary=summary_source)
    print(f"summary: {path}")
    if failures:
        print(f"{failures} cell(s) failed", file=sys.stderr)
        return 1
    return 0


def _cmd_cost(args) -> int:
    use_pos = str(args.use_pos_enc).lower() in ("true", "1", "yes", "on")
    model_kwargs = dict(dim=args.dim, layers=args.layers, heads=args.heads,
                        mlp_width=args.mlp_width, aggregation=args.aggregation,
                        use_pos_enc=use_pos)
    if args.sweep_k:
        rows = scaling_report(args.tokenization, args.M, args.classes,
                              sweep_k=[int(v) for v in args.sweep_k.split(",")],
                              **model_kwargs)
    elif args.sweep_M:
        rows = scaling_report(args.tokenization, args.M, args.classes,
                              sweep_m=[int(v) for v in args.sweep_M.split(",")],
                              k=args.k, **model_kwargs)
    else:
        rows = scaling_report(args.tokenization, args.M, args.classes,
                              sweep_k=[args.k], **model_kwargs)
    csv_text = rows_to_csv(rows)
    if args.out_csv:
        Path(args.out_csv).write_text(csv_text, encoding="utf-8")
    if args.out_json:
        payload = {"rows": rows, "monotone": sweep_annotations(rows),
                   "note": REFERENCE_NOTE}
        Path(args.out_json).write_text(json.dumps(payload, indent=2) + "\n",
                                       encoding="utf-8")
    print(csv_text, end="")
    if any(row["reference_params_m"] != "" for row in rows):
        print(f"note: {REFERENCE_NOTE}")
    return 0


def _cmd_synth(args) -> int:
    if bool(args.preset) == bool(args.spec):
        raise ConfigError("provide exactly one of --preset or --spec")
    if args.preset:
        spec = preset_spec(args.preset)
    else:
        spec = SyntheticSpec.from_json(
            json.loads(Path(args.spec).read_text(encoding="utf-8")))
    series, mask = generate_synthetic(spec)
    path = save_manifest(series, mask, args.out,
                         name=args.preset or Path(args.spec).stem)
    counts = {name: int((mask.labels == i).sum())
              for i, name in enumerate(mask.class_names)}
    print(f"manifest: {path}")
    print(f"frames: {series.num_frames}  size: {series.width}x{series.height}")
    print(f"labeled pixels per class: {json.dumps(counts)}")
    return 0


def _cmd_rhythm(args) -> int:
    series, mask = load_manifest(args.manifest)
    label = int(mask.labels[args.y, args.x])
    pixel = PixelIndex(args.x, args.y, label, "train")
    rows = export_visual_rhythm(series, mask, pixel, normalized=args.normalized)
    text = visual_rhythm_csv(rows)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        print(text, end="")
    return 0


_COMMANDS = {"run": _cmd_run, "grid": _cmd_grid, "cost": _cmd_cost,
             "synth": _cmd_synth, "rhythm": _cmd_rhythm}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except PhenovitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
