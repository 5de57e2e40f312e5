"""Command-line entry point: ``lenspatch <command> --config FILE [--seed N] [--out DIR]``.

Exit status is 0 on success, 1 for user errors (bad config, missing files,
malformed inputs) and 2 for internal failures.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import pipeline
from .config import ConfigError, RunConfig, format_config, load_config
from .data import ManifestError, SplitError, write_scenes
from .detector import DetectorError, save_detector
from .evaluation import CONDITIONS, plot_pr_curves, run_sweep, save_report, save_sweep
from .losses import LossError
from .optimizer import default_weight_grid, grid_search_weights, save_grid_summary
from .patch_model import PatchParamError, load_patch, save_patch
from .renderer import RenderError, patch_to_rgba, render_patch, save_patch_png

logger = logging.getLogger("lenspatch")

USER_ERRORS = (ConfigError, FileNotFoundError, ManifestError, SplitError, PatchParamError, RenderError,
               LossError, IsADirectoryError, NotADirectoryError, PermissionError)

PATCH_FILE = "patch.json"
HISTORY_FILE = "history.csv"


class UsageError(ValueError):
    pass


def _patch_path(args, cfg: RunConfig) -> Path:
    return Path(args.patch) if args.patch else cfg.out_dir / PATCH_FILE


def cmd_generate(args, cfg: RunConfig) -> int:
    scenes = pipeline.attack_scenes(cfg)
    path = write_scenes(scenes, cfg.out_dir / "data")
    print(f"wrote {len(scenes)} scenes -> {path}")
    return 0


def cmd_train_detector(args, cfg: RunConfig) -> int:
    det = pipeline.train_detector(cfg)
    path = save_detector(det, cfg.path(cfg.detector.checkpoint))
    _, holdout = pipeline.detector_data(cfg)
    report = pipeline.evaluate_conditions(cfg, holdout, det, None, ["CLEAN"])["CLEAN"]
    aps = ", ".join(f"{k}={v:.3f}" for k, v in report.per_class_ap.items())
    print(f"detector -> {path}; holdout clean AP: {aps}")
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    data = pipeline.attack_data(cfg)
    det = pipeline.detector_for(cfg)
    params, history = pipeline.run_attack(cfg, data, det)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    save_patch(params, out / PATCH_FILE)
    history.save_csv(out / HISTORY_FILE)
    (out / "config.cfg").write_text(format_config(cfg), encoding="utf-8")
    if history.records:
        best = history.records[history.best_epoch]
        print(f"best epoch {history.best_epoch}: val target AP {best.val_target_ap:.3f} "
              f"(clean {history.clean_val_target_ap:.3f}), untargeted AP {best.val_untargeted_ap:.3f} "
              f"(clean {history.clean_val_untargeted_ap:.3f})")
        last = history.records[-1]
        print("final train losses: " + ", ".join(f"{k}={v:.4f}" for k, v in last.train.items()))
    print(f"patch -> {out / PATCH_FILE}; history -> {out / HISTORY_FILE}")
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    conditions = [c.strip().upper() for c in args.conditions.split(",")] if args.conditions \
        else [c.upper() for c in cfg.eval.conditions]
    unknown = [c for c in conditions if c not in CONDITIONS]
    if unknown:
        raise UsageError(f"unknown condition(s) {unknown}; expected a subset of {list(CONDITIONS)}")
    patch = load_patch(_patch_path(args, cfg)) if "PATCH" in conditions else None
    data = pipeline.attack_data(cfg)
    det = pipeline.detector_for(cfg)
    pipeline.check_compatible(det, data.test)
    reports = pipeline.evaluate_conditions(cfg, data.test, det, patch, conditions)
    out = cfg.out_dir / "eval"
    for rep in reports.values():
        save_report(rep, out)
        print(f"{rep.condition:7s} target AP {rep.target_ap:.3f}  untargeted AP {rep.untargeted_ap:.3f}  "
              f"target fooling rate {_fmt(rep.fooling_rate['target'])}")
    for group in ("target", "untargeted"):
        plot_pr_curves(list(reports.values()), group, out / f"pr_{group}.png")
    print(f"reports -> {out}")
    return 0


def _fmt(x: float) -> str:
    return "n/a" if math.isnan(x) else f"{x:.3f}"


def cmd_sweep(args, cfg: RunConfig) -> int:
    axis = args.axis or cfg.sweep.axis
    values = [float(v) for v in args.values.split(",")] if args.values else list(cfg.sweep.values)
    if axis == "n_shapes":
        values = [int(v) for v in values]
    data = pipeline.attack_data(cfg)
    det = pipeline.detector_for(cfg)
    pipeline.check_compatible(det, data.train)
    rows = run_sweep(axis, values, data.train, data.val, data.test, det, cfg.optimizer, cfg.patch,
                     pipeline.target_index(cfg, data.class_names), printable=pipeline.printable_colors(cfg))
    path = save_sweep(rows, axis, cfg.out_dir / f"sweep_{axis}.csv")
    for r in rows:
        print(f"{axis}={r.value:g}: target AP {r.target_ap:.3f}  untargeted AP {r.untargeted_ap:.3f}")
    print(f"sweep -> {path}")
    return 0


def cmd_grid_search(args, cfg: RunConfig) -> int:
    grid = list(cfg.grid.weights) if cfg.grid.weights else default_weight_grid()
    data = pipeline.attack_data(cfg)
    det = pipeline.detector_for(cfg)
    pipeline.check_compatible(det, data.train)
    weights, rows = grid_search_weights(grid, data.train, data.val, det, cfg.optimizer, cfg.patch,
                                        pipeline.target_index(cfg, data.class_names),
                                        pipeline.printable_colors(cfg), cfg.grid.budget_fraction)
    path = save_grid_summary(rows, cfg.out_dir / "grid_search.csv")
    print(f"selected weights {tuple(round(w, 6) for w in weights.as_tuple())}; summary -> {path}")
    return 0


def cmd_render(args, cfg: RunConfig) -> int:
    params = load_patch(_patch_path(args, cfg))
    dims = (cfg.detector.model.input_width, cfg.detector.model.input_height)
    path = save_patch_png(render_patch(params, dims), Path(args.png) if args.png else cfg.out_dir / "patch.png")
    print(f"patch raster {dims[0]}x{dims[1]} -> {path}")
    return 0


def export_dims(dpi: float, width_in: float, height_in: float) -> tuple[int, int]:
    if not (dpi > 0 and width_in > 0 and height_in > 0):
        raise UsageError("dpi and physical size must be positive")
    return max(1, int(round(dpi * width_in))), max(1, int(round(dpi * height_in)))


def cmd_export(args, cfg: RunConfig) -> int:
    params = load_patch(_patch_path(args, cfg))
    dpi = args.dpi if args.dpi is not None else cfg.export.dpi
    width_in = args.width_in if args.width_in is not None else cfg.export.width_in
    height_in = args.height_in if args.height_in is not None else cfg.export.height_in
    dims = export_dims(dpi, width_in, height_in)
    # shapes are re-evaluated on the print grid rather than upscaled
    rgba = patch_to_rgba(render_patch(params, dims))
    out = cfg.out_dir / "export"
    out.mkdir(parents=True, exist_ok=True)
    png = out / "patch_print.png"
    Image.fromarray(rgba, mode="RGBA").save(png, dpi=(dpi, dpi))
    desc = save_patch(params, out / "patch_print.json")
    max_alpha = float(np.max(rgba[..., 3])) / 255.0 if rgba.size else 0.0
    print(f"{dims[0]}x{dims[1]} px at {dpi:g} dpi ({width_in:g}x{height_in:g} in), max alpha {max_alpha:.3f}")
    print(f"raster -> {png}; descriptor -> {desc}")
    return 0


COMMANDS = {
    "generate": (cmd_generate, "write the configured dataset as PNG images plus a manifest"),
    "train-detector": (cmd_train_detector, "train and save the toy grid detector"),
    "train": (cmd_train, "optimize a patch; writes patch.json and history.csv"),
    "eval": (cmd_eval, "evaluate conditions on the held-out split; reports and PR plots"),
    "sweep": (cmd_sweep, "optimize and evaluate along n_shapes or alpha_max"),
    "grid-search": (cmd_grid_search, "short runs over loss-weight tuples"),
    "render": (cmd_render, "render a patch file at detector resolution to PNG"),
    "export": (cmd_export, "print-ready RGBA raster at a physical size and dpi"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lenspatch", description="Translucent lens patch attacks on a toy detector.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="flat section.key = value config file")
        p.add_argument("--seed", type=int, default=None, help="override run.seed")
        p.add_argument("--out", default=None, help="override run.out")
        if name in ("eval", "render", "export"):
            p.add_argument("--patch", default=None, help="patch file (default: <out>/patch.json)")
        if name == "eval":
            p.add_argument("--conditions", default=None, help="comma list from " + ",".join(CONDITIONS))
        if name == "sweep":
            p.add_argument("--axis", choices=("n_shapes", "alpha_max"), default=None)
            p.add_argument("--values", default=None, help="comma separated values")
        if name == "render":
            p.add_argument("--png", default=None)
        if name == "export":
            p.add_argument("--dpi", type=float, default=None)
            p.add_argument("--width-in", type=float, default=None)
            p.add_argument("--height-in", type=float, default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.out is not None:
            cfg = cfg.with_out(args.out)
        logging.basicConfig(level=getattr(logging, cfg.run.log_level.upper(), logging.INFO),
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command][0](args, cfg)
    except (UsageError, *USER_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DetectorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - single-line cause, internal failure
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
