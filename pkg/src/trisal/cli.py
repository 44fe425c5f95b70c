"""Command-line entry point: fixture generation, training, inference,
evaluation, and dataset analysis.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 training
divergence.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np
import yaml
from PIL import Image

from . import data as data_mod
from . import metrics as metrics_mod
from . import model as model_mod
from .config import (
    RunConfig,
    build_fixture_config,
    build_model_config,
    build_train_config,
    load_run_config,
    resolve_seed,
)
from .errors import (
    AlignmentError,
    AttributeFileError,
    ConfigError,
    EmptyDataset,
    InputError,
    ManifestError,
    MissingModality,
    PairingError,
    SplitError,
    TrainingDiverged,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4

DATA_ROOT_ENV = "TRISAL_DATA_ROOT"

_DATA_ERRORS = (MissingModality, AlignmentError, SplitError, ManifestError,
                EmptyDataset, PairingError, AttributeFileError, InputError)


def _write_snapshot(run: RunConfig, extra: dict | None = None) -> None:
    """Every command records the resolved configuration it actually ran with."""
    run.output_dir.mkdir(parents=True, exist_ok=True)
    snapshot = {
        "command": run.command,
        "seed": run.seed,
        "config_path": str(run.config_path) if run.config_path else None,
        "overrides": list(run.overrides),
        "config": run.values,
    }
    if extra:
        snapshot.update(extra)
    with open(run.output_dir / "resolved_config.yaml", "w") as f:
        yaml.safe_dump(snapshot, f, sort_keys=False)


def _data_root(values: dict, args) -> Path:
    root = os.environ.get(DATA_ROOT_ENV)
    if root is None:
        root = getattr(args, "data_root", None)
    if root is None:
        root = (values.get("data") or {}).get("root")
    if root is None:
        raise ConfigError("no data root given (config data.root, --data-root, "
                          f"or ${DATA_ROOT_ENV})")
    return Path(root)


def _manifest_path(values: dict, root: Path) -> Path:
    manifest = (values.get("data") or {}).get("manifest")
    return Path(manifest) if manifest else root / "manifest.yaml"


def _make_run(args, command: str) -> RunConfig:
    values = load_run_config(args.config, tuple(args.set or ()))
    seed = resolve_seed(values, args.seed)
    return RunConfig(
        command=command,
        values=values,
        config_path=Path(args.config) if args.config else None,
        output_dir=Path(args.output_dir),
        seed=seed,
        overrides=tuple(args.set or ()),
    )


# --- commands ----------------------------------------------------------------


def cmd_make_fixtures(args) -> int:
    run = _make_run(args, "make-fixtures")
    fixture_cfg = build_fixture_config(run.values)
    root = run.output_dir
    data_mod.make_fixtures(root, fixture_cfg, run.seed)
    _write_snapshot(run, {"fixture_root": str(root)})
    print(f"wrote {fixture_cfg.clips} clips x {fixture_cfg.frames_per_clip} frames "
          f"at {fixture_cfg.height}x{fixture_cfg.width} under {root}")
    return EXIT_OK


def _print_shape_table(model_config) -> None:
    print("level  channels  height  width")
    for level, (c, h, w) in enumerate(model_config.encoder.level_shapes(), start=1):
        print(f"{level:<5d}  {c:<8d}  {h:<6d}  {w:<5d}")


def cmd_train(args) -> int:
    run = _make_run(args, "train")
    model_config = build_model_config(run.values, run.seed)
    train_config = build_train_config(run.values, run.seed)
    if args.dry_run:
        _write_snapshot(run, {"dry_run": True})
        _print_shape_table(model_config)
        return EXIT_OK

    root = _data_root(run.values, args)
    manifest = data_mod.load_split_manifest(_manifest_path(run.values, root))
    records = data_mod.load_dataset(root, manifest.train_sequences)
    model, logs = model_mod.train(records, model_config, train_config)
    _write_snapshot(run, {"data_root": str(root), "steps": train_config.steps})
    model_mod.save_checkpoint(run.output_dir / "checkpoint.pt", model,
                              step=train_config.steps)
    model_mod.write_train_log(logs, run.output_dir / "train_log.jsonl")
    print(f"trained {train_config.steps} steps; final loss {logs[-1]['total']:.4f}; "
          f"checkpoint at {run.output_dir / 'checkpoint.pt'}")
    return EXIT_OK


def cmd_infer(args) -> int:
    run = _make_run(args, "infer")
    model, _ = model_mod.load_checkpoint(args.checkpoint)
    root = _data_root(run.values, args)
    manifest = data_mod.load_split_manifest(_manifest_path(run.values, root))
    sequences = (manifest.test_sequences if args.split == "test"
                 else manifest.train_sequences)
    if not sequences:
        raise ConfigError(f"manifest has no sequences in the '{args.split}' split")
    maps_dir = run.output_dir / "maps"
    for seq in sequences:
        records = data_mod.load_sequence(root, seq)
        out_dir = maps_dir / seq
        out_dir.mkdir(parents=True, exist_ok=True)
        for record, saliency in zip(records, model_mod.infer(records, model)):
            arr = (np.clip(saliency, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
            Image.fromarray(arr).save(out_dir / f"{record.frame_index:06d}.png")
    _write_snapshot(run, {"checkpoint": str(args.checkpoint),
                          "split": args.split, "maps_dir": str(maps_dir)})
    print(f"wrote saliency maps for {len(sequences)} sequences under {maps_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    run = _make_run(args, "eval")
    report = metrics_mod.evaluate(args.pred, args.gt,
                                  per_frame_max=args.per_frame_max)
    csv_path, summary_path = metrics_mod.write_report(report, run.output_dir)
    _write_snapshot(run, {"pred": str(args.pred), "gt": str(args.gt)})
    print(f"F_max {report.f_max:.4f}  S {report.s_measure:.4f}  MAE {report.mae:.4f} "
          f"({report.frames_total} frames); report at {csv_path} and {summary_path}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    run = _make_run(args, "analyze")
    root = _data_root(run.values, args)
    sequence_ids = sorted(p.name for p in root.iterdir() if p.is_dir())
    if not sequence_ids:
        raise EmptyDataset(f"no sequences under {root}")
    records = data_mod.load_dataset(root, sequence_ids)
    stats = data_mod.dataset_statistics(records, bins=args.bins)
    out_dir = run.output_dir
    written = data_mod.write_statistics_csv(stats, out_dir)

    attributes = None
    if args.attributes:
        attributes = data_mod.read_attributes(args.attributes)

    _plot_statistics(stats, attributes, out_dir)
    _write_snapshot(run, {"data_root": str(root),
                          "attributes": str(args.attributes) if args.attributes else None})
    print(f"analyzed {stats.frames_total} frames "
          f"({stats.frames_with_object} with objects); CSVs: "
          + ", ".join(str(p) for p in written))
    return EXIT_OK


def _plot_statistics(stats, attributes, out_dir: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4, 4))
    im = ax.imshow(stats.center_bias, cmap="hot")
    ax.set_title("center bias")
    ax.axis("off")
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.savefig(out_dir / "center_bias.png", dpi=120, bbox_inches="tight")
    plt.close(fig)

    fig, axes = plt.subplots(1, 2, figsize=(8, 3))
    for ax, counts, edges, title in (
        (axes[0], stats.distance_counts, stats.distance_edges,
         "normalized center distance"),
        (axes[1], stats.size_counts, stats.size_edges, "object size ratio"),
    ):
        ax.bar(edges[:-1], counts, width=np.diff(edges), align="edge",
               edgecolor="black")
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_dir / "distributions.png", dpi=120)
    plt.close(fig)

    if attributes:
        counts: dict[str, int] = {}
        for rec in attributes:
            for code in sorted(rec.attributes):
                counts[code] = counts.get(code, 0) + 1
        fig, ax = plt.subplots(figsize=(6, 3))
        ax.bar(list(counts), list(counts.values()))
        ax.set_title("sequence attributes")
        fig.tight_layout()
        fig.savefig(out_dir / "attributes.png", dpi=120)
        plt.close(fig)
        with open(out_dir / "attributes.csv", "w") as f:
            f.write("attribute,count\n")
            for code, n in sorted(counts.items()):
                f.write(f"{code},{n}\n")


# --- argument parsing -----------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="YAML config file")
    parser.add_argument("--seed", type=int, default=None,
                        help="overrides the config seed")
    parser.add_argument("--output-dir", default="runs/latest",
                        help="directory for outputs and the config snapshot")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="config override, repeatable (e.g. train.steps=50)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trisal",
        description="Three-stream RGB/depth/flow video salient-object detection.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-fixtures", help="generate a synthetic dataset")
    _add_common(p)
    p.set_defaults(func=cmd_make_fixtures)

    p = sub.add_parser("train", help="train a model on a split manifest")
    _add_common(p)
    p.add_argument("--data-root", default=None)
    p.add_argument("--dry-run", action="store_true",
                   help="print the encoder level-shape table and exit")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="write saliency maps for a split")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-root", default=None)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    _add_common(p)
    p.add_argument("--pred", required=True, help="directory of prediction maps")
    p.add_argument("--gt", required=True, help="ground-truth directory or dataset root")
    p.add_argument("--per-frame-max", action="store_true",
                   help="average per-frame F maxima instead of maximizing the mean curve")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="dataset statistics, plots, and CSVs")
    _add_common(p)
    p.add_argument("--data-root", default=None)
    p.add_argument("--attributes", default=None, help="sequence attribute CSV")
    p.add_argument("--bins", type=int, default=10)
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
