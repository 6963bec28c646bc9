"""Command-line interface.

One process per command, batch-friendly:

* ``synth``: write a synthetic dataset (features, manifest, descriptor).
* ``train``: split a dataset, train, write final/best checkpoints and
  per-epoch telemetry.
* ``eval``: score a checkpoint against a dataset split, print and
  optionally write the report.
* ``predict``: score a bare feature file with a checkpoint.
* ``export-plots``: turn telemetry/eval outputs into plot-ready tables.
* ``inspect``: print the header of a feature file, checkpoint, or
  descriptor as key=value lines.

Every command that writes primary outputs also writes a ``run_manifest.json``
next to them with the resolved configuration and timestamps. Timestamps
live only there, so the primary outputs of a rerun are byte-identical.

Exit codes: 0 success, 2 usage error, 3 data/format error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (
    SCORE_RULES,
    FeatureDataset,
    inspect_feature_file,
    load_dataset,
    read_descriptor,
    read_feature_file,
    split_train_test,
    synthesize_dataset,
    write_dataset_files,
)
from .errors import (
    ConfigError,
    DataFormatError,
    EngineError,
    NumericalError,
    ShapeError,
)
from .fileio import atomic_write_text
from .metrics import ClassificationReport
from .model import ModelConfig
from .trainer import (
    Checkpoint,
    EvalResult,
    TrainConfig,
    evaluate,
    load_checkpoint,
    records_to_csv,
    restore_model,
    save_checkpoint,
    train,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _write_run_manifest(
    out_dir: Path,
    command: str,
    config: dict,
    inputs: dict[str, str],
    outputs: list[str],
    seed: int | None,
    started_at: str,
) -> None:
    payload = {
        "command": command,
        "engine_version": __version__,
        "config": config,
        "inputs": inputs,
        "outputs": outputs,
        "seed": seed,
        "started_at": started_at,
        "ended_at": _utc_now(),
    }
    atomic_write_text(
        out_dir / "run_manifest.json",
        json.dumps(payload, indent=2, sort_keys=True) + "\n",
    )


def _require_out(args: argparse.Namespace, parser: argparse.ArgumentParser) -> Path:
    if args.out is None:
        parser.error(f"{args.command} requires --out")
    return Path(args.out)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args: argparse.Namespace) -> int:
    if args.n < 8:
        raise ConfigError(f"--n must be >= 8, got {args.n}")
    started = _utc_now()
    out_dir = Path(args.out)
    name = f"synth-{args.rule}-{args.n}x{args.dim}-seed{args.seed}"
    ds = synthesize_dataset(args.n, args.dim, args.seed, args.rule, name=name)
    descriptor = write_dataset_files(out_dir, ds)
    _write_run_manifest(
        out_dir,
        "synth",
        {"n": args.n, "dim": args.dim, "rule": args.rule, "name": name},
        inputs={},
        outputs=["features.lpff", "manifest.csv", "dataset.lpfd"],
        seed=args.seed,
        started_at=started,
    )
    print(f"wrote {descriptor}")
    return EXIT_OK


def _configs_from_args(args: argparse.Namespace) -> tuple[ModelConfig, TrainConfig]:
    model_config = ModelConfig(
        input_dim=args.input_dim,
        embed_dim=args.embed_dim,
        hidden_dim=args.hidden_dim,
        dropout_rate=args.dropout,
        class_head_enabled=args.cpn,
        pair_head_enabled=args.qcn,
        weight_stream_enabled=args.ws,
    )
    train_config = TrainConfig(
        learning_rate=args.lr,
        weight_decay=args.weight_decay,
        batch_size=args.batch_size,
        epochs=args.epochs,
        class_weight=args.alpha,
        pair_weight=args.beta,
        train_fraction=args.train_fraction,
        seed=args.seed,
        deterministic=True if args.deterministic is None else args.deterministic,
    )
    return model_config, train_config


def cmd_train(args: argparse.Namespace) -> int:
    started = _utc_now()
    out_dir = Path(args.out)
    ds = load_dataset(args.dataset)
    args.input_dim = ds.dim
    model_config, train_config = _configs_from_args(args)
    ds_train, ds_test = split_train_test(
        ds, train_config.train_fraction, train_config.seed
    )
    result = train(ds_train, ds_test, model_config, train_config, log=print)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out_dir / "final.lpfc", result.final_checkpoint)
    save_checkpoint(out_dir / "best.lpfc", result.best_checkpoint)
    atomic_write_text(out_dir / "telemetry.csv", records_to_csv(result.records))
    _write_run_manifest(
        out_dir,
        "train",
        {
            "model_config": asdict(model_config),
            "train_config": asdict(train_config),
            "dataset_name": ds.name,
            "train_samples": ds_train.n,
            "test_samples": ds_test.n,
            "best_epoch": result.best_epoch,
        },
        inputs={"dataset": str(Path(args.dataset).resolve())},
        outputs=["final.lpfc", "best.lpfc", "telemetry.csv"],
        seed=train_config.seed,
        started_at=started,
    )
    print(f"wrote {out_dir / 'final.lpfc'} (best epoch {result.best_epoch})")
    return EXIT_OK


def _select_split(ds: FeatureDataset, ckpt: Checkpoint, split: str) -> FeatureDataset:
    if split == "all":
        return ds
    ds_train, ds_test = split_train_test(
        ds, ckpt.train_config.train_fraction, ckpt.train_config.seed
    )
    return ds_train if split == "train" else ds_test


def _report_lines(ds: FeatureDataset, split: str, ev: EvalResult) -> list[str]:
    report = ev.report
    lines = [
        f"dataset={ds.name}",
        f"split={split}",
        f"samples={ds.n}",
        f"plcc={ev.plcc!r}",
        f"srocc={ev.srocc!r}",
        f"accuracy={report.accuracy!r}",
        f"macro_precision={report.macro_precision!r}",
        f"macro_recall={report.macro_recall!r}",
        f"macro_f1={report.macro_f1!r}",
    ]
    for row_idx, row in enumerate(report.confusion):
        lines.append(f"confusion_row_{row_idx}=" + ",".join(str(c) for c in row))
    return lines


def _report_payload(ds: FeatureDataset, split: str, ev: EvalResult) -> dict:
    return {
        "dataset": ds.name,
        "split": split,
        "samples": ds.n,
        "plcc": ev.plcc,
        "srocc": ev.srocc,
        "accuracy": ev.report.accuracy,
        "macro_precision": ev.report.macro_precision,
        "macro_recall": ev.report.macro_recall,
        "macro_f1": ev.report.macro_f1,
        "confusion": ev.report.confusion.tolist(),
    }


def _predictions_csv(ds: FeatureDataset, ev: EvalResult) -> str:
    lines = ["id,raw_score,norm_score,predicted_score,true_category,predicted_category"]
    for i, sample_id in enumerate(ds.ids):
        lines.append(
            f"{sample_id},{float(ds.raw_scores[i])!r},{float(ds.norm_scores[i])!r},"
            f"{float(ev.predictions[i])!r},{ds.categories[i]},{ev.pred_classes[i]}"
        )
    return "\n".join(lines) + "\n"


def cmd_eval(args: argparse.Namespace) -> int:
    started = _utc_now()
    ckpt = load_checkpoint(args.checkpoint)
    model = restore_model(ckpt, deterministic=args.deterministic)
    ds = load_dataset(args.dataset)
    if ds.dim != ckpt.model_config.input_dim:
        raise ShapeError(
            f"checkpoint expects dim {ckpt.model_config.input_dim}, "
            f"dataset {ds.name} has dim {ds.dim}"
        )
    subset = _select_split(ds, ckpt, args.split)
    ev = evaluate(model, subset)
    for line in _report_lines(subset, args.split, ev):
        print(line)
    if args.out is not None:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        atomic_write_text(
            out_dir / "report.txt",
            "\n".join(_report_lines(subset, args.split, ev)) + "\n",
        )
        atomic_write_text(
            out_dir / "report.json",
            json.dumps(_report_payload(subset, args.split, ev), indent=2, sort_keys=True)
            + "\n",
        )
        atomic_write_text(out_dir / "predictions.csv", _predictions_csv(subset, ev))
        _write_run_manifest(
            out_dir,
            "eval",
            {
                "split": args.split,
                "model_config": asdict(ckpt.model_config),
                "train_config": asdict(ckpt.train_config),
                "checkpoint_epoch": ckpt.epoch,
            },
            inputs={
                "checkpoint": str(Path(args.checkpoint).resolve()),
                "dataset": str(Path(args.dataset).resolve()),
            },
            outputs=["report.txt", "report.json", "predictions.csv"],
            seed=args.seed,
            started_at=started,
        )
    return EXIT_OK


def cmd_predict(args: argparse.Namespace) -> int:
    started = _utc_now()
    ckpt = load_checkpoint(args.checkpoint)
    model = restore_model(ckpt, deterministic=args.deterministic)
    features = read_feature_file(args.features)
    if features.shape[1] != ckpt.model_config.input_dim:
        raise ShapeError(
            f"checkpoint expects dim {ckpt.model_config.input_dim}, "
            f"feature file has dim {features.shape[1]}"
        )
    latent = model.embed(features)
    weights, _, scores = model.quality(latent)
    if args.explain:
        lines = [
            f"{float(score)!r},{float(weight)!r}"
            for score, weight in zip(scores, weights)
        ]
    else:
        lines = [f"{float(score)!r}" for score in scores]
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out is not None:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        atomic_write_text(out_dir / "predictions.txt", text)
        _write_run_manifest(
            out_dir,
            "predict",
            {"explain": args.explain, "rows": int(features.shape[0])},
            inputs={
                "checkpoint": str(Path(args.checkpoint).resolve()),
                "features": str(Path(args.features).resolve()),
            },
            outputs=["predictions.txt"],
            seed=args.seed,
            started_at=started,
        )
    return EXIT_OK


def _read_csv_rows(path: Path) -> tuple[list[str], list[list[str]]]:
    lines = path.read_text().splitlines()
    if not lines:
        raise DataFormatError(f"{path}: empty file")
    header = lines[0].split(",")
    rows = [line.split(",") for line in lines[1:] if line]
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise DataFormatError(
                f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
            )
    return header, rows


def cmd_export_plots(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    if args.telemetry is None and args.predictions is None:
        parser.error("export-plots needs --telemetry and/or --predictions")
    started = _utc_now()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs: list[str] = []
    inputs: dict[str, str] = {}

    if args.telemetry is not None:
        path = Path(args.telemetry)
        header, rows = _read_csv_rows(path)
        if "epoch" not in header:
            raise DataFormatError(f"{path}: telemetry lacks an 'epoch' column")
        text = ",".join(header) + "\n"
        text += "".join(",".join(row) + "\n" for row in rows)
        atomic_write_text(out_dir / "convergence.csv", text)
        outputs.append("convergence.csv")
        inputs["telemetry"] = str(path.resolve())

    if args.predictions is not None:
        path = Path(args.predictions)
        header, rows = _read_csv_rows(path)
        needed = ["norm_score", "predicted_score", "true_category", "predicted_category"]
        missing = [col for col in needed if col not in header]
        if missing:
            raise DataFormatError(f"{path}: missing columns {missing}")
        idx = {col: header.index(col) for col in needed}
        scatter = "true_norm_score,predicted_score\n"
        counts: dict[tuple[str, str], int] = {}
        for row in rows:
            scatter += f"{row[idx['norm_score']]},{row[idx['predicted_score']]}\n"
            key = (row[idx["true_category"]], row[idx["predicted_category"]])
            counts[key] = counts.get(key, 0) + 1
        confusion = "true_category,predicted_category,count\n"
        for (true_cat, pred_cat) in sorted(counts):
            confusion += f"{true_cat},{pred_cat},{counts[(true_cat, pred_cat)]}\n"
        atomic_write_text(out_dir / "scatter.csv", scatter)
        atomic_write_text(out_dir / "confusion.csv", confusion)
        outputs.extend(["scatter.csv", "confusion.csv"])
        inputs["predictions"] = str(path.resolve())

    _write_run_manifest(
        out_dir, "export-plots", {}, inputs, outputs, args.seed, started
    )
    print(f"wrote {', '.join(outputs)} to {out_dir}")
    return EXIT_OK


def cmd_inspect(args: argparse.Namespace) -> int:
    path = Path(args.path)
    blob = path.read_bytes()
    if blob[:4] == b"LPFF":
        info = inspect_feature_file(path)
        print("type=features")
        print(f"version={info.version}")
        print(f"count={info.count}")
        print(f"dim={info.dim}")
        print("dtype=float32")
        return EXIT_OK
    if blob[:4] == b"LPFC":
        ckpt = load_checkpoint(path)
        print("type=checkpoint")
        print(f"version={ckpt.version}")
        print(f"epoch={ckpt.epoch}")
        print(f"tensors={len(ckpt.params)}")
        print(f"parameter_count={sum(p.size for p in ckpt.params.values())}")
        print(f"optimizer={'present' if ckpt.adam is not None else 'absent'}")
        for key, value in sorted(asdict(ckpt.model_config).items()):
            print(f"model.{key}={value}")
        for key, value in sorted(asdict(ckpt.train_config).items()):
            print(f"train.{key}={value}")
        return EXIT_OK
    desc = read_descriptor(path)
    print("type=descriptor")
    print(f"features={desc.features_path}")
    print(f"manifest={desc.manifest_path}")
    print(f"polarity={desc.polarity}")
    print(f"name={desc.name}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lpfiqa",
        description="Feature-based image quality model: synthesis, training, "
        "evaluation, prediction, and plot-data export.",
    )
    parser.add_argument("--version", action="version", version=f"lpfiqa {__version__}")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for all randomness")
    common.add_argument(
        "--deterministic",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="bit-reproducible kernels (default: on; eval/predict inherit "
        "the checkpoint's setting)",
    )
    common.add_argument("--out", default=None, help="output directory")

    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser(
        "synth", parents=[common], help="generate a synthetic dataset"
    )
    p_synth.add_argument("--n", type=int, required=True, help="number of samples (>= 8)")
    p_synth.add_argument("--dim", type=int, required=True, help="feature dimension")
    p_synth.add_argument(
        "--rule", choices=SCORE_RULES, default="linear", help="score-generating rule"
    )

    p_train = sub.add_parser("train", parents=[common], help="train on a dataset")
    p_train.add_argument("dataset", help="dataset descriptor (.lpfd)")
    p_train.add_argument("--epochs", type=int, default=100)
    p_train.add_argument("--batch-size", type=int, default=16)
    p_train.add_argument("--lr", type=float, default=8e-5, help="learning rate")
    p_train.add_argument("--weight-decay", type=float, default=1e-5)
    p_train.add_argument(
        "--train-fraction", type=float, default=0.8, help="train split fraction"
    )
    p_train.add_argument(
        "--alpha", type=float, default=1.0, help="weight of the class-head loss term"
    )
    p_train.add_argument(
        "--beta", type=float, default=1.0, help="weight of the pair-head loss term"
    )
    p_train.add_argument(
        "--cpn",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="train the category-classification head",
    )
    p_train.add_argument(
        "--qcn",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="train the pairwise-comparison head",
    )
    p_train.add_argument(
        "--ws",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="use the sigmoid weight stream in the quality regressor",
    )
    p_train.add_argument("--embed-dim", type=int, default=512)
    p_train.add_argument("--hidden-dim", type=int, default=256)
    p_train.add_argument("--dropout", type=float, default=0.2)

    p_eval = sub.add_parser(
        "eval", parents=[common], help="evaluate a checkpoint on a dataset"
    )
    p_eval.add_argument("checkpoint", help="checkpoint file (.lpfc)")
    p_eval.add_argument("dataset", help="dataset descriptor (.lpfd)")
    p_eval.add_argument(
        "--split",
        choices=("test", "train", "all"),
        default="test",
        help="which part of the dataset to score; 'test'/'train' replay the "
        "checkpoint's own split parameters",
    )

    p_predict = sub.add_parser(
        "predict", parents=[common], help="score a feature file with a checkpoint"
    )
    p_predict.add_argument("checkpoint", help="checkpoint file (.lpfc)")
    p_predict.add_argument("features", help="feature file (.lpff)")
    p_predict.add_argument(
        "--explain",
        action="store_true",
        help="also print each sample's weight-stream output",
    )

    p_export = sub.add_parser(
        "export-plots", parents=[common], help="emit plot-ready tables"
    )
    p_export.add_argument("--telemetry", default=None, help="telemetry.csv from train")
    p_export.add_argument(
        "--predictions", default=None, help="predictions.csv from eval"
    )

    p_inspect = sub.add_parser(
        "inspect", parents=[common], help="print a file's header as key=value lines"
    )
    p_inspect.add_argument("path", help="feature file, checkpoint, or descriptor")

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "synth":
            _require_out(args, parser)
            return cmd_synth(args)
        if args.command == "train":
            _require_out(args, parser)
            return cmd_train(args)
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "predict":
            return cmd_predict(args)
        if args.command == "export-plots":
            _require_out(args, parser)
            return cmd_export_plots(args, parser)
        if args.command == "inspect":
            return cmd_inspect(args)
        parser.error(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (EngineError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    raise AssertionError("unreachable")


def entrypoint() -> None:
    sys.exit(main())
