"""Command-line surface.

Verbs: synth, train, predict, evaluate, experiment <kind>, heatmap. All
verbs accept ``--config FILE`` (key = value sidecar) with flag overrides;
``--seed`` is mandatory wherever randomness is involved. Exit codes:
0 success, 1 usage error, 2 data validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import FieldDataset, normalize_dataset, train_test_split, truncate_to_month
from .dataio import RunConfig, load_field_csv, load_run_config, write_field_csv
from .errors import DataValidationError, NumericalError
from .experiments import (
    EXPERIMENT_KINDS,
    MODEL_KINDS,
    ExperimentSpec,
    load_predictions_csv,
    run_experiment,
    score_external_predictions,
    write_predictions_csv,
)
from .grid import build_spatial_weights
from .heatmap import export_heatmap
from .metrics import compute_metrics
from .network import MtlArch, forward, init_model
from .synth import synth_field
from .training import LossConfig, TrainConfig, train, write_history_csv


class CliUsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        raise CliUsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="fieldyield", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config(p):
        p.add_argument("--config", type=Path, help="key = value sidecar config file")

    p = sub.add_parser("synth", help="generate a synthetic field CSV")
    p.add_argument("--rows", type=int, default=20)
    p.add_argument("--cols", type=int, default=20)
    p.add_argument("--tasks", type=int, default=3)
    p.add_argument("--spatial-scale", type=int, default=2)
    p.add_argument("--noise-sd", type=float, default=40.0)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    add_config(p)

    p = sub.add_parser("train", help="train the spatial multi-task model")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, required=True, help="checkpoint path")
    p.add_argument("--history", type=Path, help="write per-epoch history CSV")
    p.add_argument("--month", type=int, help="truncate features to this calendar month")
    p.add_argument("--lambda", dest="lam", type=float, help="spatial regularizer strength")
    p.add_argument("--radius", type=float, help="neighborhood radius, cell units")
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--optimizer", choices=("sgd", "adam"))
    p.add_argument("--test-fraction", type=float)
    p.add_argument("--val-fraction", type=float)
    add_config(p)

    p = sub.add_parser("predict", help="predict yields with a checkpoint")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    add_config(p)

    p = sub.add_parser("evaluate", help="score a predictions CSV against actual yields")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--predictions", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="metrics CSV path")
    p.add_argument("--label", default="external", help="config column value")
    p.add_argument("--test-fraction", type=float, help="score only the held-out split")
    p.add_argument("--seed", type=int, help="split seed (required with --test-fraction)")
    add_config(p)

    p = sub.add_parser("experiment", help="run a study protocol")
    p.add_argument("kind", choices=EXPERIMENT_KINDS)
    p.add_argument("--data", type=Path, help="field CSV; default: synthetic benchmark")
    p.add_argument("--seeds", required=True, help="comma-separated seed list")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--models", help=f"comma list from {','.join(MODEL_KINDS)}")
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--radii", help="comma list for neighborhood_sweep")
    p.add_argument("--lambdas", help="comma list for lambda_sweep")
    add_config(p)

    p = sub.add_parser("heatmap", help="export a within-field heatmap (PGM + CSV)")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--task", type=int, required=True)
    p.add_argument("--out", type=Path, required=True, help="output base path (no extension)")
    p.add_argument("--predictions", type=Path, help="render these values instead of actual yield")
    add_config(p)

    return parser


def _config(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        cfg = load_run_config(args.config, cfg)
    overrides = {}
    for flag, key in (
        ("lam", "lam"),
        ("radius", "radius"),
        ("epochs", "epochs"),
        ("learning_rate", "learning_rate"),
        ("optimizer", "optimizer"),
        ("test_fraction", "test_fraction"),
        ("val_fraction", "val_fraction"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    return replace(cfg, **overrides)


def _cmd_synth(args) -> int:
    _config(args)  # validate any provided config file
    dataset, _ = synth_field(
        rows=args.rows,
        cols=args.cols,
        n_tasks=args.tasks,
        spatial_scale=args.spatial_scale,
        noise_sd=args.noise_sd,
        seed=args.seed,
    )
    write_field_csv(dataset, args.out)
    print(f"wrote {args.out}: {dataset.grid.n_regions} regions x {len(dataset.tasks)} tasks")
    return 0


def _cmd_train(args) -> int:
    cfg = _config(args)
    dataset = load_field_csv(args.data, season=cfg.season())
    if args.month is not None:
        dataset = truncate_to_month(dataset, args.month)
    train_raw, _ = train_test_split(dataset, cfg.test_fraction, args.seed)
    val_raw = None
    if cfg.val_fraction > 0:
        train_raw, val_raw = train_test_split(train_raw, cfg.val_fraction, args.seed + 1)
    train_n, params = normalize_dataset(train_raw)
    val_n = normalize_dataset(val_raw, params)[0] if val_raw is not None else None

    dims = train_n.source_dims()
    arch = MtlArch(
        source_dims=tuple(dims.items()),
        extractor_width=cfg.extractor_width,
        shared_width=cfg.shared_width,
        head_widths=cfg.head_widths,
        dropout=cfg.dropout,
    )
    weights = build_spatial_weights(dataset.grid, cfg.radius, cfg.power) if cfg.lam > 0 else None
    model = init_model(arch, train_n.tasks, args.seed)
    loss_cfg = LossConfig(lam=cfg.lam, neighbor_target=cfg.neighbor_target, weights=weights)
    train_cfg = TrainConfig(
        epochs=cfg.epochs,
        learning_rate=cfg.learning_rate,
        optimizer=cfg.optimizer,
        seed=args.seed,
        early_stop_patience=cfg.early_stop_patience if val_n is not None else None,
    )
    model, history = train(model, train_n, val_n, loss_cfg, train_cfg)
    save_checkpoint(args.out, model, norm=params, meta={"seed": args.seed, "data": str(args.data)})
    if args.history:
        write_history_csv(history, args.history, tasks=model.tasks if val_n is not None else ())
    if history.epochs_run:
        print(
            f"trained {len(model.tasks)} tasks for {history.epochs_run} epochs; "
            f"final loss {history.total_loss[-1]!r}"
        )
    else:
        print("trained 0 epochs")
    print(f"wrote {args.out}")
    return 0


def _cmd_predict(args) -> int:
    model, params, _ = load_checkpoint(args.model)
    if params is None:
        raise DataValidationError(f"{args.model}: checkpoint has no normalization parameters")
    cfg = _config(args)
    dataset = load_field_csv(args.data, season=cfg.season())
    model_windows = params["ndvi"].lo.size
    if dataset.n_windows > model_windows:
        # model was trained on a truncated season; cut features to match
        tables = {t: dataset.tables[t].truncate_windows(model_windows) for t in dataset.tasks}
        dataset = replace(dataset, tables=tables)
    elif dataset.n_windows < model_windows:
        raise DataValidationError(
            f"data has {dataset.n_windows} biweekly windows, model needs {model_windows}"
        )
    unknown = [t for t in dataset.tasks if t not in model.tasks]
    if unknown:
        raise DataValidationError(f"model has no heads for tasks {unknown}")
    norm, _ = normalize_dataset(dataset, params)
    rows = []
    for t in norm.tasks:
        yhat_n, _ = forward(model, norm.model_inputs(t, model.arch.sources), t, mode="infer")
        pred = norm.denormalize_yield(yhat_n)
        rows += [(t, int(r), float(p)) for r, p in zip(norm.tables[t].regions, pred)]
    write_predictions_csv(args.out, rows)
    print(f"wrote {args.out}: {len(rows)} predictions")
    return 0


def _cmd_evaluate(args) -> int:
    cfg = _config(args)
    dataset = load_field_csv(args.data, season=cfg.season())
    if args.test_fraction is not None:
        if args.seed is None:
            raise CliUsageError("--test-fraction needs --seed for the split")
        _, dataset = train_test_split(dataset, args.test_fraction, args.seed)
    preds = load_predictions_csv(args.predictions)
    overall = score_external_predictions(args.predictions, dataset)

    import csv as _csv

    with args.out.open("w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["config", "task", "n", "mse", "rmse", "mae", "mape", "max_error"])
        for t in dataset.tasks:
            tab = dataset.tables[t]
            mask = ~np.isnan(tab.yields)
            actual = tab.yields[mask]
            forecast = np.array([preds[(t, int(r))] for r in tab.regions[mask]])
            writer.writerow([args.label, t] + compute_metrics(actual, forecast).as_row())
        writer.writerow([args.label, "all"] + overall.as_row())
    print(f"wrote {args.out}; overall rmse {overall.rmse!r}")
    return 0


def _cmd_experiment(args) -> int:
    cfg = _config(args)
    try:
        seeds = tuple(int(s) for s in args.seeds.split(",") if s.strip())
    except ValueError:
        raise CliUsageError(f"bad --seeds list {args.seeds!r}")
    spec_kwargs = dict(
        kind=args.kind,
        out_dir=args.out,
        seeds=seeds,
        dataset_path=args.data,
        run=cfg,
        epochs=args.epochs,
    )
    if args.models:
        spec_kwargs["models"] = tuple(m.strip() for m in args.models.split(",") if m.strip())
    if args.radii:
        spec_kwargs["radii"] = tuple(float(r) for r in args.radii.split(","))
    if args.lambdas:
        spec_kwargs["lambdas"] = tuple(float(v) for v in args.lambdas.split(","))
    summary = run_experiment(ExperimentSpec(**spec_kwargs))
    print(f"wrote {args.kind} tables under {args.out} ({len(summary)} summary rows)")
    return 0


def _cmd_heatmap(args) -> int:
    cfg = _config(args)
    dataset = load_field_csv(args.data, season=cfg.season())
    if args.task not in dataset.tasks:
        raise DataValidationError(f"task {args.task} not in dataset tasks {list(dataset.tasks)}")
    tab = dataset.tables[args.task]
    if args.predictions is not None:
        preds = load_predictions_csv(args.predictions)
        values = {}
        for r in tab.regions:
            key = (args.task, int(r))
            if key not in preds:
                raise DataValidationError(f"predictions missing for task {args.task} region {r}")
            values[int(r)] = preds[key]
    else:
        if np.any(np.isnan(tab.yields)):
            raise DataValidationError(f"task {args.task} has rows without actual yield")
        values = {int(r): float(y) for r, y in zip(tab.regions, tab.yields)}
    if len(values) != dataset.grid.n_regions:
        missing = sorted(set(range(dataset.grid.n_regions)) - set(values))
        raise DataValidationError(f"task {args.task} covers no value for regions {missing[:20]}")
    pgm, csv_path = export_heatmap(dataset.grid, values, args.out)
    print(f"wrote {pgm} and {csv_path}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "predict": _cmd_predict,
    "evaluate": _cmd_evaluate,
    "experiment": _cmd_experiment,
    "heatmap": _cmd_heatmap,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except CliUsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataValidationError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
