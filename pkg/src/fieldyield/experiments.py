"""Experiment protocols: yearly model comparison, monthly online
prediction, source ablations, neighborhood-radius and lambda sweeps, and
scoring of externally produced prediction files.

Each protocol trains per (seed, configuration), evaluates on the held-out
regions in original yield units, writes a long-form runs CSV plus a
summary CSV of medians over seeds, and returns the summary rows. Runs are
deterministic: rerunning a spec reproduces its output files byte for
byte.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .baselines import fit_linear, fit_tree, predict_linear, predict_tree
from .data import SOURCE_ORDER, FieldDataset, normalize_dataset, train_test_split, truncate_to_month
from .dataio import RunConfig, load_field_csv
from .errors import DataValidationError
from .grid import build_spatial_weights
from .metrics import MetricsReport, compute_metrics
from .network import MtlArch, forward, init_model
from .synth import default_benchmark
from .training import LossConfig, TrainConfig, train

MODEL_KINDS = ("mtl_spatial", "mtl", "linear", "tree")
EXPERIMENT_KINDS = (
    "yearly_comparison",
    "monthly_online",
    "single_source",
    "leave_one_out",
    "neighborhood_sweep",
    "lambda_sweep",
)
DEFAULT_RADII = (1.0, 2.0, 3.0, 4.0, 5.0)
DEFAULT_LAMBDAS = (0.01, 0.1, 1.0)
ABLATION_SOURCES = ("soil", "spectral", "ndvi")  # weather is shared across regions


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str
    out_dir: Path
    seeds: tuple[int, ...]
    models: tuple[str, ...] = MODEL_KINDS
    dataset_path: Path | None = None  # None: 20x20 3-task synthetic benchmark per seed
    run: RunConfig = RunConfig()
    epochs: int = 500  # fixed budget, no early stopping, for reproducible sweeps
    radii: tuple[float, ...] = DEFAULT_RADII
    lambdas: tuple[float, ...] = DEFAULT_LAMBDAS
    months: tuple[int, ...] = (5, 6, 7, 8, 9)

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise DataValidationError(f"unknown experiment kind {self.kind!r}")
        if len(self.seeds) < 1:
            raise DataValidationError("at least one seed required")
        bad = [m for m in self.models if m not in MODEL_KINDS]
        if bad:
            raise DataValidationError(f"unknown model kinds {bad}")
        if self.kind == "neighborhood_sweep" and len(self.radii) == 0:
            raise DataValidationError("neighborhood_sweep needs radii")
        if self.kind == "lambda_sweep" and len(self.lambdas) == 0:
            raise DataValidationError("lambda_sweep needs lambdas")


@dataclass
class RunRow:
    config: str
    seed: int
    task: str  # task label or "all"
    report: MetricsReport
    month: int | None = None


def _base_dataset(spec: ExperimentSpec, seed: int) -> FieldDataset:
    if spec.dataset_path is not None:
        return load_field_csv(spec.dataset_path, season=spec.run.season())
    return default_benchmark(seed)[0]


def _prepare(dataset: FieldDataset, seed: int, cfg: RunConfig):
    train_raw, test_raw = train_test_split(dataset, cfg.test_fraction, seed)
    train_n, params = normalize_dataset(train_raw)
    test_n, _ = normalize_dataset(test_raw, params)
    return train_n, test_n, test_raw


def _task_reports(per_task: dict[int, tuple[np.ndarray, np.ndarray]]) -> dict[str, MetricsReport]:
    """Per-task metrics plus a pooled "all" row, original units."""
    out = {}
    actual_all, pred_all = [], []
    for t in sorted(per_task):
        actual, pred = per_task[t]
        out[str(t)] = compute_metrics(actual, pred)
        actual_all.append(actual)
        pred_all.append(pred)
    out["all"] = compute_metrics(np.concatenate(actual_all), np.concatenate(pred_all))
    return out


def _flat_features(ds: FieldDataset, task: int) -> np.ndarray:
    blocks = ds.model_inputs(task, SOURCE_ORDER)
    return np.hstack([blocks[s] for s in SOURCE_ORDER])


def train_and_evaluate(
    kind: str,
    train_n: FieldDataset,
    test_n: FieldDataset,
    test_raw: FieldDataset,
    cfg: RunConfig,
    epochs: int,
    seed: int,
    sources: tuple[str, ...] = SOURCE_ORDER,
    lam: float | None = None,
    radius: float | None = None,
) -> dict[str, MetricsReport]:
    """Train one model configuration and score it on the held-out regions."""
    per_task: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    if kind in ("mtl_spatial", "mtl"):
        use_lam = (cfg.lam if lam is None else lam) if kind == "mtl_spatial" else 0.0
        use_radius = cfg.radius if radius is None else radius
        weights = None
        if use_lam > 0:
            weights = build_spatial_weights(train_n.grid, use_radius, cfg.power)
        dims = train_n.source_dims(sources)
        arch = MtlArch(
            source_dims=tuple((s, dims[s]) for s in sources),
            extractor_width=cfg.extractor_width,
            shared_width=cfg.shared_width,
            head_widths=cfg.head_widths,
            dropout=cfg.dropout,
        )
        model = init_model(arch, train_n.tasks, seed)
        loss_cfg = LossConfig(lam=use_lam, neighbor_target=cfg.neighbor_target, weights=weights)
        train_cfg = TrainConfig(
            epochs=epochs,
            learning_rate=cfg.learning_rate,
            optimizer=cfg.optimizer,
            seed=seed,
            early_stop_patience=None,
        )
        model, _ = train(model, train_n, None, loss_cfg, train_cfg)
        for t in test_n.tasks:
            yhat_n, _ = forward(model, test_n.model_inputs(t, sources), t, mode="infer")
            pred = test_n.denormalize_yield(yhat_n)
            per_task[t] = (test_raw.tables[t].yields, pred)
    elif kind in ("linear", "tree"):
        for t in train_n.tasks:
            X_train = _flat_features(train_n, t)
            y_train = train_n.tables[t].yields
            X_test = _flat_features(test_n, t)
            if kind == "linear":
                m = fit_linear(X_train, y_train, ridge=cfg.ridge)
                yhat_n = predict_linear(m, X_test)
            else:
                m = fit_tree(X_train, y_train, cfg.tree_max_depth, cfg.tree_min_samples_leaf)
                yhat_n = predict_tree(m, X_test)
            pred = test_n.denormalize_yield(yhat_n)
            per_task[t] = (test_raw.tables[t].yields, pred)
    else:
        raise DataValidationError(f"unknown model kind {kind!r}")
    return _task_reports(per_task)


def _write_runs_csv(path: Path, rows: list[RunRow], with_month: bool = False) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        head = ["config", "seed", "task", "n", "mse", "rmse", "mae", "mape", "max_error"]
        if with_month:
            head.insert(1, "month")
        writer.writerow(head)
        for r in rows:
            row = [r.config, r.seed, r.task] + r.report.as_row()
            if with_month:
                row.insert(1, r.month)
            writer.writerow(row)


def _median(values: list[float]) -> float:
    return float(np.median(np.array(values, dtype=float)))


def _median_metric(rows: list[RunRow], config: str, task: str, metric: str, month=None) -> float:
    vals = [
        getattr(r.report, metric)
        for r in rows
        if r.config == config and r.task == task and r.month == month
    ]
    if not vals or any(v is None for v in vals):
        return float("nan")
    return _median(vals)


def run_yearly_comparison(spec: ExperimentSpec) -> list[dict]:
    """Per-task RMSE of every requested model, median over seeds."""
    rows: list[RunRow] = []
    tasks: tuple[int, ...] = ()
    for seed in spec.seeds:
        dataset = _base_dataset(spec, seed)
        tasks = dataset.tasks
        train_n, test_n, test_raw = _prepare(dataset, seed, spec.run)
        for kind in spec.models:
            reports = train_and_evaluate(kind, train_n, test_n, test_raw, spec.run, spec.epochs, seed)
            rows += [RunRow(kind, seed, t, rep) for t, rep in reports.items()]
    spec.out_dir.mkdir(parents=True, exist_ok=True)
    _write_runs_csv(spec.out_dir / "yearly_comparison_runs.csv", rows)
    summary = []
    for kind in spec.models:
        entry = {"config": kind}
        for t in tasks:
            entry[f"rmse_{t}"] = _median_metric(rows, kind, str(t), "rmse")
        entry["rmse_all"] = _median_metric(rows, kind, "all", "rmse")
        summary.append(entry)
    _write_summary_csv(spec.out_dir / "yearly_comparison_summary.csv", summary)
    return summary


def run_monthly_online(spec: ExperimentSpec) -> list[dict]:
    """Truncate features to each month, retrain, score held-out regions."""
    rows: list[RunRow] = []
    for seed in spec.seeds:
        dataset = _base_dataset(spec, seed)
        for month in spec.months:
            cut = truncate_to_month(dataset, month)
            train_n, test_n, test_raw = _prepare(cut, seed, spec.run)
            for kind in spec.models:
                reports = train_and_evaluate(kind, train_n, test_n, test_raw, spec.run, spec.epochs, seed)
                rows += [RunRow(kind, seed, t, rep, month=month) for t, rep in reports.items()]
    spec.out_dir.mkdir(parents=True, exist_ok=True)
    _write_runs_csv(spec.out_dir / "monthly_online_runs.csv", rows, with_month=True)
    summary = []
    for month in spec.months:
        for kind in spec.models:
            summary.append(
                {
                    "month": month,
                    "config": kind,
                    "rmse_all": _median_metric(rows, kind, "all", "rmse", month=month),
                }
            )
    _write_summary_csv(spec.out_dir / "monthly_online_summary.csv", summary)
    return summary


def run_source_ablations(spec: ExperimentSpec) -> tuple[list[dict], list[dict]]:
    """Two spatial-MTL tables: single source only, and all but one source."""
    single_rows: list[RunRow] = []
    loo_rows: list[RunRow] = []
    for seed in spec.seeds:
        dataset = _base_dataset(spec, seed)
        train_n, test_n, test_raw = _prepare(dataset, seed, spec.run)
        for src in ABLATION_SOURCES:
            reports = train_and_evaluate(
                "mtl_spatial", train_n, test_n, test_raw, spec.run, spec.epochs, seed, sources=(src,)
            )
            single_rows += [RunRow(src, seed, t, rep) for t, rep in reports.items()]
            kept = tuple(s for s in SOURCE_ORDER if s != src)
            reports = train_and_evaluate(
                "mtl_spatial", train_n, test_n, test_raw, spec.run, spec.epochs, seed, sources=kept
            )
            loo_rows += [RunRow(src, seed, t, rep) for t, rep in reports.items()]
    spec.out_dir.mkdir(parents=True, exist_ok=True)
    _write_runs_csv(spec.out_dir / "single_source_runs.csv", single_rows)
    _write_runs_csv(spec.out_dir / "leave_one_out_runs.csv", loo_rows)

    def summarize(rows: list[RunRow], label: str) -> list[dict]:
        out = []
        for src in ABLATION_SOURCES:
            entry = {label: src}
            for metric in ("mse", "rmse", "mae", "mape", "max_error"):
                entry[metric] = _median_metric(rows, src, "all", metric)
            out.append(entry)
        return out

    single = summarize(single_rows, "source")
    loo = summarize(loo_rows, "removed_source")
    _write_summary_csv(spec.out_dir / "single_source_summary.csv", single)
    _write_summary_csv(spec.out_dir / "leave_one_out_summary.csv", loo)
    return single, loo


def run_neighborhood_sweep(spec: ExperimentSpec) -> list[dict]:
    """Retrain the spatial MTL with weights rebuilt per neighborhood radius."""
    rows: list[RunRow] = []
    pair_counts: dict[float, int] = {}
    for seed in spec.seeds:
        dataset = _base_dataset(spec, seed)
        train_n, test_n, test_raw = _prepare(dataset, seed, spec.run)
        for radius in spec.radii:
            if radius not in pair_counts:
                pair_counts[radius] = build_spatial_weights(
                    dataset.grid, radius, spec.run.power
                ).pair_count()
            reports = train_and_evaluate(
                "mtl_spatial", train_n, test_n, test_raw, spec.run, spec.epochs, seed, radius=radius
            )
            rows += [RunRow(f"radius={radius:g}", seed, t, rep) for t, rep in reports.items()]
    spec.out_dir.mkdir(parents=True, exist_ok=True)
    _write_runs_csv(spec.out_dir / "neighborhood_sweep_runs.csv", rows)
    summary = []
    for radius in spec.radii:
        entry = {"radius": radius, "pairs": pair_counts[radius]}
        for metric in ("mse", "rmse", "mae", "mape", "max_error"):
            entry[metric] = _median_metric(rows, f"radius={radius:g}", "all", metric)
        summary.append(entry)
    _write_summary_csv(spec.out_dir / "neighborhood_sweep_summary.csv", summary)
    return summary


def run_lambda_sweep(spec: ExperimentSpec) -> list[dict]:
    """Retrain the spatial MTL across regularizer strengths."""
    rows: list[RunRow] = []
    for seed in spec.seeds:
        dataset = _base_dataset(spec, seed)
        train_n, test_n, test_raw = _prepare(dataset, seed, spec.run)
        for lam in spec.lambdas:
            reports = train_and_evaluate(
                "mtl_spatial", train_n, test_n, test_raw, spec.run, spec.epochs, seed, lam=lam
            )
            rows += [RunRow(f"lambda={lam:g}", seed, t, rep) for t, rep in reports.items()]
    spec.out_dir.mkdir(parents=True, exist_ok=True)
    _write_runs_csv(spec.out_dir / "lambda_sweep_runs.csv", rows)
    summary = []
    for lam in spec.lambdas:
        entry = {"lambda": lam}
        for metric in ("mse", "rmse", "mae", "mape", "max_error"):
            entry[metric] = _median_metric(rows, f"lambda={lam:g}", "all", metric)
        summary.append(entry)
    _write_summary_csv(spec.out_dir / "lambda_sweep_summary.csv", summary)
    return summary


def run_experiment(spec: ExperimentSpec):
    if spec.kind == "yearly_comparison":
        return run_yearly_comparison(spec)
    if spec.kind == "monthly_online":
        return run_monthly_online(spec)
    if spec.kind in ("single_source", "leave_one_out"):
        single, loo = run_source_ablations(spec)
        return single if spec.kind == "single_source" else loo
    if spec.kind == "neighborhood_sweep":
        return run_neighborhood_sweep(spec)
    return run_lambda_sweep(spec)


def _write_summary_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        raise DataValidationError("no summary rows to write")
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        cols = list(rows[0].keys())
        writer.writerow(cols)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in (row[c] for c in cols)])


def score_external_predictions(prediction_csv: str | Path, dataset: FieldDataset) -> MetricsReport:
    """Score a ``task,region,prediction`` CSV (original units) against every
    dataset row that has an actual yield."""
    preds = load_predictions_csv(prediction_csv)
    actual, forecast = [], []
    missing = []
    for t in dataset.tasks:
        tab = dataset.tables[t]
        for i, region in enumerate(tab.regions):
            if np.isnan(tab.yields[i]):
                continue
            key = (t, int(region))
            if key not in preds:
                missing.append(key)
            else:
                actual.append(tab.yields[i])
                forecast.append(preds[key])
    if missing:
        shown = ", ".join(f"task {t} region {r}" for t, r in missing[:20])
        more = "" if len(missing) <= 20 else f" (+{len(missing) - 20} more)"
        raise DataValidationError(f"predictions missing for: {shown}{more}")
    return compute_metrics(np.array(actual), np.array(forecast))


def load_predictions_csv(path: str | Path) -> dict[tuple[int, int], float]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataValidationError(f"{path}: empty predictions file")
        expected = ["task", "region", "prediction"]
        if [h.strip() for h in header] != expected:
            raise DataValidationError(f"{path}: header must be {','.join(expected)}")
        out = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise DataValidationError(f"{path}:{lineno}: expected 3 cells, got {len(row)}")
            try:
                key = (int(row[0]), int(row[1]))
                value = float(row[2])
            except ValueError:
                raise DataValidationError(f"{path}:{lineno}: non-numeric cell")
            if key in out:
                raise DataValidationError(f"{path}:{lineno}: duplicate prediction for {key}")
            out[key] = value
    return out


def write_predictions_csv(path: str | Path, rows: list[tuple[int, int, float]]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task", "region", "prediction"])
        for task, region, value in rows:
            writer.writerow([task, region, repr(float(value))])
