"""Loss functions (data term plus inverse-distance spatial regularizer),
optimizers, and the full-batch multi-task training loop.

The total loss over one task's regions is

    sum_k (y_k - yhat_k)^2  +  lam * sum_k sum_{j in G(k)} w(k,j)/|G(k)| * (yhat_k - y_j)^2

with G(k) the neighbor set and w the IDW weight. Both terms are sums, not
means; the learning rate absorbs the scale. The neighbor value y_j is the
actual target by default; a ``predicted`` mode compares against yhat_j
instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import FieldDataset
from .errors import DataValidationError, NumericalError
from .grid import SpatialWeights
from .network import MtlModel, backward, forward

NEIGHBOR_TARGETS = ("actual", "predicted")


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.1
    neighbor_target: str = "actual"
    weights: SpatialWeights | None = None

    def __post_init__(self):
        if self.lam < 0:
            raise DataValidationError(f"lambda must be nonnegative, got {self.lam}")
        if self.neighbor_target not in NEIGHBOR_TARGETS:
            raise DataValidationError(f"neighbor_target must be one of {NEIGHBOR_TARGETS}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2000
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    early_stop_patience: int | None = 50

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise DataValidationError(f"learning rate must be positive, got {self.learning_rate}")
        if self.optimizer not in ("sgd", "adam"):
            raise DataValidationError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if self.epochs < 0:
            raise DataValidationError("epochs must be nonnegative")


@dataclass
class TrainHistory:
    total_loss: list[float] = field(default_factory=list)
    data_loss: list[float] = field(default_factory=list)
    spatial_reg: list[float] = field(default_factory=list)
    val_rmse: dict[int, list[float]] = field(default_factory=dict)

    @property
    def epochs_run(self) -> int:
        return len(self.total_loss)


def mse_data_loss(targets: np.ndarray, predictions: np.ndarray) -> float:
    """Sum of squared errors over regions (the printed sum, not a mean)."""
    y = np.asarray(targets, dtype=float)
    yhat = np.asarray(predictions, dtype=float)
    if y.shape != yhat.shape:
        raise DataValidationError(f"targets {y.shape} and predictions {yhat.shape} disagree")
    return float(np.sum((y - yhat) ** 2))


@dataclass(frozen=True)
class PairIndex:
    """Flattened neighbor pairs of a SpatialWeights graph, positions aligned
    with a fixed region ordering: term i couples yhat[k_pos[i]] with
    target[j_pos[i]] at weight w(k,j)/|G(k)|."""

    k_pos: np.ndarray
    j_pos: np.ndarray
    w_over_deg: np.ndarray


def build_pair_index(weights: SpatialWeights, regions: np.ndarray) -> PairIndex:
    """Index the weight graph against ``regions``; every region referenced
    by the graph must be present."""
    pos = {int(r): i for i, r in enumerate(regions)}
    k_pos, j_pos, wd = [], [], []
    for k in sorted(weights.neighbors):
        lst = weights.neighbors[k]
        if k not in pos:
            raise DataValidationError(f"region {k} referenced by spatial weights missing from batch")
        deg = len(lst)
        for j, w in lst:
            if j not in pos:
                raise DataValidationError(
                    f"region {j} referenced by spatial weights missing from batch"
                )
            k_pos.append(pos[k])
            j_pos.append(pos[j])
            wd.append(w / deg)
    return PairIndex(
        k_pos=np.array(k_pos, dtype=np.int64),
        j_pos=np.array(j_pos, dtype=np.int64),
        w_over_deg=np.array(wd, dtype=float),
    )


def spatial_regularizer(
    regions: np.ndarray,
    predictions: np.ndarray,
    targets: np.ndarray,
    weights: SpatialWeights,
    neighbor_target: str = "actual",
) -> float:
    """The double sum sum_k sum_{j in G(k)} w(k,j)/|G(k)| * (yhat_k - y_j)^2."""
    idx = build_pair_index(weights, np.asarray(regions))
    return _regularizer_value(idx, np.asarray(predictions, float), np.asarray(targets, float), neighbor_target)


def _regularizer_value(
    idx: PairIndex, yhat: np.ndarray, y: np.ndarray, neighbor_target: str
) -> float:
    if neighbor_target not in NEIGHBOR_TARGETS:
        raise DataValidationError(f"neighbor_target must be one of {NEIGHBOR_TARGETS}")
    if idx.k_pos.size == 0:
        return 0.0
    nb = y if neighbor_target == "actual" else yhat
    diff = yhat[idx.k_pos] - nb[idx.j_pos]
    return float(np.sum(idx.w_over_deg * diff * diff))


def _regularizer_dyhat(
    idx: PairIndex, yhat: np.ndarray, y: np.ndarray, neighbor_target: str
) -> np.ndarray:
    """d(regularizer)/d(yhat), analytic."""
    if idx.k_pos.size == 0:
        return np.zeros_like(yhat)
    nb = y if neighbor_target == "actual" else yhat
    diff = yhat[idx.k_pos] - nb[idx.j_pos]
    grad = np.bincount(idx.k_pos, weights=2.0 * idx.w_over_deg * diff, minlength=yhat.size)
    if neighbor_target == "predicted":
        grad -= np.bincount(idx.j_pos, weights=2.0 * idx.w_over_deg * diff, minlength=yhat.size)
    return grad


def total_loss(
    targets: np.ndarray,
    predictions: np.ndarray,
    regions: np.ndarray,
    config: LossConfig,
) -> float:
    """Data term plus lam times the spatial regularizer.

    With lam = 0 or no weights configured the spatial code path is skipped
    entirely, so the result is exactly the data loss.
    """
    data = mse_data_loss(targets, predictions)
    if config.lam == 0 or config.weights is None:
        return data
    reg = spatial_regularizer(regions, predictions, targets, config.weights, config.neighbor_target)
    return data + config.lam * reg


def init_optimizer_state(model: MtlModel, config: TrainConfig) -> dict:
    if config.optimizer == "sgd":
        return {"kind": "sgd"}
    return {
        "kind": "adam",
        "t": 0,
        "m": {k: np.zeros_like(v) for k, v in model.params.items()},
        "v": {k: np.zeros_like(v) for k, v in model.params.items()},
    }


def optimizer_step(
    model: MtlModel, grads: dict[str, np.ndarray], state: dict, config: TrainConfig
) -> dict:
    """Apply one SGD or Adam update in place; returns the updated state."""
    for name in model.param_names():
        g = grads[name]
        if g.shape != model.params[name].shape:
            raise DataValidationError(f"gradient shape mismatch for {name}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {name}")
    lr = config.learning_rate
    if state["kind"] == "sgd":
        for name in model.param_names():
            model.params[name] -= lr * grads[name]
        return state
    state["t"] += 1
    t = state["t"]
    b1, b2 = config.beta1, config.beta2
    for name in model.param_names():
        g = grads[name]
        m = state["m"][name]
        v = state["v"][name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        model.params[name] -= lr * m_hat / (np.sqrt(v_hat) + config.eps)
    return state


@dataclass(frozen=True)
class _TaskBatch:
    task: int
    regions: np.ndarray
    feats: dict[str, np.ndarray]
    targets: np.ndarray
    pairs: PairIndex | None


def _task_batches(
    dataset: FieldDataset, sources: tuple[str, ...], loss_cfg: LossConfig
) -> list[_TaskBatch]:
    batches = []
    use_reg = loss_cfg.lam != 0 and loss_cfg.weights is not None
    for t in dataset.tasks:
        tab = dataset.tables[t]
        if np.any(np.isnan(tab.yields)):
            raise DataValidationError(f"task {t}: training rows with missing yield")
        pairs = None
        if use_reg:
            restricted = loss_cfg.weights.restrict(tab.regions.tolist())
            pairs = build_pair_index(restricted, tab.regions)
        batches.append(
            _TaskBatch(
                task=t,
                regions=tab.regions,
                feats=dataset.model_inputs(t, sources),
                targets=tab.yields,
                pairs=pairs,
            )
        )
    return batches


def loss_and_gradients(
    model: MtlModel,
    batches: list[_TaskBatch],
    loss_cfg: LossConfig,
    mode: str = "infer",
    rng: np.random.Generator | None = None,
) -> tuple[float, float, float, dict[str, np.ndarray]]:
    """Forward + exact backward over all task batches.

    Returns (total loss, data loss, regularizer value, gradients). The
    regularizer's dependence on yhat_k is included in the gradients.
    """
    data = 0.0
    reg = 0.0
    runs = []
    for b in batches:
        yhat, cache = forward(model, b.feats, b.task, mode=mode, rng=rng)
        data += mse_data_loss(b.targets, yhat)
        dyhat = 2.0 * (yhat - b.targets)
        if b.pairs is not None and loss_cfg.lam != 0:
            reg += _regularizer_value(b.pairs, yhat, b.targets, loss_cfg.neighbor_target)
            dyhat = dyhat + loss_cfg.lam * _regularizer_dyhat(
                b.pairs, yhat, b.targets, loss_cfg.neighbor_target
            )
        runs.append((cache, dyhat))
    grads = backward(model, runs)
    total = data + loss_cfg.lam * reg
    return total, data, reg, grads


def _validation_rmse(model: MtlModel, dataset: FieldDataset, sources: tuple[str, ...]) -> dict[int, float]:
    out = {}
    for t in dataset.tasks:
        tab = dataset.tables[t]
        yhat, _ = forward(model, dataset.model_inputs(t, sources), t, mode="infer")
        out[t] = float(np.sqrt(np.mean((yhat - tab.yields) ** 2)))
    return out


def train(
    model: MtlModel,
    train_ds: FieldDataset,
    val_ds: FieldDataset | None,
    loss_cfg: LossConfig,
    train_cfg: TrainConfig,
) -> tuple[MtlModel, TrainHistory]:
    """Full-batch training over all tasks simultaneously.

    Every epoch runs forward on all training regions of every task (the
    spatial term couples regions within a task, restricted to the training
    regions), backpropagates the total loss and applies one optimizer
    step. Dropout masks are resampled each epoch from the stream seeded by
    ``train_cfg.seed``. With a validation set and a patience, training
    stops once the mean validation RMSE has not improved for ``patience``
    epochs and the best parameters are restored. Validation RMSE is
    recorded in normalized space.
    """
    if train_ds.norm is None:
        raise DataValidationError("training dataset must be normalized first")
    if tuple(train_ds.tasks) != tuple(model.tasks):
        raise DataValidationError(
            f"model tasks {model.tasks} do not match dataset tasks {train_ds.tasks}"
        )
    if sum(train_ds.tables[t].n_samples for t in train_ds.tasks) == 0:
        raise DataValidationError("empty training set")
    sources = model.arch.sources
    model = model.copy()
    batches = _task_batches(train_ds, sources, loss_cfg)
    state = init_optimizer_state(model, train_cfg)
    rng = np.random.default_rng(train_cfg.seed)
    history = TrainHistory()
    if val_ds is not None:
        history.val_rmse = {t: [] for t in train_ds.tasks}

    use_early = val_ds is not None and train_cfg.early_stop_patience is not None
    best_val = np.inf
    best_params = None
    since_best = 0

    for _ in range(train_cfg.epochs):
        total, data, reg, grads = loss_and_gradients(model, batches, loss_cfg, mode="train", rng=rng)
        state = optimizer_step(model, grads, state, train_cfg)
        history.total_loss.append(total)
        history.data_loss.append(data)
        history.spatial_reg.append(reg)
        if val_ds is not None:
            rmse = _validation_rmse(model, val_ds, sources)
            for t, r in rmse.items():
                history.val_rmse[t].append(r)
            if use_early:
                mean_rmse = float(np.mean(list(rmse.values())))
                if mean_rmse < best_val:
                    best_val = mean_rmse
                    best_params = {k: v.copy() for k, v in model.params.items()}
                    since_best = 0
                else:
                    since_best += 1
                    if since_best >= train_cfg.early_stop_patience:
                        break
    if use_early and best_params is not None:
        model.params = best_params
    return model, history


def write_history_csv(history: TrainHistory, path, tasks: tuple[int, ...] | None = None) -> None:
    """History CSV: epoch,total_loss,data_loss,spatial_reg,val_rmse_<task>..."""
    import csv
    from pathlib import Path

    tasks = tasks if tasks is not None else tuple(sorted(history.val_rmse))
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["epoch", "total_loss", "data_loss", "spatial_reg"]
            + [f"val_rmse_{t}" for t in tasks]
        )
        for i in range(history.epochs_run):
            row = [
                i,
                repr(history.total_loss[i]),
                repr(history.data_loss[i]),
                repr(history.spatial_reg[i]),
            ]
            row += [repr(history.val_rmse[t][i]) for t in tasks]
            writer.writerow(row)
