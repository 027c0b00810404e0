"""Multi-task network: per-source sigmoid extractors, a shared dense
layer over the concatenated latents, and per-task heads of
(dense + dropout) sigmoid layers ending in a linear unit.

Weights are stored input-major, shape (d_in, d_out); a batch of samples is
a matrix with one row per region. Gradients are hand-derived; no autodiff.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import DataValidationError


def sigmoid(x):
    """Logistic function, stable across the full float range."""
    x = np.asarray(x, dtype=float)
    out = expit(x)
    return float(out) if out.ndim == 0 else out


def dense_forward(x, W, b, activation: str = "sigmoid"):
    """One dense layer: activation(x @ W + b), x is (d,) or (n, d)."""
    x = np.asarray(x, dtype=float)
    W = np.asarray(W, dtype=float)
    b = np.asarray(b, dtype=float)
    if x.shape[-1] != W.shape[0] or W.shape[1] != b.shape[0]:
        raise DataValidationError(
            f"dimension mismatch: x {x.shape}, W {W.shape}, b {b.shape}"
        )
    z = x @ W + b
    if activation == "sigmoid":
        return sigmoid(z)
    if activation == "linear":
        return z
    raise DataValidationError(f"unknown activation {activation!r}")


def concat_features(latents: list[np.ndarray]) -> np.ndarray:
    """Concatenate per-source latent blocks along the feature axis."""
    if len(latents) == 0:
        raise DataValidationError("no latent features to concatenate")
    return np.concatenate([np.asarray(p, dtype=float) for p in latents], axis=-1)


@dataclass(frozen=True)
class MtlArch:
    """Layer sizes; ``source_dims`` fixes the source order used for
    concatenation (soil, spectral, ndvi, weather when all present)."""

    source_dims: tuple[tuple[str, int], ...]
    extractor_width: int = 16
    shared_width: int = 32
    head_widths: tuple[int, ...] = (32, 16)
    dropout: float = 0.2

    def __post_init__(self):
        if not self.source_dims:
            raise DataValidationError("at least one source required")
        for name, d in self.source_dims:
            if d < 1:
                raise DataValidationError(f"source {name!r} has width {d}")
        if not (0 <= self.dropout < 1):
            raise DataValidationError(f"dropout must lie in [0, 1), got {self.dropout}")

    @property
    def sources(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.source_dims)

    @property
    def concat_width(self) -> int:
        return self.extractor_width * len(self.source_dims)


class MtlModel:
    """Parameter container; see ``param_names`` for the canonical order."""

    def __init__(self, arch: MtlArch, tasks: tuple[int, ...], params: dict[str, np.ndarray]):
        self.arch = arch
        self.tasks = tuple(tasks)
        self.params = params

    def param_names(self) -> list[str]:
        names = []
        for s in self.arch.sources:
            names += [f"ext.{s}.W", f"ext.{s}.b"]
        names += ["shared.W", "shared.b"]
        for t in self.tasks:
            for i in range(len(self.arch.head_widths)):
                names += [f"head.{t}.h{i}.W", f"head.{t}.h{i}.b"]
            names += [f"head.{t}.out.W", f"head.{t}.out.b"]
        return names

    def copy(self) -> "MtlModel":
        return MtlModel(self.arch, self.tasks, {k: v.copy() for k, v in self.params.items()})

    def zero_gradients(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}


def _glorot(rng: np.random.Generator, d_in: int, d_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-limit, limit, size=(d_in, d_out))


def init_model(arch: MtlArch, tasks: tuple[int, ...], seed: int) -> MtlModel:
    """Seeded init: hidden weights uniform in +-sqrt(6/(fan_in+fan_out));
    biases and the 1-unit linear output weights start at zero.

    Zero output weights keep early dropout noise (which scales with their
    magnitude) from burying the regression signal; random large output
    weights reliably stall full-batch training on a long plateau. Draws
    happen in ``param_names`` order, so the same seed always yields the
    same parameters.
    """
    if len(tasks) == 0:
        raise DataValidationError("model needs at least one task")
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for s, d in arch.source_dims:
        params[f"ext.{s}.W"] = _glorot(rng, d, arch.extractor_width)
        params[f"ext.{s}.b"] = np.zeros(arch.extractor_width)
    params["shared.W"] = _glorot(rng, arch.concat_width, arch.shared_width)
    params["shared.b"] = np.zeros(arch.shared_width)
    for t in sorted(tasks):
        prev = arch.shared_width
        for i, w in enumerate(arch.head_widths):
            params[f"head.{t}.h{i}.W"] = _glorot(rng, prev, w)
            params[f"head.{t}.h{i}.b"] = np.zeros(w)
            prev = w
        params[f"head.{t}.out.W"] = np.zeros(prev)
        params[f"head.{t}.out.b"] = np.zeros(1)
    return MtlModel(arch, tuple(sorted(tasks)), params)


def forward(
    model: MtlModel,
    feats: dict[str, np.ndarray],
    task: int,
    mode: str = "infer",
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, dict]:
    """Run extractors -> concat -> shared layer -> task head.

    In train mode each head dropout layer zeroes units with probability
    ``arch.dropout`` and scales survivors by 1/(1-rate) (inverted dropout);
    inference applies no dropout. Returns normalized-space predictions of
    shape (n,) and the activation cache needed by ``backward``.
    """
    if task not in model.tasks:
        raise DataValidationError(f"unknown task {task!r}; model has {list(model.tasks)}")
    if mode not in ("train", "infer"):
        raise DataValidationError(f"mode must be 'train' or 'infer', got {mode!r}")
    arch = model.arch
    if set(feats) != set(arch.sources):
        raise DataValidationError(
            f"feature sources {sorted(feats)} do not match model sources {sorted(arch.sources)}"
        )
    p = model.params
    rate = arch.dropout if mode == "train" else 0.0
    if rate > 0 and rng is None:
        raise DataValidationError("train-mode forward with dropout needs an rng")

    xs = {}
    latents = []
    for s, d in arch.source_dims:
        x = np.asarray(feats[s], dtype=float)
        if x.ndim != 2 or x.shape[1] != d:
            raise DataValidationError(f"source {s!r}: expected (n, {d}) matrix, got {x.shape}")
        xs[s] = x
        latents.append(sigmoid(x @ p[f"ext.{s}.W"] + p[f"ext.{s}.b"]))
    v = concat_features(latents)
    a_shared = sigmoid(v @ p["shared.W"] + p["shared.b"])

    h = a_shared
    head_cache = []
    for i in range(len(arch.head_widths)):
        s_act = sigmoid(h @ p[f"head.{task}.h{i}.W"] + p[f"head.{task}.h{i}.b"])
        if rate > 0:
            scale = (rng.random(s_act.shape) >= rate) / (1.0 - rate)
        else:
            scale = None
        h = s_act if scale is None else s_act * scale
        head_cache.append({"sig": s_act, "out": h, "scale": scale})
    yhat = h @ p[f"head.{task}.out.W"] + p[f"head.{task}.out.b"][0]

    cache = {
        "task": task,
        "xs": xs,
        "latents": latents,
        "v": v,
        "a_shared": a_shared,
        "head": head_cache,
    }
    return yhat, cache


def backward(
    model: MtlModel,
    runs: list[tuple[dict, np.ndarray]],
    grads: dict[str, np.ndarray] | None = None,
) -> dict[str, np.ndarray]:
    """Backpropagate loss gradients w.r.t. predictions through the network.

    ``runs`` pairs each forward cache with d(loss)/d(yhat) for that batch.
    Shared-layer and extractor gradients accumulate across all task runs.
    """
    arch = model.arch
    p = model.params
    if grads is None:
        grads = model.zero_gradients()
    for cache, dyhat in runs:
        if "v" not in cache:
            raise DataValidationError("forward cache missing or incomplete")
        t = cache["task"]
        dyhat = np.asarray(dyhat, dtype=float)

        last = cache["head"][-1]["out"] if cache["head"] else cache["a_shared"]
        grads[f"head.{t}.out.W"] += last.T @ dyhat
        grads[f"head.{t}.out.b"] += np.array([dyhat.sum()])
        d_out = np.outer(dyhat, p[f"head.{t}.out.W"])

        for i in range(len(arch.head_widths) - 1, -1, -1):
            layer = cache["head"][i]
            d_sig = d_out if layer["scale"] is None else d_out * layer["scale"]
            s_act = layer["sig"]
            dz = d_sig * s_act * (1.0 - s_act)
            prev = cache["head"][i - 1]["out"] if i > 0 else cache["a_shared"]
            grads[f"head.{t}.h{i}.W"] += prev.T @ dz
            grads[f"head.{t}.h{i}.b"] += dz.sum(axis=0)
            d_out = dz @ p[f"head.{t}.h{i}.W"].T

        a = cache["a_shared"]
        dz_shared = d_out * a * (1.0 - a)
        grads["shared.W"] += cache["v"].T @ dz_shared
        grads["shared.b"] += dz_shared.sum(axis=0)
        d_v = dz_shared @ p["shared.W"].T

        offset = 0
        for (s, _), latent in zip(arch.source_dims, cache["latents"]):
            w = arch.extractor_width
            d_lat = d_v[:, offset : offset + w]
            offset += w
            dz = d_lat * latent * (1.0 - latent)
            grads[f"ext.{s}.W"] += cache["xs"][s].T @ dz
            grads[f"ext.{s}.b"] += dz.sum(axis=0)
    return grads
