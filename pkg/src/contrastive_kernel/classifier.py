"""Bounded-output MLP classifiers for the pair task, trained on the squared loss.

A classifier here is anything with ``logit(x, xp)`` and ``predict(x, xp)``;
``predict`` is ``sigmoid(logit)``. ``ClassifierModel`` is the trainable MLP,
``OracleClassifier`` the exact population optimum for OU potentials.
"""

from __future__ import annotations

import copy as _copy
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .contrastive_data import ContrastSpec, PairDataset
from .diffusion import OUKernel, PotentialSpec, as_points
from .errors import InvalidConfigError, InvalidInputError, TrainingDivergedError, UnsupportedError
from .numerics import as_rng

# expit(36) < 1 in float64, so predictions stay strictly inside (0, 1).
LOGIT_CAP = 36.0


def _pairs(x, xp, d):
    x = as_points(x, d)
    xp = as_points(xp, d)
    if x.shape != xp.shape:
        x, xp = np.broadcast_arrays(x, xp)
    lead = x.shape[:-1]
    x = x.reshape(-1, d)
    xp = xp.reshape(-1, d)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(xp))):
        raise InvalidInputError("classifier inputs must be finite")
    return x, xp, lead


def _act(name):
    if name == "tanh":
        return np.tanh, lambda a: 1.0 - a * a
    if name == "relu":
        return (lambda z: np.maximum(z, 0.0)), (lambda a: (a > 0).astype(float))
    raise InvalidInputError(f"unknown activation {name!r}")


@dataclass(eq=False)
class ClassifierModel:
    """MLP on the concatenated pair ``(x, x')`` with a sigmoid output.

    ``weights[k]`` has shape ``(layer_sizes[k], layer_sizes[k + 1])``.
    """

    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"

    @property
    def d(self) -> int:
        return self.layer_sizes[0] // 2

    @property
    def n_params(self) -> int:
        return int(sum(w.size + b.size for w, b in zip(self.weights, self.biases)))

    def features(self, x: np.ndarray, xp: np.ndarray) -> np.ndarray:
        return np.concatenate([x, xp], axis=1)

    def _forward(self, x, xp):
        act, _ = _act(self.activation)
        acts = [self.features(x, xp)]
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            acts.append(act(acts[-1] @ w + b))
        z = (acts[-1] @ self.weights[-1] + self.biases[-1])[:, 0]
        return z, acts

    def logit(self, x, xp) -> np.ndarray:
        x, xp, lead = _pairs(x, xp, self.d)
        z, _ = self._forward(x, xp)
        return np.clip(z, -LOGIT_CAP, LOGIT_CAP).reshape(lead)

    def predict(self, x, xp) -> np.ndarray:
        return expit(self.logit(x, xp))

    __call__ = predict

    def copy(self) -> "ClassifierModel":
        return _copy.deepcopy(self)

    def get_flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=float)
        if flat.size != self.n_params:
            raise InvalidInputError("flat parameter vector has the wrong length")
        pos = 0
        for arr in [a for pair in zip(self.weights, self.biases) for a in pair]:
            arr[...] = flat[pos:pos + arr.size].reshape(arr.shape)
            pos += arr.size

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(map(int, self.layer_sizes)),
            "activation": self.activation,
            "features": "x,xp",
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ClassifierModel":
        return cls(list(data["layer_sizes"]),
                   [np.asarray(w, dtype=float) for w in data["weights"]],
                   [np.asarray(b, dtype=float) for b in data["biases"]],
                   data.get("activation", "tanh"))

    def save(self, path) -> None:
        # json writes floats with repr(), so a load reproduces every weight bit for bit
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "ClassifierModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def init_model(d: int, hidden=(64, 64), activation: str = "tanh", seed=None,
               zero_last: bool = False) -> ClassifierModel:
    """Glorot-normal weights for tanh, He-normal for relu; zero biases."""
    _act(activation)
    rng = as_rng(seed)
    sizes = [2 * int(d), *map(int, hidden), 1]
    weights, biases = [], []
    for k, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        scale = math.sqrt(2.0 / n_in) if activation == "relu" else math.sqrt(2.0 / (n_in + n_out))
        w = rng.standard_normal((n_in, n_out)) * scale
        if zero_last and k == len(sizes) - 2:
            w[:] = 0.0
        weights.append(w)
        biases.append(np.zeros(n_out))
    return ClassifierModel(sizes, weights, biases, activation)


def forward(model, x, xp) -> np.ndarray:
    """``h(x, x')`` in ``(0, 1)``."""
    return model.predict(x, xp)


def _labels(y) -> np.ndarray:
    y = np.asarray(y)
    if not np.all((y == 0) | (y == 1)):
        raise InvalidInputError("labels must be 0 or 1")
    return y.astype(float)


def l2_loss(model, x, xp, y) -> np.ndarray:
    """Per-pair squared loss ``(h(x, x') - y)^2``."""
    return (model.predict(x, xp) - _labels(y)) ** 2


def backprop(model: ClassifierModel, x, xp, upstream: np.ndarray):
    """Gradients of ``sum_i upstream_i * h(x_i, x'_i)`` with respect to every parameter.

    Returns ``(h, grad_weights, grad_biases)``. The logit cap has zero slope,
    so saturated pairs contribute nothing.
    """
    x, xp, _ = _pairs(x, xp, model.d)
    _, dact = _act(model.activation)
    z, acts = model._forward(x, xp)
    zc = np.clip(z, -LOGIT_CAP, LOGIT_CAP)
    h = expit(zc)
    delta = (np.asarray(upstream, dtype=float).reshape(-1) * h * (1.0 - h)
             * (np.abs(z) < LOGIT_CAP))[:, None]
    gw = [None] * len(model.weights)
    gb = [None] * len(model.biases)
    for k in range(len(model.weights) - 1, -1, -1):
        gw[k] = acts[k].T @ delta
        gb[k] = delta.sum(axis=0)
        if k:
            delta = (delta @ model.weights[k].T) * dact(acts[k])
    return h, gw, gb


def grad_loss(model: ClassifierModel, x, xp, y):
    """Mean batch loss and its exact gradient ``(loss, grad_weights, grad_biases)``."""
    y = _labels(y).reshape(-1)
    if y.size == 0:
        raise InvalidInputError("batch must be non-empty")
    h = model.predict(x, xp).reshape(-1)
    _, gw, gb = backprop(model, x, xp, 2.0 * (h - y) / y.size)
    return float(np.mean((h - y) ** 2)), gw, gb


@dataclass
class TrainConfig:
    """Minibatch SGD with heavy-ball momentum.

    ``schedule="cosine"`` anneals the step size from ``step_size`` to zero over
    the run; ``"exponential"`` uses ``step_size * lr_decay**(e - 1)`` at epoch ``e``.
    """

    step_size: float = 0.05
    momentum: float = 0.9
    batch_size: int = 128
    epochs: int = 40
    seed: int = 0
    holdout_fraction: float = 0.2
    grad_clip: float = 5.0
    lr_decay: float = 0.95
    schedule: str = "cosine"
    restore_best: bool = True

    def __post_init__(self):
        if not self.step_size > 0:
            raise InvalidConfigError("step_size must be positive")
        if not 0.0 <= self.holdout_fraction <= 0.5:
            raise InvalidConfigError("holdout_fraction must lie in [0, 0.5]")
        if int(self.batch_size) < 1 or int(self.epochs) < 0:
            raise InvalidConfigError("batch_size must be >= 1 and epochs >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidConfigError("momentum must lie in [0, 1)")
        if not self.grad_clip > 0 or not 0 < self.lr_decay <= 1:
            raise InvalidConfigError("grad_clip must be positive and lr_decay in (0, 1]")
        if self.schedule not in ("cosine", "exponential"):
            raise InvalidConfigError("schedule must be 'cosine' or 'exponential'")

    def step_at(self, epoch: int, batch_frac: float = 0.0) -> float:
        """Step size during epoch ``epoch`` (1-based), ``batch_frac`` of the way through it."""
        if self.schedule == "exponential":
            return self.step_size * self.lr_decay ** (epoch - 1)
        progress = (epoch - 1 + batch_frac) / max(int(self.epochs), 1)
        return 0.5 * self.step_size * (1.0 + math.cos(math.pi * progress))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    model: ClassifierModel
    train_risk: float
    holdout_risk: float
    initial_risk: float
    best_epoch: int
    loss_curve: list[dict] = field(default_factory=list)


def empirical_risk(model, data: PairDataset) -> float:
    if len(data) == 0:
        return float("nan")
    return float(np.mean(l2_loss(model, data.x, data.xp, data.labels)))


def train(model: ClassifierModel, dataset: PairDataset, cfg: TrainConfig | None = None) -> TrainResult:
    """Minimise the empirical squared loss; the input model is left untouched.

    ``loss_curve`` has one row per epoch, starting with epoch 0 (before any
    update). With ``restore_best`` the returned model is the epoch with the
    lowest holdout risk (training risk if there is no holdout).
    """
    cfg = cfg or TrainConfig()
    if len(dataset) == 0:
        raise InvalidInputError("dataset must be non-empty")
    rng = as_rng(cfg.seed)
    tr, ho = dataset.split(cfg.holdout_fraction)
    if len(tr) == 0:
        raise InvalidInputError("training split is empty")
    model = model.copy()
    vel_w = [np.zeros_like(w) for w in model.weights]
    vel_b = [np.zeros_like(b) for b in model.biases]

    def record(epoch):
        row = {"epoch": epoch, "train_risk": empirical_risk(model, tr),
               "holdout_risk": empirical_risk(model, ho)}
        curve.append(row)
        return row

    curve: list[dict] = []
    first = record(0)
    initial = first["train_risk"]
    score = "holdout_risk" if len(ho) else "train_risk"
    best = (first[score], 0, model.copy())
    n_bad = 0
    for epoch in range(1, int(cfg.epochs) + 1):
        order = rng.permutation(len(tr))
        for start in range(0, len(tr), int(cfg.batch_size)):
            lr = cfg.step_at(epoch, start / len(tr))
            idx = order[start:start + int(cfg.batch_size)]
            _, gw, gb = grad_loss(model, tr.x[idx], tr.xp[idx], tr.labels[idx])
            norm = math.sqrt(sum(float(np.sum(g * g)) for g in gw + gb))
            scale = min(1.0, cfg.grad_clip / norm) if norm > 0 else 1.0
            for k in range(len(model.weights)):
                vel_w[k] = cfg.momentum * vel_w[k] - lr * scale * gw[k]
                vel_b[k] = cfg.momentum * vel_b[k] - lr * scale * gb[k]
                model.weights[k] += vel_w[k]
                model.biases[k] += vel_b[k]
        row = record(epoch)
        if not math.isfinite(row["train_risk"]):
            raise TrainingDivergedError(f"non-finite training risk at epoch {epoch}")
        n_bad = n_bad + 1 if row["train_risk"] > 10.0 * initial else 0
        if n_bad >= 3:
            raise TrainingDivergedError(
                f"training risk above 10x its initial value for 3 epochs (epoch {epoch})")
        if row[score] < best[0]:
            best = (row[score], epoch, model.copy())

    if cfg.restore_best:
        _, best_epoch, model = best
    else:
        best_epoch = int(cfg.epochs)
    return TrainResult(
        model=model, train_risk=empirical_risk(model, tr), holdout_risk=empirical_risk(model, ho),
        initial_risk=initial, best_epoch=best_epoch, loss_curve=curve,
    )


class OracleClassifier:
    """Population optimum ``h* = p* / (p* + q)`` for an OU potential."""

    def __init__(self, spec: PotentialSpec, contrast: ContrastSpec, eta: float):
        if not spec.is_ou:
            raise UnsupportedError("the oracle classifier needs the exact OU kernel")
        if contrast.d != spec.d:
            raise InvalidInputError("contrast and potential dimensions differ")
        self.spec = spec
        self.contrast = contrast
        self.eta = float(eta)
        self.kernel = OUKernel(spec, eta)

    @property
    def d(self) -> int:
        return self.spec.d

    def logit(self, x, xp) -> np.ndarray:
        x = as_points(x, self.d)
        xp = as_points(xp, self.d)
        return self.kernel.log_density(x, xp) - self.contrast.log_density(xp, x)

    def predict(self, x, xp) -> np.ndarray:
        return expit(self.logit(x, xp))

    __call__ = predict


def oracle_classifier(spec: PotentialSpec, contrast: ContrastSpec, eta: float) -> OracleClassifier:
    return OracleClassifier(spec, contrast, eta)


class ConstantClassifier:
    """``h(x, x') = c`` everywhere."""

    def __init__(self, value: float, d: int = 1):
        if not 0.0 <= value <= 1.0:
            raise InvalidInputError("constant must lie in [0, 1]")
        self.value = float(value)
        self.d = int(d)

    def logit(self, x, xp) -> np.ndarray:
        x = as_points(x, self.d)
        if self.value in (0.0, 1.0):
            z = math.copysign(math.inf, self.value - 0.5)
        else:
            z = math.log(self.value) - math.log1p(-self.value)
        return np.full(x.shape[:-1], z)

    def predict(self, x, xp) -> np.ndarray:
        return np.full(as_points(x, self.d).shape[:-1], self.value)

    __call__ = predict
