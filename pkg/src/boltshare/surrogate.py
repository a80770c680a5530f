"""Solver-labelled datasets and a small numpy MLP that predicts unevenness.

The network maps the six design values (three clearances, three torques),
min-max scaled by the fixed design-space bounds, to the unevenness u at the
target load. Training uses mini-batch Adam on a weighted MSE that penalizes
errors on small targets more heavily.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .joint import CLEARANCE_BOUNDS, TORQUE_BOUNDS, BoltParams, JointConfig
from .network import RampConfig, TargetLoadNotReached, unevenness_at_load
from .seeding import substream

log = logging.getLogger(__name__)

DEFAULT_LAYERS = (6, 30, 40, 40, 30, 1)
SPLIT_FRACTIONS = (0.7, 0.1, 0.2)
LOSS_OFFSET = 0.001
MODEL_FORMAT = "boltshare-mlp"
MODEL_VERSION = 1


def design_bounds(n_bolts: int = 3) -> tuple[np.ndarray, np.ndarray]:
    lower = np.array([CLEARANCE_BOUNDS[0]] * n_bolts + [TORQUE_BOUNDS[0]] * n_bolts)
    upper = np.array([CLEARANCE_BOUNDS[1]] * n_bolts + [TORQUE_BOUNDS[1]] * n_bolts)
    return lower, upper


def feature_names(n_bolts: int = 3) -> list[str]:
    return [f"bhc{i}" for i in range(1, n_bolts + 1)] + [f"T{i}" for i in range(1, n_bolts + 1)]


@dataclass(frozen=True)
class Sample:
    inputs: tuple[float, ...]
    u: float


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    train_idx: np.ndarray | None = None
    val_idx: np.ndarray | None = None
    test_idx: np.ndarray | None = None
    rejected: np.ndarray | None = None  # inputs that never reached the target load

    def __len__(self) -> int:
        return len(self.y)

    @property
    def n_bolts(self) -> int:
        return self.X.shape[1] // 2

    @property
    def samples(self) -> list[Sample]:
        return [Sample(tuple(map(float, x)), float(u)) for x, u in zip(self.X, self.y)]

    @property
    def is_split(self) -> bool:
        return self.train_idx is not None

    def split(self, seed: int, fractions=SPLIT_FRACTIONS) -> Dataset:
        """Shuffle-split into train/validation/test index sets."""
        n = len(self)
        if n < 10:
            raise ValueError(f"need at least 10 samples for a 70/10/20 split, got {n}")
        n_train = int(round(fractions[0] * n))
        n_val = int(round(fractions[1] * n))
        perm = substream(seed, "split").permutation(n)
        return Dataset(
            self.X, self.y, self.lower, self.upper,
            train_idx=np.sort(perm[:n_train]),
            val_idx=np.sort(perm[n_train : n_train + n_val]),
            test_idx=np.sort(perm[n_train + n_val :]),
            rejected=self.rejected,
        )

    def part(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        idx = {"train": self.train_idx, "val": self.val_idx, "test": self.test_idx}[name]
        if idx is None:
            raise ValueError("dataset has not been split")
        return self.X[idx], self.y[idx]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(feature_names(self.n_bolts) + ["u"])
            for x, u in zip(self.X, self.y):
                writer.writerow([f"{v:.6g}" for v in x] + [f"{u:.6g}"])

    def write_rejected(self, path: str | Path) -> None:
        rejected = self.rejected if self.rejected is not None else np.empty((0, self.X.shape[1]))
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(feature_names(self.n_bolts))
            for x in rejected:
                writer.writerow([f"{v:.6g}" for v in x])

    @classmethod
    def from_csv(cls, path: str | Path, rejected_path: str | Path | None = None) -> Dataset:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [[float(v) for v in row] for row in reader if row]
        n_bolts = (len(header) - 1) // 2
        if header != feature_names(n_bolts) + ["u"]:
            raise ValueError(f"unexpected dataset header {header}")
        data = np.array(rows, dtype=float).reshape(-1, len(header))
        lower, upper = design_bounds(n_bolts)
        rejected = None
        if rejected_path is not None:
            with open(rejected_path, newline="") as fh:
                reader = csv.reader(fh)
                if next(reader) != feature_names(n_bolts):
                    raise ValueError("rejected-sample file header does not match the dataset")
                rejected = np.array([[float(v) for v in row] for row in reader if row])
                rejected = rejected.reshape(-1, 2 * n_bolts)
        return cls(data[:, :-1], data[:, -1], lower, upper, rejected=rejected)


def rejected_path_for(path: str | Path) -> Path:
    """Sidecar file holding the re-drawn inputs of a dataset CSV."""
    path = Path(path)
    return path.with_name(path.stem + ".rejected.csv")


def _round6(x: np.ndarray) -> np.ndarray:
    # the CSV keeps 6 significant digits; label exactly what gets written
    return np.array([float(f"{v:.6g}") for v in x])


def _label(args) -> float | None:
    cfg, x, target, ramp = args
    try:
        return unevenness_at_load(cfg, BoltParams.from_vector(x), target, ramp).u
    except TargetLoadNotReached:
        return None


def _map(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


def generate_dataset(
    cfg: JointConfig,
    n: int,
    seed: int,
    target: float = 30000.0,
    ramp: RampConfig | None = None,
    jobs: int = 1,
) -> Dataset:
    """Draw ``n`` uniform design points and label each with the solver's unevenness.

    Points whose joint never carries ``target`` within the ramp are re-drawn.
    Acceptance follows draw order, so the result does not depend on ``jobs``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    ramp = ramp or RampConfig()
    lower, upper = design_bounds(cfg.n_bolts)
    rng = substream(seed, "dataset")
    X, y, rejected = [], [], []
    while len(y) < n:
        need = n - len(y)
        batch = [_round6(x) for x in rng.uniform(lower, upper, size=(need, len(lower)))]
        labels = _map(_label, [(cfg, x, target, ramp) for x in batch], jobs)
        for x, u in zip(batch, labels):
            if len(y) >= n:
                break
            if u is None:
                rejected.append(x)
                continue
            X.append(x)
            y.append(u)
    if rejected:
        log.info("re-drew %d samples that never reached %g N", len(rejected), target)
    return Dataset(np.array(X), np.array(y), lower, upper,
                   rejected=np.array(rejected).reshape(-1, len(lower)))


def weighted_mse(pred, target) -> float:
    """Mean of (pred - target)^2 / (target + 0.001)."""
    pred = np.asarray(pred, dtype=float).ravel()
    target = np.asarray(target, dtype=float).ravel()
    if pred.shape != target.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions, {target.size} targets")
    return float(np.mean((pred - target) ** 2 / (target + LOSS_OFFSET)))


def mse(pred, target) -> float:
    pred = np.asarray(pred, dtype=float).ravel()
    target = np.asarray(target, dtype=float).ravel()
    return float(np.mean((pred - target) ** 2))


def r_squared(pred, target) -> float:
    pred = np.asarray(pred, dtype=float).ravel()
    target = np.asarray(target, dtype=float).ravel()
    ss_tot = float(np.sum((target - target.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("R^2 is undefined for zero-variance targets")
    return 1.0 - float(np.sum((pred - target) ** 2)) / ss_tot


@dataclass
class ReachabilityGuard:
    """Logistic classifier on normalized inputs: does the joint carry the target load?

    Fitted on the accepted samples against the re-drawn ones, so the surrogate
    is not trusted where it has never seen data.
    """

    weights: np.ndarray
    bias: float
    threshold: float = 0.5

    @classmethod
    def fit(cls, Z_ok: np.ndarray, Z_bad: np.ndarray, ridge: float = 1e-3, iters: int = 50) -> ReachabilityGuard:
        Z = np.vstack([Z_ok, Z_bad])
        t = np.concatenate([np.ones(len(Z_ok)), np.zeros(len(Z_bad))])
        A = np.column_stack([Z, np.ones(len(Z))])
        beta = np.zeros(A.shape[1])
        reg = ridge * np.eye(A.shape[1])
        reg[-1, -1] = 0.0
        for _ in range(iters):
            p = 1.0 / (1.0 + np.exp(-(A @ beta)))
            H = A.T @ (A * (p * (1.0 - p))[:, None]) + reg
            g = A.T @ (p - t) + reg @ beta
            step = np.linalg.solve(H, g)
            beta -= step
            if np.max(np.abs(step)) < 1e-10:
                break
        return cls(beta[:-1], float(beta[-1]))

    def probability(self, Z: np.ndarray) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-(Z @ self.weights + self.bias)))

    def feasible(self, Z: np.ndarray) -> np.ndarray:
        return self.probability(Z) >= self.threshold


@dataclass
class MLPModel:
    """Fully connected ReLU network; ``weights[k]`` has shape (fan_in, fan_out)."""

    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    lower: np.ndarray
    upper: np.ndarray
    guard: ReachabilityGuard | None = None

    @classmethod
    def initialize(cls, layer_sizes, rng: np.random.Generator, lower, upper) -> MLPModel:
        """Glorot-uniform weights, zero biases."""
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(tuple(layer_sizes), weights, biases, np.asarray(lower, float), np.asarray(upper, float))

    def normalize(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.lower) / (self.upper - self.lower)

    def denormalize(self, Z) -> np.ndarray:
        return np.asarray(Z, dtype=float) * (self.upper - self.lower) + self.lower

    def forward(self, Z: np.ndarray, keep: bool = False):
        """Forward pass on normalized inputs; with ``keep`` also returns layer activations."""
        acts = [Z]
        h = Z
        last = len(self.weights) - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if k < last:
                h = np.maximum(h, 0.0)
            acts.append(h)
        out = h[:, 0]
        return (out, acts) if keep else out

    def gradients(self, Z: np.ndarray, y: np.ndarray):
        """Weighted-MSE loss and its gradients with respect to every weight and bias."""
        out, acts = self.forward(Z, keep=True)
        n = len(y)
        w = 1.0 / (y + LOSS_OFFSET)
        resid = out - y
        loss = float(np.mean(resid**2 * w))
        delta = (2.0 / n) * (resid * w)[:, None]
        gW = [None] * len(self.weights)
        gb = [None] * len(self.weights)
        for k in range(len(self.weights) - 1, -1, -1):
            gW[k] = acts[k].T @ delta
            gb[k] = delta.sum(axis=0)
            if k > 0:
                delta = (delta @ self.weights[k].T) * (acts[k] > 0.0)
        return loss, gW, gb

    def predict(self, X, clip: bool = False):
        """Predicted unevenness for one design vector or a (k, 6) batch."""
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X2 = X[None, :] if single else X
        if np.any(X2 < self.lower - 1e-9) or np.any(X2 > self.upper + 1e-9):
            warnings.warn("input outside the design space; surrogate is extrapolating", stacklevel=2)
        out = self.forward(self.normalize(X2))
        if clip:
            out = np.clip(out, 0.0, 1.0)
        return float(out[0]) if single else out

    def reachable(self, X) -> np.ndarray:
        """Guard verdict per design; all True when no guard was fitted."""
        Z = self.normalize(np.atleast_2d(X))
        if self.guard is None:
            return np.ones(len(Z), dtype=bool)
        return self.guard.feasible(Z)

    def to_dict(self) -> dict:
        data = {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "layer_sizes": list(self.layer_sizes),
            "activation": "relu",
            "input_lower": self.lower.tolist(),
            "input_upper": self.upper.tolist(),
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }
        if self.guard is not None:
            data["reachability"] = {
                "weights": self.guard.weights.tolist(),
                "bias": self.guard.bias,
                "threshold": self.guard.threshold,
            }
        return data

    @classmethod
    def from_dict(cls, data: dict) -> MLPModel:
        import jsonschema

        jsonschema.validate(data, MODEL_SCHEMA)
        sizes = tuple(data["layer_sizes"])
        weights = [np.array(W, dtype=float) for W in data["weights"]]
        biases = [np.array(b, dtype=float) for b in data["biases"]]
        for k, (W, b) in enumerate(zip(weights, biases)):
            if W.shape != (sizes[k], sizes[k + 1]) or b.shape != (sizes[k + 1],):
                raise ValueError(f"layer {k} has inconsistent shapes")
        if len(weights) != len(sizes) - 1:
            raise ValueError("number of weight matrices does not match layer_sizes")
        guard = None
        if "reachability" in data:
            r = data["reachability"]
            guard = ReachabilityGuard(np.array(r["weights"], float), float(r["bias"]), float(r["threshold"]))
        return cls(sizes, weights, biases,
                   np.array(data["input_lower"], float), np.array(data["input_upper"], float), guard)

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> MLPModel:
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


MODEL_SCHEMA = {
    "type": "object",
    "properties": {
        "format": {"const": MODEL_FORMAT},
        "version": {"const": MODEL_VERSION},
        "layer_sizes": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 2},
        "activation": {"const": "relu"},
        "input_lower": {"type": "array", "items": {"type": "number"}},
        "input_upper": {"type": "array", "items": {"type": "number"}},
        "weights": {"type": "array"},
        "biases": {"type": "array"},
        "reachability": {
            "type": "object",
            "properties": {
                "weights": {"type": "array", "items": {"type": "number"}},
                "bias": {"type": "number"},
                "threshold": {"type": "number", "minimum": 0, "maximum": 1},
            },
            "required": ["weights", "bias", "threshold"],
        },
    },
    "required": ["format", "version", "layer_sizes", "input_lower", "input_upper", "weights", "biases"],
}


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 2000
    patience: int = 20
    min_delta: float = 1e-5
    monitor: str = "val"
    restore_best: bool = True
    layer_sizes: tuple[int, ...] = DEFAULT_LAYERS


@dataclass
class EpochRecord:
    epoch: int
    train_wmse: float
    val_wmse: float
    train_mse: float
    val_mse: float


@dataclass
class TrainResult:
    model: MLPModel
    history: list[EpochRecord]
    stopped_early: bool
    best_epoch: int

    def write_metrics(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "train_wmse", "val_wmse", "train_mse", "val_mse"])
            for r in self.history:
                writer.writerow([r.epoch] + [f"{v:.6g}" for v in
                                             (r.train_wmse, r.val_wmse, r.train_mse, r.val_mse)])


class TrainingDiverged(RuntimeError):
    pass


class Adam:
    def __init__(self, params: list[np.ndarray], cfg: TrainConfig):
        self.cfg = cfg
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        c = self.cfg
        self.t += 1
        corr1 = 1.0 - c.beta1**self.t
        corr2 = 1.0 - c.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            p -= c.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + c.epsilon)


def _losses(model: MLPModel, X, y) -> tuple[float, float]:
    pred = model.forward(model.normalize(X))
    return weighted_mse(pred, y), mse(pred, y)


def train(dataset: Dataset, config: TrainConfig | None = None, seed: int = 0) -> TrainResult:
    """Mini-batch Adam with early stopping on the monitored weighted MSE.

    Stops once the monitored loss has failed to improve by more than
    ``min_delta`` for ``patience`` consecutive epochs. Epoch 0 in the history
    is the untrained network.
    """
    config = config or TrainConfig()
    if not dataset.is_split:
        dataset = dataset.split(seed)
    Xtr, ytr = dataset.part("train")
    Xva, yva = dataset.part("val")
    model = MLPModel.initialize(config.layer_sizes, substream(seed, "init"), dataset.lower, dataset.upper)
    shuffle = substream(seed, "shuffle")
    Ztr = model.normalize(Xtr)
    params = model.weights + model.biases
    opt = Adam(params, config)

    def record(epoch):
        tw, tm = _losses(model, Xtr, ytr)
        vw, vm = _losses(model, Xva, yva) if len(yva) else (float("nan"), float("nan"))
        return EpochRecord(epoch, tw, vw, tm, vm)

    history = [record(0)]
    best = history[0].val_wmse if config.monitor == "val" else history[0].train_wmse
    best_epoch, best_params, wait = 0, [p.copy() for p in params], 0
    stopped_early = False
    n_layers = len(model.weights)
    for epoch in range(1, config.max_epochs + 1):
        perm = shuffle.permutation(len(ytr))
        for start in range(0, len(perm), config.batch_size):
            idx = perm[start : start + config.batch_size]
            _, gW, gb = model.gradients(Ztr[idx], ytr[idx])
            opt.step(params, gW + gb)
        rec = record(epoch)
        history.append(rec)
        current = rec.val_wmse if config.monitor == "val" else rec.train_wmse
        if not math.isfinite(rec.train_wmse) or not math.isfinite(current):
            raise TrainingDiverged(
                f"loss became non-finite at epoch {epoch} "
                f"(train {rec.train_wmse!r}, monitored {current!r})"
            )
        if current < best - config.min_delta:
            best, best_epoch, wait = current, epoch, 0
            best_params = [p.copy() for p in params]
        else:
            wait += 1
            if wait >= config.patience:
                stopped_early = True
                break
    if config.restore_best:
        for p, saved in zip(params, best_params):
            p[...] = saved
    model.weights, model.biases = params[:n_layers], params[n_layers:]
    if dataset.rejected is not None and len(dataset.rejected):
        model.guard = ReachabilityGuard.fit(model.normalize(dataset.X), model.normalize(dataset.rejected))
    return TrainResult(model, history, stopped_early, best_epoch)


def predict(model: MLPModel, inputs, clip: bool = False):
    return model.predict(inputs, clip=clip)


@dataclass(frozen=True)
class Metrics:
    mse: float
    wmse: float
    r2: float
    n: int


def evaluate(model: MLPModel, dataset: Dataset) -> dict[str, Metrics]:
    """MSE, weighted MSE and R^2 on every non-empty split (or ``all`` if unsplit)."""
    parts = ("train", "val", "test") if dataset.is_split else ("all",)
    out = {}
    for name in parts:
        X, y = (dataset.X, dataset.y) if name == "all" else dataset.part(name)
        if len(y) == 0:
            continue
        pred = model.forward(model.normalize(X))
        out[name] = Metrics(mse(pred, y), weighted_mse(pred, y), r_squared(pred, y), len(y))
    return out
