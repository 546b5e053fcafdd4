"""Sensing function: Monte Carlo training data and a one-hidden-layer MLP.

Inputs are z-scored with training statistics and optionally whitened (ZCA),
which removes the strong correlation between neighbouring frequency samples
that slows plain gradient descent on noise-free data. Outputs are min-max
scaled to [0, 1] over the configured condition ranges. All of it is stored
in the model so that :func:`forward` maps raw dBm spectra to condition units.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import ChannelParams, FrequencyGrid, substream
from .circuit import SensorCircuitParams
from .discernibility import ConditionGrid, expected_spectra
from .errors import ConfigError, DomainError, TrainingError

MODEL_FORMAT = "metaiot-mlp"
MODEL_VERSION = 1
ACTIVATIONS = ("sigmoid", "tanh", "relu", "softmax")


# ---------------------------------------------------------------- datasets

@dataclass
class Dataset:
    powers: np.ndarray  # (N, N_F) dBm
    conditions: np.ndarray  # (N, N_T)
    cond_index: np.ndarray  # (N,)
    meas_index: np.ndarray  # (N,)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.powers = np.atleast_2d(np.asarray(self.powers, dtype=float))
        self.conditions = np.atleast_2d(np.asarray(self.conditions, dtype=float))
        self.cond_index = np.asarray(self.cond_index, dtype=int)
        self.meas_index = np.asarray(self.meas_index, dtype=int)
        n = self.powers.shape[0]
        if not (self.conditions.shape[0] == self.cond_index.size == self.meas_index.size == n):
            raise DomainError("dataset arrays disagree on the number of records")
        if not np.all(np.isfinite(self.powers)):
            raise DomainError("dataset contains non-finite powers")

    def __len__(self) -> int:
        return self.powers.shape[0]

    @property
    def n_freq(self) -> int:
        return self.powers.shape[1]

    @property
    def n_targets(self) -> int:
        return self.conditions.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.powers[idx], self.conditions[idx], self.cond_index[idx], self.meas_index[idx],
                       dict(self.metadata))

    def to_csv(self, path) -> None:
        """Write ``cond_1..cond_NT,meas_idx,p_1_db..p_NF_db`` with ``#`` metadata lines."""
        with open(path, "w", newline="") as fh:
            fh.write("# power unit: dBm (reference 1 mW)\n")
            for k in sorted(self.metadata):
                fh.write(f"# {k}: {json.dumps(self.metadata[k], sort_keys=True)}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([*[f"cond_{k + 1}" for k in range(self.n_targets)], "meas_idx",
                        *[f"p_{i + 1}_db" for i in range(self.n_freq)]])
            for c, m, p in zip(self.conditions, self.meas_index, self.powers):
                w.writerow([*map(repr, c.tolist()), int(m), *map(repr, p.tolist())])

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        meta: dict = {}
        with open(path, newline="") as fh:
            lines = fh.read().splitlines()
        body = []
        for line in lines:
            if line.startswith("#"):
                key, sep, value = line[1:].strip().partition(": ")
                if sep and key != "power unit":
                    meta[key] = json.loads(value)
            elif line:
                body.append(line)
        rows = list(csv.reader(body))
        header = rows[0]
        try:
            m = header.index("meas_idx")
        except ValueError:
            raise ConfigError(f"{path}: missing meas_idx column") from None
        data = np.array(rows[1:], dtype=float).reshape(len(rows) - 1, len(header))
        conditions = data[:, :m]
        # records keep the order they were written in; condition ids follow first appearance
        _, first, inverse = np.unique(conditions, axis=0, return_index=True, return_inverse=True)
        rank = np.argsort(np.argsort(first))
        return cls(data[:, m + 1:], conditions, rank[inverse.ravel()], data[:, m].astype(int), meta)


def generate_dataset(d, grid: ConditionGrid, cp: ChannelParams, fgrid: FrequencyGrid,
                     circuit: SensorCircuitParams, n_meas: int, seed: int) -> Dataset:
    """Noisy spectra ``tau*(c_j) + e`` for every condition and measurement.

    The noise of record ``(j, m)`` comes from its own substream of ``seed``,
    so datasets for different structures share identical noise draws.
    """
    if n_meas < 1:
        raise ConfigError("n_meas must be >= 1")
    tau = expected_spectra(d, grid, cp, fgrid, circuit)
    n_c, n_f = tau.shape
    powers = np.repeat(tau, n_meas, axis=0)
    if cp.noise_db > 0:
        noise = np.empty_like(powers)
        for j in range(n_c):
            for m in range(n_meas):
                noise[j * n_meas + m] = substream(seed, j, m).normal(0.0, cp.noise_db, n_f)
        powers = powers + noise
    meta = {"seed": int(seed), "structure_mm": [float(x) for x in np.asarray(d)], "noise_db": cp.noise_db,
            "power_w": cp.power_w, "distance_m": cp.distance_m}
    return Dataset(powers, np.repeat(grid.points, n_meas, axis=0), np.repeat(np.arange(n_c), n_meas),
                   np.tile(np.arange(n_meas), n_c), meta)


# ---------------------------------------------------------------- model

def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "softmax":
        e = np.exp(z - z.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)
    raise ConfigError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def _activate_backward(z: np.ndarray, h: np.ndarray, grad_h: np.ndarray, kind: str) -> np.ndarray:
    if kind == "sigmoid":
        return grad_h * h * (1.0 - h)
    if kind == "tanh":
        return grad_h * (1.0 - h**2)
    if kind == "relu":
        return grad_h * (z > 0)
    # softmax over the hidden layer: J^T g = h * (g - <g, h>)
    return h * (grad_h - np.sum(grad_h * h, axis=-1, keepdims=True))


@dataclass
class SensingModel:
    w1: np.ndarray  # (N_W, N_F)
    b1: np.ndarray  # (N_W,)
    w2: np.ndarray  # (N_T, N_W)
    b2: np.ndarray  # (N_T,)
    activation: str = "sigmoid"
    in_mean: np.ndarray | None = None
    in_std: np.ndarray | None = None
    out_min: np.ndarray | None = None
    out_max: np.ndarray | None = None
    target_names: tuple[str, ...] = ()
    target_units: tuple[str, ...] = ()
    in_whiten: np.ndarray | None = None  # (N_F, N_F), applied after z-scoring

    def __post_init__(self):
        self.w1 = np.asarray(self.w1, dtype=float)
        self.b1 = np.asarray(self.b1, dtype=float)
        self.w2 = np.asarray(self.w2, dtype=float)
        self.b2 = np.asarray(self.b2, dtype=float)
        n_w, n_f = self.w1.shape
        n_t = self.w2.shape[0]
        if self.b1.shape != (n_w,) or self.w2.shape != (n_t, n_w) or self.b2.shape != (n_t,):
            raise DomainError("inconsistent layer shapes")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        self.in_mean = np.zeros(n_f) if self.in_mean is None else np.asarray(self.in_mean, dtype=float)
        self.in_std = np.ones(n_f) if self.in_std is None else np.asarray(self.in_std, dtype=float)
        self.out_min = np.zeros(n_t) if self.out_min is None else np.asarray(self.out_min, dtype=float)
        self.out_max = np.ones(n_t) if self.out_max is None else np.asarray(self.out_max, dtype=float)
        if self.in_mean.shape != (n_f,) or self.in_std.shape != (n_f,):
            raise DomainError("input normalisation does not match the input size")
        if self.out_min.shape != (n_t,) or self.out_max.shape != (n_t,):
            raise DomainError("output normalisation does not match the output size")
        if self.in_whiten is not None:
            self.in_whiten = np.asarray(self.in_whiten, dtype=float)
            if self.in_whiten.shape != (n_f, n_f) or not np.all(np.isfinite(self.in_whiten)):
                raise DomainError("whitening matrix must be finite with shape (N_F, N_F)")
        if np.any(self.in_std <= 0) or not np.all(np.isfinite(self.in_std)) or not np.all(np.isfinite(self.in_mean)):
            raise DomainError("input std must be positive and finite")
        if not (np.all(np.isfinite(self.out_min)) and np.all(np.isfinite(self.out_max))):
            raise DomainError("output range must be finite")
        if np.any(self.out_max < self.out_min):
            raise DomainError("output range needs out_max >= out_min")
        self.target_names, self.target_units = tuple(self.target_names), tuple(self.target_units)
        if len(self.target_names) not in (0, n_t) or len(self.target_units) not in (0, n_t):
            raise DomainError("target names and units must match the output size")

    @property
    def sizes(self) -> tuple[int, int, int]:
        return self.w1.shape[1], self.w1.shape[0], self.w2.shape[0]

    @classmethod
    def initialize(cls, n_in: int, n_hidden: int, n_out: int, rng: np.random.Generator,
                   activation: str = "sigmoid", **norm) -> "SensingModel":
        """Glorot-uniform weights and zero biases."""
        a1 = math.sqrt(6.0 / (n_in + n_hidden))
        a2 = math.sqrt(6.0 / (n_hidden + n_out))
        return cls(rng.uniform(-a1, a1, (n_hidden, n_in)), np.zeros(n_hidden),
                   rng.uniform(-a2, a2, (n_out, n_hidden)), np.zeros(n_out), activation, **norm)

    # flat parameter vector w = [w1, b1, w2, b2]
    def get_params(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2.ravel(), self.b2])

    def set_params(self, w: np.ndarray) -> None:
        n_f, n_w, n_t = self.sizes
        w = np.asarray(w, dtype=float)
        cuts = np.cumsum([n_w * n_f, n_w, n_t * n_w])
        if w.size != cuts[-1] + n_t:
            raise DomainError(f"parameter vector has {w.size} entries, expected {cuts[-1] + n_t}")
        self.w1 = w[:cuts[0]].reshape(n_w, n_f).copy()
        self.b1 = w[cuts[0]:cuts[1]].copy()
        self.w2 = w[cuts[1]:cuts[2]].reshape(n_t, n_w).copy()
        self.b2 = w[cuts[2]:].copy()

    def copy(self) -> "SensingModel":
        return SensingModel(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy(), self.activation,
                            self.in_mean.copy(), self.in_std.copy(), self.out_min.copy(), self.out_max.copy(),
                            self.target_names, self.target_units,
                            None if self.in_whiten is None else self.in_whiten.copy())

    def normalize_input(self, p: np.ndarray) -> np.ndarray:
        x = (p - self.in_mean) / self.in_std
        return x if self.in_whiten is None else x @ self.in_whiten

    def normalize_output(self, c: np.ndarray) -> np.ndarray:
        # a constant target (zero range) normalises to 0 and denormalises back exactly
        scale = self.out_max - self.out_min
        return np.divide(c - self.out_min, scale, out=np.zeros(np.broadcast_shapes(np.shape(c), scale.shape)),
                         where=scale > 0)

    def denormalize_output(self, y: np.ndarray) -> np.ndarray:
        return self.out_min + y * (self.out_max - self.out_min)

    def _forward_normalized(self, x: np.ndarray):
        z = x @ self.w1.T + self.b1
        h = _activate(z, self.activation)
        return z, h, h @ self.w2.T + self.b2

    def save(self, path) -> None:
        Path(path).write_text(model_to_text(self))

    @classmethod
    def load(cls, path) -> "SensingModel":
        return model_from_text(Path(path).read_text())


def forward(model: SensingModel, p) -> np.ndarray:
    """Condition estimate(s) for one spectrum ``(N_F,)`` or a batch ``(B, N_F)``."""
    p = np.asarray(p, dtype=float)
    if p.shape[-1:] != (model.sizes[0],) or p.ndim > 2:
        raise DomainError(f"expected spectra with {model.sizes[0]} samples, got shape {p.shape}")
    _, _, y = model._forward_normalized(model.normalize_input(p))
    return model.denormalize_output(y)


def model_to_text(model: SensingModel) -> str:
    """JSON text; floats are written with ``repr`` and round-trip exactly."""
    n_f, n_w, n_t = model.sizes
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "layers": [n_f, n_w, n_t],
        "activation": model.activation,
        "input_mean": model.in_mean.tolist(),
        "input_std": model.in_std.tolist(),
        "output_min": model.out_min.tolist(),
        "output_max": model.out_max.tolist(),
        "w1": model.w1.tolist(),
        "b1": model.b1.tolist(),
        "w2": model.w2.tolist(),
        "b2": model.b2.tolist(),
        "target_names": list(model.target_names),
        "target_units": list(model.target_units),
        "input_whiten": None if model.in_whiten is None else model.in_whiten.tolist(),
    }
    return json.dumps(doc, indent=1) + "\n"


def model_from_text(text: str) -> SensingModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"model file is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ConfigError("not a sensing model file")
    if doc.get("version") != MODEL_VERSION:
        raise ConfigError(f"unsupported model version {doc.get('version')}")
    try:
        model = SensingModel(np.array(doc["w1"], dtype=float).reshape(doc["layers"][1], doc["layers"][0]),
                             doc["b1"], np.array(doc["w2"], dtype=float).reshape(doc["layers"][2], doc["layers"][1]),
                             doc["b2"], doc["activation"], doc["input_mean"], doc["input_std"],
                             doc["output_min"], doc["output_max"], tuple(doc.get("target_names", ())),
                             tuple(doc.get("target_units", ())), doc.get("input_whiten"))
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"malformed model file: {exc}") from None
    return model


# ---------------------------------------------------------------- loss and gradients

def rmse(model: SensingModel, ds: Dataset) -> float:
    """Per-element RMSE in condition units."""
    if len(ds) == 0:
        raise ValueError("rmse of an empty dataset")
    err = forward(model, ds.powers) - ds.conditions
    return math.sqrt(float(np.sum(err**2)) / err.size)


def batch_loss(model: SensingModel, p: np.ndarray, c: np.ndarray) -> float:
    """Mean squared error in normalised output space, averaged over records and targets."""
    _, _, y = model._forward_normalized(model.normalize_input(p))
    return float(np.mean((y - model.normalize_output(c)) ** 2))


def _backprop(model: SensingModel, x: np.ndarray, t: np.ndarray):
    """Residuals and per-layer gradients of the mean squared loss."""
    z, h, y = model._forward_normalized(x)
    r = y - t
    g_y = r * (2.0 / r.size)
    g_z = _activate_backward(z, h, g_y @ model.w2, model.activation)
    return r, (g_z.T @ x, g_z.sum(axis=0), g_y.T @ h, g_y.sum(axis=0))


def _loss_and_grad(model: SensingModel, x: np.ndarray, t: np.ndarray):
    r, grads = _backprop(model, x, t)
    return float(np.mean(r**2)), np.concatenate([g.ravel() for g in grads])


def gradient(model: SensingModel, p, c) -> np.ndarray:
    """Backpropagated gradient of :func:`batch_loss` over the flat parameters."""
    p = np.atleast_2d(np.asarray(p, dtype=float))
    c = np.atleast_2d(np.asarray(c, dtype=float))
    if p.shape[0] == 0:
        raise ValueError("gradient of an empty batch")
    n_f, _, n_t = model.sizes
    if p.shape[1] != n_f or c.shape != (p.shape[0], n_t):
        raise DomainError("batch dimensions do not match the model")
    return _loss_and_grad(model, model.normalize_input(p), model.normalize_output(c))[1]


# ---------------------------------------------------------------- training

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 2000
    batch_size: int | None = None  # None = full batch
    seed: int = 0
    validation_fraction: float = 0.0
    hidden: int = 64
    activation: str = "sigmoid"
    loss: str = "mse"  # descend the gradient of "mse" or "rmse"
    whiten: bool = False

    def __post_init__(self):
        if not 0 <= self.learning_rate <= 1:
            raise ConfigError("learning rate must lie in [0, 1]")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch size must be positive")
        if not 0 <= self.validation_fraction < 1:
            raise ConfigError("validation fraction must lie in [0, 1)")
        if self.hidden < 1:
            raise ConfigError("hidden layer needs at least one node")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.loss not in ("rmse", "mse"):
            raise ConfigError("loss must be 'rmse' or 'mse'")


def _descend(params, grads, r: np.ndarray, cfg: TrainConfig) -> None:
    step = cfg.learning_rate
    if cfg.loss == "rmse":
        # grad sqrt(L) = grad L / (2 sqrt(L))
        mse = float(np.mean(r**2))
        step = step / (2.0 * math.sqrt(mse)) if mse > 0 else 0.0
    for prm, g in zip(params, grads):
        prm -= step * g


def zca_matrix(x: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    """Symmetric whitening matrix ``V diag(lambda^-1/2) V^T`` of centred rows ``x``.

    Eigenvalues below ``floor * max(lambda)`` are clamped there, so directions
    without variance are not blown up. Invariant to eigenvector signs.
    """
    lam, v = np.linalg.eigh(x.T @ x / x.shape[0])
    top = lam[-1] if lam.size and lam[-1] > 0 else 1.0
    return (v / np.sqrt(np.maximum(lam, floor * top))) @ v.T


@dataclass
class TrainResult:
    model: SensingModel
    history: list[dict]
    best_epoch: int


def train(ds: Dataset, cfg: TrainConfig, out_range: tuple | None = None) -> TrainResult:
    """Plain gradient descent ``w <- w - beta * grad``, keeping the best-validation weights.

    ``out_range`` is ``(lower, upper)`` per target; defaults to the dataset's
    condition extremes. Epoch 0 in the history is the initial model.
    """
    if len(ds) == 0:
        raise ValueError("cannot train on an empty dataset")
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(ds))
    n_val = int(round(cfg.validation_fraction * len(ds)))
    val = ds.subset(np.sort(order[:n_val])) if n_val else None
    tr = ds.subset(np.sort(order[n_val:])) if n_val else ds

    lo, hi = (ds.conditions.min(axis=0), ds.conditions.max(axis=0)) if out_range is None else map(np.asarray, out_range)
    mean, std = tr.powers.mean(axis=0), tr.powers.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    model = SensingModel.initialize(ds.n_freq, cfg.hidden, ds.n_targets, rng, cfg.activation,
                                    in_mean=mean, in_std=std, out_min=np.asarray(lo, float),
                                    out_max=np.asarray(hi, float))
    if cfg.whiten:
        model.in_whiten = zca_matrix((tr.powers - mean) / std)
    x = model.normalize_input(tr.powers)
    t = model.normalize_output(tr.conditions)
    batch = len(tr) if cfg.batch_size is None else min(cfg.batch_size, len(tr))

    def score(m: SensingModel) -> tuple[float, float | None]:
        return rmse(m, tr), (rmse(m, val) if val is not None else None)

    scale = model.out_max - model.out_min
    params = (model.w1, model.b1, model.w2, model.b2)
    full = batch == len(tr)
    if full:
        # one backprop serves both an epoch's score and the next update
        r, grads = _backprop(model, x, t)
        train_rmse = math.sqrt(float(np.mean((r * scale) ** 2)))
        val_rmse = rmse(model, val) if val is not None else None
    else:
        train_rmse, val_rmse = score(model)
    history = [{"epoch": 0, "train_rmse": train_rmse, "val_rmse": val_rmse}]
    best_key = val_rmse if val is not None else train_rmse
    best_w, best_epoch = model.get_params(), 0

    for epoch in range(1, cfg.epochs + 1):
        if full:
            _descend(params, grads, r, cfg)
            r, grads = _backprop(model, x, t)
            train_rmse = math.sqrt(float(np.mean((r * scale) ** 2)))
            val_rmse = rmse(model, val) if val is not None else None
        else:
            idx = rng.permutation(len(tr))
            for start in range(0, len(tr), batch):
                sel = idx[start:start + batch]
                rb, gb = _backprop(model, x[sel], t[sel])
                _descend(params, gb, rb, cfg)
            train_rmse, val_rmse = score(model)
        if not all(np.all(np.isfinite(prm)) for prm in params) or not math.isfinite(train_rmse):
            raise TrainingError(f"training diverged at epoch {epoch} (learning rate {cfg.learning_rate})")
        history.append({"epoch": epoch, "train_rmse": train_rmse, "val_rmse": val_rmse})
        key = val_rmse if val is not None else train_rmse
        if key < best_key:
            best_key, best_w, best_epoch = key, model.get_params(), epoch

    model.set_params(best_w)
    return TrainResult(model=model, history=history, best_epoch=best_epoch)
