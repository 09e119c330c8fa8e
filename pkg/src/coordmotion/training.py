"""Loss, Adam, learning-rate schedule, training loop and checkpoints."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import SampleWindow, stack_windows
from .model import ModelConfig, init_params, network_forward
from .params import ParameterStore
from .tensor import Tensor, as_tensor, reduce_mean, row_norm, sub

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CHECKPOINT_NAME = "last.ckpt.json"
LOSS_LOG_NAME = "loss_log.csv"


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    lr0: float = 5e-4
    decay: float = 0.96
    lr_floor_epoch: int = 4
    lr_floor: float = 1e-4
    batch: int = 16
    epochs: int = 20
    seed: int = 0
    grad_clip: Optional[float] = None

    def __post_init__(self):
        if min(self.lr0, self.decay, self.lr_floor) <= 0:
            raise ValueError("learning rates and decay must be positive")
        if self.batch < 1 or self.epochs < 0:
            raise ValueError("batch >= 1 and epochs >= 0 required")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive when set")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig fields: {sorted(unknown)}")
        return cls(**d)


def lr_schedule(epoch: int, config: TrainConfig | None = None) -> float:
    """Exponential decay per epoch, then a fixed floor from `lr_floor_epoch` on."""
    c = config or TrainConfig()
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if epoch >= c.lr_floor_epoch:
        return c.lr_floor
    return c.lr0 * c.decay ** epoch


def mpjpe_loss(pred: Tensor, truth) -> Tensor:
    """Differentiable mean per-joint position error over [..., T, N, 3]."""
    truth = as_tensor(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"mpjpe_loss: shape mismatch {pred.shape} vs {truth.shape}")
    return reduce_mean(row_norm(sub(pred, truth), eps=1e-12))


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(store: ParameterStore, grads: dict[str, np.ndarray], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, in store order. Advances `state.t` first."""
    state.t += 1
    t = state.t
    for name, param in store.items():
        if name not in grads:
            raise KeyError(f"missing gradient for trainable parameter '{name}'")
        g = grads[name]
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(param.data)
            v = np.zeros_like(param.data)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        param.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


def collect_grads(store: ParameterStore, clip: Optional[float] = None) -> dict[str, np.ndarray]:
    grads = {n: (np.zeros_like(p.data) if p.grad is None else p.grad) for n, p in store.items()}
    if clip is not None:
        total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        if total > clip:
            grads = {n: g * (clip / total) for n, g in grads.items()}
    return grads


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    model_config: ModelConfig
    train_config: TrainConfig
    epoch: int
    store: ParameterStore
    adam: AdamState = field(default_factory=AdamState)

    def to_json(self) -> str:
        def tensor_entry(name, arr):
            return {"name": name, "shape": list(arr.shape), "values": [float(x) for x in arr.reshape(-1)]}

        doc = {
            "schema_version": SCHEMA_VERSION,
            "model_config": self.model_config.to_dict(),
            "train_config": self.train_config.to_dict(),
            "epoch": self.epoch,
            "params": [tensor_entry(n, p.data) for n, p in self.store.items()],
            "adam": {
                "t": self.adam.t,
                "m": [tensor_entry(n, a) for n, a in self.adam.m.items()],
                "v": [tensor_entry(n, a) for n, a in self.adam.v.items()],
            },
        }
        return json.dumps(doc, indent=1)


def save_checkpoint(path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    path.write_text(ckpt.to_json())
    return path


def _read_tensor(entry: dict, expected_shape=None) -> tuple[str, np.ndarray]:
    name = entry["name"]
    shape = tuple(entry["shape"])
    values = entry["values"]
    if int(np.prod(shape)) != len(values):
        raise CheckpointError(f"parameter '{name}': shape {shape} does not match {len(values)} stored values")
    if expected_shape is not None and shape != tuple(expected_shape):
        raise CheckpointError(f"parameter '{name}': stored shape {shape} != model shape {tuple(expected_shape)}")
    return name, np.array(values, dtype=np.float64).reshape(shape)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if not isinstance(doc, dict) or "schema_version" not in doc:
        raise CheckpointError(f"{path}: not a checkpoint document")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise CheckpointError(f"{path}: schema_version {doc['schema_version']} != supported {SCHEMA_VERSION}")
    try:
        model_config = ModelConfig.from_dict(doc["model_config"])
        train_config = TrainConfig.from_dict(doc["train_config"])
        reference = init_params(model_config)
        stored = doc["params"]
        names = [e["name"] for e in stored]
        if names != reference.names():
            missing = sorted(set(reference.names()) - set(names))
            extra = sorted(set(names) - set(reference.names()))
            raise CheckpointError(f"{path}: parameter set mismatch (missing {missing[:5]}, unexpected {extra[:5]})")
        for entry in stored:
            name, arr = _read_tensor(entry, reference[entry["name"]].shape)
            reference[name].data = arr
        adam = AdamState(t=int(doc["adam"]["t"]))
        for key in ("m", "v"):
            target = getattr(adam, key)
            for entry in doc["adam"][key]:
                name, arr = _read_tensor(entry, reference[entry["name"]].shape)
                target[name] = arr
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc!r})") from None
    return Checkpoint(model_config, train_config, int(doc["epoch"]), reference, adam)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    losses: list[float]
    log_path: Path
    checkpoint_path: Path


def batch_loss(store: ParameterStore, config: ModelConfig, obs: np.ndarray, target: np.ndarray) -> Tensor:
    return mpjpe_loss(network_forward(obs, store, config), target)


def train(
    windows: Sequence[SampleWindow],
    model_config: ModelConfig,
    train_config: TrainConfig,
    out_dir,
    max_steps: Optional[int] = None,
    store: Optional[ParameterStore] = None,
) -> TrainResult:
    """Minibatch Adam on MPJPE. Writes `loss_log.csv` (step,epoch,lr,loss) and a checkpoint per epoch."""
    if not windows:
        raise ValueError("training dataset is empty")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc
    obs_all, tgt_all = stack_windows(windows)
    store = store if store is not None else init_params(model_config)
    state = AdamState()
    rng = np.random.default_rng(train_config.seed)
    log_path = out_dir / LOSS_LOG_NAME
    ckpt_path = out_dir / CHECKPOINT_NAME
    losses: list[float] = []
    step = 0
    ckpt = Checkpoint(model_config, train_config, 0, store, state)
    with open(log_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "epoch", "lr", "loss"])
        for epoch in range(train_config.epochs):
            lr = lr_schedule(epoch, train_config)
            order = rng.permutation(len(windows))
            for start in range(0, len(order), train_config.batch):
                if max_steps is not None and step >= max_steps:
                    break
                idx = order[start:start + train_config.batch]
                store.zero_grad()
                loss = batch_loss(store, model_config, obs_all[idx], tgt_all[idx])
                loss.backward()
                adam_step(store, collect_grads(store, train_config.grad_clip), state, lr)
                value = loss.item()
                losses.append(value)
                writer.writerow([step, epoch, repr(lr), repr(value)])
                step += 1
            ckpt = Checkpoint(model_config, train_config, epoch + 1, store, state)
            save_checkpoint(ckpt_path, ckpt)
            logger.info("epoch %d lr %.2e last loss %.6f", epoch, lr, losses[-1] if losses else float("nan"))
            if max_steps is not None and step >= max_steps:
                break
    if train_config.epochs == 0:
        save_checkpoint(ckpt_path, ckpt)
    return TrainResult(ckpt, losses, log_path, ckpt_path)
