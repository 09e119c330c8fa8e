"""Per-horizon MPJPE tables in the benchmark layout."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .affm import FusionReport, relative_weights
from .data import SampleWindow, baseline_predict, stack_windows
from .model import ModelConfig, network_forward
from .params import ParameterStore
from .tensor import no_grad

DEFAULT_HORIZONS_MS = (80, 160, 320, 400)
COLUMNS = ("model", "zero_vel", "const_vel")
METERS_TO_MM = 1000.0


def horizon_frame(ms: float, fps: float) -> int:
    """1-based frame index of a lead time: round(ms * fps / 1000)."""
    return int(round(ms * fps / 1000.0))


@dataclass
class MetricsReport:
    horizons_ms: tuple[int, ...]
    columns: dict[str, list[float]]  # column -> MPJPE (mm) per horizon
    per_action: dict[str, dict[str, list[float]]] = field(default_factory=dict)
    fusion: dict[str, FusionReport] = field(default_factory=dict)

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.horizons_ms, self.horizons_ms[1:])):
            raise ValueError("horizons must be strictly increasing")

    def table(self) -> str:
        lines = []
        blocks = [("all", self.columns)] + sorted(self.per_action.items())
        for name, cols in blocks:
            lines.append(f"motion: {name}")
            lines.append("time(ms)   " + "".join(f"{h:>9d}" for h in self.horizons_ms))
            for col, values in cols.items():
                lines.append(f"{col:<11s}" + "".join(f"{v:9.2f}" for v in values))
            lines.append("")
        if self.fusion:
            lines.append(f"{'motion':<16s}{'w_distant':>10s}{'w_adjacent':>11s}{'w_ca':>7s}")
            for name, rep in sorted(self.fusion.items()):
                lines.append(f"{name:<16s}{rep.w_distant:10.2f}{rep.w_adjacent:11.2f}{rep.w_ca:7.2f}")
        return "\n".join(lines).rstrip() + "\n"

    def write_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            present = [c for c in COLUMNS if c in self.columns]
            writer.writerow(["horizon_ms", *present])
            for i, h in enumerate(self.horizons_ms):
                writer.writerow([h, *(repr(self.columns[c][i]) for c in present)])
        return path


def predict_windows(obs: np.ndarray, store: ParameterStore, config: ModelConfig, batch: int = 64,
                    collect_ratios: bool = False):
    preds, ratios = [], []
    with no_grad():
        for start in range(0, len(obs), batch):
            trace: dict = {}
            preds.append(network_forward(obs[start:start + batch], store, config, trace=trace).data)
            if collect_ratios and trace.get("ratios") is not None:
                ratios.append(trace["ratios"])
    pred = np.concatenate(preds, axis=0)
    return (pred, np.concatenate(ratios, axis=0) if ratios else None) if collect_ratios else pred


def _horizon_errors(pred: np.ndarray, truth: np.ndarray, frames: Sequence[int]) -> list[float]:
    err = np.linalg.norm(pred - truth, axis=-1).mean(axis=-1)  # [S, T_out]
    return [float(err[:, f - 1].mean()) * METERS_TO_MM for f in frames]


def evaluate(
    windows: Sequence[SampleWindow],
    store: Optional[ParameterStore],
    config: ModelConfig,
    fps: float,
    horizons_ms: Sequence[int] = DEFAULT_HORIZONS_MS,
) -> MetricsReport:
    """Error at each horizon frame, averaged over joints and windows, in millimeters.

    `store=None` evaluates the baselines only (the model column is omitted).
    """
    if not windows:
        raise ValueError("no evaluation windows")
    horizons_ms = tuple(int(h) for h in horizons_ms)
    frames = [horizon_frame(h, fps) for h in horizons_ms]
    t_out = windows[0].target.shape[0]
    for h, f in zip(horizons_ms, frames):
        if not 1 <= f <= t_out:
            raise ValueError(f"horizon {h} ms maps to frame {f}, outside the {t_out} predicted frames")
    obs, truth = stack_windows(windows)
    preds: dict[str, np.ndarray] = {}
    ratios = None
    if store is not None:
        preds["model"], ratios = predict_windows(obs, store, config, collect_ratios=True)
    preds["zero_vel"] = np.stack([baseline_predict(o, t_out, "zero_velocity") for o in obs])
    preds["const_vel"] = np.stack([baseline_predict(o, t_out, "constant_velocity") for o in obs])

    columns = {name: _horizon_errors(p, truth, frames) for name, p in preds.items()}
    labels = np.array([w.label for w in windows])
    per_action, fusion = {}, {}
    for label in sorted(set(labels)):
        mask = labels == label
        per_action[label] = {name: _horizon_errors(p[mask], truth[mask], frames) for name, p in preds.items()}
        if ratios is not None and ratios.shape[-1] % 3 == 0 and len(config.streams) == 3:
            fusion[label] = relative_weights(ratios[mask])
    if len(per_action) == 1:
        per_action = {}
    return MetricsReport(horizons_ms, columns, per_action, fusion)


def subsample_per_action(windows: Sequence[SampleWindow], count: Optional[int], seed: int) -> list[SampleWindow]:
    """Keep at most `count` windows per label, drawn with a seeded generator."""
    if count is None:
        return list(windows)
    rng = np.random.default_rng(seed)
    by_label: dict[str, list[int]] = {}
    for i, w in enumerate(windows):
        by_label.setdefault(w.label, []).append(i)
    keep = []
    for label in sorted(by_label):
        idx = by_label[label]
        if len(idx) > count:
            idx = sorted(rng.choice(idx, size=count, replace=False).tolist())
        keep.extend(idx)
    return [windows[i] for i in sorted(keep)]
