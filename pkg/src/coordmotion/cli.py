"""Command-line entry point: synth | train | eval | predict | export-svg | gradcheck."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import data as md
from .evaluation import DEFAULT_HORIZONS_MS, evaluate, horizon_frame, subsample_per_action
from .gradcheck_suite import MODULES, run_gradcheck, toy_config
from .model import ModelConfig, predict
from .tensor import ACTIVATIONS, inject_fault
from .training import TrainConfig, load_checkpoint, train

logger = logging.getLogger("coordmotion")

THREADS_ENV = "COORDMOTION_THREADS"


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# flat key=value config files


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_pairs(text: str):
    text = text.strip()
    if text.lower() in ("", "none"):
        return ()
    pairs = []
    for item in text.split(","):
        a, b = item.split(":")
        pairs.append((int(a), int(b)))
    return tuple(pairs)


def _optional(parse):
    return lambda t: None if t.strip().lower() == "none" else parse(t)


_CONVERTERS = {
    "timescales": lambda t: tuple(int(k) for k in t.split(",")),
    "lateral_pairs": _parse_pairs,
    "embed_dim": _optional(int),
    "grad_clip": _optional(float),
    "similarity": str.strip,
    "activation": str.strip,
}


def _converter(cls, name: str):
    if name in _CONVERTERS:
        return _CONVERTERS[name]
    default = {f.name: f.default for f in dataclasses.fields(cls)}[name]
    if isinstance(default, bool):
        return _parse_bool
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    return str


def read_config_file(path) -> tuple[dict, dict]:
    """Split `key=value` lines into ModelConfig and TrainConfig keyword dicts."""
    model_fields = {f.name for f in dataclasses.fields(ModelConfig)}
    train_fields = {f.name for f in dataclasses.fields(TrainConfig)} - {"seed"}
    model_kw, train_kw = {}, {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in model_fields:
            cls, target = ModelConfig, model_kw
        elif key in train_fields:
            cls, target = TrainConfig, train_kw
        else:
            raise ConfigError(f"{path}:{lineno}: unknown key '{key}'")
        try:
            target[key] = _converter(cls, key)(value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for '{key}': {exc}") from None
    return model_kw, train_kw


# ---------------------------------------------------------------------------
# helpers


def _apply_thread_limit() -> None:
    try:
        threads = int(os.environ.get(THREADS_ENV, "1"))
    except ValueError:
        threads = 1
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return
    threadpool_limits(limits=max(1, threads))


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _horizons(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"horizons must be comma-separated integers, got {text!r}") from None
    if any(b <= a for a, b in zip(values, values[1:])) or values[0] <= 0:
        raise argparse.ArgumentTypeError("horizons must be positive and strictly increasing")
    return values


def _load_sequences(data_dir, remove_translation: bool) -> list[md.MotionSequence]:
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise FileNotFoundError(f"data directory not found: {data_dir}")
    seqs = md.load_motion_dir(data_dir)
    if not seqs:
        raise ValueError(f"no *{md.MOTION_SUFFIX} files in {data_dir}")
    if remove_translation:
        seqs = [md.remove_global_translation(s) for s in seqs]
    return seqs


def _common_fps(seqs: Sequence[md.MotionSequence]) -> float:
    rates = {s.fps for s in seqs}
    if len(rates) != 1:
        raise ValueError(f"sequences have mixed frame rates: {sorted(rates)}")
    return rates.pop()


def _fitting_horizons(fps: float, t_out: int, horizons=DEFAULT_HORIZONS_MS) -> tuple[int, ...]:
    fit = tuple(h for h in horizons if 1 <= horizon_frame(h, fps) <= t_out)
    return fit or (int(round(1000.0 * t_out / fps)),)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tree = md.skeleton_for(args.joints)
    fixed_spec = None
    if args.spec:
        fixed_spec = md.SinusoidSpec.from_dict(json.loads(Path(args.spec).read_text()))
    for i in range(args.count):
        spec = fixed_spec or md.random_motion_spec(tree, seed=args.seed * 1000 + i)
        seq = md.synthesize_motion(tree, spec, args.frames, args.fps, seed=args.seed + i, label=args.label)
        path = md.write_motion_file(out / f"{args.label}_{i:03d}{md.MOTION_SUFFIX}", seq)
        print(path)
    return 0


def _build_configs(args, joints: int) -> tuple[ModelConfig, TrainConfig]:
    model_kw, train_kw = read_config_file(args.config) if args.config else ({}, {})
    model_kw.setdefault("joints", joints)
    for flag, key in (("epochs", "epochs"), ("batch", "batch"), ("lr", "lr0")):
        value = getattr(args, flag)
        if value is not None:
            train_kw[key] = value
    train_kw["seed"] = args.seed
    model_kw.setdefault("seed", args.seed)
    return ModelConfig(**model_kw), TrainConfig(**train_kw)


def cmd_train(args) -> int:
    seqs = _load_sequences(args.data_dir, not args.keep_translation)
    model_cfg, train_cfg = _build_configs(args, seqs[0].num_joints)
    fps = _common_fps(seqs)
    if seqs[0].num_joints != model_cfg.joints:
        raise ValueError(f"data has {seqs[0].num_joints} joints, config expects {model_cfg.joints}")
    n_val = int(round(len(seqs) * args.val_fraction)) if len(seqs) > 1 else 0
    train_seqs, val_seqs = seqs[: len(seqs) - n_val], seqs[len(seqs) - n_val:]
    span = (model_cfg.obs_frames, model_cfg.out_frames, args.stride)
    train_windows = md.window_dataset(train_seqs, *span)
    if not train_windows:
        raise ValueError("empty dataset: no sequence is long enough for one training window")
    result = train(train_windows, model_cfg, train_cfg, args.out, max_steps=args.max_steps)
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"loss log:   {result.log_path}")
    horizons = _fitting_horizons(fps, model_cfg.out_frames)
    store = result.checkpoint.store
    print("train MPJPE (mm)")
    print(evaluate(train_windows, store, model_cfg, fps, horizons).table())
    val_windows = md.window_dataset(val_seqs, *span)
    if val_windows:
        print("val MPJPE (mm)")
        print(evaluate(val_windows, store, model_cfg, fps, horizons).table())
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    cfg = ckpt.model_config
    seqs = _load_sequences(args.data_dir, not args.keep_translation)
    if seqs[0].num_joints != cfg.joints:
        raise ValueError(f"data has {seqs[0].num_joints} joints, checkpoint expects {cfg.joints}")
    fps = _common_fps(seqs)
    windows = md.window_dataset(seqs, cfg.obs_frames, cfg.out_frames, args.stride)
    windows = subsample_per_action(windows, args.samples_per_action, args.seed)
    report = evaluate(windows, ckpt.store, cfg, fps, args.horizons)
    print(report.table(), end="")
    if args.csv:
        report.write_csv(args.csv)
        print(f"csv: {args.csv}")
    return 0


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    cfg = ckpt.model_config
    seq = md.parse_motion_file(args.input)
    if seq.num_joints != cfg.joints:
        raise ValueError(f"input has {seq.num_joints} joints, checkpoint expects {cfg.joints}")
    if seq.num_frames < cfg.obs_frames:
        raise ValueError(f"input has {seq.num_frames} frames, model observes {cfg.obs_frames}")
    observed = seq.frames[-cfg.obs_frames:]
    offset = np.zeros((1, 1, 3))
    if not args.keep_translation:
        # predict root-relative motion, then restore the last observed root position
        offset = observed[-1:, :1, :]
        observed = observed - observed[:, :1, :]
    pred = predict(observed, ckpt.store, cfg) + offset
    out = md.write_motion_file(args.out, md.MotionSequence(pred, seq.fps, seq.joint_order, seq.label))
    print(out)
    return 0


def render_svg(seq: md.MotionSequence, tree: md.KinematicTree, cell: float = 120.0) -> str:
    """Stick figures, one <g class="frame"> per frame, laid out left to right (front view: x right, y up)."""
    frames = seq.frames
    xy = frames[:, :, :2]
    lo, hi = xy.reshape(-1, 2).min(axis=0), xy.reshape(-1, 2).max(axis=0)
    scale = 0.8 * cell / max(float((hi - lo).max()), 1e-9)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{cell * len(frames):.0f}" height="{cell:.0f}" '
        f'viewBox="0 0 {cell * len(frames):.0f} {cell:.0f}">'
    ]
    for f, pose in enumerate(frames):
        parts.append(f'<g class="frame" data-frame="{f}" stroke="black" stroke-width="1.5">')
        ox = f * cell + 0.1 * cell
        for p, j in tree.bones():
            x1 = ox + (pose[p, 0] - lo[0]) * scale
            y1 = 0.9 * cell - (pose[p, 1] - lo[1]) * scale
            x2 = ox + (pose[j, 0] - lo[0]) * scale
            y2 = 0.9 * cell - (pose[j, 1] - lo[1]) * scale
            parts.append(f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}"/>')
        parts.append("</g>")
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_export_svg(args) -> int:
    seq = md.parse_motion_file(args.motion)
    tree = md.skeleton_for(seq.num_joints)
    Path(args.out).write_text(render_svg(seq, tree))
    print(args.out)
    return 0


def cmd_gradcheck(args) -> int:
    cfg = toy_config(args.activation)
    if args.inject_fault:
        with inject_fault(args.inject_fault):
            reports = run_gradcheck(args.module, tol=args.tol, cfg=cfg)
    else:
        reports = run_gradcheck(args.module, tol=args.tol, cfg=cfg)
    ok = True
    for name, report in reports.items():
        status = "PASS" if report.passed else "FAIL"
        print(f"[{status}] {name}: max relative error {report.max_rel_error:.3e} (tol {args.tol:g})")
        for line in report.lines():
            print("    " + line)
        ok &= report.passed
    return 0 if ok else 1


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coordmotion", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write synthetic motion files")
    p.add_argument("--out", required=True)
    p.add_argument("--joints", type=_positive_int, default=22)
    p.add_argument("--frames", type=_positive_int, default=100)
    p.add_argument("--fps", type=float, default=25.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--spec", help="JSON file with amplitude/frequency/phase lists (default: seeded random)")
    p.add_argument("--count", type=_positive_int, default=1)
    p.add_argument("--label", default="synthetic")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--config", help="key=value file with ModelConfig / TrainConfig fields")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=_positive_int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-steps", type=_positive_int)
    p.add_argument("--stride", type=_positive_int, default=5)
    p.add_argument("--val-fraction", type=float, default=0.25)
    p.add_argument("--keep-translation", action="store_true", help="skip root-trajectory removal")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="per-horizon MPJPE table")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--horizons", type=_horizons, default=DEFAULT_HORIZONS_MS)
    p.add_argument("--csv")
    p.add_argument("--stride", type=_positive_int, default=10)
    p.add_argument("--samples-per-action", type=_positive_int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--keep-translation", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="forecast the frames following an input file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--keep-translation", action="store_true")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("export-svg", help="draw a motion file as a strip of stick figures")
    p.add_argument("--motion", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_svg)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--module", choices=("all",) + MODULES, default="all")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--activation", choices=ACTIVATIONS, default="tanh")
    p.add_argument("--inject-fault", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    _apply_thread_limit()
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
