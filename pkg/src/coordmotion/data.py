"""Skeleton sequences: file format, preprocessing, synthetic generation, baselines."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

MOTION_SUFFIX = ".motion.txt"


class MotionFormatError(ValueError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class MotionSequence:
    frames: np.ndarray  # F x N x 3, meters
    fps: float
    joint_order: tuple[str, ...] = ()
    label: str = ""

    def __post_init__(self):
        frames = _frozen(self.frames)
        if frames.ndim != 3 or frames.shape[2] != 3:
            raise ValueError(f"frames must be F x N x 3, got {frames.shape}")
        if frames.shape[0] < 1 or frames.shape[1] < 2:
            raise ValueError(f"need at least 1 frame and 2 joints, got {frames.shape[:2]}")
        if not np.isfinite(frames).all():
            raise ValueError("frames contain non-finite coordinates")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        order = tuple(self.joint_order) or tuple(f"j{i}" for i in range(frames.shape[1]))
        if len(order) != frames.shape[1]:
            raise ValueError(f"joint_order has {len(order)} names for {frames.shape[1]} joints")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "joint_order", order)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def num_joints(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True, eq=False)
class SampleWindow:
    observed: np.ndarray  # T_p x N x 3
    target: np.ndarray  # T_out x N x 3
    label: str = ""


@dataclass(frozen=True, eq=False)
class KinematicTree:
    """Joints in depth-first order; `offsets[j]` is the rest-pose bone vector from parent to j."""

    names: tuple[str, ...]
    parents: tuple[int, ...]  # -1 for the root
    offsets: np.ndarray = field(repr=False)

    def __post_init__(self):
        n = len(self.parents)
        if len(self.names) != n:
            raise ValueError("names and parents differ in length")
        roots = [j for j, p in enumerate(self.parents) if p < 0]
        if len(roots) != 1:
            raise ValueError(f"kinematic tree needs exactly one root, found {len(roots)}")
        for j, p in enumerate(self.parents):
            if p >= n:
                raise ValueError(f"joint {j} has out-of-range parent {p}")
            # walk to the root; a cycle never reaches it
            seen, k = set(), j
            while k >= 0:
                if k in seen:
                    raise ValueError(f"cycle through joint {j}")
                seen.add(k)
                k = self.parents[k]
        offsets = _frozen(self.offsets)
        if offsets.shape != (n, 3):
            raise ValueError(f"offsets must be {n} x 3")
        object.__setattr__(self, "offsets", offsets)

    @property
    def num_joints(self) -> int:
        return len(self.parents)

    @property
    def bone_lengths(self) -> np.ndarray:
        return np.linalg.norm(self.offsets, axis=1)

    def bones(self) -> list[tuple[int, int]]:
        return [(p, j) for j, p in enumerate(self.parents) if p >= 0]

    def traversal_order(self) -> list[int]:
        """Parents before children, children in index order."""
        children: dict[int, list[int]] = {j: [] for j in range(self.num_joints)}
        for j, p in enumerate(self.parents):
            if p >= 0:
                children[p].append(j)
        order, stack = [], [self.parents.index(-1)]
        while stack:
            j = stack.pop()
            order.append(j)
            stack.extend(reversed(children[j]))
        return order


# (name, parent name, rest offset in meters); listed in depth-first order
_DEFAULT_SKELETON = [
    ("pelvis", None, (0.0, 0.0, 0.0)),
    ("r_hip", "pelvis", (-0.13, 0.0, 0.0)),
    ("r_knee", "r_hip", (0.0, -0.44, 0.0)),
    ("r_ankle", "r_knee", (0.0, -0.44, 0.0)),
    ("r_toe", "r_ankle", (0.0, -0.05, 0.14)),
    ("l_hip", "pelvis", (0.13, 0.0, 0.0)),
    ("l_knee", "l_hip", (0.0, -0.44, 0.0)),
    ("l_ankle", "l_knee", (0.0, -0.44, 0.0)),
    ("l_toe", "l_ankle", (0.0, -0.05, 0.14)),
    ("spine", "pelvis", (0.0, 0.23, 0.0)),
    ("thorax", "spine", (0.0, 0.25, 0.0)),
    ("neck", "thorax", (0.0, 0.10, 0.0)),
    ("head", "neck", (0.0, 0.12, 0.02)),
    ("head_top", "head", (0.0, 0.11, 0.0)),
    ("l_shoulder", "thorax", (0.17, 0.0, 0.0)),
    ("l_elbow", "l_shoulder", (0.28, 0.0, 0.0)),
    ("l_wrist", "l_elbow", (0.25, 0.0, 0.0)),
    ("l_hand", "l_wrist", (0.08, 0.0, 0.0)),
    ("r_shoulder", "thorax", (-0.17, 0.0, 0.0)),
    ("r_elbow", "r_shoulder", (-0.28, 0.0, 0.0)),
    ("r_wrist", "r_elbow", (-0.25, 0.0, 0.0)),
    ("r_hand", "r_wrist", (-0.08, 0.0, 0.0)),
]


def default_skeleton() -> KinematicTree:
    """22-joint human skeleton, rows in depth-first order so skeletal neighbours sit in adjacent rows."""
    names = tuple(n for n, _, _ in _DEFAULT_SKELETON)
    parents = tuple(-1 if p is None else names.index(p) for _, p, _ in _DEFAULT_SKELETON)
    offsets = np.array([o for _, _, o in _DEFAULT_SKELETON])
    return KinematicTree(names, parents, offsets)


def chain_skeleton(num_joints: int, bone_length: float = 0.2) -> KinematicTree:
    """Simple serial chain, used when a non-default joint count is requested."""
    if num_joints < 2:
        raise ValueError("need at least 2 joints")
    names = tuple(f"j{i}" for i in range(num_joints))
    parents = (-1,) + tuple(range(num_joints - 1))
    offsets = np.zeros((num_joints, 3))
    offsets[1:, 1] = -bone_length
    return KinematicTree(names, parents, offsets)


def skeleton_for(num_joints: int) -> KinematicTree:
    tree = default_skeleton()
    return tree if num_joints == tree.num_joints else chain_skeleton(num_joints)


# ---------------------------------------------------------------------------
# file format


def write_motion_file(path, seq: MotionSequence) -> Path:
    path = Path(path)
    lines = [f"joints={seq.num_joints} dims=3 fps={seq.fps!r}", "names=" + ",".join(seq.joint_order)]
    for frame in seq.frames:
        lines.append(" ".join(repr(float(v)) for v in frame.reshape(-1)))
    path.write_text("\n".join(lines) + "\n")
    return path


_HEADER = re.compile(r"^joints=(\d+)\s+dims=(\d+)\s+fps=(\S+)$")


def label_from_path(path) -> str:
    name = Path(path).name
    if name.endswith(MOTION_SUFFIX):
        name = name[: -len(MOTION_SUFFIX)]
    return re.sub(r"_\d+$", "", name)


def parse_motion_file(path) -> MotionSequence:
    path = Path(path)
    raw = path.read_text().splitlines()
    if not raw:
        raise MotionFormatError(path, 1, "empty file")
    m = _HEADER.match(raw[0].strip())
    if m is None:
        raise MotionFormatError(path, 1, f"malformed header {raw[0]!r}, expected 'joints=<N> dims=3 fps=<float>'")
    n, dims = int(m.group(1)), int(m.group(2))
    if dims != 3:
        raise MotionFormatError(path, 1, f"dims must be 3, got {dims}")
    try:
        fps = float(m.group(3))
    except ValueError:
        raise MotionFormatError(path, 1, f"fps is not a number: {m.group(3)!r}") from None

    names: tuple[str, ...] = ()
    start = 1
    if len(raw) > 1 and raw[1].startswith("names="):
        names = tuple(raw[1][len("names="):].split(","))
        if len(names) != n:
            raise MotionFormatError(path, 2, f"{len(names)} joint names for joints={n}")
        start = 2

    frames = []
    for lineno, line in enumerate(raw[start:], start=start + 1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != 3 * n:
            raise MotionFormatError(path, lineno, f"expected {3 * n} values, found {len(tokens)}")
        try:
            values = [float(t) for t in tokens]
        except ValueError as exc:
            raise MotionFormatError(path, lineno, f"non-numeric token ({exc})") from None
        frames.append(values)
    if not frames:
        raise MotionFormatError(path, start + 1, "no frames")
    arr = np.array(frames).reshape(len(frames), n, 3)
    try:
        return MotionSequence(arr, fps, names, label_from_path(path))
    except ValueError as exc:
        raise MotionFormatError(path, start + 1, str(exc)) from None


def load_motion_dir(directory) -> list[MotionSequence]:
    directory = Path(directory)
    files = sorted(directory.glob("*" + MOTION_SUFFIX))
    return [parse_motion_file(f) for f in files]


# ---------------------------------------------------------------------------
# preprocessing


def compute_velocity(p: np.ndarray) -> np.ndarray:
    """Frame differences along axis 0: out[t] = p[t + 1] - p[t]."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape[0] < 2:
        raise ValueError(f"velocity needs at least 2 frames, got {p.shape[0]}")
    return p[1:] - p[:-1]


def remove_global_translation(seq: MotionSequence, root: int = 0) -> MotionSequence:
    frames = seq.frames - seq.frames[:, root:root + 1, :]
    return MotionSequence(frames, seq.fps, seq.joint_order, seq.label)


def window_dataset(seqs: Iterable[MotionSequence], t_obs: int, t_out: int, stride: int) -> list[SampleWindow]:
    if stride < 1:
        raise ValueError("stride must be >= 1")
    windows = []
    span = t_obs + t_out
    for seq in seqs:
        for start in range(0, seq.num_frames - span + 1, stride):
            chunk = seq.frames[start:start + span]
            windows.append(SampleWindow(chunk[:t_obs], chunk[t_obs:], seq.label))
    return windows


def stack_windows(windows: Sequence[SampleWindow]) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([w.observed for w in windows]), np.stack([w.target for w in windows])


# ---------------------------------------------------------------------------
# synthetic motion


@dataclass(frozen=True, eq=False)
class SinusoidSpec:
    """Per-joint local rotation angle a_j * sin(2 pi f_j t + phi_j), radians / Hz / radians."""

    amplitude: np.ndarray
    frequency: np.ndarray
    phase: np.ndarray

    def __post_init__(self):
        arrays = [_frozen(a) for a in (self.amplitude, self.frequency, self.phase)]
        if len({a.shape for a in arrays}) != 1 or arrays[0].ndim != 1:
            raise ValueError("amplitude, frequency and phase must be 1-d and equally long")
        object.__setattr__(self, "amplitude", arrays[0])
        object.__setattr__(self, "frequency", arrays[1])
        object.__setattr__(self, "phase", arrays[2])

    @classmethod
    def static(cls, num_joints: int) -> "SinusoidSpec":
        z = np.zeros(num_joints)
        return cls(z, z, z)

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("amplitude", "frequency", "phase")}

    @classmethod
    def from_dict(cls, d: dict) -> "SinusoidSpec":
        return cls(np.array(d["amplitude"]), np.array(d["frequency"]), np.array(d["phase"]))


def random_motion_spec(
    tree: KinematicTree,
    seed: int,
    amplitude: tuple[float, float] = (0.1, 0.5),
    frequencies: Sequence[float] = (0.4, 0.8, 1.6),
) -> SinusoidSpec:
    """Mix of slow and fast joints so dynamics differ across timescales."""
    rng = np.random.default_rng(seed)
    n = tree.num_joints
    amp = rng.uniform(*amplitude, size=n)
    amp[tree.parents.index(-1)] *= 0.3
    freq = rng.choice(np.asarray(frequencies, dtype=float), size=n) * rng.uniform(0.8, 1.2, size=n)
    phase = rng.uniform(0.0, 2.0 * math.pi, size=n)
    return SinusoidSpec(amp, freq, phase)


def forward_kinematics(tree: KinematicTree, rotvecs: np.ndarray) -> np.ndarray:
    """Joint positions (F x N x 3) from local axis-angle rotations (F x N x 3); the root sits at the origin."""
    f, n = rotvecs.shape[:2]
    local = [Rotation.from_rotvec(rotvecs[:, j]) for j in range(n)]
    glob: list = [None] * n
    pos = np.zeros((f, n, 3))
    for j in tree.traversal_order():
        p = tree.parents[j]
        if p < 0:
            glob[j] = local[j]
            continue
        pos[:, j] = pos[:, p] + glob[p].apply(tree.offsets[j])
        glob[j] = glob[p] * local[j]
    return pos


def synthesize_motion(
    tree: KinematicTree,
    spec: SinusoidSpec,
    num_frames: int,
    fps: float,
    seed: int,
    label: str = "synthetic",
) -> MotionSequence:
    """Sinusoidal joint angles about seeded per-joint axes, posed by forward kinematics."""
    if spec.amplitude.shape[0] != tree.num_joints:
        raise ValueError(f"spec covers {spec.amplitude.shape[0]} joints, tree has {tree.num_joints}")
    if num_frames < 1 or fps <= 0:
        raise ValueError("num_frames must be >= 1 and fps positive")
    rng = np.random.default_rng(seed)
    axes = rng.normal(size=(tree.num_joints, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    t = np.arange(num_frames)[:, None] / fps
    angles = spec.amplitude * np.sin(2.0 * math.pi * spec.frequency * t + spec.phase)  # F x N
    positions = forward_kinematics(tree, angles[:, :, None] * axes[None])
    return MotionSequence(positions, fps, tree.names, label)


# ---------------------------------------------------------------------------
# baselines and metric


def baseline_predict(observed: np.ndarray, t_out: int, kind: str) -> np.ndarray:
    """Naive forecasts from the trailing observed frames (T_p x N x 3 -> T_out x N x 3)."""
    observed = np.asarray(observed, dtype=np.float64)
    last = observed[-1]
    if kind == "zero_velocity":
        return np.repeat(last[None], t_out, axis=0)
    if kind == "constant_velocity":
        if observed.shape[0] < 2:
            raise ValueError("constant_velocity needs at least 2 observed frames")
        vel = observed[-1] - observed[-2]
        steps = np.arange(1, t_out + 1, dtype=np.float64)[:, None, None]
        return last[None] + steps * vel[None]
    raise ValueError(f"unknown baseline '{kind}'")


def per_frame_error(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Per-frame mean joint error, shape [..., T]."""
    pred, truth = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    return np.linalg.norm(pred - truth, axis=-1).mean(axis=-1)


def mpjpe(pred: np.ndarray, truth: np.ndarray) -> float:
    """Mean over frames and joints of the Euclidean joint position error (same units as input)."""
    return float(per_frame_error(pred, truth).mean())
