"""Synthetic in-place motions: coupled, damped per-joint sinusoids in axis-angle pose space."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .body import D_SHAPE, N_JOINTS
from .decoder import LatentCode

D_POSE = 3 * N_JOINTS
AXES = {"x": 0, "y": 1, "z": 2}

# joint, axis, base angle, amplitude, phase offset (rad)
STYLES = {
    "swing": dict(
        freq=1.6,
        channels=[
            (10, "x", -0.05, 0.60, 0.0),
            (13, "x", -0.05, 0.60, np.pi),
            (11, "x", 0.40, 0.40, 0.9),
            (14, "x", 0.40, 0.40, np.pi + 0.9),
            (4, "y", 0.0, 0.55, np.pi),
            (7, "y", 0.0, 0.55, 0.0),
            (5, "y", 0.0, 0.35, np.pi + 0.7),
            (8, "y", 0.0, 0.35, 0.7),
            (4, "z", -0.9, 0.15, np.pi / 2),
            (7, "z", 0.9, 0.15, -np.pi / 2),
            (0, "y", 0.0, 0.15, 0.4),
        ],
    ),
    "wave": dict(
        freq=2.0,
        channels=[
            (7, "z", -0.6, 0.45, 0.0),
            (8, "z", -0.9, 0.70, 1.2),
            (9, "z", 0.0, 0.45, 2.2),
            (8, "y", 0.2, 0.30, 0.5),
            (1, "y", 0.0, 0.15, np.pi / 2),
            (4, "z", -1.0, 0.2, 0.3),
            (3, "z", 0.0, 0.2, 1.0),
        ],
    ),
    "squat": dict(
        freq=1.3,
        channels=[
            (10, "x", -0.7, 0.65, 0.0),
            (13, "x", -0.7, 0.65, 0.0),
            (11, "x", 0.9, 0.85, 0.4),
            (14, "x", 0.9, 0.85, 0.4),
            (12, "x", -0.3, 0.3, 0.8),
            (15, "x", -0.3, 0.3, 0.8),
            (1, "x", 0.25, 0.25, 0.6),
            (4, "y", -0.6, 0.5, 1.0),
            (7, "y", 0.6, 0.5, 1.0 + np.pi),
            (5, "z", 0.0, 0.4, 1.6),
            (8, "z", 0.0, 0.4, 1.6 + np.pi),
        ],
    ),
}
MOTION_KINDS = tuple(STYLES)
SHAPE_STD = 0.1
SHAPE_RANGE = (0.7, 1.3)


class MotionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PoseSequence:
    """Time-ordered pose vectors ``(T, d_pose)``."""

    codes: np.ndarray
    frame_rate: float = 30.0

    def __post_init__(self):
        codes = np.asarray(self.codes, dtype=np.float64)
        if codes.ndim != 2 or len(codes) < 2:
            raise MotionError("a pose sequence needs at least two frames of equal dimension")
        object.__setattr__(self, "codes", codes)

    def __len__(self):
        return len(self.codes)

    @property
    def d_pose(self) -> int:
        return self.codes.shape[1]


@dataclass(frozen=True)
class MotionStyle:
    kind: str = "swing"
    duration: int = 90
    seed: int = 0
    amplitude: float | None = None  # None draws a per-sequence scale in [0.7, 1.3]
    frame_rate: float = 30.0


@dataclass(frozen=True)
class MotionParams:
    scale: float
    phase: float
    damping: float
    freq: float
    base_jitter: np.ndarray


def motion_params(style: MotionStyle) -> MotionParams:
    if style.kind not in STYLES:
        raise MotionError(f"unknown motion kind {style.kind!r}; expected one of {MOTION_KINDS}")
    rng = np.random.default_rng([style.seed, MOTION_KINDS.index(style.kind)])
    n = len(STYLES[style.kind]["channels"])
    scale = rng.uniform(0.7, 1.3)
    if style.amplitude is not None:
        scale = float(style.amplitude)
    return MotionParams(
        scale=scale,
        phase=rng.uniform(0.0, 2.0 * np.pi),
        damping=rng.uniform(0.0, 0.3),
        freq=STYLES[style.kind]["freq"] * rng.uniform(0.97, 1.03),
        base_jitter=rng.normal(scale=0.04, size=n),
    )


def pose_at(style: MotionStyle, times, params: MotionParams | None = None) -> np.ndarray:
    """Pose vectors at continuous times (seconds)."""
    params = params or motion_params(style)
    times = np.atleast_1d(np.asarray(times, dtype=np.float64))
    out = np.zeros((len(times), D_POSE))
    omega = 2.0 * np.pi * params.freq
    env = params.scale * np.exp(-params.damping * times)
    for c, (joint, axis, base, amp, offset) in enumerate(STYLES[style.kind]["channels"]):
        col = 3 * joint + AXES[axis]
        out[:, col] += base + params.base_jitter[c] + amp * env * np.sin(omega * times + params.phase + offset)
    return out


def generate_motion(style: MotionStyle) -> PoseSequence:
    if style.duration < 3:
        raise MotionError("motions need at least 3 frames")
    t = np.arange(style.duration) / style.frame_rate
    return PoseSequence(pose_at(style, t), style.frame_rate)


def max_speed_bound(style: MotionStyle) -> float:
    """Upper bound on |d pose_c / dt| over channels, used to bound frame-to-frame steps."""
    p = motion_params(style)
    omega = 2.0 * np.pi * p.freq
    amps = [ch[3] for ch in STYLES[style.kind]["channels"]]
    return abs(p.scale) * max(amps) * (omega + p.damping)


def sample_shape(rng: np.random.Generator) -> np.ndarray:
    return np.clip(rng.normal(1.0, SHAPE_STD, size=D_SHAPE), *SHAPE_RANGE)


def sample_body(seed: int) -> LatentCode:
    """Random identity paired with a pose taken from a random point of a random motion."""
    rng = np.random.default_rng(seed)
    shape = sample_shape(rng)
    kind = MOTION_KINDS[rng.integers(len(MOTION_KINDS))]
    style = MotionStyle(kind=kind, seed=int(rng.integers(2**31)))
    pose = pose_at(style, rng.uniform(0.0, 3.0))[0]
    return LatentCode(pose, shape)
