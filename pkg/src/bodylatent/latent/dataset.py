"""Synthetic registered/raw mesh datasets drawn from body motions, split by sequence."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..mesh import CorruptionSpec, TriMesh, corrupt, midpoint_subdivide
from .body import SkinnedBody, build_body
from .decoder import Decoder, LatentCode
from .motion import MOTION_KINDS, MotionStyle, PoseSequence, generate_motion, pose_at, sample_shape

TRAIN_FRACTION = 0.8


@dataclass(frozen=True, eq=False)
class Sample:
    raw: TriMesh
    registered: TriMesh
    code: LatentCode
    sequence: int
    split: str


@dataclass(frozen=True, eq=False)
class BodySequence:
    """One identity performing one motion."""

    shape: np.ndarray
    poses: PoseSequence
    kind: str
    seed: int


def split_sequences(n_seq: int, rng: np.random.Generator) -> np.ndarray:
    """Boolean train mask over sequences, exactly ``round(0.8 * n)`` true."""
    order = rng.permutation(n_seq)
    mask = np.zeros(n_seq, dtype=bool)
    mask[order[: int(round(TRAIN_FRACTION * n_seq))]] = True
    return mask


def make_sequences(count: int, seed: int, duration: int = 90, frame_rate: float = 30.0, kinds=MOTION_KINDS):
    rng = np.random.default_rng([seed, 7])
    out = []
    for i in range(count):
        kind = kinds[i % len(kinds)]
        sseed = int(rng.integers(2**31))
        style = MotionStyle(kind=kind, duration=duration, seed=sseed, frame_rate=frame_rate)
        out.append(BodySequence(sample_shape(rng), generate_motion(style), kind, sseed))
    return out


def make_dataset(
    count: int,
    corruption: CorruptionSpec = CorruptionSpec(),
    seed: int = 0,
    decoder: Decoder | None = None,
    frames_per_sequence: int = 10,
    subdivide_frac: float = 0.5,
    duration: int = 90,
) -> list:
    """Decode ``count`` codes sampled along motions and derive raw (unregistered) meshes.

    Each sequence contributes ``frames_per_sequence`` evenly spaced frames; 80% of the
    sequences go to ``train`` and the rest to ``test``. Raw meshes are a midpoint
    subdivision (with probability ``subdivide_frac``) followed by ``corrupt``.
    """
    if count <= 0:
        raise ValueError("count must be positive")
    decoder = decoder or build_body()
    n_seq = -(-count // frames_per_sequence)
    seqs = make_sequences(n_seq, seed, duration=duration)
    rng = np.random.default_rng([seed, 11])
    train = split_sequences(n_seq, rng)
    frame_idx = np.linspace(0, duration - 1, frames_per_sequence).round().astype(int)
    samples = []
    for k in range(count):
        si, fi = divmod(k, frames_per_sequence)
        seq = seqs[si]
        code = LatentCode(seq.poses.codes[frame_idx[fi]], seq.shape)
        reg = decoder.decode(code)
        raw = reg
        sub = rng.random() < subdivide_frac
        if sub:
            raw = midpoint_subdivide(raw)
        raw_seed = int(rng.integers(2**31))
        if not corruption.is_identity:
            raw = corrupt(raw, corruption, raw_seed)
        samples.append(Sample(raw, reg, code, si, "train" if train[si] else "test"))
    return samples


def random_codes(decoder: SkinnedBody, count: int, seed: int) -> np.ndarray:
    """``(count, latent_dim)`` codes with motion poses and sampled identities."""
    rng = np.random.default_rng([seed, 13])
    out = np.empty((count, decoder.latent_dim))
    for i in range(count):
        kind = MOTION_KINDS[i % len(MOTION_KINDS)]
        style = MotionStyle(kind=kind, seed=int(rng.integers(2**31)))
        out[i, : decoder.d_pose] = pose_at(style, rng.uniform(0.0, 3.0))[0]
        out[i, decoder.d_pose :] = sample_shape(rng)
    return out
