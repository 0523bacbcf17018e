"""Latent codes and the decoder interface shared by every latent body model."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..mesh import TriMesh
from .rotation import wrap_angle


class DecoderError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class LatentCode:
    """Pose block (axis-angle radians, concatenated per joint) followed by a shape block."""

    pose: np.ndarray
    shape: np.ndarray

    def __post_init__(self):
        pose = wrap_angle(np.asarray(self.pose, dtype=np.float64).reshape(-1))
        shape = np.asarray(self.shape, dtype=np.float64).reshape(-1)
        if not (np.all(np.isfinite(pose)) and np.all(np.isfinite(shape))):
            raise DecoderError("latent code entries must be finite")
        object.__setattr__(self, "pose", pose)
        object.__setattr__(self, "shape", shape)

    @property
    def dim(self) -> int:
        return len(self.pose) + len(self.shape)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.pose, self.shape])

    @classmethod
    def from_vector(cls, v, d_pose: int) -> "LatentCode":
        v = np.asarray(v, dtype=np.float64).reshape(-1)
        return cls(v[:d_pose], v[d_pose:])

    def __eq__(self, other):
        return (
            isinstance(other, LatentCode)
            and np.array_equal(self.pose, other.pose)
            and np.array_equal(self.shape, other.shape)
        )


def as_vector(code) -> np.ndarray:
    if isinstance(code, LatentCode):
        return code.as_vector()
    return np.asarray(code, dtype=np.float64).reshape(-1)


class Decoder:
    """Maps latent vectors to vertex positions on a fixed face list.

    Subclasses implement the batched ``decode_batch`` and ``vjp_batch``.
    """

    latent_dim: int
    d_pose: int
    faces: np.ndarray

    @property
    def d_shape(self) -> int:
        return self.latent_dim - self.d_pose

    @property
    def rest_code(self) -> np.ndarray:
        return np.zeros(self.latent_dim)

    @property
    def n_vertices(self) -> int:
        raise NotImplementedError

    def decode_batch(self, codes: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def vjp_batch(self, codes: np.ndarray, cotangents: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _check_codes(self, codes) -> np.ndarray:
        codes = np.asarray(codes, dtype=np.float64)
        if codes.ndim != 2 or codes.shape[1] != self.latent_dim:
            raise DecoderError(f"expected codes of shape (B, {self.latent_dim}), got {codes.shape}")
        return codes

    def _check_cotangents(self, codes, cot) -> np.ndarray:
        cot = np.asarray(cot, dtype=np.float64)
        if cot.shape != (len(codes), self.n_vertices, 3):
            raise DecoderError(f"cotangent shape {cot.shape} does not match ({len(codes)}, {self.n_vertices}, 3)")
        return cot

    def decode(self, code) -> TriMesh:
        v = as_vector(code)
        if v.shape != (self.latent_dim,):
            raise DecoderError(f"latent dimension mismatch: got {v.shape[0]}, expected {self.latent_dim}")
        return TriMesh(self.decode_batch(v[None])[0], self.faces)

    def vjp(self, code, cotangent) -> np.ndarray:
        v = as_vector(code)
        if v.shape != (self.latent_dim,):
            raise DecoderError(f"latent dimension mismatch: got {v.shape[0]}, expected {self.latent_dim}")
        return self.vjp_batch(v[None], np.asarray(cotangent, dtype=np.float64)[None])[0]

    @property
    def template(self) -> TriMesh:
        return self.decode(self.rest_code)

    def split(self, v):
        v = as_vector(v)
        return LatentCode(v[: self.d_pose], v[self.d_pose :])


def decode(d: Decoder, v) -> TriMesh:
    return d.decode(v)


def vjp(d: Decoder, v, cotangent) -> np.ndarray:
    return d.vjp(v, cotangent)
