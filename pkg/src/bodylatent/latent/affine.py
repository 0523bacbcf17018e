"""PCA-fitted affine decoder: ``x = mean + basis @ z``."""
from __future__ import annotations

import numpy as np

from .decoder import Decoder, DecoderError


class AffineDecoder(Decoder):
    d_pose = 0

    def __init__(self, mean, basis, faces):
        self.mean = np.asarray(mean, dtype=np.float64).reshape(-1)
        self.basis = np.asarray(basis, dtype=np.float64)
        self.faces = np.asarray(faces, dtype=np.int64)
        if self.basis.shape[0] != self.mean.shape[0] or self.mean.shape[0] % 3:
            raise DecoderError("basis rows must match the 3V mean vector")
        self.latent_dim = self.basis.shape[1]

    @property
    def n_vertices(self) -> int:
        return len(self.mean) // 3

    def decode_batch(self, codes):
        codes = self._check_codes(codes)
        return (self.mean + codes @ self.basis.T).reshape(len(codes), -1, 3)

    def vjp_batch(self, codes, cotangents):
        codes = self._check_codes(codes)
        g = self._check_cotangents(codes, cotangents)
        return g.reshape(len(codes), -1) @ self.basis

    def to_arrays(self) -> dict:
        return {"mean": self.mean, "basis": self.basis, "faces": self.faces.astype(np.float64)}

    @classmethod
    def from_arrays(cls, arrays: dict) -> "AffineDecoder":
        return cls(arrays["mean"], arrays["basis"], arrays["faces"].astype(np.int64))


def fit_affine(meshes, m: int):
    """Mean-centred PCA over stacked vertex coordinates of registered meshes.

    Returns the decoder and the explained-variance ratio of each kept component.
    """
    if len(meshes) <= m:
        raise DecoderError(f"insufficient samples: need more than {m} meshes, got {len(meshes)}")
    faces = meshes[0].faces
    if any(mesh.n_vertices != meshes[0].n_vertices or not np.array_equal(mesh.faces, faces) for mesh in meshes):
        raise DecoderError("all meshes must share connectivity")
    x = np.stack([mesh.vertices.reshape(-1) for mesh in meshes])
    mean = x.mean(0)
    xc = x - mean
    n, dim = xc.shape
    if n < dim:
        # samples x samples Gram matrix is the smaller eigenproblem
        evals, evecs = np.linalg.eigh(xc @ xc.T)
        order = np.argsort(evals)[::-1]
        evals, evecs = evals[order], evecs[:, order]
        total = evals.clip(min=0).sum()
        keep = evals[:m]
        if keep[-1] <= 1e-12 * evals[0]:
            raise DecoderError(f"data rank is below the requested dimension {m}")
        basis = xc.T @ (evecs[:, :m] / np.sqrt(keep))
    else:
        evals, evecs = np.linalg.eigh(xc.T @ xc)
        order = np.argsort(evals)[::-1]
        evals, evecs = evals[order], evecs[:, order]
        total = evals.clip(min=0).sum()
        keep = evals[:m].clip(min=0)
        basis = evecs[:, :m]
    # re-orthonormalise to remove rounding drift; fix signs for determinism
    basis, _ = np.linalg.qr(basis)
    signs = np.sign(basis[np.abs(basis).argmax(0), np.arange(m)])
    basis = basis * signs
    dec = AffineDecoder(mean, basis, faces)
    return dec, keep / total
