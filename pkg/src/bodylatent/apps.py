"""Applications built on retrieval and lifted pose geometry: motion transfer, 4D sequence
blending by line averaging in the lifted space, and KDE-based generation of new bodies.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .latent.decoder import Decoder, LatentCode
from .latent.motion import PoseSequence
from .mesh import TriMesh, save_obj
from .mogen import LiftedPath, MogenModel
from .varishape import VariShapeModel, retrieve


@dataclass(frozen=True, eq=False)
class BodyMotion:
    identity: np.ndarray
    poses: PoseSequence

    def codes(self) -> list:
        return [LatentCode(p, self.identity) for p in self.poses.codes]

    def meshes(self, F: Decoder) -> list:
        vecs = np.concatenate([self.poses.codes, np.broadcast_to(self.identity, (len(self.poses), len(self.identity)))], 1)
        if vecs.shape[1] != F.latent_dim:
            raise ValueError(f"motion codes have dimension {vecs.shape[1]}, decoder expects {F.latent_dim}")
        verts = F.decode_batch(vecs)
        return [TriMesh(v, F.faces) for v in verts]


# --- transfer -------------------------------------------------------------------------


def transfer_pose_swap(motion_meshes, target_mesh: TriMesh, varishape: VariShapeModel, F: Decoder | None = None) -> BodyMotion:
    """Pose blocks retrieved from the motion frames, identity block retrieved from the target."""
    F = F or varishape.F
    target = retrieve(varishape, target_mesh)
    frames = [retrieve(varishape, m) for m in motion_meshes]
    if not frames:
        raise ValueError("motion has no frames")
    if len(target.pose) + len(target.shape) != F.latent_dim:
        raise ValueError("retrieved codes do not match the target decoder")
    return BodyMotion(target.shape.copy(), PoseSequence(np.stack([c.pose for c in frames])))


@dataclass(frozen=True, eq=False)
class TranslatedPath:
    """A lifted path moved by a constant offset; increments are those of the source path."""

    source: LiftedPath
    offset: np.ndarray
    start: np.ndarray

    @property
    def points(self) -> np.ndarray:
        pts = self.source.points + self.offset
        pts[0] = self.start
        return pts

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.source.points, axis=0)


def transfer_lifted(motion: BodyMotion, target_pose, mogen: MogenModel):
    """Translate the lifted motion so it starts at ``f(target_pose)``; returns (motion, lifted path)."""
    poses = motion.poses.codes
    target_pose = mogen._check(target_pose)
    lifted = mogen.lift(np.concatenate([target_pose[None], poses]))
    start, src = lifted[0], lifted[1:]
    path = TranslatedPath(LiftedPath(src), start - src[0], start)
    out = mogen.project(path.points)
    return BodyMotion(np.asarray(motion.identity).copy(), PoseSequence(out, motion.poses.frame_rate)), path


# --- lines in the lifted space ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LiftedLine:
    base: np.ndarray
    direction: np.ndarray
    interval: tuple
    constant: bool = False
    frames: int = 2

    @property
    def length(self) -> float:
        return self.interval[1] - self.interval[0]

    def sample(self, count: int) -> np.ndarray:
        t = np.linspace(self.interval[0], self.interval[1], count)
        return self.base + t[:, None] * self.direction


@dataclass(frozen=True)
class LineFit:
    line: LiftedLine
    residuals: np.ndarray
    path_length: float

    @property
    def max_residual(self) -> float:
        return float(self.residuals.max())

    @property
    def relative_residual(self) -> float:
        """Largest point-to-line distance as a fraction of the polyline length."""
        return self.max_residual / self.path_length if self.path_length > 0 else 0.0


def fit_line(points) -> LineFit:
    """Total least-squares line through ``points`` parameterised by arc length from the first point."""
    P = np.asarray(points, dtype=np.float64)
    if P.ndim != 2 or len(P) < 2:
        raise ValueError("a line fit needs at least two points")
    mean = P.mean(0)
    C = P - mean
    path_length = float(np.linalg.norm(np.diff(P, axis=0), axis=1).sum())
    scale = max(np.abs(P).max(), 1.0)
    if np.abs(C).max() <= 1e-13 * scale:
        line = LiftedLine(mean, np.zeros(P.shape[1]), (0.0, 0.0), True, len(P))
        return LineFit(line, np.zeros(len(P)), path_length)
    _, _, vt = np.linalg.svd(C, full_matrices=False)
    d = vt[0]
    t = C @ d
    if t[-1] < t[0]:
        d, t = -d, -t
    base = mean + t[0] * d
    resid = np.linalg.norm(C - t[:, None] * d, axis=1)
    line = LiftedLine(base, d, (0.0, float(t[-1] - t[0])), False, len(P))
    return LineFit(line, resid, path_length)


def fit_lifted_line(poses: PoseSequence, mogen: MogenModel) -> LineFit:
    if len(poses) < 2:
        raise ValueError("a line fit needs at least two frames")
    return fit_line(mogen.lift(poses.codes))


def blend_lines(a: LiftedLine, b: LiftedLine, s: float) -> LiftedLine:
    """Affine blend of base points, directions and interval lengths."""
    base = (1.0 - s) * a.base + s * b.base
    frames = max(2, int(round((1.0 - s) * a.frames + s * b.frames)))
    if a.constant or b.constant:
        return LiftedLine(base, np.zeros_like(base), (0.0, 0.0), True, frames)
    d = (1.0 - s) * a.direction + s * b.direction
    norm = np.linalg.norm(d)
    if norm <= 1e-12:
        return LiftedLine(base, np.zeros_like(base), (0.0, 0.0), True, frames)
    length = max((1.0 - s) * a.length + s * b.length, 0.0)
    return LiftedLine(base, d / norm, (0.0, length), False, frames)


def _resample(points, count):
    src = np.linspace(0.0, 1.0, len(points))
    dst = np.linspace(0.0, 1.0, count)
    return np.stack([np.interp(dst, src, points[:, j]) for j in range(points.shape[1])], axis=1)


def blend_sequences(seqA: PoseSequence, seqB: PoseSequence, s: float, mogen: MogenModel,
                    out_frames: int | None = None, mode: str = "line"):
    """Blend two motions in the lifted space; returns (sequence, blended line or None)."""
    if mode == "line":
        la = fit_lifted_line(seqA, mogen).line
        lb = fit_lifted_line(seqB, mogen).line
        line = blend_lines(la, lb, s)
        n = out_frames or line.frames
        return PoseSequence(mogen.project(line.sample(n)), seqA.frame_rate), line
    if mode == "pointwise":
        n = out_frames or max(2, int(round((1.0 - s) * len(seqA) + s * len(seqB))))
        pa = _resample(mogen.lift(seqA.codes), n)
        pb = _resample(mogen.lift(seqB.codes), n)
        return PoseSequence(mogen.project((1.0 - s) * pa + s * pb), seqA.frame_rate), None
    raise ValueError(f"unknown blend mode {mode!r}; expected 'line' or 'pointwise'")


def interpolate_4d(seqA, seqB, s: float, mogen: MogenModel, out_frames: int | None = None, mode: str = "line"):
    if not 0.0 <= s <= 1.0:
        raise ValueError("interpolation weight must lie in [0, 1]; use extrapolate_4d otherwise")
    return blend_sequences(seqA, seqB, s, mogen, out_frames, mode)


def extrapolate_4d(seqA, seqB, s: float, mogen: MogenModel, out_frames: int | None = None, mode: str = "line"):
    return blend_sequences(seqA, seqB, s, mogen, out_frames, mode)


# --- generative sampling ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class KdeModel:
    """Gaussian mixture on ``samples``; per-coordinate kernel std is ``bandwidth * scale``."""

    samples: np.ndarray
    bandwidth: float
    mean: np.ndarray
    scale: np.ndarray
    space: str = "lifted"

    def __post_init__(self):
        if len(self.samples) < 2:
            raise ValueError("a KDE needs at least two samples")
        if not self.bandwidth > 0:
            raise ValueError("KDE bandwidth must be positive")

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def with_bandwidth(self, bandwidth: float) -> "KdeModel":
        return KdeModel(self.samples, bandwidth, self.mean, self.scale, self.space)


def fit_kde(samples, space: str = "lifted", standardize: bool = True) -> KdeModel:
    """Gaussian KDE with Scott's factor ``k^(-1/(d+4))``.

    With ``standardize`` the kernel is isotropic in z-scored coordinates, i.e. the per-coordinate
    bandwidth is Scott's factor times that coordinate's standard deviation; otherwise a single
    isotropic bandwidth uses the pooled RMS standard deviation.
    """
    if space not in ("lifted", "shape"):
        raise ValueError(f"unknown KDE space {space!r}")
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim != 2 or len(X) < 2:
        raise ValueError("a KDE needs at least two samples")
    k, d = X.shape
    std = X.std(0, ddof=1)
    if standardize:
        std = np.where(std > 0, std, 1.0)
        mean, scale = X.mean(0), std
    else:
        rms = float(np.sqrt(np.mean(std**2))) or 1.0
        mean, scale = np.zeros(d), np.full(d, rms)
    return KdeModel(X.copy(), k ** (-1.0 / (d + 4)), mean, scale, space)


def sample_kde(model: KdeModel, seed: int, count: int | None = None) -> np.ndarray:
    """Pick training points uniformly and add Gaussian noise of the bandwidth."""
    rng = np.random.default_rng(seed)
    n = 1 if count is None else count
    idx = rng.integers(len(model.samples), size=n)
    x = model.samples[idx] + (model.bandwidth * model.scale) * rng.standard_normal((n, model.dim))
    return x[0] if count is None else x


def generate_body(kde_pose: KdeModel, kde_shape: KdeModel, mogen: MogenModel, F: Decoder, seed: int) -> TriMesh:
    """Sample a lifted pose and an identity, project the pose with ``pi`` and decode."""
    rng = np.random.default_rng([seed, 0x6B6465])
    s_pose, s_shape = (int(x) for x in rng.integers(2**63, size=2))
    pose = mogen.project(sample_kde(kde_pose, s_pose))
    shape = sample_kde(kde_shape, s_shape)
    return F.decode(LatentCode(pose, shape))


# --- export --------------------------------------------------------------------------


def export_sequence(meshes, out_dir, prefix: str = "frame") -> Path:
    """One OBJ per frame with a zero-padded index plus a tab-separated manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    width = max(4, len(str(len(meshes) - 1)))
    rows = ["index\tpath\tvertices\tfaces"]
    for i, m in enumerate(meshes):
        name = f"{prefix}_{i:0{width}d}.obj"
        save_obj(m, out / name)
        rows.append(f"{i}\t{name}\t{m.n_vertices}\t{m.n_faces}")
    manifest = out / f"{prefix}_manifest.tsv"
    manifest.write_text("\n".join(rows) + "\n")
    return manifest
