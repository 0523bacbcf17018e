"""Lifted pose geometry: a lift ``f`` into R^N and a projection ``pi`` back, trained so that
short motions become straight, constant-speed segments in the lifted space.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import container
from .latent.motion import PoseSequence
from .nn import AdamState, Mlp, net_arrays, net_from_arrays, run_training


@dataclass(frozen=True, eq=False)
class LiftedPath:
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2:
            raise ValueError("lifted path points must form a 2-D array")
        object.__setattr__(self, "points", pts)


class MogenModel:
    def __init__(self, f_net: Mlp, pi_net: Mlp):
        if f_net.n_out != pi_net.n_in or f_net.n_in != pi_net.n_out:
            raise ValueError(
                f"inconsistent widths: f {f_net.n_in}->{f_net.n_out}, pi {pi_net.n_in}->{pi_net.n_out}"
            )
        self.f_net = f_net
        self.pi_net = pi_net

    @classmethod
    def create(cls, d_pose: int, N: int | None = None, hidden: int = 256, depth: int = 2, seed: int = 0):
        N = N or 4 * d_pose
        rng = np.random.default_rng([seed, 101])
        s1, s2 = (int(x) for x in rng.integers(2**31, size=2))
        return cls(Mlp([d_pose] + [hidden] * depth + [N], seed=s1), Mlp([N] + [hidden] * depth + [d_pose], seed=s2))

    @property
    def d_pose(self) -> int:
        return self.f_net.n_in

    @property
    def N(self) -> int:
        return self.f_net.n_out

    def copy(self) -> "MogenModel":
        return MogenModel(self.f_net.copy(), self.pi_net.copy())

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.d_pose:
            raise ValueError(f"pose dimension {x.shape[-1]} does not match model ({self.d_pose})")
        return x

    def lift(self, poses) -> np.ndarray:
        poses = self._check(poses)
        return self.f_net.forward_cached(np.atleast_2d(poses))[0].reshape(poses.shape[:-1] + (self.N,))

    def project(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        if points.shape[-1] != self.N:
            raise ValueError(f"lifted dimension {points.shape[-1]} does not match model ({self.N})")
        return self.pi_net.forward_cached(np.atleast_2d(points))[0].reshape(points.shape[:-1] + (self.d_pose,))

    def autoencode(self, poses) -> np.ndarray:
        return self.project(self.lift(poses))

    def lift_path(self, seq: PoseSequence) -> LiftedPath:
        return LiftedPath(self.lift(seq.codes))


def _windows(seq) -> np.ndarray:
    codes = seq.codes if isinstance(seq, PoseSequence) else np.asarray(seq, dtype=np.float64)
    return codes[None] if codes.ndim == 2 else codes


def _lifted_queries(F, T):
    """Interpolation and extrapolation points for windows with lifted frames 0, 1 and T."""
    i = np.arange(1, T + 1, dtype=np.float64)[None, :, None]
    f0, f1, fT = F[:, 0:1], F[:, 1:2], F[:, 2:3]
    inter = f0 + i * (fT - f0) / T
    extra = f0 + i * (f1 - f0)
    return inter, extra


def mogen_loss_batch(model: MogenModel, windows) -> np.ndarray:
    """Per-window loss for ``(B, T+1, d_pose)`` windows."""
    W = model._check(windows)
    B, Tp1, d = W.shape
    T = Tp1 - 1
    if T < 2:
        raise ValueError("windows need at least 3 frames")
    F = model.lift(W[:, [0, 1, T]])
    inter, extra = _lifted_queries(F, T)
    target = W[:, 1:]
    e1 = ((model.project(inter) - target) ** 2).mean(2).sum(1)
    e2 = ((model.project(extra) - target) ** 2).mean(2).sum(1)
    return (e1 + e2) / (2.0 * T)


def mogen_loss(model: MogenModel, seq) -> float:
    return float(mogen_loss_batch(model, _windows(seq)).mean())


def mogen_loss_and_grads(model: MogenModel, W):
    """Mean loss over windows and gradients for ``f_net.params() + pi_net.params()``."""
    B, Tp1, d = W.shape
    T = Tp1 - 1
    N = model.N
    F, f_acts = model.f_net.forward_cached(W[:, [0, 1, T]].reshape(-1, d))
    F = F.reshape(B, 3, N)
    inter, extra = _lifted_queries(F, T)
    Q = np.concatenate([inter, extra], axis=1).reshape(-1, N)
    P, pi_acts = model.pi_net.forward_cached(Q)
    P = P.reshape(B, 2, T, d)
    R = P - W[None, :, 1:].transpose(1, 0, 2, 3)
    loss = float((R**2).sum() / (d * 2.0 * T * B))
    dP = 2.0 * R / (d * 2.0 * T * B)
    g_pi, dQ = model.pi_net.backward(pi_acts, dP.reshape(-1, d))
    dQ = dQ.reshape(B, 2, T, N)
    i = np.arange(1, T + 1, dtype=np.float64)[None, :, None]
    d_inter, d_extra = dQ[:, 0], dQ[:, 1]
    dF = np.empty((B, 3, N))
    dF[:, 0] = ((1.0 - i / T) * d_inter).sum(1) + ((1.0 - i) * d_extra).sum(1)
    dF[:, 1] = (i * d_extra).sum(1)
    dF[:, 2] = ((i / T) * d_inter).sum(1)
    g_f, _ = model.f_net.backward(f_acts, dF.reshape(-1, N))
    return loss, g_f + g_pi


def extract_minisequences(sequences, T: int = 4, stride: int = 2) -> np.ndarray:
    """Sliding windows of ``T + 1`` frames; sequences shorter than a window are skipped."""
    if T < 2:
        raise ValueError("mini-sequences need T >= 2")
    if stride < 1:
        raise ValueError("stride must be positive")
    out = []
    for seq in sequences:
        codes = seq.codes if isinstance(seq, PoseSequence) else np.asarray(seq)
        for start in range(0, len(codes) - T, stride):
            out.append(codes[start : start + T + 1])
    if not out:
        d = sequences[0].d_pose if sequences and isinstance(sequences[0], PoseSequence) else 0
        return np.zeros((0, T + 1, d))
    return np.stack(out)


@dataclass
class MogenConfig:
    epochs: int = 200
    batch: int = 64
    lr: float = 1e-3
    seed: int = 0
    log_every: int = 0


@dataclass
class MogenHistory:
    loss: list = field(default_factory=list)


def train_mogen(model: MogenModel, corpus, config: MogenConfig = MogenConfig(), log_fn=None):
    """Minimise the mean window loss by Adam; returns a trained copy and the loss history."""
    W = model._check(corpus)
    if W.ndim != 3 or len(W) == 0:
        raise ValueError("training corpus is empty")
    model = model.copy()
    params = model.f_net.params() + model.pi_net.params()
    state = AdamState.for_params(params, lr=config.lr)
    hist = run_training(params, len(W), lambda idx: mogen_loss_and_grads(model, W[idx]), config.epochs,
                        config.batch, config.seed, state, config.log_every, log_fn)
    return model, MogenHistory(hist)


def interpolate(model: MogenModel, a, b, steps: int) -> PoseSequence:
    """``pi`` at ``steps`` equispaced points of the lifted segment from ``f(a)`` to ``f(b)``."""
    if steps < 2:
        raise ValueError("interpolation needs at least two steps")
    fa, fb = model.lift(np.stack([model._check(a), model._check(b)]))
    t = np.arange(steps, dtype=np.float64)[:, None] / (steps - 1)
    pts = fa + t * (fb - fa)
    pts[-1] = fb
    return PoseSequence(model.project(pts))


def extrapolate(model: MogenModel, a, a_next, steps: int) -> PoseSequence:
    """Frame ``i`` is ``pi(f(a) + i (f(a_next) - f(a)))``."""
    if steps < 2:
        raise ValueError("extrapolation needs at least two steps")
    fa, fn = model.lift(np.stack([model._check(a), model._check(a_next)]))
    i = np.arange(steps, dtype=np.float64)[:, None]
    pts = fa + i * (fn - fa)
    pts[1] = fn
    return PoseSequence(model.project(pts))


def linear_interpolate(a, b, steps: int) -> np.ndarray:
    t = np.arange(steps, dtype=np.float64)[:, None] / (steps - 1)
    return a + t * (b - a)


def linear_extrapolate(a, a_next, steps: int) -> np.ndarray:
    return a + np.arange(steps, dtype=np.float64)[:, None] * (a_next - a)


def pose_error(pred, truth) -> float:
    """Mean over frames of the Euclidean pose-vector error."""
    return float(np.mean(np.linalg.norm(np.asarray(pred) - np.asarray(truth), axis=-1)))


def benchmark(model: MogenModel, windows) -> dict:
    """Interpolation and extrapolation errors of the model and of straight lines in pose space."""
    W = model._check(windows)
    T = W.shape[1] - 1
    F = model.lift(W[:, [0, 1, T]])
    t = np.arange(T + 1, dtype=np.float64)[None, :, None]
    inter = model.project(F[:, 0:1] + t / T * (F[:, 2:3] - F[:, 0:1]))
    extra = model.project(F[:, 0:1] + t * (F[:, 1:2] - F[:, 0:1]))
    lin_i = W[:, 0:1] + t / T * (W[:, T : T + 1] - W[:, 0:1])
    lin_e = W[:, 0:1] + t * (W[:, 1:2] - W[:, 0:1])
    out = {
        "mogen_interp": pose_error(inter, W),
        "linear_interp": pose_error(lin_i, W),
        "mogen_extrap": pose_error(extra, W),
        "linear_extrap": pose_error(lin_e, W),
        "autoencode_mse": float(np.mean((model.autoencode(W.reshape(-1, W.shape[2])) - W.reshape(-1, W.shape[2])) ** 2)),
        "n_windows": len(W),
    }
    out["interp_ratio"] = out["mogen_interp"] / out["linear_interp"]
    out["extrap_ratio"] = out["mogen_extrap"] / out["linear_extrap"]
    return out


# --- persistence -------------------------------------------------------------------


def save_bundle(model: MogenModel, path) -> None:
    arrays = net_arrays(model.f_net, "f.")
    arrays.update(net_arrays(model.pi_net, "pi."))
    container.write(path, "mogen", arrays, {"d_pose": model.d_pose, "N": model.N})


def load_bundle(path) -> MogenModel:
    arrays, _ = container.read(path, "mogen")
    return MogenModel(net_from_arrays(arrays, "f."), net_from_arrays(arrays, "pi."))


def save_sequence(seq: PoseSequence, path) -> None:
    lines = [f"# d_pose {seq.d_pose} frame_rate {seq.frame_rate!r}"]
    lines += [" ".join(repr(float(x)) for x in row) for row in seq.codes]
    Path(path).write_text("\n".join(lines) + "\n")


def load_sequence(path) -> PoseSequence:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ValueError(f"{path}: missing sequence header")
    head = lines[0][1:].split()
    try:
        meta = dict(zip(head[::2], head[1::2]))
        d_pose = int(meta["d_pose"])
        rate = float(meta["frame_rate"])
    except (KeyError, ValueError):
        raise ValueError(f"{path}: malformed sequence header {lines[0]!r}") from None
    rows = []
    for n, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        vals = [float(x) for x in line.split()]
        if len(vals) != d_pose:
            raise ValueError(f"{path}:{n}: expected {d_pose} values, got {len(vals)}")
        rows.append(vals)
    return PoseSequence(np.array(rows), rate)
