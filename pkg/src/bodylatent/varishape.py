"""Latent code retrieval from unregistered meshes.

A mesh is summarised by the gradient of ``z -> d_var(q, G(z))^2`` at the template code of an
auxiliary decoder ``G``. A regression network maps the standardised feature to the latent code
of the target decoder ``F``. A Chamfer-distance quasi-Newton search over ``F``'s codes serves as
the optimisation baseline.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import container
from .latent.decoder import Decoder, LatentCode, as_vector
from .mesh import TriMesh
from .nn import AdamState, Mlp, TrainingError, forward, forward_batch, net_arrays, net_from_arrays, run_training
from .varifold import (
    ChamferTarget,
    VarifoldKernel,
    chamfer_sq_dist,
    cross_term_grad,
    self_term_grad,
    varifold_terms,
)

log = logging.getLogger(__name__)


class FeatureExtractor:
    """Feature map for a fixed ``(G, kernel)``; caches the template and its self-term gradient."""

    def __init__(self, G: Decoder, kernel: VarifoldKernel):
        self.G = G
        self.kernel = kernel
        self.code = G.rest_code
        self.template = G.decode(self.code)
        self.self_grad = self_term_grad(self.template, kernel)

    @property
    def dim(self) -> int:
        return self.G.latent_dim

    def __call__(self, q: TriMesh) -> np.ndarray:
        field_ = self.self_grad + cross_term_grad(q, self.template, self.kernel)
        return self.G.vjp(self.code, field_)

    def batch(self, meshes) -> np.ndarray:
        return np.stack([self(q) for q in meshes])


def extract_feature(q: TriMesh, G: Decoder, kernel: VarifoldKernel) -> np.ndarray:
    """Gradient of ``z -> d_var(q, G(z))^2`` at G's template code."""
    return FeatureExtractor(G, kernel)(q)


def default_widths(m: int, n: int, hidden: int = 256, depth: int = 3) -> list:
    return [m] + [hidden] * depth + [n]


class VariShapeModel:
    def __init__(self, G: Decoder, F: Decoder, kernel: VarifoldKernel, net: Mlp,
                 feat_mean=None, feat_std=None):
        if net.n_in != G.latent_dim or net.n_out != F.latent_dim:
            raise ValueError(
                f"network widths {net.n_in}->{net.n_out} do not match G ({G.latent_dim}) and F ({F.latent_dim})"
            )
        self.G = G
        self.F = F
        self.kernel = kernel
        self.net = net
        self.feat_mean = np.zeros(G.latent_dim) if feat_mean is None else np.asarray(feat_mean, dtype=np.float64)
        self.feat_std = np.ones(G.latent_dim) if feat_std is None else np.asarray(feat_std, dtype=np.float64)
        self.extractor = FeatureExtractor(G, kernel)

    @classmethod
    def create(cls, G: Decoder, F: Decoder, kernel: VarifoldKernel | None = None, hidden: int = 256,
               depth: int = 3, seed: int = 0) -> "VariShapeModel":
        kernel = kernel or VarifoldKernel.for_mesh(G.template)
        net = Mlp(default_widths(G.latent_dim, F.latent_dim, hidden, depth), seed=seed)
        net.biases[-1][:] = F.rest_code
        return cls(G, F, kernel, net)

    def normalize(self, feats) -> np.ndarray:
        return (np.asarray(feats) - self.feat_mean) / self.feat_std

    def feature(self, q: TriMesh) -> np.ndarray:
        return self.extractor(q)

    def copy(self) -> "VariShapeModel":
        return VariShapeModel(self.G, self.F, self.kernel, self.net.copy(), self.feat_mean.copy(),
                              self.feat_std.copy())


def retrieve(model: VariShapeModel, q: TriMesh) -> LatentCode:
    """Single forward pass of the network on the standardised feature of ``q``."""
    v = forward(model.net, model.normalize(model.feature(q)))
    return model.F.split(v)


@dataclass
class TrainConfig:
    warm_epochs: int = 200
    epochs: int = 100
    batch: int = 32
    lr: float = 1e-3
    warm_lr: float = 1e-3
    lr_final: float | None = None
    seed: int = 0
    use_raw: bool = True
    log_every: int = 0


@dataclass
class TrainHistory:
    warm: list = field(default_factory=list)
    vertex: list = field(default_factory=list)


def _stack_codes(samples) -> np.ndarray:
    return np.stack([as_vector(s.code) for s in samples])


def vertex_loss_grads(model: VariShapeModel, X, targets, idx):
    """Mean squared vertex error of ``F(net(X[idx]))`` and its parameter gradients."""
    pred, acts = model.net.forward_cached(X[idx])
    verts = model.F.decode_batch(pred)
    diff = verts - targets[idx]
    loss = float(np.mean(np.sum(diff * diff, axis=2)))
    g_verts = 2.0 * diff / (diff.shape[0] * diff.shape[1])
    g_code = model.F.vjp_batch(pred, g_verts)
    grads, _ = model.net.backward(acts, g_code)
    return loss, grads


def train_varishape(model: VariShapeModel, samples, config: TrainConfig = TrainConfig(), features=None,
                    log_fn=None):
    """Fit the regressor on ``samples`` (objects with ``raw``, ``registered`` and ``code``).

    An optional warm start minimises latent-code MSE; the main phase minimises mean squared
    vertex error of the decoded prediction, back-propagated through ``F``.
    Returns ``(model, history)``; the input model is not modified.
    """
    if not samples:
        raise ValueError("training set is empty")
    model = model.copy()
    history = TrainHistory()
    if config.warm_epochs <= 0 and config.epochs <= 0:
        return model, history
    if features is None:
        features = model.extractor.batch([s.raw if config.use_raw else s.registered for s in samples])
    features = np.asarray(features, dtype=np.float64)
    model.feat_mean = features.mean(0)
    model.feat_std = features.std(0) + 1e-12 * np.abs(features).max()
    X = model.normalize(features)
    codes = _stack_codes(samples)
    params = model.net.params()

    if config.warm_epochs > 0:
        state = AdamState.for_params(params, lr=config.warm_lr)

        def code_step(idx):
            pred, acts = model.net.forward_cached(X[idx])
            diff = pred - codes[idx]
            grads, _ = model.net.backward(acts, 2.0 * diff / diff.size)
            return float(np.mean(diff * diff)), grads

        history.warm = run_training(params, len(X), code_step, config.warm_epochs, config.batch,
                                    config.seed, state, config.log_every, log_fn, config.lr_final)
    if config.epochs > 0:
        targets = np.stack([s.registered.vertices for s in samples])
        state = AdamState.for_params(params, lr=config.lr)
        history.vertex = run_training(params, len(X), lambda idx: vertex_loss_grads(model, X, targets, idx),
                                      config.epochs, config.batch, config.seed + 1, state,
                                      config.log_every, log_fn, config.lr_final)
    return model, history


# --- Chamfer-search baseline ------------------------------------------------------


@dataclass
class SearchResult:
    code: LatentCode
    value: float
    iterations: int
    evaluations: int
    seconds: float
    values: list
    restarts: int = 0
    fallback_steps: int = 0


class _Objective:
    def __init__(self, F: Decoder, q: TriMesh):
        self.F = F
        self.target = ChamferTarget(q.vertices)
        self.evaluations = 0

    def __call__(self, v):
        self.evaluations += 1
        verts = self.F.decode_batch(v[None])[0]
        if not np.all(np.isfinite(verts)):
            return float("inf"), np.full_like(v, np.nan)
        value, grad = self.target.value_and_grad(verts)
        return value, self.F.vjp_batch(v[None], grad[None])[0]


def _two_loop(g, s_hist, y_hist):
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(s_hist), reversed(y_hist)):
        rho = 1.0 / (y @ s)
        a = rho * (s @ q)
        q -= a * y
        alphas.append((rho, a))
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= (s @ y) / (y @ y)
    for (s, y), (rho, a) in zip(zip(s_hist, y_hist), reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return q


def chamfer_search(F: Decoder, q: TriMesh, init=None, iters: int = 200, history: int = 10,
                   step0: float = 1.0, gtol: float = 1e-10) -> SearchResult:
    """Minimise ``v -> chamfer(q, F(v))`` by L-BFGS with Armijo backtracking.

    When the curvature pair of a step is degenerate the memory is cleared and Adam-style
    normalised steps are taken until a usable pair appears. A non-finite objective restarts
    from ``init`` with a smaller initial step, at most three times.
    """
    t0 = time.perf_counter()
    x0 = F.rest_code if init is None else as_vector(init)
    obj = _Objective(F, q)
    restarts = 0
    scale = step0
    while True:
        try:
            res = _lbfgs(obj, x0.copy(), iters, history, scale, gtol)
            break
        except FloatingPointError:
            restarts += 1
            if restarts > 3:
                raise TrainingError("Chamfer search objective stayed non-finite after 3 restarts") from None
            scale *= 0.1
    x, fx, n_iter, values, fallback = res
    return SearchResult(F.split(x), fx, n_iter, obj.evaluations, time.perf_counter() - t0, values, restarts,
                        fallback)


def _lbfgs(obj, x, iters, history, step0, gtol):
    fx, g = obj(x)
    if not np.isfinite(fx) or not np.all(np.isfinite(g)):
        raise FloatingPointError
    values = [fx]
    s_hist, y_hist = [], []
    adam_m = np.zeros_like(x)
    adam_v = np.zeros_like(x)
    adam_t = 0
    fallback = 0
    n_iter = 0
    for n_iter in range(1, iters + 1):
        if np.linalg.norm(g) <= gtol * max(1.0, fx):
            n_iter -= 1
            break
        if s_hist:
            d = -_two_loop(g, s_hist, y_hist)
            t = 1.0
        else:
            # no curvature memory: Adam-normalised direction with a conservative step
            adam_t += 1
            fallback += 1
            adam_m = 0.9 * adam_m + 0.1 * g
            adam_v = 0.999 * adam_v + 0.001 * g * g
            d = -(adam_m / (1 - 0.9**adam_t)) / (np.sqrt(adam_v / (1 - 0.999**adam_t)) + 1e-8)
            t = 0.01 * step0
        slope = g @ d
        if slope >= 0:
            d = -g
            slope = -(g @ g)
            t = 0.01 * step0 / max(np.linalg.norm(g), 1e-300)
        accepted = False
        for _ in range(30):
            x_new = x + t * d
            f_new, g_new = obj(x_new)
            if not np.isfinite(f_new):
                raise FloatingPointError
            if f_new <= fx + 1e-4 * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            if not s_hist:
                break
            s_hist.clear()
            y_hist.clear()
            continue
        s = x_new - x
        y = g_new - g
        if y @ s > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            s_hist.append(s)
            y_hist.append(y)
            if len(s_hist) > history:
                s_hist.pop(0)
                y_hist.pop(0)
        else:
            s_hist.clear()
            y_hist.clear()
        x, fx, g = x_new, f_new, g_new
        values.append(fx)
    return x, fx, n_iter, values, fallback


# --- evaluation ------------------------------------------------------------------------


def mean_vertex_dist(a: TriMesh, b: TriMesh) -> float:
    if a.n_vertices != b.n_vertices:
        raise ValueError("mean vertex distance needs shared connectivity")
    return float(np.mean(np.linalg.norm(a.vertices - b.vertices, axis=1)))


def evaluate(model: VariShapeModel, testset, kernel: VarifoldKernel | None = None) -> dict:
    """Retrieval metrics averaged over ``testset`` (objects with ``raw`` and ``registered``).

    Timing covers retrieval only and is reported per 1000 meshes.
    """
    kernel = kernel or model.kernel
    codes = []
    t0 = time.perf_counter()
    for s in testset:
        codes.append(retrieve(model, s.raw))
    elapsed = time.perf_counter() - t0
    rows = {k: [] for k in ("mvd", "ch_reg", "ch_raw", "vf_reg", "vf_raw", "vfn_reg", "vfn_raw")}
    for s, c in zip(testset, codes):
        rec = model.F.decode(c)
        rows["mvd"].append(mean_vertex_dist(rec, s.registered))
        rows["ch_reg"].append(chamfer_sq_dist(s.registered, rec))
        rows["ch_raw"].append(chamfer_sq_dist(s.raw, rec))
        t_reg = varifold_terms(s.registered, rec, kernel)
        t_raw = varifold_terms(s.raw, rec, kernel)
        rows["vf_reg"].append(t_reg.value)
        rows["vf_raw"].append(t_raw.value)
        rows["vfn_reg"].append(t_reg.normalized)
        rows["vfn_raw"].append(t_raw.normalized)
    base = varifold_terms(testset[0].registered, testset[0].registered, kernel).value
    return {
        "n": len(testset),
        "mean_vertex_dist": float(np.mean(rows["mvd"])),
        "chamfer_error_registered": float(np.mean(rows["ch_reg"])),
        "chamfer_error_raw": float(np.mean(rows["ch_raw"])),
        "varifold_error_registered": float(np.mean(rows["vf_reg"])),
        "varifold_error_raw": float(np.mean(rows["vf_raw"])),
        "varifold_error_normalized_registered": float(np.mean(rows["vfn_reg"])),
        "varifold_error_normalized_raw": float(np.mean(rows["vfn_raw"])),
        "varifold_error_self_baseline": base,
        "wall_time_per_1k": elapsed * 1000.0 / len(testset),
        "per_mesh_vertex_dist": rows["mvd"],
    }


# --- persistence -------------------------------------------------------------------


def _prefixed(prefix, arrays):
    return {f"{prefix}{k}": v for k, v in arrays.items()}


def _unprefixed(prefix, arrays):
    return {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}


def save_bundle(model: VariShapeModel, path) -> None:
    arrays = {
        "kernel.sigmas": np.array(model.kernel.sigmas),
        "kernel.weights": np.array(model.kernel.weights),
        "feat_mean": model.feat_mean,
        "feat_std": model.feat_std,
    }
    arrays.update(_prefixed("G.", model.G.to_arrays()))
    arrays.update(_prefixed("F.", model.F.to_arrays()))
    arrays.update(net_arrays(model.net, "net."))
    meta = {"G": type(model.G).__name__, "F": type(model.F).__name__}
    container.write(path, "varishape", arrays, meta)


def load_bundle(path) -> VariShapeModel:
    arrays, meta = container.read(path, "varishape")
    G = container.decoder_from(_unprefixed("G.", arrays), {"type": meta["G"]})
    F = container.decoder_from(_unprefixed("F.", arrays), {"type": meta["F"]})
    kernel = VarifoldKernel(tuple(arrays["kernel.sigmas"]), tuple(arrays["kernel.weights"]))
    net = net_from_arrays(arrays, "net.")
    return VariShapeModel(G, F, kernel, net, arrays["feat_mean"], arrays["feat_std"])


def forward_codes(model: VariShapeModel, features) -> np.ndarray:
    return forward_batch(model.net, model.normalize(features))
