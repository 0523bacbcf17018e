"""Orchestration shared by the command-line tool and the acceptance checks: building the
decoders from a configuration, writing and reading datasets, and running the benchmarks.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig
from .latent.affine import fit_affine
from .latent.body import build_body
from .latent.dataset import Sample, make_dataset, make_sequences, random_codes
from .latent.decoder import LatentCode
from .latent.motion import PoseSequence
from .mesh import CorruptionSpec, load_obj, save_obj
from .mogen import MogenModel, extract_minisequences, load_sequence, save_sequence
from .varifold import VarifoldKernel
from .varishape import VariShapeModel, chamfer_search, mean_vertex_dist


def corruption_spec(cfg: RunConfig) -> CorruptionSpec:
    d = cfg.data
    return CorruptionSpec(d.hole_count, d.hole_radius_frac, d.jitter_sigma_frac, d.drop_face_frac)


def target_decoder(cfg: RunConfig):
    return build_body(cfg.model.f_resolution)


def feature_decoder(cfg: RunConfig):
    """PCA decoder fitted on decodes of random codes of the synthetic body."""
    body = build_body(cfg.model.g_resolution)
    codes = random_codes(body, cfg.model.g_fit_samples, cfg.seed_for("g_fit"))
    return fit_affine([body.decode(c) for c in codes], cfg.model.g_dim)


def default_kernel(cfg: RunConfig, G) -> VarifoldKernel:
    return VarifoldKernel.for_mesh(G.template, cfg.kernel_fracs)


def reference_kernel(cfg: RunConfig) -> VarifoldKernel:
    """Kernel scaled to the template body, used when no trained model is at hand."""
    return VarifoldKernel.for_mesh(build_body("coarse").template, cfg.kernel_fracs)


# --- dataset on disk ----------------------------------------------------------------

MANIFEST = "manifest.tsv"
MOTIONS = "motions.tsv"


def _fmt(vec) -> str:
    return " ".join(repr(float(x)) for x in vec)


def write_dataset(cfg: RunConfig, samples, sequences, test_sequences, data_dir: Path) -> Path:
    mesh_dir = data_dir / "meshes"
    mesh_dir.mkdir(parents=True, exist_ok=True)
    rows = ["index\traw\tregistered\tsplit\tsequence\tcode"]
    for i, s in enumerate(samples):
        raw = f"meshes/raw_{i:05d}.obj"
        reg = f"meshes/reg_{i:05d}.obj"
        save_obj(s.raw, data_dir / raw)
        save_obj(s.registered, data_dir / reg)
        rows.append(f"{i}\t{raw}\t{reg}\t{s.split}\t{s.sequence}\t{_fmt(s.code.as_vector())}")
    (data_dir / MANIFEST).write_text("\n".join(rows) + "\n")
    mot_dir = data_dir / "motions"
    mot_dir.mkdir(exist_ok=True)
    rows = ["name\tsplit\tkind\tseed\tshape"]
    for split, seqs in (("train", sequences), ("test", test_sequences)):
        for j, seq in enumerate(seqs):
            name = f"motions/{split}_{j:04d}.seq"
            save_sequence(seq.poses, data_dir / name)
            rows.append(f"{name}\t{split}\t{seq.kind}\t{seq.seed}\t{_fmt(seq.shape)}")
    (data_dir / MOTIONS).write_text("\n".join(rows) + "\n")
    return data_dir / MANIFEST


def generate_data(cfg: RunConfig, data_dir: Path | None = None) -> Path:
    data_dir = Path(data_dir or cfg.data_dir)
    d = cfg.data
    samples = make_dataset(d.count, corruption_spec(cfg), cfg.seed_for("data"), target_decoder(cfg),
                           d.frames_per_sequence, d.subdivide_frac, d.duration)
    train = make_sequences(d.motion_sequences, cfg.seed_for("motions"), duration=d.duration)
    test = make_sequences(d.motion_test_sequences, cfg.seed_for("motions_test"), duration=d.duration)
    return write_dataset(cfg, samples, train, test, data_dir)


def read_dataset(data_dir: Path, d_pose: int, split: str | None = None, limit: int | None = None) -> list:
    data_dir = Path(data_dir)
    lines = (data_dir / MANIFEST).read_text().splitlines()[1:]
    out = []
    for line in lines:
        idx, raw, reg, sp, seq, code = line.split("\t")
        if split is not None and sp != split:
            continue
        v = np.array([float(x) for x in code.split()])
        out.append(Sample(load_obj(data_dir / raw), load_obj(data_dir / reg), LatentCode(v[:d_pose], v[d_pose:]),
                          int(seq), sp))
        if limit is not None and len(out) >= limit:
            break
    return out


@dataclass(frozen=True)
class MotionRecord:
    name: str
    split: str
    kind: str
    shape: np.ndarray
    poses: PoseSequence


def read_motions(data_dir: Path, split: str | None = None) -> list:
    data_dir = Path(data_dir)
    out = []
    for line in (data_dir / MOTIONS).read_text().splitlines()[1:]:
        name, sp, kind, _seed, shape = line.split("\t")
        if split is not None and sp != split:
            continue
        out.append(MotionRecord(name, sp, kind, np.array([float(x) for x in shape.split()]),
                                load_sequence(data_dir / name)))
    return out


def motion_windows(cfg: RunConfig, motions) -> np.ndarray:
    return extract_minisequences([m.poses for m in motions], cfg.mogen.window, cfg.mogen.stride)


def new_mogen(cfg: RunConfig, d_pose: int) -> MogenModel:
    g = cfg.mogen
    return MogenModel.create(d_pose, g.n_lifted or 4 * d_pose, g.hidden, g.depth, cfg.seed_for("mogen_init"))


def new_varishape(cfg: RunConfig, G, F) -> VariShapeModel:
    v = cfg.varishape
    return VariShapeModel.create(G, F, default_kernel(cfg, G), v.hidden, v.depth, cfg.seed_for("varishape_init"))


def baseline_errors(F, samples, iters: int, history: int = 10, init=None):
    """Chamfer search from the rest code on raw meshes; returns per-mesh vertex errors and timings."""
    errs, secs, iters_done, objective = [], [], [], []
    for s in samples:
        res = chamfer_search(F, s.raw, init=init, iters=iters, history=history)
        errs.append(mean_vertex_dist(F.decode(res.code), s.registered))
        secs.append(res.seconds)
        iters_done.append(res.iterations)
        objective.append(res.value)
    return {"vertex": errs, "seconds": secs, "iterations": iters_done, "chamfer": objective}


def retrieval_times(model, samples):
    from .varishape import retrieve

    out = []
    for s in samples:
        t0 = time.perf_counter()
        retrieve(model, s.raw)
        out.append(time.perf_counter() - t0)
    return out
