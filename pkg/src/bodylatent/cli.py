"""Command-line entry point.

Every command writes deterministic ``metric<TAB>value`` records to stdout and to
``<out>/<command>/metrics.tsv``; wall-clock measurements go to ``timings.tsv`` beside it.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
from filelock import FileLock, Timeout

from . import pipeline, plotting
from .apps import (
    BodyMotion,
    export_sequence,
    fit_kde,
    generate_body,
    extrapolate_4d,
    interpolate_4d,
    transfer_lifted,
    transfer_pose_swap,
)
from .config import ConfigError, RunConfig, load
from .container import ContainerError
from .latent.decoder import DecoderError
from .latent.motion import PoseSequence
from .mesh import MeshError, load_obj, save_obj
from .mogen import (
    MogenConfig,
    benchmark,
    extrapolate,
    interpolate,
    linear_extrapolate,
    linear_interpolate,
    load_bundle as load_mogen,
    load_sequence,
    pose_error,
    save_bundle as save_mogen,
    save_sequence,
    train_mogen,
)
from .nn import TrainingError
from .varifold import chamfer_sq_dist, varifold_terms
from .varishape import (
    TrainConfig,
    evaluate,
    load_bundle as load_varishape,
    retrieve,
    save_bundle as save_varishape,
    train_varishape,
)

log = logging.getLogger("bodylatent")


class Report:
    """Collects metric records for one command."""

    def __init__(self, out_dir: Path):
        self.dir = out_dir
        self.dir.mkdir(parents=True, exist_ok=True)
        self.rows = []
        self.timings = []

    def add(self, name: str, value):
        if isinstance(value, float):
            value = repr(value)
        self.rows.append(f"{name}\t{value}")
        log.info("%-40s %s", name, value)

    def time(self, name: str, seconds: float):
        self.timings.append(f"{name}\t{seconds:.6f}")
        log.info("%-40s %.4f s", name, seconds)

    def close(self):
        text = "\n".join(self.rows) + "\n"
        (self.dir / "metrics.tsv").write_text(text)
        if self.timings:
            (self.dir / "timings.tsv").write_text("\n".join(self.timings) + "\n")
        sys.stdout.write(text)


def _models_dir(cfg: RunConfig) -> Path:
    return cfg.out_dir / "models"


def _history_tsv(path: Path, histories: dict):
    n = max((len(h) for h in histories.values()), default=0)
    rows = ["step\t" + "\t".join(histories)]
    for i in range(n):
        rows.append(f"{i}\t" + "\t".join(repr(float(h[i])) if i < len(h) else "" for h in histories.values()))
    path.write_text("\n".join(rows) + "\n")


def _unit_identity(F):
    return F.rest_code[F.d_pose :]


def _decode_poses(F, poses, identity):
    return BodyMotion(identity, PoseSequence(poses)).meshes(F)


# --- commands --------------------------------------------------------------------------


def cmd_gen_data(cfg: RunConfig, args, rep: Report):
    manifest = pipeline.generate_data(cfg)
    lines = manifest.read_text().splitlines()[1:]
    splits = [line.split("\t")[3] for line in lines]
    rep.add("samples", len(lines))
    rep.add("train_samples", splits.count("train"))
    rep.add("test_samples", splits.count("test"))
    rep.add("motion_train_sequences", cfg.data.motion_sequences)
    rep.add("motion_test_sequences", cfg.data.motion_test_sequences)
    rep.add("manifest", str(manifest.relative_to(cfg.out_dir)) if manifest.is_relative_to(cfg.out_dir) else str(manifest))


def cmd_train_varishape(cfg: RunConfig, args, rep: Report):
    import time

    F = pipeline.target_decoder(cfg)
    G, ev = pipeline.feature_decoder(cfg)
    train = pipeline.read_dataset(cfg.data_dir, F.d_pose, "train")
    model = pipeline.new_varishape(cfg, G, F)
    v = cfg.varishape
    tc = TrainConfig(v.warm_epochs, v.epochs, v.batch, v.lr, v.lr, v.lr_final, cfg.seed_for("varishape_shuffle"),
                     v.use_raw)
    t0 = time.perf_counter()
    model, hist = train_varishape(model, train, tc)
    rep.time("train_seconds", time.perf_counter() - t0)
    path = _models_dir(cfg) / "varishape.bin"
    path.parent.mkdir(parents=True, exist_ok=True)
    save_varishape(model, path)
    _history_tsv(rep.dir / "history.tsv", {"code_mse": hist.warm, "vertex_mse": hist.vertex})
    plotting.loss_curves({"code MSE": hist.warm, "vertex MSE": hist.vertex}, rep.dir / "loss.png")
    rep.add("train_samples", len(train))
    rep.add("g_explained_variance", float(np.sum(ev)))
    rep.add("net_params", model.net.n_params)
    rep.add("final_code_mse", float(np.mean(hist.warm[-50:])) if hist.warm else float("nan"))
    rep.add("final_vertex_mse", float(np.mean(hist.vertex[-50:])) if hist.vertex else float("nan"))


def cmd_train_mogen(cfg: RunConfig, args, rep: Report):
    import time

    train = pipeline.read_motions(cfg.data_dir, "train")
    test = pipeline.read_motions(cfg.data_dir, "test")
    W = pipeline.motion_windows(cfg, train)
    model = pipeline.new_mogen(cfg, W.shape[2])
    g = cfg.mogen
    t0 = time.perf_counter()
    model, hist = train_mogen(model, W, MogenConfig(g.epochs, g.batch, g.lr, cfg.seed_for("mogen_shuffle")))
    rep.time("train_seconds", time.perf_counter() - t0)
    path = _models_dir(cfg) / "mogen.bin"
    path.parent.mkdir(parents=True, exist_ok=True)
    save_mogen(model, path)
    _history_tsv(rep.dir / "history.tsv", {"loss": hist.loss})
    plotting.loss_curves({"window loss": hist.loss}, rep.dir / "loss.png")
    rep.add("train_windows", len(W))
    rep.add("lifted_dim", model.N)
    rep.add("params", model.f_net.n_params + model.pi_net.n_params)
    rep.add("final_loss", float(np.mean(hist.loss[-50:])) if hist.loss else float("nan"))
    b = benchmark(model, pipeline.motion_windows(cfg, test))
    for k in ("autoencode_mse", "interp_ratio", "extrap_ratio"):
        rep.add(f"test_{k}", b[k])


def cmd_retrieve(cfg: RunConfig, args, rep: Report):
    model = load_varishape(_models_dir(cfg) / "varishape.bin")
    q = load_obj(args.mesh)
    code = retrieve(model, q)
    rec = model.F.decode(code)
    save_obj(rec, rep.dir / "reconstruction.obj")
    (rep.dir / "code.txt").write_text(" ".join(repr(float(x)) for x in code.as_vector()) + "\n")
    t = varifold_terms(q, rec, model.kernel)
    rep.add("varifold", t.value)
    rep.add("varifold_normalized", t.normalized)
    rep.add("chamfer", chamfer_sq_dist(q, rec))
    rep.add("code", " ".join(repr(float(x)) for x in code.as_vector()))


def _sequence_arg(cfg, path):
    if path:
        return load_sequence(path)
    return pipeline.read_motions(cfg.data_dir, "test")[0].poses


def cmd_interp(cfg: RunConfig, args, rep: Report):
    mogen = load_mogen(_models_dir(cfg) / "mogen.bin")
    seq = _sequence_arg(cfg, args.seq)
    end = args.end if args.end is not None else min(len(seq) - 1, args.start + cfg.mogen.window)
    truth = seq.codes[args.start : end + 1]
    out = interpolate(mogen, truth[0], truth[-1], len(truth))
    lin = linear_interpolate(truth[0], truth[-1], len(truth))
    _emit_sequence(cfg, rep, out, truth, lin, "interp")


def cmd_extrap(cfg: RunConfig, args, rep: Report):
    mogen = load_mogen(_models_dir(cfg) / "mogen.bin")
    seq = _sequence_arg(cfg, args.seq)
    steps = args.steps or cfg.mogen.window + 1
    truth = seq.codes[args.start : args.start + steps]
    out = extrapolate(mogen, truth[0], truth[1], len(truth))
    lin = linear_extrapolate(truth[0], truth[1], len(truth))
    _emit_sequence(cfg, rep, out, truth, lin, "extrap")


def _emit_sequence(cfg, rep, out: PoseSequence, truth, lin, label):
    F = pipeline.target_decoder(cfg)
    save_sequence(out, rep.dir / f"{label}.seq")
    export_sequence(_decode_poses(F, out.codes, _unit_identity(F)), rep.dir / "frames")
    plotting.pose_paths({"ground truth": truth, "lifted": out.codes, "linear": lin}, rep.dir / f"{label}.png",
                        coords=_busiest_coords(truth))
    rep.add("frames", len(out))
    rep.add(f"mogen_{label}_error", pose_error(out.codes, truth))
    rep.add(f"linear_{label}_error", pose_error(lin, truth))


def _busiest_coords(poses):
    order = np.argsort(-np.ptp(np.asarray(poses), axis=0), kind="stable")
    return int(order[0]), int(order[1])


def _mesh_list(path: Path):
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.obj"))
    else:
        rows = path.read_text().splitlines()[1:]
        files = [path.parent / r.split("\t")[1] for r in rows]
    if not files:
        raise MeshError(f"no OBJ frames found under {path}")
    return [load_obj(f) for f in files]


def cmd_transfer(cfg: RunConfig, args, rep: Report):
    model = load_varishape(_models_dir(cfg) / "varishape.bin")
    frames = _mesh_list(args.motion)
    target = load_obj(args.target)
    swapped = transfer_pose_swap(frames, target, model)
    if args.mode == "swap":
        result = swapped
    else:
        mogen = load_mogen(_models_dir(cfg) / "mogen.bin")
        target_pose = retrieve(model, target).pose
        result, path = transfer_lifted(swapped, target_pose, mogen)
        inc = path.increments
        rep.add("lifted_increment_norm", float(np.linalg.norm(inc)))
    export_sequence(result.meshes(model.F), rep.dir / "frames")
    save_sequence(result.poses, rep.dir / "transfer.seq")
    rep.add("mode", args.mode)
    rep.add("frames", len(result.poses))
    rep.add("identity", " ".join(repr(float(x)) for x in result.identity))


def cmd_sample(cfg: RunConfig, args, rep: Report):
    mogen = load_mogen(_models_dir(cfg) / "mogen.bin")
    F = pipeline.target_decoder(cfg)
    motions = pipeline.read_motions(cfg.data_dir, "train")
    poses = np.concatenate([m.poses.codes for m in motions])
    kde_pose = fit_kde(mogen.lift(poses), "lifted")
    kde_shape = fit_kde(np.stack([m.shape for m in motions]), "shape", cfg.apps.kde_standardize_shape)
    count = args.count or cfg.apps.sample_count
    base = cfg.seed_for("kde")
    meshes = [generate_body(kde_pose, kde_shape, mogen, F, base + i) for i in range(count)]
    export_sequence(meshes, rep.dir / "bodies", prefix="body")
    plotting.mesh_views({f"body {i}": m for i, m in enumerate(meshes[:3])}, rep.dir / "bodies.png")
    edge_ratio = max(float(m.edge_lengths().max() / m.bbox_diag) for m in meshes)
    rep.add("bodies", count)
    rep.add("pose_bandwidth", kde_pose.bandwidth)
    rep.add("shape_bandwidth", kde_shape.bandwidth)
    rep.add("max_edge_over_diag", edge_ratio)


def cmd_interp4d(cfg: RunConfig, args, rep: Report):
    mogen = load_mogen(_models_dir(cfg) / "mogen.bin")
    motions = pipeline.read_motions(cfg.data_dir, "test")
    a = load_sequence(args.seq_a) if args.seq_a else motions[0].poses
    b = load_sequence(args.seq_b) if args.seq_b else motions[1 % len(motions)].poses
    fn = interpolate_4d if 0.0 <= args.s <= 1.0 else extrapolate_4d
    out, line = fn(a, b, args.s, mogen, args.frames, cfg.apps.blend_mode)
    F = pipeline.target_decoder(cfg)
    save_sequence(out, rep.dir / "blend.seq")
    export_sequence(_decode_poses(F, out.codes, _unit_identity(F)), rep.dir / "frames")
    coords = _busiest_coords(np.concatenate([a.codes, b.codes]))
    plotting.pose_paths({"A": a.codes, "B": b.codes, f"s={args.s:g}": out.codes}, rep.dir / "blend.png",
                        coords=coords, markers=False)
    rep.add("s", float(args.s))
    rep.add("mode", cfg.apps.blend_mode)
    rep.add("frames", len(out))
    if line is not None:
        rep.add("line_length", float(line.length))
        rep.add("line_constant", int(line.constant))


def cmd_eval(cfg: RunConfig, args, rep: Report):
    F = pipeline.target_decoder(cfg)
    test = pipeline.read_dataset(cfg.data_dir, F.d_pose, "test", cfg.eval.n_test)
    model = load_varishape(_models_dir(cfg) / "varishape.bin")
    met = evaluate(model, test)
    rep.time("varishape_seconds_per_1k", met["wall_time_per_1k"])
    for k, v in met.items():
        if k in ("per_mesh_vertex_dist", "wall_time_per_1k"):
            continue
        rep.add(f"varishape_{k}", v)
    curves = {"varishape": met["per_mesh_vertex_dist"]}
    nb = min(cfg.eval.n_baseline, len(test))
    if nb:
        base = pipeline.baseline_errors(F, test[:nb], cfg.baseline.iters, cfg.baseline.history)
        rep.add("baseline_n", nb)
        rep.add("baseline_mean_vertex_dist", float(np.mean(base["vertex"])))
        rep.add("baseline_mean_chamfer", float(np.mean(base["chamfer"])))
        rep.add("baseline_mean_iterations", float(np.mean(base["iterations"])))
        rep.add("varishape_mean_vertex_dist_same_subset", float(np.mean(met["per_mesh_vertex_dist"][:nb])))
        per_mesh = float(np.mean(base["seconds"]))
        rep.time("baseline_seconds_per_mesh", per_mesh)
        rep.time("speedup", per_mesh / (met["wall_time_per_1k"] / 1000.0))
        curves["Chamfer search"] = base["vertex"]
    plotting.error_cdf(curves, rep.dir / "vertex_error_cdf.png")
    mogen_path = _models_dir(cfg) / "mogen.bin"
    if mogen_path.exists():
        mogen = load_mogen(mogen_path)
        b = benchmark(mogen, pipeline.motion_windows(cfg, pipeline.read_motions(cfg.data_dir, "test")))
        for k, v in b.items():
            rep.add(f"mogen_{k}", v)
        plotting.bar_metrics({"lifted interp": b["mogen_interp"], "linear interp": b["linear_interp"],
                              "lifted extrap": b["mogen_extrap"], "linear extrap": b["linear_extrap"]},
                             rep.dir / "pose_errors.png", "mean pose error (rad)")


def cmd_dist(cfg: RunConfig, args, rep: Report):
    a, b = load_obj(args.mesh_a), load_obj(args.mesh_b)
    k = pipeline.reference_kernel(cfg)
    t = varifold_terms(a, b, k)
    rep.add("varifold", t.value)
    rep.add("varifold_normalized", t.normalized)
    rep.add("chamfer", chamfer_sq_dist(a, b))
    rep.add("sigma", k.sigmas[0])


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-varishape": cmd_train_varishape,
    "train-mogen": cmd_train_mogen,
    "retrieve": cmd_retrieve,
    "interp": cmd_interp,
    "extrap": cmd_extrap,
    "transfer": cmd_transfer,
    "sample": cmd_sample,
    "interp4d": cmd_interp4d,
    "eval": cmd_eval,
    "dist": cmd_dist,
}


def _common(suppress: bool) -> argparse.ArgumentParser:
    # sub-commands repeat the global flags; suppressed defaults keep them from clobbering
    # values given before the command name
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=d(None), help="INI configuration file")
    common.add_argument("--seed", type=int, default=d(None), help="master seed (overrides run.seed)")
    common.add_argument("--out", type=Path, default=d(None), help="output directory (overrides run.out_dir)")
    common.add_argument("--set", action="append", default=d([]), metavar="SECTION.KEY=VALUE",
                        help="override one configuration value; repeatable")
    common.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common(True)
    p = argparse.ArgumentParser(prog="bodylatent", description=__doc__.splitlines()[0], parents=[_common(False)],
                                allow_abbrev=False)
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("gen-data", "train-varishape", "train-mogen", "eval", "sample"):
        sp = sub.add_parser(name, parents=[common], allow_abbrev=False)
        if name == "sample":
            sp.add_argument("--count", type=int)
    sp = sub.add_parser("retrieve", parents=[common], allow_abbrev=False)
    sp.add_argument("mesh", type=Path)
    for name in ("interp", "extrap"):
        sp = sub.add_parser(name, parents=[common], allow_abbrev=False)
        sp.add_argument("--seq", type=Path, help="pose sequence file (default: first test motion)")
        sp.add_argument("--start", type=int, default=0)
        if name == "interp":
            sp.add_argument("--end", type=int)
        else:
            sp.add_argument("--steps", type=int)
    sp = sub.add_parser("transfer", parents=[common], allow_abbrev=False)
    sp.add_argument("--motion", type=Path, required=True, help="directory of OBJ frames or a frame manifest")
    sp.add_argument("--target", type=Path, required=True)
    sp.add_argument("--mode", choices=("swap", "lifted"), default="swap")
    sp = sub.add_parser("interp4d", parents=[common], allow_abbrev=False)
    sp.add_argument("--seq-a", type=Path)
    sp.add_argument("--seq-b", type=Path)
    sp.add_argument("--s", type=float, default=0.5)
    sp.add_argument("--frames", type=int)
    sp = sub.add_parser("dist", parents=[common], allow_abbrev=False)
    sp.add_argument("mesh_a", type=Path)
    sp.add_argument("mesh_b", type=Path)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s",
                        stream=sys.stderr)
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    if args.out is not None:
        overrides.append(f"run.out_dir={args.out}")
    try:
        cfg = load(args.config, overrides=overrides)
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        lock = FileLock(str(cfg.out_dir / ".lock"))
        try:
            lock.acquire(timeout=0)
        except Timeout:
            raise RuntimeError(f"output directory {cfg.out_dir} is in use by another run") from None
        try:
            rep = Report(cfg.out_dir / args.command)
            COMMANDS[args.command](cfg, args, rep)
            rep.close()
        finally:
            lock.release()
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError, MeshError, DecoderError, ContainerError, TrainingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
