"""Run configuration: INI file with one section per stage, overridden by environment
variables (``BODYLATENT_<SECTION>_<KEY>``) and then by command-line ``section.key=value`` pairs.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import os
from dataclasses import dataclass, field
from pathlib import Path

ENV_PREFIX = "BODYLATENT_"


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration: " + "; ".join(self.problems))


@dataclass
class RunSection:
    seed: int = 0
    out_dir: str = "out"
    data_dir: str = ""  # empty means <out_dir>/data


@dataclass
class DataSection:
    count: int = 3000
    frames_per_sequence: int = 10
    duration: int = 90
    subdivide_frac: float = 0.5
    hole_count: int = 1
    hole_radius_frac: float = 0.03
    jitter_sigma_frac: float = 0.001
    drop_face_frac: float = 0.02
    motion_sequences: int = 90
    motion_test_sequences: int = 30


@dataclass
class ModelSection:
    g_dim: int = 60
    g_fit_samples: int = 400
    g_resolution: str = "coarse"
    f_resolution: str = "fine"
    kernel_fracs: str = "0.15"


@dataclass
class VarishapeSection:
    hidden: int = 256
    depth: int = 3
    warm_epochs: int = 200
    epochs: int = 60
    batch: int = 32
    lr: float = 1e-3
    lr_final: float = 1e-5
    use_raw: bool = True


@dataclass
class MogenSection:
    n_lifted: int = 0  # 0 means 4 * d_pose
    hidden: int = 256
    depth: int = 2
    window: int = 4
    stride: int = 2
    epochs: int = 200
    batch: int = 64
    lr: float = 1e-3


@dataclass
class BaselineSection:
    iters: int = 200
    history: int = 10


@dataclass
class EvalSection:
    n_test: int = 200
    n_baseline: int = 200


@dataclass
class AppsSection:
    blend_mode: str = "line"
    kde_standardize_shape: bool = True
    sample_count: int = 10


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    varishape: VarishapeSection = field(default_factory=VarishapeSection)
    mogen: MogenSection = field(default_factory=MogenSection)
    baseline: BaselineSection = field(default_factory=BaselineSection)
    eval: EvalSection = field(default_factory=EvalSection)
    apps: AppsSection = field(default_factory=AppsSection)

    @property
    def out_dir(self) -> Path:
        return Path(self.run.out_dir)

    @property
    def data_dir(self) -> Path:
        return Path(self.run.data_dir) if self.run.data_dir else self.out_dir / "data"

    @property
    def kernel_fracs(self) -> tuple:
        return tuple(float(x) for x in self.model.kernel_fracs.replace(",", " ").split())

    def seed_for(self, stream: str) -> int:
        """Independent integer seed for a named substream of the master seed."""
        h = hashlib.blake2b(f"{self.run.seed}:{stream}".encode(), digest_size=8).digest()
        return int.from_bytes(h, "little") >> 1


def _sections(cfg: RunConfig):
    for f in dataclasses.fields(cfg):
        yield f.name, getattr(cfg, f.name)


def _convert(raw: str, typ, where: str):
    typ = typ if isinstance(typ, type) else {"int": int, "float": float, "bool": bool, "str": str}[typ]
    if typ is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{where}: expected a boolean, got {raw!r}")
    try:
        return typ(raw.strip()) if typ is not str else raw.strip()
    except ValueError:
        raise ValueError(f"{where}: expected {typ.__name__}, got {raw!r}") from None


def _assign(cfg: RunConfig, section: str, key: str, raw: str, problems: list, origin: str):
    sec = getattr(cfg, section, None) if section in dict(_sections(cfg)) else None
    if sec is None:
        problems.append(f"{origin}: unknown section [{section}]")
        return
    fields = {f.name: f for f in dataclasses.fields(sec)}
    if key not in fields:
        problems.append(f"{origin}: unknown key {section}.{key}")
        return
    try:
        setattr(sec, key, _convert(raw, fields[key].type, f"{origin} {section}.{key}"))
    except ValueError as exc:
        problems.append(str(exc))


def serialize(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser()
    for name, sec in _sections(cfg):
        parser[name] = {f.name: repr(v) if isinstance(v, float) else str(v)
                        for f in dataclasses.fields(sec) for v in [getattr(sec, f.name)]}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def parse(text: str, origin: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text, source=origin)
    except configparser.Error as exc:
        raise ConfigError([f"{origin}: {exc}"]) from None
    cfg = RunConfig()
    problems = []
    for section in parser.sections():
        for key, raw in parser[section].items():
            _assign(cfg, section, key, raw, problems, origin)
    if problems:
        raise ConfigError(problems)
    return cfg


def load(path=None, env=None, overrides=()) -> RunConfig:
    """File, then environment, then ``section.key=value`` overrides; validated at the end."""
    cfg = parse(Path(path).read_text(), str(path)) if path else RunConfig()
    env = os.environ if env is None else env
    problems = []
    for name, var in sorted(env.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):].lower()
        section, _, key = rest.partition("_")
        _assign(cfg, section, key, var, problems, f"env {name}")
    for item in overrides:
        target, sep, raw = item.partition("=")
        section, dot, key = target.strip().partition(".")
        if not sep or not dot:
            problems.append(f"override {item!r}: expected section.key=value")
            continue
        _assign(cfg, section, key, raw, problems, "override")
    if problems:
        raise ConfigError(problems)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    """Raise ``ConfigError`` listing every invalid field."""
    p = []

    def need(cond, msg):
        if not cond:
            p.append(msg)

    need(cfg.run.seed >= 0, "run.seed must be nonnegative")
    need(bool(cfg.run.out_dir), "run.out_dir must be set")
    d = cfg.data
    need(d.count > 0, "data.count must be positive")
    need(d.frames_per_sequence > 0, "data.frames_per_sequence must be positive")
    need(d.duration >= 3, "data.duration must be at least 3 frames")
    for name in ("subdivide_frac", "hole_radius_frac", "jitter_sigma_frac", "drop_face_frac"):
        need(0.0 <= getattr(d, name) <= 1.0, f"data.{name} must lie in [0, 1]")
    need(d.hole_count >= 0, "data.hole_count must be nonnegative")
    need(d.motion_sequences > 0, "data.motion_sequences must be positive")
    need(d.motion_test_sequences > 0, "data.motion_test_sequences must be positive")
    m = cfg.model
    need(m.g_dim > 0, "model.g_dim must be positive")
    need(m.g_fit_samples > m.g_dim, "model.g_fit_samples must exceed model.g_dim")
    need(m.g_resolution in ("fine", "coarse"), "model.g_resolution must be 'fine' or 'coarse'")
    need(m.f_resolution in ("fine", "coarse"), "model.f_resolution must be 'fine' or 'coarse'")
    try:
        fr = cfg.kernel_fracs
        need(len(fr) > 0 and min(fr) > 0, "model.kernel_fracs must be positive numbers")
    except ValueError:
        p.append("model.kernel_fracs must be a list of numbers")
    v = cfg.varishape
    need(v.hidden > 0 and v.depth >= 0, "varishape.hidden/depth must be positive")
    need(v.warm_epochs >= 0 and v.epochs >= 0, "varishape epochs must be nonnegative")
    need(v.batch > 0, "varishape.batch must be positive")
    need(v.lr >= 0 and v.lr_final > 0, "varishape.lr must be nonnegative and lr_final positive")
    g = cfg.mogen
    need(g.n_lifted >= 0, "mogen.n_lifted must be nonnegative")
    need(g.hidden > 0 and g.depth >= 0, "mogen.hidden/depth must be positive")
    need(g.window >= 2, "mogen.window must be at least 2")
    need(g.stride >= 1, "mogen.stride must be positive")
    need(g.epochs >= 0 and g.batch > 0 and g.lr >= 0, "mogen epochs/batch/lr out of range")
    need(cfg.baseline.iters >= 0 and cfg.baseline.history >= 1, "baseline.iters/history out of range")
    need(cfg.eval.n_test > 0 and cfg.eval.n_baseline >= 0, "eval.n_test/n_baseline out of range")
    need(cfg.apps.blend_mode in ("line", "pointwise"), "apps.blend_mode must be 'line' or 'pointwise'")
    need(cfg.apps.sample_count > 0, "apps.sample_count must be positive")
    if cfg.run.data_dir and not Path(cfg.run.data_dir).parent.exists():
        p.append(f"run.data_dir parent {Path(cfg.run.data_dir).parent} does not exist")
    if not Path(cfg.run.out_dir).absolute().parent.exists():
        p.append(f"run.out_dir parent {Path(cfg.run.out_dir).absolute().parent} does not exist")
    if p:
        raise ConfigError(p)
