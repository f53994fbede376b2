"""Experiment configuration: YAML parsing, schema validation with explicit
error paths, and builders turning a validated config into live components.

A config plus a seed fully determines a run; the resolved (default-filled)
form is written into every run directory.
"""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .errors import ConfigInvalidError
from .kernels import (
    IMQ,
    MultiScaleRBF,
    ProductHybrid,
    SpinRBF,
    SumKernel,
    default_spin_bandwidths,
)
from .mcmc import (
    GaussianRW,
    HybridTwoPhase,
    IsingMixture,
    IsingMultiSpin,
    TransitionKernel,
)
from .targets import DoubleWellTarget, GmmTarget, IsingTarget

BENCHMARKS = ("gmm", "ising", "hybrid")


@dataclass
class ExperimentConfig:
    benchmark: str
    seed: int = 0
    out_dir: str = "runs"
    batch_size: int = 2048
    iterations: int = 1000
    eval_every: int = 1000
    eval_samples: int = 1 << 14
    checkpoint_every: int = 10000
    workers: int = 0
    target: dict = field(default_factory=dict)
    generator: dict = field(default_factory=dict)
    kernel: dict = field(default_factory=dict)
    transition: dict = field(default_factory=dict)
    optimizer: dict = field(default_factory=dict)
    boundary: dict | None = None

    def to_dict(self) -> dict:
        d = {
            "benchmark": self.benchmark,
            "seed": self.seed,
            "out_dir": self.out_dir,
            "batch_size": self.batch_size,
            "iterations": self.iterations,
            "eval_every": self.eval_every,
            "eval_samples": self.eval_samples,
            "checkpoint_every": self.checkpoint_every,
            "workers": self.workers,
            "target": dict(self.target),
            "generator": dict(self.generator),
            "kernel": dict(self.kernel),
            "transition": dict(self.transition),
            "optimizer": dict(self.optimizer),
        }
        if self.boundary is not None:
            d["boundary"] = dict(self.boundary)
        return d

    def config_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:8]


class _Checker:
    """Collects path-qualified validation errors instead of failing fast."""

    def __init__(self):
        self.errors: list[str] = []

    def fail(self, path: str, msg: str) -> None:
        self.errors.append(f"{path}: {msg}")

    def expect(self, value, path, types, pred=None, msg="invalid value"):
        if not isinstance(value, types):
            names = types.__name__ if isinstance(types, type) else \
                "/".join(t.__name__ for t in types)
            self.fail(path, f"expected {names}, got {type(value).__name__}")
            return False
        if pred is not None and not pred(value):
            self.fail(path, msg)
            return False
        return True

    def done(self) -> None:
        if self.errors:
            raise ConfigInvalidError("\n".join(self.errors))


_POS = lambda v: v > 0
_NONNEG = lambda v: v >= 0

_DEFAULT_GENERATOR = {
    "gmm": {"layers": 8, "hidden": 64, "latent_dim": 2},
    "ising": {"latent_dim": 32, "hidden": [256, 256, 256]},
    "hybrid": {"latent_dim": 32, "hidden": [128, 128, 128]},
}

_DEFAULT_TRANSITION = {
    "gmm": {"variant": "gaussian_rw", "steps": 3, "sigma_prop": 0.1},
    "ising": {"variant": "ising_mixture", "steps": 1, "p_global": 0.1},
    "hybrid": {"variant": "hybrid_two_phase", "steps": 3, "p_teleport": 0.2,
               "sigma_rw": 0.5, "p_flip": 0.1},
}

_DEFAULT_OPTIMIZER = {
    "gmm": {"variant": "adamw", "lr": 1e-4, "weight_decay": 0.01,
            "clip_norm": None,
            "schedule": {"variant": "step", "milestones": [20000, 50000, 100000],
                         "factor": 0.71}},
    "ising": {"variant": "adamw", "lr": 1e-3, "weight_decay": 0.01,
              "clip_norm": None,
              "schedule": {"variant": "step", "milestones": [20000, 50000],
                           "factor": 0.71}},
    "hybrid": {"variant": "adamw", "lr": 5e-4, "weight_decay": 0.01,
               "clip_norm": 1.0,
               "schedule": {"variant": "cosine", "lr_min": 1e-6}},
}

_DEFAULT_TARGET = {
    "gmm": {},
    "ising": {"side": 3, "beta": 0.2, "coupling": 1.0, "field": 0.0},
    "hybrid": {"mus": [1.0, 9.0, 25.0]},
}

_DEFAULT_BOUNDARY = {"center": [0.0, 0.0], "radius": 5.0, "sharpness": 10.0,
                     "weight": 1.0}


def _default_kernel(benchmark: str, target: dict) -> dict:
    if benchmark == "gmm":
        return {"rbf_bandwidths": [0.1, 0.5, 1.0, 2.0, 5.0],
                "imq": {"beta": 0.5, "c": 1.4}}
    if benchmark == "ising":
        side = int(target.get("side", 3))
        return {"rbf_bandwidths": list(default_spin_bandwidths(side * side))}
    return {"rbf_bandwidths": [0.1, 0.5, 1.0, 2.0, 5.0]}


def _merged(defaults: dict, given: dict) -> dict:
    out = dict(defaults)
    for k, v in given.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merged(out[k], v)
        else:
            out[k] = v
    return out


def validate_config(raw: dict) -> ExperimentConfig:
    """Default-fill and validate a raw mapping; raises ConfigInvalidError
    listing every problem with its path."""
    chk = _Checker()
    if not isinstance(raw, dict):
        raise ConfigInvalidError("config root: expected a mapping")
    bench = raw.get("benchmark")
    if bench not in BENCHMARKS:
        raise ConfigInvalidError(
            f"benchmark: expected one of {BENCHMARKS}, got {bench!r}"
        )
    known = {
        "benchmark", "seed", "out_dir", "batch_size", "iterations",
        "eval_every", "eval_samples", "checkpoint_every", "workers",
        "target", "generator", "kernel", "transition", "optimizer", "boundary",
    }
    for key in raw:
        if key not in known:
            chk.fail(key, "unknown key")

    target = _merged(_DEFAULT_TARGET[bench], raw.get("target") or {})
    cfg = ExperimentConfig(
        benchmark=bench,
        seed=raw.get("seed", 0),
        out_dir=raw.get("out_dir", "runs"),
        batch_size=raw.get("batch_size", 2048),
        iterations=raw.get("iterations", 1000),
        eval_every=raw.get("eval_every", 1000),
        eval_samples=raw.get("eval_samples", 1 << 14),
        checkpoint_every=raw.get("checkpoint_every", 10000),
        workers=raw.get("workers", 0) or 0,
        target=target,
        generator=_merged(_DEFAULT_GENERATOR[bench], raw.get("generator") or {}),
        kernel=_merged(_default_kernel(bench, target), raw.get("kernel") or {}),
        transition=_merged(_DEFAULT_TRANSITION[bench], raw.get("transition") or {}),
        optimizer=_merged(_DEFAULT_OPTIMIZER[bench], raw.get("optimizer") or {}),
        boundary=None,
    )
    if bench == "gmm":
        b = raw.get("boundary", _DEFAULT_BOUNDARY)
        cfg.boundary = None if b is None else _merged(_DEFAULT_BOUNDARY, b)
    elif raw.get("boundary") is not None:
        chk.fail("boundary", "only the gmm benchmark takes a boundary penalty")

    chk.expect(cfg.seed, "seed", int, _NONNEG, "must be >= 0")
    chk.expect(cfg.out_dir, "out_dir", str)
    chk.expect(cfg.batch_size, "batch_size", int, _POS, "must be > 0")
    chk.expect(cfg.iterations, "iterations", int, _POS, "must be > 0")
    chk.expect(cfg.eval_every, "eval_every", int, _NONNEG, "must be >= 0")
    chk.expect(cfg.eval_samples, "eval_samples", int, _POS, "must be > 0")
    chk.expect(cfg.checkpoint_every, "checkpoint_every", int, _NONNEG,
               "must be >= 0")
    chk.expect(cfg.workers, "workers", int, _NONNEG, "must be >= 0")

    _validate_target(chk, bench, cfg.target)
    _validate_generator(chk, bench, cfg.generator)
    _validate_kernel(chk, bench, cfg.kernel)
    _validate_transition(chk, bench, cfg.transition)
    _validate_optimizer(chk, cfg.optimizer, cfg.iterations)
    if cfg.boundary is not None:
        _validate_boundary(chk, cfg.boundary)
    chk.done()
    return cfg


def _validate_target(chk, bench, t):
    if bench == "ising":
        chk.expect(t.get("side"), "target.side", int, lambda v: 1 <= v * v <= 20,
                   "side^2 must lie in 1..20 for exact enumeration")
        chk.expect(t.get("beta"), "target.beta", (int, float), _POS, "must be > 0")
        chk.expect(t.get("coupling"), "target.coupling", (int, float))
        chk.expect(t.get("field"), "target.field", (int, float))
    elif bench == "hybrid":
        mus = t.get("mus")
        if chk.expect(mus, "target.mus", list, lambda v: len(v) >= 2,
                      "need at least 2 modes"):
            for i, m in enumerate(mus):
                chk.expect(m, f"target.mus[{i}]", (int, float), _POS,
                           "must be > 0")


def _validate_generator(chk, bench, g):
    if bench == "gmm":
        chk.expect(g.get("layers"), "generator.layers", int, _POS, "must be > 0")
        chk.expect(g.get("hidden"), "generator.hidden", int, _POS, "must be > 0")
    else:
        chk.expect(g.get("latent_dim"), "generator.latent_dim", int, _POS,
                   "must be > 0")
        hidden = g.get("hidden")
        if chk.expect(hidden, "generator.hidden", list,
                      lambda v: len(v) >= 1, "need at least one hidden layer"):
            for i, h in enumerate(hidden):
                chk.expect(h, f"generator.hidden[{i}]", int, _POS, "must be > 0")


def _validate_kernel(chk, bench, k):
    bws = k.get("rbf_bandwidths")
    if chk.expect(bws, "kernel.rbf_bandwidths", list,
                  lambda v: len(v) >= 1, "need at least one bandwidth"):
        for i, b in enumerate(bws):
            chk.expect(b, f"kernel.rbf_bandwidths[{i}]", (int, float), _POS,
                       "must be > 0")
    imq = k.get("imq")
    if imq is not None:
        if bench != "gmm":
            chk.fail("kernel.imq", "the IMQ term applies to the gmm benchmark")
        else:
            chk.expect(imq.get("beta"), "kernel.imq.beta", (int, float),
                       lambda v: 0 < v < 1, "must lie in (0, 1)")
            chk.expect(imq.get("c"), "kernel.imq.c", (int, float), _POS,
                       "must be > 0")


def _validate_transition(chk, bench, t):
    variants = {
        "gmm": ("gaussian_rw",),
        "ising": ("ising_mixture", "ising_multispin"),
        "hybrid": ("hybrid_two_phase",),
    }[bench]
    if t.get("variant") not in variants:
        chk.fail("transition.variant", f"expected one of {variants}")
    chk.expect(t.get("steps"), "transition.steps", int, _POS, "must be > 0")
    if bench == "gmm":
        chk.expect(t.get("sigma_prop"), "transition.sigma_prop", (int, float),
                   _POS, "must be > 0")
    if t.get("variant") == "ising_mixture":
        chk.expect(t.get("p_global"), "transition.p_global", (int, float),
                   lambda v: 0 <= v < 1, "must lie in [0, 1)")
    if bench == "hybrid":
        chk.expect(t.get("p_teleport"), "transition.p_teleport", (int, float),
                   lambda v: 0 <= v < 1, "must lie in [0, 1)")
        chk.expect(t.get("sigma_rw"), "transition.sigma_rw", (int, float), _POS,
                   "must be > 0")
        chk.expect(t.get("p_flip"), "transition.p_flip", (int, float),
                   lambda v: 0 <= v <= 1, "must lie in [0, 1]")


def _validate_optimizer(chk, o, iterations):
    if o.get("variant") not in ("adam", "adamw"):
        chk.fail("optimizer.variant", "expected adam or adamw")
    chk.expect(o.get("lr"), "optimizer.lr", (int, float), _POS, "must be > 0")
    chk.expect(o.get("weight_decay", 0.0), "optimizer.weight_decay", (int, float),
               _NONNEG, "must be >= 0")
    clip = o.get("clip_norm")
    if clip is not None:
        chk.expect(clip, "optimizer.clip_norm", (int, float), _POS, "must be > 0")
    sched = o.get("schedule")
    if sched is not None:
        variant = sched.get("variant")
        if variant == "step":
            ms = sched.get("milestones")
            if chk.expect(ms, "optimizer.schedule.milestones", list):
                for i, m in enumerate(ms):
                    chk.expect(m, f"optimizer.schedule.milestones[{i}]", int,
                               _NONNEG, "must be >= 0")
            chk.expect(sched.get("factor"), "optimizer.schedule.factor",
                       (int, float), _POS, "must be > 0")
        elif variant == "cosine":
            chk.expect(sched.get("lr_min"), "optimizer.schedule.lr_min",
                       (int, float), _NONNEG, "must be >= 0")
        else:
            chk.fail("optimizer.schedule.variant", "expected step or cosine")


def _validate_boundary(chk, b):
    center = b.get("center")
    if chk.expect(center, "boundary.center", list, lambda v: len(v) == 2,
                  "expected [x, y]"):
        for i, c in enumerate(center):
            chk.expect(c, f"boundary.center[{i}]", (int, float))
    chk.expect(b.get("radius"), "boundary.radius", (int, float), _POS,
               "must be > 0")
    chk.expect(b.get("sharpness"), "boundary.sharpness", (int, float), _POS,
               "must be > 0")
    chk.expect(b.get("weight"), "boundary.weight", (int, float), _NONNEG,
               "must be >= 0")


def load_config(path_or_name) -> ExperimentConfig:
    """Load from a filesystem path or a bundled config name (e.g. 'smoke')."""
    path = Path(path_or_name)
    if not path.exists():
        bundled = bundled_config_path(str(path_or_name))
        if bundled is None:
            raise ConfigInvalidError(f"config file not found: {path_or_name}")
        path = bundled
    with path.open() as fh:
        raw = yaml.safe_load(fh)
    return validate_config(raw if raw is not None else {})


def save_config(cfg: ExperimentConfig, path) -> Path:
    path = Path(path)
    path.write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
    return path


def bundled_config_path(name: str) -> Path | None:
    if not name.endswith(".yaml"):
        name = name + ".yaml"
    ref = resources.files("revgen") / "configs" / name
    try:
        if ref.is_file():
            return Path(str(ref))
    except (OSError, TypeError):
        pass
    return None


def prepare_run_dir(cfg: ExperimentConfig) -> Path:
    """runs/<UTC timestamp>-<config hash>/ with the resolved config inside."""
    stamp = time.strftime("%Y%m%d-%H%M%S", time.gmtime())
    run_dir = Path(cfg.out_dir) / f"{stamp}-{cfg.config_hash()}"
    suffix = 0
    while run_dir.exists():
        suffix += 1
        run_dir = Path(cfg.out_dir) / f"{stamp}-{cfg.config_hash()}-{suffix}"
    run_dir.mkdir(parents=True)
    save_config(cfg, run_dir / "config.yaml")
    return run_dir


# -- builders -----------------------------------------------------------------

def build_target(cfg: ExperimentConfig):
    if cfg.benchmark == "gmm":
        return GmmTarget()
    if cfg.benchmark == "ising":
        t = cfg.target
        return IsingTarget(side=int(t["side"]), beta=float(t["beta"]),
                           coupling=float(t["coupling"]),
                           field_h=float(t["field"]))
    return DoubleWellTarget(tuple(float(m) for m in cfg.target["mus"]))


def build_kernel_spec(cfg: ExperimentConfig):
    bws = tuple(float(b) for b in cfg.kernel["rbf_bandwidths"])
    if cfg.benchmark == "gmm":
        parts: list = [MultiScaleRBF(bws)]
        imq = cfg.kernel.get("imq")
        if imq is not None:
            parts.append(IMQ(float(imq["beta"]), float(imq["c"])))
        return SumKernel(tuple(parts)) if len(parts) > 1 else parts[0]
    if cfg.benchmark == "ising":
        return SpinRBF(bws)
    return ProductHybrid(MultiScaleRBF(bws))


def build_generator(cfg: ExperimentConfig):
    from .generators import CouplingFlow, SplitHeadGenerator, SteSignGenerator

    g = cfg.generator
    if cfg.benchmark == "gmm":
        return CouplingFlow(dim=2, n_layers=int(g["layers"]),
                            hidden=int(g["hidden"]))
    if cfg.benchmark == "ising":
        return SteSignGenerator(side=int(cfg.target["side"]),
                                latent_dim=int(g["latent_dim"]),
                                hidden=tuple(int(h) for h in g["hidden"]))
    return SplitHeadGenerator(n_modes=len(cfg.target["mus"]), x_dim=1,
                              latent_dim=int(g["latent_dim"]),
                              hidden=tuple(int(h) for h in g["hidden"]))


def build_move(cfg: ExperimentConfig):
    t = cfg.transition
    variant = t["variant"]
    if variant == "gaussian_rw":
        return GaussianRW(float(t["sigma_prop"]))
    if variant == "ising_mixture":
        return IsingMixture(float(t["p_global"]))
    if variant == "ising_multispin":
        return IsingMultiSpin()
    return HybridTwoPhase(float(t["p_teleport"]), float(t["sigma_rw"]),
                          float(t["p_flip"]))


def build_transition(cfg: ExperimentConfig) -> TransitionKernel:
    return TransitionKernel(build_move(cfg), build_target(cfg),
                            int(cfg.transition["steps"]))


def build_boundary(cfg: ExperimentConfig):
    from .training import BoundarySpec

    if cfg.boundary is None:
        return None
    b = cfg.boundary
    return BoundarySpec(tuple(float(c) for c in b["center"]),
                        float(b["radius"]), float(b["sharpness"]),
                        float(b["weight"]))


def build_schedule(cfg: ExperimentConfig):
    from .training import CosineAnneal, StepDecay

    sched = cfg.optimizer.get("schedule")
    if sched is None:
        return None
    if sched["variant"] == "step":
        return StepDecay(tuple(int(m) for m in sched["milestones"]),
                         float(sched["factor"]))
    return CosineAnneal(float(sched["lr_min"]), cfg.iterations)
