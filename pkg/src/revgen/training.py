"""Pair-reversal loss, surrogate cotangents, optimizers, and the training loop.

The loss is the biased MMD^2 V-statistic between the forward pair set
{(s_i, s'_i)} and its swap {(s'_i, s_i)}.  Cotangents are the loss gradients
with respect to the generated states alone, with every evolved state held
fixed; routing them through the generator's parameter-VJP yields the training
gradient.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _backend
from .core import Kind, PairBatch, SeededRng
from .errors import (
    EmptyBatchError,
    KindMismatchError,
    NonFiniteGradientError,
    NonFiniteLossError,
)
from .kernels import KernelSpec, ProductHybrid, radial_terms


def _pair_arrays(batch: PairBatch):
    if batch.kind is Kind.CONTINUOUS:
        return batch.cur.x, batch.nxt.x
    if batch.kind is Kind.SPINS:
        return batch.cur.real(), batch.nxt.real()
    raise KindMismatchError("hybrid batches use the product-kernel path")


def mmd_sq_and_cotangents(spec: KernelSpec, batch: PairBatch, want_cot: bool = True):
    """Fused MMD^2 V-statistic and per-sample cotangents.

    Returns (mmd_sq, cot) where cot is an (n, d) array for continuous/spin
    batches and a (cot_x, cot_onehot) tuple for hybrid ones.
    """
    if batch.n < 1:
        raise EmptyBatchError("need at least one pair")
    if batch.kind is Kind.HYBRID:
        if not isinstance(spec, ProductHybrid):
            raise KindMismatchError("hybrid batches need a ProductHybrid kernel")
        mmd, cot_x, cot_a = _backend.hybrid_pair_mmd_cotangents(
            batch.cur.x, batch.nxt.x, batch.cur.modes, batch.nxt.modes,
            batch.cur.n_modes, spec.rbf.bandwidths, want_cot,
        )
        return mmd, (cot_x, cot_a)
    if isinstance(spec, ProductHybrid):
        raise KindMismatchError("ProductHybrid kernel needs hybrid batches")
    s, sp = _pair_arrays(batch)
    bws, imq_beta, imq_c = radial_terms(spec)
    mmd, cot = _backend.pair_mmd_cotangents(s, sp, bws, imq_beta, imq_c, want_cot)
    return mmd, cot


def mmd_v_statistic(spec: KernelSpec, batch: PairBatch) -> float:
    """(1/N^2)[sum k(x_i,x_j) + sum k(y_i,y_j) - 2 sum k(x_i,y_j)] with
    x the forward pairs and y their swaps; nonnegative up to rounding."""
    return mmd_sq_and_cotangents(spec, batch, want_cot=False)[0]


def loss_cotangents(spec: KernelSpec, batch: PairBatch):
    """d MMD^2 / d s_i with every s'_j treated as a constant.

    All provided kernel variants are symmetric, which this assembly assumes.
    Spin cotangents live on the +-1 real embedding; hybrid mode cotangents on
    the one-hot relaxation of the discrete slot.
    """
    return mmd_sq_and_cotangents(spec, batch, want_cot=True)[1]


def boundary_penalty(
    x: np.ndarray, center, radius: float, sharpness: float
) -> tuple[float, np.ndarray]:
    """Soft penalty (1/N) sum Sigmoid(c (||x_i - x0||^2 - r^2)) and its
    gradient with respect to the samples."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n = x.shape[0]
    d = x - np.asarray(center, dtype=np.float64)
    z = sharpness * ((d**2).sum(axis=1) - radius**2)
    sig = 1.0 / (1.0 + np.exp(-z))
    value = float(sig.mean())
    cot = (sig * (1.0 - sig) * sharpness * 2.0 / n)[:, None] * d
    return value, cot


@dataclass
class LossReport:
    mmd_sq: float
    boundary: float
    total: float
    cotangents: object  # (n,d) array, or (cot_x, cot_onehot) for hybrid


@dataclass(frozen=True)
class BoundarySpec:
    center: tuple[float, ...] = (0.0, 0.0)
    radius: float = 5.0
    sharpness: float = 10.0
    weight: float = 1.0


def pair_loss(spec: KernelSpec, batch: PairBatch,
              boundary: BoundarySpec | None = None) -> LossReport:
    mmd, cot = mmd_sq_and_cotangents(spec, batch, want_cot=True)
    bval = 0.0
    if boundary is not None:
        if batch.kind is not Kind.CONTINUOUS:
            raise KindMismatchError("boundary penalty applies to continuous states")
        bval, bcot = boundary_penalty(
            batch.cur.x, boundary.center, boundary.radius, boundary.sharpness
        )
        cot = cot + boundary.weight * bcot
    return LossReport(mmd, bval, mmd + (boundary.weight if boundary else 0.0) * bval, cot)


# -- learning-rate schedules --------------------------------------------------

@dataclass(frozen=True)
class StepDecay:
    milestones: tuple[int, ...]
    factor: float

    def lr(self, base: float, step: int) -> float:
        k = sum(1 for m in self.milestones if step >= m)
        return base * self.factor**k


@dataclass(frozen=True)
class CosineAnneal:
    lr_min: float
    total_steps: int

    def lr(self, base: float, step: int) -> float:
        t = min(step, self.total_steps) / self.total_steps
        return self.lr_min + 0.5 * (base - self.lr_min) * (1.0 + np.cos(np.pi * t))


Schedule = StepDecay | CosineAnneal


def schedule_lr(schedule: Schedule | None, base: float, step: int) -> float:
    return base if schedule is None else float(schedule.lr(base, step))


# -- Adam / AdamW -------------------------------------------------------------

@dataclass
class OptimizerState:
    kind: str = "adam"            # adam | adamw
    weight_decay: float = 0.0     # decoupled; used by adamw only
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = None
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    step: int = 0

    def __post_init__(self):
        if self.kind not in ("adam", "adamw"):
            raise ValueError(f"unknown optimizer {self.kind!r}")


def clip_global_norm(grad: np.ndarray, max_norm: float) -> np.ndarray:
    norm = float(np.linalg.norm(grad))
    if norm > max_norm and norm > 0.0:
        return grad * (max_norm / norm)
    return grad


def optimizer_step(
    opt: OptimizerState, params: np.ndarray, grad: np.ndarray, lr: float
) -> np.ndarray:
    """One bias-corrected Adam/AdamW update; clips the gradient first when
    a clip norm is configured.  Returns the updated parameter vector."""
    if params.shape != grad.shape:
        raise NonFiniteGradientError(
            f"gradient shape {grad.shape} does not match params {params.shape}"
        )
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradientError("gradient contains non-finite entries")
    if opt.m is None:
        opt.m = np.zeros_like(params)
        opt.v = np.zeros_like(params)
    if opt.clip_norm is not None:
        grad = clip_global_norm(grad, opt.clip_norm)
    opt.step += 1
    opt.m = opt.beta1 * opt.m + (1.0 - opt.beta1) * grad
    opt.v = opt.beta2 * opt.v + (1.0 - opt.beta2) * grad**2
    mhat = opt.m / (1.0 - opt.beta1**opt.step)
    vhat = opt.v / (1.0 - opt.beta2**opt.step)
    new = params - lr * mhat / (np.sqrt(vhat) + opt.eps)
    if opt.kind == "adamw" and opt.weight_decay > 0.0:
        new = new - lr * opt.weight_decay * params
    return new


# -- training loop ------------------------------------------------------------

# rng stream ids; each concern owns an independent substream
STREAM_INIT = 0
STREAM_NOISE = 1
STREAM_MCMC = 2
STREAM_EVAL = 3

TRACE_COLUMNS = ("iteration", "mmd_sq", "boundary", "total", "lr", "wall_clock_s")


@dataclass
class TrainResult:
    run_dir: Path
    checkpoint: Path
    trace_path: Path
    iterations: int
    final_loss: float


def train(cfg, run_dir: Path | None = None, quiet: bool = True) -> TrainResult:
    """Run the full loop: generate -> evolve (detached) -> loss -> cotangents
    -> vjp -> optimizer step, with trace logging, periodic checkpoints, and
    periodic evaluation.

    A non-finite loss or gradient aborts with the last good state saved to
    ``abort.npz``.
    """
    from . import checkpoint as ckpt
    from .config import (
        build_boundary,
        build_generator,
        build_kernel_spec,
        build_schedule,
        build_transition,
        prepare_run_dir,
    )
    from .metrics import quick_eval

    run_dir = prepare_run_dir(cfg) if run_dir is None else Path(run_dir)
    gen = build_generator(cfg)
    kernel = build_transition(cfg)
    spec = build_kernel_spec(cfg)
    boundary = build_boundary(cfg)
    schedule = build_schedule(cfg)
    opt_cfg = cfg.optimizer
    opt = OptimizerState(
        kind=opt_cfg["variant"],
        weight_decay=float(opt_cfg.get("weight_decay", 0.0)),
        clip_norm=opt_cfg.get("clip_norm"),
    )
    base_lr = float(opt_cfg["lr"])

    if cfg.workers:
        _backend.set_num_threads(int(cfg.workers))

    rng = SeededRng(cfg.seed)
    init_rng = rng.substream(STREAM_INIT)
    noise_rng = rng.substream(STREAM_NOISE)
    mcmc_rng = rng.substream(STREAM_MCMC)
    eval_rng = rng.substream(STREAM_EVAL)
    params = gen.init_params(init_rng)

    trace_path = run_dir / "loss_trace.csv"
    eval_csv = run_dir / "eval_log.csv"
    ckpt_dir = run_dir / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)

    def save(path: Path, iteration: int) -> Path:
        return ckpt.save_checkpoint(
            path, cfg, gen.layout, params, opt, iteration,
            {"noise": noise_rng.state(), "mcmc": mcmc_rng.state(),
             "eval": eval_rng.state()},
        )

    t0 = time.monotonic()
    last = LossReport(np.nan, 0.0, np.nan, None)
    with trace_path.open("w") as trace:
        trace.write(",".join(TRACE_COLUMNS) + "\n")
        for it in range(cfg.iterations):
            states, tape = gen.generate(params, noise_rng, cfg.batch_size)
            nxt = evolve_detached(kernel, mcmc_rng, states)
            rep = pair_loss(spec, PairBatch(states, nxt), boundary)
            if not np.isfinite(rep.total):
                save(ckpt_dir / "abort.npz", it)
                raise NonFiniteLossError(f"loss became non-finite at iteration {it}")
            grad = gen.vjp(params, tape, rep.cotangents)
            lr = schedule_lr(schedule, base_lr, it)
            try:
                params = optimizer_step(opt, params, grad, lr)
            except NonFiniteGradientError:
                save(ckpt_dir / "abort.npz", it)
                raise
            last = rep
            trace.write(
                f"{it},{rep.mmd_sq:.17g},{rep.boundary:.17g},{rep.total:.17g},"
                f"{lr:.17g},{time.monotonic() - t0:.3f}\n"
            )
            done = it + 1
            if cfg.checkpoint_every and done % cfg.checkpoint_every == 0:
                save(ckpt_dir / f"ck_{done:08d}.npz", done)
            if cfg.eval_every and done % cfg.eval_every == 0:
                quick_eval(cfg, gen, params, eval_rng, done, eval_csv, run_dir)
            if not quiet and done % max(1, cfg.iterations // 20) == 0:
                print(f"[{done}/{cfg.iterations}] mmd={rep.mmd_sq:.3e} "
                      f"total={rep.total:.3e} lr={lr:.2e}")
    final = save(run_dir / "final.npz", cfg.iterations)
    return TrainResult(run_dir, final, trace_path, cfg.iterations, last.total)


def evolve_detached(kernel, rng: SeededRng, states):
    """MCMC evolution for training pairs; outputs are plain state batches, so
    no gradient information can flow through them."""
    from .mcmc import evolve

    return evolve(kernel, rng, states)
