"""Quantitative evaluation: density errors, divergences, thermodynamic
observables, transport distances, and the exact reference samplers they
compare against."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from .core import HybridStates, SeededRng, SpinStates
from .errors import (
    EmptyError,
    GridMismatchError,
    NonFiniteError,
    RejectionStallError,
    SizeMismatchError,
    TooFewSamplesError,
)
from .generators import CouplingFlow
from .kernels import ProductHybrid, radial_value
from .targets import (
    DoubleWellTarget,
    EnumerationTable,
    GmmTarget,
    IsingTarget,
    spins_to_index,
)


@dataclass
class EvalReport:
    benchmark: str
    metrics: dict[str, float]
    n_samples: int
    seed: int

    def __post_init__(self):
        bad = {k: v for k, v in self.metrics.items() if not np.isfinite(v)}
        if bad:
            raise NonFiniteError(f"non-finite metrics: {bad}")

    def to_json(self, path) -> Path:
        path = Path(path)
        payload = {
            "benchmark": self.benchmark,
            "n_samples": self.n_samples,
            "seed": self.seed,
            "metrics": {k: float(v) for k, v in self.metrics.items()},
        }
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        return path

    def append_csv(self, path, iteration: int | None = None) -> None:
        path = Path(path)
        exists = path.exists()
        with path.open("a", newline="") as fh:
            w = csv.writer(fh)
            keys = sorted(self.metrics)
            if not exists:
                w.writerow(["iteration", "benchmark", "n_samples", "seed"] + keys)
            w.writerow(
                [iteration if iteration is not None else "", self.benchmark,
                 self.n_samples, self.seed]
                + [f"{self.metrics[k]:.17g}" for k in keys]
            )


# -- discrete-state metrics ---------------------------------------------------

def tv_error(counts: np.ndarray, table: EnumerationTable) -> float:
    """(1/2) sum_s |phat(s) - p(s)| over the enumerated support."""
    counts = np.asarray(counts, dtype=np.float64)
    if counts.shape != table.probs.shape:
        raise SizeMismatchError(
            f"{counts.shape} counts for {table.probs.shape} states"
        )
    total = counts.sum()
    if total < 1:
        raise SizeMismatchError("need at least one observation")
    return float(0.5 * np.abs(counts / total - table.probs).sum())


def state_counts(states: SpinStates, table: EnumerationTable) -> np.ndarray:
    idx = spins_to_index(states.spins).astype(np.int64)
    return np.bincount(idx, minlength=table.n_states).astype(np.float64)


def ising_observables(
    spins, target: IsingTarget, weights: np.ndarray | None = None
) -> dict[str, float]:
    """Sample estimates under the calibrated convention (see targets module):
    total <E>, per-site <|m|>, C_v = beta^2 Var(E), chi = beta N
    (<m^2> - <|m|>^2).  Plain (biased) moments so that probability-weighted
    evaluation over the full enumeration reproduces the exact table."""
    s = spins.spins if isinstance(spins, SpinStates) else np.asarray(spins)
    if s.shape[0] < 2:
        raise TooFewSamplesError("need at least 2 samples")
    if weights is None:
        w = np.full(s.shape[0], 1.0 / s.shape[0])
    else:
        w = np.asarray(weights, dtype=np.float64)
        w = w / w.sum()
    energies = target.energy(s).astype(np.float64)
    m = s.sum(axis=1, dtype=np.float64) / target.n_sites
    mean_e = float(w @ energies)
    var_e = float(w @ (energies - mean_e) ** 2)
    mean_abs_m = float(w @ np.abs(m))
    mean_m2 = float(w @ m**2)
    beta = target.beta
    return {
        "mean_energy": mean_e,
        "mean_abs_mag": mean_abs_m,
        "specific_heat": beta**2 * var_e,
        "susceptibility": beta * target.n_sites * (mean_m2 - mean_abs_m**2),
    }


# -- continuous metrics -------------------------------------------------------

def grid_centers(lo: float, hi: float, cells: int) -> tuple[np.ndarray, float]:
    """Cell-center coordinates of a square grid and the cell area."""
    edges = np.linspace(lo, hi, cells + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    xx, yy = np.meshgrid(centers, centers, indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    h = (hi - lo) / cells
    return pts, h * h


def l2_density_error(q: np.ndarray, p: np.ndarray, cell_area: float) -> float:
    """sqrt(sum_cells (q - p)^2 * cell_area) over a common grid."""
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if q.shape != p.shape:
        raise GridMismatchError(f"grids {q.shape} vs {p.shape}")
    return float(np.sqrt(np.sum((q - p) ** 2) * cell_area))


def gmm_l2_error(
    flow: CouplingFlow, params, target: GmmTarget,
    cells: int = 200, lo: float = -4.0, hi: float = 4.0,
) -> float:
    pts, area = grid_centers(lo, hi, cells)
    q = np.exp(flow.log_density(params, pts))
    p = target.density(pts)
    return l2_density_error(q, p, area)


def kl_divergence_mc(
    flow: CouplingFlow, params, target: GmmTarget, n: int, rng: SeededRng
) -> tuple[float, float]:
    """Monte Carlo KL(flow || target) from flow samples, with standard error."""
    states, _ = flow.generate(params, rng, n)
    diff = flow.log_density(params, states.x) - target.log_density(states.x)
    if not np.all(np.isfinite(diff)):
        raise NonFiniteError("non-finite log-density ratios")
    return float(diff.mean()), float(diff.std(ddof=1) / np.sqrt(n))


def wasserstein1_1d(a: np.ndarray, b: np.ndarray) -> float:
    """W_1 between empirical 1-d distributions: mean |sorted difference| for
    equal sizes, pooled quantile-function integral otherwise."""
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise EmptyError("empty sample set")
    if a.size == b.size:
        return float(np.mean(np.abs(a - b)))
    allv = np.sort(np.concatenate([a, b]))
    cdf_a = np.searchsorted(a, allv[:-1], side="right") / a.size
    cdf_b = np.searchsorted(b, allv[:-1], side="right") / b.size
    return float(np.sum(np.abs(cdf_a - cdf_b) * np.diff(allv)))


# -- hybrid metrics -----------------------------------------------------------

def mode_l1(modes: np.ndarray, n_modes: int) -> float:
    """sum_k |freq(k) - 1/M|; the target puts mass exactly 1/M per mode."""
    modes = np.asarray(modes, dtype=np.int64)
    if modes.size == 0:
        raise EmptyError("no samples")
    freq = np.bincount(modes, minlength=n_modes) / modes.size
    return float(np.abs(freq - 1.0 / n_modes).sum())


def _hybrid_block(spec: ProductHybrid, xa, ka, xb, kb) -> np.ndarray:
    sq = cdist(xa, xb, "sqeuclidean")
    return radial_value(spec.rbf, sq) * (ka[:, None] == kb[None, :])


def joint_mmd(
    a: HybridStates, b: HybridStates, spec: ProductHybrid, chunk: int = 1024
) -> float:
    """Squared-MMD V-statistic between two single-state hybrid sample sets
    under the product kernel; computed in row blocks."""
    if a.n == 0 or b.n == 0:
        raise EmptyError("empty sample set")
    sums = {}
    for name, (x1, k1), (x2, k2) in (
        ("aa", (a.x, a.modes), (a.x, a.modes)),
        ("bb", (b.x, b.modes), (b.x, b.modes)),
        ("ab", (a.x, a.modes), (b.x, b.modes)),
    ):
        total = 0.0
        for i0 in range(0, x1.shape[0], chunk):
            i1 = min(i0 + chunk, x1.shape[0])
            total += _hybrid_block(spec, x1[i0:i1], k1[i0:i1], x2, k2).sum()
        sums[name] = total
    return float(
        sums["aa"] / a.n**2 + sums["bb"] / b.n**2 - 2.0 * sums["ab"] / (a.n * b.n)
    )


def mmd_permutation_threshold(
    a: HybridStates, b: HybridStates, spec: ProductHybrid, rng: SeededRng,
    n_perm: int = 100, quantile: float = 0.95, chunk: int = 512,
) -> tuple[float, float]:
    """Observed joint MMD and the permutation-null quantile at the same
    sample sizes.  One pass over the pooled kernel matrix serves all
    permutations via indicator products."""
    if a.n != b.n:
        raise SizeMismatchError("permutation test expects equal sample sizes")
    n = a.n
    total = 2 * n
    x = np.concatenate([a.x, b.x], axis=0)
    k = np.concatenate([a.modes, b.modes])
    cols = np.zeros((total, n_perm + 1))
    cols[:n, 0] = 1.0  # column 0: the observed split
    for p in range(1, n_perm + 1):
        sel = rng.gen.permutation(total)[:n]
        cols[sel, p] = 1.0
    r = np.zeros((total, n_perm + 1))
    rowsum = np.zeros(total)
    grand = 0.0
    for i0 in range(0, total, chunk):
        i1 = min(i0 + chunk, total)
        blk = _hybrid_block(spec, x[i0:i1], k[i0:i1], x, k)
        r[i0:i1] = blk @ cols
        rowsum[i0:i1] = blk.sum(axis=1)
        grand += blk.sum()
    stats = np.empty(n_perm + 1)
    for p in range(n_perm + 1):
        sel = cols[:, p]
        a_k_a = float(sel @ r[:, p])
        a_k_1 = float(sel @ rowsum)
        sum_b = grand - 2.0 * a_k_1 + a_k_a
        cross = a_k_1 - a_k_a
        stats[p] = a_k_a / n**2 + sum_b / n**2 - 2.0 * cross / n**2
    return float(stats[0]), float(np.quantile(stats[1:], quantile))


def reference_hybrid_sampler(
    target: DoubleWellTarget, rng: SeededRng, n: int, max_rounds: int = 10000
) -> HybridStates:
    """Exact draws: k uniform over modes, x | k by rejection from a uniform
    envelope on [-(sqrt(mu_k)+8), sqrt(mu_k)+8] (peak of e^{-E} is 1)."""
    modes = rng.gen.integers(0, target.n_modes, size=n)
    x = np.empty(n)
    for k in range(target.n_modes):
        idx = np.where(modes == k)[0]
        need = idx.size
        if need == 0:
            continue
        r = target.cutoff(k)
        got = []
        n_drawn = 0
        for _ in range(max_rounds):
            m = max(2048, 2 * (need - sum(g.size for g in got)))
            prop = rng.gen.uniform(-r, r, size=m)
            u = rng.gen.random(m)
            keep = u < np.exp(-target.energy(prop, np.full(m, k)))
            got.append(prop[keep])
            n_drawn += m
            n_kept = sum(g.size for g in got)
            if n_kept >= need:
                break
            if n_drawn > 4096 and n_kept / n_drawn < 1e-6:
                raise RejectionStallError(f"mode {k}: acceptance below 1e-6")
        else:
            raise RejectionStallError(f"mode {k}: not enough accepted draws")
        x[idx] = np.concatenate(got)[:need]
    return HybridStates(x[:, None], modes, target.n_modes)


def mean_conditional_w1(
    gen_states: HybridStates, ref_states: HybridStates
) -> float:
    """Equal-weight average over modes of W_1 between the conditional x
    samples; modes absent from the generated set are skipped (mode_l1 already
    accounts for them)."""
    vals = []
    for k in range(ref_states.n_modes):
        g = gen_states.x[gen_states.modes == k, 0]
        r = ref_states.x[ref_states.modes == k, 0]
        if g.size == 0 or r.size == 0:
            continue
        vals.append(wasserstein1_1d(g, r))
    if not vals:
        raise EmptyError("no mode has samples on both sides")
    return float(np.mean(vals))


# -- evaluation drivers -------------------------------------------------------

def eval_report(cfg, gen, params, rng: SeededRng, n: int) -> EvalReport:
    """The full per-benchmark metric set at sample size n."""
    from .config import build_kernel_spec, build_target
    from .generators import generate_batched

    target = build_target(cfg)
    metrics: dict[str, float] = {}
    if cfg.benchmark == "gmm":
        metrics["l2_density_error"] = gmm_l2_error(gen, params, target)
        kl, se = kl_divergence_mc(gen, params, target, min(n, 1 << 16), rng)
        metrics["kl_divergence"] = kl
        metrics["kl_divergence_se"] = se
    elif cfg.benchmark == "ising":
        from .targets import enumerate_ising

        table = enumerate_ising(target)
        states = generate_batched(gen, params, rng, n)
        obs = ising_observables(states, target)
        metrics.update(obs)
        metrics["tv_error"] = tv_error(state_counts(states, table), table)
        exact = table.observables()
        for key in ("mean_energy", "specific_heat", "susceptibility"):
            metrics[f"{key}_rel_err"] = abs(obs[key] - exact[key]) / abs(exact[key])
        metrics["mean_abs_mag_abs_err"] = abs(
            obs["mean_abs_mag"] - exact["mean_abs_mag"]
        )
    elif cfg.benchmark == "hybrid":
        spec = build_kernel_spec(cfg)
        states = generate_batched(gen, params, rng, n)
        ref = reference_hybrid_sampler(target, rng, n)
        metrics["mode_l1"] = mode_l1(states.modes, target.n_modes)
        metrics["mean_conditional_w1"] = mean_conditional_w1(states, ref)
        metrics["marginal_w1"] = wasserstein1_1d(states.x[:, 0], ref.x[:, 0])
        n_mmd = min(n, 10000)
        obs_mmd, thresh = mmd_permutation_threshold(
            states.take(np.arange(n_mmd)), ref.take(np.arange(n_mmd)), spec, rng
        )
        metrics["joint_mmd"] = obs_mmd
        metrics["joint_mmd_perm95"] = thresh
    else:
        raise ValueError(f"unknown benchmark {cfg.benchmark!r}")
    return EvalReport(cfg.benchmark, metrics, n, cfg.seed)


def quick_eval(cfg, gen, params, rng: SeededRng, iteration: int,
               eval_csv: Path, run_dir: Path) -> EvalReport:
    """Held-out evaluation at the training cadence: smaller sample sizes,
    JSON per evaluation plus one row in the run-level CSV."""
    from .config import build_kernel_spec, build_target
    from .generators import generate_batched

    target = build_target(cfg)
    n = cfg.eval_samples
    metrics: dict[str, float] = {}
    if cfg.benchmark == "gmm":
        metrics["l2_density_error"] = gmm_l2_error(gen, params, target)
        kl, _ = kl_divergence_mc(gen, params, target, n, rng)
        metrics["kl_divergence"] = kl
    elif cfg.benchmark == "ising":
        from .targets import enumerate_ising

        table = enumerate_ising(target)
        states = generate_batched(gen, params, rng, n)
        metrics.update(ising_observables(states, target))
        metrics["tv_error"] = tv_error(state_counts(states, table), table)
    else:
        spec = build_kernel_spec(cfg)
        states = generate_batched(gen, params, rng, n)
        ref = reference_hybrid_sampler(target, rng, n)
        metrics["mode_l1"] = mode_l1(states.modes, target.n_modes)
        metrics["mean_conditional_w1"] = mean_conditional_w1(states, ref)
        metrics["marginal_w1"] = wasserstein1_1d(states.x[:, 0], ref.x[:, 0])
        n_mmd = min(n, 4096)
        metrics["joint_mmd"] = joint_mmd(
            states.take(np.arange(n_mmd)), ref.take(np.arange(n_mmd)), spec
        )
    report = EvalReport(cfg.benchmark, metrics, n, cfg.seed)
    eval_dir = run_dir / "eval"
    eval_dir.mkdir(exist_ok=True)
    report.to_json(eval_dir / f"it_{iteration:08d}.json")
    report.append_csv(eval_csv, iteration)
    return report
