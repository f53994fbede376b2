"""Command-line entry point: train, sample, eval, enumerate, verify-kernel."""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .config import (
    build_generator,
    build_move,
    build_target,
    build_transition,
    load_config,
    validate_config,
)
from .core import Kind, SeededRng
from .errors import RevGenError


def _load_model(checkpoint_path):
    ck = load_checkpoint(checkpoint_path)
    cfg = validate_config(ck["config"])
    gen = build_generator(cfg)
    if ck["params"].shape != (gen.layout.total,):
        raise RevGenError(
            f"checkpoint has {ck['params'].shape[0]} parameters, "
            f"generator needs {gen.layout.total}"
        )
    return cfg, gen, ck


def cmd_train(args) -> int:
    from .training import train

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    if args.workers is not None:
        cfg.workers = args.workers
    result = train(cfg, quiet=args.quiet)
    print(f"run directory: {result.run_dir}")
    print(f"final checkpoint: {result.checkpoint}")
    print(f"final loss: {result.final_loss:.6g}")
    return 0


def cmd_sample(args) -> int:
    from .generators import generate_batched

    cfg, gen, ck = _load_model(args.checkpoint)
    seed = cfg.seed if args.seed is None else args.seed
    rng = SeededRng(seed, 100)
    states = generate_batched(gen, ck["params"], rng, args.n)
    out = Path(args.out) if args.out else Path(args.checkpoint).with_suffix(".samples.csv")
    with out.open("w", newline="") as fh:
        w = csv.writer(fh)
        if states.kind is Kind.CONTINUOUS:
            w.writerow([f"x{i}" for i in range(states.dim)])
            for row in states.x:
                w.writerow([f"{v:.17g}" for v in row])
        elif states.kind is Kind.SPINS:
            w.writerow([f"s{i}" for i in range(states.n_sites)])
            w.writerows(states.spins.tolist())
        else:
            w.writerow(["x", "k"])
            for xv, kv in zip(states.x[:, 0], states.modes):
                w.writerow([f"{xv:.17g}", int(kv)])
    print(f"wrote {states.n} samples to {out}")
    return 0


def cmd_eval(args) -> int:
    from .metrics import eval_report

    cfg, gen, ck = _load_model(args.checkpoint)
    if args.benchmark is not None and args.benchmark != cfg.benchmark:
        raise RevGenError(
            f"checkpoint is for benchmark {cfg.benchmark!r}, not {args.benchmark!r}"
        )
    seed = cfg.seed if args.seed is None else args.seed
    rng = SeededRng(seed, 101)
    report = eval_report(cfg, gen, ck["params"], rng, args.n)
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / "eval_report.json"
    report.to_json(out)
    report.append_csv(out.parent / "eval_log.csv", ck["iteration"])
    for key in sorted(report.metrics):
        print(f"{key}: {report.metrics[key]:.6g}")
    print(f"report written to {out}")
    return 0


def cmd_enumerate(args) -> int:
    from .targets import IsingTarget, enumerate_ising

    target = IsingTarget(side=args.L, beta=args.beta, coupling=args.J,
                         field_h=args.h)
    table = enumerate_ising(target)
    out = Path(args.out) if args.out else Path(f"ising_L{args.L}_beta{args.beta:g}.csv")
    table.save_csv(out)
    for key, value in table.observables().items():
        print(f"{key}: {value:.6g}")
    print(f"convention: {table.convention}")
    print(f"table written to {out}")
    return 0


def cmd_verify_kernel(args) -> int:
    from .mcmc import (
        detailed_balance_violation,
        exact_transition_matrix,
        gaussian_rw_flux_gap,
        hybrid_flux_counts,
        symmetry_fraction_within,
    )
    from .targets import enumerate_ising

    cfg = load_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    rng = SeededRng(seed, 102)
    target = build_target(cfg)
    kernel = build_transition(cfg)
    report: dict = {"benchmark": cfg.benchmark,
                    "transition": cfg.transition["variant"]}
    if cfg.benchmark == "ising":
        table = enumerate_ising(target)
        p = exact_transition_matrix(kernel)
        report["max_flux_violation"] = detailed_balance_violation(p, table.probs)
        report["max_row_sum_error"] = float(np.max(np.abs(p.sum(axis=1) - 1.0)))
        stat = table.probs @ p - table.probs
        report["stationarity_l1"] = float(np.abs(stat).sum())
        passed = report["max_flux_violation"] < 1e-13
    elif cfg.benchmark == "gmm":
        gap = gaussian_rw_flux_gap(target, rng,
                                   float(cfg.transition["sigma_prop"]),
                                   n_pairs=1000)
        report["max_flux_gap"] = gap
        passed = gap < 1e-12
    else:
        counts = hybrid_flux_counts(build_move(cfg), target, rng,
                                    n_chains=args.chains, n_steps=args.steps)
        frac = symmetry_fraction_within(counts, 3.0)
        report["fraction_within_3_sigma"] = frac
        report["transitions"] = int(counts.sum())
        passed = frac >= 0.99
    report["passed"] = bool(passed)
    if args.log_transitions:
        _write_transition_log(args.log_transitions, cfg, target, kernel, rng)
        report["transition_log"] = str(args.log_transitions)
    text = json.dumps(report, indent=2, sort_keys=True)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return 0 if passed else 1


def _write_transition_log(path, cfg, target, kernel, rng) -> None:
    from .mcmc import log_transitions_csv
    from .metrics import reference_hybrid_sampler
    from .targets import index_to_spins, enumerate_ising
    from .core import ContinuousStates, SpinStates

    if cfg.benchmark == "gmm":
        states = ContinuousStates(rng.gen.standard_normal((1, 2)))
    elif cfg.benchmark == "ising":
        table = enumerate_ising(target)
        idx = table.sample_indices(rng, 1)
        states = SpinStates(index_to_spins(idx, target.n_sites), target.side)
    else:
        states = reference_hybrid_sampler(target, rng, 1)
    log_transitions_csv(path, kernel, rng, states, n_steps=200)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="revgen",
        description="Train and evaluate generative equilibrium samplers "
                    "driven by time-reversal symmetry of Markov pairs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run a training loop from a config")
    p.add_argument("--config", required=True,
                   help="config path or bundled name (gmm, ising_b02, smoke, ...)")
    p.add_argument("--out", help="override the output directory")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--workers", type=int,
                   help="cap compiled-kernel thread count")
    p.add_argument("--quiet", action="store_true", help="suppress progress lines")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="draw samples from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, required=True, help="number of samples")
    p.add_argument("--out", help="output CSV path")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="compute all benchmark metrics for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--benchmark", choices=("gmm", "ising", "hybrid"),
                   help="assert the checkpoint benchmark")
    p.add_argument("--n", type=int, default=200000, help="evaluation sample count")
    p.add_argument("--out", help="output JSON path")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("enumerate", help="exact Ising table for a small lattice")
    p.add_argument("--L", type=int, required=True, help="lattice side")
    p.add_argument("--beta", type=float, required=True, help="inverse temperature")
    p.add_argument("--J", type=float, default=1.0, help="coupling")
    p.add_argument("--h", type=float, default=0.0, help="external field")
    p.add_argument("--out", help="output CSV path")
    p.set_defaults(func=cmd_enumerate)

    p = sub.add_parser("verify-kernel",
                       help="run the detailed-balance oracle for a config's kernel")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="write the JSON report here")
    p.add_argument("--chains", type=int, default=100000,
                   help="hybrid oracle: parallel chains")
    p.add_argument("--steps", type=int, default=100,
                   help="hybrid oracle: steps per chain")
    p.add_argument("--log-transitions", dest="log_transitions",
                   help="also stream single-chain records to this CSV")
    p.set_defaults(func=cmd_verify_kernel)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except RevGenError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
