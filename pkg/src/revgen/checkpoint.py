"""Versioned checkpoint files: parameter layout + flat vector, optimizer
moments, rng stream states, and the originating config."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import CheckpointCorruptError

FORMAT_VERSION = 1


def save_checkpoint(path, cfg, gen_layout, params, opt, iteration: int,
                    rng_states: dict) -> Path:
    path = Path(path)
    layout = {"names": list(gen_layout.names),
              "shapes": [list(s) for s in gen_layout.shapes]}
    np.savez(
        path,
        version=np.int64(FORMAT_VERSION),
        config=json.dumps(cfg.to_dict()),
        params=np.asarray(params, dtype=np.float64),
        opt_kind=opt.kind,
        opt_weight_decay=np.float64(opt.weight_decay),
        opt_beta1=np.float64(opt.beta1),
        opt_beta2=np.float64(opt.beta2),
        opt_eps=np.float64(opt.eps),
        opt_clip=np.float64(-1.0 if opt.clip_norm is None else opt.clip_norm),
        opt_m=np.zeros(0) if opt.m is None else opt.m,
        opt_v=np.zeros(0) if opt.v is None else opt.v,
        opt_step=np.int64(opt.step),
        iteration=np.int64(iteration),
        rng_states=json.dumps(rng_states),
        layout=json.dumps(layout),
    )
    return path


def load_checkpoint(path) -> dict:
    """Returns a dict with keys: config (dict), params (array), optimizer
    (OptimizerState), iteration (int), rng_states (dict)."""
    from .training import OptimizerState

    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as data:
            version = int(data["version"])
            if version != FORMAT_VERSION:
                raise CheckpointCorruptError(
                    f"checkpoint version {version}, expected {FORMAT_VERSION}"
                )
            cfg_dict = json.loads(str(data["config"]))
            clip = float(data["opt_clip"])
            opt = OptimizerState(
                kind=str(data["opt_kind"]),
                weight_decay=float(data["opt_weight_decay"]),
                beta1=float(data["opt_beta1"]),
                beta2=float(data["opt_beta2"]),
                eps=float(data["opt_eps"]),
                clip_norm=None if clip < 0 else clip,
                m=data["opt_m"].copy() if data["opt_m"].size else None,
                v=data["opt_v"].copy() if data["opt_v"].size else None,
                step=int(data["opt_step"]),
            )
            return {
                "config": cfg_dict,
                "params": data["params"].copy(),
                "optimizer": opt,
                "iteration": int(data["iteration"]),
                "rng_states": json.loads(str(data["rng_states"])),
            }
    except CheckpointCorruptError:
        raise
    except Exception as exc:
        raise CheckpointCorruptError(f"cannot read checkpoint {path}: {exc}") from exc
