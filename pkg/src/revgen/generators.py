"""Differentiable noise-to-state generators.

Each generator exposes a forward sampling pass and a parameter-VJP pass built
on a small explicit-tape MLP core; discrete outputs (sign layer, categorical
head) keep hard values in the forward pass and substitute smooth surrogate
Jacobians in the backward pass (tanh derivative for the sign layer, the
softmax Jacobian for the categorical head).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ContinuousStates, HybridStates, SeededRng, SpinStates, States
from .errors import LayoutMismatchError, NonFiniteError, TapeMismatchError


@dataclass(frozen=True)
class ParamLayout:
    """Mapping from parameter names to slices of one flat vector."""

    names: tuple[str, ...]
    shapes: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        offsets = {}
        total = 0
        for name, shape in zip(self.names, self.shapes):
            offsets[name] = total
            total += int(np.prod(shape, dtype=np.int64)) if shape else 1
        object.__setattr__(self, "_offsets", offsets)
        object.__setattr__(self, "total", total)

    def view(self, flat: np.ndarray, name: str) -> np.ndarray:
        if flat.shape != (self.total,):
            raise LayoutMismatchError(
                f"flat vector of length {flat.shape}, layout needs {self.total}"
            )
        i = self._offsets[name]
        shape = self.shapes[self.names.index(name)]
        size = int(np.prod(shape, dtype=np.int64))
        return flat[i : i + size].reshape(shape)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.total)

    def flatten(self, arrays: dict[str, np.ndarray]) -> np.ndarray:
        flat = self.zeros()
        for name in self.names:
            self.view(flat, name)[...] = arrays[name]
        return flat

    def unflatten(self, flat: np.ndarray) -> dict[str, np.ndarray]:
        return {name: self.view(flat, name).copy() for name in self.names}


def _leaky(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x >= 0, x, slope * x)


def _dleaky(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x >= 0, 1.0, slope)


@dataclass(frozen=True)
class _Mlp:
    """Affine stack with LeakyReLU between layers; parameters resolved by
    name through a ParamLayout."""

    prefix: str
    dims: tuple[int, ...]
    slope: float = 0.01
    final_act: bool = False
    final_init: str = "small"  # kaiming | small | zero

    @property
    def n_layers(self) -> int:
        return len(self.dims) - 1

    def param_specs(self) -> list[tuple[str, tuple[int, ...]]]:
        specs = []
        for i in range(self.n_layers):
            specs.append((f"{self.prefix}W{i}", (self.dims[i], self.dims[i + 1])))
            specs.append((f"{self.prefix}b{i}", (self.dims[i + 1],)))
        return specs

    def init_into(self, layout: ParamLayout, flat: np.ndarray, rng: SeededRng) -> None:
        gain = np.sqrt(2.0 / (1.0 + self.slope**2))
        for i in range(self.n_layers):
            w = layout.view(flat, f"{self.prefix}W{i}")
            b = layout.view(flat, f"{self.prefix}b{i}")
            last = i == self.n_layers - 1
            if last and self.final_init == "zero":
                w[...] = 0.0
            elif last and self.final_init == "small":
                w[...] = rng.gen.uniform(-1e-2, 1e-2, size=w.shape)
            else:
                bound = gain * np.sqrt(3.0 / self.dims[i])
                w[...] = rng.gen.uniform(-bound, bound, size=w.shape)
            b[...] = 0.0

    def forward(self, layout, flat, x) -> tuple[np.ndarray, list]:
        caches = []
        h = x
        for i in range(self.n_layers):
            w = layout.view(flat, f"{self.prefix}W{i}")
            b = layout.view(flat, f"{self.prefix}b{i}")
            pre = h @ w + b
            caches.append((h, pre))
            h = _leaky(pre, self.slope) if (i < self.n_layers - 1 or self.final_act) else pre
        return h, caches

    def backward(self, layout, flat, caches, g_out, g_flat) -> np.ndarray:
        """Accumulate parameter gradients into g_flat; return d/d input."""
        g = g_out
        for i in reversed(range(self.n_layers)):
            h, pre = caches[i]
            if i == self.n_layers - 1 and self.final_act:
                g = g * _dleaky(pre, self.slope)
            layout.view(g_flat, f"{self.prefix}W{i}")[...] += h.T @ g
            layout.view(g_flat, f"{self.prefix}b{i}")[...] += g.sum(axis=0)
            g = g @ layout.view(flat, f"{self.prefix}W{i}").T
            if i > 0:
                g = g * _dleaky(caches[i - 1][1], self.slope)
        return g


@dataclass
class Tape:
    """Forward record needed by vjp: inputs, pre-activations, sampling
    outcomes.  Bound to the generator signature it came from."""

    signature: tuple
    n: int
    data: dict


def _check_tape(gen, tape: Tape) -> None:
    if tape.signature != gen.signature():
        raise TapeMismatchError("tape was produced by a different generator")


class SteSignGenerator:
    """MLP to real logits, cast to +-1 spins by sign(); backward substitutes
    the tanh derivative at the logits."""

    def __init__(self, side: int, latent_dim: int = 32,
                 hidden: tuple[int, ...] = (256, 256, 256), slope: float = 0.01):
        self.side = side
        self.latent_dim = latent_dim
        self.hidden = tuple(hidden)
        self.slope = slope
        self.n_sites = side * side
        self.mlp = _Mlp("mlp.", (latent_dim, *self.hidden, self.n_sites), slope,
                        final_init="small")
        names, shapes = zip(*self.mlp.param_specs())
        self.layout = ParamLayout(tuple(names), tuple(shapes))

    def signature(self) -> tuple:
        return ("ste_sign", self.side, self.latent_dim, self.hidden, self.slope)

    def init_params(self, rng: SeededRng) -> np.ndarray:
        flat = self.layout.zeros()
        self.mlp.init_into(self.layout, flat, rng)
        return flat

    def generate(self, params, rng: SeededRng, n: int) -> tuple[SpinStates, Tape]:
        z = rng.gen.standard_normal((n, self.latent_dim))
        logits, caches = self.mlp.forward(self.layout, params, z)
        spins = np.where(logits >= 0, 1, -1).astype(np.int8)
        tape = Tape(self.signature(), n, {"caches": caches, "logits": logits})
        return SpinStates(spins, self.side), tape

    def vjp(self, params, tape: Tape, cotangents: np.ndarray) -> np.ndarray:
        _check_tape(self, tape)
        logits = tape.data["logits"]
        g_logits = cotangents * (1.0 - np.tanh(logits) ** 2)
        g = self.layout.zeros()
        self.mlp.backward(self.layout, params, tape.data["caches"], g_logits, g)
        return g


class SplitHeadGenerator:
    """Shared MLP backbone with a continuous affine head and a categorical
    head; the sampled mode is emitted hard (one-hot) and receives the softmax
    Jacobian in the backward pass."""

    def __init__(self, n_modes: int = 3, x_dim: int = 1, latent_dim: int = 32,
                 hidden: tuple[int, ...] = (128, 128, 128), slope: float = 0.01):
        self.n_modes = n_modes
        self.x_dim = x_dim
        self.latent_dim = latent_dim
        self.hidden = tuple(hidden)
        self.slope = slope
        self.trunk = _Mlp("trunk.", (latent_dim, *self.hidden), slope, final_act=True)
        width = self.hidden[-1]
        specs = self.trunk.param_specs() + [
            ("head.Wx", (width, x_dim)),
            ("head.bx", (x_dim,)),
            ("head.Wk", (width, n_modes)),
            ("head.bk", (n_modes,)),
        ]
        names, shapes = zip(*specs)
        self.layout = ParamLayout(tuple(names), tuple(shapes))

    def signature(self) -> tuple:
        return ("split_head", self.n_modes, self.x_dim, self.latent_dim,
                self.hidden, self.slope)

    def init_params(self, rng: SeededRng) -> np.ndarray:
        flat = self.layout.zeros()
        self.trunk.init_into(self.layout, flat, rng)
        for name in ("head.Wx", "head.Wk"):
            w = self.layout.view(flat, name)
            w[...] = rng.gen.uniform(-1e-2, 1e-2, size=w.shape)
        return flat

    def generate(self, params, rng: SeededRng, n: int) -> tuple[HybridStates, Tape]:
        z = rng.gen.standard_normal((n, self.latent_dim))
        h, caches = self.trunk.forward(self.layout, params, z)
        x = h @ self.layout.view(params, "head.Wx") + self.layout.view(params, "head.bx")
        logits = h @ self.layout.view(params, "head.Wk") + self.layout.view(params, "head.bk")
        shifted = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(shifted)
        p /= p.sum(axis=1, keepdims=True)
        u = rng.gen.random(n)
        cdf = np.cumsum(p, axis=1)
        modes = (u[:, None] >= cdf).sum(axis=1).astype(np.int64)
        modes = np.clip(modes, 0, self.n_modes - 1)
        tape = Tape(self.signature(), n, {"caches": caches, "h": h, "p": p})
        return HybridStates(x, modes, self.n_modes), tape

    def vjp(self, params, tape: Tape, cotangents) -> np.ndarray:
        """cotangents = (cot_x, cot_onehot); cot_onehot may be None to follow
        only the continuous paths."""
        _check_tape(self, tape)
        cot_x, cot_onehot = cotangents
        h = tape.data["h"]
        g = self.layout.zeros()
        self.layout.view(g, "head.Wx")[...] = h.T @ cot_x
        self.layout.view(g, "head.bx")[...] = cot_x.sum(axis=0)
        g_h = cot_x @ self.layout.view(params, "head.Wx").T
        if cot_onehot is not None:
            p = tape.data["p"]
            g_logits = p * (cot_onehot - (p * cot_onehot).sum(axis=1, keepdims=True))
            self.layout.view(g, "head.Wk")[...] = h.T @ g_logits
            self.layout.view(g, "head.bk")[...] = g_logits.sum(axis=0)
            g_h = g_h + g_logits @ self.layout.view(params, "head.Wk").T
        self.trunk.backward(self.layout, params, tape.data["caches"], g_h, g)
        return g


class CouplingFlow:
    """Affine coupling flow on R^dim with alternating binary masks; scale and
    translation nets are 2-layer MLPs whose final layers start at zero, so a
    fresh flow is exactly the identity map."""

    def __init__(self, dim: int = 2, n_layers: int = 8, hidden: int = 64,
                 slope: float = 0.01):
        self.dim = dim
        self.n_layers = n_layers
        self.hidden = hidden
        self.slope = slope
        masks = []
        for l in range(n_layers):
            m = np.zeros(dim)
            m[l % 2 :: 2] = 1.0
            masks.append(m)
        self.masks = masks
        self.nets = []
        specs = []
        for l in range(n_layers):
            s_net = _Mlp(f"l{l}.s.", (dim, hidden, dim), slope, final_init="zero")
            t_net = _Mlp(f"l{l}.t.", (dim, hidden, dim), slope, final_init="zero")
            self.nets.append((s_net, t_net))
            specs.extend(s_net.param_specs())
            specs.extend(t_net.param_specs())
        names, shapes = zip(*specs)
        self.layout = ParamLayout(tuple(names), tuple(shapes))

    def signature(self) -> tuple:
        return ("coupling_flow", self.dim, self.n_layers, self.hidden, self.slope)

    def init_params(self, rng: SeededRng) -> np.ndarray:
        flat = self.layout.zeros()
        for s_net, t_net in self.nets:
            s_net.init_into(self.layout, flat, rng)
            t_net.init_into(self.layout, flat, rng)
        return flat

    def forward_array(self, params, z: np.ndarray, want_caches: bool = False):
        x = z
        caches = []
        for l, (s_net, t_net) in enumerate(self.nets):
            m = self.masks[l]
            xm = x * m
            s_raw, s_cache = s_net.forward(self.layout, params, xm)
            t_raw, t_cache = t_net.forward(self.layout, params, xm)
            s = s_raw * (1.0 - m)
            t = t_raw * (1.0 - m)
            es = np.exp(s)
            out = xm + (1.0 - m) * (x * es + t)
            if want_caches:
                caches.append((x, es, s_cache, t_cache))
            x = out
        return (x, caches) if want_caches else x

    def _inverse_masked(self, params, y: np.ndarray):
        """Inverse pass that isolates rows whose preimage diverges (the flow
        maps them astronomically far in base space); returns
        (z, logdet, alive) where dead rows carry zero density."""
        x = np.array(np.atleast_2d(np.asarray(y, dtype=np.float64)))
        n = x.shape[0]
        logdet = np.zeros(n)
        alive = np.isfinite(x).all(axis=1)
        x[~alive] = 0.0
        with np.errstate(over="ignore", invalid="ignore", under="ignore"):
            for l in reversed(range(self.n_layers)):
                s_net, t_net = self.nets[l]
                m = self.masks[l]
                xm = x * m
                s = s_net.forward(self.layout, params, xm)[0] * (1.0 - m)
                t = t_net.forward(self.layout, params, xm)[0] * (1.0 - m)
                x = xm + (1.0 - m) * ((x - t) * np.exp(-s))
                logdet -= s.sum(axis=1)
                died = alive & ~np.isfinite(x).all(axis=1)
                if died.any():
                    alive &= ~died
                    x[~alive] = 0.0
        return x, logdet, alive

    def inverse(self, params, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Inverse map and per-sample accumulated log|det d inverse/d y|."""
        z, logdet, _ = self._inverse_masked(params, y)
        return z, logdet

    def log_density(self, params, y: np.ndarray) -> np.ndarray:
        """Exact log density of the pushforward.  Rows whose inverse
        diverges get -inf (zero density); a non-finite result on a
        well-behaved row means the scales overflowed and raises."""
        y = np.asarray(y, dtype=np.float64)
        single = y.ndim == 1
        z, logdet, alive = self._inverse_masked(params, y)
        with np.errstate(over="ignore", invalid="ignore", under="ignore"):
            out = -0.5 * (z**2).sum(axis=1) \
                - 0.5 * self.dim * np.log(2 * np.pi) + logdet
        out[~alive] = -np.inf
        bad = alive & (np.isnan(out) | np.isposinf(out))
        if bad.any():
            raise NonFiniteError("flow log-density overflowed")
        return out[0] if single else out

    def generate(self, params, rng: SeededRng, n: int) -> tuple[ContinuousStates, Tape]:
        z = rng.gen.standard_normal((n, self.dim))
        x, caches = self.forward_array(params, z, want_caches=True)
        tape = Tape(self.signature(), n, {"caches": caches})
        return ContinuousStates(x), tape

    def vjp(self, params, tape: Tape, cotangents: np.ndarray) -> np.ndarray:
        _check_tape(self, tape)
        g = self.layout.zeros()
        gx = cotangents
        for l in reversed(range(self.n_layers)):
            s_net, t_net = self.nets[l]
            m = self.masks[l]
            x, es, s_cache, t_cache = tape.data["caches"][l]
            g_s = gx * (1.0 - m) * x * es
            g_t = gx * (1.0 - m)
            g_h = s_net.backward(self.layout, params, s_cache, g_s, g)
            g_h = g_h + t_net.backward(self.layout, params, t_cache, g_t, g)
            gx = m * gx + (1.0 - m) * es * gx + m * g_h
        return g


Generator = SteSignGenerator | SplitHeadGenerator | CouplingFlow


def init_params(gen: Generator, rng: SeededRng) -> np.ndarray:
    return gen.init_params(rng)


def generate(gen: Generator, params, rng: SeededRng, n: int) -> tuple[States, Tape]:
    if params.shape != (gen.layout.total,):
        raise LayoutMismatchError(
            f"params of length {params.shape}, layout needs {gen.layout.total}"
        )
    return gen.generate(params, rng, n)


def vjp(gen: Generator, params, tape: Tape, cotangents) -> np.ndarray:
    return gen.vjp(params, tape, cotangents)


def flow_log_density(flow: CouplingFlow, params, x) -> np.ndarray:
    return flow.log_density(params, x)


def generate_batched(gen: Generator, params, rng: SeededRng, n: int,
                     chunk: int = 16384) -> States:
    """Sample n states in chunks, discarding tapes; bounds peak memory for
    large evaluation draws."""
    parts = []
    remaining = n
    while remaining > 0:
        m = min(chunk, remaining)
        states, _ = gen.generate(params, rng, m)
        parts.append(states)
        remaining -= m
    first = parts[0]
    if len(parts) == 1:
        return first
    if isinstance(first, ContinuousStates):
        return ContinuousStates(np.concatenate([p.x for p in parts]))
    if isinstance(first, SpinStates):
        return SpinStates(np.concatenate([p.spins for p in parts]), first.side)
    return HybridStates(
        np.concatenate([p.x for p in parts]),
        np.concatenate([p.modes for p in parts]),
        first.n_modes,
    )
