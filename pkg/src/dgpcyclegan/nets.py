"""Desk-scale generators, discriminators and their reverse-mode gradients.

Networks are dense stacks over flattened patches: leaky-rectified hidden
layers (slope 0.2) and a linear output head.  Generators expose two latent
taps, s before z, whose activations are exported on every forward pass and
which accept injected gradients on the backward pass.  Parameters live in
one flat float64 vector per network so the optimizer and checkpoints treat
every net uniformly.

All forward passes cache activations for exactly one matching backward
call; a cache from another network raises CacheMismatch.
"""

from __future__ import annotations

from dataclasses import dataclass
import struct

import numpy as np

from .errors import CacheMismatch, MalformedFile, ShapeMismatch

LEAKY_SLOPE = 0.2


def _leaky(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0.0, x, LEAKY_SLOPE * x)


def _leaky_deriv(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0.0, 1.0, LEAKY_SLOPE)


@dataclass
class FwdCache:
    owner: int
    x_shape: tuple
    acts: list  # acts[0] is the flat input, acts[i] the post-activation of stage i
    pres: list  # pre-activations per stage


class DenseStack:
    """Flat-parameter dense stack shared by generators and discriminators."""

    def __init__(self, widths, rng=None):
        self.widths = tuple(int(w) for w in widths)
        if len(self.widths) < 2 or any(w < 1 for w in self.widths):
            raise ValueError(f"bad layer widths {self.widths}")
        self._slices = []
        offset = 0
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            w_sl = slice(offset, offset + fan_in * fan_out)
            offset += fan_in * fan_out
            b_sl = slice(offset, offset + fan_out)
            offset += fan_out
            self._slices.append((w_sl, b_sl, fan_in, fan_out))
        self.params = np.zeros(offset)
        if rng is not None:
            if not isinstance(rng, np.random.Generator):
                rng = np.random.default_rng(rng)
            for w_sl, _, fan_in, fan_out in self._slices:
                lim = np.sqrt(6.0 / (fan_in + fan_out))
                self.params[w_sl] = rng.uniform(-lim, lim, fan_in * fan_out)

    @property
    def n_stages(self) -> int:
        return len(self._slices)

    @property
    def n_params(self) -> int:
        return self.params.size

    def _layer(self, i: int, params: np.ndarray):
        w_sl, b_sl, fan_in, fan_out = self._slices[i]
        return params[w_sl].reshape(fan_in, fan_out), params[b_sl]

    def _run(self, x) -> FwdCache:
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1)
        if flat.size != self.widths[0]:
            raise ShapeMismatch(f"input has {flat.size} values, expected {self.widths[0]}")
        acts = [flat]
        pres = []
        a = flat
        last = self.n_stages - 1
        for i in range(self.n_stages):
            w, b = self._layer(i, self.params)
            pre = a @ w + b
            pres.append(pre)
            a = pre if i == last else _leaky(pre)
            acts.append(a)
        return FwdCache(owner=id(self), x_shape=x.shape, acts=acts, pres=pres)

    def _backprop(self, cache: FwdCache, grad_out: np.ndarray, tap_grads=None):
        """Walk the stack backwards, returning (flat param grads, grad wrt input)."""
        if cache.owner != id(self):
            raise CacheMismatch("cache was produced by a different network")
        grads = np.zeros_like(self.params)
        g = np.asarray(grad_out, dtype=float).reshape(-1)
        last = self.n_stages - 1
        for i in range(last, -1, -1):
            if tap_grads is not None and (i + 1) in tap_grads:
                g = g + tap_grads[i + 1]
            dpre = g if i == last else g * _leaky_deriv(cache.pres[i])
            w_sl, b_sl, fan_in, fan_out = self._slices[i]
            w = self.params[w_sl].reshape(fan_in, fan_out)
            grads[w_sl] = np.outer(cache.acts[i], dpre).reshape(-1)
            grads[b_sl] = dpre
            g = w @ dpre
        return grads, g.reshape(cache.x_shape)


class Generator(DenseStack):
    """Image-to-image stack with two exported latent taps (s then z)."""

    def __init__(self, in_dim: int, hidden=(128, 32, 32, 128), tap_s: int = 2, tap_z: int = 3, rng=None):
        super().__init__((in_dim, *hidden, in_dim), rng=rng)
        n = self.n_stages
        if not (1 <= tap_s < tap_z <= n - 1):
            raise ValueError(f"taps must satisfy 1 <= tap_s < tap_z <= {n - 1}")
        self.tap_s = int(tap_s)
        self.tap_z = int(tap_z)

    def forward(self, x):
        """Returns (y, s, z, cache) with y shaped like x."""
        cache = self._run(x)
        y = cache.acts[-1].reshape(cache.x_shape)
        return y, cache.acts[self.tap_s].copy(), cache.acts[self.tap_z].copy(), cache

    def backward(self, cache: FwdCache, grad_y, grad_s=None, grad_z=None):
        """Accumulate parameter gradients from output and tap gradients.

        Returns (param_grads, grad_x); grad_x is shaped like the forward input
        so chained generators can pass it on.
        """
        taps = {}
        if grad_s is not None:
            taps[self.tap_s] = np.asarray(grad_s, dtype=float)
        if grad_z is not None:
            taps[self.tap_z] = np.asarray(grad_z, dtype=float)
        return self._backprop(cache, grad_y, taps or None)

    def restore(self, x) -> np.ndarray:
        """Evaluation-time translation, clamped to the image range [0, 1]."""
        y, _, _, _ = self.forward(x)
        return np.clip(y, 0.0, 1.0)


class Discriminator(DenseStack):
    """Dense stack ending in a single realness score."""

    def __init__(self, in_dim: int, hidden=(64, 32), rng=None):
        super().__init__((in_dim, *hidden, 1), rng=rng)

    def forward(self, x):
        cache = self._run(x)
        return float(cache.acts[-1][0]), cache

    def backward(self, cache: FwdCache, dscore: float):
        """Returns (param_grads, grad_x) for a scalar upstream gradient."""
        return self._backprop(cache, np.array([float(dscore)]))


@dataclass
class AdamState:
    """Per-network Adam moments; lr is mutable so schedules can adjust it."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def for_params(params: np.ndarray, lr: float = 2e-4) -> "AdamState":
        return AdamState(m=np.zeros_like(params), v=np.zeros_like(params), lr=lr)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """One bias-corrected Adam update; returns the new parameter vector."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ShapeMismatch("params, grads and moments must share one shape")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


# --- checkpoint file -------------------------------------------------------
#
# Layout (little-endian), documented in the README:
#   magic   8 bytes  b"DGPCKPT1"
#   uint32  number of networks
#   uint64  global step count
#   per network:
#     uint32 name length, name utf-8
#     uint8  kind (0 generator, 1 discriminator)
#     uint32 number of widths, uint32 widths[...]
#     int32  tap_s, int32 tap_z   (-1/-1 for discriminators)
#     uint64 parameter count, float64 params[...]

CKPT_MAGIC = b"DGPCKPT1"


def save_checkpoint(path, nets: dict, step: int = 0) -> None:
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<IQ", len(nets), step))
        for name, net in nets.items():
            raw = name.encode("utf-8")
            is_gen = isinstance(net, Generator)
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", 0 if is_gen else 1))
            fh.write(struct.pack("<I", len(net.widths)))
            fh.write(struct.pack(f"<{len(net.widths)}I", *net.widths))
            tap_s = net.tap_s if is_gen else -1
            tap_z = net.tap_z if is_gen else -1
            fh.write(struct.pack("<ii", tap_s, tap_z))
            fh.write(struct.pack("<Q", net.n_params))
            fh.write(np.ascontiguousarray(net.params, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Rebuild the saved networks; returns (nets dict, step)."""
    with open(path, "rb") as fh:
        raw = fh.read()

    def take(fmt, offset):
        size = struct.calcsize(fmt)
        if offset + size > len(raw):
            raise MalformedFile(f"{path}: truncated checkpoint")
        return struct.unpack_from(fmt, raw, offset), offset + size

    if raw[: len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise MalformedFile(f"{path}: not a checkpoint file")
    (n_nets, step), off = take("<IQ", len(CKPT_MAGIC))
    nets = {}
    for _ in range(n_nets):
        (name_len,), off = take("<I", off)
        if off + name_len > len(raw):
            raise MalformedFile(f"{path}: truncated checkpoint")
        name = raw[off : off + name_len].decode("utf-8")
        off += name_len
        (kind,), off = take("<B", off)
        (n_widths,), off = take("<I", off)
        widths, off = take(f"<{n_widths}I", off)
        (tap_s, tap_z), off = take("<ii", off)
        (n_params,), off = take("<Q", off)
        if off + 8 * n_params > len(raw):
            raise MalformedFile(f"{path}: truncated checkpoint")
        params = np.frombuffer(raw, dtype="<f8", count=n_params, offset=off).copy()
        off += 8 * n_params
        if kind == 0:
            net = Generator(widths[0], hidden=widths[1:-1], tap_s=tap_s, tap_z=tap_z)
        elif kind == 1:
            net = Discriminator(widths[0], hidden=widths[1:-1])
        else:
            raise MalformedFile(f"{path}: unknown network kind {kind}")
        if net.n_params != n_params:
            raise MalformedFile(f"{path}: parameter count mismatch for {name!r}")
        net.params = params
        nets[name] = net
    return nets, step
