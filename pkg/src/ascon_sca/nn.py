"""Small numpy neural engine: dense layers, an LSTM cell, MSE and Adam.

Everything runs in float64.  Layers expose their parameters as a flat
``{name: array}`` dict; optimizers update those arrays in place, so a model
is just a collection of layers that shares their dicts.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ACTIVATIONS = ("tanh", "sigmoid", "relu", "linear")


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return sigmoid(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def _act_grad(name: str, y: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Derivative of the activation, expressed through output ``y`` where cheaper."""
    if name == "tanh":
        return 1.0 - y * y
    if name == "sigmoid":
        return y * (1.0 - y)
    if name == "relu":
        return (z > 0).astype(np.float64)
    return np.ones_like(z)


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Dense:
    def __init__(self, n_in: int, n_out: int, activation: str = "linear",
                 rng: np.random.Generator | None = None, prefix: str = "") -> None:
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        rng = rng or np.random.default_rng(0)
        self.n_in, self.n_out, self.activation = n_in, n_out, activation
        self.prefix = prefix
        self.params = {
            prefix + "W": uniform_init(rng, (n_out, n_in), n_in),
            prefix + "b": uniform_init(rng, (n_out,), n_in),
        }

    @property
    def W(self) -> np.ndarray:
        return self.params[self.prefix + "W"]

    @property
    def b(self) -> np.ndarray:
        return self.params[self.prefix + "b"]

    def forward(self, x: np.ndarray):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n_in:
            raise ValueError(f"expected input width {self.n_in}, got {x.shape[-1]}")
        z = x @ self.W.T + self.b
        y = _act(self.activation, z)
        return y, (x, z, y)

    def backward(self, dy: np.ndarray, cache) -> tuple[np.ndarray, dict]:
        if cache is None:
            raise RuntimeError("backward called without a forward cache")
        x, z, y = cache
        dz = dy * _act_grad(self.activation, y, z)
        x2 = x.reshape(-1, self.n_in)
        dz2 = dz.reshape(-1, self.n_out)
        grads = {self.prefix + "W": dz2.T @ x2, self.prefix + "b": dz2.sum(axis=0)}
        return dz @ self.W, grads


class MLP:
    def __init__(self, sizes: list[int], hidden: str, output: str,
                 rng: np.random.Generator | None = None, prefix: str = "") -> None:
        rng = rng or np.random.default_rng(0)
        self.layers = [
            Dense(a, b, hidden if k < len(sizes) - 2 else output, rng, f"{prefix}l{k}.")
            for k, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))
        ]
        self.params: dict[str, np.ndarray] = {}
        for layer in self.layers:
            self.params.update(layer.params)

    def forward(self, x: np.ndarray):
        caches = []
        for layer in self.layers:
            x, c = layer.forward(x)
            caches.append(c)
        return x, caches

    def backward(self, dy: np.ndarray, caches) -> tuple[np.ndarray, dict]:
        if caches is None:
            raise RuntimeError("backward called without a forward cache")
        grads: dict[str, np.ndarray] = {}
        for layer, c in zip(reversed(self.layers), reversed(caches)):
            dy, g = layer.backward(dy, c)
            grads.update(g)
        return dy, grads


class LSTMCell:
    """Single LSTM cell; gates packed as ``[g, i, f, o]`` over input ``[x, h]``.

    ``g`` is the tanh input layer, ``i/f/o`` are sigmoid gates,
    ``c_t = f*c_{t-1} + i*g`` and ``h_t = o*tanh(c_t)``.
    """

    def __init__(self, n_in: int, dim: int, rng: np.random.Generator | None = None,
                 prefix: str = "", forget_bias: float = 1.0) -> None:
        rng = rng or np.random.default_rng(0)
        self.n_in, self.dim, self.prefix = n_in, dim, prefix
        fan_in = n_in + dim
        b = uniform_init(rng, (4 * dim,), fan_in)
        b[2 * dim:3 * dim] = forget_bias
        self.params = {prefix + "W": uniform_init(rng, (4 * dim, fan_in), fan_in), prefix + "b": b}

    @property
    def W(self) -> np.ndarray:
        return self.params[self.prefix + "W"]

    @property
    def b(self) -> np.ndarray:
        return self.params[self.prefix + "b"]

    def step(self, x: np.ndarray, h: np.ndarray, c: np.ndarray):
        if x.shape[-1] != self.n_in:
            raise ValueError(f"expected input width {self.n_in}, got {x.shape[-1]}")
        d = self.dim
        xh = np.concatenate([x, h], axis=1)
        z = xh @ self.W.T + self.b
        g = np.tanh(z[:, :d])
        gates = sigmoid(z[:, d:])
        i, f, o = gates[:, :d], gates[:, d:2 * d], gates[:, 2 * d:]
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        return h_new, c_new, (xh, c, g, i, f, o, tc)

    def step_backward(self, dh: np.ndarray, dc: np.ndarray, cache):
        """Returns ``(dz, dx, dh_prev, dc_prev)``; ``dz`` feeds the weight gradient."""
        xh, c_prev, g, i, f, o, tc = cache
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        dz = np.concatenate([
            dc * i * (1.0 - g * g),
            dc * g * i * (1.0 - i),
            dc * c_prev * f * (1.0 - f),
            do * o * (1.0 - o),
        ], axis=1)
        dxh = dz @ self.W
        return dz, dxh[:, :self.n_in], dxh[:, self.n_in:], dc * f

    def forward_sequence(self, xs: np.ndarray, h0: np.ndarray | None = None, c0: np.ndarray | None = None):
        """Run over ``xs`` of shape (batch, steps, n_in); returns hs, (h, c), caches."""
        xs = np.asarray(xs, dtype=np.float64)
        batch, steps = xs.shape[:2]
        h = np.zeros((batch, self.dim)) if h0 is None else h0
        c = np.zeros((batch, self.dim)) if c0 is None else c0
        hs = np.empty((batch, steps, self.dim))
        caches = []
        for t in range(steps):
            h, c, cache = self.step(xs[:, t], h, c)
            hs[:, t] = h
            caches.append(cache)
        return hs, (h, c), caches

    def weight_grads(self, dzs: list[np.ndarray], caches) -> dict:
        dz = np.concatenate(dzs, axis=0)
        xh = np.concatenate([cache[0] for cache in caches], axis=0)
        return {self.prefix + "W": dz.T @ xh, self.prefix + "b": dz.sum(axis=0)}

    def backward_sequence(self, dhs: np.ndarray | None, caches, dh_last=None, dc_last=None):
        """BPTT.  ``dhs`` holds upstream gradients on every ``h_t`` (or None).

        Returns ``(dxs, dh0, dc0, grads)``.
        """
        if not caches:
            raise RuntimeError("backward called without a forward cache")
        steps = len(caches)
        batch = caches[0][0].shape[0]
        dh = np.zeros((batch, self.dim)) if dh_last is None else dh_last.copy()
        dc = np.zeros((batch, self.dim)) if dc_last is None else dc_last.copy()
        dxs = np.empty((batch, steps, self.n_in))
        dzs = [None] * steps
        for t in range(steps - 1, -1, -1):
            if dhs is not None:
                dh = dh + dhs[:, t]
            dz, dx, dh, dc = self.step_backward(dh, dc, caches[t])
            dzs[t] = dz
            dxs[:, t] = dx
        return dxs, dh, dc, self.weight_grads(dzs, caches)


def mse(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def mse_grad(pred, target) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    return 2.0 * (pred - target) / pred.size


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, sign: float = 1.0) -> None:
    """One Adam update in place.  ``sign=-1`` ascends instead of descends."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= sign * state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# --- checkpoints --------------------------------------------------------------

_CKPT_MAGIC = b"SCNN"
_CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_params(params: dict, path, extra: dict | None = None) -> None:
    """Write ``params`` as a versioned binary with a JSON shape manifest."""
    names = sorted(params)
    manifest = {
        "tensors": [{"name": n, "shape": list(params[n].shape)} for n in names],
        "extra": extra or {},
    }
    head = json.dumps(manifest, sort_keys=True).encode()
    body = b"".join(np.ascontiguousarray(params[n], dtype="<f8").tobytes() for n in names)
    with open(Path(path), "wb") as fh:
        fh.write(struct.pack("<4sHI", _CKPT_MAGIC, _CKPT_VERSION, len(head)))
        fh.write(head)
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(head + body) & 0xFFFFFFFF))


def load_params(path) -> tuple[dict, dict]:
    blob = Path(path).read_bytes()
    if len(blob) < 10:
        raise CheckpointError("checkpoint truncated")
    magic, version, head_len = struct.unpack_from("<4sHI", blob)
    if magic != _CKPT_MAGIC or version != _CKPT_VERSION:
        raise CheckpointError("not a checkpoint of a supported version")
    head = blob[10:10 + head_len]
    manifest = json.loads(head)
    sizes = [int(np.prod(t["shape"])) for t in manifest["tensors"]]
    end = 10 + head_len + 8 * sum(sizes)
    if len(blob) < end + 4:
        raise CheckpointError("checkpoint truncated")
    (crc,) = struct.unpack_from("<I", blob, end)
    if zlib.crc32(blob[10:end]) & 0xFFFFFFFF != crc:
        raise CheckpointError("checkpoint checksum mismatch")
    params = {}
    off = 10 + head_len
    for t, size in zip(manifest["tensors"], sizes):
        params[t["name"]] = np.frombuffer(blob, dtype="<f8", count=size, offset=off).reshape(t["shape"]).copy()
        off += 8 * size
    return params, manifest["extra"]
