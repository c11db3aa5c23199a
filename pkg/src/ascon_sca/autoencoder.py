"""LSTM autoencoder over sliding windows of normalized per-S-box traces.

The encoder consumes windows ``w_0 .. w_{T-1}``; its final cell state ``c``
is the feature vector.  The decoder starts from the encoder's final
``(h, c)`` and reconstructs the windows in reverse order, ``w_{T-1}`` first.
At each decoder step it sees the decoder's previous output and the
ground-truth samples of the previously reconstructed window that do not
overlap the window being reconstructed, so nothing of the target itself
reaches the decoder.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .trace_prep import sliding_windows

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AutoencoderConfig:
    feature_dim: int = 150
    window: int = 10
    stride: int = 5
    epochs: int = 25
    batch_size: int = 512
    learning_rate: float = 1e-3
    seed: int = 0
    standardize: bool = True

    def validate(self) -> None:
        if self.feature_dim < 1 or self.window < 1 or self.stride < 1:
            raise ValueError("feature_dim, window and stride must be >= 1")
        if self.epochs < 0 or self.batch_size < 1 or not self.learning_rate > 0:
            raise ValueError("invalid training schedule")

    def to_dict(self) -> dict:
        return asdict(self)


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss."""


class LstmAutoencoder:
    def __init__(self, cfg: AutoencoderConfig, steps: int) -> None:
        cfg.validate()
        self.cfg = cfg
        self.steps = steps
        w, d = cfg.window, cfg.feature_dim
        self.feed = min(cfg.stride, w)
        rng = np.random.default_rng(cfg.seed)
        self.encoder = nn.LSTMCell(w, d, rng, "enc.")
        self.decoder = nn.LSTMCell(self.feed + w, d, rng, "dec.")
        self.readout = nn.Dense(d, w, "linear", rng, "out.")
        self.params: dict[str, np.ndarray] = {}
        for part in (self.encoder, self.decoder, self.readout):
            self.params.update(part.params)
        # input standardization: one scalar offset and scale per training set
        self.offset = 0.0
        self.scale = 1.0

    # -- data handling -----------------------------------------------------

    def fit_standardization(self, xs: np.ndarray) -> None:
        if self.cfg.standardize and len(xs):
            self.offset = float(xs.mean())
            s = float(xs.std())
            self.scale = s if s > 0 else 1.0

    def standardize(self, xs: np.ndarray) -> np.ndarray:
        return (xs - self.offset) / self.scale

    def unstandardize(self, ys: np.ndarray) -> np.ndarray:
        return ys * self.scale + self.offset

    def _check(self, xs: np.ndarray) -> None:
        if xs.ndim != 3 or xs.shape[2] != self.cfg.window:
            raise ValueError(f"expected (batch, steps, {self.cfg.window}) windows, got {xs.shape}")
        if xs.shape[1] != self.steps:
            raise ValueError(f"expected {self.steps} window steps, got {xs.shape[1]}")

    def _teacher(self, xs: np.ndarray, t: int) -> np.ndarray:
        tau = self.steps - 1 - t
        if tau + 1 >= self.steps:
            return np.zeros((xs.shape[0], self.feed))
        return xs[:, tau + 1, self.cfg.window - self.feed:]

    # -- forward / backward on standardized windows ---------------------------

    def forward(self, xs: np.ndarray):
        """Reconstruct standardized windows; returns (recon, features, cache)."""
        self._check(xs)
        _, (h, c), enc_caches = self.encoder.forward_sequence(xs)
        features = c.copy()
        batch = xs.shape[0]
        recon = np.empty_like(xs)
        prev = np.zeros((batch, self.cfg.window))
        dec_caches, out_caches = [], []
        for t in range(self.steps):
            inp = np.concatenate([self._teacher(xs, t), prev], axis=1)
            h, c, dcache = self.decoder.step(inp, h, c)
            y, ocache = self.readout.forward(h)
            recon[:, self.steps - 1 - t] = y
            prev = y
            dec_caches.append(dcache)
            out_caches.append(ocache)
        return recon, features, (enc_caches, dec_caches, out_caches)

    def backward(self, drecon: np.ndarray, cache) -> dict:
        if cache is None:
            raise RuntimeError("backward called without a forward cache")
        enc_caches, dec_caches, out_caches = cache
        batch = drecon.shape[0]
        d = self.cfg.feature_dim
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        dh = np.zeros((batch, d))
        dc = np.zeros((batch, d))
        dprev = np.zeros((batch, self.cfg.window))
        dzs = [None] * self.steps
        for t in range(self.steps - 1, -1, -1):
            dy = drecon[:, self.steps - 1 - t] + dprev
            dh_out, g = self.readout.backward(dy, out_caches[t])
            for k, v in g.items():
                grads[k] += v
            dz, dinp, dh, dc = self.decoder.step_backward(dh + dh_out, dc, dec_caches[t])
            dzs[t] = dz
            dprev = dinp[:, self.feed:]
        grads.update(self.decoder.weight_grads(dzs, dec_caches))
        _, _, _, g = self.encoder.backward_sequence(None, enc_caches, dh, dc)
        grads.update(g)
        return grads

    def loss_and_grads(self, xs: np.ndarray) -> tuple[float, dict]:
        recon, _, cache = self.forward(xs)
        return nn.mse(recon, xs), self.backward(nn.mse_grad(recon, xs), cache)

    # -- public surface ------------------------------------------------------

    def encode(self, windows: np.ndarray, batch: int = 2048) -> np.ndarray:
        """Feature vectors (final encoder cell state) for raw window sequences."""
        windows = np.asarray(windows, dtype=np.float64)
        self._check(windows)
        out = np.empty((len(windows), self.cfg.feature_dim))
        for a in range(0, len(windows), batch):
            xs = self.standardize(windows[a:a + batch])
            _, (_, c), _ = self.encoder.forward_sequence(xs)
            out[a:a + batch] = c
        return out

    def reconstruct(self, windows: np.ndarray, batch: int = 2048) -> np.ndarray:
        """Reconstructed windows in the units of the input."""
        windows = np.asarray(windows, dtype=np.float64)
        self._check(windows)
        out = np.empty_like(windows)
        for a in range(0, len(windows), batch):
            recon, _, _ = self.forward(self.standardize(windows[a:a + batch]))
            out[a:a + batch] = self.unstandardize(recon)
        return out

    def mse(self, windows: np.ndarray) -> float:
        """Reconstruction MSE in input units."""
        return nn.mse(self.reconstruct(windows), windows)

    def state(self) -> dict:
        p = dict(self.params)
        p["std"] = np.array([self.offset, self.scale])
        return p

    def load_state(self, p: dict) -> None:
        for k in self.params:
            self.params[k][...] = p[k]
        self.offset, self.scale = (float(v) for v in p["std"])


@dataclass
class TrainResult:
    model: LstmAutoencoder
    history: list[float] = field(default_factory=list)  # mean batch MSE per epoch, input units
    initial_mse: float = float("nan")


def to_sequences(traces: np.ndarray, window: int, stride: int) -> np.ndarray:
    """(n, l) normalized traces -> (n, steps, window) window sequences."""
    return sliding_windows(np.asarray(traces, dtype=np.float64), window, stride)


def train_autoencoder(windows: np.ndarray, cfg: AutoencoderConfig) -> TrainResult:
    """Train on window sequences of shape (n, steps, window) with Adam over mini-batches."""
    cfg.validate()
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim != 3 or len(windows) < 1:
        raise ValueError("need at least one window sequence of shape (steps, window)")
    model = LstmAutoencoder(cfg, windows.shape[1])
    model.fit_standardization(windows)
    xs_all = model.standardize(windows)
    scale2 = model.scale ** 2
    initial = model.mse(windows)
    opt = nn.AdamState(lr=cfg.learning_rate)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(1,)))
    history = []
    n = len(xs_all)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total, count = 0.0, 0
        for a in range(0, n, cfg.batch_size):
            idx = order[a:a + cfg.batch_size]
            loss, grads = model.loss_and_grads(xs_all[idx])
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch + 1}, batch {a // cfg.batch_size}")
            nn.adam_step(model.params, grads, opt)
            total += loss * len(idx)
            count += len(idx)
        history.append(total / count * scale2)
        log.info("autoencoder epoch %d/%d mse %.6g", epoch + 1, cfg.epochs, history[-1])
    return TrainResult(model=model, history=history, initial_mse=initial)


def normalize_features(features: np.ndarray) -> np.ndarray:
    """``(c - mean) / (max - min)`` per dimension; constant dimensions become 0."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or len(f) < 2:
        raise ValueError("need at least two feature vectors")
    span = f.max(axis=0) - f.min(axis=0)
    centered = f - f.mean(axis=0)
    return np.where(span > 0, centered / np.where(span > 0, span, 1.0), 0.0)


def overlap_average(windows: np.ndarray, stride: int, length: int | None = None) -> np.ndarray:
    """Fold (n, steps, W) windows back onto samples, averaging overlaps.

    Samples not covered by any window are NaN.
    """
    n, steps, w = windows.shape
    length = length or (steps - 1) * stride + w
    acc = np.zeros((n, length))
    cnt = np.zeros(length)
    for t in range(steps):
        acc[:, t * stride:t * stride + w] += windows[:, t]
        cnt[t * stride:t * stride + w] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(cnt > 0, acc / np.where(cnt > 0, cnt, 1), np.nan)
