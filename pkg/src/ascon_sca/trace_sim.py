"""Synthetic power traces of the first S-box layer of Ascon Initialization.

One S-box column is evaluated per clock cycle.  Each cycle carries a fixed
raised-cosine baseline; the sample at the cycle centre (or a triangular
neighbourhood of it, in smeared mode) adds ``leakage_scale * L(X_i)``.
Every trace draws from its own random substream keyed by
``(rng_seed, encryption_index)`` so generation order never matters.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np

from . import ascon_core
from .ascon_core import AsconInitState, SBOX_ARRAY
from .leakage_est import LeakageModel

LEAKAGE_KINDS = ("hw", "msb", "nnf")


@dataclass(frozen=True)
class SimConfig:
    num_encryptions: int = 1000
    samples_per_clock: int = 125
    sbox_count: int = 64
    leakage_kind: str = "hw"
    leakage_coefficients: tuple[float, ...] | None = None  # for "nnf", 32 values in basis order
    leakage_scale: float = 1.0
    noise_sigma: float = 0.0
    jitter_max: int = 0
    baseline_amplitude: float = 1.0
    smear_width: int = 0
    rng_seed: int = 0
    round_constant: bool = False
    diffusion_scale: float = 0.0
    iv: int | None = None

    def validate(self) -> None:
        if self.num_encryptions < 0:
            raise ValueError("num_encryptions must be >= 0")
        if self.samples_per_clock < 1:
            raise ValueError("samples_per_clock must be >= 1")
        if not 1 <= self.sbox_count <= 64:
            raise ValueError("sbox_count must be in 1..64")
        if self.noise_sigma < 0 or not np.isfinite(self.noise_sigma):
            raise ValueError("noise_sigma must be finite and >= 0")
        if not 0 <= self.jitter_max < self.samples_per_clock / 2:
            raise ValueError("jitter_max must satisfy 0 <= jitter_max < samples_per_clock/2")
        if self.leakage_kind not in LEAKAGE_KINDS:
            raise ValueError(f"unknown leakage kind {self.leakage_kind!r}")
        if self.leakage_kind == "nnf" and (self.leakage_coefficients is None or len(self.leakage_coefficients) != 32):
            raise ValueError("nnf leakage needs 32 coefficients")
        if self.smear_width < 0 or 2 * self.smear_width + 1 > self.samples_per_clock:
            raise ValueError("smear window must fit inside one clock cycle")
        if self.diffusion_scale and 3 * self.samples_per_clock // 4 == self.samples_per_clock // 2:
            raise ValueError("samples_per_clock too small for diffusion leakage")

    @property
    def trace_length(self) -> int:
        return self.sbox_count * self.samples_per_clock

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["leakage_coefficients"] is not None:
            d["leakage_coefficients"] = list(d["leakage_coefficients"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        if d.get("leakage_coefficients") is not None:
            d["leakage_coefficients"] = tuple(float(v) for v in d["leakage_coefficients"])
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown simulation fields: {sorted(unknown)}")
        return cls(**d)


def leakage_table(cfg: SimConfig) -> np.ndarray:
    """``L(x)`` for all 32 values of the sensitive variable."""
    xs = np.arange(32)
    if cfg.leakage_kind == "hw":
        return np.array([bin(x).count("1") for x in xs], dtype=np.float64)
    if cfg.leakage_kind == "msb":
        return (xs >> 4).astype(np.float64)
    return LeakageModel(np.array(cfg.leakage_coefficients)).evaluate(xs)


def noise_for_snr(snr_db: float, kind: str = "hw", scale: float = 1.0, coefficients=None) -> float:
    """Noise std giving ``snr_db`` at the POI, taking X uniform over 0..31."""
    cfg = SimConfig(leakage_kind=kind, leakage_coefficients=coefficients)
    var = float(np.var(scale * leakage_table(cfg)))
    return float(np.sqrt(var / 10 ** (snr_db / 10)))


def baseline_cycle(cfg: SimConfig) -> np.ndarray:
    n = cfg.samples_per_clock
    s = np.arange(n)
    return cfg.baseline_amplitude * 0.5 * (1.0 - np.cos(2.0 * np.pi * (s + 0.5) / n))


def poi_offset(cfg: SimConfig) -> int:
    return cfg.samples_per_clock // 2


def smear_weights(width: int) -> np.ndarray:
    return 1.0 - np.abs(np.arange(-width, width + 1)) / (width + 1)


@dataclass
class Trace:
    samples: np.ndarray
    nonce: int
    encryption_index: int


@dataclass
class TraceSet:
    samples: np.ndarray  # (n, N) float32
    nonces: np.ndarray  # (n, 16) uint8, big-endian
    config: dict = field(default_factory=dict)
    ground_truth_key: int | None = None
    indices: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 2:
            raise ValueError("samples must be a (traces, length) matrix")
        self.nonces = np.asarray(self.nonces, dtype=np.uint8).reshape(len(self.samples), 16)
        if self.indices is None:
            self.indices = np.arange(len(self.samples), dtype=np.int64)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def trace_length(self) -> int:
        return self.samples.shape[1]

    def __getitem__(self, j: int) -> Trace:
        return Trace(self.samples[j], ascon_core.nonce_from_bytes(self.nonces[j]), int(self.indices[j]))

    def __iter__(self) -> Iterator[Trace]:
        return (self[j] for j in range(len(self)))

    def prefix(self, n: int) -> "TraceSet":
        if n > len(self):
            raise ValueError(f"requested {n} traces, only {len(self)} available")
        return TraceSet(self.samples[:n], self.nonces[:n], dict(self.config), self.ground_truth_key, self.indices[:n])

    @property
    def sim_config(self) -> SimConfig | None:
        sim = self.config.get("sim") if self.config else None
        return SimConfig.from_dict(sim) if sim else None

    @property
    def samples_per_clock(self) -> int:
        sim = self.sim_config
        if sim is not None:
            return sim.samples_per_clock
        return int(self.config.get("samples_per_clock", 125))


def _substream(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


class _Model:
    """Per-config precomputation shared by every trace of a campaign."""

    def __init__(self, cfg: SimConfig, key: int) -> None:
        cfg.validate()
        self.cfg = cfg
        self.key = key
        self.iv = ascon_core.iv_bits(cfg.iv)
        self.table = cfg.leakage_scale * leakage_table(cfg)
        n = cfg.samples_per_clock
        self.base = np.tile(baseline_cycle(cfg), cfg.sbox_count)
        self.poi = np.arange(cfg.sbox_count) * n + poi_offset(cfg)
        self.kernel = smear_weights(cfg.smear_width)
        iv_col = np.array([ascon_core.word_bit(self.iv, i) for i in range(64)], dtype=np.int64)
        kb = np.array([ascon_core.key_pair_bits(key, i) for i in range(64)], dtype=np.int64)
        if cfg.round_constant:
            kb[:, 1] ^= np.array([ascon_core.round_constant_bit(i) for i in range(64)])
        self.fixed_bits = (iv_col << 4) | (kb[:, 0] << 3) | (kb[:, 1] << 2)

    def sensitive(self, nonces: np.ndarray) -> np.ndarray:
        """S-box outputs, shape (traces, sbox_count)."""
        cols = []
        for i in range(self.cfg.sbox_count):
            hi, lo = ascon_core.nonce_bits_array(nonces, i)
            cols.append(SBOX_ARRAY[self.fixed_bits[i] | (hi.astype(np.int64) << 1) | lo])
        return np.stack(cols, axis=1) if cols else np.zeros((len(nonces), 0), dtype=np.uint8)

    def clean(self, nonce_row: np.ndarray, x_row: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        t = self.base.copy()
        w = cfg.smear_width
        amp = self.table[x_row]
        for off, k in zip(range(-w, w + 1), self.kernel):
            t[self.poi + off] += k * amp
        if cfg.diffusion_scale:
            nonce = ascon_core.nonce_from_bytes(nonce_row)
            state = AsconInitState(self.iv, self.key, nonce)
            words = state.words
            if cfg.round_constant:
                words = ascon_core.add_round_constant(words)
            out = ascon_core.linear_diffusion(ascon_core.sbox_layer_bitsliced(*words))
            cols = np.array([sum(ascon_core.word_bit(out[j], i) for j in range(5)) for i in range(cfg.sbox_count)])
            t[np.arange(cfg.sbox_count) * cfg.samples_per_clock + 3 * cfg.samples_per_clock // 4] += cfg.diffusion_scale * cols
        return t

    def emit(self, rng: np.random.Generator, nonce_row: np.ndarray, x_row: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        t = self.clean(nonce_row, x_row)
        if cfg.jitter_max:
            shift = int(rng.integers(-cfg.jitter_max, cfg.jitter_max + 1))
            t = shift_edge(t, shift)
        if cfg.noise_sigma:
            t = t + cfg.noise_sigma * rng.standard_normal(len(t))
        return t


def shift_edge(t: np.ndarray, shift: int) -> np.ndarray:
    """Delay ``t`` by ``shift`` samples (negative advances), edge-padded."""
    if shift == 0:
        return t.copy()
    n = len(t)
    padded = np.pad(t, abs(shift), mode="edge")
    start = abs(shift) - shift
    return padded[start:start + n]


def synth_trace(key: int, nonce: int, cfg: SimConfig, rng: np.random.Generator, encryption_index: int = 0) -> Trace:
    model = _Model(cfg, key)
    row = ascon_core.nonce_bytes(nonce)
    x = model.sensitive(row[None, :])[0]
    return Trace(model.emit(rng, row, x), nonce, encryption_index)


def simulate_campaign(cfg: SimConfig, key: int, indices: Sequence[int] | None = None) -> TraceSet:
    """Simulate ``cfg.num_encryptions`` encryptions under ``key``.

    ``indices`` selects a subset of encryption indices (for partitioned
    generation); results for a given index never depend on the others.
    """
    model = _Model(cfg, key)
    idx = np.arange(cfg.num_encryptions) if indices is None else np.asarray(indices, dtype=np.int64)
    n = len(idx)
    samples = np.empty((n, cfg.trace_length), dtype=np.float32)
    nonces = np.empty((n, 16), dtype=np.uint8)
    rngs = [_substream(cfg.rng_seed, int(j)) for j in idx]
    for r, rng in enumerate(rngs):
        nonces[r] = rng.integers(0, 256, size=16, dtype=np.uint8)
    xs = model.sensitive(nonces)
    for r, rng in enumerate(rngs):
        samples[r] = model.emit(rng, nonces[r], xs[r])
    meta = {"sim": cfg.to_dict(), "samples_per_clock": cfg.samples_per_clock}
    return TraceSet(samples, nonces, meta, ground_truth_key=key, indices=idx.astype(np.int64))


def clean_campaign(cfg: SimConfig, key: int) -> TraceSet:
    """The noise-free twin of ``simulate_campaign(cfg, key)`` (same nonces and jitter)."""
    return simulate_campaign(replace(cfg, noise_sigma=0.0), key)


def sensitive_values(ts: TraceSet, key: int | None = None) -> np.ndarray:
    """True S-box outputs of every trace in a simulated set."""
    cfg = ts.sim_config
    if cfg is None:
        raise ValueError("trace set carries no simulation config")
    key = ts.ground_truth_key if key is None else key
    if key is None:
        raise ValueError("no key available")
    return _Model(cfg, key).sensitive(ts.nonces)
