"""Per-S-box windowing, normalization, sliding windows and the SCTR container."""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ascon_core
from .trace_sim import TraceSet

MAGIC = b"SCTR"
VERSION = 1
FLAG_HAS_KEY = 0x0001
_HEADER = struct.Struct("<4sHIIH")


class TraceFileError(ValueError):
    """Base class for SCTR container errors."""


class BadHeaderError(TraceFileError):
    """Wrong magic bytes or unsupported version."""


class TruncatedError(TraceFileError):
    """The file ends before the declared payload does."""


class ChecksumError(TraceFileError):
    """Payload CRC-32 does not match the stored value."""


@dataclass(frozen=True)
class WindowSpec:
    """``length = samples_per_clock + delta_l`` samples centred on a cycle."""

    samples_per_clock: int = 125
    delta_l: int = 24

    def __post_init__(self) -> None:
        if self.samples_per_clock < 1 or self.length < 1:
            raise ValueError("window length must be >= 1")

    @property
    def length(self) -> int:
        return self.samples_per_clock + self.delta_l

    def center(self, sbox_index: int) -> float:
        return (sbox_index + 0.5) * self.samples_per_clock

    def start(self, sbox_index: int) -> int:
        return sbox_index * self.samples_per_clock + (self.samples_per_clock - self.length) // 2


def extract_windows(samples: np.ndarray, sbox_index: int, spec: WindowSpec) -> np.ndarray:
    """Window of S-box ``sbox_index`` from every row, reflect-padded at edges."""
    samples = np.atleast_2d(samples)
    n_len = samples.shape[1]
    if not 0 <= sbox_index < max(1, n_len // spec.samples_per_clock):
        raise ValueError(f"S-box index {sbox_index} outside the trace")
    idx = np.arange(spec.start(sbox_index), spec.start(sbox_index) + spec.length)
    idx = np.where(idx < 0, -idx, idx)
    idx = np.where(idx >= n_len, 2 * (n_len - 1) - idx, idx)
    if spec.length > n_len or idx.min() < 0 or idx.max() >= n_len:
        raise ValueError("window does not fit inside the trace")
    return samples[:, idx]


def extract_sbox_window(samples: np.ndarray, sbox_index: int, spec: WindowSpec) -> np.ndarray:
    return extract_windows(np.asarray(samples)[None, :], sbox_index, spec)[0]


def normalize_rows(x: np.ndarray) -> np.ndarray:
    """Zero-mean each row and divide by its range; constant rows become 0."""
    x = np.asarray(x, dtype=np.float64)
    centered = x - x.mean(axis=-1, keepdims=True)
    rng = x.max(axis=-1, keepdims=True) - x.min(axis=-1, keepdims=True)
    safe = np.where(rng > 0, rng, 1.0)
    return np.where(rng > 0, centered / safe, 0.0)


def normalize_trace(t) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if t.size == 0:
        raise ValueError("cannot normalize an empty trace")
    return normalize_rows(t[None, :])[0]


def num_steps(length: int, window: int, stride: int) -> int:
    return (length - window) // stride + 1


def sliding_windows(t: np.ndarray, window: int = 10, stride: int = 5) -> np.ndarray:
    """Windows of ``window`` samples every ``stride`` samples along the last axis.

    Output shape is ``t.shape[:-1] + (steps, window)``; a trailing partial
    window is dropped.
    """
    t = np.asarray(t, dtype=np.float64)
    if stride < 1 or window < 1:
        raise ValueError("window and stride must be >= 1")
    if window > t.shape[-1]:
        raise ValueError(f"window {window} longer than trace {t.shape[-1]}")
    view = np.lib.stride_tricks.sliding_window_view(t, window, axis=-1)
    return np.ascontiguousarray(view[..., ::stride, :])


@dataclass
class PairData:
    """Pooled windows of S-boxes ``2p`` and ``2p+1`` (first all ``2p``, then ``2p+1``)."""

    windows: np.ndarray  # (2n, l) normalized
    sbox_sel: np.ndarray  # 0 or 1 per row
    nonce_hi: np.ndarray
    nonce_lo: np.ndarray
    trace_index: np.ndarray
    iv_pair: tuple[int, int]
    pair: int

    def __len__(self) -> int:
        return len(self.windows)


def pair_windows(ts: TraceSet, pair: int, spec: WindowSpec, iv: int | None = None,
                 normalize: bool = True, samples: np.ndarray | None = None) -> PairData:
    """Collect the pooled, optionally normalized, windows of one S-box pair.

    ``samples`` substitutes the sample matrix (e.g. a noiseless twin) while
    keeping the nonces of ``ts``.
    """
    if not 0 <= pair < 32:
        raise ValueError("pair index must be in 0..31")
    iv_word = ascon_core.iv_bits(iv)
    src = ts.samples if samples is None else samples
    rows, sel, nh, nl = [], [], [], []
    for s, i in enumerate((2 * pair, 2 * pair + 1)):
        w = extract_windows(src, i, spec) if len(ts) else np.zeros((0, spec.length))
        rows.append(normalize_rows(w) if normalize else np.asarray(w, dtype=np.float64))
        hi, lo = ascon_core.nonce_bits_array(ts.nonces, i)
        nh.append(hi)
        nl.append(lo)
        sel.append(np.full(len(ts), s, dtype=np.int64))
    iv_pair = (ascon_core.word_bit(iv_word, 2 * pair), ascon_core.word_bit(iv_word, 2 * pair + 1))
    return PairData(
        windows=np.concatenate(rows),
        sbox_sel=np.concatenate(sel),
        nonce_hi=np.concatenate(nh).astype(np.int64),
        nonce_lo=np.concatenate(nl).astype(np.int64),
        trace_index=np.concatenate([np.arange(len(ts))] * 2),
        iv_pair=iv_pair,
        pair=pair,
    )


# --- SCTR container ---------------------------------------------------------

def _meta_path(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def write_traceset(ts: TraceSet, path) -> None:
    path = Path(path)
    samples = np.ascontiguousarray(ts.samples, dtype="<f4")
    n, length = samples.shape
    flags = FLAG_HAS_KEY if ts.ground_truth_key is not None else 0
    nonces = np.ascontiguousarray(ts.nonces, dtype=np.uint8)
    records = np.empty(n, dtype=[("nonce", "u1", 16), ("samples", "<f4", length)])
    records["nonce"] = nonces
    records["samples"] = samples
    payload = records.tobytes()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, n, length, flags))
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))
    meta = {"format": "SCTR", "version": VERSION, "config": ts.config}
    if ts.ground_truth_key is not None:
        meta["ground_truth_key"] = f"{ts.ground_truth_key:032x}"
    if not np.array_equal(ts.indices, np.arange(n)):
        meta["indices"] = [int(i) for i in ts.indices]
    _meta_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True))


def read_traceset(path) -> TraceSet:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        raise TruncatedError(f"{path}: shorter than the header")
    magic, version, n, length, flags = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise BadHeaderError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise BadHeaderError(f"{path}: unsupported version {version}")
    rec = 16 + 4 * length
    end = _HEADER.size + n * rec
    if len(blob) < end + 4:
        raise TruncatedError(f"{path}: payload truncated ({len(blob)} of {end + 4} bytes)")
    payload = blob[_HEADER.size:end]
    (crc,) = struct.unpack_from("<I", blob, end)
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise ChecksumError(f"{path}: CRC-32 mismatch")
    records = np.frombuffer(payload, dtype=[("nonce", "u1", 16), ("samples", "<f4", length)], count=n)
    samples = records["samples"].astype(np.float32).reshape(n, length)
    nonces = records["nonce"].copy().reshape(n, 16)
    meta = {}
    mpath = _meta_path(path)
    if mpath.exists():
        meta = json.loads(mpath.read_text())
    key = meta.get("ground_truth_key")
    if flags & FLAG_HAS_KEY and key is None:
        raise TraceFileError(f"{path}: key flag set but metadata has no key")
    indices = np.array(meta["indices"], dtype=np.int64) if "indices" in meta else None
    return TraceSet(samples, nonces, meta.get("config", {}), int(key, 16) if key else None, indices)
