"""Ascon state initialization and the 5-bit S-box attacked in round 1.

Bit conventions: a 64-bit state word is indexed MSB-first, so column ``i``
of the state reads ``(word >> (63 - i)) & 1``.  The 128-bit key ``K`` is
split into ``x1 = K >> 64`` and ``x2 = K & MASK64``; ``k_i`` is bit ``i`` of
``x1`` and ``k_{i+64}`` is bit ``i`` of ``x2``.  The nonce is laid out the same
way over ``x3``/``x4``.  The S-box input of column ``i`` packs
``(x0_i, x1_i, x2_i, x3_i, x4_i)`` with ``x0_i`` as the MSB.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MASK64 = (1 << 64) - 1

#: Ascon-128 initial value (k=128, r=64, a=12, b=6).
ASCON128_IV = 0x80400C0600000000

#: Round constants of the 12-round permutation; round 0 is used at the
#: start of Initialization.
ROUND_CONSTANTS = (0xF0, 0xE1, 0xD2, 0xC3, 0xB4, 0xA5, 0x96, 0x87, 0x78, 0x69, 0x5A, 0x4B)


def sbox_layer_bitsliced(x0: int, x1: int, x2: int, x3: int, x4: int) -> tuple[int, int, int, int, int]:
    """Reference bit-sliced S-box layer over five 64-bit words."""
    x0 ^= x4
    x4 ^= x3
    x2 ^= x1
    t0 = ~x0 & x1
    t1 = ~x1 & x2
    t2 = ~x2 & x3
    t3 = ~x3 & x4
    t4 = ~x4 & x0
    x0 ^= t1
    x1 ^= t2
    x2 ^= t3
    x3 ^= t4
    x4 ^= t0
    x1 ^= x0
    x0 ^= x4
    x3 ^= x2
    x2 = ~x2
    return tuple(w & MASK64 for w in (x0, x1, x2, x3, x4))  # type: ignore[return-value]


def _sbox_from_algebra(x: int) -> int:
    # Evaluate one column of the bit-sliced layer on single-bit words.
    bits = [(x >> (4 - j)) & 1 for j in range(5)]
    out = sbox_layer_bitsliced(*bits)
    return sum((out[j] & 1) << (4 - j) for j in range(5))


# Frozen from _sbox_from_algebra; tests re-derive it exhaustively.
SBOX = (
    0x04, 0x0B, 0x1F, 0x14, 0x1A, 0x15, 0x09, 0x02,
    0x1B, 0x05, 0x08, 0x12, 0x1D, 0x03, 0x06, 0x1C,
    0x1E, 0x13, 0x07, 0x0E, 0x00, 0x0D, 0x11, 0x18,
    0x10, 0x0C, 0x01, 0x19, 0x16, 0x0A, 0x0F, 0x17,
)


def _check_bit(name: str, b: int) -> int:
    if b not in (0, 1):
        raise ValueError(f"{name} must be 0 or 1, got {b!r}")
    return int(b)


def sbox5(x: int) -> int:
    """Ascon S-box on a 5-bit value."""
    if not 0 <= x <= 31:
        raise ValueError(f"S-box input out of range: {x}")
    return SBOX[x]


@dataclass(frozen=True)
class SboxInput:
    iv_bit: int
    key_hi: int
    key_lo: int
    nonce_hi: int
    nonce_lo: int

    def __post_init__(self) -> None:
        for name in ("iv_bit", "key_hi", "key_lo", "nonce_hi", "nonce_lo"):
            _check_bit(name, getattr(self, name))

    def pack(self) -> int:
        return (self.iv_bit << 4) | (self.key_hi << 3) | (self.key_lo << 2) | (self.nonce_hi << 1) | self.nonce_lo

    @classmethod
    def unpack(cls, x: int) -> "SboxInput":
        if not 0 <= x <= 31:
            raise ValueError(f"not a 5-bit value: {x}")
        return cls(*((x >> (4 - j)) & 1 for j in range(5)))


def sensitive_data(nonce_bits: tuple[int, int], key_bits: tuple[int, int], iv_bit: int) -> int:
    """S-box output for one column given public nonce bits and a key-bit pair."""
    n_hi, n_lo = nonce_bits
    k_hi, k_lo = key_bits
    return SBOX[SboxInput(iv_bit, k_hi, k_lo, n_hi, n_lo).pack()]


def iv_bits(override: int | None = None) -> int:
    """The IV word loaded into x0; the Ascon-128 constant unless overridden."""
    if override is None:
        return ASCON128_IV
    if not 0 <= override <= MASK64:
        raise ValueError("IV override must be a 64-bit word")
    return override


def word_bit(word: int, i: int) -> int:
    return (word >> (63 - i)) & 1


def split128(v: int) -> tuple[int, int]:
    """Split a 128-bit integer into (high word, low word)."""
    if not 0 <= v < (1 << 128):
        raise ValueError("expected a 128-bit value")
    return v >> 64, v & MASK64


def key_pair_bits(key: int, i: int) -> tuple[int, int]:
    """``(k_i, k_{i+64})`` for S-box column ``i``."""
    hi, lo = split128(key)
    return word_bit(hi, i), word_bit(lo, i)


def nonce_pair_bits(nonce: int, i: int) -> tuple[int, int]:
    """``(n_i, n_{i+64})`` for S-box column ``i``."""
    hi, lo = split128(nonce)
    return word_bit(hi, i), word_bit(lo, i)


@dataclass(frozen=True)
class AsconInitState:
    """The 320-bit state right after loading IV, key and nonce."""

    iv: int
    key: int
    nonce: int

    @property
    def words(self) -> tuple[int, int, int, int, int]:
        k_hi, k_lo = split128(self.key)
        n_hi, n_lo = split128(self.nonce)
        return (self.iv & MASK64, k_hi, k_lo, n_hi, n_lo)

    def column(self, i: int) -> SboxInput:
        return SboxInput(*(word_bit(w, i) for w in self.words))

    def columns(self) -> list[SboxInput]:
        return [self.column(i) for i in range(64)]

    @classmethod
    def from_columns(cls, cols: list[SboxInput]) -> "AsconInitState":
        if len(cols) != 64:
            raise ValueError("need exactly 64 columns")
        words = [0] * 5
        for i, col in enumerate(cols):
            for j, b in enumerate((col.iv_bit, col.key_hi, col.key_lo, col.nonce_hi, col.nonce_lo)):
                words[j] |= b << (63 - i)
        return cls(iv=words[0], key=(words[1] << 64) | words[2], nonce=(words[3] << 64) | words[4])


def add_round_constant(words: tuple[int, ...], rnd: int = 0) -> tuple[int, ...]:
    x = list(words)
    x[2] ^= ROUND_CONSTANTS[rnd]
    return tuple(x)


def round_constant_bit(i: int, rnd: int = 0) -> int:
    """Bit of the round constant that lands in column ``i`` of x2."""
    return word_bit(ROUND_CONSTANTS[rnd], i)


def _rotr(w: int, n: int) -> int:
    return ((w >> n) | (w << (64 - n))) & MASK64


def linear_diffusion(words: tuple[int, ...]) -> tuple[int, int, int, int, int]:
    x0, x1, x2, x3, x4 = words
    return (
        x0 ^ _rotr(x0, 19) ^ _rotr(x0, 28),
        x1 ^ _rotr(x1, 61) ^ _rotr(x1, 39),
        x2 ^ _rotr(x2, 1) ^ _rotr(x2, 6),
        x3 ^ _rotr(x3, 10) ^ _rotr(x3, 17),
        x4 ^ _rotr(x4, 7) ^ _rotr(x4, 41),
    )


def first_round_outputs(state: AsconInitState, with_round_constant: bool = False) -> list[int]:
    """S-box output of each of the 64 columns in round 1 of Initialization."""
    words = state.words
    if with_round_constant:
        words = add_round_constant(words)
    out = sbox_layer_bitsliced(*words)
    return [sum(word_bit(out[j], i) << (4 - j) for j in range(5)) for i in range(64)]


# --- vectorized helpers used by the simulator and the attacks -------------

SBOX_ARRAY = np.array(SBOX, dtype=np.uint8)


def nonce_bytes(nonce: int) -> np.ndarray:
    """128-bit nonce as 16 big-endian bytes (x3 first, then x4)."""
    return np.frombuffer(nonce.to_bytes(16, "big"), dtype=np.uint8).copy()


def nonce_from_bytes(b: np.ndarray) -> int:
    return int.from_bytes(bytes(np.asarray(b, dtype=np.uint8)), "big")


def nonce_bits_array(nonces: np.ndarray, i: int) -> tuple[np.ndarray, np.ndarray]:
    """``(n_i, n_{i+64})`` for every row of an ``(n, 16)`` nonce byte array."""
    nonces = np.asarray(nonces, dtype=np.uint8)
    shift = 7 - (i % 8)
    hi = (nonces[:, i // 8] >> shift) & 1
    lo = (nonces[:, 8 + i // 8] >> shift) & 1
    return hi.astype(np.uint8), lo.astype(np.uint8)


def sensitive_array(nonce_hi: np.ndarray, nonce_lo: np.ndarray, key_bits: tuple[int, int], iv_bit: int) -> np.ndarray:
    k_hi, k_lo = (_check_bit("key bit", b) for b in key_bits)
    iv_bit = _check_bit("iv_bit", iv_bit)
    idx = (iv_bit << 4) | (k_hi << 3) | (k_lo << 2) | (nonce_hi.astype(np.uint8) << 1) | nonce_lo.astype(np.uint8)
    return SBOX_ARRAY[idx]


def candidate_bits(candidate: int) -> tuple[tuple[int, int], tuple[int, int]]:
    """Split a 4-bit pair candidate into key-bit pairs for S-boxes 2p and 2p+1.

    The candidate packs ``(k_{2p}, k_{2p+64}, k_{2p+1}, k_{2p+65})`` MSB-first.
    """
    if not 0 <= candidate < 16:
        raise ValueError(f"candidate must be in 0..15, got {candidate}")
    return ((candidate >> 3) & 1, (candidate >> 2) & 1), ((candidate >> 1) & 1, candidate & 1)


def pair_candidate(key: int, pair: int) -> int:
    """The true 4-bit candidate of ``key`` for S-box pair ``pair``."""
    a = key_pair_bits(key, 2 * pair)
    b = key_pair_bits(key, 2 * pair + 1)
    return (a[0] << 3) | (a[1] << 2) | (b[0] << 1) | b[1]
