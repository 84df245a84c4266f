"""Bit-stream sources and ideal NRZ waveform synthesis.

The transmitter side of the link model: seeded random (or PRBS) bit
streams, modulated to a two-level NRZ waveform at +/-amplitude with zero
rise time.  All band-limiting happens downstream in the channel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EmptyStreamError

MIN_SAMPLES_PER_UI = 16

# Fibonacci LFSR feedback taps (1-indexed stage numbers, MSB-first register).
_LFSR_TAPS = {
    "prbs7": (7, 6),    # x^7 + x^6 + 1, period 127
    "prbs15": (15, 14),  # x^15 + x^14 + 1, period 32767
}


@dataclass(slots=True, frozen=True)
class BitStream:
    """A binary symbol sequence together with how it was produced."""

    bits: np.ndarray
    seed: int
    source_kind: str

    def __post_init__(self):
        bits = np.ascontiguousarray(self.bits, dtype=np.uint8)
        if bits.ndim != 1 or bits.size == 0:
            raise EmptyStreamError("bit stream must be a non-empty 1-D sequence")
        if np.any(bits > 1):
            raise ConfigError("bit stream values must be 0 or 1")
        object.__setattr__(self, "bits", bits)

    def __len__(self) -> int:
        return int(self.bits.size)

    def inverted(self) -> "BitStream":
        return BitStream(bits=1 - self.bits, seed=self.seed, source_kind=self.source_kind)


@dataclass(slots=True, frozen=True)
class Waveform:
    """Uniformly sampled voltage signal."""

    sample_period: float
    samples: np.ndarray
    t0: float = 0.0

    def __post_init__(self):
        if self.sample_period <= 0.0:
            raise ConfigError("sample_period must be positive")
        samples = np.ascontiguousarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ConfigError("waveform must hold at least one sample")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return int(self.samples.size)

    @property
    def duration(self) -> float:
        return self.samples.size * self.sample_period

    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.samples.size) * self.sample_period

    def value_at(self, t: float) -> float:
        """Linearly interpolated sample value at time ``t``."""
        x = (t - self.t0) / self.sample_period
        i = int(np.clip(np.floor(x), 0, self.samples.size - 2))
        frac = x - i
        return float(self.samples[i] + frac * (self.samples[i + 1] - self.samples[i]))


def _lfsr_bits(kind: str, n: int, seed: int) -> np.ndarray:
    order, tap2 = _LFSR_TAPS[kind]
    mask = (1 << order) - 1
    state = seed & mask
    if state == 0:
        state = mask  # all-ones: the conventional non-degenerate start state
    out = np.empty(n, dtype=np.uint8)
    for i in range(n):
        out[i] = state & 1
        fb = ((state >> (order - 1)) ^ (state >> (tap2 - 1))) & 1
        state = ((state << 1) | fb) & mask
    return out


def generate_bits(kind: str, n: int, seed: int) -> BitStream:
    """Produce ``n`` bits from the named source, reproducibly for a fixed seed.

    ``kind`` is one of ``uniform`` (i.i.d. equiprobable, the default source
    for jitter experiments), ``prbs7`` or ``prbs15``.
    """
    if n < 1:
        raise EmptyStreamError(f"cannot generate {n} bits; need n >= 1")
    if kind == "uniform":
        rng = np.random.Generator(np.random.PCG64(seed))
        bits = rng.integers(0, 2, size=n, dtype=np.uint8)
    elif kind in _LFSR_TAPS:
        bits = _lfsr_bits(kind, n, seed)
    else:
        raise ConfigError(f"unknown bit source kind: {kind!r}")
    return BitStream(bits=bits, seed=seed, source_kind=kind)


def explicit_bits(bits, seed: int = 0) -> BitStream:
    """Wrap a literal bit pattern (e.g. 1010 training data) as a BitStream."""
    return BitStream(bits=np.asarray(bits, dtype=np.uint8), seed=seed, source_kind="explicit")


def nrz_modulate(bits: BitStream, ui: float, samples_per_ui: int, amplitude: float) -> Waveform:
    """Two-level NRZ: bit 1 -> +amplitude, bit 0 -> -amplitude, held one UI.

    Zero rise time by construction; the channel provides all band-limiting.
    """
    if samples_per_ui < MIN_SAMPLES_PER_UI:
        raise ConfigError(
            f"samples_per_ui must be >= {MIN_SAMPLES_PER_UI}, got {samples_per_ui}"
        )
    if ui <= 0.0:
        raise ConfigError("ui must be positive")
    levels = amplitude * (2.0 * bits.bits.astype(np.float64) - 1.0)
    samples = np.repeat(levels, samples_per_ui)
    return Waveform(sample_period=ui / samples_per_ui, samples=samples)
