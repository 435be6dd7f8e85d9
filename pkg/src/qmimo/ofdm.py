"""Tone plan, centred unitary DFT and the taps/frequency channel transform.

Tone ``w`` (0-based here) sits at frequency offset ``w - W/2``, so the DFT
used throughout is the standard unitary FFT applied to the sequence
modulated by ``(-1)**t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "TonePlan",
    "FrameCube",
    "build_tone_plan",
    "dft",
    "idft",
    "reorient",
    "taps_to_freq",
    "freq_to_taps",
]

# 802.11n HT40 layout, in frequency offsets k = w - W/2
_HT40_PILOTS = (11, 25, 53)
_HT40_EDGE_LOW = 6
_HT40_EDGE_HIGH = 5
_HT40_DC_HALF = 1


@dataclass(frozen=True, eq=False)
class TonePlan:
    """Partition of the W tones (0-based indices) into data, pilot and guard."""

    w: int
    data: np.ndarray
    pilot: np.ndarray
    guard: np.ndarray

    def __post_init__(self):
        sets = [np.sort(np.asarray(s, dtype=int)) for s in (self.data, self.pilot, self.guard)]
        allidx = np.concatenate(sets)
        if allidx.size != self.w or not np.array_equal(np.sort(allidx), np.arange(self.w)):
            raise ValueError("data, pilot and guard tones must partition 0..W-1")
        for name, s in zip(("data", "pilot", "guard"), sets):
            object.__setattr__(self, name, s)

    @property
    def used(self) -> np.ndarray:
        """Pilot and data tones, sorted."""
        return np.sort(np.concatenate([self.data, self.pilot]))

    def mask(self, which: str) -> np.ndarray:
        m = np.zeros(self.w, dtype=bool)
        m[getattr(self, which)] = True
        return m


def _round(x: float) -> int:
    return int(math.floor(x + 0.5))


def build_tone_plan(w: int = 128) -> TonePlan:
    """802.11n 40 MHz tone map, scaled proportionally for W != 128.

    For W = 128 this gives 108 data, 6 pilot and 14 guard tones (6 lower
    edge, 5 upper edge, 3 around DC).
    """
    if w < 8:
        raise ValueError("W must be at least 8")
    scale = w / 128
    half = w // 2
    k = np.arange(w) - half
    n_low = _round(_HT40_EDGE_LOW * scale)
    n_high = _round(_HT40_EDGE_HIGH * scale)
    dc_half = _round(_HT40_DC_HALF * scale)
    guard = (k < k[0] + n_low) | (k > k[-1] - n_high) | (np.abs(k) <= dc_half)

    n_pairs = min(len(_HT40_PILOTS), max(1, _round(len(_HT40_PILOTS) * scale)))
    pilot = np.zeros(w, dtype=bool)
    for p in _HT40_PILOTS[:n_pairs]:
        off = max(1, _round(p * scale))
        for kp in (-off, off):
            j = kp + half
            if 0 <= j < w and not guard[j]:
                pilot[j] = True
    idx = np.arange(w)
    data = ~guard & ~pilot
    return TonePlan(w, idx[data], idx[pilot], idx[guard])


def _modulation(n: int) -> np.ndarray:
    return 1.0 - 2.0 * (np.arange(n) % 2)


def dft(x, axis: int = -1) -> np.ndarray:
    """Unitary DFT with output bin ``w`` at frequency ``w - W/2``."""
    x = np.asarray(x)
    n = x.shape[axis]
    shape = [1] * x.ndim
    shape[axis] = n
    return np.fft.fft(x * _modulation(n).reshape(shape), axis=axis, norm="ortho")


def idft(x, axis: int = -1) -> np.ndarray:
    x = np.asarray(x)
    n = x.shape[axis]
    shape = [1] * x.ndim
    shape[axis] = n
    return np.fft.ifft(x, axis=axis, norm="ortho") * _modulation(n).reshape(shape)


@dataclass(frozen=True, eq=False)
class FrameCube:
    """Data cube of W tones (or samples) x rows x T OFDM symbols.

    ``orientation == "per-frequency"`` stores ``values[w]`` as the rows x T
    matrix of tone ``w``; ``"per-antenna"`` stores ``values[b]`` as a W x T
    matrix per row ``b``.
    """

    values: np.ndarray
    orientation: str = "per-frequency"

    def __post_init__(self):
        if self.orientation not in ("per-frequency", "per-antenna"):
            raise ValueError(f"unknown orientation {self.orientation!r}")
        if np.ndim(self.values) != 3:
            raise ValueError("a frame cube is three-dimensional")

    @property
    def t_total(self) -> int:
        return self.values.shape[2]


def reorient(cube: FrameCube) -> FrameCube:
    """Switch between per-frequency and per-antenna orientation."""
    other = "per-antenna" if cube.orientation == "per-frequency" else "per-frequency"
    return FrameCube(np.swapaxes(cube.values, 0, 1), other)


def taps_to_freq(taps) -> np.ndarray:
    """Frequency response of time-domain taps along the last axis."""
    return dft(taps, axis=-1)


def freq_to_taps(freq) -> np.ndarray:
    return idft(freq, axis=-1)
