"""Gray-labelled square QAM alphabets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["Constellation", "qam"]


def _gray_pam(bits_per_axis: int) -> np.ndarray:
    """Amplitude for each integer label along one axis (Gray order)."""
    m = 2**bits_per_axis
    levels = np.arange(-(m - 1), m, 2, dtype=float)
    amp = np.empty(m)
    for pos in range(m):
        amp[pos ^ (pos >> 1)] = levels[pos]
    return amp


@dataclass(frozen=True, eq=False)
class Constellation:
    """Points indexed by their bit label; bit 0 is the most significant."""

    points: np.ndarray
    bits_per_symbol: int

    @property
    def es(self) -> float:
        return float(np.mean(np.abs(self.points) ** 2))

    @property
    def labels(self) -> np.ndarray:
        """(|O|, bits) array of each point's bits, MSB first."""
        idx = np.arange(self.points.size)
        shifts = np.arange(self.bits_per_symbol - 1, -1, -1)
        return (idx[:, None] >> shifts) & 1

    def subsets(self, bit: int):
        """Point indices whose ``bit`` is 0 and 1."""
        lab = self.labels[:, bit]
        return np.flatnonzero(lab == 0), np.flatnonzero(lab == 1)


def qam(order: int = 16, es: float = 1.0) -> Constellation:
    """Square Gray-mapped QAM; the first half of the bits picks the in-phase level."""
    bits = int(np.log2(order))
    if 2**bits != order or bits % 2:
        raise ValueError("order must be an even power of two")
    pam = _gray_pam(bits // 2)
    half = bits // 2
    idx = np.arange(order)
    points = pam[idx >> half] + 1j * pam[idx & (2**half - 1)]
    points *= np.sqrt(es / np.mean(np.abs(points) ** 2))
    return Constellation(points, bits)
