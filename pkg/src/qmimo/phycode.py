"""Per-user coded chain: K=7 convolutional code punctured to rate 5/6, interleaving, 16-QAM mapping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from qmimo import _kernels
from qmimo.constellation import Constellation, qam
from qmimo.ofdm import TonePlan

__all__ = [
    "CodeConfig",
    "PacketPlan",
    "packet_plan",
    "encode",
    "puncture",
    "depuncture",
    "interleave",
    "deinterleave",
    "map_bits",
    "viterbi_soft",
]

BITS_PER_SYMBOL = 4


@dataclass(frozen=True)
class CodeConfig:
    """Convolutional code description.

    The generators are 7-bit masks over the shift register whose most
    significant bit is the current input. Each step emits one output per
    generator, in order; ``puncture`` lists, per generator, which steps of
    the period are kept.
    """

    constraint: int = 7
    generators: tuple = (0o133, 0o171)
    puncture: tuple = ((1, 1, 0, 1, 0), (1, 0, 1, 0, 1))

    def __post_init__(self):
        if len(self.puncture) != len(self.generators):
            raise ValueError("one puncture row per generator")
        if len({len(r) for r in self.puncture}) != 1:
            raise ValueError("puncture rows must share one period")
        if any(g >= 2**self.constraint or g < 1 for g in self.generators):
            raise ValueError("generator does not fit the constraint length")
        if not all(any(col) for col in zip(*self.puncture)):
            # a fully punctured step is legal but would make the rate bookkeeping awkward
            raise ValueError("every step of the puncture period must keep at least one bit")

    @property
    def tail(self) -> int:
        return self.constraint - 1

    @property
    def period(self) -> int:
        return len(self.puncture[0])

    @property
    def rate(self) -> float:
        return self.period / float(np.sum(self.puncture))

    @property
    def mother_n(self) -> int:
        return len(self.generators)

    def keep_mask(self, steps: int) -> np.ndarray:
        """Boolean (steps, n) mask of transmitted mother-code bits."""
        pat = np.asarray(self.puncture, dtype=bool).T  # (period, n)
        reps = -(-steps // self.period)
        return np.tile(pat, (reps, 1))[:steps]

    def trellis(self) -> np.ndarray:
        """``out[state, bit, j]`` coded bits; state = previous inputs, newest in the MSB."""
        m = self.tail
        states = np.arange(2**m)
        out = np.zeros((2**m, 2, self.mother_n), dtype=np.uint8)
        for b in (0, 1):
            reg = (b << m) | states
            for j, g in enumerate(self.generators):
                out[:, b, j] = _parity(reg & g)
        return out


def _parity(v):
    v = np.asarray(v, dtype=np.int64)
    p = np.zeros_like(v)
    while np.any(v):
        p ^= v & 1
        v = v >> 1
    return p


@dataclass(frozen=True, eq=False)
class PacketPlan:
    """Bit budget of one user's packet and its interleaver."""

    info_bits: int
    coded_bits: int
    perm: np.ndarray = field(repr=False)
    code: CodeConfig = CodeConfig()

    def __post_init__(self):
        if sorted(np.asarray(self.perm).tolist()) != list(range(self.coded_bits)):
            raise ValueError("perm must be a permutation of the coded bits")

    @property
    def steps(self) -> int:
        return self.info_bits + self.code.tail


def packet_plan(plan: TonePlan, data_symbols: int, rng: np.random.Generator, code: CodeConfig = CodeConfig()) -> PacketPlan:
    """Bits for ``data_symbols`` OFDM symbols of 16-QAM on the data tones."""
    n_c = plan.data.size * BITS_PER_SYMBOL * data_symbols
    steps = int(np.floor(n_c * code.rate + 1e-9))
    # largest step count whose punctured length still fits in n_c
    while int(code.keep_mask(steps).sum()) > n_c:
        steps -= 1
    k = steps - code.tail
    if k < 1:
        raise ValueError("packet too short for the code")
    return PacketPlan(k, n_c, rng.permutation(n_c), code)


def _mother(bits, code: CodeConfig) -> np.ndarray:
    u = np.concatenate([np.asarray(bits, dtype=np.int64), np.zeros(code.tail, dtype=np.int64)])
    out = np.empty((u.size, code.mother_n), dtype=np.uint8)
    for j, g in enumerate(code.generators):
        # delay d taps register bit (constraint-1-d)
        taps = np.array([(g >> (code.tail - d)) & 1 for d in range(code.constraint)])
        out[:, j] = np.convolve(u, taps)[: u.size] % 2
    return out


def puncture(mother: np.ndarray, code: CodeConfig) -> np.ndarray:
    return mother[code.keep_mask(mother.shape[0])]


def depuncture(values, steps: int, code: CodeConfig) -> np.ndarray:
    """Place transmitted values back on the (steps, n) grid; punctured slots get 0."""
    mask = code.keep_mask(steps)
    values = np.asarray(values, dtype=float)
    if values.size != mask.sum():
        raise ValueError(f"expected {int(mask.sum())} values, got {values.size}")
    grid = np.zeros(mask.shape)
    grid[mask] = values
    return grid


def encode(bits, packet: PacketPlan) -> np.ndarray:
    """Terminated, punctured codeword zero-padded to ``packet.coded_bits``."""
    bits = np.asarray(bits)
    if bits.shape != (packet.info_bits,):
        raise ValueError(f"expected {packet.info_bits} info bits, got shape {bits.shape}")
    coded = puncture(_mother(bits, packet.code), packet.code)
    out = np.zeros(packet.coded_bits, dtype=np.uint8)
    out[: coded.size] = coded
    return out


def interleave(bits, perm) -> np.ndarray:
    return np.asarray(bits)[np.asarray(perm)]


def deinterleave(values, perm) -> np.ndarray:
    values = np.asarray(values)
    out = np.empty_like(values)
    out[np.asarray(perm)] = values
    return out


def map_bits(bits, constellation: Constellation | None = None) -> np.ndarray:
    """Gray-map groups of bits (MSB first) onto the constellation."""
    c = qam(16) if constellation is None else constellation
    bits = np.asarray(bits, dtype=np.int64)
    k = c.bits_per_symbol
    if bits.size % k:
        raise ValueError(f"bit count must be a multiple of {k}")
    idx = bits.reshape(-1, k) @ (1 << np.arange(k - 1, -1, -1))
    return c.points[idx]


def viterbi_soft(llrs, packet: PacketPlan) -> np.ndarray:
    """Max-log Viterbi decode of ``packet.coded_bits`` LLRs (positive favours 1)."""
    llrs = np.asarray(llrs, dtype=float)
    if llrs.shape != (packet.coded_bits,):
        raise ValueError(f"expected {packet.coded_bits} LLRs, got shape {llrs.shape}")
    code = packet.code
    n_kept = int(code.keep_mask(packet.steps).sum())
    grid = depuncture(llrs[:n_kept], packet.steps, code)
    out = np.empty(packet.steps, dtype=np.uint8)
    _kernels.viterbi_maxlog(np.ascontiguousarray(grid), out, _trellis(code))
    return out[: packet.info_bits]


_TRELLIS = {}


def _trellis(code: CodeConfig) -> np.ndarray:
    t = _TRELLIS.get(code)
    if t is None:
        t = _TRELLIS[code] = code.trellis()
    return t
