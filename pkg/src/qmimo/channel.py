"""Frequency-selective MU-MIMO channel and the quantized uplink forward model."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np

from qmimo.constellation import qam
from qmimo.ofdm import TonePlan, build_tone_plan, idft, taps_to_freq
from qmimo.quant import QuantizerSpec, QuantLabel, design_lloyd_max, gaussian_moments, quantize, uniform_moments

__all__ = [
    "SystemConfig",
    "ChannelRealization",
    "RxFrame",
    "draw_channel",
    "transmit",
    "snr_to_n0",
    "trial_rng",
    "design_quantizer",
]

SNR_DEFINITION = "snr_db = 10*log10(U*Es*L/(W*N0)) (per-tone receive signal power over noise power)"


@dataclass(frozen=True)
class SystemConfig:
    """Uplink parameters. ``qbits=None`` means infinite-precision ADCs."""

    users: int = 8
    antennas: int = 64
    subcarriers: int = 128
    taps: int = 4
    cp_support: int = 16
    qbits: Optional[int] = 4
    es: float = 1.0
    n0: float = 1.0
    data_symbols: int = 6
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.users <= self.antennas:
            raise ValueError("need 1 <= users <= antennas")
        if not 1 <= self.taps <= self.cp_support < self.subcarriers:
            raise ValueError("need 1 <= taps <= cp_support < subcarriers")
        if self.qbits is not None and not 1 <= self.qbits <= 12:
            raise ValueError("qbits must be in 1..12 or None")
        if self.data_symbols < 1:
            raise ValueError("data_symbols must be >= 1")
        if not (self.es > 0 and self.n0 > 0):
            raise ValueError("es and n0 must be positive")

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)

    @property
    def t_total(self) -> int:
        return self.users + self.data_symbols

    @property
    def plan(self) -> TonePlan:
        return build_tone_plan(self.subcarriers)


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    taps: np.ndarray  # (B, U, W), zero beyond L
    freq: np.ndarray  # (B, U, W)

    @classmethod
    def from_taps(cls, taps) -> "ChannelRealization":
        taps = np.asarray(taps, dtype=complex)
        return cls(taps, taps_to_freq(taps))


@dataclass(frozen=True, eq=False)
class RxFrame:
    """Time-domain receive block, antennas x samples x OFDM symbols."""

    labels: Optional[QuantLabel]
    unquantized: Optional[np.ndarray]
    spec: Optional[QuantizerSpec]

    @property
    def t_total(self) -> int:
        arr = self.unquantized if self.labels is None else self.labels.re
        return arr.shape[2]

    def symbols(self, sl) -> "RxFrame":
        """Restrict to a slice of OFDM symbols."""
        labels = None if self.labels is None else QuantLabel(self.labels.re[:, :, sl], self.labels.im[:, :, sl])
        unq = None if self.unquantized is None else self.unquantized[:, :, sl]
        return RxFrame(labels, unq, self.spec)


def trial_rng(seed: int, *stream) -> np.random.Generator:
    """Independent generator for (seed, stream...) that does not depend on call order.

    Negative tags (e.g. an SNR below 0 dB in millidecibels) are folded above
    2**63, leaving the entropy of non-negative tags unchanged.
    """
    words = [int(v) if int(v) >= 0 else 2**63 - int(v) for v in (seed, *stream)]
    return np.random.default_rng(np.random.SeedSequence(words))


def _cn(rng, shape, var=1.0):
    return np.sqrt(var / 2) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def draw_channel(cfg: SystemConfig, rng: np.random.Generator) -> ChannelRealization:
    b, u, w, l = cfg.antennas, cfg.users, cfg.subcarriers, cfg.taps
    taps = np.zeros((b, u, w), dtype=complex)
    taps[:, :, :l] = _cn(rng, (b, u, l))
    return ChannelRealization.from_taps(taps)


def transmit(
    frames,
    channel: ChannelRealization,
    cfg: SystemConfig,
    spec: Optional[QuantizerSpec],
    rng: np.random.Generator,
    *,
    keep_unquantized: bool = False,
) -> RxFrame:
    """Apply the channel per tone, return to time domain, add noise and quantize.

    ``frames`` is the per-frequency transmit cube, shape (W, U, T). With
    ``spec=None`` (infinite precision) only the unquantized samples are kept.
    """
    s = np.asarray(frames, dtype=complex)
    b, u, w = channel.freq.shape
    if s.ndim != 3 or s.shape[:2] != (w, u):
        raise ValueError(f"frames must have shape ({w}, {u}, T), got {s.shape}")
    z = channel.freq.transpose(2, 0, 1) @ s  # (W, B, T)
    y = idft(z.transpose(1, 0, 2), axis=1) + _cn(rng, (b, w, s.shape[2]), cfg.n0)
    if spec is None:
        return RxFrame(None, y, None)
    return RxFrame(quantize(y, spec), y if keep_unquantized else None, spec)


def snr_to_n0(cfg: SystemConfig, snr_db: float) -> float:
    return cfg.users * cfg.es * cfg.taps / (cfg.subcarriers * 10 ** (snr_db / 10))


def random_frames(cfg: SystemConfig, rng: np.random.Generator, n_symbols: int) -> np.ndarray:
    """16-QAM on every used tone, zero guard tones; shape (W, U, n_symbols)."""
    plan = cfg.plan
    pts = qam(16, cfg.es).points
    s = np.zeros((cfg.subcarriers, cfg.users, n_symbols), dtype=complex)
    used = plan.used
    s[used] = pts[rng.integers(0, pts.size, size=(used.size, cfg.users, n_symbols))]
    return s


def design_quantizer(
    cfg: SystemConfig,
    rng: np.random.Generator,
    *,
    n_samples: int = 100_000,
    moments: str = "gaussian",
) -> Optional[QuantizerSpec]:
    """Lloyd-Max quantizer for the receive density at ``cfg`` (incl. its N0).

    The density is acquired by simulating unquantized receive samples over
    fresh channel draws; real and imaginary rails are pooled together with
    their negatives since the density is circularly symmetric.
    """
    if cfg.qbits is None:
        return None
    pool = []
    collected = 0
    per_symbol = cfg.antennas * cfg.subcarriers * 2
    n_sym = max(1, min(cfg.t_total, -(-n_samples // per_symbol)))
    while collected < n_samples:
        ch = draw_channel(cfg, rng)
        rx = transmit(random_frames(cfg, rng, n_sym), ch, cfg, None, rng)
        v = rx.unquantized.ravel()
        pool.append(np.concatenate([v.real, v.imag]))
        collected += 2 * v.size
    x = np.concatenate(pool)[:n_samples]
    x = np.concatenate([x, -x])
    spec = design_lloyd_max(x, cfg.qbits)
    if moments == "gaussian":
        return gaussian_moments(spec, float(np.mean(x * x)))
    if moments == "uniform":
        return uniform_moments(spec)
    if moments == "empirical":
        return spec
    raise ValueError(f"unknown moments {moments!r}")
