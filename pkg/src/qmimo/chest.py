"""Pilot generation and channel estimation from quantized training symbols."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import hadamard

from qmimo.channel import RxFrame, SystemConfig
from qmimo.fbs import FbsProblem, FbsReport, prox_time_support, solve
from qmimo.ofdm import TonePlan, dft, freq_to_taps, idft, taps_to_freq
from qmimo.quant import NoiseModel, QuantizerSpec, mismatch1_observe, nll_exact_and_gradient

__all__ = [
    "RECEIVERS",
    "PilotBook",
    "ChestConfig",
    "ChannelEstimate",
    "gen_pilots",
    "estimate",
    "chest_mse",
    "ExactTerm",
    "GaussianTerm",
    "likelihood_term",
]

log = logging.getLogger(__name__)

RECEIVERS = ("exact", "mismatch1", "mismatch2", "unquantized")


@dataclass(frozen=True, eq=False)
class PilotBook:
    """Training matrices ``T_w`` (users x training symbols) per tone; zero on guard tones."""

    matrices: np.ndarray  # (W, U, U)
    es: float
    hadamard: bool = True


@dataclass(frozen=True)
class ChestConfig:
    kind: str = "exact"
    support: int = 16
    prior_variance: Optional[float] = None
    tol: float = 1e-6
    max_iter: int = 500

    def __post_init__(self):
        if self.kind not in RECEIVERS:
            raise ValueError(f"unknown receiver kind {self.kind!r}")
        if self.prior_variance is not None and not self.prior_variance > 0:
            raise ValueError("prior_variance must be positive")


@dataclass(frozen=True, eq=False)
class ChannelEstimate:
    freq: np.ndarray  # (B, U, W)
    taps: np.ndarray  # (B, U, W), exactly zero beyond the support
    report: FbsReport


def gen_pilots(users: int, plan: TonePlan, es: float, rng: np.random.Generator, *, qpsk: bool = False) -> PilotBook:
    """Sign-randomised Hadamard training matrices with ``T T^H = U Es I``.

    When ``users`` is not a power of two a random unitary scaled to the
    same energy is drawn per tone instead. ``qpsk`` rotates every matrix by
    45 degrees so the entries lie on a QPSK grid.
    """
    w = plan.w
    mats = np.zeros((w, users, users), dtype=complex)
    is_pow2 = users & (users - 1) == 0
    if not is_pow2:
        log.info("U=%d is not a power of two; using random unitary pilots", users)
    base = hadamard(users) if is_pow2 else None
    for tone in plan.used:
        if is_pow2:
            rows = rng.choice([-1.0, 1.0], size=users)
            cols = rng.choice([-1.0, 1.0], size=users)
            m = rows[:, None] * base * cols[None, :] * np.sqrt(es)
        else:
            g = rng.standard_normal((users, users)) + 1j * rng.standard_normal((users, users))
            q, r = np.linalg.qr(g)
            q = q * (np.diag(r) / np.abs(np.diag(r)))
            m = q * np.sqrt(users * es)
        mats[tone] = m
    if qpsk:
        mats *= np.exp(1j * np.pi / 4)
    return PilotBook(mats, es, is_pow2)


class ExactTerm:
    """Exact quantized NLL of time-domain samples, summed."""

    def __init__(self, labels, spec: QuantizerSpec, n0: float):
        self.labels = labels
        self.spec = spec
        self.noise = NoiseModel(n0)
        self.capped = 0

    def __call__(self, z):
        nll, grad, capped = nll_exact_and_gradient(self.labels, z, self.noise, self.spec, warn=False)
        self.capped += capped
        return float(nll.sum()), grad


class GaussianTerm:
    """``sum |z - y|^2 / var`` with per-sample variance (Mismatch 1, unquantized)."""

    def __init__(self, y, var):
        self.y = np.asarray(y)
        self.inv = 1.0 / np.asarray(var, dtype=float)

    def __call__(self, z):
        r = z - self.y
        return float(np.sum((r.real**2 + r.imag**2) * self.inv)), 2.0 * r * self.inv


def likelihood_term(rx: RxFrame, kind: str, n0: float):
    """Smooth data term for ``kind`` on the samples in ``rx``.

    With infinite-precision samples (no labels) the exact and Mismatch-1
    likelihoods both reduce to the Gaussian one.
    """
    if kind == "unquantized" or rx.labels is None:
        if rx.unquantized is None:
            raise ValueError("unquantized samples are required for this receiver")
        return GaussianTerm(rx.unquantized, n0)
    if kind == "exact":
        return ExactTerm(rx.labels, rx.spec, n0)
    if kind == "mismatch1":
        y, gamma2 = mismatch1_observe(rx.labels, rx.spec)
        return GaussianTerm(y, n0 + gamma2)
    raise ValueError(f"no sample-domain likelihood for {kind!r}")


def observations(rx: RxFrame) -> np.ndarray:
    """Time-domain samples seen by the Mismatch-2 model: centroids or raw samples."""
    if rx.labels is None:
        return rx.unquantized
    return mismatch1_observe(rx.labels, rx.spec)[0]


def _finalize(x, support, report) -> ChannelEstimate:
    taps = freq_to_taps(x)
    taps[..., support:] = 0
    return ChannelEstimate(taps_to_freq(taps), taps, report)


def estimate(
    rx: RxFrame,
    pilots: PilotBook,
    cfg: SystemConfig,
    chest: ChestConfig,
    n0: Optional[float] = None,
) -> ChannelEstimate:
    """Estimate the B x U x W frequency response from the U training symbols in ``rx``."""
    n0 = cfg.n0 if n0 is None else n0
    b, u, w = cfg.antennas, cfg.users, cfg.subcarriers
    tw = pilots.matrices  # (W, U, T)
    if rx.t_total != tw.shape[2]:
        raise ValueError(f"expected {tw.shape[2]} training symbols, got {rx.t_total}")
    p = chest.support
    prior = None if chest.prior_variance is None else 1.0 / chest.prior_variance

    if chest.kind == "mismatch2":
        return _estimate_mq(rx, pilots, cfg, chest, prior)

    term = likelihood_term(rx, chest.kind, n0)
    tw_h = np.conj(tw).transpose(0, 2, 1)

    def smooth(h):
        z = idft((h.transpose(2, 0, 1) @ tw).transpose(1, 0, 2), axis=1)
        f, gz = term(z)
        g = (dft(gz, axis=1).transpose(1, 0, 2) @ tw_h).transpose(1, 2, 0)
        if prior is not None:
            f += prior * float(np.vdot(h, h).real)
            g = g + 2 * prior * h
        return f, g

    problem = FbsProblem(
        smooth,
        lambda v, tau: prox_time_support(v, p, tau),
        np.zeros((b, u, w), dtype=complex),
        tol=chest.tol,
        max_iter=chest.max_iter,
    )
    report = solve(problem)
    if not report.converged:
        log.debug("channel estimate did not converge (residual %.2e)", report.residual)
    return _finalize(report.x, p, report)


def _estimate_mq(rx, pilots, cfg, chest, prior) -> ChannelEstimate:
    # unmix each tone with T_w^{-1} = T_w^H / (U Es), then fit P taps per link
    yf = dft(observations(rx), axis=1).transpose(1, 0, 2)  # (W, B, T)
    tw_h = np.conj(pilots.matrices).transpose(0, 2, 1)
    obs = (yf @ tw_h).transpose(1, 2, 0) / (cfg.users * pilots.es)  # (B, U, W)
    mask = cfg.plan.mask("used").astype(float)
    obs = obs * mask

    def smooth(h):
        r = (h - obs) * mask
        f = float(np.vdot(r, r).real)
        g = 2 * r
        if prior is not None:
            f += prior * float(np.vdot(h, h).real)
            g = g + 2 * prior * h
        return f, g

    problem = FbsProblem(
        smooth,
        lambda v, tau: prox_time_support(v, chest.support, tau),
        np.zeros_like(obs),
        tol=chest.tol,
        max_iter=chest.max_iter,
    )
    report = solve(problem)
    return _finalize(report.x, chest.support, report)


def chest_mse(h_hat, h) -> float:
    h_hat = np.asarray(h_hat)
    h = np.asarray(h)
    if h_hat.shape != h.shape:
        raise ValueError(f"shape mismatch {h_hat.shape} vs {h.shape}")
    d = h_hat - h
    return float(np.vdot(d, d).real / d.size)
