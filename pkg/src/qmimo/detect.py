"""Per-symbol data detection, max-log LLRs and a brute-force MAP reference."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from qmimo.channel import RxFrame
from qmimo.chest import RECEIVERS, likelihood_term, observations
from qmimo.constellation import Constellation, qam
from qmimo.fbs import FbsProblem, FbsReport, prox_pin_pilots, solve
from qmimo.ofdm import TonePlan, dft, idft
from qmimo.quant import NoiseModel, QuantizerSpec, average_quant_variance, nll_exact_and_gradient

__all__ = [
    "Constellation",
    "qam",
    "DetectionResult",
    "detect",
    "llr_maxlog",
    "slice_hard",
    "brute_force_map",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class DetectionResult:
    """Soft estimates for one OFDM symbol, users x tones.

    ``gain`` is the per-stream MMSE bias (1 unless produced by the
    per-tone linear detector); ``rho`` is the post-equalization SINR used
    to scale LLRs.
    """

    s_hat: np.ndarray
    rho: np.ndarray
    gain: np.ndarray
    report: Optional[FbsReport] = None
    regularized: bool = False

    def unbiased(self) -> np.ndarray:
        return self.s_hat / self.gain


def _one_symbol(rx: RxFrame) -> RxFrame:
    if rx.t_total != 1:
        raise ValueError("detection runs on one OFDM symbol at a time")
    return rx


def detect(
    rx: RxFrame,
    h_hat,
    plan: TonePlan,
    pilots,
    n0: float,
    kind: str = "exact",
    *,
    es: float = 1.0,
    tol: float = 1e-6,
    max_iter: int = 500,
) -> DetectionResult:
    """Detect the users' symbols of one OFDM symbol.

    Parameters
    ----------
    rx : RxFrame
        Receive block with a single OFDM symbol (B x W x 1).
    h_hat : ndarray, shape (B, U, W)
        Channel estimate.
    plan : TonePlan
    pilots : ndarray, shape (U, n_pilot)
        Known symbols on the pilot tones.
    n0 : float
        Thermal noise variance.
    kind : {"exact", "mismatch1", "mismatch2", "unquantized"}
    """
    if kind not in RECEIVERS:
        raise ValueError(f"unknown receiver kind {kind!r}")
    _one_symbol(rx)
    h_hat = np.asarray(h_hat)
    if kind in ("mismatch2", "unquantized"):
        return _detect_per_tone(rx, h_hat, plan, pilots, n0, kind, es)
    return _detect_relaxed(rx, h_hat, plan, pilots, n0, kind, es, tol, max_iter)


def _detect_relaxed(rx, h_hat, plan, pilots, n0, kind, es, tol, max_iter):
    b, u, w = h_hat.shape
    term = likelihood_term(rx.symbols(0), kind, n0)
    hw = h_hat.transpose(2, 0, 1)  # (W, B, U)
    hw_h = np.conj(hw).transpose(0, 2, 1)
    data = plan.mask("data").astype(float)

    def smooth(s):
        z = idft((hw @ s.T[:, :, None])[:, :, 0].T, axis=1)
        f, gz = term(z)
        g = (hw_h @ dft(gz, axis=1).T[:, :, None])[:, :, 0].T
        f += float(np.sum((s.real**2 + s.imag**2) * data)) / es
        return f, g + 2.0 * s * data / es

    problem = FbsProblem(
        smooth,
        lambda v, tau: prox_pin_pilots(v, pilots, plan, tau),
        np.zeros((u, w), dtype=complex),
        tol=tol,
        max_iter=max_iter,
    )
    report = solve(problem)
    ones = np.ones((u, w))
    return DetectionResult(report.x, ones, ones.copy(), report)


def _detect_per_tone(rx, h_hat, plan, pilots, n0, kind, es):
    b, u, w = h_hat.shape
    if kind == "unquantized":
        if rx.unquantized is None:
            raise ValueError("unquantized samples are required for this receiver")
        y, gbar = rx.unquantized[:, :, 0], 0.0
    else:
        y = observations(rx)[:, :, 0]
        gbar = 0.0 if rx.labels is None else average_quant_variance(rx.labels, rx.spec)
    yf = dft(y, axis=1).T  # (W, B)
    hw = h_hat.transpose(2, 0, 1)
    hw_h = np.conj(hw).transpose(0, 2, 1)
    gram = hw_h @ hw
    reg = (n0 + gbar) / es
    a = gram + reg * np.eye(u)
    regularized = False
    floor = 1e-12 * np.maximum(np.trace(gram, axis1=1, axis2=2).real, 1e-300)
    bad = np.linalg.cond(a) > 1e12
    if np.any(bad):
        regularized = True
        log.warning("ill-conditioned per-tone system on %d tones; applying floor", int(bad.sum()))
        a[bad] += floor[bad, None, None] * np.eye(u)
    s = np.linalg.solve(a, (hw_h @ yf[:, :, None]))[:, :, 0].T  # (U, W)
    # per-stream bias mu = [(G + reg I)^{-1} G]_uu, unbiased SINR mu / (1 - mu)
    mu = np.real(np.diagonal(np.linalg.solve(a, gram), axis1=1, axis2=2)).T
    mu = np.clip(mu, 1e-12, 1 - 1e-12)
    rho = mu / (1.0 - mu)

    out = np.zeros((u, w), dtype=complex)
    gain = np.ones((u, w))
    sinr = np.ones((u, w))
    d = plan.data
    out[:, d] = s[:, d]
    gain[:, d] = mu[:, d]
    sinr[:, d] = rho[:, d]
    out[:, plan.pilot] = pilots
    return DetectionResult(out, sinr, gain, None, regularized)


def _distances(s_hat, points):
    s = np.asarray(s_hat)[..., None]
    d = s - points
    return d.real**2 + d.imag**2


def llr_maxlog(s_hat, rho, constellation: Constellation) -> np.ndarray:
    """Max-log LLRs, trailing axis = bit (MSB first); positive favours bit 1."""
    d = _distances(s_hat, constellation.points)
    out = np.empty(np.shape(s_hat) + (constellation.bits_per_symbol,))
    for bit in range(constellation.bits_per_symbol):
        zero, one = constellation.subsets(bit)
        out[..., bit] = d[..., zero].min(axis=-1) - d[..., one].min(axis=-1)
    return out * np.asarray(rho)[..., None]


def slice_hard(s_hat, constellation: Constellation) -> np.ndarray:
    """Nearest-point indices; ties go to the smaller index."""
    return np.argmin(_distances(s_hat, constellation.points), axis=-1)


def brute_force_map(
    rx: RxFrame,
    h_hat,
    constellation: Constellation,
    spec: QuantizerSpec,
    n0: float,
    plan: TonePlan,
    pilots=None,
    *,
    order=None,
    chunk: int = 4096,
) -> np.ndarray:
    """Exhaustive maximum-likelihood symbol vector for one OFDM symbol.

    Returns constellation indices of shape (U, |data|). ``order`` permutes
    the search order of the alphabet (the result does not depend on it
    unless there are exact ties).
    """
    _one_symbol(rx)
    h_hat = np.asarray(h_hat)
    b, u, w = h_hat.shape
    n_data = plan.data.size
    m = constellation.points.size
    if float(m) ** (u * n_data) > 1e6:
        raise ValueError("instance too large for exhaustive search")
    order = np.arange(m) if order is None else np.asarray(order)
    noise = NoiseModel(n0)
    labels = rx.symbols(0).labels
    hw = h_hat.transpose(2, 0, 1)

    best_val, best = np.inf, None
    combos = itertools.product(order, repeat=u * n_data)
    while True:
        batch = np.array(list(itertools.islice(combos, chunk)))
        if batch.size == 0:
            break
        idx = batch.reshape(-1, u, n_data)
        s = np.zeros((idx.shape[0], u, w), dtype=complex)
        s[:, :, plan.data] = constellation.points[idx]
        if pilots is not None and plan.pilot.size:
            s[:, :, plan.pilot] = pilots
        z = idft(np.einsum("wbu,nuw->nbw", hw, s), axis=2)
        lab = type(labels)(np.broadcast_to(labels.re, z.shape), np.broadcast_to(labels.im, z.shape))
        nll, _, _ = nll_exact_and_gradient(lab, z, noise, spec, warn=False)
        tot = nll.reshape(nll.shape[0], -1).sum(axis=1)
        k = int(np.argmin(tot))
        if tot[k] < best_val:
            best_val, best = tot[k], idx[k]
    return best
