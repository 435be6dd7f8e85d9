"""Scalar ADC quantizer: Lloyd-Max design, exact likelihood, mismatched models.

Labels are 1-based, matching the bin convention ``b_m <= x < b_{m+1}``
where ``b_1 = -inf`` and ``b_{Q+1} = +inf``. A complex sample is described
by a pair of labels, one per real dimension.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.stats import truncnorm

from qmimo import _kernels

__all__ = [
    "QuantizerDesignError",
    "TailUnderflowWarning",
    "QuantizerSpec",
    "QuantLabel",
    "NoiseModel",
    "design_lloyd_max",
    "gaussian_moments",
    "uniform_moments",
    "quantize",
    "nll_exact",
    "nll_gradient_exact",
    "nll_exact_and_gradient",
    "mismatch1_observe",
    "nll_mismatch1",
    "nll_gradient_mismatch1",
    "average_quant_variance",
]

MAX_BITS = 12


class QuantizerDesignError(ValueError):
    pass


class TailUnderflowWarning(RuntimeWarning):
    """A bin probability underflowed and the capped tail fallback was used."""


@dataclass(frozen=True, eq=False)
class QuantizerSpec:
    """Per-dimension quantizer shared by the real and imaginary rails.

    Attributes
    ----------
    bits : int
        Bits per real dimension; ``Q = 2**bits`` bins.
    boundaries : ndarray, shape (Q+1,)
        Bin boundaries with infinite outer entries.
    centroids : ndarray, shape (Q,)
        Reconstruction value of each bin.
    variances : ndarray, shape (Q,)
        Conditional variance of the unquantized value within each bin.
    distortion : list of float
        MSE after each Lloyd iteration (empty if not designed by Lloyd).
    """

    bits: int
    boundaries: np.ndarray
    centroids: np.ndarray
    variances: np.ndarray
    distortion: list = field(default_factory=list)

    def __post_init__(self):
        q = 2**self.bits
        b = np.asarray(self.boundaries, dtype=float)
        if b.shape != (q + 1,):
            raise ValueError(f"expected {q + 1} boundaries, got {b.shape}")
        if not (b[0] == -np.inf and b[-1] == np.inf):
            raise ValueError("outer boundaries must be -inf and +inf")
        if np.any(np.diff(b) <= 0):
            raise ValueError("boundaries must be strictly increasing")
        if np.shape(self.centroids) != (q,) or np.shape(self.variances) != (q,):
            raise ValueError("centroids/variances must have one entry per bin")
        if np.any(np.asarray(self.variances) < 0):
            raise ValueError("variances must be non-negative")
        object.__setattr__(self, "boundaries", b)
        object.__setattr__(self, "centroids", np.asarray(self.centroids, dtype=float))
        object.__setattr__(self, "variances", np.asarray(self.variances, dtype=float))

    @property
    def levels(self) -> int:
        return 2**self.bits

    @property
    def thresholds(self) -> np.ndarray:
        """The finite boundaries ``b_2 .. b_Q``."""
        return self.boundaries[1:-1]

    def with_moments(self, centroids, variances) -> "QuantizerSpec":
        return QuantizerSpec(self.bits, self.boundaries, centroids, variances, list(self.distortion))


class QuantLabel(NamedTuple):
    """Quantization labels of complex samples; ``re``/``im`` are int arrays in 1..Q."""

    re: np.ndarray
    im: np.ndarray


@dataclass(frozen=True)
class NoiseModel:
    n0: float

    def __post_init__(self):
        if not self.n0 > 0:
            raise ValueError("n0 must be positive")

    @property
    def sigma(self) -> float:
        return float(np.sqrt(self.n0 / 2.0))


def _bin_stats(x_sorted, csum, csum2, bounds):
    edges = np.concatenate(([0], np.searchsorted(x_sorted, bounds, side="left"), [x_sorted.size]))
    counts = np.diff(edges)
    s1 = csum[edges[1:]] - csum[edges[:-1]]
    s2 = csum2[edges[1:]] - csum2[edges[:-1]]
    return counts, s1, s2


def design_lloyd_max(density_samples, bits: int, *, max_iter: int = 1000, tol: float = 1e-10) -> QuantizerSpec:
    """Design a ``bits``-bit scalar quantizer with the Lloyd algorithm.

    Alternates midpoint boundaries and conditional-mean centroids on the
    empirical density of ``density_samples`` until the largest centroid move
    falls below ``tol`` times the sample spread. The returned spec carries
    the empirical conditional means and variances of every bin, and the MSE
    after each iteration in ``distortion``.
    """
    if not 1 <= bits <= MAX_BITS:
        raise ValueError(f"bits must be in 1..{MAX_BITS}")
    x = np.sort(np.asarray(density_samples, dtype=float).ravel())
    levels = 2**bits
    if x.size < 10 * levels:
        raise ValueError(f"need at least {10 * levels} samples for {bits} bits, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    spread = x[-1] - x[0]
    if spread <= 0:
        raise QuantizerDesignError("degenerate density")

    csum = np.concatenate(([0.0], np.cumsum(x)))
    csum2 = np.concatenate(([0.0], np.cumsum(x * x)))
    centroids = np.quantile(x, (np.arange(levels) + 0.5) / levels)
    if np.any(np.diff(centroids) <= 0):
        centroids = np.linspace(x[0], x[-1], levels + 2)[1:-1]

    history = []
    for _ in range(max_iter):
        bounds = 0.5 * (centroids[1:] + centroids[:-1])
        counts, s1, s2 = _bin_stats(x, csum, csum2, bounds)
        # an empty bin keeps its centroid, which still lies inside the bin
        new = np.where(counts > 0, s1 / np.maximum(counts, 1), centroids)
        history.append(float(np.sum(s2 - 2 * new * s1 + counts * new**2) / x.size))
        moved = np.max(np.abs(new - centroids))
        centroids = new
        if moved <= tol * spread:
            break

    bounds = 0.5 * (centroids[1:] + centroids[:-1])
    counts, s1, s2 = _bin_stats(x, csum, csum2, bounds)
    safe = np.maximum(counts, 1)
    variances = np.where(counts > 0, np.maximum(s2 / safe - (s1 / safe) ** 2, 0.0), 0.0)
    boundaries = np.concatenate(([-np.inf], bounds, [np.inf]))
    return QuantizerSpec(bits, boundaries, centroids, variances, history)


def gaussian_moments(spec: QuantizerSpec, variance: float) -> QuantizerSpec:
    """Centroids and variances of each bin under a zero-mean Gaussian density."""
    scale = float(np.sqrt(variance))
    lo = spec.boundaries[:-1] / scale
    hi = spec.boundaries[1:] / scale
    mean, var = truncnorm.stats(lo, hi, moments="mv")
    return spec.with_moments(np.asarray(mean) * scale, np.asarray(var) * variance)


def uniform_moments(spec: QuantizerSpec) -> QuantizerSpec:
    """Uniform-density approximation within each bin.

    Outer bins are unbounded; they borrow the width of their finite
    neighbour.
    """
    if spec.bits < 2:
        raise ValueError("uniform approximation needs at least one finite bin")
    b = spec.boundaries.copy()
    b[0] = b[1] - (b[2] - b[1])
    b[-1] = b[-2] + (b[-2] - b[-3])
    width = np.diff(b)
    return spec.with_moments(0.5 * (b[:-1] + b[1:]), width**2 / 12.0)


def quantize(sample, spec: QuantizerSpec) -> QuantLabel:
    """Map complex samples onto their per-dimension labels (1..Q)."""
    s = np.asarray(sample)
    re = np.searchsorted(spec.thresholds, s.real, side="right") + 1
    im = np.searchsorted(spec.thresholds, s.imag, side="right") + 1
    return QuantLabel(re, im)


def _per_dim(values, labels, spec, sigma):
    v = np.ascontiguousarray(values, dtype=float).ravel()
    lab = np.ascontiguousarray(labels, dtype=np.int64).ravel()
    nll = np.empty_like(v)
    grad = np.empty_like(v)
    capped = _kernels.exact_nll_grad(v, lab, spec.boundaries, sigma, nll, grad)
    return nll, grad, capped


def nll_exact_and_gradient(label: QuantLabel, z, noise: NoiseModel, spec: QuantizerSpec, *, warn: bool = True):
    """Element-wise exact NLL ``-log p(q|z)`` and its gradient.

    The gradient is returned as ``d/dRe + i d/dIm``. Returns
    ``(nll, grad, capped)`` where ``capped`` counts rails whose bin
    probability underflowed; those use an NLL of 700 and the asymptotic
    gradient ``(z - nearest boundary) / sigma**2``.
    """
    z = np.asarray(z, dtype=complex)
    nr, gr, cr = _per_dim(z.real, np.broadcast_to(label.re, z.shape), spec, noise.sigma)
    ni, gi, ci = _per_dim(z.imag, np.broadcast_to(label.im, z.shape), spec, noise.sigma)
    capped = cr + ci
    if capped and warn:
        warnings.warn(f"{capped} bin probabilities underflowed; capped NLL used", TailUnderflowWarning, stacklevel=2)
    shape = z.shape
    return (nr + ni).reshape(shape), (gr + 1j * gi).reshape(shape), capped


def nll_exact(label: QuantLabel, z, noise: NoiseModel, spec: QuantizerSpec):
    return nll_exact_and_gradient(label, z, noise, spec)[0]


def nll_gradient_exact(label: QuantLabel, z, noise: NoiseModel, spec: QuantizerSpec):
    return nll_exact_and_gradient(label, z, noise, spec)[1]


def mismatch1_observe(label: QuantLabel, spec: QuantizerSpec):
    """Reconstruction ``y(q)`` and complex quantization variance ``gamma2(q)``."""
    re = np.asarray(label.re) - 1
    im = np.asarray(label.im) - 1
    y = spec.centroids[re] + 1j * spec.centroids[im]
    gamma2 = spec.variances[re] + spec.variances[im]
    return y, gamma2


def nll_mismatch1(label: QuantLabel, z, noise: NoiseModel, spec: QuantizerSpec):
    y, gamma2 = mismatch1_observe(label, spec)
    total = noise.n0 + gamma2
    return np.abs(np.asarray(z) - y) ** 2 / total + np.log(np.pi * total)


def nll_gradient_mismatch1(label: QuantLabel, z, noise: NoiseModel, spec: QuantizerSpec):
    # exact derivative of nll_mismatch1 per rail: 2 (z - y) / (N0 + gamma2)
    y, gamma2 = mismatch1_observe(label, spec)
    return 2.0 * (np.asarray(z) - y) / (noise.n0 + gamma2)


def average_quant_variance(labels: QuantLabel, spec: QuantizerSpec) -> float:
    if np.size(labels.re) == 0:
        raise ValueError("empty label sequence")
    _, gamma2 = mismatch1_observe(labels, spec)
    return float(np.mean(gamma2))
