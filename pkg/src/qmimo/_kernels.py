"""Compiled inner loops for the exact quantized likelihood and the Viterbi recursion."""

import math

import numba
import numpy as np

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_INV_SQRT2 = 1.0 / math.sqrt(2.0)

# Value substituted for the per-dimension NLL when the bin probability underflows.
NLL_CAP = 700.0


@numba.njit(cache=True, fastmath=False)
def log_ndtr(x):
    """log of the standard normal CDF, accurate far into both tails."""
    if x > 5.0:
        return math.log1p(-0.5 * math.erfc(x * _INV_SQRT2))
    if x > -30.0:
        return math.log(0.5 * math.erfc(-x * _INV_SQRT2))
    # asymptotic series of the Mills ratio; relative error below 1e-14 here
    x2 = x * x
    inv = 1.0 / x2
    series = 1.0 - inv * (1.0 - 3.0 * inv * (1.0 - 5.0 * inv * (1.0 - 7.0 * inv * (1.0 - 9.0 * inv))))
    return -0.5 * x2 - math.log(-x) - _LOG_SQRT_2PI + math.log(series)


@numba.njit(cache=True, fastmath=False)
def _ndtr(x):
    return 0.5 * math.erfc(-x * _INV_SQRT2)


@numba.njit(cache=True, fastmath=False)
def _log_bin_prob(a, b):
    """log(Phi(b) - Phi(a)) for a < b, either end possibly infinite."""
    if a >= 0.0:
        la = log_ndtr(-a)
        if b == math.inf:
            return la
        lb = log_ndtr(-b)
        return la + math.log1p(-math.exp(lb - la))
    if b <= 0.0:
        lb = log_ndtr(b)
        if a == -math.inf:
            return lb
        la = log_ndtr(a)
        return lb + math.log1p(-math.exp(la - lb))
    lo = 0.0 if a == -math.inf else _ndtr(a)
    hi = 0.0 if b == math.inf else _ndtr(-b)
    return math.log1p(-(lo + hi))


@numba.njit(cache=True, fastmath=False)
def _bin_logp(a, b):
    """log(Phi(b) - Phi(a)); direct differences unless both ends sit in a deep tail."""
    if a >= 0.0:
        qa = 0.5 * math.erfc(a * _INV_SQRT2)
        if qa > 1e-280:
            qb = 0.0 if b == math.inf else 0.5 * math.erfc(b * _INV_SQRT2)
            return math.log(qa - qb)
        return _log_bin_prob(a, b)
    if b <= 0.0:
        pb = 0.5 * math.erfc(-b * _INV_SQRT2)
        if pb > 1e-280:
            pa = 0.0 if a == -math.inf else 0.5 * math.erfc(-a * _INV_SQRT2)
            return math.log(pb - pa)
        return _log_bin_prob(a, b)
    lo = 0.0 if a == -math.inf else _ndtr(a)
    hi = 0.0 if b == math.inf else _ndtr(-b)
    return math.log1p(-(lo + hi))


@numba.njit(cache=True, fastmath=False)
def exact_nll_grad(z, labels, boundaries, sigma, nll, grad):
    """Per-dimension NLL and its derivative for real samples ``z``.

    ``labels`` are 1-based bin indices into ``boundaries`` (length Q+1,
    outer entries infinite). Returns the number of entries where the bin
    probability underflowed and the capped fallback was used.
    """
    capped = 0
    inv_sigma = 1.0 / sigma
    for k in range(z.size):
        lower = boundaries[labels[k] - 1]
        upper = boundaries[labels[k]]
        a = (lower - z[k]) * inv_sigma
        b = (upper - z[k]) * inv_sigma
        logp = _bin_logp(a, b)
        if not (logp > -math.inf):
            capped += 1
            nll[k] = NLL_CAP
            if z[k] < lower:
                grad[k] = (z[k] - lower) * inv_sigma * inv_sigma
            else:
                grad[k] = (z[k] - upper) * inv_sigma * inv_sigma
            continue
        nll[k] = -logp
        g = 0.0
        if upper != math.inf:
            g += math.exp(-0.5 * b * b - _LOG_SQRT_2PI - logp)
        if lower != -math.inf:
            g -= math.exp(-0.5 * a * a - _LOG_SQRT_2PI - logp)
        grad[k] = g * inv_sigma
    return capped


@numba.njit(cache=True)
def viterbi_maxlog(llr, out_bits, next_out):
    """Max-log Viterbi over a terminated rate-1/n trellis.

    ``llr`` has shape (steps, n) with positive values favouring a coded 1;
    ``next_out[state, bit, j]`` is the j-th coded bit leaving ``state`` on
    input ``bit``. States hold the last ``m`` inputs, newest in the MSB, so
    the successor of ``s`` on input ``b`` is ``(b << (m-1)) | (s >> 1)``.
    """
    steps, n = llr.shape
    n_states = next_out.shape[0]
    half = n_states // 2
    metric = np.full(n_states, -np.inf)
    metric[0] = 0.0
    new = np.empty(n_states)
    decision = np.empty((steps, n_states), dtype=np.uint8)
    for t in range(steps):
        for ns in range(n_states):
            bit = ns // half
            best = -np.inf
            arg = 0
            for x in range(2):
                ps = ((ns % half) << 1) | x
                m = metric[ps]
                if m == -np.inf:
                    continue
                for j in range(n):
                    if next_out[ps, bit, j]:
                        m += llr[t, j]
                    else:
                        m -= llr[t, j]
                if m > best:
                    best = m
                    arg = x
            new[ns] = best
            decision[t, ns] = arg
        for s in range(n_states):
            metric[s] = new[s]
    state = 0
    for t in range(steps - 1, -1, -1):
        out_bits[t] = state // half
        state = ((state % half) << 1) | decision[t, state]
    return metric[0]
