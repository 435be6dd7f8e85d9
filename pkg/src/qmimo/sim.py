"""Monte-Carlo packet-error-rate harness, SNR operating-point search and CSV output."""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from qmimo.channel import (
    SNR_DEFINITION,
    SystemConfig,
    design_quantizer,
    draw_channel,
    snr_to_n0,
    transmit,
    trial_rng,
)
from qmimo.chest import ChestConfig, estimate, gen_pilots
from qmimo.constellation import qam
from qmimo.detect import detect, llr_maxlog
from qmimo.phycode import CodeConfig, deinterleave, encode, interleave, map_bits, packet_plan, viterbi_soft

__all__ = [
    "RECEIVER_NAMES",
    "PerResult",
    "OperatingPoint",
    "BracketError",
    "run_trial",
    "run_per_point",
    "bisect_operating_point",
    "snr_operating_point",
    "run_tradeoff",
    "search_operating_point",
    "CSV_COLUMNS",
    "read_csv",
    "csv_text",
    "write_csv",
    "csv_row",
    "load_config",
    "parse_config",
]

log = logging.getLogger(__name__)

# external receiver name -> internal likelihood kind
RECEIVER_NAMES = {
    "quantizer": "exact",
    "mismatch1": "mismatch1",
    "mismatch2": "mismatch2",
    "unquantized": "unquantized",
}

TARGET_PER = 0.01
SNR_STEP = 0.25

# rng stream tags
_DESIGN, _TRIAL = 1, 2
_CHANNEL, _PILOT, _BITS, _NOISE = 0, 1, 2, 3


def _kind(receiver: str) -> str:
    if receiver in RECEIVER_NAMES:
        return RECEIVER_NAMES[receiver]
    if receiver in RECEIVER_NAMES.values():
        return receiver
    raise ValueError(f"unknown receiver {receiver!r}; choose from {sorted(RECEIVER_NAMES)}")


def _external(receiver: str) -> str:
    k = _kind(receiver)
    return next(name for name, v in RECEIVER_NAMES.items() if v == k)


@dataclass
class PerResult:
    receiver: str
    cfg: SystemConfig
    snr_db: float
    trials: int
    errors: np.ndarray  # per-user packet error counts
    wall_time: float = 0.0
    unconverged: int = 0
    # trials requested; ``trials`` is lower when the run stopped early
    requested: Optional[int] = None

    @property
    def packet_errors(self) -> int:
        return int(np.sum(self.errors))

    @property
    def per(self) -> float:
        return self.packet_errors / float(self.trials * self.cfg.users)

    @property
    def stderr(self) -> float:
        n = self.trials * self.cfg.users
        return math.sqrt(self.per * (1 - self.per) / n)

    @property
    def stopped_early(self) -> bool:
        return self.requested is not None and self.trials < self.requested


@dataclass
class OperatingPoint:
    """1% PER crossing bracketed by a failing and a passing SNR."""

    receiver: str
    qbits: Optional[int]
    snr_db: float
    lower: PerResult
    upper: PerResult
    widened: bool = False
    history: list = field(default_factory=list)


class BracketError(ValueError):
    pass


@dataclass(frozen=True)
class _Job:
    cfg: SystemConfig
    kind: str
    snr_db: float
    code: CodeConfig
    seed: int
    trial: int


def _spec_for(cfg: SystemConfig, snr_db: float, seed: int):
    key = (cfg, round(snr_db * 1000), seed)
    spec = _SPEC_CACHE.get(key)
    if spec is None and cfg.qbits is not None:
        n0 = snr_to_n0(cfg, snr_db)
        spec = design_quantizer(cfg.replace(n0=n0), trial_rng(seed, _DESIGN, cfg.qbits, key[1]))
        _SPEC_CACHE[key] = spec
    return spec


_SPEC_CACHE: dict = {}


def run_trial(cfg: SystemConfig, receiver: str, snr_db: float, trial: int, *, seed: Optional[int] = None, code: CodeConfig = CodeConfig()):
    """One packet per user. Returns (per-user error flags, solves that hit the iteration cap).

    Random streams depend only on (seed, trial), so every receiver and SNR
    sees the same channel, pilots, bits and normalized noise.
    """
    kind = _kind(receiver)
    seed = cfg.seed if seed is None else seed
    n0 = snr_to_n0(cfg, snr_db)
    c = cfg.replace(n0=n0)
    spec = _spec_for(cfg, snr_db, seed)
    plan = c.plan
    u, w, d = c.users, c.subcarriers, c.data_symbols
    const = qam(16, c.es)

    channel = draw_channel(c, trial_rng(seed, _TRIAL, trial, _CHANNEL))
    prng = trial_rng(seed, _TRIAL, trial, _PILOT)
    pilots = gen_pilots(u, plan, c.es, prng)
    data_pilots = np.sqrt(c.es) * prng.choice([-1.0, 1.0], size=(u, plan.pilot.size))

    brng = trial_rng(seed, _TRIAL, trial, _BITS)
    packets, info = [], []
    frames = np.zeros((w, u, u + d), dtype=complex)
    frames[:, :, :u] = pilots.matrices
    for k in range(u):
        pk = packet_plan(plan, d, brng, code)
        bits = brng.integers(0, 2, pk.info_bits)
        sym = map_bits(interleave(encode(bits, pk), pk.perm), const).reshape(d, plan.data.size)
        frames[plan.data, k, u:] = sym.T
        frames[plan.pilot, k, u:] = data_pilots[k][:, None]
        packets.append(pk)
        info.append(bits)

    keep = kind == "unquantized"
    rx = transmit(frames, channel, c, None if keep else spec, trial_rng(seed, _TRIAL, trial, _NOISE), keep_unquantized=keep)

    unconverged = 0
    est = estimate(rx.symbols(slice(0, u)), pilots, c, ChestConfig(kind=kind, support=c.cp_support))
    unconverged += not est.report.converged
    llrs = np.empty((u, d, plan.data.size, const.bits_per_symbol))
    for t in range(d):
        res = detect(rx.symbols(slice(u + t, u + t + 1)), est.freq, plan, data_pilots, n0, kind, es=c.es)
        if res.report is not None:
            unconverged += not res.report.converged
        s = res.unbiased()[:, plan.data]
        llrs[:, t] = llr_maxlog(s, res.rho[:, plan.data], const)

    errors = np.zeros(u, dtype=np.int64)
    for k in range(u):
        dec = viterbi_soft(deinterleave(llrs[k].ravel(), packets[k].perm), packets[k])
        errors[k] = int(np.any(dec != info[k]))
    return errors, unconverged


def _run_job(job: _Job):
    return run_trial(job.cfg, job.kind, job.snr_db, job.trial, seed=job.seed, code=job.code)


def run_per_point(
    cfg: SystemConfig,
    receiver: str,
    snr_db: float,
    trials: int,
    seed: Optional[int] = None,
    *,
    code: CodeConfig = CodeConfig(),
    stop_above: Optional[int] = None,
    workers: int = 1,
) -> PerResult:
    """Packet error rate at one SNR over ``trials`` independent packets per user.

    ``stop_above`` ends the run as soon as the total packet-error count
    exceeds it; the result then covers only the trials actually run.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    seed = cfg.seed if seed is None else seed
    kind = _kind(receiver)
    t0 = time.perf_counter()
    errors = np.zeros(cfg.users, dtype=np.int64)
    unconverged = 0
    done = 0
    jobs = (_Job(cfg, kind, snr_db, code, seed, i) for i in range(trials))
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    # results are consumed in trial order, so an early stop lands on the same trial either way
    outcomes = pool.map(_run_job, jobs, chunksize=1) if pool else map(_run_job, jobs)
    try:
        for e, nc in outcomes:
            errors += e
            unconverged += nc
            done += 1
            if stop_above is not None and errors.sum() > stop_above:
                break
    finally:
        if pool:
            pool.shutdown(cancel_futures=True)
    if unconverged:
        log.warning("%s at %.2f dB: %d solves hit the iteration cap", receiver, snr_db, unconverged)
    return PerResult(_external(receiver), cfg, float(snr_db), done, errors, time.perf_counter() - t0, unconverged, trials)


def _on_grid(x: float) -> float:
    return round(x / SNR_STEP) * SNR_STEP


def _per(r) -> float:
    return float(getattr(r, "per", r))


def _se(r) -> float:
    return float(getattr(r, "stderr", 0.0))


def bisect_operating_point(
    per_at: Callable[[float], "PerResult | float"],
    snr_lo: float,
    snr_hi: float,
    *,
    target: float = TARGET_PER,
    step: float = SNR_STEP,
    max_widen: int = 4,
):
    """Bisect for the smallest grid SNR whose PER is at most ``target``.

    ``per_at`` returns either a PER or an object with ``.per`` and
    ``.stderr``. PER is assumed non-increasing in SNR. If the two bracket
    measurements are not separated by two combined standard errors, the
    failing end is moved down (up to ``max_widen`` grid steps) and a
    warning is issued. Returns ``(snr, (lo, r_lo), (hi, r_hi), widened,
    history)``; ``snr == hi`` is the operating point.
    """
    cache = {}

    def evaluate(s):
        s = round(s / step) * step
        if s not in cache:
            cache[s] = per_at(s)
        return cache[s]

    lo, hi = round(snr_lo / step) * step, round(snr_hi / step) * step
    if not lo < hi:
        raise BracketError("bracket invalid: need snr_lo < snr_hi")
    r_lo, r_hi = evaluate(lo), evaluate(hi)
    if not _per(r_lo) > target:
        raise BracketError(f"bracket invalid: PER({lo:g} dB) = {_per(r_lo):.3g} is not above {target:g}")
    if not _per(r_hi) <= target:
        raise BracketError(f"bracket invalid: PER({hi:g} dB) = {_per(r_hi):.3g} is not at most {target:g}")

    while hi - lo > step * 1.5:
        mid = round((lo + hi) / 2 / step) * step
        r = evaluate(mid)
        if _per(r) > target:
            lo, r_lo = mid, r
        else:
            hi, r_hi = mid, r

    widened = False
    for _ in range(max_widen):
        gap = _per(r_lo) - _per(r_hi)
        if gap >= 2.0 * math.hypot(_se(r_lo), _se(r_hi)):
            break
        widened = True
        r = evaluate(lo - step)
        if not _per(r) > target:
            warnings.warn(f"non-monotone PER: {lo - step:g} dB passes below a failing {lo:g} dB", RuntimeWarning, stacklevel=2)
            break
        lo, r_lo = lo - step, r
    if widened:
        warnings.warn(f"bracket around {hi:g} dB widened to [{lo:g}, {hi:g}] dB", RuntimeWarning, stacklevel=2)
    history = sorted((s, _per(r)) for s, r in cache.items())
    return hi, (lo, r_lo), (hi, r_hi), widened, history


def snr_operating_point(
    cfg: SystemConfig,
    receiver: str,
    snr_lo: float,
    snr_hi: float,
    trials_per_point: int,
    *,
    seed: Optional[int] = None,
    code: CodeConfig = CodeConfig(),
    early_stop: bool = True,
    workers: int = 1,
) -> OperatingPoint:
    """Minimum SNR on the 0.25 dB grid with PER <= 1%.

    With ``early_stop`` a point stops as soon as its error count already
    exceeds 1% of the requested packets, which cannot change the
    pass/fail decision.
    """
    limit = int(math.floor(TARGET_PER * trials_per_point * cfg.users)) if early_stop else None

    def per_at(s):
        return run_per_point(cfg, receiver, s, trials_per_point, seed, code=code, stop_above=limit, workers=workers)

    snr, (lo, r_lo), (hi, r_hi), widened, history = bisect_operating_point(per_at, snr_lo, snr_hi)
    return OperatingPoint(_external(receiver), cfg.qbits, snr, r_lo, r_hi, widened, history)


def search_operating_point(
    cfg: SystemConfig,
    receiver: str,
    trials_per_point: int,
    *,
    start: float = 10.0,
    seed: Optional[int] = None,
    code: CodeConfig = CodeConfig(),
    early_stop: bool = True,
    workers: int = 1,
    snr_range: tuple = (-20.0, 60.0),
) -> OperatingPoint:
    """Operating point without a known bracket.

    Starts at ``start``, expands in steps of 0.25, 0.5, 1, ... dB in the
    direction of the crossing until the 1% level is bracketed, then bisects.
    A good ``start`` costs two or three PER evaluations. Raises
    ``BracketError`` if the crossing is not inside ``snr_range``.
    """
    s_min, s_max = snr_range
    limit = int(math.floor(TARGET_PER * trials_per_point * cfg.users)) if early_stop else None
    cache = {}

    def per_at(s):
        s = _on_grid(s)
        if s not in cache:
            cache[s] = run_per_point(cfg, receiver, s, trials_per_point, seed, code=code, stop_above=limit, workers=workers)
        return cache[s]

    s = _on_grid(min(max(start, s_min), s_max))
    step = SNR_STEP
    if per_at(s).per > TARGET_PER:
        lo, hi = s, min(s + step, s_max)
        while per_at(hi).per > TARGET_PER:
            if hi >= s_max:
                raise BracketError(f"PER stays above 1% up to {s_max:g} dB")
            step *= 2
            lo, hi = hi, min(hi + step, s_max)
    else:
        lo, hi = max(s - step, s_min), s
        while not per_at(lo).per > TARGET_PER:
            if lo <= s_min:
                raise BracketError(f"PER stays at or below 1% down to {s_min:g} dB")
            step *= 2
            lo, hi = max(lo - step, s_min), lo
    snr, (lo, r_lo), (hi, r_hi), widened, history = bisect_operating_point(per_at, lo, hi)
    return OperatingPoint(_external(receiver), cfg.qbits, snr, r_lo, r_hi, widened, history)


CSV_COLUMNS = ("receiver", "B", "U", "W", "L", "P", "D", "qbits", "snr_db", "trials", "packet_errors", "per", "stderr", "seed")


def _fmt(v) -> str:
    if v is None:
        return "inf"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".6g")
    return str(v)


def csv_row(result: PerResult, snr_db: Optional[float] = None) -> list:
    c = result.cfg
    snr = result.snr_db if snr_db is None else snr_db
    vals = [result.receiver, c.antennas, c.users, c.subcarriers, c.taps, c.cp_support, c.data_symbols,
            c.qbits, float(snr), result.trials, result.packet_errors, result.per, result.stderr, c.seed]
    return [_fmt(v) for v in vals]


def csv_text(rows: Iterable[Sequence[str]], *, header: bool = True) -> str:
    buf = io.StringIO()
    if header:
        buf.write(f"# {SNR_DEFINITION}\n")
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def write_csv(path, rows: Iterable[Sequence[str]], *, append: bool = False) -> None:
    """Write ``rows`` under the mandatory header (header only when starting a new file)."""
    new = not append or not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a" if append else "w", newline="") as fh:
        fh.write(csv_text(rows, header=new))


def read_csv(path) -> list:
    """Parse a results CSV back into dicts with numeric fields converted."""
    ints = {"B", "U", "W", "L", "P", "D", "trials", "packet_errors", "seed"}
    floats = {"snr_db", "per", "stderr"}
    out = []
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV header {reader.fieldnames}")
    for row in reader:
        rec = {}
        for k, v in row.items():
            if k in ints:
                rec[k] = int(v)
            elif k in floats:
                rec[k] = float(v)
            elif k == "qbits":
                rec[k] = None if v == "inf" else int(v)
            else:
                rec[k] = v
        out.append(rec)
    return out


def _bits_order(q):
    return -1e9 if q is None else -q


def run_tradeoff(
    cfg: SystemConfig,
    receivers: Sequence[str],
    qbits_list: Sequence[Optional[int]],
    out_path,
    *,
    trials_per_point: int = 1000,
    start: float = 10.0,
    baseline: bool = True,
    workers: int = 1,
    code: CodeConfig = CodeConfig(),
    progress: Optional[Callable[[OperatingPoint], None]] = None,
    snr_range: tuple = (-20.0, 60.0),
) -> list:
    """Operating point per (receiver, qbits), one CSV row each.

    The infinite-precision baseline (receiver ``unquantized``) is computed
    first when ``baseline`` is set and ``qbits_list`` is not empty. For each
    receiver the bit widths are visited from finest to coarsest and every
    search starts at the previous operating point, since coarser
    quantization can only need more SNR. Rows report the passing end of the
    bracket and are appended as soon as each point is known. A receiver
    that cannot reach 1% PER inside ``snr_range`` gets ``snr_db = inf`` and
    the PER measured at the top of the range.
    """
    points = []
    write_csv(out_path, [])
    if not len(qbits_list):
        return points
    guess = start
    if baseline:
        op = search_operating_point(cfg.replace(qbits=None), "unquantized", trials_per_point, start=start, workers=workers,
                                    code=code, snr_range=snr_range)
        guess = op.snr_db
        points.append(op)
        write_csv(out_path, [csv_row(op.upper)], append=True)
        if progress is not None:
            progress(op)
    ordered = sorted(qbits_list, key=_bits_order)
    for receiver in receivers:
        s0 = guess
        for q in ordered:
            c = cfg.replace(qbits=q)
            try:
                op = search_operating_point(c, receiver, trials_per_point, start=s0, workers=workers, code=code, snr_range=snr_range)
            except BracketError as exc:
                # an error floor: record the best measured PER at an infinite operating point
                warnings.warn(f"{receiver} qbits={q}: {exc}", RuntimeWarning, stacklevel=2)
                r = run_per_point(c, receiver, snr_range[1], trials_per_point, code=code, workers=workers)
                op = OperatingPoint(_external(receiver), q, math.inf, r, r)
                points.append(op)
                write_csv(out_path, [csv_row(r, math.inf)], append=True)
                if progress is not None:
                    progress(op)
                continue
            s0 = op.snr_db
            points.append(op)
            write_csv(out_path, [csv_row(op.upper)], append=True)
            if progress is not None:
                progress(op)
    return points


# -- configuration files ------------------------------------------------------

_CFG_KEYS = {
    "users": "users", "U": "users",
    "antennas": "antennas", "B": "antennas",
    "subcarriers": "subcarriers", "W": "subcarriers",
    "taps": "taps", "L": "taps",
    "cp_support": "cp_support", "P": "cp_support",
    "qbits": "qbits",
    "es": "es",
    "data_symbols": "data_symbols", "D": "data_symbols",
    "seed": "seed",
}
_RUN_KEYS = {"receivers", "qbits_list", "trials", "snr_start", "workers", "receiver", "snr_db"}


def _value(key: str, raw: str):
    raw = raw.strip()
    if key == "qbits":
        return None if raw.lower() in ("inf", "none", "infinite") else int(raw)
    if key == "es":
        return float(raw)
    return int(raw)


def parse_config(text: str):
    """Parse ``key = value`` lines into (SystemConfig, run options).

    ``#`` starts a comment. Keys are SystemConfig fields (or their one-letter
    symbols B, U, W, L, P, D) plus the run options ``receivers``,
    ``qbits_list``, ``trials``, ``snr_start``, ``workers``, ``receiver`` and
    ``snr_db``. Unknown keys are errors.
    """
    sys_kw, run = {}, {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected 'key = value'")
        key, raw = (p.strip() for p in line.split("=", 1))
        if key in _CFG_KEYS:
            name = _CFG_KEYS[key]
            if name in sys_kw:
                raise ValueError(f"line {n}: duplicate key {key!r}")
            sys_kw[name] = _value(name, raw)
        elif key in _RUN_KEYS:
            if key in ("receivers",):
                run[key] = [r.strip() for r in raw.split(",") if r.strip()]
                for r in run[key]:
                    _kind(r)
            elif key == "qbits_list":
                run[key] = [_value("qbits", v) for v in raw.split(",") if v.strip()]
            elif key in ("snr_start", "snr_db"):
                run[key] = float(raw)
            elif key == "receiver":
                _kind(raw)
                run[key] = raw
            else:
                run[key] = int(raw)
        else:
            raise ValueError(f"line {n}: unknown key {key!r}")
    return SystemConfig(**sys_kw), run


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())
