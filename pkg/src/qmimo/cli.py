"""Command line client.

Every command builds the same pydantic request the HTTP service accepts.
Without ``--server`` the request is handled in this process; with it the
request is posted to a running ``qmimo serve``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from typing import Optional

from qmimo.sim import load_config

FAST_TRIALS = 200
# Monte-Carlo requests can run for hours
HTTP_TIMEOUT = None


def _qbits(text: str) -> Optional[int]:
    if text.lower() in ("inf", "none", "infinite"):
        return None
    return int(text)


def _system(args, **override):
    from qmimo.service import SystemParams

    cfg, run = load_config(args.config) if args.config else (None, {})
    params = SystemParams.from_config(cfg) if cfg is not None else SystemParams()
    upd = {k: v for k, v in override.items() if v is not None}
    return params.model_copy(update=upd), run


def _post(server: str, route: str, req, model):
    import httpx

    r = httpx.post(server.rstrip("/") + route, json=req.model_dump(mode="json"), timeout=HTTP_TIMEOUT)
    if r.status_code >= 400:
        raise SystemExit(f"server error {r.status_code}: {r.text}")
    return model.model_validate(r.json())


def _trials(args, run, default=1000):
    if args.trials is not None:
        return args.trials
    if getattr(args, "fast", False):
        return FAST_TRIALS
    return run.get("trials", default)


def cmd_simulate(args) -> int:
    from qmimo.service import PerPayload, SimulateRequest, handle_simulate, simulate_csv

    system, run = _system(args, seed=args.seed)
    if args.qbits_given:
        system = system.model_copy(update={"qbits": args.qbits})
    receiver = args.receiver or run.get("receiver", "quantizer")
    snr = args.snr_db if args.snr_db is not None else run.get("snr_db")
    if snr is None:
        raise SystemExit("--snr-db is required")
    req = SimulateRequest(system=system, receiver=receiver, snr_db=snr, trials=_trials(args, run), seed=args.seed,
                          workers=args.workers or run.get("workers", 1))
    res = _post(args.server, "/simulate", req, PerPayload) if args.server else handle_simulate(req)
    text = simulate_csv(res)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
    sys.stdout.write(text)
    if res.unconverged:
        print(f"# {res.unconverged} solves hit the iteration cap", file=sys.stderr)
    return 0


def cmd_tradeoff(args) -> int:
    from qmimo.service import TradeoffRequest, TradeoffResponse, handle_tradeoff

    system, run = _system(args, seed=args.seed)
    kw = {"system": system, "trials_per_point": _trials(args, run)}
    for key in ("receivers", "qbits_list"):
        if key in run:
            kw[key] = run[key]
    if "snr_start" in run:
        kw["snr_start"] = run["snr_start"]
    kw["workers"] = args.workers or run.get("workers", 1)
    req = TradeoffRequest(**kw)
    if args.server:
        res = _post(args.server, "/tradeoff", req, TradeoffResponse)
        with open(args.out, "w", newline="") as fh:
            fh.write(res.csv)
    else:
        res = handle_tradeoff(req, out_path=args.out)
    for p in res.points:
        q = "inf" if p.qbits is None else p.qbits
        print(f"{p.receiver:12s} qbits={q:>3}  {p.snr_db:6.2f} dB  (PER {p.lower.per:.4f} at {p.lower.snr_db:g} dB, "
              f"{p.upper.per:.4f} at {p.upper.snr_db:g} dB){'  widened' if p.widened else ''}")
    return 0


def cmd_operating_point(args) -> int:
    from qmimo.service import OperatingPointRequest, OperatingPointResponse, handle_operating_point

    system, run = _system(args, seed=args.seed)
    if args.qbits_given:
        system = system.model_copy(update={"qbits": args.qbits})
    req = OperatingPointRequest(system=system, receiver=args.receiver or run.get("receiver", "quantizer"),
                                snr_lo=args.snr_lo, snr_hi=args.snr_hi, trials_per_point=_trials(args, run),
                                workers=args.workers or run.get("workers", 1))
    res = _post(args.server, "/operating-point", req, OperatingPointResponse) if args.server else handle_operating_point(req)
    print(json.dumps(res.model_dump(mode="json"), indent=2))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run("qmimo.service:app", host=args.host, port=args.port, log_level="info")
    return 0


class _QbitsAction(argparse.Action):
    def __call__(self, parser, namespace, values, option_string=None):
        setattr(namespace, self.dest, _qbits(values))
        namespace.qbits_given = True


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qmimo", description="Quantized massive MU-MIMO-OFDM uplink simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key = value configuration file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--trials", type=int)
        sp.add_argument("--fast", action="store_true", help=f"{FAST_TRIALS} trials per point")
        sp.add_argument("--workers", type=int, help="local worker processes")
        sp.add_argument("--server", help="URL of a running 'qmimo serve'; omit to run in-process")
        sp.set_defaults(qbits=None, qbits_given=False)

    s = sub.add_parser("simulate", help="PER at one SNR")
    common(s)
    s.add_argument("--receiver", choices=["quantizer", "mismatch1", "mismatch2", "unquantized"])
    s.add_argument("--qbits", action=_QbitsAction, help="bits per real dimension, or 'inf'")
    s.add_argument("--snr-db", type=float)
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("tradeoff", help="operating point versus quantizer bits, written as CSV")
    common(t)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_tradeoff)

    o = sub.add_parser("operating-point", help="bisect the 1%% PER SNR inside a bracket")
    common(o)
    o.add_argument("--receiver", choices=["quantizer", "mismatch1", "mismatch2", "unquantized"])
    o.add_argument("--qbits", action=_QbitsAction)
    o.add_argument("--snr-lo", type=float, required=True)
    o.add_argument("--snr-hi", type=float, required=True)
    o.set_defaults(func=cmd_operating_point)

    v = sub.add_parser("serve", help="run the HTTP service")
    v.add_argument("--host", default="127.0.0.1")
    v.add_argument("--port", type=int, default=8000)
    v.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    warnings.formatwarning = lambda msg, cat, *a, **k: f"{cat.__name__}: {msg}\n"
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
