"""HTTP front end for the simulator.

Handlers are plain functions of pydantic requests so the CLI can call them
in-process or send the same JSON to a running server.
"""

from __future__ import annotations

import os
import tempfile
from typing import List, Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, ConfigDict, Field, field_validator

from qmimo import __version__
from qmimo.channel import SNR_DEFINITION, SystemConfig
from qmimo.sim import (
    RECEIVER_NAMES,
    BracketError,
    csv_row,
    csv_text,
    read_csv,
    run_per_point,
    run_tradeoff,
    snr_operating_point,
)


class _Model(BaseModel):
    # operating points of receivers with an error floor are +inf
    model_config = ConfigDict(ser_json_inf_nan="constants")


class SystemParams(_Model):
    users: int = 8
    antennas: int = 64
    subcarriers: int = 128
    taps: int = 4
    cp_support: int = 16
    qbits: Optional[int] = 4
    es: float = 1.0
    data_symbols: int = 6
    seed: int = 0

    def to_config(self, **override) -> SystemConfig:
        kw = self.model_dump()
        kw.update(override)
        return SystemConfig(**kw)

    @classmethod
    def from_config(cls, cfg: SystemConfig) -> "SystemParams":
        return cls(**{k: getattr(cfg, k) for k in cls.model_fields})


def _check_receiver(v: str) -> str:
    if v not in RECEIVER_NAMES:
        raise ValueError(f"receiver must be one of {sorted(RECEIVER_NAMES)}")
    return v


class SimulateRequest(_Model):
    system: SystemParams = Field(default_factory=SystemParams)
    receiver: str = "quantizer"
    snr_db: float
    trials: int = Field(1000, ge=1)
    seed: Optional[int] = None
    workers: int = Field(1, ge=1)

    _receiver = field_validator("receiver")(_check_receiver)


class PerPayload(_Model):
    receiver: str
    qbits: Optional[int]
    snr_db: float
    trials: int
    packet_errors: int
    per_user_errors: List[int]
    per: float
    stderr: float
    unconverged: int
    wall_time: float
    csv_row: List[str]

    @classmethod
    def from_result(cls, r) -> "PerPayload":
        return cls(
            receiver=r.receiver,
            qbits=r.cfg.qbits,
            snr_db=r.snr_db,
            trials=r.trials,
            packet_errors=r.packet_errors,
            per_user_errors=[int(e) for e in r.errors],
            per=r.per,
            stderr=r.stderr,
            unconverged=r.unconverged,
            wall_time=r.wall_time,
            csv_row=csv_row(r),
        )


class OperatingPointRequest(_Model):
    system: SystemParams = Field(default_factory=SystemParams)
    receiver: str = "quantizer"
    snr_lo: float
    snr_hi: float
    trials_per_point: int = Field(1000, ge=1)
    workers: int = Field(1, ge=1)

    _receiver = field_validator("receiver")(_check_receiver)


class OperatingPointResponse(_Model):
    receiver: str
    qbits: Optional[int]
    snr_db: float
    lower: PerPayload
    upper: PerPayload
    widened: bool
    history: List[List[float]]


class TradeoffRequest(_Model):
    system: SystemParams = Field(default_factory=SystemParams)
    receivers: List[str] = ["quantizer", "mismatch1", "mismatch2"]
    qbits_list: List[Optional[int]] = [3, 4, 5, 6, 8]
    trials_per_point: int = Field(1000, ge=1)
    snr_start: float = 10.0
    baseline: bool = True
    workers: int = Field(1, ge=1)

    @field_validator("receivers")
    @classmethod
    def _receivers(cls, v):
        for r in v:
            _check_receiver(r)
        return v


class TradeoffResponse(_Model):
    snr_definition: str = SNR_DEFINITION
    csv: str
    points: List[OperatingPointResponse]


def handle_simulate(req: SimulateRequest) -> PerPayload:
    cfg = req.system.to_config()
    r = run_per_point(cfg, req.receiver, req.snr_db, req.trials, req.seed, workers=req.workers)
    return PerPayload.from_result(r)


def _op_payload(op) -> OperatingPointResponse:
    return OperatingPointResponse(
        receiver=op.receiver,
        qbits=op.qbits,
        snr_db=op.snr_db,
        lower=PerPayload.from_result(op.lower),
        upper=PerPayload.from_result(op.upper),
        widened=op.widened,
        history=[list(h) for h in op.history],
    )


def handle_operating_point(req: OperatingPointRequest) -> OperatingPointResponse:
    cfg = req.system.to_config()
    op = snr_operating_point(cfg, req.receiver, req.snr_lo, req.snr_hi, req.trials_per_point, workers=req.workers)
    return _op_payload(op)


def handle_tradeoff(req: TradeoffRequest, out_path: Optional[str] = None) -> TradeoffResponse:
    """Run the trade-off; rows are streamed to ``out_path`` (a temporary file if omitted)."""
    cfg = req.system.to_config()
    path = out_path
    if path is None:
        fd, path = tempfile.mkstemp(suffix=".csv")
        os.close(fd)
    try:
        points = run_tradeoff(
            cfg,
            req.receivers,
            req.qbits_list,
            path,
            trials_per_point=req.trials_per_point,
            start=req.snr_start,
            baseline=req.baseline,
            workers=req.workers,
        )
        with open(path) as fh:
            text = fh.read()
    finally:
        if out_path is None:
            os.unlink(path)
    return TradeoffResponse(csv=text, points=[_op_payload(p) for p in points])


def simulate_csv(payload: PerPayload) -> str:
    return csv_text([payload.csv_row])


def create_app() -> FastAPI:
    app = FastAPI(title="qmimo", version=__version__)

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/simulate", response_model=PerPayload)
    def simulate(req: SimulateRequest):
        try:
            return handle_simulate(req)
        except ValueError as exc:
            raise HTTPException(422, str(exc))

    @app.post("/operating-point", response_model=OperatingPointResponse)
    def operating_point(req: OperatingPointRequest):
        try:
            return handle_operating_point(req)
        except BracketError as exc:
            raise HTTPException(409, str(exc))
        except ValueError as exc:
            raise HTTPException(422, str(exc))

    @app.post("/tradeoff", response_model=TradeoffResponse)
    def tradeoff(req: TradeoffRequest):
        try:
            return handle_tradeoff(req)
        except ValueError as exc:
            raise HTTPException(422, str(exc))

    return app


app = create_app()

__all__ = [
    "SystemParams",
    "SimulateRequest",
    "PerPayload",
    "OperatingPointRequest",
    "OperatingPointResponse",
    "TradeoffRequest",
    "TradeoffResponse",
    "handle_simulate",
    "handle_operating_point",
    "handle_tradeoff",
    "simulate_csv",
    "create_app",
    "app",
    "read_csv",
]
