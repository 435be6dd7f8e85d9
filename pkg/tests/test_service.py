import json
import math

import httpx
import pytest
from fastapi.testclient import TestClient

from qmimo import cli
from qmimo.channel import SNR_DEFINITION
from qmimo.service import (
    SimulateRequest,
    SystemParams,
    TradeoffResponse,
    create_app,
    handle_simulate,
)
from qmimo.sim import read_csv

TINY = dict(users=2, antennas=8, subcarriers=16, taps=2, cp_support=4, qbits=4, data_symbols=2, seed=3)

CONFIG_TEXT = """
U = 2
B = 8
W = 16
L = 2
P = 4
D = 2
qbits = 4
seed = 3
receivers = mismatch2
qbits_list = 4
snr_start = 4
"""


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


def test_health(client):
    r = client.get("/health")
    assert r.status_code == 200 and r.json()["status"] == "ok"


def test_simulate_matches_in_process(client):
    body = {"system": TINY, "receiver": "mismatch2", "snr_db": 3.0, "trials": 3}
    r = client.post("/simulate", json=body)
    assert r.status_code == 200
    local = handle_simulate(SimulateRequest(**body))
    assert r.json()["csv_row"] == local.csv_row
    assert r.json()["trials"] == 3 and len(r.json()["per_user_errors"]) == 2


@pytest.mark.parametrize(
    "body",
    [
        {"system": TINY, "receiver": "oracle", "snr_db": 3.0},
        {"system": TINY, "receiver": "mismatch2", "snr_db": 3.0, "trials": 0},
        {"system": {**TINY, "users": 9}, "receiver": "mismatch2", "snr_db": 3.0, "trials": 1},
        {"system": TINY, "receiver": "mismatch2"},
    ],
)
def test_simulate_validation(client, body):
    assert client.post("/simulate", json=body).status_code == 422


def test_operating_point_bad_bracket_is_409(client):
    body = {"system": TINY, "receiver": "unquantized", "snr_lo": 25.0, "snr_hi": 30.0, "trials_per_point": 2}
    r = client.post("/operating-point", json=body)
    assert r.status_code == 409 and "bracket invalid" in r.json()["detail"]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_tradeoff_endpoint(client):
    body = {"system": TINY, "receivers": ["mismatch2"], "qbits_list": [4], "trials_per_point": 5, "snr_start": 4.0}
    r = client.post("/tradeoff", json=body)
    assert r.status_code == 200
    res = TradeoffResponse.model_validate(r.json())
    assert res.csv.startswith(f"# {SNR_DEFINITION}")
    assert [(p.receiver, p.qbits) for p in res.points] == [("unquantized", None), ("mismatch2", 4)]
    assert client.post("/tradeoff", json={**body, "receivers": ["x"]}).status_code == 422


def test_infinite_operating_point_survives_json():
    payload = {"snr_definition": SNR_DEFINITION, "csv": "", "points": []}
    res = TradeoffResponse(**payload)
    assert TradeoffResponse.model_validate_json(res.model_dump_json()) == res
    assert json.loads('{"x": Infinity}')["x"] == math.inf


def test_system_params_roundtrip():
    p = SystemParams(**TINY)
    assert SystemParams.from_config(p.to_config()) == p
    assert p.to_config(qbits=None).qbits is None


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(CONFIG_TEXT)
    return path


def test_cli_simulate_writes_csv(config_file, tmp_path, capsys):
    out = tmp_path / "sim.csv"
    rc = cli.main(["simulate", "--config", str(config_file), "--receiver", "mismatch2", "--snr-db", "3",
                   "--trials", "3", "--qbits", "inf", "--out", str(out)])
    assert rc == 0
    rows = read_csv(out)
    assert len(rows) == 1 and rows[0]["qbits"] is None and rows[0]["trials"] == 3
    assert "mismatch2" in capsys.readouterr().out


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_cli_tradeoff_in_process(config_file, tmp_path, capsys):
    out = tmp_path / "t.csv"
    assert cli.main(["tradeoff", "--config", str(config_file), "--trials", "5", "--out", str(out)]) == 0
    rows = read_csv(out)
    assert [(r["receiver"], r["qbits"]) for r in rows] == [("unquantized", None), ("mismatch2", 4)]
    assert "qbits=  4" in capsys.readouterr().out


def test_cli_through_server(config_file, tmp_path, client, monkeypatch, capsys):
    def post(url, json=None, timeout=None):
        return client.post(httpx.URL(url).path, json=json)

    monkeypatch.setattr(httpx, "post", post)
    out = tmp_path / "remote.csv"
    rc = cli.main(["simulate", "--server", "http://qmimo.test", "--config", str(config_file), "--receiver", "mismatch2",
                   "--snr-db", "3", "--trials", "3", "--out", str(out)])
    assert rc == 0
    local = tmp_path / "local.csv"
    cli.main(["simulate", "--config", str(config_file), "--receiver", "mismatch2", "--snr-db", "3", "--trials", "3",
              "--out", str(local)])
    assert out.read_text() == local.read_text()
    with pytest.raises(SystemExit, match="409"):
        cli.main(["operating-point", "--server", "http://qmimo.test", "--config", str(config_file), "--receiver",
                  "unquantized", "--snr-lo", "25", "--snr-hi", "30", "--trials", "2"])


def test_cli_errors(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = red\n")
    assert cli.main(["simulate", "--config", str(bad), "--snr-db", "1"]) == 2
    assert "unknown key" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        cli.main(["simulate", "--trials", "1"])
    assert cli.main(["simulate", "--config", str(tmp_path / "missing.cfg"), "--snr-db", "1"]) == 2
