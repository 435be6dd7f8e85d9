import ast
import hashlib
import json
import os
from pathlib import Path

import numpy as np
import pytest

from qmimo.channel import SystemConfig

SRC = Path(__file__).resolve().parents[1] / "src" / "qmimo"
CACHE = Path(os.environ.get("QMIMO_CACHE", Path(__file__).resolve().parent / ".cache"))

# modules whose code determines simulation numbers
NUMERIC = ("_kernels", "quant", "ofdm", "constellation", "channel", "fbs", "chest", "detect", "phycode", "sim")


def _strip_docstrings(tree):
    for node in ast.walk(tree):
        if isinstance(node, (ast.Module, ast.FunctionDef, ast.ClassDef, ast.AsyncFunctionDef)):
            body = node.body
            if body and isinstance(body[0], ast.Expr) and isinstance(getattr(body[0], "value", None), ast.Constant) \
                    and isinstance(body[0].value.value, str):
                node.body = body[1:] or [ast.Pass()]
    return tree


def code_fingerprint() -> str:
    """Hash of the numeric modules, insensitive to comments and docstrings."""
    h = hashlib.sha256()
    for name in NUMERIC:
        tree = _strip_docstrings(ast.parse((SRC / f"{name}.py").read_text()))
        h.update(ast.dump(tree).encode())
    h.update(np.__version__.encode())
    return h.hexdigest()[:16]


def cached_run(tag: str, params: dict, compute):
    """Return ``compute(path)``'s CSV at ``path``, reusing an earlier run with identical code and params.

    ``compute`` must write the CSV to the path it is given. Runs are
    deterministic, so a hit is the same file a fresh run would produce.
    """
    CACHE.mkdir(parents=True, exist_ok=True)
    key = hashlib.sha256(json.dumps(params, sort_keys=True, default=str).encode()).hexdigest()[:12]
    path = CACHE / f"{tag}-{code_fingerprint()}-{key}.csv"
    if not path.exists():
        tmp = path.with_suffix(".partial")
        compute(tmp)
        tmp.replace(path)
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_cfg():
    return SystemConfig(users=2, antennas=8, subcarriers=16, taps=2, cp_support=4, qbits=4, data_symbols=2, seed=3)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
