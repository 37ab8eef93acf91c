import json
import threading
import time

import httpx
import numpy as np
import pytest
import uvicorn
from fastapi.testclient import TestClient

from plrf.cli import main
from plrf.core import curves_from_csv
from plrf.service import app

TINY = """\
alpha = 0.7
beta = 0.7
d_list = [50, 100]
seeds = 2
horizon = 1000
"""


@pytest.fixture
def tiny_config(tmp_path):
    p = tmp_path / "tiny.toml"
    p.write_text(TINY)
    return p


def test_simulate_writes_files_and_is_deterministic(tmp_path, tiny_config, capsys):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", str(tiny_config), "--out", str(out1)]) == 0
    assert main(["simulate", "--config", str(tiny_config), "--out", str(out2)]) == 0
    csvs = sorted(p.name for p in out1.glob("*.csv"))
    assert csvs == ["sgd_d100_s0.csv", "sgd_d100_s1.csv", "sgd_d50_s0.csv", "sgd_d50_s1.csv"]
    manifest = json.loads((out1 / "manifest.json").read_text())
    for name in csvs:
        text = (out1 / name).read_text()
        assert text == (out2 / name).read_text()
        assert text.startswith(f"# manifest={manifest['hash']}")
    assert (out1 / "manifest.json").read_text() == (out2 / "manifest.json").read_text()


def test_volterra_naive_matches_fast(tmp_path):
    a, b = tmp_path / "fast", tmp_path / "naive"
    args = ["--alpha", "0.7", "--beta", "0.7", "--d-list", "50", "--horizon", "2000"]
    assert main(["volterra", *args, "--out", str(a)]) == 0
    assert main(["volterra", *args, "--naive", "--out", str(b)]) == 0
    ca = curves_from_csv((a / "volterra_d50.csv").read_text())[0]
    cb = curves_from_csv((b / "volterra_d50.csv").read_text())[0]
    np.testing.assert_allclose(ca.risk, cb.risk, rtol=1e-10)


def test_pipeline_closure(tmp_path, tiny_config, capsys):
    sim, vol = tmp_path / "sim", tmp_path / "vol"
    main(["simulate", "--config", str(tiny_config), "--out", str(sim)])
    main(["volterra", "--config", str(tiny_config), "--out", str(vol)])
    capsys.readouterr()
    for d in (sim, vol):
        assert main(["frontier", str(d / "*.csv"), "--window", "1e3,4e4", "--slices", "5", "--approach", "1"]) == 0
        rep = json.loads(capsys.readouterr().out)
        assert rep["eta"]["n_slices"] == 5


def test_json_format(tmp_path, tiny_config, capsys):
    out = tmp_path / "j"
    assert main(["volterra", "--config", str(tiny_config), "--out", str(out), "--format", "json"]) == 0
    data = json.loads((out / "volterra_d50.json").read_text())
    assert data["d"] == 50 and len(data["risk"]) == len(data["iters"])
    capsys.readouterr()
    assert main(["frontier", str(out / "*.json"), "--window", "1e3,4e4", "--slices", "4", "--approach", "1"]) == 0


def test_sweep(tmp_path, tiny_config, capsys):
    out = tmp_path / "s"
    rc = main(["sweep", "--config", str(tiny_config), "--out", str(out), "--window", "1e3,4e4", "--slices", "5"])
    assert rc == 0
    rep = json.loads((out / "frontier.json").read_text())
    assert "approach1" in rep["xi"] and rep["manifest"]


def test_phase_command(capsys):
    assert main(["phase", "0.7", "1.2"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["phase"] == "III"
    assert rep["eta"] == pytest.approx(0.642857, abs=1e-6)
    assert rep["xi"] == 0.5


def test_theory_zero_lr(capsys):
    assert main(["theory", "--alpha", "0.7", "--beta", "1.2", "--d", "100", "--gamma", "0",
                 "--r", "1,100,10000", "--format", "json"]) == 0
    for row in json.loads(capsys.readouterr().out):
        assert row["Kpp"] == 0
        assert row["surrogate"] == pytest.approx(max(row["F0"], row["Fpp"], row["Fac"]))


def test_spectrum_command(capsys):
    assert main(["spectrum", "--alpha", "0.7", "--beta", "0.7", "--d", "30", "--stride", "200"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "u,eta,trace_density,target_density"
    assert len(lines) > 2


@pytest.mark.parametrize(
    "argv",
    [
        ["phase", "-1", "0.5"],
        ["simulate", "--alpha", "0.7", "--beta", "0.7", "--d-list", "50", "--horizon", "10", "--gamma", "5"],
        ["simulate", "--alpha", "0.7", "--beta", "0.7", "--d-list", "100,50", "--horizon", "10"],
        ["volterra", "--alpha", "0.7", "--beta", "0.7", "--d-list", "50"],
        ["simulate", "--config", "/nonexistent.toml"],
        ["frontier", "/nonexistent/*.csv"],
    ],
)
def test_config_errors_exit_2(argv, tmp_path, capsys):
    assert main([*argv, *(["--out", str(tmp_path / "x")] if argv[0] in ("simulate", "volterra") else [])]) == 2
    assert "config error" in capsys.readouterr().err


def test_numerical_failure_exit_3(monkeypatch, capsys):
    from plrf import service
    from plrf.core import NumericalError

    def boom(req):
        raise NumericalError("solver diverged")

    monkeypatch.setitem(service.HANDLERS, "spectrum", (None, boom))
    assert main(["spectrum", "--alpha", "0.7", "--beta", "0.7", "--d", "30"]) == 3
    assert "numerical failure" in capsys.readouterr().err


def test_http_routes():
    client = TestClient(app)
    assert client.get("/health").json()["status"] == "ok"
    r = client.post("/phase", json={"alpha": 0.7, "beta": 1.2})
    assert r.status_code == 200 and r.json()["phase"] == "III"
    r = client.post("/phase", json={"alpha": -1, "beta": 1.2})
    assert r.status_code == 422 and r.json()["kind"] == "config"
    cfg = {"alpha": 0.7, "beta": 0.7, "d_list": [50], "horizon": 100}
    r = client.post("/volterra", json={"config": cfg})
    assert r.status_code == 200 and r.json()["runs"][0]["kernel_norm"] == pytest.approx(0.5)
    r = client.post("/volterra", json={"config": {**cfg, "gamma": 9.0}})
    assert r.status_code == 422 and "unstable" in r.json()["detail"]


@pytest.fixture(scope="module")
def live_server():
    config = uvicorn.Config(app, host="127.0.0.1", port=8765, log_level="error")
    server = uvicorn.Server(config)
    t = threading.Thread(target=server.run, daemon=True)
    t.start()
    for _ in range(100):
        try:
            httpx.get("http://127.0.0.1:8765/health")
            break
        except httpx.HTTPError:
            time.sleep(0.05)
    yield "http://127.0.0.1:8765"
    server.should_exit = True
    t.join(5)


def test_cli_against_server_matches_in_process(live_server, tmp_path, tiny_config, capsys):
    local, remote = tmp_path / "l", tmp_path / "r"
    assert main(["volterra", "--config", str(tiny_config), "--out", str(local)]) == 0
    assert main(["--server", live_server, "volterra", "--config", str(tiny_config), "--out", str(remote)]) == 0
    for p in local.glob("*.csv"):
        assert p.read_text() == (remote / p.name).read_text()
    assert main(["--server", live_server, "phase", "-1", "0.5"]) == 2
