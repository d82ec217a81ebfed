import json
import shutil
import threading
import urllib.error
import urllib.request

import pytest

from fuelbmi import pipeline as P
from fuelbmi.service import StatusApp, make_server


@pytest.fixture(scope="module")
def app(world):
    return StatusApp(world.cfg)


@pytest.fixture(scope="module")
def server(world):
    srv = make_server(world.cfg, "127.0.0.1", 0)
    t = threading.Thread(target=srv.serve_forever, daemon=True)
    t.start()
    yield "http://%s:%d" % srv.server_address[:2]
    srv.shutdown()
    srv.server_close()


def fetch(url, data=None):
    req = urllib.request.Request(url, data=data, method="POST" if data is not None else "GET")
    try:
        with urllib.request.urlopen(req, timeout=10) as r:
            return r.status, json.loads(r.read())
    except urllib.error.HTTPError as e:
        return e.code, json.loads(e.read())


def test_households_listing(app):
    code, body = app.get("/v1/households")
    assert code == 200
    assert {h["pid"]: h["status"] for h in body["households"]} == {"A1": "red", "G1": "green", "G2": "green"}


def test_status_has_reasons(app):
    code, body = app.get("/v1/households/A1/status")
    assert code == 200 and body["status"] == "red"
    assert body["consecutive_anomalous_days"] == 7
    assert any(r["appliance"] == "Kettle" and r["window"] == "Night" for r in body["reasons"])


def test_unknown_household(app):
    assert app.get("/v1/households/ZZ/status")[0] == 404


def test_unknown_route(app):
    assert app.get("/v2/nothing")[0] == 404


def test_anomalies_date_filter(app):
    code, all_ = app.get("/v1/households/A1/anomalies")
    assert code == 200 and all_["anomalies"]
    code, one = app.get("/v1/households/A1/anomalies?from=2024-01-15&to=2024-01-15")
    assert code == 200
    assert {a["date"] for a in one["anomalies"]} == {"2024-01-15"}
    assert len(one["anomalies"]) < len(all_["anomalies"])


def test_anomalies_bad_dates(app):
    assert app.get("/v1/households/A1/anomalies?from=yesterday")[0] == 400
    assert app.get("/v1/households/A1/anomalies?from=2024-02-01&to=2024-01-01")[0] == 400


def test_region_summary(app):
    code, body = app.get("/v1/regions/R1/summary")
    assert code == 200
    assert body["histogram"] == {"green": 2, "amber": 0, "red": 1}
    assert body["households"] == 3
    assert isinstance(body["drifted_rules"], list)


def test_unknown_region(app):
    assert app.get("/v1/regions/Nowhere/summary")[0] == 404


def test_ingest_appends(world, tmp_path):
    root = tmp_path / "d"
    shutil.copytree(world.root, root)
    app = StatusApp(world.cfg.with_overrides({"paths.data_dir": str(root)}))
    before = (root / "readings" / "G1.csv").read_text()
    code, body = app.post("/v1/ingest", b"G1,1800000000,90\nG1,1800000010,95\nNEW,1800000000,5\n")
    assert code == 202 and body == {"accepted": 3, "households": ["G1", "NEW"]}
    assert (root / "readings" / "G1.csv").read_text() == before + "G1,1800000000,90\nG1,1800000010,95\n"
    assert P.DataDir(root).pids() == ["A1", "G1", "G2", "NEW"]


def test_ingest_rejects_malformed(app):
    assert app.post("/v1/ingest", b"G1,abc,5\n")[0] == 400
    assert app.post("/v1/ingest", b"")[0] == 400
    assert app.post("/v1/elsewhere", b"G1,1,1\n")[0] == 404


def test_http_round_trip(server):
    code, body = fetch(server + "/v1/households/G1/status")
    assert code == 200 and body["status"] == "green"
    code, body = fetch(server + "/v1/households/nobody/status")
    assert code == 404 and "error" in body
