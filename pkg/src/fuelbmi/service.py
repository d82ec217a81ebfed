"""Read-only JSON status endpoint plus a readings ingest route.

Every GET request reads one persisted snapshot of ``statuses.json``; the
prediction mode replaces that file atomically, so a response never mixes
two updates.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
import re
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlsplit

from .anomaly import EmptyRegion, TrafficLightStatus, mine_rules, region_aggregate
from .config import RunConfig
from .core import BMIError, normalize_stream, parse_reading_stream, serialize_readings
from .pipeline import DataDir, latest_statuses, read_status_doc

log = logging.getLogger(__name__)


class HttpError(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        super().__init__(message)


def _parse_date(text: str | None, name: str) -> dt.date | None:
    if text is None:
        return None
    try:
        return dt.date.fromisoformat(text)
    except ValueError:
        raise HttpError(400, f"{name} must be an ISO date (YYYY-MM-DD)") from None


class StatusApp:
    """Request routing independent of the HTTP server, easy to call from tests."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.data = DataDir(cfg.data_dir)

    def _doc(self) -> dict:
        return read_status_doc(self.data)

    def _entry(self, doc: dict, pid: str) -> dict:
        entry = doc["households"].get(pid)
        if entry is None:
            raise HttpError(404, f"unknown household {pid!r}")
        return entry

    def households(self, query) -> dict:
        doc = self._doc()
        latest = latest_statuses(doc)
        return {"households": [
            {"pid": pid, "region": doc["households"][pid].get("region"),
             "status": st.status.value, "date": st.date.isoformat() if st.date else None}
            for pid, st in sorted(latest.items())
        ]}

    def status(self, query, pid: str) -> dict:
        doc = self._doc()
        entry = self._entry(doc, pid)
        st = latest_statuses({"households": {pid: entry}})[pid]
        body = st.to_dict()
        body["region"] = entry.get("region")
        return body

    def anomalies(self, query, pid: str) -> dict:
        lo = _parse_date(query.get("from"), "from")
        hi = _parse_date(query.get("to"), "to")
        if lo and hi and lo > hi:
            raise HttpError(400, "from is after to")
        entry = self._entry(self._doc(), pid)
        out = []
        for h in entry.get("history", []):
            st = TrafficLightStatus.from_dict(h)
            if (lo and st.date < lo) or (hi and st.date > hi):
                continue
            out.extend(r.to_dict() for r in st.reasons)
        return {"pid": pid, "from": lo and lo.isoformat(), "to": hi and hi.isoformat(),
                "anomalies": out}

    def region(self, query, region: str) -> dict:
        doc = self._doc()
        members = {pid: e for pid, e in doc["households"].items() if e.get("region") == region}
        if not members:
            raise HttpError(404, f"unknown region {region!r}")
        latest = latest_statuses({"households": members})
        before = [t for e in members.values() for t in e.get("baseline_transactions", [])]
        after = [t for e in members.values() for t in e.get("recent_transactions", [])]
        ms, mc = self.cfg["rules.min_support"], self.cfg["rules.min_confidence"]
        try:
            summary = region_aggregate(
                latest, mine_rules(before, ms, mc) if before else [],
                mine_rules(after, ms, mc) if after else [],
                self.cfg["rules.drift_threshold"], region)
        except EmptyRegion as exc:
            raise HttpError(404, str(exc)) from None
        return summary.to_dict()

    def ingest(self, body: bytes) -> dict:
        try:
            readings = parse_reading_stream(body)
        except BMIError as exc:
            raise HttpError(400, str(exc)) from None
        if not readings:
            raise HttpError(400, "no readings in body")
        by_pid: dict[str, list] = {}
        for r in readings:
            by_pid.setdefault(r.pid, []).append(r)
        for pid, rows in by_pid.items():
            if not re.fullmatch(r"[\w.-]+", pid):
                raise HttpError(400, f"invalid pid {pid!r}")
            try:
                normalize_stream(rows, self.cfg["cadence_s"], self.cfg["gap_tolerance_s"])
            except (BMIError, ValueError) as exc:
                raise HttpError(400, str(exc)) from None
        for pid, rows in sorted(by_pid.items()):
            self.data.append_readings(pid, serialize_readings(rows))
        return {"accepted": len(readings), "households": sorted(by_pid)}

    ROUTES = [
        (re.compile(r"^/v1/households/?$"), "households"),
        (re.compile(r"^/v1/households/([^/]+)/status$"), "status"),
        (re.compile(r"^/v1/households/([^/]+)/anomalies$"), "anomalies"),
        (re.compile(r"^/v1/regions/([^/]+)/summary$"), "region"),
    ]

    def get(self, target: str) -> tuple[int, dict]:
        parts = urlsplit(target)
        try:
            query = {k: v[-1] for k, v in parse_qs(parts.query, strict_parsing=False).items()}
            for pattern, name in self.ROUTES:
                m = pattern.match(parts.path)
                if m:
                    return 200, getattr(self, name)(query, *m.groups())
            raise HttpError(404, f"no route for {parts.path}")
        except HttpError as exc:
            return exc.code, {"error": str(exc)}

    def post(self, target: str, body: bytes) -> tuple[int, dict]:
        if urlsplit(target).path != "/v1/ingest":
            return 404, {"error": f"no route for {target}"}
        try:
            return 202, self.ingest(body)
        except HttpError as exc:
            return exc.code, {"error": str(exc)}


class _Handler(BaseHTTPRequestHandler):
    app: StatusApp
    protocol_version = "HTTP/1.1"

    def _send(self, code: int, body: dict):
        data = (json.dumps(body, sort_keys=True) + "\n").encode()
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self):
        try:
            self._send(*self.app.get(self.path))
        except Exception:
            log.exception("GET %s failed", self.path)
            self._send(HTTPStatus.INTERNAL_SERVER_ERROR, {"error": "internal error"})

    def do_POST(self):
        try:
            n = int(self.headers.get("Content-Length") or 0)
        except ValueError:
            self._send(400, {"error": "bad Content-Length"})
            return
        body = self.rfile.read(n)
        try:
            self._send(*self.app.post(self.path, body))
        except Exception:
            log.exception("POST %s failed", self.path)
            self._send(HTTPStatus.INTERNAL_SERVER_ERROR, {"error": "internal error"})

    def log_message(self, fmt, *args):
        log.info("%s - %s", self.address_string(), fmt % args)


def make_server(cfg: RunConfig, host: str | None = None, port: int | None = None) -> ThreadingHTTPServer:
    """Bind the endpoint; port 0 picks a free port (see ``server.server_address``)."""
    handler = type("Handler", (_Handler,), {"app": StatusApp(cfg)})
    host = cfg["serve.host"] if host is None else host
    port = cfg["serve.port"] if port is None else port
    return ThreadingHTTPServer((host, port), handler)


def serve(cfg: RunConfig) -> None:
    server = make_server(cfg)
    log.info("serving on http://%s:%d", *server.server_address[:2])
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
