"""Minimal JSON prediction service for a parametric checkpoint.

``POST /predict`` takes ``{"x": [...], "T": t, "m": m, "sigma": s}`` and
returns ``{"phi": [...], "extrapolated": bool}``; ``GET /health`` returns the
package version.  Floats round-trip exactly (``json`` writes ``repr``).
"""
from __future__ import annotations

import json
import logging
import math
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from . import __version__
from .parametric1d import Predictor

log = logging.getLogger(__name__)

MAX_BODY = 16 * 1024 * 1024


class BadRequest(ValueError):
    pass


def parse_request(body: bytes) -> tuple[np.ndarray, float, float, float]:
    try:
        data = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BadRequest(f"invalid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise BadRequest("request must be a JSON object")
    missing = [k for k in ("x", "T", "m", "sigma") if k not in data]
    if missing:
        raise BadRequest(f"missing fields: {', '.join(missing)}")
    xs = data["x"] if isinstance(data["x"], list) else [data["x"]]
    try:
        x = np.array([float(v) for v in xs], dtype=np.float64)
        T, m, sigma = (float(data[k]) for k in ("T", "m", "sigma"))
    except (TypeError, ValueError):
        raise BadRequest("x, T, m and sigma must be numbers") from None
    if not (np.all(np.isfinite(x)) and all(math.isfinite(v) for v in (T, m, sigma))):
        raise BadRequest("non-finite input")
    if sigma <= 0:
        raise BadRequest("sigma must be positive")
    return x, T, m, sigma


def make_handler(predictor: Predictor):
    class Handler(BaseHTTPRequestHandler):
        server_version = f"torsionpinn/{__version__}"

        def log_message(self, fmt, *args):  # route through logging instead of stderr
            log.info("%s " + fmt, self.address_string(), *args)

        def _send(self, code: int, payload: dict) -> None:
            body = json.dumps(payload).encode("utf-8")
            self.send_response(code)
            self.send_header("Content-Type", "application/json; charset=utf-8")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self):
            if self.path == "/health":
                self._send(200, {"status": "ok", "version": __version__})
            else:
                self._send(404, {"error": "not found"})

        def do_POST(self):
            if self.path != "/predict":
                self._send(404, {"error": "not found"})
                return
            length = int(self.headers.get("Content-Length") or 0)
            if length <= 0 or length > MAX_BODY:
                self._send(400, {"error": "missing or oversized body"})
                return
            try:
                x, T, m, sigma = parse_request(self.rfile.read(length))
            except BadRequest as exc:
                self._send(400, {"error": str(exc)})
                return
            pred = predictor(x, T, m, sigma, warn=False)
            self._send(200, {"phi": [float(v) for v in pred.phi], "extrapolated": bool(pred.extrapolated)})

    return Handler


def make_server(predictor: Predictor, host: str = "127.0.0.1", port: int = 8000) -> ThreadingHTTPServer:
    server = ThreadingHTTPServer((host, port), make_handler(predictor))
    server.daemon_threads = True
    return server


def serve_in_thread(predictor: Predictor, host: str = "127.0.0.1", port: int = 0):
    """Start a server on a background thread; returns ``(server, thread)``."""
    server = make_server(predictor, host, port)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, thread
