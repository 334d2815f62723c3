"""Gateway scan service: ``POST /scan``, ``GET /health``, ``GET /model/info``.

Built on the standard library's threading HTTP server.  The model is
loaded once and never mutated; the only shared mutable state is the scan
counter, guarded by a lock.
"""

from __future__ import annotations

import json
import logging
import signal
import threading
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from pesentinel.classifiers import load_model
from pesentinel.pe import Limits
from pesentinel.scanner import Scanner

log = logging.getLogger(__name__)


class ModelLoadFailure(RuntimeError):
    pass


class BindFailure(RuntimeError):
    pass


class ScanService:
    def __init__(self, scanner=None, limits=None):
        self.limits = limits or Limits.from_env()
        self._scanner = None
        self._lock = threading.Lock()
        self._scans_served = 0
        if scanner is not None:
            self.set_scanner(scanner)

    @property
    def ready(self):
        return self._scanner is not None

    def set_scanner(self, scanner):
        scanner.limits = self.limits
        self._scanner = scanner

    def load(self, model_path):
        try:
            model = load_model(model_path)
            self.set_scanner(Scanner(model, self.limits))
        except Exception as exc:
            raise ModelLoadFailure(f"cannot load model {model_path}: {exc}") from exc

    def scan(self, body, source_name=""):
        verdict = self._scanner.scan(body, source_name)
        with self._lock:
            self._scans_served += 1
        return verdict

    def health(self):
        if not self.ready:
            return HTTPStatus.SERVICE_UNAVAILABLE, {"status": "loading", "model_version": None,
                                                    "scans_served": self._scans_served}
        with self._lock:
            served = self._scans_served
        return HTTPStatus.OK, {"status": "ok", "model_version": self._scanner.model_version,
                               "scans_served": served}

    def model_info(self):
        model = self._scanner.model
        params = model.get_params()
        params.pop("n_jobs", None)
        return {
            "model_version": self._scanner.model_version,
            "kind": type(model).__name__,
            "hyperparameters": params,
            "vocabulary_size": len(self._scanner.vocabulary),
            "retained_features": len(model.features_),
            "provenance": getattr(model, "provenance_", {}),
        }


def make_handler(service):
    class Handler(BaseHTTPRequestHandler):
        server_version = "pesentinel"
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            log.info("%s - %s", self.address_string(), fmt % args)

        def _send(self, status, doc):
            body = (json.dumps(doc, sort_keys=True) + "\n").encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self):
            if self.path == "/health":
                status, doc = service.health()
                self._send(status, doc)
            elif self.path == "/model/info":
                if not service.ready:
                    self._send(HTTPStatus.SERVICE_UNAVAILABLE, {"error": "model not loaded"})
                else:
                    self._send(HTTPStatus.OK, service.model_info())
            else:
                self._send(HTTPStatus.NOT_FOUND, {"error": f"no route {self.path}"})

        def do_POST(self):
            if self.path != "/scan":
                self._send(HTTPStatus.NOT_FOUND, {"error": f"no route {self.path}"})
                return
            raw_length = self.headers.get("Content-Length")
            if raw_length is None:
                self.close_connection = True
                self._send(HTTPStatus.LENGTH_REQUIRED, {"error": "Content-Length required"})
                return
            try:
                length = int(raw_length)
                if length < 0:
                    raise ValueError
            except ValueError:
                self.close_connection = True
                self._send(HTTPStatus.BAD_REQUEST, {"error": "bad Content-Length"})
                return
            if length > service.limits.max_file_size:
                self.close_connection = True
                self._send(HTTPStatus.REQUEST_ENTITY_TOO_LARGE,
                           {"error": "PayloadTooLarge", "limit": service.limits.max_file_size})
                return
            body = self.rfile.read(length)
            if not service.ready:
                self._send(HTTPStatus.SERVICE_UNAVAILABLE, {"error": "model not loaded"})
                return
            verdict = service.scan(body, self.headers.get("X-Filename", ""))
            self._send(HTTPStatus.OK, verdict.as_dict())

    return Handler


class GatewayServer(ThreadingHTTPServer):
    daemon_threads = False  # server_close() waits for in-flight scans
    block_on_close = True
    request_queue_size = 128  # the socketserver default of 5 resets bursts of clients


def make_server(service, host="127.0.0.1", port=8080):
    try:
        return GatewayServer((host, port), make_handler(service))
    except OSError as exc:
        raise BindFailure(f"cannot bind {host}:{port}: {exc}") from exc


def parse_bind(bind):
    host, sep, port = bind.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"bind address must look like HOST:PORT, got {bind!r}")
    return host or "127.0.0.1", int(port)


def serve(model_path, bind="127.0.0.1:8080", on_ready=None):
    """Load the model, bind, and serve until SIGINT/SIGTERM."""
    service = ScanService()
    service.load(model_path)
    host, port = parse_bind(bind)
    server = make_server(service, host, port)

    def stop(signum, frame):
        threading.Thread(target=server.shutdown, daemon=True).start()

    if threading.current_thread() is threading.main_thread():
        signal.signal(signal.SIGINT, stop)
        signal.signal(signal.SIGTERM, stop)
    log.info("serving on %s:%d (model %s)", host, server.server_address[1], service.health()[1]["model_version"])
    if on_ready is not None:
        on_ready(server)
    try:
        server.serve_forever()
    finally:
        server.server_close()
