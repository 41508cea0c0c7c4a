"""HTTP/1.1 + JSON transport, and an in-process stand-in with identical semantics.

Handlers never see the transport: a :class:`ServiceApp` maps ``(method,
path)`` to a function taking the decoded JSON body and returning a dict.
:func:`serve_http` exposes an app on a port; :class:`HttpClient` and
:class:`LocalClient` call one.
"""

from __future__ import annotations

import http.client
import json
import logging
import socket
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable
from urllib.parse import urlsplit

from ..exceptions import (
    ConfigurationError,
    CorruptArtifactError,
    IndexBuildError,
    NotFoundError,
    StageError,
    StaleArtifactError,
)

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT_S = 2.0


class RemoteError(Exception):
    """A service answered with a non-2xx status."""

    def __init__(self, status: int, body: dict):
        self.status = status
        self.body = body
        super().__init__(f"HTTP {status}: {body.get('error', body)}")


class ServiceApp:
    role = "service"

    def __init__(self):
        self.routes: dict[tuple[str, str], Callable[[dict], dict]] = {
            ("GET", "/health"): lambda body: {"status": "ok", "role": self.role},
            ("GET", "/stats"): lambda body: self.stats(),
        }

    def stats(self) -> dict:
        return {"role": self.role}

    def dispatch(self, method: str, path: str, body: dict) -> tuple[int, dict]:
        handler = self.routes.get((method, path))
        if handler is None:
            return 404, {"error": f"no route {method} {path}"}
        try:
            return 200, handler(body)
        except StageError as e:
            return e.status, {"error": e.message, "stage": e.stage, "timings": e.timings}
        except NotFoundError as e:
            return 404, {"error": str(e)}
        except StaleArtifactError as e:
            return 409, {"error": "stale", "detail": str(e)}
        except CorruptArtifactError as e:
            return 422, {"error": "corrupt", "detail": str(e)}
        except IndexBuildError as e:
            return 422, {"error": "index_build", "detail": str(e)}
        except (ValueError, KeyError, TypeError) as e:
            return 400, {"error": f"bad request: {e}"}
        except Exception as e:  # pragma: no cover - last resort so a server thread never dies
            logger.exception("unhandled error in %s %s", method, path)
            return 500, {"error": repr(e)}


def _encode(obj) -> bytes:
    return json.dumps(obj, separators=(",", ":")).encode("utf-8")


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    disable_nagle_algorithm = True
    app: ServiceApp

    def _respond(self, method: str):
        n = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(n) if n else b""
        try:
            body = json.loads(raw) if raw else {}
        except json.JSONDecodeError as e:
            status, payload = 400, {"error": f"invalid JSON: {e}"}
        else:
            status, payload = self.app.dispatch(method, self.path, body)
        data = _encode(payload)
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self):
        self._respond("GET")

    def do_POST(self):
        self._respond("POST")

    def log_message(self, format, *args):
        pass


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True
    request_queue_size = 128


class HttpService:
    """An app bound to a listening socket, served from a background thread."""

    def __init__(self, app: ServiceApp, host: str = "127.0.0.1", port: int = 0):
        handler = type(f"{type(app).__name__}Handler", (_Handler,), {"app": app})
        try:
            self.server = _Server((host, port), handler)
        except OSError as e:
            raise ConfigurationError("port", f"cannot bind {host}:{port} ({e.strerror})") from e
        self.app = app
        self.host, self.port = self.server.server_address[:2]
        self._thread = threading.Thread(target=self.server.serve_forever, name=f"http-{app.role}", daemon=True)

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def start(self) -> "HttpService":
        self._thread.start()
        return self

    def stop(self) -> None:
        self.server.shutdown()
        self.server.server_close()


def serve_http(app: ServiceApp, host: str = "127.0.0.1", port: int = 0) -> HttpService:
    return HttpService(app, host, port).start()


class HttpClient:
    """Keep-alive JSON client; one connection per calling thread."""

    def __init__(self, base_url: str, timeout: float = DEFAULT_TIMEOUT_S, name: str | None = None):
        parts = urlsplit(base_url)
        self.host = parts.hostname or "127.0.0.1"
        self.port = parts.port or 80
        self.timeout = timeout
        self.name = name or base_url
        self._local = threading.local()

    def _conn(self) -> http.client.HTTPConnection:
        conn = getattr(self._local, "conn", None)
        if conn is None:
            conn = http.client.HTTPConnection(self.host, self.port, timeout=self.timeout)
            conn.connect()
            conn.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            self._local.conn = conn
        return conn

    def _drop(self):
        conn = getattr(self._local, "conn", None)
        if conn is not None:
            conn.close()
        self._local.conn = None

    def request(self, method: str, path: str, body: dict | None = None) -> dict:
        data = _encode(body) if body is not None else None
        headers = {"Content-Type": "application/json"} if data is not None else {}
        # A pooled connection may have been closed by the server; retry once on a fresh one.
        for attempt in (0, 1):
            try:
                conn = self._conn()
                conn.request(method, path, body=data, headers=headers)
                resp = conn.getresponse()
                payload = resp.read()
                break
            except (ConnectionError, http.client.RemoteDisconnected, http.client.CannotSendRequest,
                    http.client.BadStatusLine) as e:
                self._drop()
                if attempt == 1 or isinstance(e, ConnectionRefusedError):
                    raise
            except OSError:
                self._drop()
                raise
        result = json.loads(payload) if payload else {}
        if resp.status >= 300:
            raise RemoteError(resp.status, result)
        return result

    def post(self, path: str, body: dict) -> dict:
        return self.request("POST", path, body)

    def get(self, path: str) -> dict:
        return self.request("GET", path)

    def close(self):
        self._drop()


class LocalClient:
    """Calls an app in-process, round-tripping bodies through JSON like the wire does."""

    def __init__(self, app: ServiceApp, name: str | None = None):
        self.app = app
        self.name = name or app.role

    def request(self, method: str, path: str, body: dict | None = None) -> dict:
        decoded = json.loads(_encode(body)) if body is not None else {}
        status, result = self.app.dispatch(method, path, decoded)
        result = json.loads(_encode(result))
        if status >= 300:
            raise RemoteError(status, result)
        return result

    def post(self, path: str, body: dict) -> dict:
        return self.request("POST", path, body)

    def get(self, path: str) -> dict:
        return self.request("GET", path)

    def close(self):
        pass


class UnreachableClient:
    """Client for a service that is down; every call fails like a refused connection."""

    def __init__(self, name: str = "unreachable"):
        self.name = name

    def request(self, method, path, body=None):
        raise ConnectionRefusedError(f"{self.name} is unreachable")

    def post(self, path, body):
        return self.request("POST", path, body)

    def get(self, path):
        return self.request("GET", path)

    def close(self):
        pass


def wait_healthy(client, attempts: int = 100, delay_s: float = 0.05) -> bool:
    for _ in range(attempts):
        try:
            if client.get("/health").get("status") == "ok":
                return True
        except (OSError, RemoteError, http.client.HTTPException):
            pass
        time.sleep(delay_s)
    return False
