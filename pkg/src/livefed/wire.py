"""HTTP plumbing shared by nodes and the coordinator.

Two client transports implement ``request(method, url, headers, body)``:
:class:`HttpTransport` talks real HTTP/1.1, :class:`LocalTransport` dispatches
to in-process handlers keyed by ``host:port`` (used by tests and fault
injection). Both count the bytes they move so cache revalidation savings can
be measured.
"""

from __future__ import annotations

import http.client
import json
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, quote, urlencode, urlsplit

from livefed import values as V
from livefed.errors import SchemaMismatch, SourceUnavailable
from livefed.values import ColumnType


@dataclass
class Response:
    status: int
    headers: dict = field(default_factory=dict)
    body: bytes = b""

    def header(self, name: str, default=None):
        low = name.lower()
        for k, v in self.headers.items():
            if k.lower() == low:
                return v
        return default

    @property
    def etag(self) -> str | None:
        tag = self.header("ETag")
        return unquote_etag(tag) if tag is not None else None

    def json(self):
        return json.loads(self.body) if self.body else None


def json_response(status: int, obj, headers: dict | None = None) -> Response:
    body = json.dumps(obj, separators=(",", ":")).encode()
    h = {"Content-Type": "application/json"}
    h.update(headers or {})
    return Response(status, h, body)


def error_response(status: int, message: str, **extra) -> Response:
    return json_response(status, {"error": message, **extra})


def quote_etag(tag: str) -> str:
    return f'"{tag}"'


def unquote_etag(tag: str) -> str:
    tag = tag.strip()
    if tag.startswith("W/"):
        tag = tag[2:]
    if len(tag) >= 2 and tag[0] == tag[-1] == '"':
        return tag[1:-1]
    return tag


def etag_list(header: str) -> list[str]:
    """Split an If-None-Match / If-Match header value.

    Validators themselves contain commas, so only quoted lists are split.
    """
    header = header.strip()
    if header == "*":
        return ["*"]
    if header.startswith('"') or header.startswith("W/"):
        out, i = [], 0
        while i < len(header):
            j = header.find('"', i)
            if j < 0:
                break
            k = header.find('"', j + 1)
            if k < 0:
                break
            out.append(header[j + 1:k])
            i = k + 1
        return out
    return [header]


# -- result bodies -------------------------------------------------------------


def encode_result(rs, extra: dict | None = None) -> dict:
    obj = {
        "columns": [{"name": n, "type": t.value if isinstance(t, ColumnType) else None} for n, t in rs.columns],
        "rows": [[V.to_json(v) for v in r] for r in rs.rows],
    }
    if rs.row_validators is not None:
        obj["rowValidators"] = list(rs.row_validators)
    obj.update(extra or {})
    return obj


def decode_rows(obj: dict, declared) -> list[tuple]:
    """Type remote rows against ``declared`` ``[(name, ColumnType)]``."""
    remote = obj.get("columns", [])
    if len(remote) != len(declared):
        raise SchemaMismatch(f"remote has {len(remote)} columns, view declares {len(declared)}")
    for rc, (name, ty) in zip(remote, declared):
        rt = rc.get("type")
        if rt is not None and not V.compatible(ColumnType(rt), ty):
            raise SchemaMismatch(f"remote column {rc.get('name')} is {rt}, view declares {name} {ty.value}")
    rows = []
    for r in obj.get("rows", []):
        if len(r) != len(declared):
            raise SchemaMismatch("remote row arity differs from the declared view")
        try:
            rows.append(tuple(V.from_json(v, ty) for v, (_, ty) in zip(r, declared)))
        except V.TypeMismatch as e:
            raise SchemaMismatch(str(e)) from None
    return rows


def decode_result_columns(obj: dict):
    return [(c["name"], ColumnType(c["type"]) if c.get("type") else None) for c in obj.get("columns", [])]


# -- URLs --------------------------------------------------------------------------


def with_query(url: str, **params) -> str:
    q = {k: v for k, v in params.items() if v is not None}
    if not q:
        return url
    return url + ("&" if "?" in url else "?") + urlencode(q, quote_via=quote)


def key_path(url: str, key_values) -> str:
    segs = "/".join(quote(str(V.to_json(v)), safe="") for v in key_values)
    base, _, query = url.partition("?")
    return f"{base.rstrip('/')}/{segs}" + (f"?{query}" if query else "")


def split_target(target: str) -> tuple[list[str], dict[str, str]]:
    parts = urlsplit(target)
    from urllib.parse import unquote

    segs = [unquote(s) for s in parts.path.split("/") if s]
    params = {k: v[-1] for k, v in parse_qs(parts.query, keep_blank_values=True).items()}
    return segs, params


# -- transports -----------------------------------------------------------------------


@dataclass
class Counters:
    requests: int = 0
    result_bytes: int = 0  # bodies of successful GETs (query results)
    result_bodies: int = 0
    other_bytes: int = 0
    statuses: dict = field(default_factory=dict)

    def reset(self) -> None:
        self.requests = self.result_bytes = self.result_bodies = self.other_bytes = 0
        self.statuses = {}

    def record(self, method: str, request_body: bytes, resp: Response) -> None:
        self.requests += 1
        self.statuses[resp.status] = self.statuses.get(resp.status, 0) + 1
        self.other_bytes += len(request_body or b"")
        if method == "GET" and resp.status == 200:
            self.result_bytes += len(resp.body)
            self.result_bodies += 1
        else:
            self.other_bytes += len(resp.body)


class Transport:
    def __init__(self):
        self.counters = Counters()
        self._lock = threading.Lock()

    def request(self, method: str, url: str, headers: dict | None = None, body: bytes | str | None = None) -> Response:
        if isinstance(body, str):
            body = body.encode()
        resp = self._send(method, url, dict(headers or {}), body or b"")
        with self._lock:
            self.counters.record(method, body or b"", resp)
        return resp

    def _send(self, method, url, headers, body) -> Response:
        raise NotImplementedError

    def get_json(self, url: str, headers: dict | None = None):
        return self.request("GET", url, headers)

    def post_json(self, url: str, obj, headers: dict | None = None) -> Response:
        h = {"Content-Type": "application/json", **(headers or {})}
        return self.request("POST", url, h, json.dumps(obj).encode())


class HttpTransport(Transport):
    """Real HTTP. ``aliases`` maps ``host:port`` in view URLs to reachable ones."""

    def __init__(self, aliases: dict | None = None, timeout: float = 10.0):
        super().__init__()
        self.aliases = dict(aliases or {})
        self.timeout = timeout

    def _send(self, method, url, headers, body) -> Response:
        parts = urlsplit(url)
        netloc = self.aliases.get(parts.netloc, parts.netloc)
        host, _, port = netloc.partition(":")
        target = parts.path + (f"?{parts.query}" if parts.query else "")
        conn = http.client.HTTPConnection(host, int(port or 80), timeout=self.timeout)
        try:
            conn.request(method, target, body=body, headers=headers)
            r = conn.getresponse()
            data = r.read()
            return Response(r.status, dict(r.getheaders()), data)
        except (OSError, http.client.HTTPException) as e:
            raise SourceUnavailable(url, str(e)) from None
        finally:
            conn.close()


class LocalTransport(Transport):
    """In-process dispatch to objects with ``handle(method, target, headers, body)``."""

    def __init__(self):
        super().__init__()
        self.handlers: dict[str, object] = {}

    def register(self, netloc: str, handler) -> None:
        self.handlers[netloc] = handler

    def _send(self, method, url, headers, body) -> Response:
        parts = urlsplit(url)
        h = self.handlers.get(parts.netloc)
        if h is None or getattr(h, "down", False):
            raise SourceUnavailable(url, "connection refused")
        target = parts.path + (f"?{parts.query}" if parts.query else "")
        resp = h.handle(method, target, {k.lower(): v for k, v in headers.items()}, body)
        if resp is None:  # handler crashed before replying
            raise SourceUnavailable(url, "connection reset")
        return resp


# -- server ------------------------------------------------------------------------------


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    app = None

    def _dispatch(self):
        n = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(n) if n else b""
        headers = {k.lower(): v for k, v in self.headers.items()}
        resp = self.app.handle(self.command, self.path, headers, body)
        if resp is None:
            self.close_connection = True
            return
        self.send_response(resp.status)
        for k, v in resp.headers.items():
            self.send_header(k, v)
        self.send_header("Content-Length", str(len(resp.body)))
        self.end_headers()
        if resp.body and self.command != "HEAD":
            self.wfile.write(resp.body)

    do_GET = do_PUT = do_POST = do_DELETE = _dispatch

    def log_message(self, fmt, *args):  # quiet
        pass


class Server:
    """A threaded HTTP server running ``app.handle`` in the background."""

    def __init__(self, app, host: str = "127.0.0.1", port: int = 0):
        handler = type("BoundHandler", (_Handler,), {"app": app})
        self.httpd = ThreadingHTTPServer((host, port), handler)
        self.httpd.daemon_threads = True
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    @property
    def address(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"{host}:{port}"

    @property
    def port(self) -> int:
        return self.httpd.server_address[1]

    def start(self) -> "Server":
        self.thread.start()
        return self

    def serve_forever(self) -> None:
        self.httpd.serve_forever()

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
