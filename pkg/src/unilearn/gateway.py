"""HTTP gateway: the service broker in front of login, content, search and delivery.

Every call is an envelope POSTed to ``/service``.  The broker checks the
session (except for ``login/login``), resolves the target through the
registry, runs the handler, and for content requests passes the stored
item through the adapter for the detected device.

Endpoints::

    POST /service          envelope in, envelope out
    GET  /registry         all WSDL-lite descriptions under <Registry>
    GET  /registry/{name}  one description, or 404
"""

from __future__ import annotations

import argparse
import getpass
import itertools
import logging
import queue
import sys
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable, Mapping, NamedTuple

from unilearn import adapter
from unilearn.auth import Credential, LoginService, format_user_line
from unilearn.config import GatewayConfig, load_config
from unilearn.envelope import (
    DeviceClass,
    EnvelopeHeader,
    FaultCode,
    MessageEnvelope,
    Request,
    build_fault,
    build_response,
    parse,
    serialize,
)
from unilearn.errors import EnvelopeError, UnilearnError
from unilearn.markup import escape_attr
from unilearn.registry import OperationSig, RegistryError, ServiceDescriptor, ServiceRegistry
from unilearn.store import ROSTER_ID, ContentStore, load_store

logger = logging.getLogger(__name__)

MAX_BODY_BYTES = 1 << 20
XML_CONTENT_TYPE = "application/xml"

FAULT_STATUS: Mapping[FaultCode, int] = {
    FaultCode.MALFORMED: 400,
    FaultCode.AUTH_REQUIRED: 401,
    FaultCode.AUTH_FAILED: 401,
    FaultCode.NOT_FOUND: 404,
    FaultCode.UNSUPPORTED_OPERATION: 400,
    FaultCode.INTERNAL: 500,
}


def service_descriptors(endpoint: str) -> list[ServiceDescriptor]:
    """The four services the gateway hosts, all reachable at ``endpoint``."""
    get = OperationSig("get", ("course", "id"), adapter.HTML)
    return [
        ServiceDescriptor(
            "login",
            frozenset({"login", "auth"}),
            (
                OperationSig("login", ("username", "password"), XML_CONTENT_TYPE),
                OperationSig("logout", (), XML_CONTENT_TYPE),
            ),
            endpoint,
        ),
        ServiceDescriptor("content", frozenset({"content", "cms"}), (get,), endpoint),
        ServiceDescriptor(
            "search", frozenset({"search"}), (OperationSig("find", ("query",), XML_CONTENT_TYPE),), endpoint
        ),
        ServiceDescriptor("delivery", frozenset({"delivery"}), (get,), endpoint),
    ]


# ---------------------------------------------------------------------------
# Access log
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DispatchRecord:
    request_id: int
    service: str
    operation: str
    fault_code: str | None
    response_bytes: int
    elapsed_micros: int

    def line(self) -> str:
        return "\t".join(
            (
                str(self.request_id),
                self.service,
                self.operation,
                self.fault_code or "-",
                str(self.response_bytes),
                str(self.elapsed_micros),
            )
        )


class AccessLog:
    """Append-only dispatch log written by a background thread.

    Ids are assigned under the same lock that enqueues the record, so the
    file is in strictly increasing ``request_id`` order.
    """

    def __init__(self, path: Path | None) -> None:
        self.path = path
        self._ids = itertools.count(1)
        self._lock = threading.Lock()
        self._queue: queue.SimpleQueue[DispatchRecord | None] = queue.SimpleQueue()
        self._thread: threading.Thread | None = None
        self.count = 0
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            self._thread = threading.Thread(target=self._drain, name="access-log", daemon=True)
            self._thread.start()

    def emit(
        self, service: str, operation: str, fault_code: str | None, response_bytes: int, elapsed_micros: int
    ) -> DispatchRecord:
        with self._lock:
            record = DispatchRecord(
                next(self._ids), service, operation, fault_code, response_bytes, elapsed_micros
            )
            self.count += 1
            if self._thread is not None:
                self._queue.put(record)
        return record

    def _drain(self) -> None:
        assert self.path is not None
        with self.path.open("a", encoding="utf-8") as handle:
            while True:
                record = self._queue.get()
                if record is None:
                    break
                handle.write(record.line() + "\n")
                if self._queue.empty():
                    handle.flush()

    def close(self) -> None:
        if self._thread is not None:
            self._queue.put(None)
            self._thread.join()
            self._thread = None


# ---------------------------------------------------------------------------
# Gateway
# ---------------------------------------------------------------------------


class HttpReply(NamedTuple):
    status: int
    body: bytes
    content_type: str = XML_CONTENT_TYPE


def _fault(code: FaultCode, reason: str) -> MessageEnvelope:
    return build_fault(code, reason)


def _fault_for(exc: UnilearnError) -> MessageEnvelope:
    try:
        code = FaultCode(exc.code)
    except ValueError:
        code = FaultCode.MALFORMED
    return _fault(code, exc.message)


# handler(request, header, user_agent, device_hint) -> reply envelope
Handler = Callable[[Request, EnvelopeHeader, "str | None", "str | None"], MessageEnvelope]


class Gateway:
    def __init__(
        self,
        config: GatewayConfig,
        store: ContentStore,
        login_service: LoginService,
        registry: ServiceRegistry,
        *,
        clock: Callable[[], float] = time.time,
    ) -> None:
        self.config = config
        self.store = store
        self.login_service = login_service
        self.registry = registry
        self.clock = clock
        self.access_log = AccessLog(config.access_log)
        self._server: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None
        self._handlers: dict[tuple[str, str], Handler] = {
            ("login", "login"): self._login,
            ("login", "logout"): self._logout,
            ("content", "get"): self._content_get,
            ("delivery", "get"): self._content_get,
            ("search", "find"): self._search,
        }

    # -- lifecycle ---------------------------------------------------------

    @classmethod
    def startup(
        cls, config: GatewayConfig, *, clock: Callable[[], float] = time.time, listen: bool = True
    ) -> Gateway:
        """Load everything, bind the listener and self-register; fail fast on any error."""
        config.validate()
        store = load_store(config.content_dir)
        try:
            login_service = LoginService.from_file(config.user_file, config.session_ttl_seconds)
        except (OSError, ValueError) as exc:
            raise UnilearnError("BAD_CONFIG", f"user_file {config.user_file}: {exc}") from None

        server = None
        host, port = config.host_port
        if listen:
            server = _Server((host, port), _RequestHandler)
            host, port = server.server_address[:2]
        registry = ServiceRegistry(service_descriptors(f"http://{host}:{port}/service"))
        gateway = cls(config, store, login_service, registry, clock=clock)
        if server is not None:
            server.gateway = gateway
            gateway._server = server
        if config.registry_snapshot is not None:
            registry.save_snapshot(config.registry_snapshot)
        logger.info("gateway ready on %s:%s with %d items", host, port, len(store))
        return gateway

    @property
    def address(self) -> tuple[str, int]:
        if self._server is None:
            raise RuntimeError("gateway is not listening")
        host, port = self._server.server_address[:2]
        return host, port

    @property
    def endpoint(self) -> str:
        host, port = self.address
        return f"http://{host}:{port}"

    def start(self) -> Gateway:
        """Serve in a background thread."""
        if self._server is None:
            raise RuntimeError("gateway was started without a listener")
        self._thread = threading.Thread(
            target=self._server.serve_forever, kwargs={"poll_interval": 0.05}, name="gateway", daemon=True
        )
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        if self._server is None:
            raise RuntimeError("gateway was started without a listener")
        self._server.serve_forever()

    def close(self) -> None:
        if self._server is not None:
            if self._thread is not None:
                self._server.shutdown()
                self._thread.join()
            self._server.server_close()
            self._server = None
        self.access_log.close()

    def __enter__(self) -> Gateway:
        return self

    def __exit__(self, *_exc: object) -> None:
        self.close()

    # -- broker ------------------------------------------------------------

    def dispatch(
        self,
        envelope: MessageEnvelope,
        user_agent: str | None = None,
        device_hint: str | None = None,
    ) -> MessageEnvelope:
        """Route one request envelope.  Domain failures come back as Fault envelopes."""
        request = envelope.body
        if not isinstance(request, Request):
            return _fault(FaultCode.MALFORMED, "expected a Request body")
        try:
            if (request.service, request.operation) != ("login", "login"):
                self.login_service.verify(envelope.header.session, self.clock())
            handler = self._route(request)
            return handler(request, envelope.header, user_agent, device_hint)
        except UnilearnError as exc:
            return _fault_for(exc)
        except Exception:
            logger.exception("handler crashed for %s/%s", request.service, request.operation)
            return _fault(FaultCode.INTERNAL, "internal error")

    def _route(self, request: Request) -> Handler:
        matches = self.registry.find(request.service)
        descriptor = matches[0] if matches and matches[0].name == request.service else None
        op = descriptor.operation(request.operation) if descriptor else None
        handler = self._handlers.get((request.service, request.operation))
        if op is None or handler is None:
            raise UnilearnError(
                "UNSUPPORTED_OPERATION", f"no operation {request.operation!r} on service {request.service!r}"
            )
        missing = [p for p in op.param_names if request.param(p) is None]
        if missing:
            raise UnilearnError("MALFORMED", f"missing required param {missing[0]!r}")
        return handler

    def _profile(
        self, header: EnvelopeHeader, user_agent: str | None, device_hint: str | None
    ) -> adapter.DeviceProfile:
        override = header.device_class_override
        if override is None and device_hint:
            try:
                override = DeviceClass(device_hint.strip().lower())
            except ValueError:
                override = None
        return adapter.detect_device(
            override, user_agent, profiles=self.config.device_profiles, markers=self.config.mobile_markers
        )

    @staticmethod
    def _respond(request: Request, payload: str, content_type: str, truncated: bool = False, extra=()):
        meta = [("truncated", "true" if truncated else "false"), ("bytes", str(len(payload.encode("utf-8"))))]
        meta.extend(extra)
        return build_response(request.service, request.operation, payload, content_type, meta)

    def _login(self, request, header, user_agent, device_hint):
        credential = Credential(request.param("username") or "", request.param("password") or "")
        session = self.login_service.login(credential, self.clock())
        payload = (
            f'<Session token="{session.token}" username="{escape_attr(session.username)}" '
            f'expiresAt="{session.expires_at:.3f}"/>'
        )
        return self._respond(request, payload, XML_CONTENT_TYPE, extra=[("session", session.token)])

    def _logout(self, request, header, user_agent, device_hint):
        self.login_service.logout(header.session)
        return self._respond(request, "<Logout/>", XML_CONTENT_TYPE)

    def _content_get(self, request, header, user_agent, device_hint):
        fmt = request.param("format", "html")
        if fmt not in ("html", "xml"):
            raise UnilearnError("MALFORMED", f"format must be html or xml, not {fmt!r}")
        course = request.param("course") or ""
        item_id = request.param("id") or ""
        if item_id == ROSTER_ID:
            subject = self.store.get_roster(course)
        else:
            subject = self.store.get_item(course, item_id)
        profile = self._profile(header, user_agent, device_hint)
        rendered = adapter.adapt(subject, profile, fmt)
        return self._respond(
            request,
            rendered.text,
            rendered.content_type,
            rendered.truncated,
            extra=[("device", profile.device_class.value)],
        )

    def _search(self, request, header, user_agent, device_hint):
        query = request.param("query") or ""
        hits = self.store.search(query)
        rows = "".join(
            f'<Hit course="{escape_attr(h.course)}" id="{escape_attr(h.id)}" title="{escape_attr(h.title)}"/>'
            for h in hits
        )
        payload = f'<SearchResults query="{escape_attr(query)}" count="{len(hits)}">{rows}</SearchResults>'
        return self._respond(request, payload, XML_CONTENT_TYPE)

    # -- HTTP --------------------------------------------------------------

    def handle_http(self, method: str, path: str, headers: Mapping[str, str], body: bytes) -> HttpReply:
        """Map one HTTP exchange onto the broker.  Never raises for bad input."""
        route = path.split("?", 1)[0]
        if route == "/service":
            if method != "POST":
                return self._fault_reply(FaultCode.UNSUPPORTED_OPERATION, "use POST for /service", 405)
            return self._post_service(headers, body)
        if route == "/registry" or route.startswith("/registry/"):
            if method != "GET":
                return self._fault_reply(FaultCode.UNSUPPORTED_OPERATION, "use GET for /registry", 405)
            name = route[len("/registry/"):] if route.startswith("/registry/") else ""
            if not name:
                return HttpReply(200, self.registry.document().encode("utf-8"))
            try:
                return HttpReply(200, self.registry.describe(name).encode("utf-8"))
            except RegistryError as exc:
                return self._fault_reply(FaultCode.NOT_FOUND, exc.message)
        return self._fault_reply(FaultCode.NOT_FOUND, f"no resource at {route}")

    def _post_service(self, headers: Mapping[str, str], body: bytes) -> HttpReply:
        started = time.perf_counter()
        service = operation = "-"
        try:
            envelope = parse(body)
        except EnvelopeError as exc:
            reply_env = _fault(FaultCode.MALFORMED, exc.message)
        else:
            if isinstance(envelope.body, Request):
                service, operation = envelope.body.service, envelope.body.operation
            reply_env = self.dispatch(
                envelope, _header(headers, "User-Agent"), _header(headers, "X-Device-Class")
            )
        data = serialize(reply_env)
        fault = getattr(reply_env.body, "code", None)
        status = FAULT_STATUS[fault] if fault is not None else 200
        elapsed = int((time.perf_counter() - started) * 1_000_000)
        self.access_log.emit(service, operation, fault.value if fault else None, len(data), elapsed)
        return HttpReply(status, data)

    @staticmethod
    def _fault_reply(code: FaultCode, reason: str, status: int | None = None) -> HttpReply:
        return HttpReply(status or FAULT_STATUS[code], serialize(_fault(code, reason)))


def _header(headers: Mapping[str, str], name: str) -> str | None:
    value = headers.get(name)
    if value is None:
        lowered = name.lower()
        for key, candidate in headers.items():
            if key.lower() == lowered:
                return candidate
    return value


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    request_queue_size = 128
    gateway: Gateway


class _RequestHandler(BaseHTTPRequestHandler):
    server: _Server
    server_version = "unilearn-gateway/0.1"

    def _serve(self) -> None:
        body = b""
        length_header = self.headers.get("Content-Length")
        if length_header:
            try:
                length = int(length_header)
            except ValueError:
                length = -1
            if length < 0 or length > MAX_BODY_BYTES:
                reply = Gateway._fault_reply(FaultCode.MALFORMED, "bad or oversized Content-Length")
                self.close_connection = True
                self._write(reply)
                return
            body = self.rfile.read(length)
        try:
            reply = self.server.gateway.handle_http(
                self.command, self.path, dict(self.headers.items()), body
            )
        except Exception:
            logger.exception("unhandled error serving %s %s", self.command, self.path)
            reply = Gateway._fault_reply(FaultCode.INTERNAL, "internal error")
        self._write(reply)

    do_GET = do_POST = do_PUT = do_DELETE = do_PATCH = do_HEAD = do_OPTIONS = _serve

    def _write(self, reply: HttpReply) -> None:
        self.send_response(reply.status)
        self.send_header("Content-Type", f"{reply.content_type}; charset=utf-8")
        self.send_header("Content-Length", str(len(reply.body)))
        self.end_headers()
        if self.command != "HEAD":
            self.wfile.write(reply.body)

    def send_error(self, code: int, message: str | None = None, explain: str | None = None) -> None:
        # Keep every body an envelope, even for protocol-level errors.
        if code >= 500:
            fault = FaultCode.INTERNAL
        elif code == 404:
            fault = FaultCode.NOT_FOUND
        else:
            fault = FaultCode.MALFORMED
        self.close_connection = True
        body = serialize(_fault(fault, message or f"HTTP {code}"))
        try:
            self.send_response(code, message)
            self.send_header("Content-Type", f"{XML_CONTENT_TYPE}; charset=utf-8")
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Connection", "close")
            self.end_headers()
            if self.command != "HEAD":
                self.wfile.write(body)
        except OSError:
            pass

    def log_message(self, format: str, *args: object) -> None:
        logger.debug("%s - %s", self.address_string(), format % args)


# ---------------------------------------------------------------------------
# Command line
# ---------------------------------------------------------------------------


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="unilearn-gateway", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the gateway")
    serve.add_argument("--config", required=True, type=Path)

    adduser = sub.add_parser("adduser", help="append a user to a user file")
    adduser.add_argument("user_file", type=Path)
    adduser.add_argument("username")
    adduser.add_argument("--password", help="read interactively when omitted")

    demo = sub.add_parser("demo", help="write sample content, users and config into a directory")
    demo.add_argument("directory", type=Path)
    demo.add_argument("--port", type=int, default=8080)

    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s"
    )

    if args.command == "adduser":
        password = args.password if args.password is not None else getpass.getpass()
        with args.user_file.open("a", encoding="utf-8") as handle:
            handle.write(format_user_line(args.username, password) + "\n")
        return 0

    if args.command == "demo":
        from unilearn.demo import write_demo

        paths = write_demo(args.directory, port=args.port)
        print(f"wrote {paths.config}")
        return 0

    try:
        gateway = Gateway.startup(load_config(args.config))
    except (UnilearnError, OSError) as exc:
        print(f"unilearn-gateway: startup failed: {exc}", file=sys.stderr)
        return 2
    host, port = gateway.address
    print(f"listening on http://{host}:{port}/service", flush=True)
    try:
        gateway.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        gateway.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
