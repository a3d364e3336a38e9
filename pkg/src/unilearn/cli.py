"""Command-line learner client.

Plays either device class against a running gateway and prints a short
``key=value`` report for every call, followed by a blank line and the body::

    unilearn login -u ali -p SECRET
    unilearn --token T --device mobile get "DCS 202" intro
    unilearn --token T forum "DCS 202"
    unilearn --token T compare "DCS 202" bigitem

Exit status: 0 for a Response, 1 for a Fault, 2 for usage or transport errors.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import dataclass
from typing import IO, Mapping, NamedTuple, Sequence

from unilearn.envelope import (
    DeviceClass,
    EnvelopeHeader,
    Fault,
    MessageEnvelope,
    Response,
    build_request,
    parse,
    serialize,
)
from unilearn.errors import EnvelopeError

DEFAULT_ENDPOINT = "http://127.0.0.1:8080"
DEFAULT_USER_AGENT = "unilearn-cli/0.1"
TOKEN_ENV = "UNILEARN_TOKEN"
USER_AGENT_ENV = "UNILEARN_USER_AGENT"
TIMEOUT_SECONDS = 30.0

EXIT_OK = 0
EXIT_FAULT = 1
EXIT_ERROR = 2


class TransportError(Exception):
    pass


@dataclass(frozen=True)
class ClientReport:
    operation: str
    http_status: int
    fault_code: str | None
    payload_bytes: int
    truncated: bool
    elapsed_micros: int

    def lines(self) -> list[str]:
        return [
            f"operation={self.operation}",
            f"http_status={self.http_status}",
            f"fault_code={self.fault_code or '-'}",
            f"payload_bytes={self.payload_bytes}",
            f"truncated={'true' if self.truncated else 'false'}",
            f"elapsed_micros={self.elapsed_micros}",
        ]

    @property
    def exit_code(self) -> int:
        return EXIT_FAULT if self.fault_code else EXIT_OK


@dataclass(frozen=True)
class ClientSession:
    endpoint: str
    token: str | None = None
    device: str = "auto"
    user_agent: str = DEFAULT_USER_AGENT


class Exchange(NamedTuple):
    report: ClientReport
    body: bytes  # payload (or registry document) bytes
    raw: bytes  # full HTTP response body
    envelope: MessageEnvelope | None


def _http(method: str, url: str, data: bytes | None, headers: Mapping[str, str]) -> tuple[int, bytes]:
    request = urllib.request.Request(url, data=data, method=method, headers=dict(headers))
    try:
        with urllib.request.urlopen(request, timeout=TIMEOUT_SECONDS) as reply:
            return reply.status, reply.read()
    except urllib.error.HTTPError as exc:
        with exc:
            return exc.code, exc.read()
    except (urllib.error.URLError, OSError) as exc:
        raise TransportError(f"cannot reach {url}: {exc}") from None


def call(session: ClientSession, service: str, operation: str, params: Sequence[tuple[str, str]]) -> Exchange:
    """POST one request envelope and summarise the reply."""
    override = None if session.device == "auto" else DeviceClass(session.device)
    header = EnvelopeHeader(session.token, override)
    data = serialize(build_request(service, operation, params, header))
    started = time.perf_counter()
    status, raw = _http(
        "POST",
        session.endpoint.rstrip("/") + "/service",
        data,
        {"Content-Type": "application/xml", "User-Agent": session.user_agent},
    )
    elapsed = int((time.perf_counter() - started) * 1_000_000)
    try:
        envelope = parse(raw)
    except EnvelopeError as exc:
        raise TransportError(f"gateway sent an unreadable reply (HTTP {status}): {exc.message}") from None
    name = f"{service}/{operation}"
    body = envelope.body
    if isinstance(body, Response):
        payload = body.payload.encode("utf-8")
        report = ClientReport(name, status, None, len(payload), body.meta_value("truncated") == "true", elapsed)
        return Exchange(report, payload, raw, envelope)
    if isinstance(body, Fault):
        return Exchange(ClientReport(name, status, body.code.value, 0, False, elapsed), b"", raw, envelope)
    raise TransportError("gateway replied with a Request envelope")


def describe(session: ClientSession, name: str) -> Exchange:
    url = session.endpoint.rstrip("/") + "/registry/" + urllib.parse.quote(name, safe="")
    started = time.perf_counter()
    status, raw = _http("GET", url, None, {"User-Agent": session.user_agent})
    elapsed = int((time.perf_counter() - started) * 1_000_000)
    if status == 200:
        return Exchange(ClientReport("registry/describe", status, None, len(raw), False, elapsed), raw, raw, None)
    try:
        envelope = parse(raw)
    except EnvelopeError as exc:
        raise TransportError(f"gateway sent an unreadable reply (HTTP {status}): {exc.message}") from None
    code = envelope.body.code.value if isinstance(envelope.body, Fault) else "INTERNAL"
    return Exchange(ClientReport("registry/describe", status, code, 0, False, elapsed), b"", raw, envelope)


# ---------------------------------------------------------------------------
# argv handling
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    out: IO[str] = sys.stdout
    err: IO[str] = sys.stderr

    def _print_message(self, message: str, file: IO[str] | None = None) -> None:
        if message:
            (self.err if file is sys.stderr or file is None else self.out).write(message)


def build_parser(out: IO[str], err: IO[str]) -> _Parser:
    parser = _Parser(prog="unilearn", description="Learner client for the unilearn gateway.")
    parser.add_argument("--endpoint", default=None, help=f"gateway base URL (default {DEFAULT_ENDPOINT})")
    parser.add_argument("--device", choices=("mobile", "desktop", "auto"), default="auto")
    parser.add_argument("--token", default=None, help=f"session token (default ${TOKEN_ENV})")
    parser.add_argument("--user-agent", default=None, help=f"User-Agent to send (default ${USER_AGENT_ENV})")
    parser.add_argument("--raw", action="store_true", help="print the reply envelope verbatim")
    parser.add_argument("--no-body", action="store_true", help="print the report only")

    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    login = sub.add_parser("login", help="start a session")
    login.add_argument("-u", "--username", required=True)
    login.add_argument("-p", "--password", required=True)
    sub.add_parser("logout", help="end the current session")
    get = sub.add_parser("get", help="fetch a content item")
    get.add_argument("course")
    get.add_argument("id")
    get.add_argument("--format", choices=("html", "xml"), default="html")
    get.add_argument("--service", choices=("content", "delivery"), default="content")
    forum = sub.add_parser("forum", help="fetch a course forum roster")
    forum.add_argument("course")
    forum.add_argument("--format", choices=("html", "xml"), default="html")
    search = sub.add_parser("search", help="search titles and text")
    search.add_argument("query")
    desc = sub.add_parser("describe", help="print a service description")
    desc.add_argument("service")
    compare = sub.add_parser("compare", help="fetch one item as both mobile and desktop")
    compare.add_argument("course")
    compare.add_argument("id")

    for p in (parser, *sub.choices.values()):
        p.out, p.err = out, err
    return parser


def _emit(
    out: IO[str], err: IO[str], exchange: Exchange, *, raw: bool, no_body: bool, extra: Sequence[str] = ()
) -> None:
    out.write("\n".join([*exchange.report.lines(), *extra]) + "\n")
    if exchange.envelope is not None and isinstance(exchange.envelope.body, Fault):
        err.write(f"unilearn: {exchange.envelope.body.code.value}: {exchange.envelope.body.reason}\n")
    if no_body:
        return
    body = exchange.raw if raw else exchange.body
    out.write("\n" + body.decode("utf-8", errors="replace") + "\n")


def run(
    argv: Sequence[str],
    stdout: IO[str] | None = None,
    stderr: IO[str] | None = None,
    env: Mapping[str, str] | None = None,
) -> int:
    out = stdout or sys.stdout
    err = stderr or sys.stderr
    env = os.environ if env is None else env
    parser = build_parser(out, err)
    try:
        args = parser.parse_args(list(argv))
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_ERROR

    session = ClientSession(
        endpoint=args.endpoint or env.get("UNILEARN_ENDPOINT", DEFAULT_ENDPOINT),
        token=args.token or env.get(TOKEN_ENV) or None,
        device=args.device,
        user_agent=args.user_agent or env.get(USER_AGENT_ENV, DEFAULT_USER_AGENT),
    )
    try:
        EnvelopeHeader(session.token)
    except EnvelopeError:
        err.write("unilearn: --token must be 32 lowercase hex characters\n")
        return EXIT_ERROR

    show = {"raw": args.raw, "no_body": args.no_body}
    try:
        if args.command == "login":
            ex = call(session, "login", "login", [("username", args.username), ("password", args.password)])
            token = ex.envelope.body.meta_value("session") if ex.report.fault_code is None else None
            _emit(out, err, ex, extra=[f"token={token}"] if token else (), **show)
            return ex.report.exit_code
        if args.command == "logout":
            ex = call(session, "login", "logout", [])
        elif args.command == "get":
            params = [("course", args.course), ("id", args.id), ("format", args.format)]
            ex = call(session, args.service, "get", params)
        elif args.command == "forum":
            params = [("course", args.course), ("id", "forum"), ("format", args.format)]
            ex = call(session, "content", "get", params)
        elif args.command == "search":
            ex = call(session, "search", "find", [("query", args.query)])
        elif args.command == "describe":
            ex = describe(session, args.service)
        else:
            return compare(session, args.course, args.id, out)
    except TransportError as exc:
        err.write(f"unilearn: {exc}\n")
        return EXIT_ERROR
    _emit(out, err, ex, **show)
    return ex.report.exit_code


def compare(session: ClientSession, course: str, item_id: str, out: IO[str]) -> int:
    """Fetch the same item as mobile and desktop and print both reports."""
    params = [("course", course), ("id", item_id)]
    reports = {}
    for device in ("mobile", "desktop"):
        view = ClientSession(session.endpoint, session.token, device, session.user_agent)
        reports[device] = call(view, "content", "get", params).report
    for device, report in reports.items():
        out.write(f"device={device}\n" + "\n".join(report.lines()) + "\n\n")
    delta = reports["desktop"].payload_bytes - reports["mobile"].payload_bytes
    out.write(f"byte_delta={delta}\n")
    return max(r.exit_code for r in reports.values())


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
