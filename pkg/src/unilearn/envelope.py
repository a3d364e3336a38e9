"""XML message envelopes: the RPC unit carried on every gateway call.

Wire format::

    <Envelope version="1.0">
      <Header><Session>HEX32</Session><Device class="mobile"/></Header>
      <Body>
        <Request service="S" operation="O"><Param name="N">V</Param>...</Request>
        | <Response service="S" operation="O"><Meta name="N">V</Meta>...
              <Payload contentType="T">...markup...</Payload></Response>
        | <Fault code="C">reason</Fault>
      </Body>
    </Envelope>

Payload markup is embedded verbatim (it must itself be well-formed) and is
recovered byte-for-byte by :func:`parse`, so rendered HTML travels unchanged.
"""

from __future__ import annotations

import enum
import re
import xml.parsers.expat
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

from unilearn.errors import EnvelopeError
from unilearn.markup import escape_attr, escape_text, is_well_formed, is_xml_safe

PROTOCOL_VERSION = "1.0"

NAME_RE = re.compile(r"[a-z][a-z0-9_-]*\Z")
SESSION_RE = re.compile(r"[0-9a-f]{32}\Z")


class DeviceClass(str, enum.Enum):
    MOBILE = "mobile"
    DESKTOP = "desktop"


class FaultCode(str, enum.Enum):
    MALFORMED = "MALFORMED"
    AUTH_REQUIRED = "AUTH_REQUIRED"
    AUTH_FAILED = "AUTH_FAILED"
    NOT_FOUND = "NOT_FOUND"
    UNSUPPORTED_OPERATION = "UNSUPPORTED_OPERATION"
    INTERNAL = "INTERNAL"


@dataclass(frozen=True)
class EnvelopeHeader:
    session: str | None = None
    device_class_override: DeviceClass | None = None

    def __post_init__(self) -> None:
        if self.session is not None and not SESSION_RE.match(self.session):
            raise EnvelopeError("INVALID_SESSION", "session must be 32 lowercase hex characters")
        if self.device_class_override is not None:
            object.__setattr__(self, "device_class_override", DeviceClass(self.device_class_override))


@dataclass(frozen=True)
class Request:
    service: str
    operation: str
    params: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        _check_name("service", self.service)
        _check_name("operation", self.operation)
        params = tuple((str(n), str(v)) for n, v in self.params)
        seen: set[str] = set()
        for name, value in params:
            if name in seen:
                raise EnvelopeError("DUPLICATE_PARAM", f"duplicate param {name!r}")
            seen.add(name)
            if not is_xml_safe(name) or not is_xml_safe(value):
                raise EnvelopeError("INVALID_VALUE", f"param {name!r} holds characters XML cannot carry")
        object.__setattr__(self, "params", params)

    def param(self, name: str, default: str | None = None) -> str | None:
        for key, value in self.params:
            if key == name:
                return value
        return default


@dataclass(frozen=True)
class Response:
    service: str
    operation: str
    payload: str
    content_type: str = "application/xml"
    meta: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        _check_name("service", self.service)
        _check_name("operation", self.operation)
        meta = tuple((str(n), str(v)) for n, v in self.meta)
        for name, value in meta:
            if not is_xml_safe(name) or not is_xml_safe(value):
                raise EnvelopeError("INVALID_VALUE", f"meta {name!r} holds characters XML cannot carry")
        object.__setattr__(self, "meta", meta)
        if not is_xml_safe(self.content_type):
            raise EnvelopeError("INVALID_VALUE", "content type holds characters XML cannot carry")
        if not is_well_formed(self.payload):
            raise EnvelopeError("MALFORMED_PAYLOAD", "payload is not well-formed markup")

    def meta_value(self, name: str, default: str | None = None) -> str | None:
        for key, value in self.meta:
            if key == name:
                return value
        return default


@dataclass(frozen=True)
class Fault:
    code: FaultCode
    reason: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "code", FaultCode(self.code))
        if not self.reason:
            raise EnvelopeError("EMPTY_REASON", "fault reason must be non-empty")
        if not is_xml_safe(self.reason):
            raise EnvelopeError("INVALID_VALUE", "fault reason holds characters XML cannot carry")


Body = Union[Request, Response, Fault]


@dataclass(frozen=True)
class MessageEnvelope:
    header: EnvelopeHeader
    body: Body
    version: str = PROTOCOL_VERSION

    def __post_init__(self) -> None:
        if self.version != PROTOCOL_VERSION:
            raise EnvelopeError("UNSUPPORTED_VERSION", f"version {self.version!r}")
        if not isinstance(self.body, (Request, Response, Fault)):
            raise EnvelopeError("MALFORMED", "envelope body must be a Request, Response or Fault")


def _check_name(label: str, value: str) -> None:
    if not isinstance(value, str) or not NAME_RE.match(value):
        raise EnvelopeError("INVALID_NAME", f"{label} {value!r} must match [a-z][a-z0-9_-]*")


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------


def build_request(
    service: str,
    operation: str,
    params: Iterable[tuple[str, str]] = (),
    header: EnvelopeHeader | None = None,
) -> MessageEnvelope:
    return MessageEnvelope(header or EnvelopeHeader(), Request(service, operation, tuple(params)))


def build_response(
    service: str,
    operation: str,
    payload: str,
    content_type: str = "application/xml",
    meta: Sequence[tuple[str, str]] = (),
    header: EnvelopeHeader | None = None,
) -> MessageEnvelope:
    return MessageEnvelope(
        header or EnvelopeHeader(), Response(service, operation, payload, content_type, tuple(meta))
    )


def build_fault(code: FaultCode | str, reason: str) -> MessageEnvelope:
    return MessageEnvelope(EnvelopeHeader(), Fault(FaultCode(code), reason))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def serialize(envelope: MessageEnvelope) -> bytes:
    """Serialize to UTF-8 bytes. Equal envelopes always give identical bytes."""
    out = [f'<Envelope version="{escape_attr(envelope.version)}">']
    header = envelope.header
    out.append("<Header>")
    if header.session is not None:
        out.append(f"<Session>{header.session}</Session>")
    if header.device_class_override is not None:
        out.append(f'<Device class="{header.device_class_override.value}"/>')
    out.append("</Header><Body>")
    body = envelope.body
    if isinstance(body, Request):
        out.append(f'<Request service="{body.service}" operation="{body.operation}">')
        for name, value in body.params:
            out.append(f'<Param name="{escape_attr(name)}">{escape_text(value)}</Param>')
        out.append("</Request>")
    elif isinstance(body, Response):
        out.append(f'<Response service="{body.service}" operation="{body.operation}">')
        for name, value in body.meta:
            out.append(f'<Meta name="{escape_attr(name)}">{escape_text(value)}</Meta>')
        out.append(f'<Payload contentType="{escape_attr(body.content_type)}">{body.payload}</Payload>')
        out.append("</Response>")
    else:
        out.append(f'<Fault code="{body.code.value}">{escape_text(body.reason)}</Fault>')
    out.append("</Body></Envelope>")
    return "".join(out).encode("utf-8")


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


@dataclass
class _Node:
    tag: str
    attrib: dict[str, str]
    children: list[_Node] = field(default_factory=list)
    text: list[str] = field(default_factory=list)
    # Raw inner markup, only captured for <Payload>.
    raw: str | None = None

    @property
    def joined_text(self) -> str:
        return "".join(self.text)


class _TreeBuilder:
    """Minimal expat tree builder that keeps Payload contents as raw bytes."""

    def __init__(self, data: bytes) -> None:
        self.data = data
        self.parser = xml.parsers.expat.ParserCreate(encoding="UTF-8")
        # Unbuffered so CurrentByteIndex points at each text chunk.
        self.parser.buffer_text = False
        self.root: _Node | None = None
        self.stack: list[_Node] = []
        self.payload_depth = 0
        self.payload_node: _Node | None = None
        self.payload_inner_start: int | None = None

        p = self.parser
        p.StartElementHandler = self._start
        p.EndElementHandler = self._end
        p.CharacterDataHandler = self._chars
        p.CommentHandler = self._mark
        p.ProcessingInstructionHandler = self._mark_pi
        p.StartCdataSectionHandler = self._mark
        p.StartDoctypeDeclHandler = self._doctype

    def _doctype(self, *_args: object) -> None:
        raise EnvelopeError("MALFORMED", "DOCTYPE declarations are not accepted")

    def _note_payload_event(self) -> None:
        if self.payload_node is not None and self.payload_inner_start is None:
            self.payload_inner_start = self.parser.CurrentByteIndex

    def _mark(self, *_args: object) -> None:
        self._note_payload_event()

    def _mark_pi(self, *_args: object) -> None:
        self._note_payload_event()

    def _start(self, tag: str, attrib: dict[str, str]) -> None:
        self._note_payload_event()
        if self.payload_node is not None:
            self.payload_depth += 1
            return
        node = _Node(tag, attrib)
        if self.stack:
            self.stack[-1].children.append(node)
        else:
            self.root = node
        self.stack.append(node)
        if tag == "Payload" and len(self.stack) == 4:
            self.payload_node = node
            self.payload_depth = 0
            self.payload_inner_start = None

    def _end(self, tag: str) -> None:
        if self.payload_node is not None:
            if self.payload_depth:
                self._note_payload_event()
                self.payload_depth -= 1
                return
            end = self.parser.CurrentByteIndex
            start = self.payload_inner_start
            raw = b"" if start is None else self.data[start:end]
            self.payload_node.raw = raw.decode("utf-8")
            self.payload_node = None
        self.stack.pop()

    def _chars(self, text: str) -> None:
        self._note_payload_event()
        if self.payload_node is None:
            self.stack[-1].text.append(text)

    def build(self) -> _Node:
        try:
            self.parser.Parse(self.data, True)
        except xml.parsers.expat.ExpatError as exc:
            raise EnvelopeError(
                "MALFORMED",
                f"not well-formed XML at line {exc.lineno}, column {exc.offset}: "
                f"{xml.parsers.expat.ErrorString(exc.code)}",
            ) from None
        assert self.root is not None
        return self.root


def _malformed(message: str) -> EnvelopeError:
    return EnvelopeError("MALFORMED", message)


def _require_no_text(node: _Node) -> None:
    if node.joined_text.strip():
        raise _malformed(f"unexpected text inside <{node.tag}>")


def _require_leaf(node: _Node) -> None:
    if node.children:
        raise _malformed(f"<{node.tag}> must not contain elements")


def _attr(node: _Node, name: str) -> str:
    try:
        return node.attrib[name]
    except KeyError:
        raise _malformed(f"<{node.tag}> lacks attribute {name!r}") from None


def parse(text: bytes | str) -> MessageEnvelope:
    """Parse envelope bytes; raises EnvelopeError MALFORMED or UNSUPPORTED_VERSION."""
    data = text.encode("utf-8") if isinstance(text, str) else bytes(text)
    root = _TreeBuilder(data).build()
    if root.tag != "Envelope":
        raise _malformed(f"root element is <{root.tag}>, expected <Envelope>")
    if "version" not in root.attrib:
        raise _malformed("<Envelope> lacks a version attribute")
    if root.attrib["version"] != PROTOCOL_VERSION:
        raise EnvelopeError("UNSUPPORTED_VERSION", f"unsupported version {root.attrib['version']!r}")
    _require_no_text(root)

    headers = [c for c in root.children if c.tag == "Header"]
    bodies = [c for c in root.children if c.tag == "Body"]
    extras = [c.tag for c in root.children if c.tag not in ("Header", "Body")]
    if extras:
        raise _malformed(f"unexpected element <{extras[0]}> in <Envelope>")
    if len(headers) > 1 or len(bodies) != 1:
        raise _malformed("envelope needs at most one <Header> and exactly one <Body>")
    header = _parse_header(headers[0]) if headers else EnvelopeHeader()

    body_node = bodies[0]
    _require_no_text(body_node)
    if len(body_node.children) != 1:
        raise _malformed(f"<Body> holds {len(body_node.children)} variants, expected exactly one")
    variant = body_node.children[0]
    try:
        if variant.tag == "Request":
            body: Body = _parse_request(variant)
        elif variant.tag == "Response":
            body = _parse_response(variant)
        elif variant.tag == "Fault":
            body = _parse_fault(variant)
        else:
            raise _malformed(f"unknown body element <{variant.tag}>")
    except EnvelopeError as exc:
        if exc.code == "MALFORMED":
            raise
        raise _malformed(exc.message) from None
    return MessageEnvelope(header, body)


def _parse_header(node: _Node) -> EnvelopeHeader:
    _require_no_text(node)
    session = None
    device = None
    for child in node.children:
        if child.tag == "Session":
            _require_leaf(child)
            if session is not None:
                raise _malformed("duplicate <Session>")
            session = child.joined_text
            if not SESSION_RE.match(session):
                raise _malformed("session must be 32 lowercase hex characters")
        elif child.tag == "Device":
            if device is not None:
                raise _malformed("duplicate <Device>")
            try:
                device = DeviceClass(_attr(child, "class"))
            except ValueError:
                raise _malformed(f"unknown device class {child.attrib['class']!r}") from None
        # Unknown header elements are ignored for forward compatibility.
    return EnvelopeHeader(session, device)


def _parse_request(node: _Node) -> Request:
    _require_no_text(node)
    params = []
    for child in node.children:
        if child.tag != "Param":
            raise _malformed(f"unexpected <{child.tag}> in <Request>")
        _require_leaf(child)
        params.append((_attr(child, "name"), child.joined_text))
    return Request(_attr(node, "service"), _attr(node, "operation"), tuple(params))


def _parse_response(node: _Node) -> Response:
    _require_no_text(node)
    meta = []
    payload: _Node | None = None
    for child in node.children:
        if child.tag == "Meta" and payload is None:
            _require_leaf(child)
            meta.append((_attr(child, "name"), child.joined_text))
        elif child.tag == "Payload" and payload is None:
            payload = child
        else:
            raise _malformed(f"unexpected <{child.tag}> in <Response>")
    if payload is None:
        raise _malformed("<Response> lacks a <Payload>")
    assert payload.raw is not None
    return Response(
        _attr(node, "service"),
        _attr(node, "operation"),
        payload.raw,
        _attr(payload, "contentType"),
        tuple(meta),
    )


def _parse_fault(node: _Node) -> Fault:
    _require_leaf(node)
    code = _attr(node, "code")
    try:
        fault_code = FaultCode(code)
    except ValueError:
        raise _malformed(f"unknown fault code {code!r}") from None
    return Fault(fault_code, node.joined_text)
