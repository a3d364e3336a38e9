"""In-process service registry with WSDL-lite description documents.

Providers ``publish`` a :class:`ServiceDescriptor`; requesters ``find`` it by
exact name or capability tag and fetch a ``describe`` document telling them
how to call it::

    <Service name="content" endpoint="http://HOST:PORT/service">
      <Capability>delivery</Capability>
      <Operation name="get" returns="text/html"><Param>course</Param><Param>id</Param></Operation>
    </Service>
"""

from __future__ import annotations

import os
import threading
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple

from unilearn.envelope import NAME_RE
from unilearn.errors import RegistryError
from unilearn.markup import escape_attr, escape_text, is_xml_safe
from unilearn.store import atomic_write


@dataclass(frozen=True)
class OperationSig:
    name: str
    param_names: tuple[str, ...] = ()
    returns: str = "application/xml"


@dataclass(frozen=True)
class ServiceDescriptor:
    name: str
    capabilities: frozenset[str]
    operations: tuple[OperationSig, ...]
    endpoint: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "capabilities", frozenset(self.capabilities))
        object.__setattr__(self, "operations", tuple(self.operations))

    def operation(self, name: str) -> OperationSig | None:
        for op in self.operations:
            if op.name == name:
                return op
        return None


class Registration(NamedTuple):
    name: str
    replaced: bool


def validate_descriptor(descriptor: ServiceDescriptor) -> None:
    def bad(message: str) -> RegistryError:
        return RegistryError("INVALID_DESCRIPTOR", f"{descriptor.name!r}: {message}")

    if not isinstance(descriptor.name, str) or not NAME_RE.match(descriptor.name):
        raise bad("name must match [a-z][a-z0-9_-]*")
    if not descriptor.endpoint or not is_xml_safe(descriptor.endpoint):
        raise bad("endpoint must be a non-empty URL")
    for cap in descriptor.capabilities:
        if not cap or not is_xml_safe(cap) or cap != cap.strip():
            raise bad(f"bad capability tag {cap!r}")
    if not descriptor.operations:
        raise bad("a service needs at least one operation")
    op_names: set[str] = set()
    for op in descriptor.operations:
        if not NAME_RE.match(op.name):
            raise bad(f"operation name {op.name!r} must match [a-z][a-z0-9_-]*")
        if op.name in op_names:
            raise bad(f"duplicate operation {op.name!r}")
        op_names.add(op.name)
        if len(set(op.param_names)) != len(op.param_names):
            raise bad(f"operation {op.name!r} repeats a parameter name")
        for value in (op.returns, *op.param_names):
            if not value or not is_xml_safe(value) or value != value.strip():
                raise bad(f"operation {op.name!r}: bad parameter name or return type {value!r}")


def describe_descriptor(descriptor: ServiceDescriptor) -> str:
    """Render the WSDL-lite document for one descriptor (deterministic)."""
    lines = [f'<Service name="{descriptor.name}" endpoint="{escape_attr(descriptor.endpoint)}">']
    for cap in sorted(descriptor.capabilities):
        lines.append(f"  <Capability>{escape_text(cap)}</Capability>")
    for op in descriptor.operations:
        params = "".join(f"<Param>{escape_text(p)}</Param>" for p in op.param_names)
        lines.append(f'  <Operation name="{op.name}" returns="{escape_attr(op.returns)}">{params}</Operation>')
    lines.append("</Service>")
    return "\n".join(lines)


def _descriptor_from_element(node: ET.Element) -> ServiceDescriptor:
    if node.tag != "Service":
        raise RegistryError("MALFORMED", f"expected <Service>, got <{node.tag}>")
    caps = []
    ops = []
    for child in node:
        if child.tag == "Capability":
            caps.append(child.text or "")
        elif child.tag == "Operation":
            params = tuple(p.text or "" for p in child if p.tag == "Param")
            ops.append(OperationSig(child.get("name", ""), params, child.get("returns", "")))
        else:
            raise RegistryError("MALFORMED", f"unexpected <{child.tag}> in <Service>")
    descriptor = ServiceDescriptor(node.get("name", ""), frozenset(caps), tuple(ops), node.get("endpoint", ""))
    validate_descriptor(descriptor)
    return descriptor


def parse_description(text: str | bytes) -> ServiceDescriptor:
    """Rebuild a descriptor from its WSDL-lite document."""
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise RegistryError("MALFORMED", f"not well-formed XML: {exc}") from None
    return _descriptor_from_element(root)


def parse_registry_document(text: str | bytes) -> list[ServiceDescriptor]:
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise RegistryError("MALFORMED", f"not well-formed XML: {exc}") from None
    if root.tag != "Registry":
        raise RegistryError("MALFORMED", f"expected <Registry>, got <{root.tag}>")
    return [_descriptor_from_element(child) for child in root]


class ServiceRegistry:
    """Descriptor directory.

    The table is copy-on-write: writers build a new dict under a lock and
    swap it in, so ``find``/``describe`` always see one consistent version
    without locking.
    """

    def __init__(self, descriptors: Iterable[ServiceDescriptor] = ()) -> None:
        self._services: dict[str, ServiceDescriptor] = {}
        self._lock = threading.Lock()
        for descriptor in descriptors:
            self.publish(descriptor)

    def __len__(self) -> int:
        return len(self._services)

    def names(self) -> list[str]:
        return sorted(self._services)

    def publish(self, descriptor: ServiceDescriptor) -> Registration:
        validate_descriptor(descriptor)
        with self._lock:
            replaced = descriptor.name in self._services
            self._services = {**self._services, descriptor.name: descriptor}
        return Registration(descriptor.name, replaced)

    def unpublish(self, name: str) -> Registration:
        with self._lock:
            if name not in self._services:
                raise RegistryError("NOT_FOUND", f"no service named {name!r}")
            services = dict(self._services)
            del services[name]
            self._services = services
        return Registration(name, True)

    def find(self, query: str) -> list[ServiceDescriptor]:
        """Exact name match wins; otherwise every service carrying the tag, by name."""
        services = self._services
        exact = services.get(query)
        if exact is not None:
            return [exact]
        return [services[n] for n in sorted(services) if query in services[n].capabilities]

    def lookup(self, name: str) -> ServiceDescriptor:
        try:
            return self._services[name]
        except KeyError:
            raise RegistryError("NOT_FOUND", f"no service named {name!r}") from None

    def describe(self, name: str) -> str:
        return describe_descriptor(self.lookup(name))

    def document(self) -> str:
        """All descriptors under one ``<Registry>`` root, sorted by name."""
        services = self._services
        body = "\n".join(describe_descriptor(services[n]) for n in sorted(services))
        return f"<Registry>\n{body}\n</Registry>" if body else "<Registry>\n</Registry>"

    def save_snapshot(self, path: str | os.PathLike[str]) -> None:
        atomic_write(Path(path), self.document().encode("utf-8") + b"\n")

    @classmethod
    def load_snapshot(cls, path: str | os.PathLike[str]) -> ServiceRegistry:
        return cls(parse_registry_document(Path(path).read_bytes()))
