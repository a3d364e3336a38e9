"""Escaping and fragment helpers shared by the envelope, store and adapter.

Block fragments live here because the store needs their byte length to
stamp ``sizeBytes`` while the adapter emits the very same bytes.
"""

from __future__ import annotations

import html
import re
import xml.parsers.expat
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from unilearn.store import ContentBlock

# Characters permitted by XML 1.0 (production [2] Char).
_INVALID_XML_CHARS = re.compile("[^\t\n\r\x20-\ud7ff\ue000-\ufffd\U00010000-\U0010ffff]")

_TEXT_ESCAPES = {
    "&": "&amp;",
    "<": "&lt;",
    ">": "&gt;",
    '"': "&quot;",
    "'": "&apos;",
    # Parsers normalise a bare CR to LF; keep it explicit.
    "\r": "&#13;",
}
_ATTR_ESCAPES = {**_TEXT_ESCAPES, "\t": "&#9;", "\n": "&#10;"}
_TEXT_RE = re.compile("[&<>\"'\r]")
_ATTR_RE = re.compile("[&<>\"'\r\n\t]")

MEDIA_PLACEHOLDER_LABEL = "[media]"


def is_xml_safe(value: str) -> bool:
    """True if every character of ``value`` may appear in an XML 1.0 document."""
    return _INVALID_XML_CHARS.search(value) is None


def escape_text(value: str) -> str:
    return _TEXT_RE.sub(lambda m: _TEXT_ESCAPES[m.group()], value)


def escape_attr(value: str) -> str:
    return _ATTR_RE.sub(lambda m: _ATTR_ESCAPES[m.group()], value)


def escape_html(value: str) -> str:
    return html.escape(value, quote=True)


def is_well_formed(markup: str) -> bool:
    """Check that ``markup`` is a well-formed XML fragment (content of one element)."""
    parser = xml.parsers.expat.ParserCreate(encoding="UTF-8")

    def _reject_doctype(*_args: object) -> None:
        raise ValueError("DOCTYPE not allowed in fragment")

    parser.StartDoctypeDeclHandler = _reject_doctype
    try:
        parser.Parse(b"<_f>" + markup.encode("utf-8") + b"</_f>", True)
    except (xml.parsers.expat.ExpatError, ValueError, UnicodeEncodeError):
        return False
    return True


def block_fragment(block: ContentBlock) -> str:
    """Render one content block as the HTML fragment the adapter emits."""
    if block.kind == "text":
        inner = escape_html(block.body)
    else:
        href = escape_html(block.body)
        label = MEDIA_PLACEHOLDER_LABEL if block.placeholder else href
        inner = f'<a href="{href}">{label}</a>'
    return f'<div class="block">{inner}</div>'


def fragment_size(block: ContentBlock) -> int:
    return len(block_fragment(block).encode("utf-8"))
