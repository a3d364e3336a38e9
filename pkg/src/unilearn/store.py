"""File-backed canonical content store.

Layout on disk::

    <root>/<COURSE>/<id>.xml     one ContentItem per file
    <root>/<COURSE>/forum.xml    the course ForumRoster

``COURSE`` is the course code with whitespace removed ("DCS 202" lives in
``DCS202/``); every lookup normalizes its course argument the same way.

Files are the source of truth.  The in-memory index is rebuilt by
:func:`load_store` and swapped wholesale on each write, so readers never
take a lock.  Writes go to a temporary file in the target directory and are
renamed into place.
"""

from __future__ import annotations

import os
import re
import tempfile
import threading
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Literal, NamedTuple, Union

from unilearn.errors import StoreError
from unilearn.markup import escape_attr, escape_text, fragment_size, is_xml_safe

BlockKind = Literal["text", "media", "interactive"]
BLOCK_KINDS: tuple[str, ...] = ("text", "media", "interactive")

ROSTER_ID = "forum"

_COURSE_KEY_RE = re.compile(r"[A-Za-z0-9_-]+\Z")
_ITEM_ID_RE = re.compile(r"[A-Za-z0-9][A-Za-z0-9_-]*\Z")
_WS_RE = re.compile(r"\s+")


def normalize_course(course: str) -> str:
    """Map a course code onto its directory key: ``"DCS 202"`` -> ``"DCS202"``."""
    return _WS_RE.sub("", course)


@dataclass(frozen=True)
class ContentBlock:
    kind: BlockKind
    priority: int
    essential: bool
    size_bytes: int
    body: str
    # Set only on adapter-generated stand-ins for media a device cannot show.
    placeholder: bool = False


@dataclass(frozen=True)
class ContentItem:
    course: str
    id: str
    title: str
    blocks: tuple[ContentBlock, ...] = ()

    @property
    def key(self) -> tuple[str, str]:
        return normalize_course(self.course), self.id


@dataclass(frozen=True)
class RosterEntry:
    matric_no: str
    name: str


@dataclass(frozen=True)
class ForumRoster:
    course: str
    entries: tuple[RosterEntry, ...] = ()


Subject = Union[ContentItem, ForumRoster]


class SearchHit(NamedTuple):
    course: str
    id: str
    title: str


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def make_block(
    kind: BlockKind, body: str, *, priority: int = 3, essential: bool = False
) -> ContentBlock:
    """Build a block with ``size_bytes`` computed from its rendered fragment."""
    block = ContentBlock(kind, priority, essential, 0, body)
    return replace(block, size_bytes=fragment_size(block))


def with_computed_sizes(item: ContentItem) -> ContentItem:
    return replace(
        item, blocks=tuple(replace(b, size_bytes=fragment_size(b)) for b in item.blocks)
    )


def validate_item(item: ContentItem, *, check_sizes: bool = True) -> None:
    """Raise ``StoreError(INVALID_ITEM)`` if ``item`` breaks a store invariant."""

    def bad(message: str) -> StoreError:
        return StoreError("INVALID_ITEM", f"{item.course!r}/{item.id!r}: {message}")

    if not _COURSE_KEY_RE.match(normalize_course(item.course)):
        raise bad("course code must be letters, digits, '_', '-' and spaces")
    if not _ITEM_ID_RE.match(item.id) or item.id == ROSTER_ID:
        raise bad(f"illegal item id (reserved: {ROSTER_ID!r})")
    for value in (item.course, item.title):
        if not is_xml_safe(value):
            raise bad("text holds characters XML cannot carry")
    for index, block in enumerate(item.blocks):
        if block.kind not in BLOCK_KINDS:
            raise bad(f"block {index}: unknown kind {block.kind!r}")
        if isinstance(block.priority, bool) or not isinstance(block.priority, int):
            raise bad(f"block {index}: priority must be an integer")
        if not 1 <= block.priority <= 5:
            raise bad(f"block {index}: priority {block.priority} outside 1..5")
        if not isinstance(block.essential, bool):
            raise bad(f"block {index}: essential must be a boolean")
        if isinstance(block.size_bytes, bool) or not isinstance(block.size_bytes, int) or block.size_bytes < 0:
            raise bad(f"block {index}: sizeBytes must be a non-negative integer")
        if block.placeholder:
            raise bad(f"block {index}: placeholders cannot be stored")
        if not is_xml_safe(block.body):
            raise bad(f"block {index}: body holds characters XML cannot carry")
        if check_sizes and block.size_bytes != fragment_size(block):
            raise bad(
                f"block {index}: sizeBytes {block.size_bytes} != rendered size {fragment_size(block)}"
            )


def validate_roster(roster: ForumRoster) -> None:
    if not _COURSE_KEY_RE.match(normalize_course(roster.course)):
        raise StoreError("INVALID_ROSTER", f"illegal course code {roster.course!r}")
    seen: set[str] = set()
    for entry in roster.entries:
        if not entry.matric_no:
            raise StoreError("INVALID_ROSTER", "empty matric number")
        if entry.matric_no in seen:
            raise StoreError("INVALID_ROSTER", f"duplicate matric number {entry.matric_no!r}")
        seen.add(entry.matric_no)
        if not (is_xml_safe(entry.matric_no) and is_xml_safe(entry.name)):
            raise StoreError("INVALID_ROSTER", "text holds characters XML cannot carry")


# ---------------------------------------------------------------------------
# XML representation
# ---------------------------------------------------------------------------


def _bool(value: bool) -> str:
    return "true" if value else "false"


def item_to_xml(item: ContentItem, blocks: tuple[ContentBlock, ...] | None = None) -> str:
    """Serialize ``item``; ``blocks`` restricts output to a selected subset."""
    lines = [
        f'<ContentItem course="{escape_attr(item.course)}" id="{escape_attr(item.id)}" '
        f'title="{escape_attr(item.title)}">'
    ]
    for block in item.blocks if blocks is None else blocks:
        extra = ' placeholder="true"' if block.placeholder else ""
        lines.append(
            f'  <Block kind="{block.kind}" priority="{block.priority}" '
            f'essential="{_bool(block.essential)}" sizeBytes="{block.size_bytes}"{extra}>'
            f"{escape_text(block.body)}</Block>"
        )
    lines.append("</ContentItem>")
    return "\n".join(lines)


def roster_to_xml(roster: ForumRoster) -> str:
    lines = [f'<ForumRoster course="{escape_attr(roster.course)}">']
    for entry in roster.entries:
        lines.append(
            f'  <Student matricNo="{escape_attr(entry.matric_no)}">{escape_text(entry.name)}</Student>'
        )
    lines.append("</ForumRoster>")
    return "\n".join(lines)


def _parse_bool(value: str) -> bool:
    if value == "true":
        return True
    if value == "false":
        return False
    raise ValueError(f"expected true/false, got {value!r}")


def _parse_int(value: str) -> int:
    if not re.fullmatch(r"-?[0-9]+", value):
        raise ValueError(f"expected an integer, got {value!r}")
    return int(value)


def parse_document(
    text: str | bytes, *, check_sizes: bool = True, allow_placeholders: bool = False
) -> Subject:
    """Parse an item or roster document.  Raises ``ValueError`` on bad input.

    ``allow_placeholders`` accepts adapter output, whose stand-in media blocks
    carry ``placeholder="true"``; store files never do.
    """
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise ValueError(f"not well-formed XML: {exc}") from None
    if root.tag == "ContentItem":
        blocks = []
        for child in root:
            if child.tag != "Block":
                raise ValueError(f"unexpected <{child.tag}> in <ContentItem>")
            kind = child.get("kind")
            if kind not in BLOCK_KINDS:
                raise ValueError(f"unknown block kind {kind!r}")
            if len(child):
                raise ValueError("<Block> must not contain elements")
            blocks.append(
                ContentBlock(
                    kind,  # type: ignore[arg-type]
                    _parse_int(child.get("priority", "")),
                    _parse_bool(child.get("essential", "")),
                    _parse_int(child.get("sizeBytes", "")),
                    child.text or "",
                    _parse_bool(child.get("placeholder", "false")),
                )
            )
        item = ContentItem(root.get("course", ""), root.get("id", ""), root.get("title", ""), tuple(blocks))
        if item.course == "" or item.id == "":
            raise ValueError("<ContentItem> needs course and id")
        checked = item
        if allow_placeholders:
            checked = replace(item, blocks=tuple(b for b in blocks if not b.placeholder))
        try:
            validate_item(checked, check_sizes=check_sizes)
        except StoreError as exc:
            raise ValueError(exc.message) from None
        return item
    if root.tag == "ForumRoster":
        entries = []
        for child in root:
            if child.tag != "Student":
                raise ValueError(f"unexpected <{child.tag}> in <ForumRoster>")
            entries.append(RosterEntry(child.get("matricNo", ""), child.text or ""))
        roster = ForumRoster(root.get("course", ""), tuple(entries))
        try:
            validate_roster(roster)
        except StoreError as exc:
            raise ValueError(exc.message) from None
        return roster
    raise ValueError(f"unknown document root <{root.tag}>")


# ---------------------------------------------------------------------------
# Atomic file writes
# ---------------------------------------------------------------------------


def atomic_write(path: Path, data: bytes) -> None:
    """Write ``data`` to ``path`` via a sibling temp file and ``os.replace``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


# ---------------------------------------------------------------------------
# Store
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Index:
    items: dict[tuple[str, str], ContentItem] = field(default_factory=dict)
    item_paths: dict[tuple[str, str], Path] = field(default_factory=dict)
    rosters: dict[str, ForumRoster] = field(default_factory=dict)
    roster_paths: dict[str, Path] = field(default_factory=dict)


class ContentStore:
    """Handle on a loaded content directory."""

    def __init__(self, root: Path, index: _Index) -> None:
        self.root = root
        self._index = index
        self._write_lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._index.items)

    def items(self) -> list[ContentItem]:
        index = self._index
        return [index.items[k] for k in sorted(index.items)]

    def rosters(self) -> list[ForumRoster]:
        index = self._index
        return [index.rosters[k] for k in sorted(index.rosters)]

    def get_item(self, course: str, item_id: str) -> ContentItem:
        try:
            return self._index.items[(normalize_course(course), item_id)]
        except KeyError:
            raise StoreError("NOT_FOUND", f"no item {item_id!r} in course {course!r}") from None

    def get_roster(self, course: str) -> ForumRoster:
        try:
            return self._index.rosters[normalize_course(course)]
        except KeyError:
            raise StoreError("NOT_FOUND", f"no forum roster for course {course!r}") from None

    def search(self, query: str) -> list[SearchHit]:
        """Case-insensitive substring match over titles and text-block bodies."""
        needle = query.casefold()
        hits = []
        for item in self._index.items.values():
            haystacks = [item.title] + [b.body for b in item.blocks if b.kind == "text"]
            if any(needle in h.casefold() for h in haystacks):
                hits.append(SearchHit(item.course, item.id, item.title))
        return sorted(hits)

    def put_item(self, item: ContentItem) -> ContentItem:
        """Persist ``item`` (sizes recomputed) and return the stored value."""
        item = with_computed_sizes(item)
        validate_item(item)
        with self._write_lock:
            index = self._index
            path = index.item_paths.get(item.key) or self.root / item.key[0] / f"{item.id}.xml"
            try:
                atomic_write(path, item_to_xml(item).encode("utf-8") + b"\n")
            except OSError as exc:
                raise StoreError("IO_ERROR", f"writing {path}: {exc}") from None
            self._index = _Index(
                {**index.items, item.key: item},
                {**index.item_paths, item.key: path},
                index.rosters,
                index.roster_paths,
            )
        return item

    def put_roster(self, roster: ForumRoster) -> ForumRoster:
        validate_roster(roster)
        key = normalize_course(roster.course)
        with self._write_lock:
            index = self._index
            path = index.roster_paths.get(key) or self.root / key / f"{ROSTER_ID}.xml"
            try:
                atomic_write(path, roster_to_xml(roster).encode("utf-8") + b"\n")
            except OSError as exc:
                raise StoreError("IO_ERROR", f"writing {path}: {exc}") from None
            self._index = _Index(
                index.items,
                index.item_paths,
                {**index.rosters, key: roster},
                {**index.roster_paths, key: path},
            )
        return roster

    def reload(self) -> ContentStore:
        """Re-read the directory from disk, replacing this handle's index."""
        fresh = load_store(self.root)
        with self._write_lock:
            self._index = fresh._index
        return self


def load_store(directory: str | os.PathLike[str]) -> ContentStore:
    """Load every ``<COURSE>/<name>.xml`` file, failing fast on the first bad one."""
    root = Path(directory)
    if not root.is_dir():
        raise StoreError("IO_ERROR", f"content directory {root} does not exist or is not a directory")
    index = _Index()
    try:
        files = sorted(p for p in root.glob("*/*.xml") if not p.name.startswith("."))
    except OSError as exc:
        raise StoreError("IO_ERROR", f"scanning {root}: {exc}") from None
    for path in files:
        try:
            data = path.read_bytes()
        except OSError as exc:
            raise StoreError("IO_ERROR", f"reading {path}: {exc}") from None
        try:
            doc = parse_document(data)
        except ValueError as exc:
            raise StoreError("MALFORMED_FILE", f"{path}: {exc}") from None
        if isinstance(doc, ContentItem):
            if doc.key in index.items:
                raise StoreError(
                    "DUPLICATE_KEY",
                    f"({doc.key[0]}, {doc.id}) defined by {index.item_paths[doc.key]} and {path}",
                )
            index.items[doc.key] = doc
            index.item_paths[doc.key] = path
        else:
            key = normalize_course(doc.course)
            if key in index.rosters:
                raise StoreError(
                    "DUPLICATE_KEY", f"({key}, {ROSTER_ID}) defined by {index.roster_paths[key]} and {path}"
                )
            index.rosters[key] = doc
            index.roster_paths[key] = path
    return ContentStore(root, index)
