"""Device detection and content adaptation.

The adapter sits between the store and the wire: it works out which class
of device is asking, trims an item's blocks to that device's payload
budget, and renders the result as an HTML page (or the store's XML).

Selection order for a finite budget:

1. media/interactive blocks become ``[media]`` link placeholders when the
   device cannot show media; the placeholder's own fragment size is what
   counts against the budget;
2. essential blocks are always kept;
3. the remaining blocks are taken in (priority, document position) order
   until the first one that would overflow the budget;
4. if the essentials alone overflow, only they are returned and the
   result is flagged truncated even if every block was essential.

The kept blocks are emitted in document order.  Stopping at the first
overflow (rather than skipping it and trying smaller blocks) keeps the
selection monotone in the budget.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, NamedTuple, Sequence

from unilearn.envelope import DeviceClass
from unilearn.markup import block_fragment, escape_html, fragment_size
from unilearn.store import ContentBlock, ContentItem, ForumRoster, Subject, item_to_xml, roster_to_xml

DEFAULT_MOBILE_MARKERS: tuple[str, ...] = (
    "mobile",
    "android",
    "iphone",
    "ipad",
    "opera mini",
    "windows phone",
)

HTML = "text/html"
XML = "application/xml"


@dataclass(frozen=True)
class DeviceProfile:
    device_class: DeviceClass
    max_payload_bytes: int | None  # None means unlimited
    supports_media: bool
    screen_width_px: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "device_class", DeviceClass(self.device_class))
        if self.device_class is DeviceClass.DESKTOP and self.max_payload_bytes is not None:
            raise ValueError("desktop profiles have an unlimited payload budget")
        if self.device_class is DeviceClass.MOBILE:
            if self.max_payload_bytes is None or self.max_payload_bytes <= 0:
                raise ValueError("mobile profiles need a positive, finite payload budget")
        if self.screen_width_px <= 0:
            raise ValueError("screen width must be positive")

    @property
    def unlimited(self) -> bool:
        return self.max_payload_bytes is None


MOBILE_PROFILE = DeviceProfile(DeviceClass.MOBILE, 16384, False, 360)
DESKTOP_PROFILE = DeviceProfile(DeviceClass.DESKTOP, None, True, 1280)
DEFAULT_PROFILES: Mapping[DeviceClass, DeviceProfile] = {
    DeviceClass.MOBILE: MOBILE_PROFILE,
    DeviceClass.DESKTOP: DESKTOP_PROFILE,
}


@dataclass(frozen=True)
class RenderedContent:
    content_type: str
    body: bytes
    truncated: bool
    byte_size: int = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "byte_size", len(self.body))

    @property
    def text(self) -> str:
        return self.body.decode("utf-8")


class Selection(NamedTuple):
    blocks: tuple[ContentBlock, ...]
    truncated: bool


def detect_device(
    override: DeviceClass | str | None = None,
    user_agent: str | None = None,
    *,
    profiles: Mapping[DeviceClass, DeviceProfile] = DEFAULT_PROFILES,
    markers: Iterable[str] = DEFAULT_MOBILE_MARKERS,
) -> DeviceProfile:
    """Resolve the requesting device: override, then user-agent markers, then desktop."""
    if override is not None:
        return profiles[DeviceClass(override)]
    if user_agent:
        agent = user_agent.casefold()
        if any(m.casefold() in agent for m in markers if m):
            return profiles[DeviceClass.MOBILE]
    return profiles[DeviceClass.DESKTOP]


def placeholder_for(block: ContentBlock) -> ContentBlock:
    stand_in = replace(block, placeholder=True)
    return replace(stand_in, size_bytes=fragment_size(stand_in))


def select_blocks(item: ContentItem, profile: DeviceProfile) -> Selection:
    blocks = [
        placeholder_for(b) if b.kind != "text" and not profile.supports_media else b
        for b in item.blocks
    ]
    if profile.unlimited:
        return Selection(tuple(blocks), False)
    budget = profile.max_payload_bytes
    assert budget is not None

    keep = [b.essential for b in blocks]
    used = sum(b.size_bytes for b in blocks if b.essential)
    overflow = used > budget
    if not overflow:
        optional = sorted(
            (i for i, b in enumerate(blocks) if not b.essential), key=lambda i: (blocks[i].priority, i)
        )
        for i in optional:
            if used + blocks[i].size_bytes > budget:
                break
            keep[i] = True
            used += blocks[i].size_bytes
    chosen = tuple(b for b, k in zip(blocks, keep) if k)
    # An over-budget page is flagged even when nothing could be dropped.
    return Selection(chosen, overflow or len(chosen) < len(blocks))


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

_VIEWPORT = '<meta name="viewport" content="width=device-width, initial-scale=1"/>'


def _shell(profile: DeviceProfile) -> tuple[str, str]:
    if profile.device_class is DeviceClass.MOBILE:
        return f"<html><head>{_VIEWPORT}</head><body>", "</body></html>"
    return "<html><body>", "</body></html>"


def _roster_html(roster: ForumRoster) -> str:
    rows = "".join(
        f"<tr><td>{escape_html(e.matric_no)}</td><td>{escape_html(e.name)}</td></tr>"
        for e in roster.entries
    )
    return f"<h1>{escape_html(roster.course)}</h1><table border='1'>{rows}</table>"


def render_html(
    subject: Subject,
    blocks: Sequence[ContentBlock] | None,
    profile: DeviceProfile,
    *,
    truncated: bool = False,
) -> RenderedContent:
    """Render an item (restricted to ``blocks``) or a roster as an HTML page.

    Rosters ignore ``blocks``.  The result is well-formed XML as well as HTML,
    so it can ride inside an envelope payload untouched.
    """
    head, tail = _shell(profile)
    if isinstance(subject, ForumRoster):
        inner = _roster_html(subject)
    else:
        chosen = subject.blocks if blocks is None else blocks
        inner = f"<h1>{escape_html(subject.title)}</h1>" + "".join(block_fragment(b) for b in chosen)
    return RenderedContent(HTML, (head + inner + tail).encode("utf-8"), truncated)


def shell_overhead(subject: Subject, profile: DeviceProfile) -> int:
    """Bytes an HTML render adds on top of the selected block fragments.

    That is the page shell plus the item's title heading; for rosters it is
    the whole page, since rosters are never trimmed.
    """
    return render_html(subject, (), profile).byte_size


def render_xml(
    subject: Subject, blocks: Sequence[ContentBlock] | None = None, *, truncated: bool = False
) -> RenderedContent:
    if isinstance(subject, ForumRoster):
        text = roster_to_xml(subject)
    else:
        text = item_to_xml(subject, None if blocks is None else tuple(blocks))
    return RenderedContent(XML, text.encode("utf-8"), truncated)


def adapt(subject: Subject, profile: DeviceProfile, fmt: str = "html") -> RenderedContent:
    """Select for ``profile`` then render as ``fmt`` (``"html"`` or ``"xml"``)."""
    if fmt not in ("html", "xml"):
        raise ValueError(f"unknown format {fmt!r}")
    if isinstance(subject, ForumRoster):
        blocks: tuple[ContentBlock, ...] | None = None
        truncated = False
    else:
        blocks, truncated = select_blocks(subject, profile)
    if fmt == "xml":
        return render_xml(subject, blocks, truncated=truncated)
    return render_html(subject, blocks, profile, truncated=truncated)
