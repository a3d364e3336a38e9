"""Sample content tree, user file and config for trying the gateway locally.

The roster and item texts are made-up fixture data.  ``bigitem`` is
deliberately larger than the default 16 KiB mobile budget.
"""

from __future__ import annotations

from pathlib import Path
from typing import NamedTuple

from unilearn.auth import write_user_file
from unilearn.store import ContentItem, ForumRoster, RosterEntry, load_store, make_block

DEMO_USERS = {"ali": "unimaid-2019", "suleman": "dcs202-forum"}

FORUM_COURSE = "DCS 202"

FORUM_ENTRIES = (
    RosterEntry("DCS/17/001", "Aisha Bukar"),
    RosterEntry("DCS/17/002", "Emeka Okafor"),
    RosterEntry("DCS/17/003", "Fatima Idris"),
    RosterEntry("DCS/17/004", "Musa Lawan"),
    RosterEntry("DCS/17/005", "Grace Mshelia"),
)


def _paragraph(topic: str, n: int, words: int) -> str:
    base = (
        f"Part {n} on {topic}: framing, addressing, flow control and error detection "
        "are examined through worked examples and end-of-section exercises. "
    )
    text = base * (words // len(base.split()) + 1)
    return " ".join(text.split()[:words])


def demo_items() -> list[ContentItem]:
    intro = ContentItem(
        FORUM_COURSE,
        "intro",
        "Introduction to Data Communication",
        (
            make_block("text", "Course outline, assessment and reading list.", priority=1, essential=True),
            make_block("media", "http://media.example.edu/dcs202/intro-lecture.mp4", priority=3),
            make_block("text", "Week 1 covers signals, channels and bandwidth.", priority=2),
        ),
    )
    big_blocks = [make_block("text", "Summary: this reader collects the protocol notes.", priority=1, essential=True)]
    for n in range(1, 7):
        big_blocks.append(make_block("text", _paragraph("protocol layering", n, 900), priority=min(n, 5)))
    big_blocks.append(make_block("media", "http://media.example.edu/dcs202/osi-walkthrough.mp4", priority=2))
    big_blocks.append(make_block("interactive", "http://labs.example.edu/dcs202/packet-sim", priority=4))
    bigitem = ContentItem(FORUM_COURSE, "bigitem", "Network Protocols Reader", tuple(big_blocks))

    others = [
        ContentItem(
            "CSC 101",
            "algorithms",
            "Algorithms and Flowcharts",
            (
                make_block("text", "Sequencing, selection and iteration in flowcharts.", priority=1, essential=True),
                make_block("text", "Exercise: draw the flowchart for a bubble sort.", priority=2),
            ),
        ),
        ContentItem(
            "CSC 101",
            "history",
            "History of Computing",
            (make_block("text", "From the abacus to the transistor.", priority=1),),
        ),
        ContentItem(
            "MTH 201",
            "matrices",
            "Matrices and Determinants",
            (
                make_block("text", "Row reduction and the determinant of a 3x3 matrix.", priority=1, essential=True),
                make_block("media", "http://media.example.edu/mth201/row-reduction.mp4", priority=3),
            ),
        ),
    ]
    return [intro, bigitem, *others]


class DemoPaths(NamedTuple):
    root: Path
    content_dir: Path
    user_file: Path
    config: Path
    access_log: Path


def write_demo(directory: str | Path, *, port: int = 8080, users: dict[str, str] | None = None) -> DemoPaths:
    root = Path(directory)
    content = root / "content"
    content.mkdir(parents=True, exist_ok=True)
    store = load_store(content)
    for item in demo_items():
        store.put_item(item)
    store.put_roster(ForumRoster(FORUM_COURSE, FORUM_ENTRIES))

    user_file = root / "users.txt"
    write_user_file(user_file, DEMO_USERS if users is None else users)
    access_log = root / "access.log"
    config = root / "gateway.conf"
    config.write_text(
        "\n".join(
            [
                "# unilearn demo gateway",
                f"listen_address = 127.0.0.1:{port}",
                "content_dir = content",
                "user_file = users.txt",
                "session_ttl_seconds = 3600",
                "mobile_max_payload_bytes = 16384",
                "access_log = access.log",
                "",
            ]
        ),
        encoding="utf-8",
    )
    return DemoPaths(root, content, user_file, config, access_log)
