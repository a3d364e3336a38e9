from __future__ import annotations

import html
import itertools
from dataclasses import dataclass
from pathlib import Path

import pytest

from unilearn.config import GatewayConfig
from unilearn.demo import DEMO_USERS, write_demo
from unilearn.envelope import EnvelopeHeader, build_request
from unilearn.gateway import Gateway

T0 = 1_700_000_000.0


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    setattr(item, f"rep_{report.when}", report)


@dataclass
class FakeClock:
    now: float = T0

    def __call__(self) -> float:
        return self.now


@pytest.fixture(scope="session")
def demo(tmp_path_factory):
    return write_demo(tmp_path_factory.mktemp("demo"), port=0)


@pytest.fixture
def clock():
    return FakeClock()


def make_config(demo, access_log: Path | None = None, **overrides) -> GatewayConfig:
    return GatewayConfig(
        content_dir=demo.content_dir,
        user_file=demo.user_file,
        listen_address="127.0.0.1:0",
        access_log=access_log,
        **overrides,
    )


@pytest.fixture
def gateway(demo, clock, tmp_path):
    gw = Gateway.startup(make_config(demo, tmp_path / "access.log"), clock=clock).start()
    yield gw
    gw.close()


@pytest.fixture
def offline_gateway(demo, clock):
    """A gateway without a socket, for calling dispatch directly."""
    gw = Gateway.startup(make_config(demo), clock=clock, listen=False)
    yield gw
    gw.close()


def login_token(gw: Gateway, username: str = "ali") -> str:
    reply = gw.dispatch(build_request("login", "login", [("username", username), ("password", DEMO_USERS[username])]))
    return reply.body.meta_value("session")


def authed(token: str, service: str, operation: str, params=(), **header) -> object:
    return build_request(service, operation, params, EnvelopeHeader(token, **header))


# ---------------------------------------------------------------------------
# Independent oracle for block selection: exhaustive subset enumeration.
# ---------------------------------------------------------------------------


def oracle_placeholder_size(url: str) -> int:
    return len(f'<div class="block"><a href="{html.escape(url, quote=True)}">[media]</a></div>'.encode())


def oracle_select(blocks, budget, supports_media):
    """Return (kept indices, truncated) by brute force.

    Feasible sets contain every essential block, fit the budget, and are
    closed under the (priority, position) order of the optional blocks;
    the answer is the largest feasible set.
    """
    sizes = [
        oracle_placeholder_size(b.body) if b.kind != "text" and not supports_media else b.size_bytes
        for b in blocks
    ]
    n = len(blocks)
    if budget is None:
        return list(range(n)), False
    essential = [i for i in range(n) if blocks[i].essential]
    base = sum(sizes[i] for i in essential)
    if base > budget:
        return essential, True
    optional = [i for i in range(n) if not blocks[i].essential]
    rank = {i: (blocks[i].priority, i) for i in optional}
    best: list[int] | None = None
    for r in range(len(optional), -1, -1):
        for combo in itertools.combinations(optional, r):
            if base + sum(sizes[i] for i in combo) > budget:
                continue
            top = max((rank[i] for i in combo), default=None)
            chosen = set(combo)
            closed = top is None or all(rank[j] > top for j in optional if j not in chosen)
            if closed:
                best = sorted(essential + list(combo))
                break
        if best is not None:
            break
    assert best is not None
    return best, len(best) < n
