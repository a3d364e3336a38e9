"""End-to-end acceptance checks.

Each test prints one ``ACCEPTANCE <n> PASS|FAIL`` line.  Run on its own with::

    pytest tests/test_acceptance.py -v
"""

import io
import random
import threading
import time
import xml.etree.ElementTree as ET
from collections import Counter

import pytest

from conftest import T0, authed, login_token, oracle_placeholder_size, oracle_select
from unilearn import adapter, cli
from unilearn.adapter import DeviceProfile, select_blocks, shell_overhead
from unilearn.demo import DEMO_USERS, FORUM_ENTRIES
from unilearn.envelope import (
    DeviceClass,
    EnvelopeHeader,
    Fault,
    FaultCode,
    MessageEnvelope,
    Request,
    Response,
    build_request,
    parse,
    serialize,
)
from unilearn.errors import EnvelopeError, RegistryError
from unilearn.registry import OperationSig, ServiceDescriptor, ServiceRegistry, parse_description, parse_registry_document
from unilearn.store import ContentBlock, ContentItem, load_store


@pytest.fixture
def criterion(request):
    title = {}

    def announce(number, text):
        title.update(number=number, text=text)

    yield announce
    rep = getattr(request.node, "rep_call", None)
    verdict = "PASS" if rep is not None and rep.passed else "FAIL"
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")
    line = f"ACCEPTANCE {title.get('number', '?')} {verdict}  {title.get('text', request.node.name)}"
    if reporter is not None:
        reporter.write_line(line)
    else:  # pragma: no cover
        print(line)


# ---------------------------------------------------------------------------
# 1. envelope round-trip and malformed-input fuzz
# ---------------------------------------------------------------------------

_NAME_HEAD = "abcdefghijklmnopqrstuvwxyz"
_NAME_TAIL = _NAME_HEAD + "0123456789_-"
_TEXT_POOL = "aZ09 \t\n\r&<>\"';:/=?#%éßλ中文🙂  "


def _name(rng):
    return rng.choice(_NAME_HEAD) + "".join(rng.choice(_NAME_TAIL) for _ in range(rng.randrange(0, 10)))


def _text(rng, max_len=20):
    return "".join(rng.choice(_TEXT_POOL) for _ in range(rng.randrange(0, max_len)))


def _markup(rng, depth=0):
    parts = []
    for _ in range(rng.randrange(0, 4)):
        roll = rng.random()
        if roll < 0.35 or depth > 2:
            parts.append(_text(rng).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;"))
        elif roll < 0.45:
            parts.append("<!-- note -->")
        elif roll < 0.5:
            parts.append("<![CDATA[ <raw> & ]]>")
        else:
            tag = rng.choice(["div", "p", "td", "tr", "table", "a", "h1"])
            attr = f" class='c{rng.randrange(9)}'" if rng.random() < 0.5 else ""
            parts.append(f"<{tag}{attr}>{_markup(rng, depth + 1)}</{tag}>")
    return "".join(parts)


def random_envelope(rng):
    session = "".join(rng.choice("0123456789abcdef") for _ in range(32)) if rng.random() < 0.5 else None
    device = rng.choice([None, DeviceClass.MOBILE, DeviceClass.DESKTOP])
    header = EnvelopeHeader(session, device)
    kind = rng.random()
    if kind < 0.4:
        names = list(dict.fromkeys(_text(rng, 8) for _ in range(rng.randrange(0, 6))))
        body = Request(_name(rng), _name(rng), tuple((n, _text(rng)) for n in names))
    elif kind < 0.8:
        meta_names = list(dict.fromkeys(_text(rng, 8) for _ in range(rng.randrange(0, 4))))
        body = Response(
            _name(rng),
            _name(rng),
            _markup(rng),
            rng.choice(["text/html", "application/xml"]),
            tuple((n, _text(rng)) for n in meta_names),
        )
    else:
        body = Fault(rng.choice(list(FaultCode)), _text(rng) or "reason")
    return MessageEnvelope(header, body)


def _sound(env):
    body = env.body
    if isinstance(body, Request):
        Request(body.service, body.operation, body.params)
    elif isinstance(body, Response):
        Response(body.service, body.operation, body.payload, body.content_type, body.meta)
    elif isinstance(body, Fault):
        Fault(body.code, body.reason)
    else:
        raise AssertionError(f"unexpected body {body!r}")
    EnvelopeHeader(env.header.session, env.header.device_class_override)
    assert env.version == "1.0"


def test_envelope_round_trip_and_fuzz(criterion):
    criterion(1, "envelope round-trip (1000 generated) and malformed-input fuzz (10^4)")
    rng = random.Random(20190101)
    corpus = []
    for _ in range(1000):
        env = random_envelope(rng)
        data = serialize(env)
        assert parse(data) == env
        corpus.append(data)

    outcomes = Counter()
    for i in range(10_000):
        roll = rng.random()
        if roll < 0.3:
            data = rng.randbytes(rng.randrange(0, 120))
        elif roll < 0.45:
            seed = rng.choice(corpus)
            data = seed[: rng.randrange(len(seed))]
        else:
            buf = bytearray(rng.choice(corpus))
            for _ in range(rng.randint(1, 5)):
                pos = rng.randrange(len(buf))
                op = rng.random()
                if op < 0.4:
                    buf[pos] = rng.randrange(256)
                elif op < 0.7:
                    del buf[pos]
                else:
                    buf.insert(pos, rng.choice(b"<>/&;\"'= x\x00"))
            data = bytes(buf)
        try:
            env = parse(data)
        except EnvelopeError as exc:
            assert exc.code in ("MALFORMED", "UNSUPPORTED_VERSION"), exc
            outcomes[exc.code] += 1
        else:
            _sound(env)
            outcomes["parsed"] += 1
    assert sum(outcomes.values()) == 10_000
    assert outcomes["MALFORMED"] > 5_000


# ---------------------------------------------------------------------------
# 2. roster table through gateway and CLI
# ---------------------------------------------------------------------------


def test_forum_table_end_to_end(criterion, gateway):
    criterion(2, "forum roster table end-to-end through gateway and CLI")
    out, err = io.StringIO(), io.StringIO()
    endpoint = ["--endpoint", gateway.endpoint]
    assert cli.run([*endpoint, "login", "-u", "ali", "-p", DEMO_USERS["ali"]], stdout=out, stderr=err, env={}) == 0
    token = dict(l.split("=", 1) for l in out.getvalue().split("\n\n")[0].splitlines())["token"]

    out = io.StringIO()
    code = cli.run([*endpoint, "--token", token, "--device", "desktop", "forum", "DCS 202"], stdout=out, stderr=err, env={})
    assert code == 0
    head, _, body = out.getvalue().partition("\n\n")
    fields = dict(l.split("=", 1) for l in head.splitlines())
    assert fields["fault_code"] == "-"
    page = ET.fromstring(body.strip())
    tables = page.findall(".//table")
    assert len(tables) == 1
    assert tables[0].attrib == {"border": "1"}
    rows = tables[0].findall("tr")
    assert len(rows) == len(FORUM_ENTRIES)
    for row, entry in zip(rows, FORUM_ENTRIES):
        cells = row.findall("td")
        assert [c.text for c in cells] == [entry.matric_no, entry.name]


# ---------------------------------------------------------------------------
# 3. selection oracle and budget safety
# ---------------------------------------------------------------------------


def _random_item(rng):
    blocks = []
    for i in range(rng.randrange(0, 13)):
        kind = rng.choice(["text", "text", "media", "interactive"])
        body = f"blk{i}" if kind == "text" else f"http://media.example.edu/v{rng.randrange(10**6)}?a=1&b={i}"
        blocks.append(ContentBlock(kind, rng.randint(1, 5), rng.random() < 0.25, rng.randrange(0, 4000), body))
    return ContentItem("DCS 202", "gen", "Generated", tuple(blocks))


def test_selection_oracle_and_budget(criterion):
    criterion(3, "select_blocks equals exhaustive oracle on 500 pairs; budget safety")
    rng = random.Random(4242)
    overflow_cases = 0
    for _ in range(500):
        item = _random_item(rng)
        budget = rng.choice([rng.randrange(1, 2000), rng.randrange(1, 20000)])
        media = rng.random() < 0.5
        profile = DeviceProfile(DeviceClass.MOBILE, budget, media, 360)
        sel = select_blocks(item, profile)

        kept, truncated = oracle_select(item.blocks, budget, media)
        got = []
        for b in sel.blocks:
            matches = [i for i, c in enumerate(item.blocks) if (c.body, c.kind) == (b.body, b.kind)]
            assert len(matches) == 1
            got.append(matches[0])
        assert got == kept
        assert sel.truncated == truncated

        essentials = sum(
            oracle_placeholder_size(b.body) if b.kind != "text" and not media else b.size_bytes
            for b in item.blocks
            if b.essential
        )
        used = sum(b.size_bytes for b in sel.blocks)
        if essentials > budget:
            overflow_cases += 1
            assert sel.truncated
            assert all(b.essential for b in sel.blocks)
        else:
            assert used <= budget
    assert overflow_cases > 0


# ---------------------------------------------------------------------------
# 4. device detection table
# ---------------------------------------------------------------------------

DETECTION_TABLE = [
    (None, None, DeviceClass.DESKTOP),
    (None, "", DeviceClass.DESKTOP),
    (None, "Mozilla/5.0 (Windows NT 10.0; Win64; x64) Chrome/90.0", DeviceClass.DESKTOP),
    (None, "Mozilla/5.0 (Macintosh; Intel Mac OS X 10_15) Safari/605.1", DeviceClass.DESKTOP),
    (None, "curl/7.68.0", DeviceClass.DESKTOP),
    (None, "Mozilla/5.0 (Linux; Android 9) Mobile Safari/537.36", DeviceClass.MOBILE),
    (None, "Mozilla/5.0 (iPhone; CPU iPhone OS 12_0 like Mac OS X)", DeviceClass.MOBILE),
    (None, "Mozilla/5.0 (iPad; CPU OS 12_0 like Mac OS X)", DeviceClass.MOBILE),
    (None, "Opera/9.80 (J2ME/MIDP; Opera Mini/4.2.14912/870)", DeviceClass.MOBILE),
    (None, "Mozilla/5.0 (Windows Phone 10.0; Lumia 950)", DeviceClass.MOBILE),
    (None, "GENERIC MOBILE BROWSER", DeviceClass.MOBILE),
    (DeviceClass.DESKTOP, "Mozilla/5.0 (iPhone)", DeviceClass.DESKTOP),
    (DeviceClass.DESKTOP, None, DeviceClass.DESKTOP),
    (DeviceClass.MOBILE, "Mozilla/5.0 (X11; Linux x86_64) Firefox/89.0", DeviceClass.MOBILE),
    (DeviceClass.MOBILE, None, DeviceClass.MOBILE),
]


def test_device_detection_table(criterion):
    criterion(4, "device detection table, every marker and the no-input default")
    table = list(DETECTION_TABLE)
    for marker in adapter.DEFAULT_MOBILE_MARKERS:
        table.append((None, f"Agent/1.0 ({marker})", DeviceClass.MOBILE))
        table.append((None, f"Agent/1.0 ({marker.upper()})", DeviceClass.MOBILE))
        table.append((DeviceClass.DESKTOP, marker, DeviceClass.DESKTOP))
    mismatches = [(o, ua, want) for o, ua, want in table if adapter.detect_device(o, ua).device_class is not want]
    assert mismatches == []
    assert adapter.detect_device() == adapter.DESKTOP_PROFILE


# ---------------------------------------------------------------------------
# 5. auth gating
# ---------------------------------------------------------------------------


def test_auth_gate(criterion, offline_gateway, clock):
    criterion(5, "auth gate over every (service, operation) and ttl+1 expiry")
    gw = offline_gateway
    pairs = [(d.name, op.name) for n in gw.registry.names() for d in [gw.registry.lookup(n)] for op in d.operations]
    pairs += [("grading", "get"), ("content", "put"), ("login", "whoami")]
    assert ("login", "login") in pairs and len(pairs) == 8
    params = [("course", "DCS 202"), ("id", "intro"), ("query", "a"), ("username", "ali"), ("password", "bad")]
    for service, operation in pairs:
        for token in (None, "deadbeef" * 4):
            env = build_request(service, operation, params, EnvelopeHeader(token))
            reply = gw.dispatch(env)
            status = gw.handle_http("POST", "/service", {}, serialize(env)).status
            if (service, operation) == ("login", "login"):
                assert reply.body.code is FaultCode.AUTH_FAILED
            else:
                assert isinstance(reply.body, Fault) and reply.body.code is FaultCode.AUTH_REQUIRED, (service, operation)
                assert status == 401

    token = login_token(gw)
    request = authed(token, "content", "get", [("course", "DCS 202"), ("id", "intro")])
    ttl = gw.login_service.ttl_seconds
    clock.now = T0 + ttl - 1
    assert isinstance(gw.dispatch(request).body, Response)
    clock.now = T0 + ttl + 1
    reply = gw.dispatch(request)
    assert isinstance(reply.body, Fault) and reply.body.code is FaultCode.AUTH_REQUIRED


# ---------------------------------------------------------------------------
# 6. registry lifecycle
# ---------------------------------------------------------------------------


def test_registry_lifecycle(criterion, gateway):
    criterion(6, "registry lifecycle invariants, describe round-trip, startup listing")
    rng = random.Random(99)
    names = ["alpha", "beta", "gamma", "delta", "epsilon"]
    caps = ["delivery", "search", "content", "alpha", "x"]
    reg = ServiceRegistry()
    model = {}
    for step in range(2000):
        name = rng.choice(names)
        roll = rng.random()
        if roll < 0.45:
            d = ServiceDescriptor(
                name,
                frozenset(rng.sample(caps, rng.randint(1, 3))),
                tuple(OperationSig(f"op{i}", tuple(f"p{j}" for j in range(i))) for i in range(rng.randint(1, 3))),
                f"http://host{rng.randrange(5)}/service",
            )
            ack = reg.publish(d)
            assert ack.replaced == (name in model)
            model[name] = d
        elif roll < 0.65:
            if name in model:
                reg.unpublish(name)
                del model[name]
            else:
                with pytest.raises(RegistryError):
                    reg.unpublish(name)
        elif roll < 0.85:
            query = rng.choice(names + caps)
            found = reg.find(query)
            if query in model:
                assert found == [model[query]]
            else:
                assert found == sorted((d for d in model.values() if query in d.capabilities), key=lambda d: d.name)
        else:
            if name in model:
                assert parse_description(reg.describe(name)) == model[name]
            else:
                with pytest.raises(RegistryError):
                    reg.describe(name)
        assert reg.names() == sorted(model)

    listing = gateway.handle_http("GET", "/registry", {}, b"")
    assert listing.status == 200
    published = parse_registry_document(listing.body)
    assert sorted(d.name for d in published) == ["content", "delivery", "login", "search"]
    for d in published:
        assert parse_description(gateway.handle_http("GET", f"/registry/{d.name}", {}, b"").body) == d


# ---------------------------------------------------------------------------
# 7. determinism and mobile/desktop divergence
# ---------------------------------------------------------------------------


def test_determinism_and_divergence(criterion, offline_gateway, demo):
    criterion(7, "identical requests are byte-identical; oversized item diverges by device")
    gw = offline_gateway
    token = login_token(gw)
    params = [("course", "DCS 202"), ("id", "bigitem")]
    desktop = authed(token, "content", "get", params, device_class_override=DeviceClass.DESKTOP)
    first, second = gw.dispatch(desktop), gw.dispatch(desktop)
    assert first.body.payload.encode() == second.body.payload.encode()
    assert serialize(first) == serialize(second)

    item = load_store(demo.content_dir).get_item("DCS 202", "bigitem")
    mobile = gw.dispatch(authed(token, "content", "get", params, device_class_override=DeviceClass.MOBILE))
    limit = 16384 + shell_overhead(item, adapter.MOBILE_PROFILE)
    assert len(mobile.body.payload.encode()) <= limit
    assert mobile.body.meta_value("truncated") == "true"

    page = ET.fromstring(first.body.payload)
    assert first.body.meta_value("truncated") == "false"
    assert len(page.findall(".//div[@class='block']")) == len(item.blocks)
    assert first.body.payload == adapter.render_html(item, item.blocks, adapter.DESKTOP_PROFILE).text
    assert len(mobile.body.payload.encode()) < len(first.body.payload.encode())


# ---------------------------------------------------------------------------
# 8. concurrency
# ---------------------------------------------------------------------------

CLIENTS = 50
DURATION_SECONDS = 10.0


def test_concurrent_clients(criterion, gateway):
    criterion(8, f"{CLIENTS} concurrent CLI clients for {DURATION_SECONDS:g}s; log is consistent")
    endpoint = ["--endpoint", gateway.endpoint, "--raw"]
    deadline = time.monotonic() + DURATION_SECONDS
    lock = threading.Lock()
    totals = Counter()
    problems = []

    def client(seed):
        rng = random.Random(seed)
        token = None
        count = 0
        while time.monotonic() < deadline:
            roll = rng.random()
            user = rng.choice(sorted(DEMO_USERS))
            if token is None or roll < 0.05:
                argv = ["login", "-u", user, "-p", DEMO_USERS[user]]
            elif roll < 0.55:
                item = rng.choice(["intro", "bigitem", "forum", "ghost"])
                command = ["forum", "DCS 202"] if item == "forum" else ["get", "DCS 202", item]
                argv = ["--device", rng.choice(["mobile", "desktop", "auto"]), *command]
            elif roll < 0.95:
                argv = ["search", rng.choice(["", "protocol", "matrix", "zzz"])]
            else:
                argv = ["search", "x"]
                token = "0" * 32  # stale token: expect AUTH_REQUIRED
            if token and argv[0] != "login":
                argv = ["--token", token, *argv]
            out, err = io.StringIO(), io.StringIO()
            code = cli.run([*endpoint, *argv], stdout=out, stderr=err, env={})
            count += 1
            head, _, raw = out.getvalue().partition("\n\n")
            try:
                fields = dict(l.split("=", 1) for l in head.splitlines())
                env = parse(raw.rstrip("\n").encode())
            except Exception as exc:  # noqa: BLE001
                problems.append((argv, code, err.getvalue(), repr(exc)))
                continue
            if code == 2 or fields.get("fault_code") == "INTERNAL":
                problems.append((argv, code, err.getvalue()))
            if argv[0] == "login" and code == 0:
                token = fields["token"]
            if token == "0" * 32 and argv[-1] == "x":
                token = None
        with lock:
            totals["requests"] += count

    threads = [threading.Thread(target=client, args=(i,)) for i in range(CLIENTS)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()

    # The gateway is still serving after the storm.
    assert cli.run(["--endpoint", gateway.endpoint, "describe", "login"], stdout=io.StringIO(), env={}) == 0
    token = login_token(gateway)
    assert isinstance(gateway.dispatch(authed(token, "search", "find", [("query", "")])).body, Response)

    gateway.close()
    assert problems == []
    lines = gateway.config.access_log.read_text().splitlines()
    ids = [int(line.split("\t")[0]) for line in lines]
    assert len(lines) == totals["requests"] > CLIENTS
    assert ids == list(range(1, len(lines) + 1))
    assert all(len(line.split("\t")) == 6 for line in lines)
