"""Gateway configuration and its line-oriented ``key = value`` file format.

Example::

    # unilearn gateway
    listen_address = 127.0.0.1:8080
    content_dir = content
    user_file = users.txt
    session_ttl_seconds = 3600
    mobile_max_payload_bytes = 16384
    mobile_markers = mobile, android, iphone, ipad, opera mini, windows phone
    access_log = access.log

Relative paths are resolved against the directory holding the file.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

from unilearn.adapter import DEFAULT_MOBILE_MARKERS, DEFAULT_PROFILES, DeviceProfile
from unilearn.auth import DEFAULT_TTL_SECONDS
from unilearn.envelope import DeviceClass
from unilearn.errors import ConfigError

_PATH_KEYS = ("content_dir", "user_file", "access_log", "registry_snapshot")
_INT_KEYS = (
    "session_ttl_seconds",
    "mobile_max_payload_bytes",
    "mobile_screen_width_px",
    "desktop_screen_width_px",
)
_BOOL_KEYS = ("mobile_supports_media", "desktop_supports_media")
KNOWN_KEYS = frozenset(("listen_address", "mobile_markers", *_PATH_KEYS, *_INT_KEYS, *_BOOL_KEYS))


@dataclass(frozen=True)
class GatewayConfig:
    content_dir: Path
    user_file: Path
    listen_address: str = "127.0.0.1:8080"
    session_ttl_seconds: int = DEFAULT_TTL_SECONDS
    device_profiles: Mapping[DeviceClass, DeviceProfile] = field(
        default_factory=lambda: dict(DEFAULT_PROFILES)
    )
    mobile_markers: tuple[str, ...] = DEFAULT_MOBILE_MARKERS
    access_log: Path | None = None
    registry_snapshot: Path | None = None

    @property
    def host_port(self) -> tuple[str, int]:
        host, sep, port = self.listen_address.rpartition(":")
        if not sep or not port.isdigit():
            raise ConfigError("BAD_CONFIG", f"listen_address {self.listen_address!r} is not host:port")
        return host or "127.0.0.1", int(port)

    def validate(self) -> None:
        """Fail fast with the offending key or path."""
        if not self.content_dir.is_dir():
            raise ConfigError("BAD_CONFIG", f"content_dir {self.content_dir} does not exist")
        if not self.user_file.is_file():
            raise ConfigError("BAD_CONFIG", f"user_file {self.user_file} does not exist")
        if self.session_ttl_seconds <= 0:
            raise ConfigError("BAD_CONFIG", "session_ttl_seconds must be positive")
        if set(self.device_profiles) != set(DeviceClass):
            raise ConfigError("BAD_CONFIG", "profiles for both mobile and desktop are required")
        self.host_port


def _parse_bool(key: str, value: str) -> bool:
    lowered = value.lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ConfigError("BAD_CONFIG", f"{key}: expected a boolean, got {value!r}")


def parse_config(text: str, base_dir: str | os.PathLike[str] = ".") -> GatewayConfig:
    base = Path(base_dir)
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError("BAD_CONFIG", f"line {lineno}: expected 'key = value'")
        if key not in KNOWN_KEYS:
            raise ConfigError("BAD_CONFIG", f"line {lineno}: unknown key {key!r}")
        values[key] = value

    for key in ("content_dir", "user_file"):
        if key not in values:
            raise ConfigError("BAD_CONFIG", f"missing required key {key!r}")

    paths = {k: base / values[k] for k in _PATH_KEYS if k in values}
    ints: dict[str, int] = {}
    for key in _INT_KEYS:
        if key in values:
            try:
                ints[key] = int(values[key])
            except ValueError:
                raise ConfigError("BAD_CONFIG", f"{key}: expected an integer, got {values[key]!r}") from None
    bools = {k: _parse_bool(k, values[k]) for k in _BOOL_KEYS if k in values}

    mobile = DEFAULT_PROFILES[DeviceClass.MOBILE]
    desktop = DEFAULT_PROFILES[DeviceClass.DESKTOP]
    try:
        mobile = replace(
            mobile,
            max_payload_bytes=ints.get("mobile_max_payload_bytes", mobile.max_payload_bytes),
            supports_media=bools.get("mobile_supports_media", mobile.supports_media),
            screen_width_px=ints.get("mobile_screen_width_px", mobile.screen_width_px),
        )
        desktop = replace(
            desktop,
            supports_media=bools.get("desktop_supports_media", desktop.supports_media),
            screen_width_px=ints.get("desktop_screen_width_px", desktop.screen_width_px),
        )
    except ValueError as exc:
        raise ConfigError("BAD_CONFIG", str(exc)) from None

    markers = DEFAULT_MOBILE_MARKERS
    if "mobile_markers" in values:
        markers = tuple(m.strip() for m in values["mobile_markers"].split(",") if m.strip())

    return GatewayConfig(
        content_dir=paths["content_dir"],
        user_file=paths["user_file"],
        listen_address=values.get("listen_address", "127.0.0.1:8080"),
        session_ttl_seconds=ints.get("session_ttl_seconds", DEFAULT_TTL_SECONDS),
        device_profiles={DeviceClass.MOBILE: mobile, DeviceClass.DESKTOP: desktop},
        mobile_markers=markers,
        access_log=paths.get("access_log"),
        registry_snapshot=paths.get("registry_snapshot"),
    )


def load_config(path: str | os.PathLike[str]) -> GatewayConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("BAD_CONFIG", f"cannot read config {path}: {exc}") from None
    return parse_config(text, path.parent)
