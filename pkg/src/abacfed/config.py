"""Per-domain TOML configuration.

Example::

    domain_id = "domain1"
    host = "127.0.0.1"
    port = 8001
    data_dir = "data/domain1"
    admin_token = "change-me"          # or ABACFED_ADMIN_TOKEN
    tpk_path = "federation.tpk"
    cache_mode = "cached"              # fresh | cached
    challenge_ttl = 60

    [[peers]]
    domain_id = "domain2"
    base_url = "http://127.0.0.1:8002"
    aliases = ["Subject:first_name=Subject:fname"]

Relative paths resolve against the config file's directory.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from abacfed.keycache import CacheMode
from abacfed.model import AliasMap

ADMIN_TOKEN_ENV = "ABACFED_ADMIN_TOKEN"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PeerConfig:
    domain_id: str
    base_url: str
    aliases: AliasMap = field(default_factory=AliasMap)


@dataclass(frozen=True)
class DomainConfig:
    domain_id: str
    data_dir: Path
    admin_token: str
    tpk_path: Path
    host: str = "127.0.0.1"
    port: int = 8000
    peers: tuple[PeerConfig, ...] = ()
    cache_mode: CacheMode = CacheMode.CACHED
    challenge_ttl: float = 60.0

    def __post_init__(self) -> None:
        if not self.domain_id:
            raise ConfigError("domain_id must be non-empty")
        if not 0 < int(self.port) < 65536:
            raise ConfigError(f"invalid port {self.port}")
        if self.challenge_ttl <= 0:
            raise ConfigError("challenge_ttl must be positive")

    @property
    def base_url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def peer(self, domain_id: str) -> PeerConfig:
        for p in self.peers:
            if p.domain_id == domain_id:
                return p
        raise ConfigError(f"no peer {domain_id!r} in config")


def load_config(path: str | os.PathLike, data_dir: str | None = None) -> DomainConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    base = path.parent

    def rel(p: str) -> Path:
        q = Path(p).expanduser()
        return q if q.is_absolute() else base / q

    token = os.environ.get(ADMIN_TOKEN_ENV) or raw.get("admin_token")
    if not token:
        raise ConfigError(f"admin_token missing (set it in config or {ADMIN_TOKEN_ENV})")
    try:
        peers = tuple(
            PeerConfig(p["domain_id"], p["base_url"].rstrip("/"), AliasMap.parse(p.get("aliases", [])))
            for p in raw.get("peers", [])
        )
        return DomainConfig(
            domain_id=raw["domain_id"],
            data_dir=rel(data_dir or raw.get("data_dir", "data")),
            admin_token=token,
            tpk_path=rel(raw.get("tpk_path", "federation.tpk")),
            host=raw.get("host", "127.0.0.1"),
            port=int(raw.get("port", 8000)),
            peers=peers,
            cache_mode=CacheMode(raw.get("cache_mode", "cached")),
            challenge_ttl=float(raw.get("challenge_ttl", 60)),
        )
    except (KeyError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from exc
