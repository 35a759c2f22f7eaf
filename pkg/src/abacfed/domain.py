"""One administrative domain: stores, PIP/PAP/PDP, keys and the gateway."""

from __future__ import annotations

import json
import logging
import threading
from pathlib import Path
from typing import Callable

import httpx

from abacfed import abs as absig
from abacfed.config import DomainConfig
from abacfed.errors import TpkMismatchError, TransportError
from abacfed.federation import ChallengeStore, Gateway, PeerRegistry, utcnow
from abacfed.keycache import CacheMode, KeyCache
from abacfed.services import (
    PolicyAdministrationPoint,
    PolicyDecisionPoint,
    PolicyInformationPoint,
    StaticTokenAuth,
)
from abacfed.store import JsonStore

log = logging.getLogger(__name__)


def load_tpk(path: str | Path) -> absig.TrusteePublicKey:
    return absig.TrusteePublicKey.from_bytes(Path(path).read_bytes())


def write_tpk(tpk: absig.TrusteePublicKey, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(tpk.to_bytes())


class HttpClientPool:
    """One keep-alive httpx client per peer base URL."""

    def __init__(self, timeout: float = 10.0):
        self.timeout = timeout
        self._clients: dict[str, httpx.Client] = {}
        self._lock = threading.Lock()

    def __call__(self, base_url: str) -> httpx.Client:
        with self._lock:
            client = self._clients.get(base_url)
            if client is None:
                client = self._clients[base_url] = httpx.Client(base_url=base_url, timeout=self.timeout)
            return client

    def close(self) -> None:
        with self._lock:
            for c in self._clients.values():
                c.close()
            self._clients.clear()


class Domain:
    def __init__(
        self,
        config: DomainConfig,
        tpk: absig.TrusteePublicKey | None = None,
        *,
        client_factory: Callable[[str], httpx.Client] | None = None,
        clock=utcnow,
        repeat_messages: bool = False,
    ):
        self.config = config
        self.domain_id = config.domain_id
        self.tpk = tpk if tpk is not None else load_tpk(config.tpk_path)
        data = Path(config.data_dir)
        data.mkdir(parents=True, exist_ok=True)
        self.data_dir = data

        self.auth = StaticTokenAuth(config.admin_token)
        self.users = JsonStore(data / "users.json")
        self.resources = JsonStore(data / "resources.json")
        self.policies = JsonStore(data / "policies.json")
        self.keystore = JsonStore(data / "keycache.json")

        self.pip = PolicyInformationPoint(self.users)
        self.pap = PolicyAdministrationPoint(self.resources, self.policies, self.auth)
        self.pdp = PolicyDecisionPoint(self.pap, self.pip)

        self.authority = self._load_authority(data / "authority.json")
        self.key_caches = {
            CacheMode.FRESH: KeyCache(CacheMode.FRESH, JsonStore(None), self.authority),
            CacheMode.CACHED: KeyCache(CacheMode.CACHED, self.keystore, self.authority),
            CacheMode.CACHED_SIGNATURE: KeyCache(CacheMode.CACHED_SIGNATURE, self.keystore, self.authority),
        }

        self.http_pool = None
        if client_factory is None:
            self.http_pool = client_factory = HttpClientPool()
        self.registry = PeerRegistry(self.tpk, client_factory)
        for p in config.peers:
            self.registry.configure(p.domain_id, p.base_url, p.aliases)
        self.challenges = ChallengeStore(config.challenge_ttl, clock)
        self.gateway = Gateway(self, repeat_messages=repeat_messages)

    def _load_authority(self, path: Path) -> absig.AttributeAuthorityKeys:
        """The long-term authority key published at /v1/federation/apk."""
        if path.exists():
            raw = json.loads(path.read_text())
            if raw["domain_id"] == self.domain_id:
                return absig.AttributeAuthorityKeys(bytes.fromhex(raw["apk"]), bytes.fromhex(raw["ask"]), self.domain_id)
            log.warning("authority key in %s belongs to %s; regenerating", path, raw["domain_id"])
        keys = absig.a_setup(self.tpk, self.domain_id)
        path.write_text(json.dumps({"domain_id": self.domain_id, "apk": keys.apk.hex(), "ask": keys.ask.hex()}))
        path.chmod(0o600)
        return keys

    def register_peers(self) -> list[str]:
        """Try to pin every configured peer; returns the ids that failed."""
        failed = []
        for peer in self.registry.peers():
            try:
                self.registry.register_peer(peer.domain_id)
            except (TransportError, TpkMismatchError) as exc:  # retried lazily on first use
                log.info("peer %s not registered yet: %s", peer.domain_id, exc)
                failed.append(peer.domain_id)
        return failed

    def close(self) -> None:
        if self.http_pool is not None:
            self.http_pool.close()
