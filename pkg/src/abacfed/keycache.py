"""Predicate-keyed store of ABS key bundles.

Two access methods are supported:

``fresh``
    every request runs ``a_setup`` and ``attr_gen``; nothing is stored.
``cached``
    one bundle per canonical claim predicate, created on first use and
    persisted in ``keycache.json``.
``cached-signature``
    like ``cached`` but additionally reuses the last signature when the
    message to sign is byte-identical. Only meaningful against a verifier
    that repeats messages, i.e. the benchmark harness.
"""

from __future__ import annotations

import enum
import threading
import time
from dataclasses import dataclass, field

from abacfed import abs as absig
from abacfed.model import Attribute, ClaimPredicate, canonical_bytes
from abacfed.store import JsonStore


class CacheMode(enum.Enum):
    FRESH = "fresh"
    CACHED = "cached"
    CACHED_SIGNATURE = "cached-signature"

    @property
    def persistent(self) -> bool:
        return self is not CacheMode.FRESH


@dataclass
class KeyBundle:
    authority: absig.AttributeAuthorityKeys
    ska: absig.SigningKey
    endorsement: bytes = b""
    cached_signature: bytes | None = None
    cached_message: bytes | None = None

    @property
    def apk(self) -> bytes:
        return self.authority.apk

    def to_json(self) -> dict:
        return {
            "domain_id": self.authority.domain_id,
            "apk": self.authority.apk.hex(),
            "ask": self.authority.ask.hex(),
            "ska": self.ska.to_json(),
            "endorsement": self.endorsement.hex(),
            "cached_signature": self.cached_signature.hex() if self.cached_signature else None,
            "cached_message": self.cached_message.hex() if self.cached_message else None,
        }

    @classmethod
    def from_json(cls, data: dict) -> KeyBundle:
        def opt(v):
            return bytes.fromhex(v) if v else None

        return cls(
            absig.AttributeAuthorityKeys(bytes.fromhex(data["apk"]), bytes.fromhex(data["ask"]), data["domain_id"]),
            absig.SigningKey.from_json(data["ska"]),
            bytes.fromhex(data["endorsement"]),
            opt(data.get("cached_signature")),
            opt(data.get("cached_message")),
        )


@dataclass
class KeyCache:
    mode: CacheMode
    store: JsonStore = field(default_factory=lambda: JsonStore(None))
    # long-term domain authority used to endorse per-predicate APKs
    root: absig.AttributeAuthorityKeys | None = None
    _key_locks: dict = field(default_factory=dict, repr=False)
    _meta_lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    reads: int = 0

    def _lock_for(self, key: str) -> threading.Lock:
        with self._meta_lock:
            return self._key_locks.setdefault(key, threading.Lock())

    def remember_signature(self, claim: ClaimPredicate, message_bytes: bytes, signature: bytes) -> None:
        key = canonical_bytes(claim).hex()

        def _set(d):
            d[key]["cached_signature"] = signature.hex()
            d[key]["cached_message"] = message_bytes.hex()

        self.store.update(_set)


def _generate(tpk, domain_id, attrs, root, timings) -> KeyBundle:
    t0 = time.perf_counter()
    authority = absig.a_setup(tpk, domain_id)
    endorsement = absig.endorse_apk(root, tpk, authority.apk) if root is not None else b""
    t1 = time.perf_counter()
    ska = absig.attr_gen(authority, tpk, attrs)
    t2 = time.perf_counter()
    timings["asetup"] = t1 - t0
    timings["attrgen"] = t2 - t1
    return KeyBundle(authority, ska, endorsement)


def get_or_create(
    cache: KeyCache,
    tpk: absig.TrusteePublicKey,
    domain_id: str,
    attrs: list[Attribute],
    claim: ClaimPredicate,
) -> tuple[KeyBundle, dict[str, float]]:
    """Return a key bundle able to sign ``claim`` plus per-phase timings.

    Timings contain ``asetup`` and ``attrgen`` only when keys were generated.
    In persistent modes the first request for a predicate creates and stores
    the bundle exactly once, even under concurrent callers.
    """
    timings: dict[str, float] = {}
    if not cache.mode.persistent:
        return _generate(tpk, domain_id, attrs, cache.root, timings), timings

    key = canonical_bytes(claim).hex()
    with cache._lock_for(key):
        record = cache.store.get(key)
        cache.reads += 1
        if record is not None:
            return KeyBundle.from_json(record), timings
        bundle = _generate(tpk, domain_id, attrs, cache.root, timings)
        cache.store.put(key, bundle.to_json())
        return bundle, timings
