"""Cross-domain challenge protocol: the verifier gateway and requester client.

Verifier side (resource owner)::

    initiate_access  -> required predicate + message to sign (a challenge)
    complete_access  -> verify the signed answer, release content

Requester side::

    request_remote_resource drives both calls, querying the local PIP and
    key cache in between.
"""

from __future__ import annotations

import base64
import logging
import secrets
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import TYPE_CHECKING, Callable

import httpx

from abacfed import abs as absig
from abacfed.errors import (
    TpkMismatchError,
    TransportError,
    UnknownPeerError,
    UnknownResourceError,
)
from abacfed.keycache import CacheMode, get_or_create
from abacfed.model import (
    AccessMessage,
    AliasMap,
    Decision,
    RequiredPredicate,
    apply_reverse,
    build_claim_predicate,
    canonical_bytes,
    policy_to_claim_predicate,
    policy_to_required_predicate,
    resolve_names,
)

if TYPE_CHECKING:
    from abacfed.domain import Domain

log = logging.getLogger(__name__)

ENVELOPE_MAGIC = b"ENV1"
VERIFY_TIMING_HEADER = "Server-Timing"


def utcnow() -> datetime:
    return datetime.now(timezone.utc)


# --- signature envelope -----------------------------------------------------


def pack_envelope(apk: bytes, endorsement: bytes, signature: bytes) -> bytes:
    return absig.pack_fields(ENVELOPE_MAGIC, apk, endorsement, signature)


def unpack_envelope(data: bytes) -> tuple[bytes, bytes, bytes]:
    apk, endorsement, signature = absig.unpack_fields(data, ENVELOPE_MAGIC, 3)
    return apk, endorsement, signature


# --- challenges -------------------------------------------------------------


@dataclass(frozen=True)
class Challenge:
    challenge_id: str
    message: AccessMessage
    required: RequiredPredicate
    resource_id: str
    peer_domain: str
    expires_at: datetime


class ChallengeStore:
    """Live challenges; consumption is an atomic pop so each is single-use."""

    def __init__(self, ttl: float = 60.0, clock: Callable[[], datetime] = utcnow):
        self.ttl = ttl
        self.clock = clock
        self._live: dict[str, Challenge] = {}
        self._lock = threading.Lock()

    def issue(self, message: AccessMessage, required: RequiredPredicate, peer: str) -> Challenge:
        ch = Challenge(
            challenge_id=secrets.token_hex(16),
            message=message,
            required=required,
            resource_id=message.resource_id,
            peer_domain=peer,
            expires_at=self.clock() + timedelta(seconds=self.ttl),
        )
        with self._lock:
            self._prune()
            self._live[ch.challenge_id] = ch
        return ch

    def consume(self, challenge_id: str) -> Challenge | None:
        with self._lock:
            ch = self._live.pop(challenge_id, None)
        if ch is None or self.clock() >= ch.expires_at:
            return None
        return ch

    def __len__(self) -> int:
        with self._lock:
            return len(self._live)

    def _prune(self) -> None:
        now = self.clock()
        for cid in [cid for cid, ch in self._live.items() if now >= ch.expires_at]:
            del self._live[cid]


# --- peers ------------------------------------------------------------------


@dataclass
class Peer:
    domain_id: str
    base_url: str
    alias_map: AliasMap = field(default_factory=AliasMap)
    apk: bytes | None = None


class PeerClient:
    """JSON-over-HTTP calls to one peer's public endpoints."""

    def __init__(self, http: httpx.Client):
        self.http = http

    def _call(self, phase: str, method: str, path: str, **kw) -> httpx.Response:
        try:
            return self.http.request(method, path, **kw)
        except httpx.HTTPError as exc:
            raise TransportError(phase, str(exc)) from exc

    def _json(self, phase: str, resp: httpx.Response) -> dict:
        try:
            return resp.json()
        except ValueError as exc:
            raise TransportError(phase, f"HTTP {resp.status_code}: non-JSON body") from exc

    def list_resources(self) -> list[dict]:
        resp = self._call("list", "GET", "/v1/resources")
        if resp.status_code != 200:
            raise TransportError("list", f"HTTP {resp.status_code}")
        return self._json("list", resp)

    def tpk(self) -> absig.TrusteePublicKey:
        resp = self._call("register", "GET", "/v1/federation/tpk")
        if resp.status_code != 200:
            raise TransportError("register", f"HTTP {resp.status_code}")
        return absig.TrusteePublicKey.from_bytes(base64.b64decode(self._json("register", resp)["tpk_b64"]))

    def apk(self) -> tuple[str, bytes]:
        resp = self._call("register", "GET", "/v1/federation/apk")
        if resp.status_code != 200:
            raise TransportError("register", f"HTTP {resp.status_code}")
        body = self._json("register", resp)
        return body["domain_id"], base64.b64decode(body["apk_b64"])

    def initiate(self, resource_id: str, requester_domain: str) -> tuple[int, dict]:
        resp = self._call(
            "initiate",
            "POST",
            "/v1/access/initiate",
            json={"resource_id": resource_id, "requester_domain": requester_domain},
        )
        return resp.status_code, self._json("initiate", resp)

    def complete(self, challenge_id: str, envelope: bytes) -> tuple[int, dict, float | None]:
        resp = self._call(
            "complete",
            "POST",
            "/v1/access/complete",
            json={"challenge_id": challenge_id, "signature_b64": base64.b64encode(envelope).decode()},
        )
        return resp.status_code, self._json("complete", resp), parse_verify_timing(resp.headers)


def format_verify_timing(seconds: float) -> str:
    return f"verify;dur={seconds * 1000:.6f}"


def parse_verify_timing(headers) -> float | None:
    value = headers.get(VERIFY_TIMING_HEADER)
    if not value:
        return None
    for part in value.split(","):
        name, _, params = part.strip().partition(";")
        if name == "verify" and params.startswith("dur="):
            return float(params[4:]) / 1000
    return None


class PeerRegistry:
    """Known peers and their pinned authority keys.

    Peers listed in configuration are registered lazily on first use if the
    peer was unreachable when the daemon started.
    """

    def __init__(self, tpk: absig.TrusteePublicKey, client_factory: Callable[[str], httpx.Client]):
        self.tpk = tpk
        self.client_factory = client_factory
        self._peers: dict[str, Peer] = {}
        self._lock = threading.Lock()

    def configure(self, domain_id: str, base_url: str, alias_map: AliasMap | None = None) -> None:
        with self._lock:
            old = self._peers.get(domain_id)
            self._peers[domain_id] = Peer(domain_id, base_url, alias_map or AliasMap(), old.apk if old else None)

    def client(self, domain_id: str) -> PeerClient:
        return PeerClient(self.client_factory(self.get(domain_id).base_url))

    def register_peer(self, domain_id: str, base_url: str | None = None) -> Peer:
        """Fetch and pin a peer's TPK and APK. Idempotent."""
        with self._lock:
            known = self._peers.get(domain_id)
        if base_url is None:
            if known is None:
                raise UnknownPeerError(domain_id)
            base_url = known.base_url
        client = PeerClient(self.client_factory(base_url))
        peer_tpk = client.tpk()
        if peer_tpk != self.tpk:
            raise TpkMismatchError(f"{domain_id} serves TPK of federation {peer_tpk.federation_id!r}")
        served_id, apk = client.apk()
        if served_id != domain_id:
            raise TpkMismatchError(f"{base_url} identifies as {served_id!r}, expected {domain_id!r}")
        with self._lock:
            aliases = known.alias_map if known else AliasMap()
            peer = Peer(domain_id, base_url, aliases, apk)
            self._peers[domain_id] = peer
        return peer

    def get(self, domain_id: str) -> Peer:
        with self._lock:
            peer = self._peers.get(domain_id)
        if peer is None:
            raise UnknownPeerError(domain_id)
        return peer

    def require_pinned(self, domain_id: str) -> Peer:
        peer = self.get(domain_id)
        if peer.apk is not None:
            return peer
        try:
            return self.register_peer(domain_id)
        except (TransportError, TpkMismatchError) as exc:
            log.warning("cannot pin peer %s: %s", domain_id, exc)
            raise UnknownPeerError(domain_id) from exc

    def peers(self) -> list[Peer]:
        with self._lock:
            return list(self._peers.values())


# --- verifier side ----------------------------------------------------------


@dataclass
class InitiateResult:
    decision: Decision | None = None
    content: bytes | None = None
    challenge: Challenge | None = None


@dataclass
class CompleteResult:
    decision: Decision
    content: bytes | None = None
    verify_seconds: float | None = None


class Gateway:
    """Verifier-side PEP for requests arriving from peer domains."""

    def __init__(self, domain: Domain, repeat_messages: bool = False):
        self.domain = domain
        # benchmark-only: reuse one message per (resource, peer) so cached signatures replay
        self.repeat_messages = repeat_messages
        self._fixed: dict[tuple[str, str], AccessMessage] = {}
        self.completions = 0

    def handle_list_resources(self) -> list[dict]:
        return self.domain.pap.list_resource_names()

    def initiate_access(self, resource_id: str, requester_domain: str) -> InitiateResult:
        self.domain.registry.require_pinned(requester_domain)
        record = self.domain.pap.get_resource(resource_id)
        policy = self.domain.pap.get_policy(resource_id)
        if policy is None:
            return InitiateResult(Decision.permit(), record.content)
        message = self._message_for(resource_id, requester_domain)
        ch = self.domain.challenges.issue(message, policy_to_required_predicate(policy), requester_domain)
        log.info("challenge %s issued to %s for %s", ch.challenge_id[:8], requester_domain, resource_id)
        return InitiateResult(challenge=ch)

    def _message_for(self, resource_id: str, peer: str) -> AccessMessage:
        if self.repeat_messages and (resource_id, peer) in self._fixed:
            return self._fixed[(resource_id, peer)]
        msg = AccessMessage(
            resource_id=resource_id,
            requester_domain=peer,
            verifier_domain=self.domain.domain_id,
            nonce=secrets.token_hex(16),
            issued_at=self.domain.challenges.clock(),
        )
        if self.repeat_messages:
            self._fixed[(resource_id, peer)] = msg
        return msg

    def complete_access(self, challenge_id: str, envelope: bytes) -> CompleteResult:
        self.completions += 1
        log.info("complete_access challenge=%s", str(challenge_id)[:8])
        ch = self.domain.challenges.consume(challenge_id)
        if ch is None:
            return CompleteResult(Decision.deny("expired-challenge"))
        try:
            record = self.domain.pap.get_resource(ch.resource_id)
        except UnknownResourceError:
            return CompleteResult(Decision.deny("unknown-resource"))
        policy = self.domain.pap.get_policy(ch.resource_id)
        if policy is None:
            return CompleteResult(Decision.permit(), record.content)
        expected = policy_to_claim_predicate(policy)
        peer = self.domain.registry.get(ch.peer_domain)

        t0 = time.perf_counter()
        ok, why = self._check(peer, ch.message, expected, envelope)
        elapsed = time.perf_counter() - t0

        if not ok:
            # peers only learn the coarse reason
            log.info("deny %s from %s: %s", ch.resource_id, ch.peer_domain, why)
            return CompleteResult(Decision.deny("bad-signature"), verify_seconds=elapsed)
        return CompleteResult(Decision.permit(), record.content, verify_seconds=elapsed)

    def _check(self, peer: Peer, message, expected, envelope: bytes) -> tuple[bool, str]:
        try:
            apk, endorsement, sig = unpack_envelope(envelope)
        except ValueError:
            return False, "malformed envelope"
        tpk = self.domain.tpk
        if peer.apk is None or not absig.verify_endorsement(peer.apk, tpk, peer.domain_id, apk, endorsement):
            return False, "apk not endorsed by peer authority"
        if not absig.verify(tpk, apk, message, expected, sig):
            return False, "signature does not attest the policy values"
        return True, "ok"


# --- requester side ---------------------------------------------------------


@dataclass
class RemoteResult:
    decision: Decision
    content: bytes | None = None
    timings: dict[str, float] = field(default_factory=dict)
    requests_sent: list[str] = field(default_factory=list)


_STATUS_REASON = {404: "unknown-resource", 409: "unknown-peer", 410: "expired-challenge"}


def _deny_from(status: int, body: dict) -> Decision:
    reason = body.get("reason") or _STATUS_REASON.get(status)
    if reason is None:
        raise TransportError("protocol", f"unexpected HTTP {status}: {body}")
    return Decision.deny(reason)


def request_remote_resource(
    domain: Domain,
    peer_id: str,
    resource_id: str,
    user_id: str,
    cache_mode: CacheMode | str = CacheMode.CACHED,
) -> RemoteResult:
    """Fetch ``resource_id`` from ``peer_id`` on behalf of local ``user_id``.

    Raises MissingAttributeError (before anything is signed or sent) when the
    local PIP cannot fill the peer's required predicate.
    """
    mode = CacheMode(cache_mode)
    timings: dict[str, float] = {}
    sent: list[str] = []
    start = time.perf_counter()
    peer = domain.registry.get(peer_id)
    client = domain.registry.client(peer_id)

    t = time.perf_counter()
    sent.append("initiate")
    status, body = client.initiate(resource_id, domain.domain_id)
    timings["initiate"] = time.perf_counter() - t

    def finish(decision: Decision, content: bytes | None = None) -> RemoteResult:
        timings["total"] = time.perf_counter() - start
        return RemoteResult(decision, content, timings, sent)

    if status != 200:
        return finish(_deny_from(status, body))
    if body.get("decision") == "permit":
        return finish(Decision.permit(), base64.b64decode(body["content_b64"]))

    challenge_id = body["challenge_id"]
    required = RequiredPredicate.from_json(body["required"])
    message = AccessMessage.from_json(body["message"])
    if message.requester_domain != domain.domain_id or message.resource_id != resource_id:
        raise TransportError("initiate", "challenge message does not match the request")

    t = time.perf_counter()
    localized, reverse = resolve_names(required, peer.alias_map)
    attrs = domain.pip.query(user_id, localized.leaves)
    local_claim = build_claim_predicate(localized, attrs)  # raises MissingAttributeError
    claim = apply_reverse(local_claim, reverse)
    timings["pip"] = time.perf_counter() - t

    cache = domain.key_caches[mode]
    # keys attest the verifier-facing names; the local authority vouches for the translation
    bundle, keygen = get_or_create(cache, domain.tpk, domain.domain_id, list(claim.attributes()), claim)
    timings.update(keygen)

    t = time.perf_counter()
    msg_bytes = canonical_bytes(message)
    if mode is CacheMode.CACHED_SIGNATURE and bundle.cached_message == msg_bytes and bundle.cached_signature:
        sig_bytes = bundle.cached_signature
    else:
        sig_bytes = absig.sign(domain.tpk, bundle.apk, bundle.ska, message, claim).to_bytes()
        if mode is CacheMode.CACHED_SIGNATURE:
            cache.remember_signature(claim, msg_bytes, sig_bytes)
        timings["sign"] = time.perf_counter() - t
    envelope = pack_envelope(bundle.apk, bundle.endorsement, sig_bytes)

    t = time.perf_counter()
    sent.append("complete")
    status, body, verify_s = client.complete(challenge_id, envelope)
    timings["complete"] = time.perf_counter() - t
    if verify_s is not None:
        timings["verify"] = verify_s
    timings["transfer"] = max(0.0, timings["initiate"] + timings["complete"] - (verify_s or 0.0))

    if status == 200 and body.get("decision") == "permit":
        return finish(Decision.permit(), base64.b64decode(body["content_b64"]))
    return finish(_deny_from(status, body))

