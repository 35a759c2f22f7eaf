"""Attribute-based signatures for conjunction predicates.

Reference construction over Ed25519:

* the trustee publishes a salt that domain-separates one federation;
* an attribute authority holds an Ed25519 key pair (ASK/APK);
* a user signing key (SKA) is a fresh Ed25519 pair plus one authority
  token per attribute, each token binding ``(leaf, upk)``;
* a signature reveals the per-key pseudonym ``upk``, the tokens for the
  claimed leaves only, and a binding signature by ``usk`` over the claim
  and message.

The verifier learns nothing beyond the claim predicate it built itself.
Requests signed with the same SKA share ``upk`` and are therefore linkable;
the full unlinkability of pairing-based schemes is not provided.

Binary layouts are documented in ``docs/formats.md``.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import (
    Encoding,
    NoEncryption,
    PrivateFormat,
    PublicFormat,
)

from abacfed.errors import DuplicateAttributeError, PredicateUnsatisfiedError
from abacfed.model import (
    AccessMessage,
    Attribute,
    ClaimPredicate,
    canonical_bytes,
    canonical_leaf,
)

HASH_ID = "ed25519-sha512"
SALT_LEN = 32
KEY_LEN = 32
SIG_LEN = 64

TPK_MAGIC = b"TPK1"
SIG_MAGIC = b"ABS1"

ATTR_DOMAIN = b"ATTR"
BIND_DOMAIN = b"BIND"


# --- length-prefixed framing ------------------------------------------------


def pack_fields(magic: bytes, *fields: bytes) -> bytes:
    out = [magic]
    for f in fields:
        out.append(struct.pack(">I", len(f)))
        out.append(f)
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes, magic: bytes):
        if not isinstance(data, (bytes, bytearray)) or data[: len(magic)] != magic:
            raise ValueError("bad magic")
        self.data = bytes(data)
        self.pos = len(magic)

    def field(self) -> bytes:
        if self.pos + 4 > len(self.data):
            raise ValueError("truncated length")
        (n,) = struct.unpack_from(">I", self.data, self.pos)
        self.pos += 4
        if self.pos + n > len(self.data):
            raise ValueError("truncated field")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def count(self) -> int:
        if self.pos + 4 > len(self.data):
            raise ValueError("truncated count")
        (n,) = struct.unpack_from(">I", self.data, self.pos)
        self.pos += 4
        return n

    def done(self) -> None:
        if self.pos != len(self.data):
            raise ValueError("trailing bytes")


def unpack_fields(data: bytes, magic: bytes, n: int) -> list[bytes]:
    r = _Reader(data, magic)
    out = [r.field() for _ in range(n)]
    r.done()
    return out


def _raw_public(key: Ed25519PublicKey) -> bytes:
    return key.public_bytes(Encoding.Raw, PublicFormat.Raw)


def _raw_private(key: Ed25519PrivateKey) -> bytes:
    return key.private_bytes(Encoding.Raw, PrivateFormat.Raw, NoEncryption())


def _verify_raw(public: bytes, signature: bytes, data: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public).verify(signature, data)
    except (InvalidSignature, ValueError, TypeError):
        return False
    return True


# --- key material -----------------------------------------------------------


@dataclass(frozen=True)
class TrusteePublicKey:
    federation_id: str
    salt: bytes
    hash_id: str = HASH_ID

    def to_bytes(self) -> bytes:
        return pack_fields(TPK_MAGIC, self.federation_id.encode(), self.salt, self.hash_id.encode())

    @classmethod
    def from_bytes(cls, data: bytes) -> TrusteePublicKey:
        fed, salt, hash_id = unpack_fields(data, TPK_MAGIC, 3)
        if len(salt) != SALT_LEN:
            raise ValueError("salt must be 32 bytes")
        return cls(fed.decode(), salt, hash_id.decode())


@dataclass(frozen=True, repr=False)
class AttributeAuthorityKeys:
    apk: bytes
    ask: bytes
    domain_id: str

    def __repr__(self) -> str:
        return f"AttributeAuthorityKeys(domain_id={self.domain_id!r}, apk={self.apk.hex()[:16]}...)"

    def sign(self, data: bytes) -> bytes:
        return Ed25519PrivateKey.from_private_bytes(self.ask).sign(data)

    def public_only(self) -> bytes:
        return self.apk


@dataclass(frozen=True, repr=False)
class SigningKey:
    """Per-user signing key (SKA) over a fixed attribute set."""

    upk: bytes
    usk: bytes
    tokens: dict  # canonical leaf bytes -> token
    attrs: tuple[Attribute, ...]

    def __repr__(self) -> str:
        return f"SigningKey(upk={self.upk.hex()[:16]}..., n_attrs={len(self.attrs)})"

    def to_json(self) -> dict:
        return {
            "upk": self.upk.hex(),
            "usk": self.usk.hex(),
            "attrs": [a.to_json() for a in self.attrs],
            "tokens": [self.tokens[_leaf_of(a)].hex() for a in self.attrs],
        }

    @classmethod
    def from_json(cls, data: dict) -> SigningKey:
        attrs = tuple(Attribute.from_json(a) for a in data["attrs"])
        tokens = {_leaf_of(a): bytes.fromhex(t) for a, t in zip(attrs, data["tokens"])}
        return cls(bytes.fromhex(data["upk"]), bytes.fromhex(data["usk"]), tokens, attrs)


@dataclass(frozen=True)
class AbsSignature:
    upk: bytes
    leaf_tokens: tuple[bytes, ...]
    binding: bytes

    def to_bytes(self) -> bytes:
        body = [SIG_MAGIC, struct.pack(">I", len(self.upk)), self.upk, struct.pack(">I", len(self.leaf_tokens))]
        for t in self.leaf_tokens:
            body += [struct.pack(">I", len(t)), t]
        body += [struct.pack(">I", len(self.binding)), self.binding]
        return b"".join(body)

    @classmethod
    def from_bytes(cls, data: bytes) -> AbsSignature:
        r = _Reader(data, SIG_MAGIC)
        upk = r.field()
        n = r.count()
        if n > 4096:
            raise ValueError("too many tokens")
        tokens = tuple(r.field() for _ in range(n))
        binding = r.field()
        r.done()
        return cls(upk, tokens, binding)


def _leaf_of(a: Attribute) -> bytes:
    return canonical_leaf(a.category, a.name, a.value)


def _token_input(tpk: TrusteePublicKey, leaf: bytes, upk: bytes) -> bytes:
    return ATTR_DOMAIN + tpk.salt + leaf + upk


def _binding_input(tpk: TrusteePublicKey, claim: ClaimPredicate, message: AccessMessage) -> bytes:
    return BIND_DOMAIN + tpk.salt + canonical_bytes(claim) + canonical_bytes(message)


# --- the five operations ----------------------------------------------------


def ts_setup(federation_id: str) -> TrusteePublicKey:
    return TrusteePublicKey(federation_id, os.urandom(SALT_LEN))


def a_setup(tpk: TrusteePublicKey, domain_id: str) -> AttributeAuthorityKeys:
    sk = Ed25519PrivateKey.generate()
    return AttributeAuthorityKeys(_raw_public(sk.public_key()), _raw_private(sk), domain_id)


def attr_gen(ask: AttributeAuthorityKeys, tpk: TrusteePublicKey, attrs) -> SigningKey:
    attrs = tuple(attrs)
    if not attrs:
        raise ValueError("attr_gen needs at least one attribute")
    seen = set()
    for a in attrs:
        if a.key in seen:
            raise DuplicateAttributeError(a.key)
        seen.add(a.key)
    user = Ed25519PrivateKey.generate()
    upk = _raw_public(user.public_key())
    authority = Ed25519PrivateKey.from_private_bytes(ask.ask)
    tokens = {}
    for a in attrs:
        leaf = _leaf_of(a)
        tokens[leaf] = authority.sign(_token_input(tpk, leaf, upk))
    return SigningKey(upk, _raw_private(user), tokens, attrs)


def sign(
    tpk: TrusteePublicKey,
    apk: bytes,
    ska: SigningKey,
    message: AccessMessage,
    claim: ClaimPredicate,
) -> AbsSignature:
    held = {a.key: a.value for a in ska.attrs}
    missing = [(c, n) for c, n, _ in claim.leaves if (c, n) not in held]
    mismatched = [(c, n) for c, n, v in claim.leaves if (c, n) in held and held[(c, n)] != v]
    if missing or mismatched:
        raise PredicateUnsatisfiedError(missing, mismatched)
    tokens = tuple(ska.tokens[canonical_leaf(c, n, v)] for c, n, v in claim.leaves)
    user = Ed25519PrivateKey.from_private_bytes(ska.usk)
    binding = user.sign(_binding_input(tpk, claim, message))
    return AbsSignature(ska.upk, tokens, binding)


def verify(
    tpk: TrusteePublicKey,
    apk: bytes,
    message: AccessMessage,
    claim: ClaimPredicate,
    sig: AbsSignature | bytes,
) -> bool:
    """True iff ``sig`` attests ``claim`` over ``message`` under ``apk``.

    Total: any malformed input yields False rather than an exception.
    """
    try:
        if isinstance(sig, (bytes, bytearray)):
            sig = AbsSignature.from_bytes(bytes(sig))
        if len(sig.upk) != KEY_LEN or len(sig.leaf_tokens) != len(claim.leaves):
            return False
        for (c, n, v), token in zip(claim.leaves, sig.leaf_tokens):
            if not _verify_raw(apk, token, _token_input(tpk, canonical_leaf(c, n, v), sig.upk)):
                return False
        return _verify_raw(sig.upk, sig.binding, _binding_input(tpk, claim, message))
    except Exception:
        return False


# --- authority delegation ---------------------------------------------------
# A domain publishes one long-term authority key. Per-predicate authority keys
# created by a_setup are endorsed by it so a verifier that pinned only the
# long-term key can still trust them.

ENDORSE_DOMAIN = b"APKE"


def endorse_apk(root: AttributeAuthorityKeys, tpk: TrusteePublicKey, apk: bytes) -> bytes:
    return root.sign(ENDORSE_DOMAIN + tpk.salt + pack_fields(b"", root.domain_id.encode(), apk))


def verify_endorsement(root_apk: bytes, tpk: TrusteePublicKey, domain_id: str, apk: bytes, endorsement: bytes) -> bool:
    data = ENDORSE_DOMAIN + tpk.salt + pack_fields(b"", domain_id.encode(), apk)
    return _verify_raw(root_apk, endorsement, data)
