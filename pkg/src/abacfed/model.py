"""Domain vocabulary: attributes, policies, predicates and decisions.

Everything here is immutable and pure. ``canonical_bytes`` is the single
serialization used as signing input and as the key-cache key; its layout is
documented in ``docs/formats.md``.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Mapping

from abacfed.errors import (
    DuplicateAttributeError,
    MissingAttributeError,
    NameCollisionError,
)

FIELD_SEP = b"\x1f"
RECORD_SEP = b"\x1e"

_NAME_RE = re.compile(r"[A-Za-z0-9_.-]+")
_FORBIDDEN = ("\x1e", "\x1f")


class Category(enum.Enum):
    SUBJECT = "Subject"
    ACTION = "Action"
    RESOURCE = "Resource"
    ENVIRONMENT = "Environment"

    @property
    def rank(self) -> int:
        return _CATEGORY_RANK[self]

    @classmethod
    def parse(cls, text: str | Category) -> Category:
        if isinstance(text, Category):
            return text
        for c in cls:
            if c.value.lower() == str(text).lower():
                return c
        raise ValueError(f"unknown category {text!r}")


_CATEGORY_RANK = {c: i for i, c in enumerate(Category)}

# (category, name) identity of an attribute inside a policy or predicate.
Key = tuple[Category, str]


def _sort_key(key: Key) -> tuple[int, str]:
    return (key[0].rank, key[1])


def _check_text(what: str, text: str) -> None:
    if not isinstance(text, str) or not text:
        raise ValueError(f"{what} must be a non-empty string")
    if any(ch in text for ch in _FORBIDDEN):
        raise ValueError(f"{what} may not contain separator bytes 0x1E/0x1F")


def _check_name(name: str) -> None:
    if not isinstance(name, str) or not _NAME_RE.fullmatch(name):
        raise ValueError(f"attribute name {name!r} must match [A-Za-z0-9_.-]+")


@dataclass(frozen=True, order=False)
class Attribute:
    category: Category
    name: str
    value: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "category", Category.parse(self.category))
        _check_name(self.name)
        _check_text("attribute value", self.value)

    @property
    def key(self) -> Key:
        return (self.category, self.name)

    def to_json(self) -> dict:
        return {"category": self.category.value, "name": self.name, "value": self.value}

    @classmethod
    def from_json(cls, data: Mapping) -> Attribute:
        return cls(Category.parse(data["category"]), data["name"], data["value"])


def _unique_by_key(attrs: Iterable[Attribute]) -> dict[Key, Attribute]:
    out: dict[Key, Attribute] = {}
    for a in attrs:
        if a.key in out:
            raise DuplicateAttributeError(a.key)
        out[a.key] = a
    return out


@dataclass(frozen=True)
class Policy:
    """Conjunction of required attribute values protecting one resource."""

    resource_id: str
    entries: tuple[Attribute, ...] = ()

    def __post_init__(self) -> None:
        _check_text("resource_id", self.resource_id)
        entries = tuple(self.entries)
        _unique_by_key(entries)
        object.__setattr__(self, "entries", entries)

    @property
    def protected(self) -> bool:
        return bool(self.entries)

    def to_json(self) -> dict:
        return {"resource_id": self.resource_id, "entries": [a.to_json() for a in self.entries]}

    @classmethod
    def from_json(cls, data: Mapping) -> Policy:
        return cls(data["resource_id"], tuple(Attribute.from_json(e) for e in data.get("entries", [])))


@dataclass(frozen=True)
class RequiredPredicate:
    """Conjunction of attribute names; what a verifier asks the requester for."""

    leaves: tuple[Key, ...] = ()

    def __post_init__(self) -> None:
        leaves = []
        for cat, name in self.leaves:
            cat = Category.parse(cat)
            _check_name(name)
            leaves.append((cat, name))
        leaves.sort(key=_sort_key)
        if len(set(leaves)) != len(leaves):
            raise DuplicateAttributeError(next(k for k in leaves if leaves.count(k) > 1))
        object.__setattr__(self, "leaves", tuple(leaves))

    def to_json(self) -> list[dict]:
        return [{"category": c.value, "name": n} for c, n in self.leaves]

    @classmethod
    def from_json(cls, data: Iterable[Mapping]) -> RequiredPredicate:
        return cls(tuple((Category.parse(d["category"]), d["name"]) for d in data))


@dataclass(frozen=True)
class ClaimPredicate:
    """Conjunction of name-value pairs; what a signature attests."""

    leaves: tuple[tuple[Category, str, str], ...] = ()

    def __post_init__(self) -> None:
        leaves = []
        for cat, name, value in self.leaves:
            a = Attribute(Category.parse(cat), name, value)
            leaves.append((a.category, a.name, a.value))
        leaves.sort(key=lambda leaf: (leaf[0].rank, leaf[1]))
        seen = set()
        for cat, name, _ in leaves:
            if (cat, name) in seen:
                raise DuplicateAttributeError((cat, name))
            seen.add((cat, name))
        object.__setattr__(self, "leaves", tuple(leaves))

    def names(self) -> tuple[Key, ...]:
        return tuple((c, n) for c, n, _ in self.leaves)

    def attributes(self) -> tuple[Attribute, ...]:
        return tuple(Attribute(c, n, v) for c, n, v in self.leaves)

    def to_json(self) -> list[dict]:
        return [{"category": c.value, "name": n, "value": v} for c, n, v in self.leaves]


def _utc_now() -> datetime:
    return datetime.now(timezone.utc).replace(microsecond=0)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_timestamp(text: str) -> datetime:
    return datetime.strptime(text, "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc)


@dataclass(frozen=True)
class AccessMessage:
    """The message a requester signs to answer one challenge."""

    resource_id: str
    requester_domain: str
    verifier_domain: str
    nonce: str
    issued_at: datetime = field(default_factory=_utc_now)

    def __post_init__(self) -> None:
        for what in ("resource_id", "requester_domain", "verifier_domain"):
            _check_text(what, getattr(self, what))
        if not re.fullmatch(r"[0-9a-f]{32}", self.nonce):
            raise ValueError("nonce must be 128 bits of lowercase hex")
        if self.issued_at.tzinfo is None:
            raise ValueError("issued_at must be timezone-aware")
        object.__setattr__(self, "issued_at", self.issued_at.astimezone(timezone.utc).replace(microsecond=0))

    def to_json(self) -> dict:
        return {
            "resource_id": self.resource_id,
            "requester_domain": self.requester_domain,
            "verifier_domain": self.verifier_domain,
            "nonce": self.nonce,
            "issued_at": format_timestamp(self.issued_at),
        }

    @classmethod
    def from_json(cls, data: Mapping) -> AccessMessage:
        return cls(
            data["resource_id"],
            data["requester_domain"],
            data["verifier_domain"],
            data["nonce"],
            parse_timestamp(data["issued_at"]),
        )


class Outcome(enum.Enum):
    PERMIT = "permit"
    DENY = "deny"


DENY_REASONS = frozenset(
    {
        "missing-attribute",
        "value-mismatch",
        "bad-signature",
        "expired-challenge",
        "unknown-resource",
        "unknown-peer",
    }
)


@dataclass(frozen=True)
class Decision:
    outcome: Outcome
    reason: str = "ok"

    def __post_init__(self) -> None:
        if self.outcome is Outcome.PERMIT and self.reason != "ok":
            raise ValueError("a Permit always carries reason 'ok'")
        if self.outcome is Outcome.DENY and self.reason not in DENY_REASONS:
            raise ValueError(f"unknown deny reason {self.reason!r}")

    @classmethod
    def permit(cls) -> Decision:
        return cls(Outcome.PERMIT)

    @classmethod
    def deny(cls, reason: str) -> Decision:
        return cls(Outcome.DENY, reason)

    @property
    def permitted(self) -> bool:
        return self.outcome is Outcome.PERMIT


@dataclass(frozen=True)
class AliasMap:
    """Renames a remote (category, name) to the local one; identity if unmapped."""

    mapping: Mapping[Key, Key] = field(default_factory=dict)

    def __post_init__(self) -> None:
        norm = {
            (Category.parse(rc), rn): (Category.parse(lc), ln) for (rc, rn), (lc, ln) in dict(self.mapping).items()
        }
        if len(set(norm.values())) != len(norm):
            raise NameCollisionError("alias map is not injective")
        object.__setattr__(self, "mapping", norm)

    def __call__(self, key: Key) -> Key:
        return self.mapping.get(key, key)

    def __hash__(self) -> int:
        return hash(tuple(sorted((_sort_key(k), _sort_key(v)) for k, v in self.mapping.items())))

    @classmethod
    def parse(cls, entries: Iterable[str]) -> AliasMap:
        """Build from ``"Subject:first_name=Subject:fname"`` style entries."""
        mapping = {}
        for entry in entries:
            remote, _, local = entry.partition("=")
            mapping[_parse_key(remote)] = _parse_key(local)
        return cls(mapping)


def _parse_key(text: str) -> Key:
    cat, sep, name = text.strip().partition(":")
    if not sep:
        raise ValueError(f"expected Category:name, got {text!r}")
    _check_name(name.strip())
    return (Category.parse(cat.strip()), name.strip())


# --- transformations -------------------------------------------------------


def policy_to_required_predicate(policy: Policy) -> RequiredPredicate:
    return RequiredPredicate(tuple(a.key for a in policy.entries))


def policy_to_claim_predicate(policy: Policy) -> ClaimPredicate:
    return ClaimPredicate(tuple((a.category, a.name, a.value) for a in policy.entries))


def build_claim_predicate(required: RequiredPredicate, attrs: Iterable[Attribute]) -> ClaimPredicate:
    """Fill every required leaf from ``attrs``.

    Raises MissingAttributeError naming all unfilled leaves.
    """
    by_key = {a.key: a for a in attrs}
    missing = [k for k in required.leaves if k not in by_key]
    if missing:
        raise MissingAttributeError(missing)
    return ClaimPredicate(tuple((c, n, by_key[(c, n)].value) for c, n in required.leaves))


def satisfies(claim: ClaimPredicate, policy: Policy) -> bool:
    return claim.leaves == policy_to_claim_predicate(policy).leaves


def evaluate_policy(request_attrs: Iterable[Attribute], policy: Policy) -> Decision:
    have: dict[Key, set[str]] = {}
    for a in request_attrs:
        have.setdefault(a.key, set()).add(a.value)
    # missing outranks mismatch so a denial never hints that a guessed value was close
    if any(e.key not in have for e in policy.entries):
        return Decision.deny("missing-attribute")
    if any(e.value not in have[e.key] for e in policy.entries):
        return Decision.deny("value-mismatch")
    return Decision.permit()


def resolve_names(required: RequiredPredicate, aliases: AliasMap) -> tuple[RequiredPredicate, AliasMap]:
    """Translate a remote predicate into local names.

    Returns the localized predicate and the reverse map that restores the
    remote names.
    """
    reverse: dict[Key, Key] = {}
    for leaf in required.leaves:
        local = aliases(leaf)
        if local in reverse:
            raise NameCollisionError(f"{reverse[local]} and {leaf} both map to {local}")
        reverse[local] = leaf
    return RequiredPredicate(tuple(reverse)), AliasMap(reverse)


def apply_reverse(claim: ClaimPredicate, reverse: AliasMap) -> ClaimPredicate:
    return ClaimPredicate(tuple((*reverse((c, n)), v) for c, n, v in claim.leaves))


# --- canonical serialization ----------------------------------------------

TAG_REQUIRED = b"R"
TAG_CLAIM = b"C"
TAG_MESSAGE = b"M"


def _record(fields: Iterable[str]) -> bytes:
    return FIELD_SEP.join(f.encode("utf-8") for f in fields) + RECORD_SEP


def canonical_leaf(category: Category, name: str, value: str | None = None) -> bytes:
    fields = [category.value, name] if value is None else [category.value, name, value]
    return _record(fields)


def canonical_bytes(value: RequiredPredicate | ClaimPredicate | AccessMessage) -> bytes:
    if isinstance(value, RequiredPredicate):
        return TAG_REQUIRED + RECORD_SEP + b"".join(canonical_leaf(c, n) for c, n in value.leaves)
    if isinstance(value, ClaimPredicate):
        return TAG_CLAIM + RECORD_SEP + b"".join(canonical_leaf(c, n, v) for c, n, v in value.leaves)
    if isinstance(value, AccessMessage):
        m = value.to_json()
        return TAG_MESSAGE + RECORD_SEP + _record(
            [m["resource_id"], m["requester_domain"], m["verifier_domain"], m["nonce"], m["issued_at"]]
        )
    raise TypeError(f"no canonical form for {type(value).__name__}")
