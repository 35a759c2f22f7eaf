"""Exception hierarchy shared by every layer."""

from __future__ import annotations


class AbacError(Exception):
    """Base class; ``reason`` is the machine-readable code used on the wire."""

    reason = "error"


class MissingAttributeError(AbacError):
    reason = "missing-attribute"

    def __init__(self, leaves):
        self.leaves = list(leaves)
        names = ", ".join(f"{c.value}:{n}" for c, n in self.leaves)
        super().__init__(f"missing attributes: {names}")


class DuplicateAttributeError(AbacError, ValueError):
    reason = "duplicate-attribute"

    def __init__(self, key):
        self.key = key
        super().__init__(f"duplicate attribute {key[0].value}:{key[1]}")


class NameCollisionError(AbacError, ValueError):
    reason = "name-collision"


class PredicateUnsatisfiedError(AbacError):
    """Raised by sign() instead of producing a signature that cannot verify."""

    reason = "predicate-unsatisfied"

    def __init__(self, missing, mismatched):
        self.missing = list(missing)
        self.mismatched = list(mismatched)
        super().__init__(f"signing key does not cover claim: missing={self.missing} mismatched={self.mismatched}")


class UnknownUserError(AbacError, KeyError):
    reason = "unknown-user"


class UnknownResourceError(AbacError, KeyError):
    reason = "unknown-resource"


class UnknownPeerError(AbacError, KeyError):
    reason = "unknown-peer"


class AuthError(AbacError):
    reason = "auth-failure"


class TpkMismatchError(AbacError):
    reason = "tpk-mismatch"


class TransportError(AbacError):
    reason = "transport"

    def __init__(self, phase: str, detail: str):
        self.phase = phase
        super().__init__(f"{phase}: {detail}")
