"""Per-domain PIP, PAP and PDP over the JSON document stores."""

from __future__ import annotations

import base64
import hmac
import logging
from dataclasses import dataclass
from typing import Iterable, Protocol

from abacfed.errors import AuthError, DuplicateAttributeError, UnknownResourceError, UnknownUserError
from abacfed.model import Attribute, Decision, Key, Policy, evaluate_policy
from abacfed.store import JsonStore

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class UserRecord:
    user_id: str
    attributes: tuple[Attribute, ...]

    def __post_init__(self) -> None:
        seen = set()
        for a in self.attributes:
            if a.key in seen:
                raise DuplicateAttributeError(a.key)
            seen.add(a.key)


@dataclass(frozen=True)
class ResourceRecord:
    resource_id: str
    display_name: str
    content: bytes
    protected: bool = False


class AdminAuth(Protocol):
    def check(self, token: str | None) -> None: ...


class StaticTokenAuth:
    """Bearer token from configuration, compared in constant time."""

    def __init__(self, token: str):
        if not token:
            raise ValueError("admin token must not be empty")
        self._token = token.encode()

    def check(self, token: str | None) -> None:
        if token is None or not hmac.compare_digest(token.encode(), self._token):
            raise AuthError("invalid admin token")


class PolicyInformationPoint:
    def __init__(self, users: JsonStore):
        self.users = users
        self.queries: list[tuple[str, tuple[Key, ...]]] = []

    def put_user(self, auth: AdminAuth, token: str | None, record: UserRecord) -> None:
        auth.check(token)
        self.users.put(record.user_id, [a.to_json() for a in record.attributes])

    def user(self, user_id: str) -> UserRecord:
        raw = self.users.get(user_id)
        if raw is None:
            raise UnknownUserError(user_id)
        return UserRecord(user_id, tuple(Attribute.from_json(a) for a in raw))

    def query(self, user_id: str, wanted: Iterable[Key]) -> list[Attribute]:
        """Attributes of exactly this user whose (category, name) is wanted."""
        wanted = tuple(wanted)
        self.queries.append((user_id, wanted))
        want = set(wanted)
        return [a for a in self.user(user_id).attributes if a.key in want]


class PolicyAdministrationPoint:
    def __init__(self, resources: JsonStore, policies: JsonStore, auth: AdminAuth):
        self.resources = resources
        self.policies = policies
        self.auth = auth

    def put_resource(self, token: str | None, resource: ResourceRecord) -> str:
        self.auth.check(token)
        self.resources.put(
            resource.resource_id,
            {"display_name": resource.display_name, "content_b64": base64.b64encode(resource.content).decode()},
        )
        return resource.resource_id

    def put_policy(self, token: str | None, policy: Policy) -> None:
        self.auth.check(token)
        with self.resources.lock:
            if policy.resource_id not in self.resources:
                raise UnknownResourceError(policy.resource_id)
            if policy.entries:
                self.policies.put(policy.resource_id, policy.to_json())
            else:
                self.policies.delete(policy.resource_id)

    def get_policy(self, resource_id: str) -> Policy | None:
        raw = self.policies.get(resource_id)
        return Policy.from_json(raw) if raw else None

    def get_resource(self, resource_id: str) -> ResourceRecord:
        raw = self.resources.get(resource_id)
        if raw is None:
            raise UnknownResourceError(resource_id)
        return ResourceRecord(
            resource_id,
            raw["display_name"],
            base64.b64decode(raw["content_b64"]),
            protected=resource_id in self.policies,
        )

    def list_resource_names(self) -> list[dict]:
        snap = self.resources.snapshot()
        return [{"resource_id": rid, "display_name": rec["display_name"]} for rid, rec in sorted(snap.items())]


class PolicyDecisionPoint:
    def __init__(self, pap: PolicyAdministrationPoint, pip: PolicyInformationPoint):
        self.pap = pap
        self.pip = pip

    def decide(self, request_attrs: Iterable[Attribute], user_id: str, resource_id: str) -> Decision:
        if resource_id not in self.pap.resources:
            return Decision.deny("unknown-resource")
        policy = self.pap.get_policy(resource_id)
        if policy is None:
            return Decision.permit()
        attrs = list(request_attrs)
        have = {a.key for a in attrs}
        missing = [e.key for e in policy.entries if e.key not in have]
        if missing:
            try:
                attrs += self.pip.query(user_id, missing)
            except UnknownUserError:
                log.info("pdp: unknown user %s", user_id)
        return evaluate_policy(attrs, policy)
