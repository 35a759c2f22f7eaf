"""Request/response bodies of the domain daemon."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field


class AttributeIn(BaseModel):
    category: str
    name: str
    value: str


class NameLeaf(BaseModel):
    category: str
    name: str


class ResourceName(BaseModel):
    resource_id: str
    display_name: str


class MessageOut(BaseModel):
    resource_id: str
    requester_domain: str
    verifier_domain: str
    nonce: str
    issued_at: str


class InitiateRequest(BaseModel):
    resource_id: str
    requester_domain: str


class ChallengeOut(BaseModel):
    challenge_id: str
    required: list[NameLeaf]
    message: MessageOut


class PermitOut(BaseModel):
    decision: Literal["permit"] = "permit"
    content_b64: str


class DenyOut(BaseModel):
    decision: Literal["deny"] = "deny"
    reason: str


class CompleteRequest(BaseModel):
    challenge_id: str
    signature_b64: str


class TpkOut(BaseModel):
    tpk_b64: str


class ApkOut(BaseModel):
    domain_id: str
    apk_b64: str


class ResourceIn(BaseModel):
    resource_id: str
    display_name: str
    content_b64: str = ""


class PolicyIn(BaseModel):
    resource_id: str
    entries: list[AttributeIn] = Field(default_factory=list)


class UserIn(BaseModel):
    user_id: str
    attributes: list[AttributeIn] = Field(default_factory=list)


class FetchRequest(BaseModel):
    peer_id: str
    resource_id: str
    user_id: str
    mode: Literal["fresh", "cached"] = "cached"


class FetchOut(BaseModel):
    decision: Literal["permit", "deny"]
    reason: str
    content_b64: Optional[str] = None
    timings: dict[str, float] = Field(default_factory=dict)
    phase: Optional[str] = None


class ErrorOut(BaseModel):
    error: str
    detail: str = ""
