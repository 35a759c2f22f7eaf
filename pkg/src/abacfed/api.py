"""FastAPI daemon hosting one domain's PEP, PAP, PIP and PDP."""

from __future__ import annotations

import base64
import binascii
import contextlib
import logging

from fastapi import FastAPI, Header, Request
from fastapi.concurrency import run_in_threadpool
from fastapi.responses import JSONResponse

from abacfed import schemas
from abacfed.domain import Domain
from abacfed.errors import (
    AbacError,
    AuthError,
    MissingAttributeError,
    TransportError,
    UnknownPeerError,
    UnknownResourceError,
    UnknownUserError,
)
from abacfed.federation import VERIFY_TIMING_HEADER, format_verify_timing, request_remote_resource
from abacfed.model import Attribute, Policy
from abacfed.services import ResourceRecord, UserRecord

log = logging.getLogger(__name__)

STATUS = {
    UnknownResourceError: 404,
    UnknownUserError: 404,
    AuthError: 403,
    UnknownPeerError: 409,
    TransportError: 502,
}


def _bearer(authorization: str | None) -> str | None:
    if authorization and authorization.lower().startswith("bearer "):
        return authorization[7:].strip()
    return None


def _b64(text: str) -> bytes:
    try:
        return base64.b64decode(text, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise ValueError("invalid base64") from exc


def _attrs(items) -> tuple[Attribute, ...]:
    return tuple(Attribute.from_json(a.model_dump()) for a in items)


def create_app(domain: Domain, pin_peers: bool = False) -> FastAPI:
    """Build the daemon app; ``pin_peers`` registers configured peers at startup."""

    @contextlib.asynccontextmanager
    async def lifespan(app: FastAPI):
        if pin_peers:
            failed = await run_in_threadpool(domain.register_peers)
            if failed:
                log.info("peers pinned lazily later: %s", ", ".join(failed))
        yield
        domain.close()

    app = FastAPI(title=f"abacfed domain {domain.domain_id}", version="1", lifespan=lifespan)
    app.state.domain = domain

    @app.exception_handler(AbacError)
    def _abac_error(request: Request, exc: AbacError):
        status = next((code for cls, code in STATUS.items() if isinstance(exc, cls)), 400)
        body = {"error": exc.reason, "reason": exc.reason, "detail": str(exc)}
        if isinstance(exc, TransportError):
            body["phase"] = exc.phase
        return JSONResponse(body, status_code=status)

    @app.exception_handler(ValueError)
    def _bad_value(request: Request, exc: ValueError):
        return JSONResponse({"error": "invalid-request", "detail": str(exc)}, status_code=422)

    # --- public federation surface ---------------------------------------

    @app.get("/v1/resources", response_model=list[schemas.ResourceName])
    def list_resources():
        return domain.gateway.handle_list_resources()

    @app.post(
        "/v1/access/initiate",
        response_model=schemas.ChallengeOut | schemas.PermitOut,
        responses={404: {"model": schemas.ErrorOut}, 409: {"model": schemas.ErrorOut}},
    )
    def initiate(req: schemas.InitiateRequest):
        result = domain.gateway.initiate_access(req.resource_id, req.requester_domain)
        if result.challenge is None:
            return schemas.PermitOut(content_b64=base64.b64encode(result.content).decode())
        ch = result.challenge
        return schemas.ChallengeOut(
            challenge_id=ch.challenge_id,
            required=ch.required.to_json(),
            message=ch.message.to_json(),
        )

    @app.post(
        "/v1/access/complete",
        response_model=schemas.PermitOut | schemas.DenyOut,
        responses={410: {"model": schemas.DenyOut}},
    )
    def complete(req: schemas.CompleteRequest):
        try:
            envelope = _b64(req.signature_b64)
        except ValueError:
            envelope = b""
        result = domain.gateway.complete_access(req.challenge_id, envelope)
        headers = {}
        if result.verify_seconds is not None:
            headers[VERIFY_TIMING_HEADER] = format_verify_timing(result.verify_seconds)
        if result.decision.permitted:
            body = {"decision": "permit", "content_b64": base64.b64encode(result.content).decode()}
            return JSONResponse(body, headers=headers)
        status = 410 if result.decision.reason == "expired-challenge" else 200
        return JSONResponse({"decision": "deny", "reason": result.decision.reason}, status_code=status, headers=headers)

    @app.get("/v1/federation/tpk", response_model=schemas.TpkOut)
    def tpk():
        return {"tpk_b64": base64.b64encode(domain.tpk.to_bytes()).decode()}

    @app.get("/v1/federation/apk", response_model=schemas.ApkOut)
    def apk():
        return {"domain_id": domain.domain_id, "apk_b64": base64.b64encode(domain.authority.apk).decode()}

    # --- admin surface ---------------------------------------------------

    @app.post("/v1/admin/resources", responses={403: {"model": schemas.ErrorOut}})
    def put_resource(req: schemas.ResourceIn, authorization: str | None = Header(default=None)):
        domain.auth.check(_bearer(authorization))
        record = ResourceRecord(req.resource_id, req.display_name, _b64(req.content_b64))
        return {"resource_id": domain.pap.put_resource(_bearer(authorization), record)}

    @app.post("/v1/admin/policies", responses={403: {"model": schemas.ErrorOut}, 404: {"model": schemas.ErrorOut}})
    def put_policy(req: schemas.PolicyIn, authorization: str | None = Header(default=None)):
        domain.auth.check(_bearer(authorization))
        policy = Policy(req.resource_id, _attrs(req.entries))
        domain.pap.put_policy(_bearer(authorization), policy)
        return {"resource_id": policy.resource_id, "protected": policy.protected}

    @app.post("/v1/admin/users", responses={403: {"model": schemas.ErrorOut}})
    def put_user(req: schemas.UserIn, authorization: str | None = Header(default=None)):
        domain.auth.check(_bearer(authorization))
        record = UserRecord(req.user_id, _attrs(req.attributes))
        domain.pip.put_user(domain.auth, _bearer(authorization), record)
        return {"user_id": record.user_id, "n_attributes": len(record.attributes)}

    # --- outbound requests on behalf of local users ------------------------

    @app.post("/v1/client/fetch", response_model=schemas.FetchOut, responses={403: {"model": schemas.ErrorOut}})
    def fetch(req: schemas.FetchRequest, authorization: str | None = Header(default=None)):
        domain.auth.check(_bearer(authorization))
        try:
            result = request_remote_resource(domain, req.peer_id, req.resource_id, req.user_id, req.mode)
        except MissingAttributeError as exc:
            log.info("fetch %s/%s for %s: %s", req.peer_id, req.resource_id, req.user_id, exc)
            return schemas.FetchOut(decision="deny", reason=exc.reason)
        content = base64.b64encode(result.content).decode() if result.content is not None else None
        return schemas.FetchOut(
            decision=result.decision.outcome.value,
            reason=result.decision.reason,
            content_b64=content,
            timings=result.timings,
        )

    return app
