from __future__ import annotations

import base64

import pytest
from conftest import ALICE_ATTRS, ALICE_POLICY, SECRET, TOKEN, b64

from abacfed import abs as absig

AUTH = {"Authorization": f"Bearer {TOKEN}"}


def _attrs(attrs):
    return [a.to_json() for a in attrs]


@pytest.fixture
def http_fed(fed):
    c1, c2 = fed.http("domain1"), fed.http("domain2")
    assert c1.post("/v1/admin/resources", json={"resource_id": "resource-1", "display_name": "Echo", "content_b64": b64(SECRET)}, headers=AUTH).status_code == 200
    assert c1.post("/v1/admin/policies", json={"resource_id": "resource-1", "entries": _attrs(ALICE_POLICY.entries)}, headers=AUTH).json() == {
        "resource_id": "resource-1",
        "protected": True,
    }
    assert c2.post("/v1/admin/users", json={"user_id": "alice", "attributes": _attrs(ALICE_ATTRS)}, headers=AUTH).json() == {
        "user_id": "alice",
        "n_attributes": 4,
    }
    return fed


def _fetch(fed, **kw):
    body = {"peer_id": "domain1", "resource_id": "resource-1", "user_id": "alice", "mode": "fresh", **kw}
    return fed.http("domain2").post("/v1/client/fetch", json=body, headers=AUTH)


def test_fetch_permit(http_fed):
    resp = _fetch(http_fed)
    body = resp.json()
    assert body["decision"] == "permit" and body["reason"] == "ok"
    assert base64.b64decode(body["content_b64"]) == SECRET
    assert body["timings"]["verify"] > 0


def test_fetch_missing_attribute(http_fed):
    http_fed.http("domain2").post("/v1/admin/users", json={"user_id": "alice", "attributes": _attrs(ALICE_ATTRS[:3])}, headers=AUTH)
    body = _fetch(http_fed).json()
    assert (body["decision"], body["reason"], body["content_b64"]) == ("deny", "missing-attribute", None)
    assert http_fed["domain1"].gateway.completions == 0


@pytest.mark.parametrize(
    "kw,status",
    [({"peer_id": "domain9"}, 409), ({"user_id": "mallory"}, 404), ({"mode": "weird"}, 422)],
)
def test_fetch_errors(http_fed, kw, status):
    resp = _fetch(http_fed, **kw)
    assert resp.status_code == status


def test_fetch_unknown_resource_is_deny(http_fed):
    body = _fetch(http_fed, resource_id="nope").json()
    assert (body["decision"], body["reason"]) == ("deny", "unknown-resource")


@pytest.mark.parametrize("headers", [{}, {"Authorization": "Bearer nope"}, {"Authorization": TOKEN}])
def test_admin_and_fetch_need_token(http_fed, headers):
    c1 = http_fed.http("domain1")
    before = http_fed["domain1"].policies.raw_bytes()
    for path, body in [
        ("/v1/admin/policies", {"resource_id": "resource-1", "entries": []}),
        ("/v1/admin/resources", {"resource_id": "x", "display_name": "X"}),
        ("/v1/admin/users", {"user_id": "eve", "attributes": []}),
        ("/v1/client/fetch", {"peer_id": "domain2", "resource_id": "r", "user_id": "u"}),
    ]:
        resp = c1.post(path, json=body, headers=headers)
        assert resp.status_code == 403, path
        assert resp.json()["reason"] == "auth-failure"
    assert http_fed["domain1"].policies.raw_bytes() == before
    assert "x" not in http_fed["domain1"].resources


def test_policy_for_unknown_resource(http_fed):
    resp = http_fed.http("domain1").post("/v1/admin/policies", json={"resource_id": "ghost", "entries": []}, headers=AUTH)
    assert resp.status_code == 404


@pytest.mark.parametrize(
    "entry",
    [{"category": "Mood", "name": "x", "value": "y"}, {"category": "Subject", "name": "bad name", "value": "y"}],
)
def test_invalid_attribute_rejected(http_fed, entry):
    resp = http_fed.http("domain1").post("/v1/admin/policies", json={"resource_id": "resource-1", "entries": [entry]}, headers=AUTH)
    assert resp.status_code == 422


def test_bad_content_base64(http_fed):
    resp = http_fed.http("domain1").post(
        "/v1/admin/resources", json={"resource_id": "r2", "display_name": "R", "content_b64": "%%%"}, headers=AUTH
    )
    assert resp.status_code == 422


def test_initiate_unknown_resource(http_fed):
    resp = http_fed.http("domain1").post("/v1/access/initiate", json={"resource_id": "ghost", "requester_domain": "domain2"})
    assert resp.status_code == 404


def test_federation_keys(http_fed):
    c1 = http_fed.http("domain1")
    tpk = absig.TrusteePublicKey.from_bytes(base64.b64decode(c1.get("/v1/federation/tpk").json()["tpk_b64"]))
    assert tpk == http_fed.tpk
    apk = c1.get("/v1/federation/apk").json()
    assert apk["domain_id"] == "domain1"
    assert base64.b64decode(apk["apk_b64"]) == http_fed["domain1"].authority.apk


def test_openapi_lists_endpoints(http_fed):
    paths = http_fed.http("domain1").get("/openapi.json").json()["paths"]
    assert {"/v1/resources", "/v1/access/initiate", "/v1/access/complete", "/v1/client/fetch"} <= set(paths)
