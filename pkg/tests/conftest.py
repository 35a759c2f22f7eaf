from __future__ import annotations

import base64
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from abacfed import abs as absig
from abacfed.api import create_app
from abacfed.bench import ServerThread, _free_port
from abacfed.cli import main as cli_main
from abacfed.config import DomainConfig, PeerConfig, load_config
from abacfed.domain import Domain
from abacfed.model import AliasMap, Attribute, Category, Policy
from abacfed.services import ResourceRecord, UserRecord

TOKEN = "s3cret-admin"

S, E = Category.SUBJECT, Category.ENVIRONMENT

ALICE_ATTRS = (
    Attribute(S, "first_name", "Alice"),
    Attribute(S, "position", "cardiologist"),
    Attribute(S, "hospital", "Box Hill"),
    Attribute(E, "city", "Melbourne"),
)
ALICE_POLICY = Policy("resource-1", ALICE_ATTRS)
SECRET = b"echocardiogram report #7 \x00\x01 binary"


class Federation:
    """Two or more domains talking over in-process ASGI clients."""

    def __init__(self, root: Path, ids=("domain1", "domain2"), aliases=None, clock=None, tpk=None, **domain_kw):
        self.tpk = tpk or absig.ts_setup("fed1")
        self.clients: dict[str, TestClient] = {}
        self.domains: dict[str, Domain] = {}
        aliases = aliases or {}
        for did in ids:
            peers = tuple(
                PeerConfig(other, f"http://{other}", aliases.get((did, other), AliasMap())) for other in ids if other != did
            )
            cfg = DomainConfig(
                domain_id=did,
                data_dir=root / did,
                admin_token=TOKEN,
                tpk_path=root / "fed.tpk",
                peers=peers,
            )
            kw = {"clock": clock} if clock else {}
            self.domains[did] = Domain(cfg, self.tpk, client_factory=self.client_for, **kw, **domain_kw)
            client = TestClient(create_app(self.domains[did]), base_url=f"http://{did}")
            client.__enter__()  # keep one event-loop portal alive instead of one per request
            self.clients[f"http://{did}"] = client

    def close(self) -> None:
        for c in self.clients.values():
            c.__exit__(None, None, None)

    def client_for(self, base_url: str) -> TestClient:
        return self.clients[base_url]

    def __getitem__(self, did: str) -> Domain:
        return self.domains[did]

    def http(self, did: str) -> TestClient:
        return self.clients[f"http://{did}"]


class LiveFederation:
    """Two daemons on loopback uvicorn servers, configured from TOML files like a deployment."""

    def __init__(self, root: Path, ids=("domain1", "domain2")):
        self.root = root
        ports = {did: _free_port() for did in ids}
        assert cli_main(["trustee", "init", "--out", str(root / "federation.tpk"), "--federation", "fed"]) == 0
        self.configs: dict[str, Path] = {}
        for did in ids:
            lines = [
                f'domain_id = "{did}"',
                f"port = {ports[did]}",
                f'data_dir = "data/{did}"',
                f'admin_token = "{TOKEN}"',
                'tpk_path = "federation.tpk"',
            ]
            for other in ids:
                if other != did:
                    lines += ["", "[[peers]]", f'domain_id = "{other}"', f'base_url = "http://127.0.0.1:{ports[other]}"']
            path = root / f"{did}.toml"
            path.write_text("\n".join(lines) + "\n")
            self.configs[did] = path
        self.domains = {did: Domain(load_config(self.configs[did])) for did in ids}
        self.servers = [
            ServerThread(create_app(d, pin_peers=True), d.config.port).__enter__() for d in self.domains.values()
        ]

    def cli(self, did: str, *argv: str) -> int:
        return cli_main([*argv, "--config", str(self.configs[did])])

    def close(self) -> None:
        for s in self.servers:
            s.__exit__(None, None, None)

    def __getitem__(self, did: str) -> Domain:
        return self.domains[did]


def publish(domain: Domain, policy: Policy, content: bytes = SECRET, name: str = "Resource 1") -> None:
    domain.pap.put_resource(TOKEN, ResourceRecord(policy.resource_id, name, content))
    domain.pap.put_policy(TOKEN, policy)


def add_user(domain: Domain, user_id: str, attrs) -> None:
    domain.pip.put_user(domain.auth, TOKEN, UserRecord(user_id, tuple(attrs)))


def b64(data: bytes) -> str:
    return base64.b64encode(data).decode()


@pytest.fixture
def fed(tmp_path):
    f = Federation(tmp_path)
    yield f
    f.close()


@pytest.fixture
def alice_fed(fed) -> Federation:
    publish(fed["domain1"], ALICE_POLICY)
    add_user(fed["domain2"], "alice", ALICE_ATTRS)
    return fed


# --- acceptance reporting -------------------------------------------------------

ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
