from __future__ import annotations

import json
import logging
import os
import subprocess
import sys
import time

import httpx
import pytest
from conftest import ALICE_ATTRS, ALICE_POLICY, SECRET, TOKEN, LiveFederation

from abacfed.bench import _free_port
from abacfed.cli import EXIT_DENY, EXIT_OK, EXIT_TRANSPORT, EXIT_USAGE, main


@pytest.fixture
def live(tmp_path):
    f = LiveFederation(tmp_path)
    yield f
    f.close()


def _setup_alice(live, tmp_path, attrs=ALICE_ATTRS):
    content = tmp_path / "secret.bin"
    content.write_bytes(SECRET)
    (tmp_path / "res.json").write_text(json.dumps({"resource_id": "resource-1", "display_name": "Echo report"}))
    (tmp_path / "pol.json").write_text(json.dumps(ALICE_POLICY.to_json()))
    (tmp_path / "alice.json").write_text(json.dumps({"user_id": "alice", "attributes": [a.to_json() for a in attrs]}))
    assert live.cli("domain1", "admin", "add-resource", str(tmp_path / "res.json"), "--content-file", str(content)) == 0
    assert live.cli("domain1", "admin", "add-policy", str(tmp_path / "pol.json")) == 0
    assert live.cli("domain2", "admin", "add-user", str(tmp_path / "alice.json")) == 0


def test_get_permit(live, tmp_path, capsys):
    _setup_alice(live, tmp_path)
    out = tmp_path / "got.bin"
    assert live.cli("domain2", "client", "get", "domain1", "resource-1", "--user", "alice", "--out", str(out), "--json") == EXIT_OK
    assert out.read_bytes() == SECRET
    report = json.loads(capsys.readouterr().err)
    assert report["decision"] == "permit" and report["timings"]["verify"] > 0


def test_get_to_stdout(live, tmp_path, capfdbinary):
    _setup_alice(live, tmp_path)
    capfdbinary.readouterr()
    assert live.cli("domain2", "client", "get", "domain1", "resource-1", "--user", "alice", "--mode", "fresh") == EXIT_OK
    assert capfdbinary.readouterr().out.endswith(SECRET)


def test_get_missing_attribute(live, tmp_path, capsys, caplog):
    caplog.set_level(logging.INFO, logger="abacfed")
    _setup_alice(live, tmp_path, ALICE_ATTRS[:3])
    capsys.readouterr()
    assert live.cli("domain2", "client", "get", "domain1", "resource-1", "--user", "alice", "--json") == EXIT_DENY
    err = json.loads(capsys.readouterr().err)
    assert err["reason"] == "missing-attribute"
    assert live["domain1"].gateway.completions == 0
    assert "challenge" in caplog.text  # the initiate step is logged ...
    assert "complete_access" not in caplog.text  # ... but nothing was ever completed
    # positive control: with the attribute back, the same trace shows a completion
    (tmp_path / "alice.json").write_text(json.dumps({"user_id": "alice", "attributes": [a.to_json() for a in ALICE_ATTRS]}))
    assert live.cli("domain2", "admin", "add-user", str(tmp_path / "alice.json")) == EXIT_OK
    assert live.cli("domain2", "client", "get", "domain1", "resource-1", "--user", "alice", "--out", str(tmp_path / "o")) == EXIT_OK
    assert "complete_access" in caplog.text


def test_get_unknown_resource(live, tmp_path, capsys):
    _setup_alice(live, tmp_path)
    capsys.readouterr()
    assert live.cli("domain2", "client", "get", "domain1", "ghost", "--user", "alice", "--json") == EXIT_DENY
    assert json.loads(capsys.readouterr().err)["reason"] == "unknown-resource"


def test_cli_agrees_with_modules(live, tmp_path, capsys):
    """Same scenarios driven through the CLI and through request_remote_resource."""
    from abacfed.errors import MissingAttributeError
    from abacfed.federation import request_remote_resource
    from abacfed.model import Attribute

    _setup_alice(live, tmp_path)
    d2 = live["domain2"]
    scenarios = {
        "ok": ALICE_ATTRS,
        "perturbed": ALICE_ATTRS[:3] + (Attribute(ALICE_ATTRS[3].category, "city", "Perth"),),
        "missing": ALICE_ATTRS[:3],
    }
    for uid, attrs in scenarios.items():
        (tmp_path / "u.json").write_text(json.dumps({"user_id": uid, "attributes": [a.to_json() for a in attrs]}))
        assert live.cli("domain2", "admin", "add-user", str(tmp_path / "u.json")) == EXIT_OK
        capsys.readouterr()
        code = live.cli("domain2", "client", "get", "domain1", "resource-1", "--user", uid, "--out", str(tmp_path / "o"), "--json")
        cli_reason = "ok" if code == EXIT_OK else json.loads(capsys.readouterr().err)["reason"]
        try:
            module_reason = request_remote_resource(d2, "domain1", "resource-1", uid, "fresh").decision.reason
        except MissingAttributeError as exc:
            module_reason = exc.reason
        assert cli_reason == module_reason, uid


def test_ls(live, tmp_path, capsys):
    _setup_alice(live, tmp_path)
    capsys.readouterr()
    assert live.cli("domain2", "client", "ls", "domain1", "--json") == EXIT_OK
    assert json.loads(capsys.readouterr().out) == [{"resource_id": "resource-1", "display_name": "Echo report"}]
    assert live.cli("domain2", "client", "ls", "domain1") == EXIT_OK
    assert capsys.readouterr().out == "resource-1\tEcho report\n"


def test_unknown_peer_is_usage_error(live, tmp_path):
    assert live.cli("domain2", "client", "ls", "domain9") == EXIT_USAGE
    assert live.cli("domain2", "client", "get", "domain9", "r", "--user", "alice") == EXIT_USAGE


def test_bad_admin_token(live, tmp_path, monkeypatch, capsys):
    (tmp_path / "res.json").write_text(json.dumps({"resource_id": "x", "display_name": "X"}))
    monkeypatch.setenv("ABACFED_ADMIN_TOKEN", "wrong")
    assert live.cli("domain1", "admin", "add-resource", str(tmp_path / "res.json"), "--json") == EXIT_USAGE
    assert json.loads(capsys.readouterr().err)["reason"] == "auth-failure"
    assert "x" not in live["domain1"].resources


def test_transport_error(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text(f'domain_id = "d"\nport = {_free_port()}\nadmin_token = "t"\n')
    assert main(["client", "get", "p", "r", "--user", "u", "--config", str(cfg), "--json"]) == EXIT_TRANSPORT
    assert json.loads(capsys.readouterr().err)["reason"] == "transport"


def test_usage_errors(tmp_path):
    assert main([]) == EXIT_USAGE
    assert main(["client", "get", "p", "r"]) == EXIT_USAGE
    assert main(["client", "ls", "p"]) == EXIT_USAGE  # no --config
    assert main(["client", "ls", "p", "--config", str(tmp_path / "missing.toml")]) == EXIT_USAGE
    assert main(["--help"]) == EXIT_OK


def test_trustee_refuses_overwrite(tmp_path):
    out = tmp_path / "fed.tpk"
    assert main(["trustee", "init", "--out", str(out)]) == EXIT_OK
    before = out.read_bytes()
    assert main(["trustee", "init", "--out", str(out)]) == EXIT_USAGE
    assert out.read_bytes() == before
    assert main(["trustee", "init", "--out", str(out), "--force"]) == EXIT_OK
    assert out.read_bytes() != before


def test_admin_from_stdin(live, monkeypatch):
    import io

    monkeypatch.setattr(sys, "stdin", io.StringIO(json.dumps({"user_id": "bob", "attributes": []})))
    assert live.cli("domain2", "admin", "add-user", "-") == EXIT_OK
    assert "bob" in live["domain2"].users


def test_bench_run(tmp_path, capsys):
    cfg = tmp_path / "bench.toml"
    cfg.write_text("[bench]\nuser_attr_counts = [2, 4]\nrepetitions = 4\nwarmup = 1\n")
    out = tmp_path / "out"
    assert main(["bench", "run", "--config", str(cfg), "--out", str(out), "--json"]) == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["rows"] == 16
    assert (out / "rows.csv").exists() and (out / "summary.md").exists()
    cfg.write_text("[bench]\nrepetitions = 'many'\n")
    assert main(["bench", "run", "--config", str(cfg), "--out", str(out)]) == EXIT_USAGE


def test_serve_subprocess(tmp_path):
    """The real daemon entry point: two `abacfed serve` processes and a CLI fetch."""
    assert main(["trustee", "init", "--out", str(tmp_path / "federation.tpk")]) == EXIT_OK
    p1, p2 = _free_port(), _free_port()
    for did, port, other, oport in (("domain1", p1, "domain2", p2), ("domain2", p2, "domain1", p1)):
        (tmp_path / f"{did}.toml").write_text(
            f'domain_id = "{did}"\nport = {port}\ndata_dir = "data/{did}"\nadmin_token = "{TOKEN}"\n'
            f'\n[[peers]]\ndomain_id = "{other}"\nbase_url = "http://127.0.0.1:{oport}"\n'
        )
    env = {**os.environ, "PYTHONUNBUFFERED": "1"}
    procs = [
        subprocess.Popen(
            [sys.executable, "-m", "abacfed.cli", "serve", "--config", str(tmp_path / f"{d}.toml"), "--log-level", "warning"],
            env=env,
            stdout=subprocess.DEVNULL,
            stderr=subprocess.DEVNULL,
        )
        for d in ("domain1", "domain2")
    ]
    try:
        deadline = time.monotonic() + 20
        for port in (p1, p2):
            while True:
                try:
                    if httpx.get(f"http://127.0.0.1:{port}/v1/resources").status_code == 200:
                        break
                except httpx.HTTPError:
                    pass
                assert time.monotonic() < deadline, "daemon did not start"
                time.sleep(0.05)
        cfg1, cfg2 = str(tmp_path / "domain1.toml"), str(tmp_path / "domain2.toml")
        (tmp_path / "res.json").write_text(json.dumps({"resource_id": "r", "display_name": "R", "content_b64": "aGk="}))
        (tmp_path / "pol.json").write_text(json.dumps({"resource_id": "r", "entries": [ALICE_ATTRS[0].to_json()]}))
        (tmp_path / "u.json").write_text(json.dumps({"user_id": "alice", "attributes": [ALICE_ATTRS[0].to_json()]}))
        assert main(["admin", "add-resource", str(tmp_path / "res.json"), "--config", cfg1]) == EXIT_OK
        assert main(["admin", "add-policy", str(tmp_path / "pol.json"), "--config", cfg1]) == EXIT_OK
        assert main(["admin", "add-user", str(tmp_path / "u.json"), "--config", cfg2]) == EXIT_OK
        out = tmp_path / "got"
        assert main(["client", "get", "domain1", "r", "--user", "alice", "--out", str(out), "--config", cfg2]) == EXIT_OK
        assert out.read_bytes() == b"hi"
        assert (tmp_path / "data" / "domain2" / "authority.json").stat().st_mode & 0o777 == 0o600
    finally:
        for p in procs:
            p.terminate()
            p.wait(timeout=10)
