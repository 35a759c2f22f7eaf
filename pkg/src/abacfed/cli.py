"""Command-line entry points.

Exit codes: 0 success, 1 access denied, 2 usage or configuration error,
3 transport error. With ``--json`` errors are reported on stderr as a JSON
object ``{"error": ..., "reason": ..., "detail": ...}``.
"""

from __future__ import annotations

import argparse
import base64
import json
import logging
import sys
from pathlib import Path

import httpx

EXIT_OK, EXIT_DENY, EXIT_USAGE, EXIT_TRANSPORT = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, code: int, reason: str, detail: str = "", **extra):
        super().__init__(detail or reason)
        self.code = code
        self.reason = reason
        self.detail = detail
        self.extra = extra


def _report(args, err: CliError) -> None:
    if getattr(args, "json", False):
        body = {"error": err.reason, "reason": err.reason, "detail": err.detail, "exit_code": err.code, **err.extra}
        print(json.dumps(body), file=sys.stderr)
    else:
        msg = f"{err.reason}: {err.detail}" if err.detail else err.reason
        print(f"abacfed: {msg}", file=sys.stderr)


def _config(args):
    from abacfed.config import ConfigError, load_config

    if not args.config:
        raise CliError(EXIT_USAGE, "usage", "--config is required")
    try:
        return load_config(args.config, getattr(args, "data_dir", None))
    except ConfigError as exc:
        raise CliError(EXIT_USAGE, "config", str(exc)) from exc


def _http(base_url: str) -> httpx.Client:
    return httpx.Client(base_url=base_url, timeout=30.0)


def _request(client: httpx.Client, method: str, path: str, **kw) -> httpx.Response:
    try:
        return client.request(method, path, **kw)
    except httpx.HTTPError as exc:
        raise CliError(EXIT_TRANSPORT, "transport", f"{client.base_url}{path}: {exc}") from exc


def _read_json(source: str) -> dict:
    try:
        text = sys.stdin.read() if source == "-" else Path(source).read_text()
        return json.loads(text)
    except (OSError, ValueError) as exc:
        raise CliError(EXIT_USAGE, "input", f"cannot read JSON from {source}: {exc}") from exc


# --- commands ----------------------------------------------------------------


def cmd_serve(args) -> int:
    import uvicorn

    from abacfed.api import create_app
    from abacfed.domain import Domain

    cfg = _config(args)
    try:
        domain = Domain(cfg)
    except (OSError, ValueError) as exc:
        raise CliError(EXIT_USAGE, "config", str(exc)) from exc
    app = create_app(domain, pin_peers=True)
    uvicorn.run(app, host=cfg.host, port=cfg.port, log_level=args.log_level)
    return EXIT_OK


def cmd_trustee_init(args) -> int:
    from abacfed.abs import ts_setup
    from abacfed.domain import write_tpk

    out = Path(args.out)
    if out.exists() and not args.force:
        raise CliError(EXIT_USAGE, "exists", f"{out} exists; pass --force to overwrite")
    tpk = ts_setup(args.federation)
    write_tpk(tpk, out)
    print(json.dumps({"federation_id": tpk.federation_id, "path": str(out)}) if args.json else f"wrote {out}")
    return EXIT_OK


_ADMIN_PATHS = {"add-user": "/v1/admin/users", "add-resource": "/v1/admin/resources", "add-policy": "/v1/admin/policies"}


def cmd_admin(args) -> int:
    cfg = _config(args)
    body = _read_json(args.input)
    if args.action == "add-resource" and args.content_file:
        body["content_b64"] = base64.b64encode(Path(args.content_file).read_bytes()).decode()
    with _http(cfg.base_url) as client:
        resp = _request(
            client,
            "POST",
            _ADMIN_PATHS[args.action],
            json=body,
            headers={"Authorization": f"Bearer {cfg.admin_token}"},
        )
    if resp.status_code != 200:
        payload = _safe_json(resp)
        reason = payload.get("reason") or payload.get("error") or f"http-{resp.status_code}"
        code = EXIT_USAGE if resp.status_code in (400, 403, 404, 422) else EXIT_TRANSPORT
        raise CliError(code, reason, str(payload.get("detail", "")), status=resp.status_code)
    print(json.dumps(resp.json()))
    return EXIT_OK


def _safe_json(resp: httpx.Response) -> dict:
    try:
        body = resp.json()
    except ValueError:
        return {}
    return body if isinstance(body, dict) else {"detail": body}


def cmd_client_ls(args) -> int:
    cfg = _config(args)
    try:
        peer = cfg.peer(args.peer)
    except ValueError as exc:
        raise CliError(EXIT_USAGE, "unknown-peer", str(exc)) from exc
    with _http(peer.base_url) as client:
        resp = _request(client, "GET", "/v1/resources")
    if resp.status_code != 200:
        raise CliError(EXIT_TRANSPORT, "transport", f"HTTP {resp.status_code}")
    items = resp.json()
    if args.json:
        print(json.dumps(items))
    else:
        for item in items:
            print(f"{item['resource_id']}\t{item['display_name']}")
    return EXIT_OK


def cmd_client_get(args) -> int:
    cfg = _config(args)
    mode = args.mode or cfg.cache_mode.value
    with _http(cfg.base_url) as client:
        resp = _request(
            client,
            "POST",
            "/v1/client/fetch",
            json={"peer_id": args.peer, "resource_id": args.resource_id, "user_id": args.user, "mode": mode},
            headers={"Authorization": f"Bearer {cfg.admin_token}"},
        )
    body = _safe_json(resp)
    if resp.status_code == 502:
        raise CliError(EXIT_TRANSPORT, "transport", body.get("detail", ""), phase=body.get("phase"))
    if resp.status_code != 200:
        raise CliError(EXIT_USAGE, body.get("reason") or f"http-{resp.status_code}", str(body.get("detail", "")))
    if body["decision"] != "permit":
        raise CliError(EXIT_DENY, body["reason"], "access denied", decision="deny", timings=body.get("timings", {}))
    content = base64.b64decode(body["content_b64"])
    if args.out:
        Path(args.out).write_bytes(content)
    else:
        sys.stdout.buffer.write(content)
        sys.stdout.flush()
    if args.json:
        print(json.dumps({"decision": "permit", "timings": body.get("timings", {})}), file=sys.stderr)
    return EXIT_OK


def cmd_bench_run(args) -> int:
    from abacfed.bench import BenchConfig, emit_report, run_benchmark

    raw = {}
    if args.config:
        from abacfed.config import tomllib

        try:
            with open(args.config, "rb") as fh:
                raw = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise CliError(EXIT_USAGE, "config", str(exc)) from exc
        raw = raw.get("bench", raw)
    try:
        config = BenchConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_USAGE, "config", str(exc)) from exc
    result = run_benchmark(config)
    paths = emit_report(result, args.out)
    summary = {"rows": len(result.rows), "all_pass": result.summary["all_pass"], "files": {k: str(v) for k, v in paths.items()}}
    print(json.dumps(summary) if args.json else paths["markdown"].read_text())
    return EXIT_OK


# --- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", default=argparse.SUPPRESS, help="machine-readable output")
    common.add_argument("--config", default=argparse.SUPPRESS, help="domain config file (TOML)")

    p = argparse.ArgumentParser(prog="abacfed", description=__doc__.splitlines()[0], parents=[common])
    p.set_defaults(json=False, config=None)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("serve", parents=[common], help="run a domain daemon")
    s.add_argument("--data-dir", help="override the config's data directory")
    s.add_argument("--log-level", default="info")
    s.set_defaults(func=cmd_serve)

    t = sub.add_parser("trustee", parents=[common], help="federation trustee operations")
    tsub = t.add_subparsers(dest="trustee_command", required=True)
    ti = tsub.add_parser("init", parents=[common], help="generate the federation TPK file")
    ti.add_argument("--out", required=True)
    ti.add_argument("--federation", default="federation")
    ti.add_argument("--force", action="store_true")
    ti.set_defaults(func=cmd_trustee_init)

    a = sub.add_parser("admin", parents=[common], help="administer the local domain")
    a.add_argument("action", choices=sorted(_ADMIN_PATHS))
    a.add_argument("input", nargs="?", default="-", help="JSON file, or - for stdin")
    a.add_argument("--content-file", help="add-resource: read content bytes from this file")
    a.set_defaults(func=cmd_admin)

    c = sub.add_parser("client", parents=[common], help="list or fetch remote resources")
    csub = c.add_subparsers(dest="client_command", required=True)
    ls = csub.add_parser("ls", parents=[common])
    ls.add_argument("peer")
    ls.set_defaults(func=cmd_client_ls)
    g = csub.add_parser("get", parents=[common])
    g.add_argument("peer")
    g.add_argument("resource_id")
    g.add_argument("--user", required=True)
    g.add_argument("--mode", choices=["fresh", "cached"])
    g.add_argument("--out")
    g.set_defaults(func=cmd_client_get)

    b = sub.add_parser("bench", parents=[common], help="latency benchmark")
    bsub = b.add_subparsers(dest="bench_command", required=True)
    br = bsub.add_parser("run", parents=[common])
    br.add_argument("--out", default="bench-out")
    br.set_defaults(func=cmd_bench_run)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as err:
        _report(args, err)
        return err.code


if __name__ == "__main__":
    sys.exit(main())
