"""Latency harness: fresh-key vs stored-key access across attribute counts.

Two domains run as real uvicorn servers on loopback inside this process.
Domain 1 owns one resource per synthetic user, protected by a policy that
user's attributes satisfy exactly; domain 2 hosts the users and fetches.
"""

from __future__ import annotations

import csv
import gc
import json
import logging
import random
import socket
import statistics
import string
import tempfile
import threading
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import uvicorn

from abacfed import abs as absig
from abacfed.api import create_app
from abacfed.config import DomainConfig, PeerConfig
from abacfed.domain import Domain
from abacfed.federation import request_remote_resource
from abacfed.keycache import CacheMode
from abacfed.model import Attribute, Category, Policy
from abacfed.services import ResourceRecord, UserRecord

log = logging.getLogger(__name__)

CSV_COLUMNS = [
    "user_index",
    "n_attributes",
    "mode",
    "rep",
    "asetup_s",
    "attrgen_s",
    "sign_s",
    "verify_s",
    "transfer_s",
    "total_s",
]
PHASES = ["asetup_s", "attrgen_s", "sign_s", "verify_s", "transfer_s", "total_s"]
_TOKEN = "bench-admin"


class BenchmarkAborted(RuntimeError):
    pass


@dataclass(frozen=True)
class BenchConfig:
    user_attr_counts: tuple[int, ...] = (2, 4, 6, 8, 10)
    repetitions: int = 20
    modes: tuple[str, ...] = ("fresh", "cached")
    warmup: int = 3
    seed: int = 0
    # third, clearly separate series that replays cached signatures
    cached_signature_series: bool = False

    def __post_init__(self) -> None:
        counts = tuple(int(c) for c in self.user_attr_counts)
        object.__setattr__(self, "user_attr_counts", counts)
        object.__setattr__(self, "modes", tuple(CacheMode(m).value for m in self.modes))
        if not counts or any(c <= 0 for c in counts):
            raise ValueError("attribute counts must be positive")
        if any(a >= b for a, b in zip(counts, counts[1:])):
            raise ValueError("attribute counts must be strictly increasing")
        if self.repetitions <= self.warmup or self.warmup < 0:
            raise ValueError("repetitions must exceed warmup")
        if CacheMode.CACHED_SIGNATURE.value in self.modes:
            raise ValueError("use cached_signature_series for the signature-replay series")

    @classmethod
    def from_dict(cls, raw: dict) -> BenchConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown bench options: {sorted(unknown)}")
        kw = dict(raw)
        for k in ("user_attr_counts", "modes"):
            if k in kw:
                kw[k] = tuple(kw[k])
        return cls(**kw)


@dataclass
class BenchRow:
    user_index: int
    n_attributes: int
    mode: str
    rep: int
    asetup_s: float = 0.0
    attrgen_s: float = 0.0
    sign_s: float = 0.0
    verify_s: float = 0.0
    transfer_s: float = 0.0
    total_s: float = 0.0


@dataclass
class BenchResult:
    config: BenchConfig
    rows: list[BenchRow]
    summary: dict = field(default_factory=dict)


# --- synthetic population ---------------------------------------------------


def make_users(config: BenchConfig) -> list[tuple[str, list[Attribute]]]:
    rng = random.Random(config.seed)
    cats = [Category.SUBJECT, Category.SUBJECT, Category.ENVIRONMENT, Category.ACTION]
    users = []
    for i, n in enumerate(config.user_attr_counts):
        attrs = []
        for j in range(n):
            value = "".join(rng.choices(string.ascii_lowercase, k=8))
            attrs.append(Attribute(cats[j % len(cats)], f"attr_{j:02d}", value))
        users.append((f"user{i}", attrs))
    return users


# --- servers ----------------------------------------------------------------


def _free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


class ServerThread:
    """A uvicorn server running in a daemon thread."""

    def __init__(self, app, port: int):
        self.server = uvicorn.Server(uvicorn.Config(app, host="127.0.0.1", port=port, log_level="warning"))
        self.thread = threading.Thread(target=self.server.run, daemon=True)

    def __enter__(self):
        self.thread.start()
        deadline = time.monotonic() + 10
        while not self.server.started:
            if not self.thread.is_alive() or time.monotonic() > deadline:
                raise RuntimeError("server failed to start")
            time.sleep(0.01)
        return self

    def __exit__(self, *exc):
        self.server.should_exit = True
        self.thread.join(timeout=10)


def _build_domains(root: Path, tpk) -> tuple[Domain, Domain]:
    p1, p2 = _free_port(), _free_port()
    url1, url2 = f"http://127.0.0.1:{p1}", f"http://127.0.0.1:{p2}"
    d1 = Domain(
        DomainConfig("domain1", root / "d1", _TOKEN, root / "fed.tpk", port=p1, peers=(PeerConfig("domain2", url2),)),
        tpk,
    )
    d2 = Domain(
        DomainConfig("domain2", root / "d2", _TOKEN, root / "fed.tpk", port=p2, peers=(PeerConfig("domain1", url1),)),
        tpk,
    )
    return d1, d2


# --- the run ----------------------------------------------------------------


def _row(user_index: int, n: int, mode: str, rep: int, timings: dict) -> BenchRow:
    return BenchRow(
        user_index=user_index,
        n_attributes=n,
        mode=mode,
        rep=rep,
        asetup_s=timings.get("asetup", 0.0),
        attrgen_s=timings.get("attrgen", 0.0),
        sign_s=timings.get("sign", 0.0),
        verify_s=timings.get("verify", 0.0),
        transfer_s=timings.get("transfer", 0.0),
        total_s=timings["total"],
    )


def _fetch(d2: Domain, user: str, resource: str, mode: str, diag: str) -> dict:
    result = request_remote_resource(d2, "domain1", resource, user, mode)
    if not result.decision.permitted:
        raise BenchmarkAborted(f"{diag}: denied ({result.decision.reason}); timings={result.timings}")
    return result.timings


def run_benchmark(config: BenchConfig, workdir: str | Path | None = None) -> BenchResult:
    """Run every (repetition, user, mode) once and summarize.

    Modes alternate order between repetitions so slow drift in the machine
    affects both equally. Requests are strictly sequential.
    """
    tmp = None
    if workdir is None:
        tmp = tempfile.TemporaryDirectory(prefix="abacfed-bench-")
        workdir = tmp.name
    root = Path(workdir)
    tpk = absig.ts_setup("bench-federation")
    d1, d2 = _build_domains(root, tpk)
    users = make_users(config)
    for i, (uid, attrs) in enumerate(users):
        rid = f"res-u{i}"
        d1.pap.put_resource(_TOKEN, ResourceRecord(rid, f"Resource for {uid}", f"payload {i}".encode()))
        d1.pap.put_policy(_TOKEN, Policy(rid, tuple(attrs)))
        d2.pip.put_user(d2.auth, _TOKEN, UserRecord(uid, tuple(attrs)))

    rows: list[BenchRow] = []
    gc_was_enabled = gc.isenabled()
    try:
        with ServerThread(create_app(d1), d1.config.port), ServerThread(create_app(d2), d2.config.port):
            d2.registry.register_peer("domain1")
            gc.collect()
            gc.disable()
            for rep in range(config.repetitions):
                order = config.modes if rep % 2 == 0 else tuple(reversed(config.modes))
                for i, (uid, attrs) in enumerate(users):
                    for mode in order:
                        t = _fetch(d2, uid, f"res-u{i}", mode, f"rep {rep} user {uid} mode {mode}")
                        rows.append(_row(i, len(attrs), mode, rep, t))
                gc.collect()
            if config.cached_signature_series:
                d1.gateway.repeat_messages = True
                mode = CacheMode.CACHED_SIGNATURE.value
                for rep in range(config.repetitions):
                    for i, (uid, attrs) in enumerate(users):
                        t = _fetch(d2, uid, f"res-u{i}", mode, f"rep {rep} user {uid} mode {mode}")
                        rows.append(_row(i, len(attrs), mode, rep, t))
                    gc.collect()
    finally:
        if gc_was_enabled:
            gc.enable()
        d1.close()
        d2.close()
        if tmp is not None:
            tmp.cleanup()
    return BenchResult(config, rows, summarize(rows, config.warmup))


# --- analysis ---------------------------------------------------------------


def _timer_resolution() -> float:
    return time.get_clock_info("perf_counter").resolution


def medians(rows: list[BenchRow], warmup: int) -> dict[str, dict[int, dict[str, float]]]:
    """mode -> n_attributes -> phase -> median seconds, warmup reps excluded."""
    groups: dict[tuple[str, int], list[BenchRow]] = {}
    for r in rows:
        if r.rep >= warmup:
            groups.setdefault((r.mode, r.n_attributes), []).append(r)
    out: dict[str, dict[int, dict[str, float]]] = {}
    for (mode, n), rs in sorted(groups.items()):
        out.setdefault(mode, {})[n] = {p: statistics.median(getattr(r, p) for r in rs) for p in PHASES}
    return out


def _slope(xs: list[float], ys: list[float]) -> float:
    if len(xs) < 2:
        return 0.0
    return statistics.linear_regression(xs, ys).slope


def summarize(rows: list[BenchRow], warmup: int) -> dict:
    med = medians(rows, warmup)
    tol = _timer_resolution()
    verdicts: dict[str, bool] = {}
    slopes: dict[str, float] = {}
    for mode, by_n in med.items():
        ns = sorted(by_n)
        ys = [by_n[n]["verify_s"] for n in ns]
        verdicts[f"verify_monotone[{mode}]"] = all(b >= a - tol for a, b in zip(ys, ys[1:]))
        slopes[mode] = _slope([float(n) for n in ns], ys)
        verdicts[f"verify_slope_positive[{mode}]"] = slopes[mode] > 0
    ratios: dict[int, float] = {}
    if "fresh" in med and "cached" in med:
        for n in sorted(set(med["fresh"]) & set(med["cached"])):
            fresh, cached = med["fresh"][n]["total_s"], med["cached"][n]["total_s"]
            ratios[n] = cached / fresh if fresh else float("nan")
            verdicts[f"cached_total_below_fresh[n={n}]"] = cached < fresh
    return {
        "medians": {m: {str(n): v for n, v in by_n.items()} for m, by_n in med.items()},
        "verify_slope_s_per_attr": slopes,
        "cached_over_fresh_total": {str(n): r for n, r in ratios.items()},
        "verdicts": verdicts,
        "all_pass": all(verdicts.values()),
    }


# --- reports ----------------------------------------------------------------


def _write_dat(path: Path, title: str, series: dict[str, list[tuple[int, float]]]) -> None:
    lines = [f"# {title}", "# x=n_attributes y=median_seconds"]
    for mode, points in series.items():
        lines.append(f"# mode={mode}")
        lines += [f"{n} {y:.9f}" for n, y in points]
        lines.append("")
    path.write_text("\n".join(lines))


def emit_report(result: BenchResult, out_dir: str | Path) -> dict[str, Path]:
    rows = result.rows
    if not rows:
        raise ValueError("no rows to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "csv": out / "rows.csv",
        "fig4": out / "fig4.dat",
        "fig5": out / "fig5.dat",
        "fig6": out / "fig6.dat",
        "markdown": out / "summary.md",
        "json": out / "summary.json",
    }
    with open(paths["csv"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in rows:
            d = asdict(r)
            w.writerow([d[c] if not c.endswith("_s") else f"{d[c]:.9f}" for c in CSV_COLUMNS])

    med = medians(rows, result.config.warmup)
    _write_dat(
        paths["fig4"],
        "time to verify signature",
        {m: [(n, v["verify_s"]) for n, v in sorted(by_n.items())] for m, by_n in med.items()},
    )
    for key, mode, title in (("fig5", "fresh", "overall time, keys generated each time"), ("fig6", "cached", "overall time, stored keys")):
        series = {mode: [(n, v["total_s"]) for n, v in sorted(med.get(mode, {}).items())]}
        _write_dat(paths[key], title, series)

    paths["markdown"].write_text(render_markdown(result))
    paths["json"].write_text(json.dumps({"config": asdict(result.config), **result.summary}, indent=2))
    return paths


def render_markdown(result: BenchResult) -> str:
    s = result.summary
    med = medians(result.rows, result.config.warmup)
    lines = [
        "# Benchmark summary",
        "",
        f"Rows: {len(result.rows)} (warmup reps excluded from medians: {result.config.warmup})",
        "",
        "## Median seconds per phase",
        "",
        "| mode | n | asetup | attrgen | sign | verify | transfer | total |",
        "|---|---|---|---|---|---|---|---|",
    ]
    for mode, by_n in med.items():
        for n, v in sorted(by_n.items()):
            cells = " | ".join(f"{v[p]:.6f}" for p in PHASES)
            lines.append(f"| {mode} | {n} | {cells} |")
    if s.get("cached_over_fresh_total"):
        lines += ["", "## Stored keys vs generated keys (median total)", "", "| n | cached/fresh |", "|---|---|"]
        for n, r in s["cached_over_fresh_total"].items():
            lines.append(f"| {n} | {r:.3f} |")
    lines += ["", "## Trend checks", "", "| check | result |", "|---|---|"]
    for name, ok in s["verdicts"].items():
        lines.append(f"| {name} | {'PASS' if ok else 'FAIL'} |")
    lines += ["", "Absolute times depend on the machine and are reported, not asserted.", ""]
    return "\n".join(lines)
