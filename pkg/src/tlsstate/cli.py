"""Command-line entry point: learn, analyze, render, report, simulate-serve."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import signal
import sys
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .analysis import (AnalysisReport, analyze, check_golden, edge_classes, happy_flow,
                       table_summary)
from .automata import load_model, save_model, to_dot
from .errors import (ConfigError, ContractError, GoldenMismatch, LearningDiverged, ModelFormatError,
                     NoValidHandshake, NondeterminismError, QueryError, SutUnavailable)
from .harness.alphabets import Role, alphabet
from .harness.base import VENDOR_FIXTURES, fixture_info, fixture_machine, load_fixture
from .learner import EquivalenceConfig, MembershipOracle, QueryCache, learn
from .tls.constants import ProtocolVersion

log = logging.getLogger("tlsstate")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NONDETERMINISM = 10
EXIT_UNAVAILABLE = 11
EXIT_DIVERGED = 12
EXIT_NO_HANDSHAKE = 13
EXIT_GOLDEN = 14

_EXIT_CODES = [
    (NondeterminismError, EXIT_NONDETERMINISM),
    (SutUnavailable, EXIT_UNAVAILABLE),
    (QueryError, EXIT_UNAVAILABLE),
    (LearningDiverged, EXIT_DIVERGED),
    (NoValidHandshake, EXIT_NO_HANDSHAKE),
    (GoldenMismatch, EXIT_GOLDEN),
    (ConfigError, EXIT_USAGE),
    (ContractError, EXIT_USAGE),
    (ModelFormatError, EXIT_USAGE),
]


def exit_code(exc: BaseException) -> int:
    for cls, code in _EXIT_CODES:
        if isinstance(exc, cls):
            return code
    raise exc


def _hostport(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ConfigError(f"expected HOST:PORT, got {text!r}")
    return host or "127.0.0.1", int(port)


@dataclass
class RunConfig:
    fixture: str | None = None
    target: str | None = None        # HOST:PORT of a server to fuzz
    listen: str | None = None        # HOST:PORT to accept a fuzzed client on
    role: str | None = None
    version: str | None = None
    kx: list[str] | None = None
    timeout_ms: float = 200.0
    trigger: str | None = None
    parallel: int = 1
    equivalence: str = "wmethod"
    state_bound: int = 12
    walks: int = 1000
    max_length: int = 12
    seed: int = 0
    retries: int = 3
    flow: str | None = None
    out: str = "out"

    @classmethod
    def from_sources(cls, file_values: dict, flag_values: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(file_values) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        merged = {k: v for k, v in file_values.items()}
        merged.update({k: v for k, v in flag_values.items() if k in names and v is not None})
        if isinstance(merged.get("kx"), str):
            merged["kx"] = [k for k in merged["kx"].split(",") if k]
        cfg = cls(**merged)
        cfg.validate()
        return cfg

    @property
    def kind(self) -> str:
        return "fixture" if self.fixture else "network"

    def resolved_role(self) -> Role:
        if self.fixture:
            role = fixture_info(self.fixture).role
        elif self.listen:
            role = Role.FUZZ_CLIENT
        else:
            role = Role.FUZZ_SERVER
        if self.role is not None and Role.parse(self.role) is not role:
            raise ConfigError(f"role {self.role} contradicts the chosen target")
        return role

    def resolved_version(self) -> ProtocolVersion:
        if self.version:
            return ProtocolVersion.parse(self.version)
        if self.fixture:
            return ProtocolVersion.parse(fixture_info(self.fixture).version)
        return ProtocolVersion.TLS12

    def resolved_kx(self) -> tuple[str, ...]:
        if self.kx:
            return tuple(self.kx)
        if self.resolved_version() is ProtocolVersion.TLS10:
            return ("rsa",)
        return ("rsa", "ecdhe")

    def validate(self) -> None:
        chosen = [x for x in (self.fixture, self.target, self.listen) if x]
        if len(chosen) != 1:
            raise ConfigError("choose exactly one of --fixture, --target and --listen")
        if self.fixture:
            fixture_info(self.fixture)
        for hp in (self.target, self.listen):
            if hp:
                _hostport(hp)
        role = self.resolved_role()
        version = self.resolved_version()
        kx = self.resolved_kx()
        alphabet(role, kx)
        if "ecdhe" in kx and version is ProtocolVersion.TLS10 and self.kind == "network":
            raise ConfigError("ECDHE hellos need TLS 1.2 (TLS 1.0 runs use the RSA suite only)")
        if self.listen and not self.trigger:
            raise ConfigError("fuzzing a client over the network requires --trigger")
        if self.timeout_ms <= 0 or self.parallel < 1 or self.retries < 0:
            raise ConfigError("timeout, parallel and retries must be positive")
        if self.flow:
            happy_flow(self.flow)
        EquivalenceConfig(self.equivalence, self.state_bound, self.walks, self.max_length, self.seed)

    def equivalence_config(self) -> EquivalenceConfig:
        return EquivalenceConfig(self.equivalence, self.state_bound, self.walks, self.max_length, self.seed)


def load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    text = Path(path).read_text()
    if path.endswith((".yaml", ".yml")):
        import yaml
        data = yaml.safe_load(text) or {}
    else:
        data = json.loads(text)
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a mapping")
    return {k.replace("-", "_"): v for k, v in data.items()}


# -- learn --------------------------------------------------------------------

def build_sut(cfg: RunConfig):
    """Return (sut, alphabet, cleanup)."""
    role = cfg.resolved_role()
    if cfg.fixture:
        sut = load_fixture(cfg.fixture)
        inputs = sut.machine.inputs
        if cfg.kx:
            keep = set(alphabet(role, cfg.kx))
            inputs = tuple(a for a in inputs if a in keep)
        return sut, inputs, lambda: None

    from .harness.network import Listener, TlsClientTarget, TlsServerTarget
    version = cfg.resolved_version()
    inputs = alphabet(role, cfg.resolved_kx())
    timeout = cfg.timeout_ms / 1000
    if role is Role.FUZZ_SERVER:
        host, port = _hostport(cfg.target)
        return TlsServerTarget(host, port, version, timeout, parallel=cfg.parallel), inputs, lambda: None
    host, port = _hostport(cfg.listen)
    listener = Listener(host, port)
    sut = TlsClientTarget(listener, version, cfg.trigger, timeout, parallel=cfg.parallel)
    return sut, inputs, listener.close


def _stats_text(machine, stats, cfg: RunConfig) -> str:
    d = stats.as_dict()
    lines = [
        f"target: {cfg.fixture or cfg.target or cfg.listen}",
        f"states: {machine.num_states}",
        f"inputs: {len(machine.inputs)}",
        f"rounds: {d['rounds']}",
        f"hypothesis_sizes: {' '.join(map(str, d['hypothesis_sizes']))}",
        f"counterexamples: {len(d['counterexamples'])}",
        f"membership_queries: {d['membership_queries']}",
        f"cache_hits: {d['cache_hits']}",
        f"resets: {d['resets']}",
        f"equivalence_tests: {d['equivalence_tests']}",
        f"equivalence: {cfg.equivalence} state_bound={cfg.state_bound} seed={cfg.seed}",
    ]
    return "\n".join(lines) + "\n"


def cmd_learn(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    sut, inputs, cleanup = build_sut(cfg)
    lock = threading.Lock()
    with open(out / "queries.log", "w") as qlog:
        def log_query(word, answer):
            with lock:
                qlog.write(f"{' '.join(word)} | {' '.join(answer)}\n")

        oracle = MembershipOracle(sut, QueryCache(), retries=cfg.retries,
                                  workers=cfg.parallel, query_log=log_query)
        started = time.monotonic()
        try:
            machine, stats = learn(sut, inputs, cfg.equivalence_config(), oracle=oracle)
        finally:
            oracle.close()
            sut.close()
            cleanup()
    log.info("learned %d states in %.1fs", machine.num_states, time.monotonic() - started)
    save_model(machine, out / "model.txt", f"learned from {cfg.fixture or cfg.target or cfg.listen}")
    (out / "stats.txt").write_text(_stats_text(machine, stats, cfg))
    print(f"{machine.num_states} states; model written to {out / 'model.txt'}")

    flow = cfg.flow or (fixture_info(cfg.fixture).happy_flow if cfg.fixture else None)
    if flow:
        name = cfg.fixture or "model"
        title = fixture_info(cfg.fixture).title if cfg.fixture else ""
        try:
            report = analyze(machine, happy_flow(flow), name, title)
        except NoValidHandshake as exc:
            # the model and stats are still useful, but the run did not find a handshake
            print(f"error: no valid handshake in the learned model: {exc}", file=sys.stderr)
            return EXIT_NO_HANDSHAKE
        else:
            _write_report(report, out)
            (out / "model.dot").write_text(_render(machine, report))
    return EXIT_OK


# -- analyze / render / report ----------------------------------------------------

def _write_report(report: AnalysisReport, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(report.to_text())
    (out / "report.json").write_text(report.to_json())


def _render(machine, report: AnalysisReport) -> str:
    return to_dot(machine, edge_classes(machine, report), close_sink=report.designated_sink,
                  name=report.name.replace("-", "_"))


def cmd_analyze(args) -> int:
    machine = load_model(args.model)
    name = args.name or Path(args.model).stem
    report = analyze(machine, happy_flow(args.flow), name, args.title or "")
    out = Path(args.out)
    _write_report(report, out)
    sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_render(args) -> int:
    machine = load_model(args.model)
    report = AnalysisReport.from_json(Path(args.report).read_text())
    dot = _render(machine, report)
    if args.output == "-":
        sys.stdout.write(dot)
    else:
        Path(args.output).write_text(dot)
    return EXIT_OK


def _fixture_reports(names):
    reports = []
    for n in names:
        info = fixture_info(n)
        reports.append(analyze(fixture_machine(n), happy_flow(info.happy_flow), n, info.title))
    return reports


def cmd_report(args) -> int:
    reports = []
    if args.fixtures is not None:
        reports += _fixture_reports(args.fixtures or VENDOR_FIXTURES)
    for model_path, report_path in args.pair or []:
        machine = load_model(model_path)
        report = AnalysisReport.from_json(Path(report_path).read_text())
        edge_classes(machine, report)  # consistency check only
        reports.append(report)
    if not reports:
        raise ConfigError("report needs --fixtures or at least one --pair MODEL REPORT")
    table = table_summary(reports)
    sys.stdout.write(table)
    if args.output:
        Path(args.output).write_text(table)
    if args.golden:
        check_golden(table, Path(args.golden_file).read_text() if args.golden_file else None)
        print("golden table: match")
    return EXIT_OK


# -- simulate-serve ---------------------------------------------------------------

def cmd_simulate_serve(args) -> int:
    from .harness.simulator import FixtureClient, FixtureServer
    info = fixture_info(args.fixture)
    stop = threading.Event()
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    if info.role is Role.FUZZ_SERVER:
        try:
            sim = FixtureServer(args.fixture, args.host, args.port).start()
        except OSError as exc:
            raise SutUnavailable(f"cannot listen on {args.host}:{args.port}: {exc}") from exc
        print(f"serving {args.fixture} on {sim.address[0]}:{sim.address[1]}", flush=True)
    else:
        sim = FixtureClient(args.fixture, args.host, args.port, args.connections).start()
        print(f"dialing {args.host}:{args.port} as {args.fixture}", flush=True)
    try:
        while not stop.is_set():
            stop.wait(0.2)
    except KeyboardInterrupt:
        pass
    finally:
        sim.stop()
    return EXIT_OK


# -- argument parsing -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tlsstate", description="Protocol state fuzzing for TLS.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    lp = sub.add_parser("learn", help="learn a Mealy machine of a TLS implementation")
    lp.add_argument("--config", help="JSON or YAML file with run settings; flags override it")
    tgt = lp.add_argument_group("target")
    tgt.add_argument("--fixture", help="bundled simulated SUT")
    tgt.add_argument("--target", help="HOST:PORT of a TLS server to fuzz")
    tgt.add_argument("--listen", help="HOST:PORT to accept the fuzzed TLS client on")
    tgt.add_argument("--role", choices=[r.value for r in Role])
    tgt.add_argument("--trigger", help="command that makes the client connect (fuzz-client)")
    tgt.add_argument("--tls-version", dest="version", choices=["tls10", "tls12"])
    tgt.add_argument("--kx", help="comma-separated hello variants: rsa, ecdhe")
    tgt.add_argument("--timeout-ms", type=float)
    tgt.add_argument("--parallel", type=int, help="concurrent sessions")
    eq = lp.add_argument_group("equivalence")
    eq.add_argument("--equivalence", choices=["wmethod", "randomwalk"])
    eq.add_argument("--state-bound", type=int)
    eq.add_argument("--walks", type=int)
    eq.add_argument("--max-length", type=int)
    eq.add_argument("--seed", type=int)
    lp.add_argument("--retries", type=int)
    lp.add_argument("--flow", help="happy flow for the post-learning analysis")
    lp.add_argument("--out", help="output directory")

    ap = sub.add_parser("analyze", help="find bugs in a model file")
    ap.add_argument("model")
    ap.add_argument("--flow", required=True)
    ap.add_argument("--name")
    ap.add_argument("--title")
    ap.add_argument("--out", default=".")

    rp = sub.add_parser("render", help="write a DOT graph for a model and its report")
    rp.add_argument("model")
    rp.add_argument("report")
    rp.add_argument("-o", "--output", default="-")

    sp = sub.add_parser("report", help="Table-1 style summary")
    sp.add_argument("--pair", nargs=2, action="append", metavar=("MODEL", "REPORT"))
    sp.add_argument("--fixtures", nargs="*", help="analyze bundled fixtures (default: the six vendor models)")
    sp.add_argument("--golden", action="store_true", help="compare against the bundled golden table")
    sp.add_argument("--golden-file", help="alternative golden table")
    sp.add_argument("-o", "--output")

    sv = sub.add_parser("simulate-serve", help="play a fixture over real TLS")
    sv.add_argument("fixture")
    sv.add_argument("--host", default="127.0.0.1")
    sv.add_argument("--port", type=int, default=4433,
                    help="listen port (server fixtures) or learner port to dial (client fixtures)")
    sv.add_argument("--connections", type=int, default=16, help="concurrent client sessions")
    return p


def _learn_flags(args) -> dict:
    flags = {k: getattr(args, k, None) for k in (
        "fixture", "target", "listen", "role", "trigger", "version", "kx", "timeout_ms", "parallel",
        "equivalence", "state_bound", "walks", "max_length", "seed", "retries", "flow", "out")}
    return flags


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "learn":
            cfg = RunConfig.from_sources(load_config_file(args.config), _learn_flags(args))
            return cmd_learn(cfg)
        if args.command == "analyze":
            return cmd_analyze(args)
        if args.command == "render":
            return cmd_render(args)
        if args.command == "report":
            return cmd_report(args)
        return cmd_simulate_serve(args)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # mapped to documented exit codes, re-raised otherwise
        code = exit_code(exc)
        print(f"error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
