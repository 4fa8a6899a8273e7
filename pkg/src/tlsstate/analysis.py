"""Bug detectors for learned TLS state machines.

Four kinds of finding are reported: extra sink states, self-loops,
alternate paths around the valid handshake and undesired replies.  All
detectors are pure functions of the machine and the happy-flow spec.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Sequence

from .automata import CLOSED, EMPTY, EdgeClass, MealyMachine, format_model
from .errors import ConfigError, ContractError, GoldenMismatch, NoValidHandshake
from .harness.alphabets import Role

NON_MESSAGES = {EMPTY, CLOSED, "AlertWarning", "AlertFatal", "DecryptError", "MalformedResponse"}
MAX_INTERMEDIATES = 6


def tokens(output: str) -> list[str]:
    return output.split("/")


def _has(*names: str) -> Callable[[str], bool]:
    def pred(out: str) -> bool:
        return all(n in tokens(out) for n in names)
    pred.__doc__ = "contains " + " and ".join(names)
    return pred


def _is_empty(out: str) -> bool:
    """is Empty"""
    return out == EMPTY


def _closes(out: str) -> bool:
    """closes the connection"""
    return CLOSED in tokens(out)


def _carries_on(out: str) -> bool:
    """neither closes nor alerts"""
    return not (set(tokens(out)) & {CLOSED, "AlertWarning", "AlertFatal"})


@dataclass(frozen=True)
class HappyStep:
    inputs: tuple[str, ...]          # accepted alternatives, tried in order
    accept: Callable[[str], bool]
    fresh_state: bool = False        # the step must leave the state it starts in

    def describe(self) -> str:
        return f"{'|'.join(self.inputs)} -> output that {self.accept.__doc__}"


@dataclass(frozen=True)
class HappyFlowSpec:
    name: str
    role: Role
    steps: tuple[HappyStep, ...]

    def __post_init__(self):
        if not self.steps:
            raise ContractError("a happy flow needs at least one step")

    @property
    def word(self) -> tuple[str, ...]:
        return tuple(s.inputs[0] for s in self.steps)


_SERVER_STEPS = (
    HappyStep(("ClientHelloRSA", "ClientHelloECDHE"), _has("ServerHello", "ServerHelloDone")),
    HappyStep(("ClientKeyExchange",), _is_empty),
    HappyStep(("ChangeCipherSpec",), _is_empty),
    HappyStep(("Finished",), _has("ChangeCipherSpec", "Finished")),
)
_CLIENT_STEPS = (
    HappyStep(("ServerHelloRSA",), _is_empty),
    HappyStep(("ServerCertificate",), _is_empty),
    HappyStep(("ServerHelloDone",), _has("ClientKeyExchange", "Finished")),
    HappyStep(("ChangeCipherSpec",), _is_empty),
    HappyStep(("Finished",), _carries_on),
)

FLOWS = {
    "server": HappyFlowSpec("server", Role.FUZZ_SERVER,
                            _SERVER_STEPS + (HappyStep(("ApplicationData",), _has("ApplicationData")),)),
    "server-close": HappyFlowSpec("server-close", Role.FUZZ_SERVER,
                                  _SERVER_STEPS + (HappyStep(("AlertFatal",), _closes),)),
    "client": HappyFlowSpec("client", Role.FUZZ_CLIENT, _CLIENT_STEPS),
    "client-appdata": HappyFlowSpec("client-appdata", Role.FUZZ_CLIENT,
                                    _CLIENT_STEPS + (HappyStep(("ApplicationData",), _carries_on, True),)),
}


def happy_flow(name: str) -> HappyFlowSpec:
    try:
        return FLOWS[name]
    except KeyError:
        raise ConfigError(f"unknown happy flow {name!r}; choose from {sorted(FLOWS)}") from None


class Kind(str, enum.Enum):
    EXTRA_SINK = "ExtraSink"
    SELF_LOOP = "SelfLoop"
    ALTERNATE_PATH = "AlternatePath"
    UNDESIRED_REPLY = "UndesiredReply"


class Severity(str, enum.Enum):
    DOS = "DoSPotential"
    CRITICAL = "SecurityCritical"
    SPEC = "SpecViolation"


_KIND_ORDER = {k: i for i, k in enumerate(Kind)}


@dataclass(frozen=True)
class Finding:
    kind: Kind
    states: tuple[int, ...]
    severity: Severity
    narrative: str
    inputs: tuple[str, ...] = ()

    def sort_key(self):
        return (_KIND_ORDER[self.kind], self.states, self.inputs)

    def as_dict(self) -> dict:
        return {"kind": self.kind.value, "states": list(self.states), "inputs": list(self.inputs),
                "severity": self.severity.value, "narrative": self.narrative}

    @classmethod
    def from_dict(cls, d: dict) -> Finding:
        return cls(Kind(d["kind"]), tuple(d["states"]), Severity(d["severity"]), d["narrative"],
                   tuple(d.get("inputs", ())))


# -- detectors ----------------------------------------------------------------

def sinks(m: MealyMachine) -> list[int]:
    return [s for s in m.states if all(t == s for t, _ in m.table[s])]


def find_sinks(m: MealyMachine) -> tuple[int | None, set[int]]:
    """The designated close-sink (all outputs ConnectionClosed) and the extra sinks."""
    all_sinks = sinks(m)
    closing = [s for s in all_sinks if all(o == CLOSED for _, o in m.table[s])]
    designated = closing[0] if closing else None
    return designated, {s for s in all_sinks if s != designated}


def find_self_loops(m: MealyMachine, designated: int | None) -> dict[int, tuple[str, ...]]:
    loops = {}
    for s in m.states:
        if s == designated:
            continue
        ins = tuple(a for a, (t, _) in zip(m.inputs, m.table[s]) if t == s)
        if ins:
            loops[s] = ins
    return loops


def _alternatives(m: MealyMachine, step: HappyStep) -> tuple[str, ...]:
    return tuple(a for a in step.inputs if a in m.inputs)


def extract_happy_path(m: MealyMachine, spec: HappyFlowSpec) -> tuple[list[int], list[str]]:
    """Run the flow from the initial state; return visited states and the inputs taken."""
    state = m.initial
    path, word = [state], []
    for i, step in enumerate(spec.steps):
        alts = _alternatives(m, step)
        if not alts:
            raise ContractError(f"step {i} of flow {spec.name!r} uses inputs outside the alphabet")
        for a in alts:
            nxt, out = m.step(state, a)
            if step.accept(out) and not (step.fresh_state and nxt == state):
                break
        else:
            a = alts[0]
            nxt, out = m.step(state, a)
            raise NoValidHandshake(i, f"step {i} ({step.describe()}) fails in state {state}: "
                                      f"{a} gives {out!r}")
        path.append(nxt)
        word.append(a)
        state = nxt
    return path, word


def happy_edges(m: MealyMachine, spec: HappyFlowSpec, path: Sequence[int]) -> set[tuple[int, str]]:
    """Happy-path transitions, including alternative inputs that take the same step."""
    edges = set()
    for i, step in enumerate(spec.steps):
        for a in _alternatives(m, step):
            nxt, out = m.step(path[i], a)
            if nxt == path[i + 1] and step.accept(out):
                edges.add((path[i], a))
    return edges


def find_alternate_paths(m: MealyMachine, happy: Sequence[int], designated: int | None,
                         max_intermediates: int = MAX_INTERMEDIATES) -> list[tuple[int, ...]]:
    """Simple detours from a happy state, through states that are neither happy nor
    sinks, back to a happy state or into the designated sink."""
    on_path = set(happy)
    blocked = on_path | set(sinks(m))
    valid_end = on_path | ({designated} if designated is not None else set())
    found = set()

    def walk(path):
        here = path[-1]
        for t in dict.fromkeys(t for t, _ in m.table[here]):
            if len(path) >= 2 and t in valid_end:
                found.add(tuple(path) + (t,))
            elif t not in blocked and t not in path and len(path) <= max_intermediates:
                walk(path + [t])

    for start in dict.fromkeys(happy):
        walk([start])
    return sorted(found)


def find_undesired_replies(m: MealyMachine, edges: set[tuple[int, str]]) -> list[tuple[int, str, int, str]]:
    return [(s, a, t, o) for s, a, t, o in m.transitions()
            if (s, a) not in edges and set(tokens(o)) - NON_MESSAGES]


def alternate_severity(path: Sequence[int], happy: Sequence[int], ccs_index: int | None,
                       designated: int | None) -> Severity:
    end = path[-1]
    if ccs_index is None or end == designated:
        return Severity.SPEC
    return Severity.CRITICAL if happy.index(end) > ccs_index else Severity.SPEC


# -- report ---------------------------------------------------------------------

def fingerprint(m: MealyMachine) -> str:
    return hashlib.sha256(format_model(m).encode()).hexdigest()[:16]


@dataclass
class AnalysisReport:
    name: str
    title: str
    flow: str
    num_states: int
    fingerprint: str
    happy_path: list[int]
    happy_inputs: list[str]
    designated_sink: int | None
    extra_sinks: list[int]
    self_loops: dict[int, list[str]]
    raw_sinks: list[int]
    raw_self_loops: list[int]
    findings: list[Finding] = field(default_factory=list)
    happy_edges: list[tuple[int, str]] = field(default_factory=list)

    @property
    def counts(self) -> dict[str, int]:
        return {k.value: sum(f.kind is k for f in self.findings) for k in Kind}

    def alternate_paths(self) -> list[tuple[int, ...]]:
        return [f.states for f in self.findings if f.kind is Kind.ALTERNATE_PATH]

    def as_dict(self) -> dict:
        return {
            "name": self.name, "title": self.title, "flow": self.flow,
            "num_states": self.num_states, "fingerprint": self.fingerprint,
            "happy_path": self.happy_path, "happy_inputs": self.happy_inputs,
            "designated_sink": self.designated_sink, "extra_sinks": self.extra_sinks,
            "self_loops": {str(s): list(v) for s, v in self.self_loops.items()},
            "raw_sinks": self.raw_sinks, "raw_self_loops": self.raw_self_loops,
            "happy_edges": [list(e) for e in self.happy_edges],
            "counts": self.counts,
            "findings": [f.as_dict() for f in self.findings],
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=False) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> AnalysisReport:
        try:
            return cls(d["name"], d["title"], d["flow"], d["num_states"], d["fingerprint"],
                       list(d["happy_path"]), list(d["happy_inputs"]), d["designated_sink"],
                       list(d["extra_sinks"]), {int(s): list(v) for s, v in d["self_loops"].items()},
                       list(d["raw_sinks"]), list(d["raw_self_loops"]),
                       [Finding.from_dict(f) for f in d["findings"]],
                       [tuple(e) for e in d.get("happy_edges", [])])
        except (KeyError, TypeError, ValueError) as exc:
            raise ContractError(f"malformed report: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> AnalysisReport:
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ContractError(f"report is not valid JSON: {exc}") from exc

    def to_text(self) -> str:
        arrow = "->".join(map(str, self.happy_path))
        lines = [
            f"model: {self.title or self.name} ({self.num_states} states, flow {self.flow})",
            f"happy path: {arrow}  [{' '.join(self.happy_inputs)}]",
            f"close sink: {self.designated_sink if self.designated_sink is not None else 'none'}",
            f"extra sinks: {_set(self.extra_sinks) or 'none'}",
            f"table row: sinks {_set(self.raw_sinks) or '-'} | self-loops {_set(self.raw_self_loops) or '-'}",
            "findings: " + ", ".join(f"{k} {n}" for k, n in self.counts.items()),
        ]
        lines += [f"  [{f.severity.value}] {f.kind.value}: {f.narrative}" for f in self.findings]
        return "\n".join(lines) + "\n"


def _set(states) -> str:
    return ",".join(map(str, sorted(states)))


def analyze(m: MealyMachine, spec: HappyFlowSpec, name: str = "model", title: str = "") -> AnalysisReport:
    designated, extra = find_sinks(m)
    path, word = extract_happy_path(m, spec)
    edges = happy_edges(m, spec, path)
    loops = find_self_loops(m, designated)
    ccs = next((i for i, a in enumerate(word) if a == "ChangeCipherSpec"), None)

    findings = [Finding(Kind.EXTRA_SINK, (s,), Severity.DOS,
                        f"state {s} absorbs every input without closing the connection")
                for s in sorted(extra)]
    findings += [Finding(Kind.SELF_LOOP, (s,), Severity.DOS,
                         f"state {s} stays put on {', '.join(ins)}", ins)
                 for s, ins in sorted(loops.items())]
    for p in find_alternate_paths(m, path, designated):
        findings.append(Finding(Kind.ALTERNATE_PATH, p, alternate_severity(p, path, ccs, designated),
                                "detour " + "->".join(map(str, p)) + " around the handshake"))
    for s, a, t, o in find_undesired_replies(m, edges):
        findings.append(Finding(Kind.UNDESIRED_REPLY, (s, t), Severity.SPEC,
                                f"state {s} answers {a} with {o}", (a,)))
    findings.sort(key=Finding.sort_key)

    # Table-1 convention: the close-sink counts among the self-loop states
    # only when it is the sole sink and the handshake never enters it
    raw_loops = set(loops)
    if designated is not None and not extra and designated not in path:
        raw_loops.add(designated)
    raw_sinks = sorted(extra | ({designated} if designated is not None else set()))

    return AnalysisReport(name, title, spec.name, m.num_states, fingerprint(m), path, word, designated,
                          sorted(extra), {s: list(v) for s, v in sorted(loops.items())},
                          raw_sinks, sorted(raw_loops), findings, sorted(edges))


# -- rendering support ----------------------------------------------------------

def edge_classes(m: MealyMachine, report: AnalysisReport) -> dict[tuple[int, str], EdgeClass]:
    if report.fingerprint != fingerprint(m):
        raise ContractError(f"report {report.name!r} was produced for a different machine")
    happy = set(map(tuple, report.happy_edges))
    sink = report.designated_sink
    classes = {}
    for s, a, t, o in m.transitions():
        if (s, a) in happy:
            classes[(s, a)] = EdgeClass.HAPPY
        elif t == sink and not set(tokens(o)) - {CLOSED, "AlertWarning", "AlertFatal"}:
            classes[(s, a)] = EdgeClass.CLOSING
        else:
            classes[(s, a)] = EdgeClass.UNDESIRED
    return classes


# -- Table 1 --------------------------------------------------------------------

_COLS = (44, 12)


def table_summary(reports: Sequence[AnalysisReport]) -> str:
    if not reports:
        raise ContractError("table_summary needs at least one report")
    header = f"{'Model':<{_COLS[0]}} | {'Sinks':<{_COLS[1]}} | Self loops"
    lines = [header, "-" * len(header)]
    for r in reports:
        lines.append(f"{(r.title or r.name):<{_COLS[0]}} | {_set(r.raw_sinks):<{_COLS[1]}} | "
                     f"{_set(r.raw_self_loops)}".rstrip())
    return "\n".join(lines) + "\n"


def golden_table() -> str:
    return resources.files(__package__).joinpath("data", "table1.txt").read_text("utf-8")


def check_golden(table: str, golden: str | None = None) -> None:
    golden = golden_table() if golden is None else golden
    if table == golden:
        return
    import difflib
    diff = "".join(difflib.unified_diff(golden.splitlines(True), table.splitlines(True),
                                        "golden", "actual"))
    raise GoldenMismatch(f"table differs from the golden file:\n{diff}")
