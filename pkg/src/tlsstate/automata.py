"""Deterministic Mealy machines: execution, minimization, isomorphism, I/O.

States are dense integers ``0..n-1``.  A machine is stored as a transition
table ``table[state][input_index] = (target, output)`` which makes it cheap to
step and trivially hashable.
"""

from __future__ import annotations

import enum
import re
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

from .errors import ContractError, ModelFormatError

EMPTY = "Empty"
CLOSED = "ConnectionClosed"


@dataclass(frozen=True)
class MealyMachine:
    inputs: tuple[str, ...]
    table: tuple[tuple[tuple[int, str], ...], ...]
    initial: int = 0
    _index: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        inputs = tuple(self.inputs)
        table = tuple(tuple((int(t), str(o)) for t, o in row) for row in self.table)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "table", table)
        if len(set(inputs)) != len(inputs):
            raise ContractError("duplicate input symbols")
        n = len(table)
        if n == 0:
            raise ContractError("machine needs at least one state")
        if not 0 <= self.initial < n:
            raise ContractError(f"initial state {self.initial} out of range")
        for s, row in enumerate(table):
            if len(row) != len(inputs):
                raise ContractError(f"state {s} is not input-complete")
            for t, _ in row:
                if not 0 <= t < n:
                    raise ContractError(f"state {s} has transition to unknown state {t}")
        object.__setattr__(self, "_index", {a: i for i, a in enumerate(inputs)})

    @classmethod
    def from_transitions(cls, inputs: Sequence[str],
                         transitions: Mapping[tuple[int, str], tuple[int, str]],
                         initial: int = 0) -> "MealyMachine":
        """Build from a ``{(src, input): (dst, output)}`` mapping."""
        states = {s for s, _ in transitions} | {t for t, _ in transitions.values()}
        n = max(states) + 1 if states else 1
        try:
            table = [[transitions[(s, a)] for a in inputs] for s in range(n)]
        except KeyError as exc:
            raise ContractError(f"missing transition for {exc.args[0]}") from None
        return cls(tuple(inputs), tuple(tuple(r) for r in table), initial)

    @property
    def num_states(self) -> int:
        return len(self.table)

    @property
    def states(self) -> range:
        return range(len(self.table))

    def input_index(self, symbol: str) -> int:
        try:
            return self._index[symbol]
        except KeyError:
            raise ContractError(f"unknown input symbol {symbol!r}") from None

    def step(self, state: int, symbol: str) -> tuple[int, str]:
        if not 0 <= state < len(self.table):
            raise ContractError(f"unknown state {state}")
        return self.table[state][self.input_index(symbol)]

    def run(self, word: Iterable[str], state: int | None = None) -> list[str]:
        outputs = []
        s = self.initial if state is None else state
        for a in word:
            s, o = self.step(s, a)
            outputs.append(o)
        return outputs

    def trace(self, word: Iterable[str], state: int | None = None) -> list[int]:
        """States visited while reading ``word`` (including the start state)."""
        s = self.initial if state is None else state
        visited = [s]
        for a in word:
            s = self.step(s, a)[0]
            visited.append(s)
        return visited

    def transitions(self) -> Iterator[tuple[int, str, int, str]]:
        for s, row in enumerate(self.table):
            for a, (t, o) in zip(self.inputs, row):
                yield s, a, t, o

    def outputs(self) -> set[str]:
        return {o for row in self.table for _, o in row}

    def access_sequences(self) -> dict[int, tuple[str, ...]]:
        """Shortest access word of every reachable state (BFS, alphabet order)."""
        access = {self.initial: ()}
        queue = deque([self.initial])
        while queue:
            s = queue.popleft()
            for a, (t, _) in zip(self.inputs, self.table[s]):
                if t not in access:
                    access[t] = access[s] + (a,)
                    queue.append(t)
        return access


def canonical(m: MealyMachine) -> MealyMachine:
    """Renumber reachable states in BFS order from the initial state."""
    order = list(m.access_sequences())
    new_id = {s: i for i, s in enumerate(order)}
    table = tuple(
        tuple((new_id[t], o) for t, o in m.table[s]) for s in order
    )
    return MealyMachine(m.inputs, table, 0)


def _refine(m: MealyMachine, states: Sequence[int]) -> dict[int, int]:
    """Moore partition refinement; returns state -> block id."""
    block = {s: tuple(o for _, o in m.table[s]) for s in states}
    ids = {sig: i for i, sig in enumerate(dict.fromkeys(block.values()))}
    block = {s: ids[sig] for s, sig in block.items()}
    while True:
        sigs = {s: (block[s],) + tuple(block[t] for t, _ in m.table[s]) for s in states}
        ids = {sig: i for i, sig in enumerate(dict.fromkeys(sigs.values()))}
        refined = {s: ids[sig] for s, sig in sigs.items()}
        if len(ids) == len(set(block.values())):
            return refined
        block = refined


def minimize(m: MealyMachine) -> MealyMachine:
    """Return the minimal equivalent machine, canonically numbered."""
    reachable = list(m.access_sequences())
    block = _refine(m, reachable)
    rep = {}
    for s in reachable:
        rep.setdefault(block[s], s)
    table = {b: tuple((block[t], o) for t, o in m.table[s]) for b, s in rep.items()}
    quotient = MealyMachine(m.inputs, tuple(table[b] for b in range(len(rep))),
                            block[m.initial])
    return canonical(quotient)


def isomorphic(a: MealyMachine, b: MealyMachine) -> dict[int, int] | None:
    """State bijection a -> b preserving initial state, transitions and outputs.

    Both machines must be over the same alphabet.  Unreachable states make an
    isomorphism impossible unless both sides have the same count of them, so
    callers normally compare minimized machines.
    """
    if set(a.inputs) != set(b.inputs):
        raise ContractError("machines have different input alphabets")
    if a.num_states != b.num_states:
        return None
    mapping = {a.initial: b.initial}
    queue = deque([a.initial])
    while queue:
        s = queue.popleft()
        u = mapping[s]
        for sym in a.inputs:
            t, o = a.step(s, sym)
            t2, o2 = b.step(u, sym)
            if o != o2:
                return None
            if t in mapping:
                if mapping[t] != t2:
                    return None
            else:
                mapping[t] = t2
                queue.append(t)
    if len(mapping) != a.num_states or len(set(mapping.values())) != len(mapping):
        return None
    return mapping


def distinguishing_word(a: MealyMachine, b: MealyMachine) -> tuple[str, ...] | None:
    """Shortest word on which the two machines disagree, by product BFS."""
    if set(a.inputs) != set(b.inputs):
        raise ContractError("machines have different input alphabets")
    start = (a.initial, b.initial)
    seen = {start: ()}
    queue = deque([start])
    while queue:
        p, q = queue.popleft()
        for sym in a.inputs:
            p2, o1 = a.step(p, sym)
            q2, o2 = b.step(q, sym)
            word = seen[(p, q)] + (sym,)
            if o1 != o2:
                return word
            if (p2, q2) not in seen:
                seen[(p2, q2)] = word
                queue.append((p2, q2))
    return None


def restrict(m: MealyMachine, inputs: Sequence[str]) -> MealyMachine:
    """Sub-machine over a subset of the alphabet (reachable part, canonical)."""
    idx = [m.input_index(a) for a in inputs]
    table = tuple(tuple(row[i] for i in idx) for row in m.table)
    return canonical(MealyMachine(tuple(inputs), table, m.initial))


# -- model file format ------------------------------------------------------

_HEADER = re.compile(r"^states\s+(\d+)\s+initial\s+(\d+)$")
_LINE = re.compile(r"^(\d+)\s+(\S+)\s+/\s+(\S+)\s+->\s+(\d+)$")


def parse_model(text: str) -> MealyMachine:
    """Parse the line-based model format.

    ::

        states 3 initial 0
        0 Hello / Reply -> 1
        ...
    """
    header = None
    transitions: dict[tuple[int, str], tuple[int, str]] = {}
    inputs: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if header is None:
            mh = _HEADER.match(line)
            if not mh:
                raise ModelFormatError(f"line {lineno}: expected 'states N initial S' header")
            header = (int(mh.group(1)), int(mh.group(2)))
            continue
        mt = _LINE.match(line)
        if not mt:
            raise ModelFormatError(f"line {lineno}: cannot parse transition {raw!r}")
        src, sym, out, dst = int(mt.group(1)), mt.group(2), mt.group(3), int(mt.group(4))
        if (src, sym) in transitions:
            raise ModelFormatError(f"line {lineno}: duplicate transition for ({src}, {sym})")
        if sym not in inputs:
            inputs.append(sym)
        transitions[(src, sym)] = (dst, out)
    if header is None:
        raise ModelFormatError("empty model file")
    n, initial = header
    for s in range(n):
        for a in inputs:
            if (s, a) not in transitions:
                raise ModelFormatError(f"state {s} lacks a transition on {a}")
    if any(s >= n or t >= n for (s, _), (t, _) in transitions.items()):
        raise ModelFormatError("transition references a state beyond the header count")
    try:
        return MealyMachine.from_transitions(inputs, transitions, initial)
    except ContractError as exc:
        raise ModelFormatError(str(exc)) from None


def format_model(m: MealyMachine, comment: str | None = None) -> str:
    lines = []
    if comment:
        lines.extend(f"# {c}" for c in comment.splitlines())
    lines.append(f"states {m.num_states} initial {m.initial}")
    for s, a, t, o in m.transitions():
        lines.append(f"{s} {a} / {o} -> {t}")
    return "\n".join(lines) + "\n"


def load_model(path) -> MealyMachine:
    with open(path, encoding="utf-8") as fh:
        return parse_model(fh.read())


def save_model(m: MealyMachine, path, comment: str | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_model(m, comment))


# -- DOT rendering ----------------------------------------------------------

class EdgeClass(enum.Enum):
    HAPPY = "Happy"
    CLOSING = "Closing"
    UNDESIRED = "Undesired"


_EDGE_STYLE = {
    EdgeClass.HAPPY: 'color="green", style="solid", penwidth=2',
    EdgeClass.CLOSING: 'color="black", style="solid"',
    EdgeClass.UNDESIRED: 'color="red", style="dotted"',
}


@dataclass(frozen=True)
class MergedEdge:
    source: int
    target: int
    output: str
    edge_class: EdgeClass
    inputs: tuple[str, ...]

    def label(self, other_threshold: int = 5) -> str:
        ins = "other" if len(self.inputs) > other_threshold else ",".join(self.inputs)
        return f"{ins} / {self.output}"


def merge_edges(m: MealyMachine,
                annotations: Mapping[tuple[int, str], EdgeClass]) -> list[MergedEdge]:
    groups: dict[tuple, list[str]] = {}
    for s, a, t, o in m.transitions():
        try:
            cls = annotations[(s, a)]
        except KeyError:
            raise ContractError(f"no annotation for edge ({s}, {a})") from None
        groups.setdefault((s, t, o, cls), []).append(a)
    return [MergedEdge(s, t, o, cls, tuple(ins)) for (s, t, o, cls), ins in groups.items()]


def _quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def to_dot(m: MealyMachine,
           annotations: Mapping[tuple[int, str], EdgeClass],
           highlights: Iterable[int] = (),
           close_sink: int | None = None,
           name: str = "model") -> str:
    """Render ``m`` as Graphviz DOT.

    The initial state is filled green and ``close_sink`` red.  Edges sharing
    source, target, output and class are merged into one arrow whose label
    lists the inputs; more than five merged inputs collapse to ``other``.
    """
    highlights = set(highlights)
    out = [f"digraph {_quote(name)} {{", "  rankdir=LR;", "  node [shape=circle];"]
    for s in m.states:
        attrs = [f"label={_quote(str(s))}"]
        if s == m.initial:
            attrs.append('style="filled", fillcolor="green"')
        elif s == close_sink:
            attrs.append('style="filled", fillcolor="red"')
        if s in highlights:
            attrs.append("penwidth=2")
        out.append(f"  {s} [{', '.join(attrs)}];")
    for e in merge_edges(m, annotations):
        out.append(f"  {e.source} -> {e.target} [label={_quote(e.label())}, "
                   f"{_EDGE_STYLE[e.edge_class]}];")
    out.append("}")
    return "\n".join(out) + "\n"
