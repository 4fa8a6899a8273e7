"""Active learning of Mealy machines with an observation table.

The learner talks to a resettable system under test (anything with
``reset()``/``step(symbol)``, see :mod:`tlsstate.harness.base`) through a
:class:`MembershipOracle` that caches answers in a prefix trie.  Hypotheses are
checked with either a W-method conformance test suite or random walks.

Counterexamples are handled by adding every suffix of the counterexample to
the suffix set, which keeps the table consistent by construction.
"""

from __future__ import annotations

import gc
import itertools
import logging
import random
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .automata import CLOSED, MealyMachine, canonical, distinguishing_word, minimize
from .errors import (ContractError, LearningDiverged, NondeterminismError,
                     QueryError)

log = logging.getLogger(__name__)

Word = tuple


def is_closed_output(token: str) -> bool:
    return token == CLOSED or token.endswith("/" + CLOSED)


class QueryCache:
    """Prefix trie of answered queries.

    Each node maps an input symbol to ``[output, child]``.  Inserting a word
    implicitly caches all of its prefixes.  With ``closed_absorbing`` set, a
    word that extends past a ``ConnectionClosed`` output is answered without
    the SUT: once the transport is gone every later step is closed too.
    """

    def __init__(self, closed_absorbing: bool = True):
        self.root: dict = {}
        self.closed_absorbing = closed_absorbing
        self.queries = 0
        self.hits = 0
        self.resets = 0
        self._lock = threading.Lock()

    def lookup(self, word: Sequence[str]) -> Word | None:
        node = self.root
        outs = []
        for i, a in enumerate(word):
            entry = node.get(a)
            if entry is None:
                if self.closed_absorbing and outs and is_closed_output(outs[-1]):
                    return tuple(outs) + (CLOSED,) * (len(word) - i)
                return None
            outs.append(entry[0])
            node = entry[1]
        return tuple(outs)

    def conflict(self, word: Sequence[str], outputs: Sequence[str]) -> int | None:
        """Index of the first position where ``outputs`` contradicts the cache."""
        node = self.root
        for i, (a, o) in enumerate(zip(word, outputs)):
            entry = node.get(a)
            if entry is None:
                return None
            if entry[0] != o:
                return i
            node = entry[1]
        return None

    def insert(self, word: Sequence[str], outputs: Sequence[str]) -> None:
        if len(word) != len(outputs):
            raise ContractError("word and output lengths differ")
        with self._lock:
            node = self.root
            for a, o in zip(word, outputs):
                entry = node.get(a)
                if entry is None:
                    entry = node[a] = [o, {}]
                elif entry[0] != o:
                    raise NondeterminismError(
                        f"cached output {entry[0]!r} differs from {o!r} on {list(word)}")
                node = entry[1]

    def words(self) -> Iterable[tuple[Word, Word]]:
        """All cached maximal words with their outputs."""
        stack = [(self.root, (), ())]
        while stack:
            node, w, o = stack.pop()
            if not node and w:
                yield w, o
            for a, (out, child) in node.items():
                stack.append((child, w + (a,), o + (out,)))


class MembershipOracle:
    """Asks the SUT, with caching, retries and optional parallel sessions."""

    def __init__(self, sut, cache: QueryCache | None = None, retries: int = 3,
                 workers: int = 1, query_log: Callable[[Word, Word], None] | None = None):
        self.sut = sut
        self.cache = cache if cache is not None else QueryCache()
        self.retries = retries
        self.workers = workers if getattr(sut, "supports_parallel", False) else 1
        self.query_log = query_log
        self.equivalence_tests = 0
        self._local = threading.local()
        self._sessions: list = []
        self._lock = threading.Lock()
        self._pool: ThreadPoolExecutor | None = None

    def _session(self):
        if self.workers == 1:
            return self.sut
        s = getattr(self._local, "session", None)
        if s is None:
            s = self.sut.spawn()
            with self._lock:
                self._sessions.append(s)
            self._local.session = s
        return s

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None
        for s in self._sessions:
            s.close()
        self._sessions.clear()

    def _execute(self, word: Word) -> Word:
        sut = self._session()
        absorbing = self.cache.closed_absorbing
        last = None
        for _ in range(self.retries + 1):
            try:
                sut.reset()
                self._count("resets")
                outs = []
                for a in word:
                    o = sut.step(a)
                    outs.append(o)
                    if absorbing and o.endswith(CLOSED):
                        outs.extend([CLOSED] * (len(word) - len(outs)))
                        break
                return tuple(outs)
            except QueryError as exc:
                last = exc
                log.debug("retrying %s after %s", word, exc)
            finally:
                sut.finish()
        raise last

    def _count(self, counter: str) -> None:
        if self.workers == 1:
            setattr(self.cache, counter, getattr(self.cache, counter) + 1)
        else:
            with self.cache._lock:
                setattr(self.cache, counter, getattr(self.cache, counter) + 1)

    def _answer(self, word: Word, store: bool) -> Word:
        hit = self.cache.lookup(word)
        if hit is not None:
            self._count("hits")
            return hit
        answer = self._execute(word)
        if store:
            self._count("queries")
        if self.cache.conflict(word, answer) is not None:
            again = [self._execute(word) for _ in range(self.retries)]
            if len(set(again)) != 1 or self.cache.conflict(word, again[0]) is not None:
                raise NondeterminismError(
                    f"SUT answers for {list(word)} disagree: {[answer] + again}")
            answer = again[0]
        if store:
            self.cache.insert(word, answer)
            if self.query_log is not None:
                self.query_log(word, answer)
        return answer

    def query(self, word: Sequence[str]) -> Word:
        return self._answer(tuple(word), store=True)

    def query_many(self, words: Sequence[Word], store: bool = True) -> list[Word]:
        words = [tuple(w) for w in words]
        if self.workers == 1 or len(words) < 2:
            return [self._answer(w, store) for w in words]
        if self._pool is None:
            self._pool = ThreadPoolExecutor(self.workers)
        return list(self._pool.map(lambda w: self._answer(w, store), words))


def membership_query(sut, word: Sequence[str], cache: QueryCache) -> Word:
    """One-shot membership query against ``sut`` using ``cache``."""
    return MembershipOracle(sut, cache).query(word)


# -- observation table ------------------------------------------------------

class ObservationTable:
    """Rows are indexed by prefixes, columns by suffixes.

    ``short`` holds the access prefixes (states of the hypothesis); the long
    rows are ``short x alphabet``.  Suffixes always include every single input
    so outputs of hypothesis transitions can be read off the table.
    """

    def __init__(self, alphabet: Sequence[str]):
        self.alphabet = tuple(alphabet)
        self.short: list[Word] = [()]
        self.suffixes: list[Word] = [(a,) for a in self.alphabet]
        self.cells: dict[tuple[Word, Word], Word] = {}

    def long(self) -> list[Word]:
        shorts = set(self.short)
        return [s + (a,) for s in self.short for a in self.alphabet if s + (a,) not in shorts]

    def prefixes(self) -> list[Word]:
        return self.short + self.long()

    def missing(self) -> list[Word]:
        return [p + e for p in self.prefixes() for e in self.suffixes
                if (p, e) not in self.cells]

    def fill(self, answers: dict[Word, Word]) -> None:
        for p in self.prefixes():
            for e in self.suffixes:
                if (p, e) not in self.cells:
                    out = answers[p + e]
                    self.cells[(p, e)] = out[len(p):]

    def row(self, prefix: Word) -> tuple:
        return tuple(self.cells[(prefix, e)] for e in self.suffixes)

    def unclosed(self) -> Word | None:
        short_rows = {self.row(s) for s in self.short}
        for p in self.long():
            if self.row(p) not in short_rows:
                return p
        return None

    def inconsistency(self) -> Word | None:
        """A new suffix that splits two equal short rows, if any."""
        for s1, s2 in itertools.combinations(self.short, 2):
            if self.row(s1) != self.row(s2):
                continue
            for a in self.alphabet:
                for e in self.suffixes:
                    if self.cells[(s1 + (a,), e)] != self.cells[(s2 + (a,), e)]:
                        return (a,) + e
        return None

    def is_closed(self) -> bool:
        return self.unclosed() is None

    def is_consistent(self) -> bool:
        return self.inconsistency() is None

    def add_suffixes(self, words: Iterable[Word]) -> int:
        added = 0
        for w in words:
            w = tuple(w)
            if w and w not in self.suffixes:
                self.suffixes.append(w)
                added += 1
        return added


def _fill(table: ObservationTable, oracle: MembershipOracle) -> None:
    missing = list(dict.fromkeys(table.missing()))
    if missing:
        table.fill(dict(zip(missing, oracle.query_many(missing))))


def refine_table(table: ObservationTable, oracle: MembershipOracle) -> ObservationTable:
    """Make ``table`` closed and consistent using membership queries only."""
    while True:
        _fill(table, oracle)
        p = table.unclosed()
        if p is not None:
            table.short.append(p)
            continue
        e = table.inconsistency()
        if e is not None:
            table.add_suffixes([e])
            continue
        return table


def build_hypothesis(table: ObservationTable) -> MealyMachine:
    if not table.is_closed() or not table.is_consistent():
        raise ContractError("observation table must be closed and consistent")
    state_of: dict[tuple, int] = {}
    reps: list[Word] = []
    for s in table.short:
        r = table.row(s)
        if r not in state_of:
            state_of[r] = len(reps)
            reps.append(s)
    rows = []
    for s in reps:
        rows.append(tuple(
            (state_of[table.row(s + (a,))], table.cells[(s, (a,))][0])
            for a in table.alphabet))
    return MealyMachine(table.alphabet, tuple(rows), state_of[table.row(())])


def process_counterexample(table: ObservationTable, hypothesis: MealyMachine,
                           ce: Sequence[str], oracle: MembershipOracle) -> ObservationTable:
    ce = tuple(ce)
    if tuple(hypothesis.run(ce)) == oracle.query(ce):
        raise ContractError(f"{list(ce)} is not a counterexample")
    added = table.add_suffixes(ce[i:] for i in range(len(ce)))
    if not added:
        raise ContractError("counterexample adds no new suffix")
    return refine_table(table, oracle)


# -- equivalence oracles ----------------------------------------------------

@dataclass
class EquivalenceConfig:
    method: str = "wmethod"          # "wmethod" | "randomwalk"
    state_bound: int = 12
    walks: int = 1000
    max_length: int = 12
    seed: int = 0

    def __post_init__(self):
        self.method = self.method.lower().replace("-", "").replace("_", "")
        if self.method not in ("wmethod", "randomwalk"):
            raise ContractError(f"unknown equivalence method {self.method!r}")
        if self.state_bound < 1 or self.walks < 0 or self.max_length < 1:
            raise ContractError("equivalence parameters must be positive")

    def depth(self, hypothesis_size: int) -> int:
        return max(0, self.state_bound - hypothesis_size)


def characterizing_set(m: MealyMachine) -> list[Word]:
    """Distinguishing words for every state pair plus all single inputs,
    with words that are prefixes of other members dropped."""
    words = {(a,) for a in m.inputs}
    for p, q in itertools.combinations(m.states, 2):
        a = MealyMachine(m.inputs, m.table, p)
        b = MealyMachine(m.inputs, m.table, q)
        w = distinguishing_word(a, b)
        if w is not None:
            words.add(w)
    keep = [w for w in words
            if not any(len(v) > len(w) and v[:len(w)] == w for v in words)]
    return sorted(keep, key=lambda w: (len(w), [m.input_index(a) for a in w]))


def _closed_sinks(m: MealyMachine) -> set[int]:
    return {s for s in m.states
            if all(t == s and o == CLOSED for t, o in m.table[s])}


def identification_sets(m: MealyMachine, W: Sequence[Word]) -> dict[int, list[Word]]:
    """Per state, the members of ``W`` needed to tell it apart from every other state."""
    outs = {(q, w): tuple(m.run(w, q)) for q in m.states for w in W}
    sets = {}
    for q in m.states:
        chosen = []
        for r in m.states:
            if r == q or any(outs[(q, w)] != outs[(r, w)] for w in chosen):
                continue
            w = next((w for w in W if outs[(q, w)] != outs[(r, w)]), None)
            if w is not None:
                chosen.append(w)
        sets[q] = chosen or [W[0]]
    return sets


def wmethod_suite(hypothesis: MealyMachine, depth: int) -> list[Word]:
    """The complete test suite, without closed-connection pruning.

    Words are ``access(q) . x . w`` for every state ``q``, every ``x`` of
    length at most ``depth + 1`` and ``w`` from the characterizing set (the
    full set when ``x`` is empty, the reached state's identification set
    otherwise).
    """
    W = characterizing_set(hypothesis)
    ident = identification_sets(hypothesis, W)
    access = hypothesis.access_sequences()
    suite = []
    for q in sorted(access):
        for n in range(depth + 2):
            for x in itertools.product(hypothesis.inputs, repeat=n):
                u = access[q] + x
                ws = W if n == 0 else ident[hypothesis.trace(u)[-1]]
                suite.extend(u + w for w in ws)
    return suite


def equivalence_query(hypothesis: MealyMachine, oracle: MembershipOracle,
                      cfg: EquivalenceConfig, rng: random.Random | None = None
                      ) -> Word | None:
    """Search for a word on which ``hypothesis`` and the SUT disagree."""
    if cfg.method == "randomwalk":
        return _random_walk(hypothesis, oracle, cfg, rng or random.Random(cfg.seed))
    return _wmethod(hypothesis, oracle, cfg)


def _first_disagreement(hypothesis, words, answers):
    for w, ans in zip(words, answers):
        if tuple(hypothesis.run(w)) != ans:
            return w
    return None


def _wmethod(hypothesis, oracle, cfg):
    # the suite allocates millions of small tuples; cyclic GC passes over them
    # dominate the runtime otherwise
    enabled = gc.isenabled()
    gc.disable()
    try:
        return _wmethod_levels(hypothesis, oracle, cfg)
    finally:
        if enabled:
            gc.enable()


def _wmethod_levels(hypothesis, oracle, cfg):
    """Run the suite level by level, shortest middle part first.

    Below a node where both the SUT and the hypothesis have closed the
    connection nothing can differ any more, so that subtree is skipped.
    """
    m = hypothesis
    W = characterizing_set(m)
    ident = identification_sets(m, W)
    expect = {(q, w): tuple(m.run(w, q)) for q in m.states for w in W}
    sinks = _closed_sinks(m)
    prune = oracle.cache.closed_absorbing
    access = m.access_sequences()
    # node = (word, hypothesis state, hypothesis outputs along word)
    level = [(access[q], q, tuple(m.run(access[q]))) for q in sorted(access)]
    last = cfg.depth(m.num_states) + 1
    for n in range(last + 1):
        words, expected, owner = [], [], []
        for i, (u, q, outs) in enumerate(level):
            for w in (W if n == 0 else ident[q]):
                words.append(u + w)
                expected.append(outs + expect[(q, w)])
                owner.append(i)
        answers = oracle.query_many(words, store=False)
        oracle.equivalence_tests += len(words)
        dead = set()
        for w, exp, ans, i in zip(words, expected, answers, owner):
            if ans != exp:
                return w
            u = level[i][0]
            if prune and u and level[i][1] in sinks and is_closed_output(ans[len(u) - 1]):
                dead.add(i)
        if n == last:
            break
        level = [(u + (a,), t, outs + (o,))
                 for i, (u, q, outs) in enumerate(level) if i not in dead
                 for a, (t, o) in zip(m.inputs, m.table[q])]
        if not level:
            break
    return None


def _random_walk(hypothesis, oracle, cfg, rng):
    access = hypothesis.access_sequences()
    states = sorted(access)
    words = []
    for _ in range(cfg.walks):
        q = rng.choice(states)
        n = rng.randint(1, cfg.max_length)
        words.append(access[q] + tuple(rng.choice(hypothesis.inputs) for _ in range(n)))
    answers = oracle.query_many(words, store=False)
    oracle.equivalence_tests += len(words)
    return _first_disagreement(hypothesis, words, answers)


# -- main loop --------------------------------------------------------------

@dataclass
class LearnStats:
    rounds: int = 0
    hypothesis_sizes: list[int] = field(default_factory=list)
    counterexamples: list[Word] = field(default_factory=list)
    membership_queries: int = 0
    cache_hits: int = 0
    resets: int = 0
    equivalence_tests: int = 0

    @property
    def total_queries(self) -> int:
        return self.membership_queries + self.equivalence_tests

    def as_dict(self) -> dict:
        return {
            "rounds": self.rounds,
            "hypothesis_sizes": list(self.hypothesis_sizes),
            "counterexamples": [list(c) for c in self.counterexamples],
            "membership_queries": self.membership_queries,
            "cache_hits": self.cache_hits,
            "resets": self.resets,
            "equivalence_tests": self.equivalence_tests,
        }


def learn(sut, alphabet: Sequence[str], cfg: EquivalenceConfig | None = None,
          max_rounds: int = 100, oracle: MembershipOracle | None = None
          ) -> tuple[MealyMachine, LearnStats]:
    """Learn a Mealy machine for ``sut`` over ``alphabet``."""
    cfg = cfg or EquivalenceConfig()
    oracle = oracle or MembershipOracle(sut)
    rng = random.Random(cfg.seed)
    stats = LearnStats()
    table = refine_table(ObservationTable(alphabet), oracle)
    try:
        while True:
            hyp = build_hypothesis(table)
            stats.rounds += 1
            stats.hypothesis_sizes.append(hyp.num_states)
            log.info("round %d: hypothesis with %d states", stats.rounds, hyp.num_states)
            if stats.rounds > max_rounds:
                raise LearningDiverged(f"no convergence after {max_rounds} rounds")
            ce = equivalence_query(hyp, oracle, cfg, rng)
            if ce is None:
                break
            stats.counterexamples.append(ce)
            process_counterexample(table, hyp, ce, oracle)
    finally:
        stats.membership_queries = oracle.cache.queries
        stats.cache_hits = oracle.cache.hits
        stats.resets = oracle.cache.resets
        stats.equivalence_tests = oracle.equivalence_tests
    return canonical(minimize(hyp)), stats
