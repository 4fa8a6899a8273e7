import pytest
from hypothesis import given, settings, strategies as st

from conftest import machines
from tlsstate.automata import CLOSED, MealyMachine, distinguishing_word, isomorphic, minimize
from tlsstate.errors import (ContractError, LearningDiverged, NondeterminismError,
                             QueryError)
from tlsstate.harness.base import SutAdapter, SimulatedSut, fixture_machine
from tlsstate.learner import (
    EquivalenceConfig, MembershipOracle, QueryCache, characterizing_set, learn,
    wmethod_suite,
)

PLAIN = ("x", "y", "z")


def small(m):
    return minimize(m)


@settings(max_examples=60, deadline=None)
@given(machines(max_states=5, outputs=PLAIN))
def test_wmethod_learns_random_machines_exactly(m):
    target = small(m)
    learned, stats = learn(SimulatedSut(m), m.inputs, EquivalenceConfig(state_bound=5))
    assert isomorphic(learned, target) is not None
    assert stats.rounds == len(stats.hypothesis_sizes) == len(stats.counterexamples) + 1


@settings(max_examples=60, deadline=None)
@given(machines(max_states=5), machines(max_states=5))
def test_wmethod_suite_separates_machines_within_bound(h, m):
    # the classic guarantee: if m has at most |h| + depth states and differs
    # from h, some word of the suite shows it
    h, m = small(h), small(m)
    depth = max(0, m.num_states - h.num_states)
    if distinguishing_word(h, m) is None:
        return
    suite = wmethod_suite(h, depth)
    assert any(h.run(w) != m.run(w) for w in suite)


@settings(max_examples=60, deadline=None)
@given(machines(max_states=5))
def test_characterizing_set_separates_all_states(m):
    m = small(m)
    W = characterizing_set(m)
    sigs = {tuple(tuple(m.run(w, q)) for w in W) for q in m.states}
    assert len(sigs) == m.num_states


def test_random_walk_learns_counter():
    # mod-3 counter that only shows its state on "read"
    table = tuple(((s + 1) % 3, "ok") for s in range(3))
    m = MealyMachine(("inc", "read"),
                     tuple((table[s], (s, str(s))) for s in range(3)))
    learned, _ = learn(SimulatedSut(m), m.inputs,
                       EquivalenceConfig(method="randomwalk", walks=200, max_length=8, seed=3))
    assert isomorphic(learned, m) is not None


def test_same_seed_same_stats():
    m = fixture_machine("server2012")
    cfg = EquivalenceConfig(method="random-walk", walks=300, seed=7)
    a = learn(SimulatedSut(m), m.inputs, cfg)
    b = learn(SimulatedSut(m), m.inputs, EquivalenceConfig(method="random-walk", walks=300, seed=7))
    assert a[0] == b[0]
    assert a[1].as_dict() == b[1].as_dict()


def test_parallel_matches_serial():
    m = fixture_machine("win8_10_tls12_client")
    serial, s1 = learn(SimulatedSut(m), m.inputs)
    oracle = MembershipOracle(SimulatedSut(m), workers=4)
    try:
        par, s2 = learn(SimulatedSut(m), m.inputs, oracle=oracle)
    finally:
        oracle.close()
    assert serial == par
    assert s1.membership_queries == s2.membership_queries


class Flaky(SutAdapter):
    def __init__(self, m, failures):
        self.inner = SimulatedSut(m)
        self.failures = failures
        self.finished = 0

    def reset(self):
        self.inner.reset()

    def step(self, symbol):
        if self.failures:
            self.failures -= 1
            raise QueryError("transient")
        return self.inner.step(symbol)

    def finish(self):
        self.finished += 1


TOGGLE = MealyMachine(("a", "b"), (((1, "x"), (0, "y")), ((0, "z"), (1, "y"))))


def test_transient_failures_are_retried():
    sut = Flaky(TOGGLE, failures=2)
    oracle = MembershipOracle(sut, retries=3)
    assert oracle.query(("a", "a")) == ("x", "z")
    assert sut.finished == 3


def test_persistent_failure_surfaces():
    oracle = MembershipOracle(Flaky(TOGGLE, failures=100), retries=2)
    with pytest.raises(QueryError):
        oracle.query(("a",))


class Coin(SutAdapter):
    """Answers alternate between two outputs across sessions."""

    def __init__(self):
        self.n = 0

    def reset(self):
        self.n += 1

    def step(self, symbol):
        return "heads" if self.n % 2 else "tails"


def test_nondeterminism_detected():
    oracle = MembershipOracle(Coin(), retries=2)
    oracle.query(("a",))
    with pytest.raises(NondeterminismError):
        oracle.query(("a", "a"))


def test_divergence_cap():
    with pytest.raises(LearningDiverged):
        learn(SimulatedSut(TOGGLE), TOGGLE.inputs, max_rounds=0)


def test_cache_prefixes_and_closed_absorption():
    c = QueryCache()
    c.insert(("a", "b"), ("x", CLOSED))
    assert c.lookup(("a",)) == ("x",)
    assert c.lookup(("a", "b", "a", "a")) == ("x", CLOSED, CLOSED, CLOSED)
    assert c.lookup(("b",)) is None
    assert c.conflict(("a", "b"), ("x", "y")) == 1
    with pytest.raises(NondeterminismError):
        c.insert(("a",), ("q",))
    with pytest.raises(ContractError):
        c.insert(("a",), ())
    open_cache = QueryCache(closed_absorbing=False)
    open_cache.insert(("a",), (CLOSED,))
    assert open_cache.lookup(("a", "a")) is None


def test_closed_connection_short_circuits_steps():
    m = MealyMachine(("a",), (((1, CLOSED),), ((1, CLOSED),)))
    sut = Flaky(m, failures=0)
    calls = []
    inner = sut.step
    sut.step = lambda a: calls.append(a) or inner(a)
    assert MembershipOracle(sut).query(("a",) * 5) == (CLOSED,) * 5
    assert len(calls) == 1


@pytest.mark.parametrize("kw", [dict(method="magic"), dict(state_bound=0),
                                dict(walks=-1), dict(max_length=0)])
def test_bad_equivalence_config(kw):
    with pytest.raises(ContractError):
        EquivalenceConfig(**kw)
