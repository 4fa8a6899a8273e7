import itertools

import pytest
from hypothesis import strategies as st

from tlsstate.automata import MealyMachine


@st.composite
def machines(draw, max_states=6, alphabet=("a", "b", "c"), outputs=("x", "y", "ConnectionClosed")):
    n = draw(st.integers(1, max_states))
    table = tuple(
        tuple((draw(st.integers(0, n - 1)), draw(st.sampled_from(outputs))) for _ in alphabet)
        for _ in range(n)
    )
    return MealyMachine(tuple(alphabet), table, draw(st.integers(0, n - 1)))


def words_upto(alphabet, length):
    for k in range(length + 1):
        yield from itertools.product(alphabet, repeat=k)


def trace_equivalent(a, b, length):
    """Brute-force oracle: identical output on every word up to ``length``."""
    return all(a.run(w) == b.run(w) for w in words_upto(a.inputs, length))


@pytest.fixture
def free_port():
    import socket
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


# -- acceptance summary --------------------------------------------------------

ACCEPTANCE = {
    1: "fixture recovery",
    2: "golden sink/self-loop table",
    3: "per-model findings",
    4: "ideal model is clean",
    5: "codec properties",
    6: "end-to-end wire path",
    7: "learner complexity guard",
    8: "reference TLS server (manual)",
}


def pytest_terminal_summary(terminalreporter):
    outcome = {}
    for status in ("passed", "failed", "skipped", "error"):
        for rep in terminalreporter.stats.get(status, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_criterion_" not in nodeid:
                continue
            n = int(nodeid.split("test_criterion_")[1].split("_")[0])
            # any failing case fails the criterion
            if outcome.get(n) != "FAIL":
                outcome[n] = {"passed": "PASS", "skipped": "SKIP"}.get(status, "FAIL")
    if not outcome:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in ACCEPTANCE.items():
        status = outcome.get(n, "NOT RUN")
        terminalreporter.write_line(f"criterion {n}: {status:<7} {title}")
