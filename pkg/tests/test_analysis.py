import itertools
import json

import pytest
from hypothesis import given, settings, strategies as st

from tlsstate.analysis import (
    FLOWS, AnalysisReport, Kind, Severity, analyze, check_golden, edge_classes, golden_table,
    happy_flow, table_summary,
)
from tlsstate.automata import CLOSED, EdgeClass, MealyMachine
from tlsstate.errors import ConfigError, ContractError, GoldenMismatch, NoValidHandshake
from tlsstate.harness.base import FIXTURES, VENDOR_FIXTURES, fixture_info, fixture_machine


def report_for(name):
    info = fixture_info(name)
    return analyze(fixture_machine(name), happy_flow(info.happy_flow), name, info.title)


def of_kind(report, kind):
    return [f for f in report.findings if f.kind is kind]


# -- ground truth per model ------------------------------------------------------
# (sinks, self-loop states, handshake path) as published for the six Windows models

PUBLISHED = {
    "win7_tls10_rsa_client": ({2, 4}, {1, 4, 5, 6, 7, 9}, [0, 1, 5, 6, 7, 8, 9]),
    "win8_tls10_rsa_client": ({2}, {0, 1, 2, 3, 4, 5, 6}, [0, 1, 3, 4, 5, 6]),
    "win8_10_tls12_client": ({2, 3}, {1, 3, 4, 5, 6, 7, 8}, [0, 1, 5, 6, 7, 8]),
    "server2008_tls10_rsa": ({2, 3}, {1, 3, 4, 5, 6}, [0, 1, 4, 5, 6, 2]),
    "server2012": ({2}, {1, 4, 5, 6, 7}, None),
    "server2016": ({2}, {1, 3, 4, 5}, None),
}


@pytest.mark.parametrize("name", VENDOR_FIXTURES)
def test_sinks_self_loops_and_paths(name):
    sinks, loops, path = PUBLISHED[name]
    r = report_for(name)
    assert set(r.raw_sinks) == sinks
    assert set(r.raw_self_loops) == loops
    if path is not None:
        assert r.happy_path == path


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_sink_oracle(name):
    m = fixture_machine(name)
    r = report_for(name)
    brute = {s for s in m.states if {t for t, _ in m.table[s]} == {s}}
    assert brute == set(r.extra_sinks) | {r.designated_sink}
    assert all(o == CLOSED for _, o in m.table[r.designated_sink])


def brute_alternate_paths(m, happy, designated, limit=6):
    on_path = set(happy)
    sink_states = {s for s in m.states if all(t == s for t, _ in m.table[s])}
    middle = [s for s in m.states if s not in on_path | sink_states]
    ends = on_path | {designated}
    succ = {s: {t for t, _ in m.table[s]} for s in m.states}
    found = set()
    for start in on_path:
        for k in range(1, min(limit, len(middle)) + 1):
            for mids in itertools.permutations(middle, k):
                seq = (start,) + mids
                if all(b in succ[a] for a, b in zip(seq, seq[1:])):
                    found |= {seq + (e,) for e in succ[mids[-1]] & ends}
    return found


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_alternate_path_oracle(name):
    m = fixture_machine(name)
    r = report_for(name)
    assert set(r.alternate_paths()) == brute_alternate_paths(m, r.happy_path, r.designated_sink)


def test_win7_findings():
    r = report_for("win7_tls10_rsa_client")
    assert r.alternate_paths() == [(0, 3, 1)]
    replies = of_kind(r, Kind.UNDESIRED_REPLY)
    assert {f.states[0] for f in replies} == {8, 9}
    m = fixture_machine("win7_tls10_rsa_client")
    for f in replies:
        assert "ClientHello" in m.step(f.states[0], f.inputs[0])[1]
    assert {f.inputs[0] for f in replies} == {"ServerHelloRSA", "ServerCertificate", "Finished"}


def test_win8_tls10_findings():
    r = report_for("win8_tls10_rsa_client")
    assert {f.states[0] for f in of_kind(r, Kind.UNDESIRED_REPLY)} == {6}
    assert r.alternate_paths() == [] and r.extra_sinks == []


def test_win8_10_findings():
    r = report_for("win8_10_tls12_client")
    m = fixture_machine("win8_10_tls12_client")
    assert r.extra_sinks == [3]
    assert m.step(0, "ChangeCipherSpec")[0] == 3
    assert m.step(9, "ChangeCipherSpec")[0] == 3
    assert (0, 4, 1) in r.alternate_paths()


def test_server2008_findings():
    r = report_for("server2008_tls10_rsa")
    m = fixture_machine("server2008_tls10_rsa")
    assert r.extra_sinks == [3]
    into_sink = {a for a in m.inputs if m.step(0, a)[0] == 3}
    assert into_sink == {"ApplicationData", "AlertWarning", "AlertFatal"}


def test_server2012_findings():
    r = report_for("server2012")
    assert set(r.alternate_paths()) == {(1, 4, 5), (0, 3, 2)}


def test_server2016_self_loops_only():
    r = report_for("server2016")
    assert {f.kind for f in r.findings} == {Kind.SELF_LOOP}


def test_ideal_is_clean():
    r = report_for("ideal")
    assert r.findings == []
    assert r.happy_path == [0, 1, 3, 4, 5, 6]


# -- golden table ------------------------------------------------------------------

def test_golden_table_round_trip():
    table = table_summary([report_for(n) for n in VENDOR_FIXTURES])
    assert table == golden_table()
    check_golden(table)


def test_golden_mismatch_is_reported():
    table = table_summary([report_for(n) for n in VENDOR_FIXTURES])
    with pytest.raises(GoldenMismatch, match=r"\+Windows 7"):
        check_golden(table.replace("2,4 ", "2   "))
    with pytest.raises(ContractError):
        table_summary([])


# -- synthetic models ----------------------------------------------------------------

def with_edges(m, changes, extra_states=0, close_sink=2):
    """Copy of ``m`` with edges replaced; added states close on every input."""
    table = [list(row) for row in m.table]
    table += [[(close_sink, CLOSED)] * len(m.inputs) for _ in range(extra_states)]
    for (s, a), v in changes.items():
        table[s][m.input_index(a)] = v
    return MealyMachine(m.inputs, tuple(map(tuple, table)), m.initial)


def test_ccs_injection_is_security_critical():
    ideal = fixture_machine("ideal")
    n = ideal.num_states
    # an early CCS leads to a state that accepts Finished into the post-CCS handshake
    m = with_edges(ideal, {(1, "ChangeCipherSpec"): (n, "Empty"),
                           (n, "Finished"): (5, "ChangeCipherSpec/Finished")}, extra_states=1)
    r = analyze(m, happy_flow("server"))
    crit = [f for f in r.findings if f.severity is Severity.CRITICAL]
    assert [f.states for f in crit] == [(1, n, 5)]


def test_detour_to_pre_ccs_state_is_spec_violation():
    ideal = fixture_machine("ideal")
    n = ideal.num_states
    m = with_edges(ideal, {(0, "AlertWarning"): (n, "Empty"),
                           (n, "ClientHelloRSA"): (1, "ServerHello/Certificate/ServerHelloDone")},
                   extra_states=1)
    paths = of_kind(analyze(m, happy_flow("server")), Kind.ALTERNATE_PATH)
    # the detour state also closes, which is a second detour into the close-sink
    assert [(f.states, f.severity) for f in paths] == [((0, n, 1), Severity.SPEC),
                                                       ((0, n, 2), Severity.SPEC)]


def test_no_valid_handshake():
    ideal = fixture_machine("ideal")
    m = with_edges(ideal, {(0, "ClientHelloRSA"): (2, CLOSED), (0, "ClientHelloECDHE"): (2, CLOSED)})
    with pytest.raises(NoValidHandshake) as exc:
        analyze(m, happy_flow("server"))
    assert exc.value.step == 0


def test_flow_must_fit_alphabet():
    with pytest.raises(ContractError):
        analyze(fixture_machine("ideal"), happy_flow("client"))
    with pytest.raises(ConfigError):
        happy_flow("sideways")


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(sorted(FIXTURES)), st.data())
def test_more_bugs_never_hide_findings(name, data):
    """Redirecting an off-path edge to a fresh looping state keeps every old finding
    except ones about the edge itself."""
    m = fixture_machine(name)
    info = fixture_info(name)
    flow = happy_flow(info.happy_flow)
    before = analyze(m, flow)
    happy = {tuple(e) for e in before.happy_edges}
    sinks = set(before.extra_sinks) | {before.designated_sink}
    candidates = [(s, a) for s, a, t, o in m.transitions()
                  if (s, a) not in happy and s not in sinks]
    s, a = data.draw(st.sampled_from(candidates))
    n = m.num_states
    table = [list(r) for r in m.table] + [[(n, "Empty")] * len(m.inputs)]
    table[s][m.input_index(a)] = (n, "Empty")
    after = analyze(MealyMachine(m.inputs, tuple(map(tuple, table)), m.initial), flow)
    assert n in after.extra_sinks
    assert set(before.extra_sinks) <= set(after.extra_sinks)
    assert set(before.self_loops) - {s} <= set(after.self_loops)


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_analysis_is_pure_and_serializable(name):
    m = fixture_machine(name)
    a, b = report_for(name), report_for(name)
    assert a.as_dict() == b.as_dict()
    assert fixture_machine(name) == m
    back = AnalysisReport.from_json(a.to_json())
    assert back.as_dict() == a.as_dict()
    json.loads(a.to_json())
    assert a.to_text() == back.to_text()


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_edge_classes_cover_every_edge(name):
    m = fixture_machine(name)
    r = report_for(name)
    classes = edge_classes(m, r)
    assert len(classes) == m.num_states * len(m.inputs)
    happy = {k for k, v in classes.items() if v is EdgeClass.HAPPY}
    assert {(r.happy_path[i], a) for i, a in enumerate(r.happy_inputs)} <= happy


def test_edge_classes_refuse_foreign_report():
    with pytest.raises(ContractError):
        edge_classes(fixture_machine("server2012"), report_for("server2016"))


def test_every_flow_has_a_role():
    assert {f.role.value for f in FLOWS.values()} == {"fuzz-server", "fuzz-client"}
