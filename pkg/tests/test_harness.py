import random
import sys
from pathlib import Path

import pytest

from helpers.ssl_server import SslEchoServer
from tlsstate.automata import CLOSED, EMPTY
from tlsstate.errors import ConfigError, ContractError, QueryError
from tlsstate.harness.alphabets import FUZZ_CLIENT_INPUTS, FUZZ_SERVER_INPUTS, Role, alphabet
from tlsstate.harness.base import FIXTURES, fixture_info, fixture_machine, load_fixture
from tlsstate.harness.mapper import APP_PAYLOAD, Endpoint, Mapper
from tlsstate.harness.network import Listener, TlsClientTarget, TlsServerTarget
from tlsstate.harness.simulator import FixtureClient, FixtureServer
from tlsstate.tls.constants import ProtocolVersion

V10, V12 = ProtocolVersion.TLS10, ProtocolVersion.TLS12
HELPERS = Path(__file__).parent / "helpers"


def tokens(events):
    return [e.token for e in events]


# -- alphabets and fixtures -------------------------------------------------

def test_alphabets():
    assert "ClientHelloECDHE" not in alphabet(Role.FUZZ_SERVER, ("rsa",))
    assert alphabet(Role.FUZZ_CLIENT) == FUZZ_CLIENT_INPUTS
    assert alphabet(Role.FUZZ_SERVER, ("ecdhe", "rsa")) == FUZZ_SERVER_INPUTS
    for bad in ((), ("dh",)):
        with pytest.raises(ConfigError):
            alphabet(Role.FUZZ_SERVER, bad)
    assert Role.parse("fuzz_client") is Role.FUZZ_CLIENT
    with pytest.raises(ConfigError):
        Role.parse("bystander")


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_fixture_alphabets_fit_their_role(name):
    info = fixture_info(name)
    m = fixture_machine(name)
    full = FUZZ_SERVER_INPUTS if info.role is Role.FUZZ_SERVER else FUZZ_CLIENT_INPUTS
    assert set(m.inputs) <= set(full)


def test_unknown_fixture():
    with pytest.raises(ConfigError):
        load_fixture("win95")


def test_simulated_sut_resets():
    sut = load_fixture("ideal")
    first = sut.query(["ClientHelloRSA", "ClientKeyExchange"])
    sut.query(["ChangeCipherSpec"])
    assert sut.query(["ClientHelloRSA", "ClientKeyExchange"]) == first


# -- endpoints in memory ----------------------------------------------------

def handshake(version, kx):
    """Drive a full handshake between two endpoints; return both and the event log."""
    c, s = Endpoint("client", version), Endpoint("server", version)
    log = []

    def deliver(dst, data):
        evs = tokens(dst.receive(data))
        log.append(evs)
        return evs

    deliver(s, c.client_hello(kx))
    flight = s.server_hello(kx) + s.certificate()
    if kx == "ecdhe":
        flight += s.server_key_exchange()
    deliver(c, flight + s.server_hello_done())
    deliver(s, c.client_key_exchange() + c.change_cipher_spec() + c.finished())
    deliver(c, s.change_cipher_spec() + s.finished())
    deliver(s, c.application_data())
    deliver(c, s.application_data(b"reply"))
    return c, s, log


@pytest.mark.parametrize("version,kx", [(V10, "rsa"), (V12, "rsa"), (V12, "ecdhe")])
def test_endpoints_complete_a_handshake(version, kx):
    c, s, log = handshake(version, kx)
    server_flight = ["ServerHello", "Certificate"] + (["ServerKeyExchange"] if kx == "ecdhe" else [])
    assert log == [
        ["ClientHello"],
        server_flight + ["ServerHelloDone"],
        ["ClientKeyExchange", "ChangeCipherSpec", "Finished"],
        ["ChangeCipherSpec", "Finished"],
        ["ApplicationData"],
        ["ApplicationData"],
    ]
    assert c.secrets.master_secret == s.secrets.master_secret
    assert c.secrets.pre_master_secret[:2] == version.wire or kx == "ecdhe"


def test_finished_verify_data_agrees():
    c, s = Endpoint("client", V12), Endpoint("server", V12)
    s.receive(c.client_hello())
    c.receive(s.server_hello() + s.certificate() + s.server_hello_done())
    s.receive(c.client_key_exchange() + c.change_cipher_spec())
    from tlsstate.tls.crypto import compute_verify_data
    expected = compute_verify_data(s.secrets, "client")
    events = s.receive(c.finished())
    assert events[0].message.verify_data == expected


def test_out_of_order_symbols_use_zero_keys():
    # no hello at all: both sides fall back to the same all-zero key material
    c, s = Endpoint("client", V12), Endpoint("server", V12)
    assert tokens(s.receive(c.change_cipher_spec() + c.finished())) == ["ChangeCipherSpec", "Finished"]


def test_garbage_is_reported_not_raised():
    s = Endpoint("server", V12)
    assert tokens(s.receive(b"\x63\x03\x03\x00\x01\x00")) == ["MalformedResponse"]
    c = Endpoint("client", V12)
    c.change_cipher_spec()
    s2 = Endpoint("server", V12)
    s2.receive(Endpoint("client", V12).change_cipher_spec())
    # peer active with different keys than the record was sealed with
    s2.secrets.keys = None
    s2.secrets.client_random = b"\x01" * 32
    s2._activate("client")
    assert tokens(s2.receive(c.application_data())) == ["DecryptError"]


def test_mapper_symbols():
    m = Mapper(Role.FUZZ_SERVER, V12)
    for sym in FUZZ_SERVER_INPUTS:
        assert m.concretize(sym)
    with pytest.raises(ContractError):
        m.concretize("ServerHelloRSA")
    assert m.abstract_response(b"", False) == EMPTY
    assert m.abstract_response(b"", True) == CLOSED
    with pytest.raises(ContractError):
        Endpoint("middlebox", V12)


def test_alert_and_empty_appdata_tokens():
    c, s = Endpoint("client", V10), Endpoint("server", V10)
    data = c.alert("AlertWarning") + c.alert("AlertFatal") + c.application_data(b"")
    assert tokens(s.receive(data)) == ["AlertWarning", "AlertFatal", "ApplicationDataEmpty"]
    assert APP_PAYLOAD.startswith(b"GET")


# -- fixtures behind real sockets ------------------------------------------

def random_words(name, n, seed):
    """Random words over the inputs the fixture's wire version can carry."""
    info = fixture_info(name)
    inputs = alphabet(info.role, info.kx)
    rng = random.Random(seed)
    return [[rng.choice(inputs) for _ in range(rng.randint(1, 7))] for _ in range(n)]


@pytest.mark.network
@pytest.mark.parametrize("name", ["ideal", "server2012", "server2008_tls10_rsa"])
def test_simulated_server_matches_fixture(name):
    m = fixture_machine(name)
    info = fixture_info(name)
    server = FixtureServer(name).start()
    try:
        target = TlsServerTarget(*server.address, ProtocolVersion.parse(info.version), timeout=0.15)
        for w in random_words(name, 25, seed=len(name)):
            assert target.query(w) == m.run(w), w
        target.close()
    finally:
        server.stop()


@pytest.mark.network
def test_simulated_client_matches_fixture():
    name = "win8_10_tls12_client"
    m = fixture_machine(name)
    listener = Listener("127.0.0.1", 0)
    client = FixtureClient(name, *listener.address, connections=2).start()
    try:
        target = TlsClientTarget(listener, V12, "true", timeout=0.15)
        for w in random_words(name, 20, seed=5):
            assert target.query(w) == m.run(w), w
        target.close()
    finally:
        client.stop()
        listener.close()


@pytest.mark.network
def test_sessions_are_isolated():
    server = FixtureServer("ideal").start()
    try:
        target = TlsServerTarget(*server.address, V12, timeout=0.15)
        happy = ["ClientHelloRSA", "ClientKeyExchange", "ChangeCipherSpec", "Finished"]
        first = target.query(happy)
        target.query(["ChangeCipherSpec", "ClientHelloECDHE"])
        assert target.query(happy) == first
        assert first[-1] == "ChangeCipherSpec/Finished"
    finally:
        server.stop()


@pytest.mark.network
def test_unreachable_targets(free_port):
    from tlsstate.errors import SutUnavailable
    with pytest.raises(SutUnavailable):
        TlsServerTarget("127.0.0.1", free_port, V12, connect_timeout=0.5).query(["ClientHelloRSA"])
    listener = Listener("127.0.0.1", 0)
    try:
        with pytest.raises(SutUnavailable):
            TlsClientTarget(listener, V12, "true", accept_timeout=0.3).query(["ServerHelloRSA"])
    finally:
        listener.close()
    with pytest.raises(ConfigError):
        TlsClientTarget(Listener("127.0.0.1", 0), V12, None)


@pytest.mark.network
def test_silent_client_is_a_query_error():
    import socket
    import threading
    listener = Listener("127.0.0.1", 0)
    peers = []

    def dial():
        peers.append(socket.create_connection(listener.address))

    threading.Thread(target=dial).start()
    target = TlsClientTarget(listener, V12, "true", timeout=0.05, accept_timeout=0.5)
    try:
        with pytest.raises(QueryError):
            target.reset()
    finally:
        target.close()
        for p in peers:
            p.close()
        listener.close()


# -- interoperability with OpenSSL via the ssl module ------------------------

INTEROP = [
    ("TLSv1_2", V12, "AES128-SHA", "RSA"),
    ("TLSv1_2", V12, "ECDHE-RSA-AES128-GCM-SHA256", "ECDHE"),
    ("TLSv1", V10, "AES128-SHA", "RSA"),
]


def app_tokens(output):
    # OpenSSL splits TLS 1.0 CBC records 1/n-1, which adds an empty record first
    return [t for t in output.split("/") if t != "ApplicationDataEmpty"]


@pytest.mark.network
@pytest.mark.parametrize("ssl_version,version,ciphers,kx", INTEROP)
def test_handshake_with_openssl_server(ssl_version, version, ciphers, kx):
    with SslEchoServer(ssl_version, ciphers) as srv:
        target = TlsServerTarget("127.0.0.1", srv.port, version, timeout=0.3)
        out = target.query([f"ClientHello{kx}", "ClientKeyExchange", "ChangeCipherSpec",
                            "Finished", "ApplicationData"])
    flight = "ServerHello/Certificate/" + ("ServerKeyExchange/" if kx == "ECDHE" else "")
    assert out[:4] == [flight + "ServerHelloDone", EMPTY, EMPTY, "ChangeCipherSpec/Finished"]
    assert app_tokens(out[4])[0] == "ApplicationData"


@pytest.mark.network
@pytest.mark.parametrize("ssl_version,version,ciphers,kx", INTEROP)
def test_handshake_with_openssl_client(ssl_version, version, ciphers, kx):
    listener = Listener("127.0.0.1", 0)
    trigger = f"{sys.executable} {HELPERS / 'ssl_client.py'} {listener.address[1]} {ssl_version} {ciphers}"
    target = TlsClientTarget(listener, version, trigger, timeout=0.3)
    word = [f"ServerHello{kx}", "ServerCertificate"]
    word += ["ServerKeyExchange"] if kx == "ECDHE" else []
    word += ["ServerHelloDone", "ChangeCipherSpec", "Finished"]
    try:
        out = target.query(word)
    finally:
        target.close()
        listener.close()
    assert out[-3] == "ClientKeyExchange/ChangeCipherSpec/Finished"
    assert out[-2] == EMPTY
    assert app_tokens(out[-1])[0] == "ApplicationData"
