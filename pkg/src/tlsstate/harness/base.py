"""SUT adapter contract, the simulated SUT and the bundled fixtures."""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

from ..automata import MealyMachine, parse_model
from ..errors import ConfigError
from .alphabets import Role


class SutAdapter:
    """Resettable black box speaking abstract symbols.

    ``reset()`` starts a fresh session and ``step()`` returns the abstract
    output for one abstract input.  Adapters that can run several isolated
    sessions at once set ``supports_parallel`` and implement ``spawn()``.
    """

    supports_parallel = False

    def reset(self) -> None:
        raise NotImplementedError

    def step(self, symbol: str) -> str:
        raise NotImplementedError

    def finish(self) -> None:
        """Called once a query is over; lets adapters release the session early."""

    def query(self, word) -> list[str]:
        self.reset()
        try:
            return [self.step(a) for a in word]
        finally:
            self.finish()

    def spawn(self) -> "SutAdapter":
        raise NotImplementedError

    def close(self) -> None:
        pass


class SimulatedSut(SutAdapter):
    supports_parallel = True

    def __init__(self, machine: MealyMachine):
        self.machine = machine
        self.state = machine.initial

    def reset(self):
        self.state = self.machine.initial

    def step(self, symbol):
        self.state, out = self.machine.table[self.state][self.machine.input_index(symbol)]
        return out

    def spawn(self):
        return SimulatedSut(self.machine)


@dataclass(frozen=True)
class FixtureInfo:
    name: str
    title: str
    role: Role
    version: str
    kx: tuple[str, ...]
    happy_flow: str


FIXTURES = {
    f.name: f for f in [
        FixtureInfo("ideal", "Ideal TLS implementation", Role.FUZZ_SERVER,
                    "tls12", ("rsa", "ecdhe"), "server"),
        FixtureInfo("win7_tls10_rsa_client", "Windows 7 RSA TLS 1.0 (Client)",
                    Role.FUZZ_CLIENT, "tls10", ("rsa",), "client-appdata"),
        FixtureInfo("win8_tls10_rsa_client", "Windows 8 RSA TLS 1.0 (Client)",
                    Role.FUZZ_CLIENT, "tls10", ("rsa",), "client"),
        FixtureInfo("win8_10_tls12_client", "Windows 8 and 10 RSA TLS 1.2 (Client)",
                    Role.FUZZ_CLIENT, "tls12", ("rsa", "ecdhe"), "client"),
        FixtureInfo("server2008_tls10_rsa", "Windows Server 2008 RSA TLS 1.0 (Server)",
                    Role.FUZZ_SERVER, "tls10", ("rsa",), "server-close"),
        FixtureInfo("server2012", "Windows Server 2012 (Server)",
                    Role.FUZZ_SERVER, "tls12", ("rsa", "ecdhe"), "server-close"),
        FixtureInfo("server2016", "Windows Server 2016 (Server)",
                    Role.FUZZ_SERVER, "tls12", ("rsa", "ecdhe"), "server-close"),
    ]
}

VENDOR_FIXTURES = [n for n in FIXTURES if n != "ideal"]


def fixture_info(name: str) -> FixtureInfo:
    try:
        return FIXTURES[name]
    except KeyError:
        raise ConfigError(f"unknown fixture {name!r}; choose from {sorted(FIXTURES)}") from None


def fixture_machine(name: str) -> MealyMachine:
    fixture_info(name)
    text = resources.files(__package__).joinpath("fixtures", f"{name}.txt").read_text("utf-8")
    return parse_model(text)


def load_fixture(name: str) -> SimulatedSut:
    return SimulatedSut(fixture_machine(name))
