"""Abstract input alphabets for the two fuzzing roles."""

import enum

from ..errors import ConfigError


class Role(enum.Enum):
    FUZZ_SERVER = "fuzz-server"   # harness is the TLS client
    FUZZ_CLIENT = "fuzz-client"   # harness is the TLS server

    @classmethod
    def parse(cls, text):
        try:
            return cls(text.replace("_", "-").lower())
        except ValueError:
            raise ConfigError(f"unknown role {text!r}") from None


SHARED_INPUTS = (
    "ChangeCipherSpec",
    "Finished",
    "ApplicationData",
    "ApplicationDataEmpty",
    "AlertWarning",
    "AlertFatal",
)

FUZZ_SERVER_INPUTS = ("ClientHelloRSA", "ClientHelloECDHE", "ClientKeyExchange") + SHARED_INPUTS

FUZZ_CLIENT_INPUTS = (
    "ServerHelloRSA",
    "ServerHelloECDHE",
    "ServerCertificate",
    "ServerKeyExchange",
    "ServerHelloDone",
) + SHARED_INPUTS

ECDHE_ONLY = {"ClientHelloECDHE", "ServerHelloECDHE"}
RSA_ONLY = {"ClientHelloRSA", "ServerHelloRSA"}


def alphabet(role, kx=("rsa", "ecdhe")):
    """Role alphabet restricted to the requested key-exchange hello variants."""
    kx = set(kx)
    if not kx or not kx <= {"rsa", "ecdhe"}:
        raise ConfigError(f"key exchange selection must be a subset of rsa/ecdhe, got {sorted(kx)}")
    full = FUZZ_SERVER_INPUTS if role is Role.FUZZ_SERVER else FUZZ_CLIENT_INPUTS
    drop = set()
    if "ecdhe" not in kx:
        drop |= ECDHE_ONLY
    if "rsa" not in kx:
        drop |= RSA_ONLY
    return tuple(a for a in full if a not in drop)
