import enum
from dataclasses import dataclass

from ..errors import ConfigError, MalformedRecord


class ProtocolVersion(enum.Enum):
    TLS10 = (3, 1)
    TLS12 = (3, 3)

    @property
    def wire(self) -> bytes:
        return bytes(self.value)

    @classmethod
    def from_wire(cls, major: int, minor: int) -> "ProtocolVersion":
        try:
            return cls((major, minor))
        except ValueError:
            raise MalformedRecord(f"unsupported protocol version {major}.{minor}") from None

    @classmethod
    def parse(cls, text: str) -> "ProtocolVersion":
        key = text.lower().replace(".", "").replace("_", "")
        if key in ("tls10", "10"):
            return cls.TLS10
        if key in ("tls12", "12"):
            return cls.TLS12
        raise ConfigError(f"unsupported TLS version {text!r} (TLS 1.0 and 1.2 only)")


class ContentType(enum.IntEnum):
    CHANGE_CIPHER_SPEC = 20
    ALERT = 21
    HANDSHAKE = 22
    APPLICATION_DATA = 23


class HandshakeType(enum.IntEnum):
    HELLO_REQUEST = 0
    CLIENT_HELLO = 1
    SERVER_HELLO = 2
    CERTIFICATE = 11
    SERVER_KEY_EXCHANGE = 12
    CERTIFICATE_REQUEST = 13
    SERVER_HELLO_DONE = 14
    CERTIFICATE_VERIFY = 15
    CLIENT_KEY_EXCHANGE = 16
    FINISHED = 20


class AlertLevel(enum.IntEnum):
    WARNING = 1
    FATAL = 2


class AlertDescription(enum.IntEnum):
    CLOSE_NOTIFY = 0
    UNEXPECTED_MESSAGE = 10
    BAD_RECORD_MAC = 20
    HANDSHAKE_FAILURE = 40


class ExtensionType(enum.IntEnum):
    SUPPORTED_GROUPS = 10
    EC_POINT_FORMATS = 11
    SIGNATURE_ALGORITHMS = 13
    RENEGOTIATION_INFO = 0xFF01


EMPTY_RENEGOTIATION_INFO_SCSV = 0x00FF
SECP256R1 = 23
RSA_PKCS1_SHA256 = (4, 1)


@dataclass(frozen=True)
class CipherSuite:
    code: int
    name: str
    kx: str            # "rsa" | "ecdhe"
    bulk: str          # "cbc" | "gcm"
    mac_len: int
    key_len: int
    fixed_iv_len: int  # CBC: IV from the key block (TLS 1.0 only); GCM: implicit salt


TLS_RSA_WITH_AES_128_CBC_SHA = CipherSuite(
    0x002F, "TLS_RSA_WITH_AES_128_CBC_SHA", "rsa", "cbc", 20, 16, 16)
TLS_ECDHE_RSA_WITH_AES_128_GCM_SHA256 = CipherSuite(
    0xC02F, "TLS_ECDHE_RSA_WITH_AES_128_GCM_SHA256", "ecdhe", "gcm", 0, 16, 4)

SUITES = {s.code: s for s in (TLS_RSA_WITH_AES_128_CBC_SHA, TLS_ECDHE_RSA_WITH_AES_128_GCM_SHA256)}


def suite_for(version: ProtocolVersion, kx: str) -> CipherSuite:
    if kx == "rsa":
        return TLS_RSA_WITH_AES_128_CBC_SHA
    if kx == "ecdhe":
        if version is not ProtocolVersion.TLS12:
            raise ConfigError("ECDHE is only supported with TLS 1.2")
        return TLS_ECDHE_RSA_WITH_AES_128_GCM_SHA256
    raise ConfigError(f"unknown key exchange {kx!r}")


def suite_supported(version: ProtocolVersion, suite: CipherSuite) -> bool:
    return suite.bulk == "cbc" or version is ProtocolVersion.TLS12
