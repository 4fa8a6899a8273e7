"""Key exchange, key derivation, Finished computation and record protection."""

from __future__ import annotations

import hashlib
import hmac
import os
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Callable

from cryptography import x509
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec, padding, rsa
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from ..errors import IncompleteState, KeyExchangeError, RecordAuthError
from .constants import RSA_PKCS1_SHA256, SECP256R1, CipherSuite, ContentType, ProtocolVersion
from .messages import ClientKeyExchange, ServerKeyExchange
from .records import MAX_PLAINTEXT, TlsRecord

DIRECTIONS = ("client", "server")
_CBC_IV_LEN = 16


def _p_hash(digest: str, secret: bytes, seed: bytes, n: int) -> bytes:
    out = bytearray()
    a = seed
    while len(out) < n:
        a = hmac.digest(secret, a, digest)
        out += hmac.digest(secret, a + seed, digest)
    return bytes(out[:n])


def prf(version: ProtocolVersion, secret: bytes, label: str, seed: bytes, out_len: int) -> bytes:
    if out_len <= 0:
        raise ValueError("out_len must be positive")
    full_seed = label.encode("ascii") + seed
    if version is ProtocolVersion.TLS12:
        return _p_hash("sha256", secret, full_seed, out_len)
    half = (len(secret) + 1) // 2
    md5 = _p_hash("md5", secret[:half], full_seed, out_len)
    sha = _p_hash("sha1", secret[len(secret) - half:], full_seed, out_len)
    return bytes(x ^ y for x, y in zip(md5, sha))


@dataclass(frozen=True)
class KeyMaterial:
    client_mac: bytes
    server_mac: bytes
    client_key: bytes
    server_key: bytes
    client_iv: bytes
    server_iv: bytes

    def for_direction(self, direction: str) -> tuple[bytes, bytes, bytes]:
        if direction == "client":
            return self.client_mac, self.client_key, self.client_iv
        return self.server_mac, self.server_key, self.server_iv


def _seq_dict(value):
    return {d: value for d in DIRECTIONS}


@dataclass
class SessionSecrets:
    """Per-connection handshake and record-protection state.

    ``direction`` arguments name the writer of a record: "client" records
    are protected with the client write keys.
    """

    version: ProtocolVersion
    suite: CipherSuite | None = None
    client_random: bytes | None = None
    server_random: bytes | None = None
    pre_master_secret: bytes | None = None
    master_secret: bytes | None = None
    keys: KeyMaterial | None = None
    seq: dict = field(default_factory=lambda: _seq_dict(0))
    active: dict = field(default_factory=lambda: _seq_dict(False))
    chained_iv: dict = field(default_factory=lambda: _seq_dict(b""))
    transcript: bytearray = field(default_factory=bytearray)
    rng: Callable[[int], bytes] = os.urandom

    def add_handshake(self, raw: bytes) -> None:
        self.transcript += raw

    def activate(self, direction: str) -> None:
        """Switch ``direction`` to the negotiated cipher (on ChangeCipherSpec)."""
        if self.keys is None:
            self.keys = derive_key_block(self, self.suite)
        self.active[direction] = True
        self.seq[direction] = 0
        self.chained_iv[direction] = self.keys.for_direction(direction)[2]


def derive_master_secret(secrets: SessionSecrets) -> bytes:
    if not (secrets.pre_master_secret and secrets.client_random and secrets.server_random):
        raise IncompleteState("master secret needs the premaster secret and both randoms")
    secrets.master_secret = prf(secrets.version, secrets.pre_master_secret, "master secret",
                                secrets.client_random + secrets.server_random, 48)
    return secrets.master_secret


def derive_key_block(secrets: SessionSecrets, suite: CipherSuite | None) -> KeyMaterial:
    if suite is None:
        raise IncompleteState("no cipher suite negotiated")
    if secrets.master_secret is None:
        derive_master_secret(secrets)
    # CBC IVs are only used by TLS 1.0 but sit at the end of the block either way
    iv_len = _CBC_IV_LEN if suite.bulk == "cbc" else suite.fixed_iv_len
    sizes = [suite.mac_len] * 2 + [suite.key_len] * 2 + [iv_len] * 2
    block = prf(secrets.version, secrets.master_secret, "key expansion",
                secrets.server_random + secrets.client_random, sum(sizes))
    parts = []
    pos = 0
    for n in sizes:
        parts.append(block[pos:pos + n])
        pos += n
    secrets.suite = suite
    secrets.keys = KeyMaterial(*parts)
    return secrets.keys


def transcript_hash(secrets: SessionSecrets) -> bytes:
    data = bytes(secrets.transcript)
    if secrets.version is ProtocolVersion.TLS12:
        return hashlib.sha256(data).digest()
    return hashlib.md5(data).digest() + hashlib.sha1(data).digest()


def compute_verify_data(secrets: SessionSecrets, role: str, version: ProtocolVersion | None = None) -> bytes:
    if role not in DIRECTIONS:
        raise ValueError(f"role must be 'client' or 'server', not {role!r}")
    if secrets.master_secret is None:
        raise IncompleteState("verify_data needs the master secret")
    version = version or secrets.version
    return prf(version, secrets.master_secret, f"{role} finished", transcript_hash(secrets), 12)


# -- key exchange ----------------------------------------------------------

def rsa_client_key_exchange(server_public_key, secrets: SessionSecrets,
                            client_version: ProtocolVersion | None = None) -> ClientKeyExchange:
    if not isinstance(server_public_key, rsa.RSAPublicKey):
        raise KeyExchangeError("RSA key exchange needs an RSA public key")
    if server_public_key.key_size < 512:
        raise KeyExchangeError(f"RSA key of {server_public_key.key_size} bits is too small")
    premaster = (client_version or secrets.version).wire + secrets.rng(46)
    secrets.pre_master_secret = premaster
    return ClientKeyExchange.rsa(server_public_key.encrypt(premaster, padding.PKCS1v15()))


def rsa_decrypt_premaster(private_key, cke: ClientKeyExchange, secrets: SessionSecrets) -> bytes:
    try:
        premaster = private_key.decrypt(cke.rsa_ciphertext(), padding.PKCS1v15())
    except Exception as exc:
        raise KeyExchangeError(f"cannot decrypt the premaster secret: {exc}") from exc
    if len(premaster) != 48:
        raise KeyExchangeError(f"premaster secret has {len(premaster)} bytes, expected 48")
    secrets.pre_master_secret = premaster
    return premaster


_CURVES = {SECP256R1: ec.SECP256R1}


class EcdheKeyPair:
    def __init__(self, named_curve: int = SECP256R1):
        try:
            self.curve = _CURVES[named_curve]()
        except KeyError:
            raise KeyExchangeError(f"unsupported named curve {named_curve}") from None
        self.named_curve = named_curve
        self.private = ec.generate_private_key(self.curve)

    @property
    def public(self) -> bytes:
        return self.private.public_key().public_bytes(
            serialization.Encoding.X962, serialization.PublicFormat.UncompressedPoint)

    def shared(self, peer_point: bytes) -> bytes:
        try:
            peer = ec.EllipticCurvePublicKey.from_encoded_point(self.curve, peer_point)
            return self.private.exchange(ec.ECDH(), peer)
        except (ValueError, TypeError) as exc:
            raise KeyExchangeError(f"invalid peer EC point: {exc}") from exc


def _md5_sha1(data: bytes) -> bytes:
    return hashlib.md5(data).digest() + hashlib.sha1(data).digest()


def _rsa_raw_sign(key: rsa.RSAPrivateKey, digest: bytes) -> bytes:
    """PKCS#1 v1.5 type-1 signature over a bare MD5||SHA1 digest (TLS 1.0)."""
    k = (key.key_size + 7) // 8
    em = b"\x00\x01" + b"\xff" * (k - len(digest) - 3) + b"\x00" + digest
    nums = key.private_numbers()
    return pow(int.from_bytes(em, "big"), nums.d, nums.public_numbers.n).to_bytes(k, "big")


def _rsa_raw_verify(key: rsa.RSAPublicKey, digest: bytes, signature: bytes) -> bool:
    k = (key.key_size + 7) // 8
    nums = key.public_numbers()
    em = pow(int.from_bytes(signature, "big"), nums.e, nums.n).to_bytes(k, "big")
    return em == b"\x00\x01" + b"\xff" * (k - len(digest) - 3) + b"\x00" + digest


def ecdhe_server_params(secrets: SessionSecrets, signing_key: rsa.RSAPrivateKey,
                        named_curve: int = SECP256R1) -> tuple[ServerKeyExchange, EcdheKeyPair]:
    """Fresh server ephemeral key and the signed ServerKeyExchange carrying it."""
    pair = EcdheKeyPair(named_curve)
    unsigned = ServerKeyExchange(named_curve, pair.public, b"")
    signed_data = (secrets.client_random or b"") + (secrets.server_random or b"") + unsigned.params
    if secrets.version is ProtocolVersion.TLS12:
        sig = signing_key.sign(signed_data, padding.PKCS1v15(), hashes.SHA256())
        return ServerKeyExchange(named_curve, pair.public, sig, RSA_PKCS1_SHA256), pair
    return ServerKeyExchange(named_curve, pair.public, _rsa_raw_sign(signing_key, _md5_sha1(signed_data))), pair


def verify_server_params(ske: ServerKeyExchange, secrets: SessionSecrets, public_key) -> bool:
    signed_data = (secrets.client_random or b"") + (secrets.server_random or b"") + ske.params
    if ske.signature_algorithm is None:
        return _rsa_raw_verify(public_key, _md5_sha1(signed_data), ske.signature)
    try:
        public_key.verify(ske.signature, signed_data, padding.PKCS1v15(), hashes.SHA256())
        return True
    except Exception:
        return False


def ecdhe_exchange(ske: ServerKeyExchange, secrets: SessionSecrets) -> tuple[ClientKeyExchange, bytes]:
    """Client side: answer the server's parameters and record the shared secret."""
    pair = EcdheKeyPair(ske.named_curve)
    shared = pair.shared(ske.public)
    secrets.pre_master_secret = shared
    return ClientKeyExchange.ecdhe(pair.public), shared


# -- record protection -----------------------------------------------------

def _header(seq: int, ctype: int, version: ProtocolVersion, length: int) -> bytes:
    return struct.pack("!QB2sH", seq, ctype, version.wire, length)


def _keyed(secrets: SessionSecrets, direction: str):
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be 'client' or 'server', not {direction!r}")
    if not secrets.active[direction] or secrets.keys is None:
        raise IncompleteState(f"cipher is not active for {direction} records")
    seq = secrets.seq[direction]
    if seq >= 1 << 64:
        raise IncompleteState("sequence number exhausted")
    secrets.seq[direction] = seq + 1
    return secrets.keys.for_direction(direction), seq


def protect_record(rec: TlsRecord, secrets: SessionSecrets, direction: str) -> TlsRecord:
    if len(rec.payload) > MAX_PLAINTEXT:
        raise ValueError("plaintext exceeds 2^14 bytes")
    (mac_key, key, iv), seq = _keyed(secrets, direction)
    version = rec.version
    if secrets.suite.bulk == "gcm":
        explicit = struct.pack("!Q", seq)
        aad = _header(seq, rec.content_type, version, len(rec.payload))
        sealed = AESGCM(key).encrypt(iv + explicit, rec.payload, aad)
        return TlsRecord(rec.content_type, version, explicit + sealed)
    mac = hmac.digest(mac_key, _header(seq, rec.content_type, version, len(rec.payload)) + rec.payload, "sha1")
    data = rec.payload + mac
    pad = (16 - (len(data) + 1) % 16) % 16
    data += bytes([pad]) * (pad + 1)
    if version is ProtocolVersion.TLS10:
        enc = Cipher(algorithms.AES(key), modes.CBC(secrets.chained_iv[direction])).encryptor()
        ct = enc.update(data) + enc.finalize()
        secrets.chained_iv[direction] = ct[-16:]
        return TlsRecord(rec.content_type, version, ct)
    record_iv = secrets.rng(16)
    enc = Cipher(algorithms.AES(key), modes.CBC(record_iv)).encryptor()
    return TlsRecord(rec.content_type, version, record_iv + enc.update(data) + enc.finalize())


def unprotect_record(rec: TlsRecord, secrets: SessionSecrets, direction: str) -> TlsRecord:
    (mac_key, key, iv), seq = _keyed(secrets, direction)
    version = rec.version
    payload = rec.payload
    if secrets.suite.bulk == "gcm":
        if len(payload) < 8 + 16:
            raise RecordAuthError("GCM record too short")
        explicit, sealed = payload[:8], payload[8:]
        aad = _header(seq, rec.content_type, version, len(sealed) - 16)
        try:
            plain = AESGCM(key).decrypt(iv + explicit, sealed, aad)
        except InvalidTag:
            raise RecordAuthError("GCM tag mismatch") from None
        return TlsRecord(rec.content_type, version, plain)

    if version is ProtocolVersion.TLS10:
        record_iv, ct = secrets.chained_iv[direction], payload
        if ct and len(ct) % 16 == 0:
            secrets.chained_iv[direction] = ct[-16:]
    else:
        record_iv, ct = payload[:16], payload[16:]
    mac_len = secrets.suite.mac_len
    if not ct or len(ct) % 16 or len(ct) < mac_len + 1:
        raise RecordAuthError("CBC record has an invalid length")
    dec = Cipher(algorithms.AES(key), modes.CBC(record_iv)).decryptor()
    data = dec.update(ct) + dec.finalize()
    pad = data[-1]
    if pad + 1 + mac_len > len(data) or data[-pad - 1:] != bytes([pad]) * (pad + 1):
        raise RecordAuthError("bad CBC padding")
    body = data[:-pad - 1]
    plain, mac = body[:-mac_len], body[-mac_len:]
    expected = hmac.digest(mac_key, _header(seq, rec.content_type, version, len(plain)) + plain, "sha1")
    if not hmac.compare_digest(mac, expected):
        raise RecordAuthError("record MAC mismatch")
    return TlsRecord(rec.content_type, version, plain)


# -- bundled credentials ---------------------------------------------------

@lru_cache(maxsize=1)
def test_credentials() -> tuple[bytes, rsa.RSAPrivateKey]:
    """The self-signed RSA certificate (DER) and key the harness presents as a server."""
    data = resources.files(__package__).joinpath("data")
    cert = x509.load_pem_x509_certificate(data.joinpath("test_cert.pem").read_bytes())
    key = serialization.load_pem_private_key(data.joinpath("test_key.pem").read_bytes(), None)
    return cert.public_bytes(serialization.Encoding.DER), key


def certificate_public_key(der: bytes):
    try:
        return x509.load_der_x509_certificate(der).public_key()
    except ValueError as exc:
        raise KeyExchangeError(f"unparseable certificate: {exc}") from exc


def test_credential_paths():
    """Filesystem paths of the bundled PEM files (for stacks that want files)."""
    data = resources.files(__package__).joinpath("data")
    return str(data.joinpath("test_cert.pem")), str(data.joinpath("test_key.pem"))
