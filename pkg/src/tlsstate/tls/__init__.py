"""TLS 1.0/1.2 wire codec and cryptography."""

from .constants import (ContentType, HandshakeType, ProtocolVersion, CipherSuite,
                        TLS_RSA_WITH_AES_128_CBC_SHA, TLS_ECDHE_RSA_WITH_AES_128_GCM_SHA256)
from .records import TlsRecord, encode_record, decode_records
from .messages import (ClientHello, ServerHello, Certificate, ServerKeyExchange, CertificateRequest,
                       ServerHelloDone, ClientKeyExchange, CertificateVerify, Finished,
                       encode_handshake, decode_handshake)
from .crypto import (SessionSecrets, prf, derive_master_secret, derive_key_block, compute_verify_data,
                     rsa_client_key_exchange, ecdhe_exchange, protect_record, unprotect_record)

__all__ = [
    "ContentType", "HandshakeType", "ProtocolVersion", "CipherSuite",
    "TLS_RSA_WITH_AES_128_CBC_SHA", "TLS_ECDHE_RSA_WITH_AES_128_GCM_SHA256",
    "TlsRecord", "encode_record", "decode_records",
    "ClientHello", "ServerHello", "Certificate", "ServerKeyExchange", "CertificateRequest",
    "ServerHelloDone", "ClientKeyExchange", "CertificateVerify", "Finished",
    "encode_handshake", "decode_handshake",
    "SessionSecrets", "prf", "derive_master_secret", "derive_key_block", "compute_verify_data",
    "rsa_client_key_exchange", "ecdhe_exchange", "protect_record", "unprotect_record",
]
