"""EAP-TLS credential material: a scenario-local CA, server and client certificates.

Key generation is Ed25519. When a deterministic seed is supplied every key is
derived from it and certificate timestamps are pinned, so two runs produce
byte-identical PEM material; without a seed, keys come from OS entropy.
"""

from __future__ import annotations

import datetime
import hashlib
from dataclasses import dataclass

from cryptography import x509
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.x509.oid import NameOID

from .model import EapParams

# Validity start for seeded (reproducible) certificates.
SEEDED_EPOCH = datetime.datetime(2025, 1, 1, tzinfo=datetime.timezone.utc)


class CryptoFailure(Exception):
    """Credential generation or verification failed."""


@dataclass(frozen=True)
class ClientCredential:
    identity: str
    certificate: bytes  # PEM
    key: bytes  # PEM


@dataclass(frozen=True)
class CredentialSet:
    ca_certificate: bytes
    server_certificate: bytes
    server_key: bytes
    client_credentials: tuple[ClientCredential, ...]


def _derived_key(seed: bytes, label: str) -> Ed25519PrivateKey:
    raw = hashlib.sha256(seed + b"|" + label.encode("utf-8")).digest()
    return Ed25519PrivateKey.from_private_bytes(raw)


def _serial(seed: bytes | None, label: str) -> int:
    if seed is None:
        return x509.random_serial_number()
    digest = hashlib.sha256(seed + b"|serial|" + label.encode("utf-8")).digest()
    # Positive, below the 20-octet serial bound.
    return int.from_bytes(digest[:16], "big") | 1


def _key_pem(key: Ed25519PrivateKey) -> bytes:
    return key.private_bytes(
        encoding=serialization.Encoding.PEM,
        format=serialization.PrivateFormat.PKCS8,
        encryption_algorithm=serialization.NoEncryption(),
    )


def _name(common_name: str, realm: str) -> x509.Name:
    return x509.Name(
        [
            x509.NameAttribute(NameOID.ORGANIZATION_NAME, realm),
            x509.NameAttribute(NameOID.COMMON_NAME, common_name),
        ]
    )


def generate_eap_credentials(params: EapParams, deterministic_seed: bytes | None = None) -> CredentialSet:
    """Build a self-signed CA plus server and per-identity client certificates."""
    if not isinstance(params.ca_validity_days, int) or params.ca_validity_days < 1:
        raise CryptoFailure(f"ca_validity_days must be >= 1, got {params.ca_validity_days!r}")
    if not params.client_identities:
        raise CryptoFailure("at least one client identity is required")
    if len(set(params.client_identities)) != len(params.client_identities):
        raise CryptoFailure("client identities must be unique")

    seed = deterministic_seed
    if seed is None:
        ca_key = Ed25519PrivateKey.generate()
        server_key = Ed25519PrivateKey.generate()
        client_keys = {ident: Ed25519PrivateKey.generate() for ident in params.client_identities}
        not_before = datetime.datetime.now(datetime.timezone.utc)
    else:
        ca_key = _derived_key(seed, "ca")
        server_key = _derived_key(seed, "server")
        client_keys = {ident: _derived_key(seed, f"client|{ident}") for ident in params.client_identities}
        not_before = SEEDED_EPOCH
    not_after = not_before + datetime.timedelta(days=params.ca_validity_days)

    try:
        ca_name = _name(f"{params.realm} range CA", params.realm)
        ca_cert = (
            x509.CertificateBuilder()
            .subject_name(ca_name)
            .issuer_name(ca_name)
            .public_key(ca_key.public_key())
            .serial_number(_serial(seed, "ca"))
            .not_valid_before(not_before)
            .not_valid_after(not_after)
            .add_extension(x509.BasicConstraints(ca=True, path_length=0), critical=True)
            .sign(ca_key, algorithm=None)
        )

        def issue(common_name: str, key: Ed25519PrivateKey, label: str) -> x509.Certificate:
            return (
                x509.CertificateBuilder()
                .subject_name(_name(common_name, params.realm))
                .issuer_name(ca_name)
                .public_key(key.public_key())
                .serial_number(_serial(seed, label))
                .not_valid_before(not_before)
                .not_valid_after(not_after)
                .add_extension(x509.BasicConstraints(ca=False, path_length=None), critical=True)
                .sign(ca_key, algorithm=None)
            )

        server_cert = issue(f"radius.{params.realm}", server_key, "server")
        clients = tuple(
            ClientCredential(
                identity=ident,
                certificate=issue(ident, client_keys[ident], f"client|{ident}").public_bytes(
                    serialization.Encoding.PEM
                ),
                key=_key_pem(client_keys[ident]),
            )
            for ident in params.client_identities
        )
    except Exception as exc:  # cryptography raises a zoo of types here
        raise CryptoFailure(f"certificate generation failed: {exc}") from exc

    return CredentialSet(
        ca_certificate=ca_cert.public_bytes(serialization.Encoding.PEM),
        server_certificate=server_cert.public_bytes(serialization.Encoding.PEM),
        server_key=_key_pem(server_key),
        client_credentials=clients,
    )


def verify_chain(ca_pem: bytes, cert_pem: bytes) -> bool:
    """True when the certificate is signed by the CA key."""
    ca = x509.load_pem_x509_certificate(ca_pem)
    cert = x509.load_pem_x509_certificate(cert_pem)
    public_key = ca.public_key()
    if not isinstance(public_key, Ed25519PublicKey):
        raise CryptoFailure("unexpected CA key type")
    try:
        public_key.verify(cert.signature, cert.tbs_certificate_bytes)
    except InvalidSignature:
        return False
    return cert.issuer == ca.subject
