"""Test certificate authorities and per-host leaf certificates.

The gateway terminates TLS with leaves minted on demand. Two authorities
exist side by side: the trusted one is distributed to well-behaved test
subjects, the untrusted one is not, so accepting its leaves marks broken
certificate validation. EC keys keep minting cheap enough to do per run.
"""

from __future__ import annotations

import datetime
import ipaddress
import ssl
import threading
from pathlib import Path

from cryptography import x509
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.x509.oid import NameOID

_ONE_DAY = datetime.timedelta(days=1)


def _name(common_name: str) -> x509.Name:
    return x509.Name([
        x509.NameAttribute(NameOID.ORGANIZATION_NAME, "Gauntlet Testbed"),
        x509.NameAttribute(NameOID.COMMON_NAME, common_name),
    ])


def _key_pem(key) -> bytes:
    return key.private_bytes(
        serialization.Encoding.PEM,
        serialization.PrivateFormat.PKCS8,
        serialization.NoEncryption(),
    )


class CertAuthority:
    """One self-signed CA plus a cache of host leaves it has signed."""

    def __init__(self, name: str, root_dir: str | Path) -> None:
        self.name = name
        self.root = Path(root_dir)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._contexts: dict[str, ssl.SSLContext] = {}
        ca_cert_path = self.root / "ca.pem"
        ca_key_path = self.root / "ca.key"
        if ca_cert_path.exists() and ca_key_path.exists():
            self.ca_cert = x509.load_pem_x509_certificate(ca_cert_path.read_bytes())
            self.ca_key = serialization.load_pem_private_key(
                ca_key_path.read_bytes(), password=None
            )
        else:
            self.ca_key = ec.generate_private_key(ec.SECP256R1())
            now = datetime.datetime.now(datetime.timezone.utc)
            self.ca_cert = (
                x509.CertificateBuilder()
                .subject_name(_name(name))
                .issuer_name(_name(name))
                .public_key(self.ca_key.public_key())
                .serial_number(x509.random_serial_number())
                .not_valid_before(now - _ONE_DAY)
                .not_valid_after(now + 365 * _ONE_DAY)
                .add_extension(x509.BasicConstraints(ca=True, path_length=0), critical=True)
                .add_extension(
                    x509.KeyUsage(
                        digital_signature=True, key_cert_sign=True, crl_sign=True,
                        content_commitment=False, key_encipherment=False,
                        data_encipherment=False, key_agreement=False,
                        encipher_only=False, decipher_only=False,
                    ),
                    critical=True,
                )
                .sign(self.ca_key, hashes.SHA256())
            )
            ca_cert_path.write_bytes(self.ca_cert.public_bytes(serialization.Encoding.PEM))
            ca_key_path.write_bytes(_key_pem(self.ca_key))
        # One shared leaf key: per-host key generation buys nothing in a testbed.
        leaf_key_path = self.root / "leaf.key"
        if leaf_key_path.exists():
            self._leaf_key = serialization.load_pem_private_key(
                leaf_key_path.read_bytes(), password=None
            )
        else:
            self._leaf_key = ec.generate_private_key(ec.SECP256R1())
            leaf_key_path.write_bytes(_key_pem(self._leaf_key))

    @property
    def ca_cert_path(self) -> Path:
        return self.root / "ca.pem"

    def mint_leaf(self, host: str) -> Path:
        """PEM file holding a cert for ``host`` plus its key, cached on disk."""
        safe = host.replace(":", "_")
        leaf_path = self.root / "leaves" / f"{safe}.pem"
        if leaf_path.exists():
            return leaf_path
        try:
            san: x509.GeneralName = x509.IPAddress(ipaddress.ip_address(host))
        except ValueError:
            san = x509.DNSName(host)
        now = datetime.datetime.now(datetime.timezone.utc)
        cert = (
            x509.CertificateBuilder()
            .subject_name(_name(host))
            .issuer_name(self.ca_cert.subject)
            .public_key(self._leaf_key.public_key())
            .serial_number(x509.random_serial_number())
            .not_valid_before(now - _ONE_DAY)
            .not_valid_after(now + 90 * _ONE_DAY)
            .add_extension(x509.BasicConstraints(ca=False, path_length=None), critical=True)
            .add_extension(x509.SubjectAlternativeName([san]), critical=False)
            .sign(self.ca_key, hashes.SHA256())
        )
        leaf_path.parent.mkdir(parents=True, exist_ok=True)
        tmp = leaf_path.with_suffix(".tmp")
        tmp.write_bytes(
            cert.public_bytes(serialization.Encoding.PEM) + _key_pem(self._leaf_key)
        )
        tmp.replace(leaf_path)
        return leaf_path

    def server_context(self, host: str) -> ssl.SSLContext:
        with self._lock:
            ctx = self._contexts.get(host)
            if ctx is None:
                leaf = self.mint_leaf(host)
                ctx = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
                ctx.load_cert_chain(str(leaf))
                self._contexts[host] = ctx
            return ctx


def client_context(trusted_ca_paths: list[Path]) -> ssl.SSLContext:
    """Client-side context that trusts exactly the given CA files."""
    ctx = ssl.SSLContext(ssl.PROTOCOL_TLS_CLIENT)
    ctx.check_hostname = True
    ctx.verify_mode = ssl.CERT_REQUIRED
    for path in trusted_ca_paths:
        ctx.load_verify_locations(str(path))
    return ctx
