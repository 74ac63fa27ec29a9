"""v1 (JAR) signing certificate extraction.

The first ``META-INF/*.RSA``, ``*.DSA`` or ``*.EC`` entry in name order is
decoded as a PKCS#7 SignedData blob, falling back to a bare DER certificate.
Signatures and chains are not verified.
"""

import logging
import re
from dataclasses import dataclass
from datetime import datetime
from typing import Optional

from cryptography import x509
from cryptography.exceptions import UnsupportedAlgorithm
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.serialization import Encoding, pkcs7
from cryptography.x509.oid import NameOID

from .archive import ApkContainer
from .errors import MalformedDer

logger = logging.getLogger(__name__)

_SIGNATURE_ENTRY = re.compile(r"^META-INF/[^/]+\.(RSA|DSA|EC)$", re.IGNORECASE)

# DN components reported, in this order
_DN_COMPONENTS = (
    ("CN", NameOID.COMMON_NAME),
    ("O", NameOID.ORGANIZATION_NAME),
    ("OU", NameOID.ORGANIZATIONAL_UNIT_NAME),
)


@dataclass(frozen=True)
class CertificateInfo:
    """Identity and validity facts of the signing certificate."""

    subject_dn: str
    issuer_dn: str
    serial_hex: str
    not_before: datetime
    not_after: datetime
    sha256_fingerprint: str
    self_signed: bool
    subject_cn: str = ""

    def to_dict(self) -> dict:
        return {
            "subject_dn": self.subject_dn,
            "issuer_dn": self.issuer_dn,
            "subject_cn": self.subject_cn,
            "serial_hex": self.serial_hex,
            "not_before": self.not_before.isoformat(),
            "not_after": self.not_after.isoformat(),
            "sha256_fingerprint": self.sha256_fingerprint,
            "self_signed": self.self_signed,
        }


def format_dn(name: x509.Name) -> str:
    """Render the CN, O and OU components of a name as ``CN=..., O=..., OU=...``."""
    parts = []
    for label, oid in _DN_COMPONENTS:
        for attribute in name.get_attributes_for_oid(oid):
            parts.append(f"{label}={attribute.value}")
    return ", ".join(parts)


def _common_name(name: x509.Name) -> str:
    attributes = name.get_attributes_for_oid(NameOID.COMMON_NAME)
    return str(attributes[0].value) if attributes else ""


def load_first_certificate(blob: bytes) -> x509.Certificate:
    """Return the first X.509 certificate in a PKCS#7 blob or bare DER certificate.

    Raises:
        MalformedDer: If neither structure parses or the container holds no certificate
    """
    try:
        certificates = pkcs7.load_der_pkcs7_certificates(blob)
    except (ValueError, UnsupportedAlgorithm) as pkcs7_error:
        try:
            return x509.load_der_x509_certificate(blob)
        except (ValueError, UnsupportedAlgorithm):
            raise MalformedDer(f"not a PKCS#7 or X.509 DER structure: {pkcs7_error}") from pkcs7_error
    if not certificates:
        raise MalformedDer("PKCS#7 container holds no certificate")
    return certificates[0]


def certificate_info(certificate: x509.Certificate) -> CertificateInfo:
    """Extract identity and validity facts from a decoded certificate.

    Raises:
        MalformedDer: If the validity window ends before it starts
    """
    not_before = certificate.not_valid_before_utc
    not_after = certificate.not_valid_after_utc
    if not_before > not_after:
        raise MalformedDer(f"validity window ends ({not_after}) before it starts ({not_before})")

    subject_dn = format_dn(certificate.subject)
    issuer_dn = format_dn(certificate.issuer)
    return CertificateInfo(
        subject_dn=subject_dn,
        issuer_dn=issuer_dn,
        serial_hex=format(certificate.serial_number, "x"),
        not_before=not_before,
        not_after=not_after,
        sha256_fingerprint=certificate.fingerprint(hashes.SHA256()).hex(),
        self_signed=subject_dn == issuer_dn,
        subject_cn=_common_name(certificate.subject),
    )


def signature_entry(container: ApkContainer) -> Optional[str]:
    """Return the first v1 signature block entry name, or None."""
    candidates = sorted(name for name in container.names() if _SIGNATURE_ENTRY.match(name))
    return candidates[0] if candidates else None


def parse_certificate(container: ApkContainer) -> Optional[CertificateInfo]:
    """Decode the v1 signing certificate of an APK.

    Args:
        container: An opened APK

    Returns:
        Certificate facts, or None when the APK carries no v1 signature block

    Raises:
        MalformedDer: If a signature block exists but holds no parseable certificate
    """
    entry = signature_entry(container)
    if entry is None:
        logger.debug("apk=%s has no META-INF signature block", container.source_path)
        return None

    certificate = load_first_certificate(container.read(entry))
    info = certificate_info(certificate)
    logger.debug(
        "certificate entry=%s subject=%r der=%d bytes",
        entry,
        info.subject_dn,
        len(certificate.public_bytes(Encoding.DER)),
    )
    return info
