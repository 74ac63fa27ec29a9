"""Feature bundle assembly: one immutable record per APK."""

import logging
import re
from dataclasses import dataclass, field
from typing import Any, Optional

from .archive import open_apk
from .axml import ManifestInfo, decode_manifest
from .certificate import CertificateInfo, parse_certificate
from .dex import DexStringTable, extract_dex_strings
from .errors import AxmlError, BundleError, IconDecodeError, MalformedDer
from .icon import IconAsset, extract_icon
from .utils import MANIFEST_ENTRY, PathLike, canonical_json, file_digests

logger = logging.getLogger(__name__)

# Scheme followed by the RFC 3986 unreserved, reserved and percent characters
URL_PATTERN = re.compile(r"https?://[A-Za-z0-9\-._~:/?#\[\]@!$&'()*+,;=%]+", re.IGNORECASE)


@dataclass(frozen=True)
class Fingerprints:
    md5: str
    sha1: str
    sha256: str

    def to_dict(self) -> dict[str, str]:
        return {"md5": self.md5, "sha1": self.sha1, "sha256": self.sha256}


def compute_fingerprints(path: PathLike) -> Fingerprints:
    """Hash the whole APK file."""
    md5, sha1, sha256 = file_digests(path)
    return Fingerprints(md5=md5, sha1=sha1, sha256=sha256)


@dataclass(frozen=True)
class ApkFeatureBundle:
    """All static features of one APK.

    ``notes`` records extractor failures that were downgraded to absence,
    such as a malformed signature block.
    """

    manifest: ManifestInfo
    certificate: Optional[CertificateInfo]
    icon: Optional[IconAsset]
    dex_strings: DexStringTable
    urls: tuple[str, ...]
    fingerprints: Fingerprints
    notes: tuple[str, ...] = field(default=())

    def url_hosts(self) -> list[str]:
        """Return the distinct hosts of the harvested URLs, sorted."""
        return sorted({url_host(url) for url in self.urls} - {""})

    def to_dict(self) -> dict[str, Any]:
        return {
            "manifest": self.manifest.to_dict(),
            "certificate": None if self.certificate is None else self.certificate.to_dict(),
            "icon": None if self.icon is None else self.icon.to_dict(),
            "dex_strings": {
                "strings": list(self.dex_strings.strings),
                "class_names": list(self.dex_strings.class_names),
                "dex_count": self.dex_strings.dex_count,
                "replaced_count": self.dex_strings.replaced_count,
            },
            "urls": list(self.urls),
            "fingerprints": self.fingerprints.to_dict(),
            "notes": list(self.notes),
        }


def bundle_to_json(bundle: ApkFeatureBundle) -> str:
    """Serialize a bundle to canonical JSON."""
    return canonical_json(bundle.to_dict())


def _split_url(url: str) -> tuple[str, str, str]:
    scheme, _, rest = url.partition("://")
    cut = len(rest)
    for stop in "/?#":
        position = rest.find(stop)
        if position != -1:
            cut = min(cut, position)
    return scheme, rest[:cut], rest[cut:]


def url_host(url: str) -> str:
    """Return the lowercased host of a harvested URL (no userinfo, no port)."""
    _, authority, _ = _split_url(url)
    host = authority.rpartition("@")[2]
    if host.startswith("["):
        return host.partition("]")[0].lstrip("[").lower()
    return host.partition(":")[0].lower()


def normalize_url(url: str) -> str:
    """Lowercase the scheme and host of a URL, leaving userinfo and path untouched."""
    scheme, authority, tail = _split_url(url)
    userinfo, at, host = authority.rpartition("@")
    return f"{scheme.lower()}://{userinfo}{at}{host.lower()}{tail}"


def harvest_urls(dex_strings: DexStringTable, manifest: ManifestInfo) -> list[str]:
    """Collect every http/https URL from DEX strings and manifest text fields.

    Args:
        dex_strings: Merged DEX string table
        manifest: Decoded manifest

    Returns:
        Sorted, de-duplicated URLs with lowercased host
    """
    sources = list(dex_strings.strings)
    sources.extend(
        [manifest.package_name, manifest.version_name, manifest.app_label]
        + list(manifest.activities)
        + list(manifest.services)
    )
    urls = set()
    for text in sources:
        for match in URL_PATTERN.finditer(text):
            urls.add(normalize_url(match.group(0)))
    return sorted(urls)


def build_feature_bundle(path: PathLike) -> ApkFeatureBundle:
    """Extract every static feature of an APK.

    A missing or malformed certificate or icon is recorded as absence; a
    manifest that cannot be decoded is fatal.

    Args:
        path: Path to the APK

    Returns:
        The immutable feature bundle

    Raises:
        NotAZip, EmptyArchive, ArchiveIoError: If the archive cannot be opened
        BundleError: If the manifest is missing or cannot be decoded
        DexError: If a DEX file is malformed
    """
    container = open_apk(path)

    if not container.has(MANIFEST_ENTRY):
        raise BundleError(f"{container.source_path} has no {MANIFEST_ENTRY}")
    try:
        manifest = decode_manifest(container.read(MANIFEST_ENTRY))
    except AxmlError as e:
        raise BundleError(f"cannot decode {MANIFEST_ENTRY} of {container.source_path}") from e

    notes = []
    certificate: Optional[CertificateInfo] = None
    try:
        certificate = parse_certificate(container)
    except MalformedDer as e:
        logger.warning("apk=%s certificate recorded as absent: %s", container.source_path, e)
        notes.append(f"certificate: {e}")

    icon: Optional[IconAsset] = None
    try:
        icon = extract_icon(container, manifest)
    except IconDecodeError as e:
        logger.warning("apk=%s icon recorded as absent: %s", container.source_path, e)
        notes.append(f"icon: {e}")

    dex_strings = extract_dex_strings(container)
    urls = harvest_urls(dex_strings, manifest)

    bundle = ApkFeatureBundle(
        manifest=manifest,
        certificate=certificate,
        icon=icon,
        dex_strings=dex_strings,
        urls=tuple(urls),
        fingerprints=compute_fingerprints(container.source_path),
        notes=tuple(notes),
    )
    logger.info(
        "apk=%s package=%s permissions=%d strings=%d urls=%d certificate=%s icon=%s",
        container.source_path.name,
        manifest.package_name,
        len(manifest.permissions),
        len(dex_strings.strings),
        len(urls),
        certificate is not None,
        icon is not None,
    )
    return bundle
