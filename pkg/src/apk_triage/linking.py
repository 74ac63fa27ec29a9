"""Corpus index for the Link Analyst.

Known apps are indexed by signing certificate fingerprint, URL host and
package prefix. The index is built once and read-only afterwards.
"""

import enum
from collections import defaultdict
from collections.abc import Iterable
from dataclasses import dataclass
from typing import Optional

from .bundle import ApkFeatureBundle
from .models import FraudCategory

MIN_PREFIX_SEGMENTS = 2


class LinkType(str, enum.Enum):
    CERTIFICATE = "certificate"
    URL_HOST = "url_host"
    PACKAGE_PREFIX = "package_prefix"


@dataclass(frozen=True)
class IndexedApp:
    app_id: str
    label: FraudCategory
    apk_sha256: str
    certificate_sha256: Optional[str]
    url_hosts: tuple[str, ...]
    package_prefix: Optional[str]


@dataclass(frozen=True)
class Link:
    link_type: LinkType
    value: str
    app_id: str
    label: FraudCategory

    def describe(self) -> str:
        return f"{self.link_type.value}={self.value} -> {self.app_id} ({self.label.value})"


def package_prefix(package_name: str) -> Optional[str]:
    """Drop the last segment of a package name.

    Returns None when fewer than two segments would remain, so that
    ``com.app`` never links every ``com.*`` package.
    """
    segments = package_name.split(".")
    if len(segments) - 1 < MIN_PREFIX_SEGMENTS:
        return None
    return ".".join(segments[:-1])


def index_entry(app_id: str, label: FraudCategory, bundle: ApkFeatureBundle) -> IndexedApp:
    return IndexedApp(
        app_id=app_id,
        label=label,
        apk_sha256=bundle.fingerprints.sha256,
        certificate_sha256=None if bundle.certificate is None else bundle.certificate.sha256_fingerprint,
        url_hosts=tuple(bundle.url_hosts()),
        package_prefix=package_prefix(bundle.manifest.package_name),
    )


class CorpusIndex:
    """Labeled apps keyed by the artifacts they share."""

    def __init__(self, apps: Iterable[IndexedApp] = ()):
        self._apps: dict[str, IndexedApp] = {}
        self._keys: dict[LinkType, dict[str, list[str]]] = {t: defaultdict(list) for t in LinkType}
        for app in apps:
            self._apps[app.app_id] = app
            if app.certificate_sha256:
                self._keys[LinkType.CERTIFICATE][app.certificate_sha256].append(app.app_id)
            for host in app.url_hosts:
                self._keys[LinkType.URL_HOST][host].append(app.app_id)
            if app.package_prefix:
                self._keys[LinkType.PACKAGE_PREFIX][app.package_prefix].append(app.app_id)

    @classmethod
    def from_bundles(
        cls, labeled: Iterable[tuple[str, FraudCategory, ApkFeatureBundle]]
    ) -> "CorpusIndex":
        return cls(index_entry(app_id, label, bundle) for app_id, label, bundle in labeled)

    def __len__(self) -> int:
        return len(self._apps)

    def _lookup(self, link_type: LinkType, value: str, exclude_sha256: str) -> list[Link]:
        links = []
        for app_id in sorted(set(self._keys[link_type].get(value, ()))):
            app = self._apps[app_id]
            if app.apk_sha256 == exclude_sha256:
                continue
            links.append(Link(link_type=link_type, value=value, app_id=app_id, label=app.label))
        return links

    def links(self, bundle: ApkFeatureBundle) -> list[Link]:
        """Return every indexed app sharing an artifact with the bundle.

        The bundle's own file, if indexed, is never linked to itself.
        """
        own = bundle.fingerprints.sha256
        found: list[Link] = []
        if bundle.certificate is not None:
            found += self._lookup(LinkType.CERTIFICATE, bundle.certificate.sha256_fingerprint, own)
        for host in bundle.url_hosts():
            found += self._lookup(LinkType.URL_HOST, host, own)
        prefix = package_prefix(bundle.manifest.package_name)
        if prefix:
            found += self._lookup(LinkType.PACKAGE_PREFIX, prefix, own)
        return found

    def prefix_collisions(self, bundle: ApkFeatureBundle) -> list[str]:
        """Return ids of other indexed apps sharing the bundle's package prefix."""
        prefix = package_prefix(bundle.manifest.package_name)
        if not prefix:
            return []
        own = bundle.fingerprints.sha256
        return [link.app_id for link in self._lookup(LinkType.PACKAGE_PREFIX, prefix, own)]
