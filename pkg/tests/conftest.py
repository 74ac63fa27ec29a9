"""Pytest configuration and fixtures for APK Triage tests."""

import random
from datetime import datetime, timezone
from typing import Optional

import pytest

from apk_triage.axml import ManifestInfo
from apk_triage.bundle import ApkFeatureBundle, Fingerprints
from apk_triage.certificate import CertificateInfo
from apk_triage.dex import DexStringTable
from apk_triage.forge import (
    CertificateSpec,
    ForgeSpec,
    IconSpec,
    assemble_apk,
    generate_corpus,
    planted_spec,
)
from apk_triage.icon import IconAsset, IconFormat
from apk_triage.models import FraudCategory
from apk_triage.tables import load_lexicon, load_reference_icons

FIXED_NOW = datetime(2026, 1, 1, tzinfo=timezone.utc)

# 32 bits away from every bundled reference icon
FAR_PATTERN = 0xF0F0F0F0F0F0F0F0


def pytest_configure(config):
    """Configure pytest markers."""
    config.addinivalue_line(
        "markers",
        "integration: marks tests as integration tests (forge, extract and evaluate whole corpora)",
    )


@pytest.fixture
def fixed_now():
    """Clock pinned inside every forged certificate's validity window."""
    return FIXED_NOW


@pytest.fixture(scope="session")
def lexicon():
    """The bundled risk lexicon."""
    return load_lexicon()


@pytest.fixture(scope="session")
def reference_icons():
    """The bundled reference icon set."""
    return load_reference_icons()


@pytest.fixture
def golden_spec():
    """A fully specified legitimate app, used by the golden files.

    Returns:
        ForgeSpec with every optional part present
    """
    return ForgeSpec(
        package_name="com.bluefin.notes",
        app_label="Bluefin Notes",
        permissions=("android.permission.INTERNET", "android.permission.CAMERA"),
        dex_strings=(
            "Sync complete",
            "https://API.Bluefin.com/v1/notes",
            "Lcom/bluefin/notes/MainActivity;",
            "Ljava/lang/String;",
        ),
        icon=IconSpec(pattern=FAR_PATTERN),
        certificate=CertificateSpec(
            subject_cn="Bluefin Apps",
            issuer_cn="Bluefin Root CA",
            not_before=datetime(2020, 1, 1, tzinfo=timezone.utc),
            not_after=datetime(2045, 1, 1, tzinfo=timezone.utc),
            organization="Bluefin",
        ),
        version_code=3,
        version_name="2.1.0",
        activities=(".MainActivity",),
        services=(".SyncService",),
    )


@pytest.fixture
def forge_apk(tmp_path):
    """Factory writing a spec to an APK under tmp_path.

    Returns:
        Function taking (spec, name) and returning the APK path
    """

    def build(spec: ForgeSpec, name: str = "app.apk"):
        return assemble_apk(spec, tmp_path / name)

    return build


@pytest.fixture
def planted(lexicon, reference_icons):
    """Factory for planted specs drawn from a seeded generator.

    Returns:
        Function taking (category, index, seed) and returning a ForgeSpec
    """

    def draw(category: FraudCategory, index: int = 0, seed: int = 7) -> ForgeSpec:
        return planted_spec(random.Random(seed), category, index, lexicon, reference_icons)

    return draw


@pytest.fixture
def make_bundle():
    """Factory for in-memory feature bundles, for agent and orchestrator tests.

    Returns:
        Function building an ApkFeatureBundle from keyword arguments
    """

    def build(
        package_name: str = "com.example.app",
        app_label: str = "Example",
        permissions: tuple[str, ...] = (),
        strings: tuple[str, ...] = (),
        urls: tuple[str, ...] = (),
        certificate: Optional[CertificateInfo] = None,
        icon_hash: Optional[int] = None,
        sha256: str = "0" * 64,
    ) -> ApkFeatureBundle:
        manifest = ManifestInfo(
            package_name=package_name,
            version_code=1,
            version_name="1.0",
            app_label=app_label,
            permissions=tuple(sorted(permissions)),
            activities=(f"{package_name}.MainActivity",),
            services=(),
            icon_ref=None if icon_hash is None else "@0x7f0c0000",
        )
        icon = None
        if icon_hash is not None:
            icon = IconAsset(
                raw_bytes=b"\x89PNG",
                width=8,
                height=8,
                format=IconFormat.PNG,
                ahash64=icon_hash,
                entry_name="res/mipmap-mdpi/icon.png",
            )
        return ApkFeatureBundle(
            manifest=manifest,
            certificate=certificate,
            icon=icon,
            dex_strings=DexStringTable(
                strings=strings, class_names=(), dex_count=1 if strings else 0
            ),
            urls=urls,
            fingerprints=Fingerprints(md5="0" * 32, sha1="0" * 40, sha256=sha256),
        )

    return build


@pytest.fixture
def make_certificate():
    """Factory for CertificateInfo records.

    Returns:
        Function building a CertificateInfo from keyword arguments
    """

    def build(
        subject_cn: str = "Example Apps",
        issuer_cn: str = "Example Root CA",
        not_before: datetime = datetime(2020, 1, 1, tzinfo=timezone.utc),
        not_after: datetime = datetime(2045, 1, 1, tzinfo=timezone.utc),
        fingerprint: str = "ab" * 32,
    ) -> CertificateInfo:
        return CertificateInfo(
            subject_dn=f"CN={subject_cn}",
            issuer_dn=f"CN={issuer_cn}",
            serial_hex="1",
            not_before=not_before,
            not_after=not_after,
            sha256_fingerprint=fingerprint,
            self_signed=subject_cn == issuer_cn,
            subject_cn=subject_cn,
        )

    return build


@pytest.fixture(scope="session")
def forged_corpus(tmp_path_factory, lexicon, reference_icons):
    """The default 40-sample corpus, forged once per session with seed 7.

    Returns:
        Path to the corpus manifest
    """
    out_dir = tmp_path_factory.mktemp("corpus")
    return generate_corpus(
        out_dir, seed=7, lexicon=lexicon, reference_icons=reference_icons
    )


@pytest.fixture
def working_directory():
    """Context manager for temporary directory changes during tests.

    Yields:
        Function that changes to temp directory and restores original
    """
    import os

    original = os.getcwd()

    def change_to(path):
        os.chdir(path)
        return path

    yield change_to

    os.chdir(original)
