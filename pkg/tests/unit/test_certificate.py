"""Unit tests for signing certificate extraction."""

import zipfile
from datetime import datetime, timezone

import pytest
from cryptography.hazmat.primitives.serialization import Encoding

from apk_triage.archive import open_apk
from apk_triage.certificate import (
    load_first_certificate,
    parse_certificate,
    signature_entry,
)
from apk_triage.errors import InvalidWindow, MalformedDer
from apk_triage.forge import build_certificate

START = datetime(2020, 1, 1, tzinfo=timezone.utc)
END = datetime(2045, 1, 1, tzinfo=timezone.utc)


def apk_with(tmp_path, entries):
    path = tmp_path / "signed.apk"
    with zipfile.ZipFile(path, "w") as zf:
        for name, data in entries:
            zf.writestr(name, data)
    return open_apk(path)


class TestParseCertificate:
    """Tests for parse_certificate."""

    def test_pkcs7_block(self, tmp_path):
        """Test identity and validity recovery from a PKCS#7 block."""
        blob = build_certificate("Bluefin Apps", "Bluefin Root CA", START, END, "Bluefin")
        container = apk_with(tmp_path, [("META-INF/CERT.RSA", blob)])

        info = parse_certificate(container)

        assert info is not None
        assert info.subject_dn == "CN=Bluefin Apps, O=Bluefin"
        assert info.issuer_dn == "CN=Bluefin Root CA, O=Bluefin"
        assert info.subject_cn == "Bluefin Apps"
        assert info.not_before == START
        assert info.not_after == END
        assert not info.self_signed
        assert len(info.sha256_fingerprint) == 64

    def test_self_signed(self, tmp_path):
        """Test that identical subject and issuer mark the certificate self-signed."""
        blob = build_certificate("Android Debug", "Android Debug", START, END)
        container = apk_with(tmp_path, [("META-INF/CERT.RSA", blob)])

        info = parse_certificate(container)

        assert info is not None
        assert info.self_signed
        assert info.subject_dn == "CN=Android Debug"

    def test_bare_der_certificate(self, tmp_path):
        """Test the fallback to a bare X.509 DER certificate."""
        blob = build_certificate("Solo", "Solo", START, END)
        der = load_first_certificate(blob).public_bytes(Encoding.DER)
        container = apk_with(tmp_path, [("META-INF/CERT.EC", der)])

        info = parse_certificate(container)

        assert info is not None
        assert info.subject_cn == "Solo"

    def test_unsigned_apk(self, tmp_path):
        """Test that an APK without signature block yields None."""
        container = apk_with(tmp_path, [("classes.dex", b"x")])

        assert parse_certificate(container) is None

    def test_garbage_block(self, tmp_path):
        """Test that an unparseable block raises MalformedDer."""
        container = apk_with(tmp_path, [("META-INF/CERT.RSA", b"\x30\x03\x02\x01")])

        with pytest.raises(MalformedDer):
            parse_certificate(container)

    def test_deterministic_bytes(self):
        """Test that identical inputs give identical signature blocks."""
        first = build_certificate("A", "B", START, END, "Org")
        second = build_certificate("A", "B", START, END, "Org")

        assert first == second


class TestSignatureEntry:
    """Tests for signature_entry."""

    def test_first_in_name_order(self, tmp_path):
        """Test that the first matching entry in name order is chosen."""
        container = apk_with(
            tmp_path,
            [("META-INF/ZED.RSA", b"1"), ("META-INF/ALPHA.DSA", b"2"), ("META-INF/MANIFEST.MF", b"3")],
        )

        assert signature_entry(container) == "META-INF/ALPHA.DSA"

    def test_nested_paths_ignored(self, tmp_path):
        """Test that blocks outside META-INF/ are not signature entries."""
        container = apk_with(tmp_path, [("assets/META-INF/CERT.RSA", b"1")])

        assert signature_entry(container) is None


class TestBuildCertificate:
    """Tests for build_certificate."""

    def test_inverted_window(self):
        """Test that a window ending before it starts is rejected."""
        with pytest.raises(InvalidWindow):
            build_certificate("A", "A", END, START)
