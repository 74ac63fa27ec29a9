"""Unit tests for DEX string-pool extraction."""

import random
import struct
import zipfile

import pytest

from apk_triage.archive import open_apk
from apk_triage.dex import (
    REPLACEMENT_CHAR,
    decode_mutf8,
    descriptor_to_class_name,
    extract_dex_strings,
    parse_dex_strings,
    read_uleb128,
)
from apk_triage.errors import BadDexMagic, BadUleb128, DexError, TruncatedDex
from apk_triage.forge import build_dex, encode_mutf8

FUZZ_CASES = 10_000


class TestReadUleb128:
    """Tests for read_uleb128."""

    def test_single_byte(self):
        """Test a one-byte value."""
        assert read_uleb128(b"\x05", 0) == (5, 1)

    def test_multi_byte(self):
        """Test the documented example 0x80 0x7f = 16256."""
        assert read_uleb128(b"\x80\x7f", 0) == (16256, 2)

    def test_offset(self):
        """Test reading from the middle of a buffer."""
        assert read_uleb128(b"\x00\xe5\x8e\x26", 1) == (624485, 4)

    def test_overlong(self):
        """Test that more than five bytes are rejected."""
        with pytest.raises(BadUleb128):
            read_uleb128(b"\x80\x80\x80\x80\x80\x01", 0)

    def test_truncated(self):
        """Test a value cut off by the end of the buffer."""
        with pytest.raises(TruncatedDex):
            read_uleb128(b"\x80\x80", 0)


class TestDecodeMutf8:
    """Tests for decode_mutf8."""

    def test_ascii(self):
        """Test plain ASCII."""
        assert decode_mutf8(b"casino") == ("casino", False)

    def test_embedded_nul(self):
        """Test that C0 80 decodes to NUL."""
        assert decode_mutf8(b"a\xc0\x80b") == ("a\x00b", False)

    def test_supplementary_character(self):
        """Test that a surrogate pair of 3-byte sequences joins into one character."""
        text = "slots \U0001f3b0"

        assert decode_mutf8(encode_mutf8(text)) == (text, False)

    def test_bmp_characters(self):
        """Test two- and three-byte sequences."""
        text = "Ñandú 日本"

        assert decode_mutf8(encode_mutf8(text)) == (text, False)

    def test_malformed_byte_replaced(self):
        """Test that a stray continuation byte becomes U+FFFD."""
        text, replaced = decode_mutf8(b"a\x80b")

        assert text == f"a{REPLACEMENT_CHAR}b"
        assert replaced

    def test_unpaired_surrogate_replaced(self):
        """Test that a lone high surrogate becomes U+FFFD."""
        text, replaced = decode_mutf8(b"\xed\xa0\x80x")

        assert text == f"{REPLACEMENT_CHAR}x"
        assert replaced


class TestParseDexStrings:
    """Tests for parse_dex_strings."""

    def test_round_trip(self):
        """Test that built strings come back in order."""
        strings = ["Lcom/ex/Main;", "https://api.example.com/v1", "", "\x00nul", "日本"]

        assert parse_dex_strings(build_dex(strings)) == (strings, 0)

    def test_empty_pool(self):
        """Test a DEX file without strings."""
        assert parse_dex_strings(build_dex([])) == ([], 0)

    def test_bad_magic(self):
        """Test that a non-DEX buffer is rejected."""
        with pytest.raises(BadDexMagic):
            parse_dex_strings(b"PK\x03\x04" + bytes(200))

    def test_unknown_version(self):
        """Test that an unsupported version is rejected."""
        data = bytearray(build_dex(["a"]))
        data[4:8] = b"099\x00"

        with pytest.raises(BadDexMagic):
            parse_dex_strings(bytes(data))

    def test_truncated_header(self):
        """Test a file shorter than the header."""
        with pytest.raises(TruncatedDex):
            parse_dex_strings(build_dex(["a"])[:0x40])

    def test_string_ids_overrun(self):
        """Test a string_ids table that points past the end."""
        data = bytearray(build_dex(["a", "b"]))
        struct.pack_into("<I", data, 0x38, 1000)

        with pytest.raises(TruncatedDex):
            parse_dex_strings(bytes(data))

    def test_missing_terminator(self):
        """Test string data without its NUL."""
        data = build_dex(["abc"])

        with pytest.raises(TruncatedDex):
            parse_dex_strings(data[:-1])

    def test_replacement_is_counted(self):
        """Test that undecodable strings are counted."""
        data = bytearray(build_dex(["ok", "zz"]))
        data[data.rfind(b"zz")] = 0x80

        strings, replaced = parse_dex_strings(bytes(data))

        assert strings[1] == f"{REPLACEMENT_CHAR}z"
        assert replaced == 1


class TestParseDexStringsFuzz:
    """Robustness of parse_dex_strings against hostile input."""

    def test_fuzzed_inputs_raise_only_domain_errors(self):
        """Test that mutated and random buffers never crash the parser."""
        rng = random.Random(31337)
        seed = build_dex(["Lcom/ex/Main;", "casino", "https://bet.example/x", "\x00", "日本"])
        parsed = 0
        for case in range(FUZZ_CASES):
            if case % 2:
                data = bytearray(seed)
                for _ in range(rng.randint(1, 8)):
                    data[rng.randrange(len(data))] = rng.randrange(256)
                if rng.random() < 0.3:
                    data = data[: rng.randrange(len(data))]
            else:
                data = bytearray(rng.getrandbits(8) for _ in range(rng.randint(0, 160)))
                if rng.random() < 0.5 and len(data) >= 8:
                    data[:8] = b"dex\n035\x00"
            try:
                strings, replaced = parse_dex_strings(bytes(data))
                assert 0 <= replaced <= len(strings)
                parsed += 1
            except DexError:
                pass

        assert parsed > 0


class TestDescriptorToClassName:
    """Tests for descriptor_to_class_name."""

    def test_dotted_form(self):
        """Test conversion of a class descriptor."""
        assert descriptor_to_class_name("Lcom/ex/Main;") == "com.ex.Main"


class TestExtractDexStrings:
    """Tests for extract_dex_strings."""

    def test_multidex_load_order(self, tmp_path):
        """Test that classes.dex, classes2.dex, classes10.dex load in Android order."""
        path = tmp_path / "multi.apk"
        with zipfile.ZipFile(path, "w") as zf:
            zf.writestr("classes10.dex", build_dex(["ten"]))
            zf.writestr("classes2.dex", build_dex(["two", "Lcom/ex/Two;"]))
            zf.writestr("classes.dex", build_dex(["one", "Lcom/ex/One;"]))

        table = extract_dex_strings(open_apk(path))

        assert table.strings == ("one", "Lcom/ex/One;", "two", "Lcom/ex/Two;", "ten")
        assert table.class_names == ("com.ex.One", "com.ex.Two")
        assert table.dex_count == 3

    def test_numeric_suffix_order_past_ten(self, tmp_path):
        """Test that eleven DEX entries load as classes, classes2 .. classes11."""
        path = tmp_path / "eleven.apk"
        names = ["classes.dex"] + [f"classes{i}.dex" for i in range(2, 12)]
        with zipfile.ZipFile(path, "w") as zf:
            for name in sorted(names, reverse=True):
                zf.writestr(name, build_dex([name]))

        table = extract_dex_strings(open_apk(path))

        assert table.strings == tuple(names)
        assert table.dex_count == 11

    def test_no_dex(self, tmp_path):
        """Test an APK without DEX files."""
        path = tmp_path / "nodex.apk"
        with zipfile.ZipFile(path, "w") as zf:
            zf.writestr("AndroidManifest.xml", b"x")

        table = extract_dex_strings(open_apk(path))

        assert table.strings == ()
        assert table.dex_count == 0
