"""DEX string-pool extraction.

Only the header, the string_ids table and the string_data items it points to
are read. Bytecode, type and method tables are never interpreted.
"""

import logging
import re
import struct
from dataclasses import dataclass

from .archive import ApkContainer
from .errors import BadDexMagic, BadUleb128, TruncatedDex

logger = logging.getLogger(__name__)

DEX_MAGIC_PREFIX = b"dex\n"
DEX_VERSIONS = (b"035\x00", b"036\x00", b"037\x00", b"038\x00", b"039\x00")
HEADER_SIZE = 0x70
STRING_IDS_SIZE_OFFSET = 0x38
STRING_IDS_OFF_OFFSET = 0x3C
MAX_ULEB128_BYTES = 5
REPLACEMENT_CHAR = "\ufffd"

_DEX_ENTRY = re.compile(r"^classes(\d*)\.dex$")
_CLASS_DESCRIPTOR = re.compile(r"^L[^;\[\s]+;$")


@dataclass(frozen=True)
class DexStringTable:
    """Strings of every DEX file in an APK, concatenated in load order."""

    strings: tuple[str, ...]
    class_names: tuple[str, ...]
    dex_count: int
    replaced_count: int = 0

    @classmethod
    def empty(cls) -> "DexStringTable":
        return cls(strings=(), class_names=(), dex_count=0, replaced_count=0)


def read_uleb128(data: bytes, offset: int) -> tuple[int, int]:
    """Decode one unsigned LEB128 value.

    Args:
        data: Buffer to read from
        offset: Offset of the first byte

    Returns:
        Tuple of (value, offset just past the value)

    Raises:
        BadUleb128: If the encoding is longer than five bytes
        TruncatedDex: If the buffer ends mid-value
    """
    result = 0
    for i in range(MAX_ULEB128_BYTES):
        if offset + i >= len(data):
            raise TruncatedDex(f"ULEB128 at offset {offset} runs past end of file")
        byte = data[offset + i]
        result |= (byte & 0x7F) << (7 * i)
        if not byte & 0x80:
            return result, offset + i + 1
    raise BadUleb128(f"ULEB128 at offset {offset} is longer than {MAX_ULEB128_BYTES} bytes")


def decode_mutf8(payload: bytes) -> tuple[str, bool]:
    """Decode Modified UTF-8 as used by DEX string_data items.

    Surrogate pairs encoded as two 3-byte sequences are joined, ``C0 80`` is an
    embedded NUL. Malformed sequences and unpaired surrogates become U+FFFD.

    Args:
        payload: Encoded bytes without the trailing NUL terminator

    Returns:
        Tuple of (decoded text, whether any replacement happened)
    """
    units: list[int] = []
    replaced = False
    i = 0
    n = len(payload)
    while i < n:
        b = payload[i]
        if b < 0x80:
            units.append(b)
            i += 1
        elif b & 0xE0 == 0xC0 and i + 1 < n and payload[i + 1] & 0xC0 == 0x80:
            units.append(((b & 0x1F) << 6) | (payload[i + 1] & 0x3F))
            i += 2
        elif (
            b & 0xF0 == 0xE0
            and i + 2 < n
            and payload[i + 1] & 0xC0 == 0x80
            and payload[i + 2] & 0xC0 == 0x80
        ):
            units.append(((b & 0x0F) << 12) | ((payload[i + 1] & 0x3F) << 6) | (payload[i + 2] & 0x3F))
            i += 3
        else:
            units.append(-1)
            i += 1

    chars = []
    j = 0
    while j < len(units):
        unit = units[j]
        if unit < 0:
            chars.append(REPLACEMENT_CHAR)
            replaced = True
        elif 0xD800 <= unit <= 0xDBFF and j + 1 < len(units) and 0xDC00 <= units[j + 1] <= 0xDFFF:
            chars.append(chr(0x10000 + ((unit - 0xD800) << 10) + (units[j + 1] - 0xDC00)))
            j += 1
        elif 0xD800 <= unit <= 0xDFFF:
            chars.append(REPLACEMENT_CHAR)
            replaced = True
        else:
            chars.append(chr(unit))
        j += 1
    return "".join(chars), replaced


def parse_dex_strings(data: bytes) -> tuple[list[str], int]:
    """Read every string of one DEX file in string_ids order.

    Args:
        data: Raw DEX file bytes

    Returns:
        Tuple of (strings, number of strings that needed replacement characters)

    Raises:
        BadDexMagic: If the header magic is not dex\\n035..039
        TruncatedDex: If the header or any string lies past the end of the data
        BadUleb128: If a string length prefix is overlong
    """
    if len(data) < 8 or data[:4] != DEX_MAGIC_PREFIX or data[4:8] not in DEX_VERSIONS:
        raise BadDexMagic(f"bad DEX magic {data[:8]!r}")
    if len(data) < HEADER_SIZE:
        raise TruncatedDex(f"DEX header needs {HEADER_SIZE} bytes, file has {len(data)}")

    (ids_size,) = struct.unpack_from("<I", data, STRING_IDS_SIZE_OFFSET)
    (ids_off,) = struct.unpack_from("<I", data, STRING_IDS_OFF_OFFSET)
    if ids_size == 0:
        return [], 0
    if ids_off + 4 * ids_size > len(data):
        raise TruncatedDex(f"string_ids table ({ids_size} entries at {ids_off}) overruns file")

    strings = []
    replaced_count = 0
    for (data_off,) in struct.iter_unpack("<I", data[ids_off : ids_off + 4 * ids_size]):
        _utf16_size, start = read_uleb128(data, data_off)
        end = data.find(b"\x00", start)
        if end < 0:
            raise TruncatedDex(f"string_data at {data_off} has no terminator")
        text, replaced = decode_mutf8(data[start:end])
        if replaced:
            replaced_count += 1
        strings.append(text)
    return strings, replaced_count


def _dex_order(name: str) -> tuple[int, str]:
    match = _DEX_ENTRY.match(name)
    assert match is not None
    suffix = match.group(1)
    return (int(suffix) if suffix else 1, name)


def descriptor_to_class_name(descriptor: str) -> str:
    """Convert ``Lcom/ex/Main;`` to ``com.ex.Main``."""
    return descriptor[1:-1].replace("/", ".")


def extract_dex_strings(container: ApkContainer) -> DexStringTable:
    """Merge the string pools of every classes*.dex entry.

    DEX files load in Android order: classes.dex, classes2.dex, classes3.dex...

    Args:
        container: An opened APK

    Returns:
        The merged string table (empty when the APK has no DEX file)

    Raises:
        BadDexMagic, TruncatedDex, BadUleb128: On a malformed DEX file
    """
    dex_names = sorted((n for n in container.names() if _DEX_ENTRY.match(n)), key=_dex_order)
    if not dex_names:
        return DexStringTable.empty()

    strings: list[str] = []
    replaced_total = 0
    for name in dex_names:
        file_strings, replaced = parse_dex_strings(container.read(name))
        logger.debug("dex=%s strings=%d replaced=%d", name, len(file_strings), replaced)
        strings.extend(file_strings)
        replaced_total += replaced

    if replaced_total:
        logger.warning("replaced undecodable MUTF-8 in %d DEX strings", replaced_total)

    class_names = dict.fromkeys(
        descriptor_to_class_name(s) for s in strings if _CLASS_DESCRIPTOR.match(s)
    )
    return DexStringTable(
        strings=tuple(strings),
        class_names=tuple(class_names),
        dex_count=len(dex_names),
        replaced_count=replaced_total,
    )
