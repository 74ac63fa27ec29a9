"""Android binary XML (AXML) decoding for AndroidManifest.xml.

Supported chunks: XML document (0x0003), string pool (0x0001, UTF-8 and
UTF-16), resource map (0x0180), namespace start/end (0x0100/0x0101), element
start/end (0x0102/0x0103) and CDATA (0x0104, skipped). Any other chunk type
is skipped by its declared size.
"""

import json
import logging
import struct
from dataclasses import dataclass
from typing import Optional, Union

from .errors import BadChunkHeader, BadStringIndex, MissingManifestElement, TruncatedChunk

logger = logging.getLogger(__name__)

# Chunk types, see frameworks/base/libs/androidfw/include/androidfw/ResourceTypes.h
RES_STRING_POOL_TYPE = 0x0001
RES_XML_TYPE = 0x0003
RES_XML_START_NAMESPACE_TYPE = 0x0100
RES_XML_END_NAMESPACE_TYPE = 0x0101
RES_XML_START_ELEMENT_TYPE = 0x0102
RES_XML_END_ELEMENT_TYPE = 0x0103
RES_XML_CDATA_TYPE = 0x0104
RES_XML_RESOURCE_MAP_TYPE = 0x0180

# Res_value data types
TYPE_NULL = 0x00
TYPE_REFERENCE = 0x01
TYPE_STRING = 0x03
TYPE_INT_DEC = 0x10
TYPE_INT_HEX = 0x11
TYPE_INT_BOOLEAN = 0x12

UTF8_FLAG = 1 << 8
NO_INDEX = 0xFFFFFFFF

CHUNK_HEADER_SIZE = 8
STRING_POOL_HEADER_SIZE = 28
NODE_HEADER_SIZE = 16
ATTRIBUTE_SIZE = 20

ANDROID_NS = "http://schemas.android.com/apk/res/android"

# android.R.attr ids used when an obfuscator blanks attribute names in the pool
ATTRIBUTE_RESOURCE_NAMES = {
    0x01010001: "label",
    0x01010002: "icon",
    0x01010003: "name",
    0x0101021B: "versionCode",
    0x0101021C: "versionName",
}

AttributeValue = Union[str, int, bool]


@dataclass(frozen=True)
class AxmlAttribute:
    namespace: Optional[str]
    name: str
    value: AttributeValue
    value_type: int


@dataclass(frozen=True)
class AxmlElement:
    namespace: Optional[str]
    name: str
    attributes: tuple[AxmlAttribute, ...]
    depth: int

    def get(self, name: str) -> Optional[AttributeValue]:
        """Return an attribute value by local name, preferring the android namespace."""
        fallback: Optional[AttributeValue] = None
        for attr in self.attributes:
            if attr.name != name:
                continue
            if attr.namespace == ANDROID_NS:
                return attr.value
            if fallback is None:
                fallback = attr.value
        return fallback


@dataclass(frozen=True)
class AxmlDocument:
    namespaces: tuple[tuple[str, str], ...]
    elements: tuple[AxmlElement, ...]

    def find_all(self, name: str) -> list[AxmlElement]:
        return [element for element in self.elements if element.name == name]


@dataclass(frozen=True)
class ManifestInfo:
    """Metadata decoded from AndroidManifest.xml."""

    package_name: str
    version_code: int
    version_name: str
    app_label: str
    permissions: tuple[str, ...]
    activities: tuple[str, ...]
    services: tuple[str, ...]
    icon_ref: Optional[str]

    def to_dict(self) -> dict:
        return {
            "package_name": self.package_name,
            "version_code": self.version_code,
            "version_name": self.version_name,
            "app_label": self.app_label,
            "permissions": list(self.permissions),
            "activities": list(self.activities),
            "services": list(self.services),
            "icon_ref": self.icon_ref,
        }


def _unpack(fmt: str, data: bytes, offset: int) -> tuple:
    if offset < 0 or offset + struct.calcsize(fmt) > len(data):
        raise TruncatedChunk(f"read of {struct.calcsize(fmt)} bytes at offset {offset} overruns chunk")
    return struct.unpack_from(fmt, data, offset)


def _read_length(data: bytes, pos: int, wide: bool) -> tuple[int, int]:
    """Read a string-pool length prefix (u8/u16 with a high-bit extension)."""
    if wide:
        (first,) = _unpack("<H", data, pos)
        if first & 0x8000:
            (second,) = _unpack("<H", data, pos + 2)
            return ((first & 0x7FFF) << 16) | second, pos + 4
        return first, pos + 2
    (first,) = _unpack("<B", data, pos)
    if first & 0x80:
        (second,) = _unpack("<B", data, pos + 1)
        return ((first & 0x7F) << 8) | second, pos + 2
    return first, pos + 1


def _decode_pool_string(chunk: bytes, pos: int, utf8: bool) -> str:
    if utf8:
        _, pos = _read_length(chunk, pos, wide=False)  # UTF-16 length, unused
        byte_length, pos = _read_length(chunk, pos, wide=False)
        end = pos + byte_length
        if end > len(chunk):
            raise TruncatedChunk(f"UTF-8 string at {pos} overruns the string pool")
        return chunk[pos:end].decode("utf-8", errors="replace")

    char_length, pos = _read_length(chunk, pos, wide=True)
    end = pos + 2 * char_length
    if end > len(chunk):
        raise TruncatedChunk(f"UTF-16 string at {pos} overruns the string pool")
    return chunk[pos:end].decode("utf-16-le", errors="replace")


def _parse_string_pool(chunk: bytes, header_size: int) -> list[str]:
    if header_size < STRING_POOL_HEADER_SIZE:
        raise BadChunkHeader(f"string pool header is {header_size} bytes, expected 28")
    count, _style_count, flags, strings_start, _styles_start = _unpack("<IIIII", chunk, 8)
    if header_size + 4 * count > len(chunk):
        raise TruncatedChunk(f"string pool declares {count} strings but is {len(chunk)} bytes")

    utf8 = bool(flags & UTF8_FLAG)
    strings = []
    for i in range(count):
        (relative,) = _unpack("<I", chunk, header_size + 4 * i)
        strings.append(_decode_pool_string(chunk, strings_start + relative, utf8))
    return strings


def _lookup(strings: Optional[list[str]], index: int) -> Optional[str]:
    if index == NO_INDEX:
        return None
    if strings is None or index >= len(strings):
        pool_size = 0 if strings is None else len(strings)
        raise BadStringIndex(f"string index {index} outside pool of {pool_size}")
    return strings[index]


def _attribute_value(
    strings: Optional[list[str]], raw_index: int, value_type: int, data: int
) -> AttributeValue:
    if value_type == TYPE_STRING:
        value = _lookup(strings, raw_index if raw_index != NO_INDEX else data)
        return value if value is not None else ""
    if value_type == TYPE_REFERENCE:
        return f"@0x{data:08x}"
    if value_type == TYPE_INT_BOOLEAN:
        return data != 0
    if value_type in (TYPE_INT_DEC, TYPE_INT_HEX):
        return data
    if raw_index != NO_INDEX:
        value = _lookup(strings, raw_index)
        return value if value is not None else ""
    return data


def parse_axml(data: bytes) -> AxmlDocument:
    """Decode an AXML buffer into namespaces and a flat, ordered element list.

    Args:
        data: The raw binary XML bytes

    Returns:
        The decoded document

    Raises:
        BadChunkHeader: If the first chunk is not an XML chunk, or sizes are inconsistent
        TruncatedChunk: If any chunk extends past the buffer
        BadStringIndex: If a name or value references a string outside the pool
    """
    if len(data) < CHUNK_HEADER_SIZE:
        raise TruncatedChunk(f"document is {len(data)} bytes, shorter than a chunk header")
    doc_type, doc_header, doc_size = _unpack("<HHI", data, 0)
    if doc_type != RES_XML_TYPE:
        raise BadChunkHeader(f"first chunk type is 0x{doc_type:04x}, expected 0x0003")
    if doc_header < CHUNK_HEADER_SIZE or doc_header > doc_size:
        raise BadChunkHeader(f"document header size {doc_header} is inconsistent")
    if doc_size > len(data):
        raise TruncatedChunk(f"document declares {doc_size} bytes but only {len(data)} present")

    strings: Optional[list[str]] = None
    resource_ids: list[int] = []
    namespaces: list[tuple[str, str]] = []
    elements: list[AxmlElement] = []
    depth = 0

    offset = doc_header
    while offset < doc_size:
        if offset + CHUNK_HEADER_SIZE > doc_size:
            raise TruncatedChunk(f"chunk header at {offset} overruns the document")
        chunk_type, header_size, chunk_size = _unpack("<HHI", data, offset)
        if chunk_size < CHUNK_HEADER_SIZE or header_size < CHUNK_HEADER_SIZE:
            raise BadChunkHeader(f"chunk at {offset} has sizes {header_size}/{chunk_size}")
        if header_size > chunk_size:
            raise BadChunkHeader(f"chunk at {offset} has header larger than body")
        if offset + chunk_size > doc_size:
            raise TruncatedChunk(f"chunk 0x{chunk_type:04x} at {offset} overruns the document")
        chunk = data[offset : offset + chunk_size]

        if chunk_type == RES_STRING_POOL_TYPE:
            strings = _parse_string_pool(chunk, header_size)
        elif chunk_type == RES_XML_RESOURCE_MAP_TYPE:
            count = (chunk_size - header_size) // 4
            resource_ids = list(_unpack(f"<{count}I", chunk, header_size))
        elif chunk_type == RES_XML_START_NAMESPACE_TYPE:
            prefix_index, uri_index = _unpack("<II", chunk, header_size)
            prefix = _lookup(strings, prefix_index) or ""
            uri = _lookup(strings, uri_index) or ""
            namespaces.append((prefix, uri))
        elif chunk_type == RES_XML_START_ELEMENT_TYPE:
            elements.append(
                _parse_element(chunk, header_size, strings, resource_ids, depth)
            )
            depth += 1
        elif chunk_type == RES_XML_END_ELEMENT_TYPE:
            depth = max(0, depth - 1)
        elif chunk_type in (RES_XML_END_NAMESPACE_TYPE, RES_XML_CDATA_TYPE):
            pass
        else:
            logger.debug("skipping unknown chunk type=0x%04x size=%d", chunk_type, chunk_size)

        offset += chunk_size

    return AxmlDocument(namespaces=tuple(namespaces), elements=tuple(elements))


def _parse_element(
    chunk: bytes,
    header_size: int,
    strings: Optional[list[str]],
    resource_ids: list[int],
    depth: int,
) -> AxmlElement:
    ns_index, name_index, attr_start, attr_size, attr_count = _unpack(
        "<IIHHH", chunk, header_size
    )
    if attr_count and attr_size < ATTRIBUTE_SIZE:
        raise BadChunkHeader(f"attribute size {attr_size} is smaller than {ATTRIBUTE_SIZE}")
    base = header_size + attr_start
    if base + attr_count * attr_size > len(chunk):
        raise TruncatedChunk(f"{attr_count} attributes overrun the element chunk")

    attributes = []
    for i in range(attr_count):
        a_ns, a_name, a_raw, _size, _res0, a_type, a_data = _unpack(
            "<IIIHBBI", chunk, base + i * attr_size
        )
        name = _lookup(strings, a_name) or ""
        if not name and a_name < len(resource_ids):
            name = ATTRIBUTE_RESOURCE_NAMES.get(resource_ids[a_name], "")
        attributes.append(
            AxmlAttribute(
                namespace=_lookup(strings, a_ns),
                name=name,
                value=_attribute_value(strings, a_raw, a_type, a_data),
                value_type=a_type,
            )
        )

    return AxmlElement(
        namespace=_lookup(strings, ns_index),
        name=_lookup(strings, name_index) or "",
        attributes=tuple(attributes),
        depth=depth,
    )


def _qualify(name: str, package: str) -> str:
    if name.startswith("."):
        return package + name
    if name and "." not in name:
        return f"{package}.{name}"
    return name


def decode_manifest(axml_bytes: bytes) -> ManifestInfo:
    """Decode AndroidManifest.xml into the metadata the agents consume.

    Args:
        axml_bytes: The raw binary XML bytes

    Returns:
        Decoded manifest metadata with sorted, de-duplicated permissions

    Raises:
        BadChunkHeader, TruncatedChunk, BadStringIndex: On malformed AXML
        MissingManifestElement: If no <manifest> element carries a package name
    """
    document = parse_axml(axml_bytes)

    manifests = document.find_all("manifest")
    if not manifests:
        raise MissingManifestElement("document has no <manifest> element")
    manifest = manifests[0]
    package = manifest.get("package")
    if not isinstance(package, str) or not package:
        raise MissingManifestElement("<manifest> has no package attribute")

    version_code = manifest.get("versionCode")
    if isinstance(version_code, bool) or not isinstance(version_code, int):
        try:
            version_code = int(str(version_code))
        except ValueError:
            version_code = 0
    version_name = manifest.get("versionName")

    permissions = set()
    for tag in ("uses-permission", "uses-permission-sdk-23"):
        for element in document.find_all(tag):
            value = element.get("name")
            if isinstance(value, str) and value:
                permissions.add(value)

    def component_names(tag: str) -> tuple[str, ...]:
        names = []
        for element in document.find_all(tag):
            value = element.get("name")
            if isinstance(value, str) and value:
                names.append(_qualify(value, package))
        return tuple(names)

    label = ""
    icon_ref: Optional[str] = None
    applications = document.find_all("application")
    if applications:
        raw_label = applications[0].get("label")
        label = "" if raw_label is None else str(raw_label)
        raw_icon = applications[0].get("icon")
        if raw_icon is not None and str(raw_icon):
            icon_ref = str(raw_icon)

    return ManifestInfo(
        package_name=package,
        version_code=max(0, version_code),
        version_name="" if version_name is None else str(version_name),
        app_label=label,
        permissions=tuple(sorted(permissions)),
        activities=component_names("activity"),
        services=component_names("service"),
        icon_ref=icon_ref,
    )


def _render_value(attr: AxmlAttribute) -> str:
    if isinstance(attr.value, bool):
        return "true" if attr.value else "false"
    if isinstance(attr.value, int) or attr.value_type == TYPE_REFERENCE:
        return str(attr.value)
    return json.dumps(attr.value, ensure_ascii=False)


def dump_axml(axml_bytes: bytes) -> str:
    """Render a decoded AXML document as stable text.

    Namespace declarations come first, then one line per element indented by
    depth, each followed by its attributes in document order.

    Args:
        axml_bytes: The raw binary XML bytes

    Returns:
        The textual dump, newline terminated
    """
    document = parse_axml(axml_bytes)
    prefixes = {uri: prefix for prefix, uri in document.namespaces}

    def qualified(namespace: Optional[str], name: str) -> str:
        if namespace and namespace in prefixes:
            return f"{prefixes[namespace]}:{name}"
        return name

    lines = [f"namespace {prefix}={uri}" for prefix, uri in document.namespaces]
    for element in document.elements:
        indent = "  " * element.depth
        lines.append(f"{indent}<{qualified(element.namespace, element.name)}>")
        for attr in element.attributes:
            lines.append(f"{indent}  @{qualified(attr.namespace, attr.name)} = {_render_value(attr)}")
    return "\n".join(lines) + "\n"
