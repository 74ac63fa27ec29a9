"""Synthetic APK fixtures with controlled fraud indicators.

Every builder here is the inverse of one extractor: the AXML writer of
``decode_manifest``, the DEX writer of ``parse_dex_strings`` and so on. The
output is byte-for-byte reproducible for a given spec, so forged corpora can
serve as test oracles.
"""

import hashlib
import io
import json
import logging
import random
import struct
import zipfile
import zlib
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from cryptography import x509
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
from cryptography.hazmat.primitives.serialization import pkcs7
from cryptography.x509.oid import NameOID
from PIL import Image

from .agents import (
    ICON_DISTANCE_SCALE,
    ICON_HINT_MAX_DISTANCE,
    LONG_VALIDITY_YEARS,
    PLACEHOLDER_SUBJECTS,
    hamming_distance,
)
from .axml import (
    ANDROID_NS,
    ATTRIBUTE_RESOURCE_NAMES,
    ATTRIBUTE_SIZE,
    NO_INDEX,
    NODE_HEADER_SIZE,
    RES_STRING_POOL_TYPE,
    RES_XML_END_ELEMENT_TYPE,
    RES_XML_END_NAMESPACE_TYPE,
    RES_XML_RESOURCE_MAP_TYPE,
    RES_XML_START_ELEMENT_TYPE,
    RES_XML_START_NAMESPACE_TYPE,
    RES_XML_TYPE,
    STRING_POOL_HEADER_SIZE,
    TYPE_INT_DEC,
    TYPE_REFERENCE,
    TYPE_STRING,
    UTF8_FLAG,
)
from .dex import HEADER_SIZE, STRING_IDS_OFF_OFFSET, STRING_IDS_SIZE_OFFSET
from .errors import ArchiveIoError, InvalidSpec, InvalidWindow
from .models import FraudCategory
from .tables import ReferenceIconSet, RiskLexicon, load_lexicon, load_reference_icons
from .utils import (
    CERTIFICATE_ENTRY,
    DEFAULT_SEED,
    DEX_ENTRY,
    ICON_ENTRY,
    MANIFEST_ENTRY,
    PathLike,
)

logger = logging.getLogger(__name__)

ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)
DEX_MAGIC = b"dex\n035\x00"
ENDIAN_CONSTANT = 0x12345678
ICON_RESOURCE_ID = 0x7F0C0000
PATTERN_SIZE = 8
ALL_BITS = (1 << 64) - 1

CORPUS_MANIFEST = "corpus.jsonl"
APK_DIR = "apks"
DEFAULT_COUNTS = {
    FraudCategory.GAMBLING: 10,
    FraudCategory.SCAM: 5,
    FraudCategory.SEXUAL_CONTENT: 5,
    FraudCategory.LEGITIMATE: 20,
}

_RESOURCE_IDS = {name: res_id for res_id, name in ATTRIBUTE_RESOURCE_NAMES.items()}


# ====================
# Specs
# ====================


@dataclass(frozen=True)
class IconSpec:
    """A solid colour, or an 8x8 black and white pattern whose average hash is ``pattern``."""

    color: tuple[int, int, int] = (0, 0, 0)
    pattern: Optional[int] = None
    # Larger solid icons are not guaranteed to hash to zero after resampling
    size: int = PATTERN_SIZE

    @property
    def expected_ahash(self) -> int:
        return 0 if self.pattern is None else self.pattern

    @property
    def dimensions(self) -> tuple[int, int]:
        if self.pattern is not None:
            return PATTERN_SIZE, PATTERN_SIZE
        return self.size, self.size


@dataclass(frozen=True)
class CertificateSpec:
    subject_cn: str
    issuer_cn: str
    not_before: datetime
    not_after: datetime
    organization: str = ""


@dataclass(frozen=True)
class ForgeSpec:
    """Everything a forged APK carries.

    Component names starting with ``.`` are relative to the package, exactly
    as in a real manifest.
    """

    package_name: str
    app_label: str
    permissions: tuple[str, ...] = ()
    dex_strings: tuple[str, ...] = ()
    icon: Optional[IconSpec] = None
    certificate: Optional[CertificateSpec] = None
    planted_category: FraudCategory = FraudCategory.LEGITIMATE
    version_code: int = 1
    version_name: str = "1.0"
    activities: tuple[str, ...] = (".MainActivity",)
    services: tuple[str, ...] = ()
    utf8_strings: bool = False


# ====================
# AXML writer
# ====================


def _pool_length(value: int, wide: bool) -> bytes:
    if wide:
        if value < 0x8000:
            return struct.pack("<H", value)
        return struct.pack("<HH", 0x8000 | (value >> 16), value & 0xFFFF)
    if value < 0x80:
        return struct.pack("<B", value)
    return struct.pack("<BB", 0x80 | (value >> 8), value & 0xFF)


def _encode_pool_string(text: str, utf8: bool) -> bytes:
    if utf8:
        encoded = text.encode("utf-8")
        units = len(text.encode("utf-16-le")) // 2
        return _pool_length(units, False) + _pool_length(len(encoded), False) + encoded + b"\x00"
    encoded = text.encode("utf-16-le")
    return _pool_length(len(encoded) // 2, True) + encoded + b"\x00\x00"


class _StringPool:
    """Interning string table; attribute names go first so the resource map can index them."""

    def __init__(self, leading: list[str]):
        self.strings: list[str] = []
        self._index: dict[str, int] = {}
        for text in leading:
            self.add(text)

    def add(self, text: str) -> int:
        if text not in self._index:
            self._index[text] = len(self.strings)
            self.strings.append(text)
        return self._index[text]

    def encode(self, utf8: bool) -> bytes:
        offsets = []
        data = bytearray()
        for text in self.strings:
            offsets.append(len(data))
            data += _encode_pool_string(text, utf8)
        while len(data) % 4:
            data += b"\x00"
        strings_start = STRING_POOL_HEADER_SIZE + 4 * len(self.strings)
        size = strings_start + len(data)
        header = struct.pack(
            "<HHIIIIII",
            RES_STRING_POOL_TYPE,
            STRING_POOL_HEADER_SIZE,
            size,
            len(self.strings),
            0,
            UTF8_FLAG if utf8 else 0,
            strings_start,
            0,
        )
        return header + struct.pack(f"<{len(offsets)}I", *offsets) + bytes(data)


@dataclass
class _Element:
    name: str
    # (namespace or None, name, value type, string value or int data)
    attributes: list[tuple[Optional[str], str, int, object]] = field(default_factory=list)
    children: list["_Element"] = field(default_factory=list)


def _node(chunk_type: int, body: bytes) -> bytes:
    size = NODE_HEADER_SIZE + len(body)
    header = struct.pack("<HHIII", chunk_type, NODE_HEADER_SIZE, size, 1, NO_INDEX)
    return header + body


def _attribute_order(attr: tuple[Optional[str], str, int, object]) -> tuple[int, int]:
    namespace, name, _, _ = attr
    if namespace is None:
        return 0, 0
    return 1, _RESOURCE_IDS.get(name, 0xFFFFFFFF)


def _emit_element(element: _Element, pool: _StringPool, out: bytearray) -> None:
    attributes = sorted(element.attributes, key=_attribute_order)
    body = bytearray(
        struct.pack(
            "<IIHHHHHH",
            NO_INDEX,
            pool.add(element.name),
            20,
            ATTRIBUTE_SIZE,
            len(attributes),
            0,
            0,
            0,
        )
    )
    for namespace, name, value_type, value in attributes:
        ns_index = NO_INDEX if namespace is None else pool.add(namespace)
        if value_type == TYPE_STRING:
            raw = pool.add(str(value))
            data = raw
        else:
            raw = NO_INDEX
            data = int(value)  # type: ignore[call-overload]
        body += struct.pack("<IIIHBBI", ns_index, pool.add(name), raw, 8, 0, value_type, data)
    out += _node(RES_XML_START_ELEMENT_TYPE, bytes(body))
    for child in element.children:
        _emit_element(child, pool, out)
    out += _node(RES_XML_END_ELEMENT_TYPE, struct.pack("<II", NO_INDEX, pool.add(element.name)))


def _manifest_tree(spec: ForgeSpec) -> _Element:
    android = ANDROID_NS
    root = _Element(
        "manifest",
        [
            (None, "package", TYPE_STRING, spec.package_name),
            (android, "versionCode", TYPE_INT_DEC, spec.version_code),
            (android, "versionName", TYPE_STRING, spec.version_name),
        ],
    )
    for permission in spec.permissions:
        root.children.append(
            _Element("uses-permission", [(android, "name", TYPE_STRING, permission)])
        )
    application = _Element("application", [(android, "label", TYPE_STRING, spec.app_label)])
    if spec.icon is not None:
        application.attributes.append((android, "icon", TYPE_REFERENCE, ICON_RESOURCE_ID))
    for tag, names in (("activity", spec.activities), ("service", spec.services)):
        for name in names:
            application.children.append(_Element(tag, [(android, "name", TYPE_STRING, name)]))
    root.children.append(application)
    return root


def build_manifest_axml(spec: ForgeSpec, utf8: Optional[bool] = None) -> bytes:
    """Encode the spec's manifest as binary XML.

    Args:
        spec: Fixture spec
        utf8: String pool encoding; defaults to ``spec.utf8_strings`` (UTF-16 otherwise)

    Returns:
        AXML bytes that ``decode_manifest`` inverts exactly
    """
    use_utf8 = spec.utf8_strings if utf8 is None else utf8
    attribute_names = [name for _, name in sorted(ATTRIBUTE_RESOURCE_NAMES.items())]
    pool = _StringPool(attribute_names)

    prefix, uri = pool.add("android"), pool.add(ANDROID_NS)
    nodes = bytearray(_node(RES_XML_START_NAMESPACE_TYPE, struct.pack("<II", prefix, uri)))
    _emit_element(_manifest_tree(spec), pool, nodes)
    nodes += _node(RES_XML_END_NAMESPACE_TYPE, struct.pack("<II", prefix, uri))

    resource_ids = [_RESOURCE_IDS[name] for name in attribute_names]
    map_size = 8 + 4 * len(resource_ids)
    resource_map = struct.pack(
        f"<HHI{len(resource_ids)}I", RES_XML_RESOURCE_MAP_TYPE, 8, map_size, *resource_ids
    )
    body = pool.encode(use_utf8) + resource_map + bytes(nodes)
    return struct.pack("<HHI", RES_XML_TYPE, 8, 8 + len(body)) + body


# ====================
# DEX writer
# ====================


def encode_mutf8(text: str) -> bytes:
    """Encode text as Modified UTF-8.

    NUL becomes ``C0 80`` and characters outside the BMP become two 3-byte
    surrogate sequences.
    """
    out = bytearray()
    for (unit,) in struct.iter_unpack("<H", text.encode("utf-16-le", "surrogatepass")):
        if unit == 0:
            out += b"\xc0\x80"
        elif unit < 0x80:
            out.append(unit)
        elif unit < 0x800:
            out += bytes((0xC0 | (unit >> 6), 0x80 | (unit & 0x3F)))
        else:
            out += bytes((0xE0 | (unit >> 12), 0x80 | ((unit >> 6) & 0x3F), 0x80 | (unit & 0x3F)))
    return bytes(out)


def _uleb128(value: int) -> bytes:
    out = bytearray()
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def build_dex(strings: list[str]) -> bytes:
    """Build a DEX file whose string_ids list ``strings`` in the given order.

    The file holds a header, the string_ids table and the string data; the
    Adler-32 checksum and SHA-1 signature are filled in.
    """
    ids_off = HEADER_SIZE
    data_off = ids_off + 4 * len(strings)
    offsets = []
    string_data = bytearray()
    for text in strings:
        offsets.append(data_off + len(string_data))
        units = len(text.encode("utf-16-le", "surrogatepass")) // 2
        string_data += _uleb128(units) + encode_mutf8(text) + b"\x00"

    file_size = data_off + len(string_data)
    dex = bytearray(HEADER_SIZE)
    dex[0:8] = DEX_MAGIC
    struct.pack_into("<III", dex, 0x20, file_size, HEADER_SIZE, ENDIAN_CONSTANT)
    struct.pack_into("<II", dex, STRING_IDS_SIZE_OFFSET, len(strings), ids_off if strings else 0)
    dex += struct.pack(f"<{len(offsets)}I", *offsets) + string_data

    dex[12:32] = hashlib.sha1(bytes(dex[32:])).digest()
    struct.pack_into("<I", dex, 8, zlib.adler32(bytes(dex[12:])))
    return bytes(dex)


# ====================
# Certificate and icon
# ====================


def _name(common_name: str, organization: str) -> x509.Name:
    attributes = [x509.NameAttribute(NameOID.COMMON_NAME, common_name)]
    if organization:
        attributes.append(x509.NameAttribute(NameOID.ORGANIZATION_NAME, organization))
    return x509.Name(attributes)


def _utc(moment: datetime) -> datetime:
    return moment.replace(tzinfo=timezone.utc) if moment.tzinfo is None else moment


def build_certificate(
    subject: str,
    issuer: str,
    not_before: datetime,
    not_after: datetime,
    organization: str = "",
) -> bytes:
    """Build a PKCS#7 DER signature block holding one X.509 certificate.

    The signing key and serial are derived from the arguments, so identical
    inputs give identical bytes. Subject and issuer share ``organization``;
    the certificate is self-signed exactly when ``subject == issuer``.

    Raises:
        InvalidWindow: If not_before is after not_after
    """
    start, end = _utc(not_before), _utc(not_after)
    if start > end:
        raise InvalidWindow(f"validity window ends ({end}) before it starts ({start})")
    material = hashlib.sha256(
        f"{subject}|{issuer}|{organization}|{start.isoformat()}|{end.isoformat()}".encode()
    ).digest()
    key = Ed25519PrivateKey.from_private_bytes(material)
    serial = int.from_bytes(material[:8], "big") | 1
    certificate = (
        x509.CertificateBuilder()
        .subject_name(_name(subject, organization))
        .issuer_name(_name(issuer, organization))
        .public_key(key.public_key())
        .serial_number(serial)
        .not_valid_before(start)
        .not_valid_after(end)
        .sign(key, None)
    )
    return pkcs7.serialize_certificates([certificate], serialization.Encoding.DER)


def build_icon_png(icon: IconSpec) -> bytes:
    """Render an icon spec as PNG bytes.

    A pattern icon is 8x8 pixels, white where the hash bit is set and black
    elsewhere, so its average hash reproduces the pattern exactly.

    Raises:
        InvalidSpec: If the pattern is all zeros or all ones (not reproducible)
    """
    if icon.pattern is not None:
        if not 0 < icon.pattern < ALL_BITS:
            raise InvalidSpec(f"icon pattern {icon.pattern:#x} needs both set and clear bits")
        image = Image.new("L", (PATTERN_SIZE, PATTERN_SIZE))
        image.putdata(
            [255 if icon.pattern >> (63 - i) & 1 else 0 for i in range(PATTERN_SIZE * PATTERN_SIZE)]
        )
    else:
        if icon.size < 1:
            raise InvalidSpec(f"icon size must be positive, got {icon.size}")
        image = Image.new("RGB", (icon.size, icon.size), icon.color)
    buffer = io.BytesIO()
    image.save(buffer, format="PNG", optimize=False)
    return buffer.getvalue()


# ====================
# APK assembly
# ====================


def _write_entry(archive: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=ZIP_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    archive.writestr(info, data)


def assemble_apk(spec: ForgeSpec, out_path: PathLike) -> Path:
    """Write the spec as an APK.

    Entries carry a fixed timestamp, so the same spec always gives the same
    bytes.

    Raises:
        ArchiveIoError: If the file cannot be written
    """
    target = Path(out_path)
    entries = [
        (MANIFEST_ENTRY, build_manifest_axml(spec)),
        (DEX_ENTRY, build_dex(list(spec.dex_strings))),
    ]
    if spec.icon is not None:
        entries.append((ICON_ENTRY, build_icon_png(spec.icon)))
    if spec.certificate is not None:
        cert = spec.certificate
        entries.append(
            (
                CERTIFICATE_ENTRY,
                build_certificate(
                    cert.subject_cn,
                    cert.issuer_cn,
                    cert.not_before,
                    cert.not_after,
                    cert.organization,
                ),
            )
        )
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        with zipfile.ZipFile(target, "w") as archive:
            for name, data in entries:
                _write_entry(archive, name, data)
    except OSError as e:
        raise ArchiveIoError(f"cannot write {target}: {e}") from e
    logger.debug("forged apk=%s category=%s", target, spec.planted_category.value)
    return target


# ====================
# Planted specs
# ====================

FRAUD_FAMILIES = {
    FraudCategory.GAMBLING: "goldenreels",
    FraudCategory.SCAM: "quickreward",
    FraudCategory.SEXUAL_CONTENT: "nightlounge",
    FraudCategory.OTHER_FRAUD: "fastwallet",
}
FRAUD_LABELS = {
    FraudCategory.GAMBLING: ("Lucky Casino", "Jackpot Party", "Poker Night", "Lottery Star"),
    FraudCategory.SCAM: ("Claim Your Prize", "Loan Approved", "Guaranteed Profit"),
    FraudCategory.SEXUAL_CONTENT: ("Hot Girls", "Live Cam Chat", "Adult Video Hub"),
    FraudCategory.OTHER_FRAUD: ("Free Recharge", "Hack Wallet", "Fake Login Helper"),
}
FRAUD_PHRASES = ("Tap to start {}", "{} is waiting for you", "Today only: {}", "Open {} now")
FRAUD_CORE_PERMISSIONS = ("android.permission.SEND_SMS", "android.permission.READ_CONTACTS")
FRAUD_EXTRA_PERMISSIONS = (
    "android.permission.READ_SMS",
    "android.permission.RECEIVE_SMS",
    "android.permission.READ_PHONE_STATE",
    "android.permission.SYSTEM_ALERT_WINDOW",
    "android.permission.REQUEST_INSTALL_PACKAGES",
)
FRAUD_WINDOW = (
    datetime(2010, 1, 1, tzinfo=timezone.utc),
    datetime(2060, 1, 1, tzinfo=timezone.utc),
)

VENDORS = (
    "bluefin",
    "maplesoft",
    "northwind",
    "pinecone",
    "riverstone",
    "suncrest",
    "tidewater",
    "oakridge",
    "harborview",
    "clearpath",
)
PRODUCTS = (
    "notes",
    "weather",
    "fitness",
    "calendar",
    "recipes",
    "compass",
    "reader",
    "tasks",
    "budget",
    "scanner",
)
BENIGN_PHRASES = (
    "Sync complete",
    "Settings saved",
    "Unable to connect",
    "Backup finished",
    "Welcome back",
)
BENIGN_PERMISSIONS = (
    "android.permission.INTERNET",
    "android.permission.ACCESS_NETWORK_STATE",
    "android.permission.CAMERA",
    "android.permission.VIBRATE",
    "android.permission.WAKE_LOCK",
)
VENDOR_WINDOW = (
    datetime(2020, 1, 1, tzinfo=timezone.utc),
    datetime(2045, 1, 1, tzinfo=timezone.utc),
)
FRAMEWORK_DESCRIPTORS = ("Landroid/app/Activity;", "Ljava/lang/String;")


def _descriptor(package_name: str, simple_name: str) -> str:
    return f"L{package_name.replace('.', '/')}/{simple_name};"


def _far_pattern(rng: random.Random, reference_icons: ReferenceIconSet) -> int:
    while True:
        candidate = rng.getrandbits(64)
        if not 0 < candidate < ALL_BITS:
            continue
        if all(
            hamming_distance(candidate, ref.ahash64) >= ICON_DISTANCE_SCALE
            for ref in reference_icons.entries
        ):
            return candidate


def planted_spec(
    rng: random.Random,
    category: FraudCategory,
    index: int,
    lexicon: Optional[RiskLexicon] = None,
    reference_icons: Optional[ReferenceIconSet] = None,
) -> ForgeSpec:
    """Draw a spec whose indicators all point at ``category``.

    Fraudulent specs of one category share a package prefix, a URL host and
    a signing certificate, carry that category's lexicon terms and clone one
    of its reference icons. Legitimate specs carry none of these.

    Args:
        rng: Seeded generator; the only source of randomness
        category: Planted category
        index: Position within the category, used for unique names
        lexicon: Term table, defaults to the bundled one
        reference_icons: Icon table, defaults to the bundled one

    Returns:
        A spec that passes ``check_spec``
    """
    lexicon = lexicon if lexicon is not None else load_lexicon()
    reference_icons = reference_icons if reference_icons is not None else load_reference_icons()
    if category.is_fraud:
        return _fraud_spec(rng, category, index, lexicon, reference_icons)
    return _legitimate_spec(rng, index, reference_icons)


def _fraud_spec(
    rng: random.Random,
    category: FraudCategory,
    index: int,
    lexicon: RiskLexicon,
    reference_icons: ReferenceIconSet,
) -> ForgeSpec:
    family = FRAUD_FAMILIES[category]
    package = f"com.{family}.app{index}"
    terms = sorted(term for term, entry in lexicon.terms.items() if entry.category is category)
    if len(terms) < 3:
        raise InvalidSpec(f"lexicon has fewer than three '{category.value}' terms")
    chosen = rng.sample(terms, rng.randint(3, min(4, len(terms))))

    dex_strings = [rng.choice(FRAUD_PHRASES).format(term) for term in chosen]
    path = chosen[0].replace(" ", "-")
    dex_strings.append(f"https://api.{family}.top/v{rng.randint(1, 3)}/{path}")
    dex_strings += [_descriptor(package, "MainActivity"), _descriptor(package, "PayService")]
    dex_strings += FRAMEWORK_DESCRIPTORS

    extras = rng.sample(FRAUD_EXTRA_PERMISSIONS, rng.randint(0, 2))
    permissions = tuple(FRAUD_CORE_PERMISSIONS) + ("android.permission.INTERNET",) + tuple(extras)

    clones = [ref for ref in reference_icons.entries if ref.category is category]
    icon = IconSpec(pattern=rng.choice(clones).ahash64) if clones else None

    return ForgeSpec(
        package_name=package,
        app_label=f"{rng.choice(FRAUD_LABELS[category])} {index}",
        permissions=permissions,
        dex_strings=tuple(dex_strings),
        icon=icon,
        certificate=CertificateSpec(
            subject_cn="Android Debug",
            issuer_cn="Android Debug",
            not_before=FRAUD_WINDOW[0],
            not_after=FRAUD_WINDOW[1],
            organization=family.title(),
        ),
        planted_category=category,
        version_code=index + 1,
        version_name=f"6.{index}.{rng.randint(0, 9)}",
        services=(".PayService",),
    )


def _legitimate_spec(
    rng: random.Random, index: int, reference_icons: ReferenceIconSet
) -> ForgeSpec:
    name = rng.choice(VENDORS)
    vendor = f"{name}{index}"
    product = rng.choice(PRODUCTS)
    package = f"com.{vendor}.{product}"
    dex_strings = rng.sample(BENIGN_PHRASES, 3)
    dex_strings.append(f"https://api.{vendor}.com/v1/{product}")
    dex_strings += [_descriptor(package, "MainActivity")]
    dex_strings += FRAMEWORK_DESCRIPTORS

    if rng.random() < 0.5:
        icon = IconSpec(color=(rng.randrange(256), rng.randrange(256), rng.randrange(256)))
    else:
        icon = IconSpec(pattern=_far_pattern(rng, reference_icons))

    return ForgeSpec(
        package_name=package,
        app_label=f"{name.title()} {product.title()}",
        permissions=tuple(sorted(rng.sample(BENIGN_PERMISSIONS, rng.randint(1, 3)))),
        dex_strings=tuple(dex_strings),
        icon=icon,
        certificate=CertificateSpec(
            subject_cn=f"{name.title()} Apps",
            issuer_cn=f"{name.title()} Root CA",
            not_before=VENDOR_WINDOW[0],
            not_after=VENDOR_WINDOW[1],
            organization=vendor.title(),
        ),
        planted_category=FraudCategory.LEGITIMATE,
        version_code=index + 1,
        version_name=f"2.{index}.0",
    )


def _spec_text(spec: ForgeSpec) -> list[str]:
    return [spec.package_name, spec.app_label, *spec.dex_strings]


def _certificate_flags(cert: CertificateSpec) -> list[str]:
    flags = []
    if cert.subject_cn == cert.issuer_cn:
        flags.append("self_signed")
    if cert.subject_cn.strip().lower() in PLACEHOLDER_SUBJECTS:
        flags.append("placeholder_subject")
    start, end = _utc(cert.not_before), _utc(cert.not_after)
    try:
        limit = start.replace(year=start.year + LONG_VALIDITY_YEARS)
    except ValueError:
        limit = start.replace(year=start.year + LONG_VALIDITY_YEARS, day=28)
    if end > limit:
        flags.append("long_validity")
    return flags


def check_spec(
    spec: ForgeSpec,
    lexicon: Optional[RiskLexicon] = None,
    reference_icons: Optional[ReferenceIconSet] = None,
) -> ForgeSpec:
    """Enforce the planted-category invariants of a spec.

    A legitimate spec may not carry lexicon terms, dangerous permissions, an
    icon near a reference icon or a flagged certificate. A fraudulent spec
    needs at least two indicators of its category and none of another.

    Returns:
        The spec, unchanged

    Raises:
        InvalidSpec: If an invariant is violated
    """
    lexicon = lexicon if lexicon is not None else load_lexicon()
    reference_icons = reference_icons if reference_icons is not None else load_reference_icons()
    if "." not in spec.package_name or not spec.app_label:
        raise InvalidSpec(f"'{spec.package_name}' needs a dotted package name and a label")

    terms = sorted({term for text in _spec_text(spec) for term in lexicon.match_terms(text)})
    term_categories = {lexicon.terms[term].category for term in terms}
    dangerous = [p for p in spec.permissions if p in lexicon.dangerous_permissions]
    icon_distance: Optional[tuple[int, FraudCategory]] = None
    if spec.icon is not None and reference_icons.entries:
        icon_distance = min(
            (hamming_distance(spec.icon.expected_ahash, ref.ahash64), ref.category)
            for ref in reference_icons.entries
        )
    cert_flags = [] if spec.certificate is None else _certificate_flags(spec.certificate)

    category = spec.planted_category
    where = f"'{category.value}' spec '{spec.package_name}'"
    if not category.is_fraud:
        if terms:
            raise InvalidSpec(f"{where} carries terms {terms}")
        if dangerous:
            raise InvalidSpec(f"{where} requests {dangerous}")
        if icon_distance is not None and icon_distance[0] < ICON_DISTANCE_SCALE:
            raise InvalidSpec(f"{where} icon is {icon_distance[0]} bits from a reference")
        if cert_flags:
            raise InvalidSpec(f"{where} certificate is flagged {cert_flags}")
        return spec

    foreign = sorted(c.value for c in term_categories if c is not category)
    if foreign:
        raise InvalidSpec(f"{where} carries terms of {foreign}")
    icon_hint = icon_distance is not None and icon_distance[0] <= ICON_HINT_MAX_DISTANCE
    if icon_hint and icon_distance is not None and icon_distance[1] is not category:
        raise InvalidSpec(f"{where} icon resembles {icon_distance[1].value}")
    if sum((bool(terms), bool(dangerous), icon_hint, bool(cert_flags))) < 2:
        raise InvalidSpec(f"{where} has fewer than two indicators")
    return spec


# ====================
# Corpus generation
# ====================


def generate_corpus(
    out_dir: PathLike,
    seed: int = DEFAULT_SEED,
    counts: Optional[dict[FraudCategory, int]] = None,
    lexicon: Optional[RiskLexicon] = None,
    reference_icons: Optional[ReferenceIconSet] = None,
) -> Path:
    """Forge a labeled corpus and its JSON-lines manifest.

    Categories are generated in category order from one generator seeded
    once, so the same seed gives identical manifests and APK bytes.

    Args:
        out_dir: Directory receiving ``corpus.jsonl`` and ``apks/``
        seed: Generator seed
        counts: Samples per category, defaults to 10 gambling, 5 scam,
            5 sexual content and 20 legitimate
        lexicon: Term table, defaults to the bundled one
        reference_icons: Icon table, defaults to the bundled one

    Returns:
        Path of the manifest

    Raises:
        ValueError: If a count is negative
        ArchiveIoError: If a file cannot be written
    """
    counts = dict(DEFAULT_COUNTS if counts is None else counts)
    negative = {c.value: n for c, n in counts.items() if n < 0}
    if negative:
        raise ValueError(f"sample counts must be non-negative: {negative}")
    lexicon = lexicon if lexicon is not None else load_lexicon()
    reference_icons = reference_icons if reference_icons is not None else load_reference_icons()

    root = Path(out_dir)
    rng = random.Random(seed)
    lines = []
    for category in FraudCategory:
        for index in range(counts.get(category, 0)):
            spec = planted_spec(rng, category, index, lexicon, reference_icons)
            check_spec(spec, lexicon, reference_icons)
            sample_id = f"{category.value}-{index:03d}"
            relative = f"{APK_DIR}/{sample_id}.apk"
            assemble_apk(spec, root / relative)
            record = {"id": sample_id, "path": relative, "label": category.value}
            lines.append(json.dumps(record, sort_keys=True))

    manifest = root / CORPUS_MANIFEST
    try:
        manifest.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    except OSError as e:
        raise ArchiveIoError(f"cannot write {manifest}: {e}") from e
    logger.info("forged corpus=%s samples=%d seed=%d", manifest, len(lines), seed)
    return manifest
