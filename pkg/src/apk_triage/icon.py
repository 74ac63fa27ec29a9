"""Launcher icon lookup and 8x8 average hashing."""

import enum
import io
import logging
import re
from dataclasses import dataclass
from typing import Optional

import imagehash
from PIL import Image

from .archive import ApkContainer
from .axml import ManifestInfo
from .errors import IconDecodeError
from .utils import sha256_hex

logger = logging.getLogger(__name__)

AHASH_SIZE = 8

# Resource stems commonly used for the launcher icon
LAUNCHER_STEMS = frozenset({"ic_launcher", "icon", "app_icon", "ic_launcher_round"})

# Larger is preferred; unqualified and nodpi directories rank last
DENSITY_RANK = {
    "xxxhdpi": 640,
    "xxhdpi": 480,
    "xhdpi": 320,
    "hdpi": 240,
    "mdpi": 160,
    "ldpi": 120,
}

_RESOURCE_PATH = re.compile(
    r"^res/(?P<kind>mipmap|drawable)(?:-(?P<qualifiers>[^/]+))?/(?P<stem>[^/.]+)\.(?:png|webp|jpe?g)$",
    re.IGNORECASE,
)


class IconFormat(str, enum.Enum):
    PNG = "PNG"
    WEBP = "WEBP"
    JPEG = "JPEG"
    UNKNOWN = "UNKNOWN"


@dataclass(frozen=True)
class IconAsset:
    """A decoded launcher icon and its perceptual hash."""

    raw_bytes: bytes
    width: int
    height: int
    format: IconFormat
    ahash64: int
    entry_name: str = ""

    def to_dict(self) -> dict:
        return {
            "entry_name": self.entry_name,
            "format": self.format.value,
            "width": self.width,
            "height": self.height,
            "ahash64": f"{self.ahash64:016x}",
            "size": len(self.raw_bytes),
            "sha256": sha256_hex(self.raw_bytes),
        }


def detect_format(data: bytes) -> IconFormat:
    """Identify the image container by its magic bytes."""
    if data.startswith(b"\x89PNG\r\n\x1a\n"):
        return IconFormat.PNG
    if data.startswith(b"\xff\xd8\xff"):
        return IconFormat.JPEG
    if len(data) >= 12 and data[:4] == b"RIFF" and data[8:12] == b"WEBP":
        return IconFormat.WEBP
    return IconFormat.UNKNOWN


def average_hash64(image: Image.Image) -> int:
    """Compute the 64-bit average hash of an image.

    The image is reduced to 8x8 grayscale and each pixel above the mean sets
    its bit. Bits are packed row-major, the top-left pixel being the most
    significant.
    """
    bits = imagehash.average_hash(image, hash_size=AHASH_SIZE).hash.flatten()
    value = 0
    for bit in bits:
        value = (value << 1) | int(bool(bit))
    return value


def _density(qualifiers: Optional[str]) -> int:
    if not qualifiers:
        return 0
    for qualifier in qualifiers.lower().split("-"):
        if qualifier in DENSITY_RANK:
            return DENSITY_RANK[qualifier]
    return 0


def resolve_icon_entry(container: ApkContainer, icon_ref: Optional[str]) -> Optional[str]:
    """Find the entry an icon reference points to.

    A plain path is used as-is when present. Resource references are resolved
    by convention: launcher-named bitmaps under ``res/mipmap-*`` win over
    ``res/drawable-*``, and the highest density wins within each.

    Args:
        container: An opened APK
        icon_ref: The manifest's ``android:icon`` value

    Returns:
        Entry name, or None when nothing matches
    """
    if not icon_ref:
        return None
    if not icon_ref.startswith("@") and container.has(icon_ref):
        return icon_ref

    ranked = []
    for name in container.names():
        match = _RESOURCE_PATH.match(name)
        if not match or match.group("stem").lower() not in LAUNCHER_STEMS:
            continue
        kind_rank = 0 if match.group("kind").lower() == "mipmap" else 1
        ranked.append((kind_rank, -_density(match.group("qualifiers")), name))
    if not ranked:
        return None
    return min(ranked)[2]


def decode_icon(data: bytes, entry_name: str = "") -> Optional[IconAsset]:
    """Decode icon bytes and hash them.

    Returns:
        The icon asset, or None when the bytes are not a supported image container

    Raises:
        IconDecodeError: If the container is recognised but its pixel data is corrupt
    """
    icon_format = detect_format(data)
    if icon_format is IconFormat.UNKNOWN:
        logger.debug("icon entry=%s has unknown format", entry_name)
        return None
    try:
        with Image.open(io.BytesIO(data)) as image:
            image.load()
            width, height = image.size
            ahash = average_hash64(image)
    except (OSError, SyntaxError, ValueError, Image.DecompressionBombError) as e:
        raise IconDecodeError(f"cannot decode icon '{entry_name}': {e}") from e
    if width <= 0 or height <= 0:
        raise IconDecodeError(f"icon '{entry_name}' has empty dimensions {width}x{height}")

    return IconAsset(
        raw_bytes=data,
        width=width,
        height=height,
        format=icon_format,
        ahash64=ahash,
        entry_name=entry_name,
    )


def extract_icon(container: ApkContainer, manifest: ManifestInfo) -> Optional[IconAsset]:
    """Locate, decode and hash the launcher icon.

    Args:
        container: An opened APK
        manifest: Decoded manifest, for its icon reference

    Returns:
        The icon, or None when no icon is referenced or the entry is not an image

    Raises:
        IconDecodeError: If a referenced image entry has corrupt pixel data
    """
    entry = resolve_icon_entry(container, manifest.icon_ref)
    if entry is None:
        return None
    return decode_icon(container.read(entry), entry)
