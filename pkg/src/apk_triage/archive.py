"""ZIP container access for APK files.

Only the central directory is read when an APK is opened; entry bodies are
decompressed on demand by :meth:`ApkContainer.read`, which opens the archive
afresh for every call so that a container can be shared across threads.
"""

import logging
import zipfile
from dataclasses import dataclass
from pathlib import Path

from .errors import ArchiveIoError, EmptyArchive, NotAZip
from .utils import PathLike

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ZipEntry:
    """One central-directory record."""

    name: str
    compressed_size: int
    uncompressed_size: int
    crc32: int


@dataclass(frozen=True)
class ApkContainer:
    """An opened APK: its path, its central directory and its size on disk."""

    source_path: Path
    entries: tuple[ZipEntry, ...]
    total_size: int

    def names(self) -> list[str]:
        """Return entry names in central-directory order."""
        return [entry.name for entry in self.entries]

    def has(self, name: str) -> bool:
        """Return True if the archive holds an entry with this exact name."""
        return any(entry.name == name for entry in self.entries)

    def read(self, name: str) -> bytes:
        """Decompress and return one entry.

        Args:
            name: Entry name as listed in the central directory

        Returns:
            The uncompressed entry bytes

        Raises:
            ArchiveIoError: If the entry is missing or cannot be decompressed
        """
        if not self.has(name):
            raise ArchiveIoError(f"No entry named '{name}' in {self.source_path}")
        try:
            with zipfile.ZipFile(self.source_path) as zf:
                return zf.read(name)
        except (OSError, zipfile.BadZipFile, zipfile.LargeZipFile, EOFError) as e:
            raise ArchiveIoError(f"Cannot read entry '{name}' from {self.source_path}: {e}") from e
        except (RuntimeError, NotImplementedError) as e:
            # Encrypted entries and unsupported compression methods
            raise ArchiveIoError(f"Cannot read entry '{name}' from {self.source_path}: {e}") from e


def open_apk(path: PathLike) -> ApkContainer:
    """Enumerate the central directory of an APK without decompressing entries.

    Args:
        path: Path to the APK file

    Returns:
        The opened container

    Raises:
        ArchiveIoError: If the file cannot be read
        NotAZip: If the file has no ZIP structure or lists an entry name twice
        EmptyArchive: If the central directory is empty
    """
    source = Path(path)
    try:
        total_size = source.stat().st_size
        with open(source, "rb") as f:
            if not zipfile.is_zipfile(f):
                raise NotAZip(f"{source} is not a ZIP archive")
            f.seek(0)
            with zipfile.ZipFile(f) as zf:
                infos = zf.infolist()
    except NotAZip:
        raise
    except zipfile.BadZipFile as e:
        raise NotAZip(f"{source} is not a ZIP archive: {e}") from e
    except OSError as e:
        raise ArchiveIoError(f"Cannot read {source}: {e}") from e

    if not infos:
        raise EmptyArchive(f"{source} contains no entries")

    seen: set[str] = set()
    entries = []
    for info in infos:
        if info.filename in seen:
            raise NotAZip(f"{source} lists entry '{info.filename}' more than once")
        seen.add(info.filename)
        entries.append(
            ZipEntry(
                name=info.filename,
                compressed_size=info.compress_size,
                uncompressed_size=info.file_size,
                crc32=info.CRC,
            )
        )

    logger.debug("apk=%s entries=%d size=%d", source, len(entries), total_size)
    return ApkContainer(source_path=source, entries=tuple(entries), total_size=total_size)
