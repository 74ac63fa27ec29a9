"""Utility functions for APK Triage."""

import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Any, Union

# ====================
# Constants
# ====================

PACKAGE_LOGGER = "apk_triage"

# Entry names inside an APK
MANIFEST_ENTRY = "AndroidManifest.xml"
ICON_ENTRY = "res/mipmap-mdpi/icon.png"
CERTIFICATE_ENTRY = "META-INF/CERT.RSA"
DEX_ENTRY = "classes.dex"

# Generation parameters
DEFAULT_TEMPERATURE = 0.5
DEFAULT_MAX_OUTPUT_TOKENS = 1024
DEFAULT_TIMEOUT = 60.0  # seconds
DEFAULT_MODEL = "gpt-4o"
DEFAULT_ENDPOINT = "https://api.openai.com"
API_KEY_ENV = "APK_TRIAGE_API_KEY"

# Orchestration
DEFAULT_MAX_ITERATIONS = 3
DECISION_THRESHOLD = 0.5

# Evaluation
DEFAULT_SEED = 7
DEFAULT_TEST_FRACTION = 0.2
DEFAULT_REPORT_NAME = "evaluation-report.json"

PathLike = Union[str, Path]

_LOG_FORMAT = "%(levelname)s %(name)s: %(message)s"


def configure_logging(verbosity: int = 0) -> logging.Logger:
    """Attach a single stderr handler to the package logger.

    Args:
        verbosity: 0 for warnings, 1 for info, 2 or more for debug

    Returns:
        The configured package logger
    """
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity >= 2:
        level = logging.DEBUG

    logger = logging.getLogger(PACKAGE_LOGGER)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)

    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(_LOG_FORMAT))
    logger.addHandler(handler)
    logger.setLevel(level)
    logger.propagate = False
    return logger


def canonical_json(payload: Any) -> str:
    """Serialize a JSON-compatible payload in the canonical form.

    Keys are sorted, non-ASCII text is kept as-is and the document ends with a
    newline, so two equal payloads always produce byte-identical output.

    Args:
        payload: JSON-compatible data

    Returns:
        Canonical JSON text
    """
    return json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def file_digests(path: PathLike, chunk_size: int = 1 << 16) -> tuple[str, str, str]:
    """Compute MD5, SHA-1 and SHA-256 over a file in a single pass.

    Args:
        path: File to hash
        chunk_size: Read size in bytes

    Returns:
        Tuple of (md5, sha1, sha256) lowercase hex digests
    """
    md5 = hashlib.md5()
    sha1 = hashlib.sha1()
    sha256 = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(chunk_size), b""):
            md5.update(chunk)
            sha1.update(chunk)
            sha256.update(chunk)
    return md5.hexdigest(), sha1.hexdigest(), sha256.hexdigest()


def sha256_hex(data: Union[bytes, str]) -> str:
    """Return the lowercase SHA-256 hex digest of bytes or UTF-8 text."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()
