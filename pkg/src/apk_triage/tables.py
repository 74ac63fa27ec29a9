"""Rule tables: the risk lexicon and the reference icon set.

Both ship as versioned JSON files under ``apk_triage/data`` and are read-only
once loaded.
"""

import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional

from .errors import TableError
from .models import FraudCategory
from .utils import PathLike, canonical_json

logger = logging.getLogger(__name__)

DEFAULT_LEXICON = "lexicon.json"
DEFAULT_REFERENCE_ICONS = "reference_icons.json"
TABLE_VERSION = 1


@dataclass(frozen=True)
class LexiconTerm:
    weight: float
    category: FraudCategory


@dataclass(frozen=True)
class RiskLexicon:
    """Weighted fraud terms and dangerous permissions."""

    terms: dict[str, LexiconTerm]
    dangerous_permissions: dict[str, float]

    def __post_init__(self) -> None:
        for term, entry in self.terms.items():
            if not term or term != term.lower():
                raise TableError(f"lexicon term '{term}' must be non-empty lowercase")
            if not 0.0 < entry.weight <= 1.0:
                raise TableError(f"lexicon term '{term}' weight {entry.weight} outside (0, 1]")
            if not entry.category.is_fraud:
                raise TableError(f"lexicon term '{term}' cannot point to '{entry.category.value}'")
        for permission, weight in self.dangerous_permissions.items():
            if not 0.0 < weight <= 1.0:
                raise TableError(f"permission '{permission}' weight {weight} outside (0, 1]")

    def match_terms(self, text: str) -> list[str]:
        """Return lexicon terms occurring in text, case-insensitively, in sorted order."""
        lowered = text.lower()
        return sorted(term for term in self.terms if term in lowered)


@dataclass(frozen=True)
class ReferenceIcon:
    ahash64: int
    category: FraudCategory
    label: str


@dataclass(frozen=True)
class ReferenceIconSet:
    """Average hashes of icons from known fraudulent apps.

    ``tuned_on`` lists the corpus ids whose icons were added by tuning; those
    samples may not be evaluated against this set.
    """

    entries: tuple[ReferenceIcon, ...]
    tuned_on: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        hashes = [entry.ahash64 for entry in self.entries]
        if len(set(hashes)) != len(hashes):
            raise TableError("reference icon hashes must be unique")
        for value in hashes:
            if not 0 <= value < 1 << 64:
                raise TableError(f"reference hash {value:#x} is not a 64-bit value")

    def to_dict(self) -> dict[str, Any]:
        return {
            "version": TABLE_VERSION,
            "entries": [
                {
                    "ahash64": f"{entry.ahash64:016x}",
                    "category": entry.category.value,
                    "label": entry.label,
                }
                for entry in self.entries
            ],
            "tuned_on": list(self.tuned_on),
        }


def _read_table(path: Optional[PathLike], default_name: str) -> tuple[dict, str]:
    try:
        if path is None:
            text = resources.files("apk_triage").joinpath(f"data/{default_name}").read_text("utf-8")
            origin = f"<bundled {default_name}>"
        else:
            text = Path(path).read_text(encoding="utf-8")
            origin = str(path)
    except FileNotFoundError as e:
        raise TableError(f"table file not found: {path}") from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise TableError(f"{origin} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise TableError(f"{origin} must contain a JSON object")
    version = data.get("version", TABLE_VERSION)
    if version != TABLE_VERSION:
        raise TableError(f"{origin} has unsupported version {version}")
    return data, origin


def load_lexicon(path: Optional[PathLike] = None) -> RiskLexicon:
    """Load a risk lexicon, defaulting to the bundled table.

    Raises:
        TableError: If the file is missing or violates the schema
    """
    data, origin = _read_table(path, DEFAULT_LEXICON)
    try:
        terms = {
            str(term): LexiconTerm(
                weight=float(entry["weight"]),
                category=FraudCategory.parse(entry["category"]),
            )
            for term, entry in data.get("terms", {}).items()
        }
        permissions = {
            str(name): float(weight)
            for name, weight in data.get("dangerous_permissions", {}).items()
        }
    except (KeyError, TypeError, ValueError, AttributeError) as e:
        raise TableError(f"{origin} is not a valid lexicon: {e}") from e
    lexicon = RiskLexicon(terms=terms, dangerous_permissions=permissions)
    logger.debug("lexicon=%s terms=%d permissions=%d", origin, len(terms), len(permissions))
    return lexicon


def load_reference_icons(path: Optional[PathLike] = None) -> ReferenceIconSet:
    """Load a reference icon set, defaulting to the bundled table.

    Raises:
        TableError: If the file is missing or violates the schema
    """
    data, origin = _read_table(path, DEFAULT_REFERENCE_ICONS)
    try:
        entries = tuple(
            ReferenceIcon(
                ahash64=int(entry["ahash64"], 16),
                category=FraudCategory.parse(entry["category"]),
                label=str(entry.get("label", "")),
            )
            for entry in data.get("entries", [])
        )
        tuned_on = tuple(str(sample_id) for sample_id in data.get("tuned_on", []))
    except (KeyError, TypeError, ValueError, AttributeError) as e:
        raise TableError(f"{origin} is not a valid reference icon set: {e}") from e
    icon_set = ReferenceIconSet(entries=entries, tuned_on=tuned_on)
    logger.debug("reference_icons=%s entries=%d tuned_on=%d", origin, len(entries), len(tuned_on))
    return icon_set


def save_reference_icons(icon_set: ReferenceIconSet, path: PathLike) -> Path:
    """Write a reference icon set as canonical JSON."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(canonical_json(icon_set.to_dict()), encoding="utf-8")
    return target
