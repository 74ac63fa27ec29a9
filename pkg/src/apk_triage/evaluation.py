"""Corpus ingestion, stratified splitting, batch evaluation and metrics.

Metrics are computed over exact fractions and only converted to floats at
the end, so weighted recall equals accuracy exactly, not just approximately.
"""

import json
import logging
import random
from collections.abc import Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from datetime import datetime
from fractions import Fraction
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from .agents import AgentSuite
from .bundle import ApkFeatureBundle, build_feature_bundle
from .config import RunConfig
from .errors import (
    BadLabel,
    BadRecord,
    ClassTooSmall,
    DuplicateId,
    EmptyMatrix,
    KeyMismatch,
    MissingFile,
    TriageError,
    TuningOverlap,
    format_error,
)
from .linking import CorpusIndex
from .llm import Gateway
from .models import FraudCategory, Verdict
from .orchestrator import run_pipeline
from .tables import ReferenceIcon, ReferenceIconSet, load_lexicon, load_reference_icons
from .utils import PathLike, canonical_json

logger = logging.getLogger(__name__)

CATEGORY_CLASSES = tuple(category.value for category in FraudCategory)
BINARY_CLASSES = ("legitimate", "fraudulent")
MIN_CLASS_SIZE = 2

Label = Union[FraudCategory, str]


# ====================
# Corpus
# ====================


@dataclass(frozen=True)
class CorpusEntry:
    id: str
    apk_path: Path
    label: FraudCategory

    def to_dict(self) -> dict[str, str]:
        return {"id": self.id, "path": str(self.apk_path), "label": self.label.value}


def load_corpus(manifest_path: PathLike) -> list[CorpusEntry]:
    """Load a JSON-lines corpus manifest.

    Each non-blank line is an object ``{"id", "path", "label"}``. Relative
    paths are resolved against the manifest's directory.

    Args:
        manifest_path: Path to the manifest

    Returns:
        Entries in file order

    Raises:
        BadRecord: If a line is not an object with string id and path
        BadLabel: If a label is not a fraud category
        MissingFile: If an APK path does not exist
        DuplicateId: If two lines share an id
    """
    manifest = Path(manifest_path)
    base = manifest.parent
    entries: list[CorpusEntry] = []
    seen: set[str] = set()
    with open(manifest, encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise BadRecord(f"{manifest}:{line_number}: not JSON ({e.msg})") from e
            if not isinstance(record, dict):
                raise BadRecord(f"{manifest}:{line_number}: expected a JSON object")
            sample_id, path, label = record.get("id"), record.get("path"), record.get("label")
            if not isinstance(sample_id, str) or not sample_id or not isinstance(path, str):
                raise BadRecord(f"{manifest}:{line_number}: id and path must be strings")
            try:
                category = FraudCategory.parse(str(label))
            except ValueError as e:
                raise BadLabel(f"{manifest}:{line_number}: {e}") from None
            apk_path = Path(path) if Path(path).is_absolute() else base / path
            if not apk_path.is_file():
                raise MissingFile(f"{manifest}:{line_number}: {apk_path} does not exist")
            if sample_id in seen:
                raise DuplicateId(f"{manifest}:{line_number}: duplicate id '{sample_id}'")
            seen.add(sample_id)
            entries.append(CorpusEntry(id=sample_id, apk_path=apk_path, label=category))
    logger.debug("corpus=%s entries=%d", manifest, len(entries))
    return entries


def split_size(support: int, test_fraction: float) -> int:
    """Test share of one class, rounded half up."""
    return int(Fraction(support) * Fraction(str(test_fraction)) + Fraction(1, 2))


def stratified_split(
    corpus: Sequence[CorpusEntry], test_fraction: float, seed: int
) -> tuple[list[CorpusEntry], list[CorpusEntry]]:
    """Split a corpus per class into train and test sets.

    Classes are visited in category order and shuffled with one generator
    seeded once, so a fixed seed always yields the same split. Both halves
    keep the corpus order.

    Args:
        corpus: Labeled entries
        test_fraction: Share of every class that goes to test, in (0, 1)
        seed: Shuffle seed

    Returns:
        Tuple of (train, test)

    Raises:
        ClassTooSmall: If a present class has fewer than two samples
        ValueError: If test_fraction is outside (0, 1)
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be within (0, 1), got {test_fraction}")
    rng = random.Random(seed)
    test_ids: set[str] = set()
    for category in FraudCategory:
        members = [entry.id for entry in corpus if entry.label is category]
        if not members:
            continue
        if len(members) < MIN_CLASS_SIZE:
            raise ClassTooSmall(
                f"class '{category.value}' has {len(members)} sample, need {MIN_CLASS_SIZE}"
            )
        rng.shuffle(members)
        test_ids.update(members[: split_size(len(members), test_fraction)])
    train = [entry for entry in corpus if entry.id not in test_ids]
    test = [entry for entry in corpus if entry.id in test_ids]
    return train, test


# ====================
# Metrics
# ====================


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """``counts[i][j]`` is the number of samples of class i predicted as class j."""

    classes: tuple[str, ...]
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_dict(self) -> dict[str, Any]:
        return {"classes": list(self.classes), "counts": self.counts.tolist()}


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision_w: float
    recall_w: float
    f1_w: float
    per_class: dict[str, ClassMetrics]

    def to_dict(self) -> dict[str, Any]:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision_w,
            "recall": self.recall_w,
            "f1": self.f1_w,
            "per_class": {
                name: {
                    "precision": m.precision,
                    "recall": m.recall,
                    "f1": m.f1,
                    "support": m.support,
                }
                for name, m in self.per_class.items()
            },
        }


def _class_name(value: Label) -> str:
    return value.value if isinstance(value, FraudCategory) else str(value)


def confusion(
    predictions: Mapping[str, Label],
    labels: Mapping[str, Label],
    classes: Sequence[str] = CATEGORY_CLASSES,
) -> ConfusionMatrix:
    """Tally predictions against labels.

    Raises:
        KeyMismatch: If the two maps cover different ids
        ValueError: If a value is not one of ``classes``
    """
    if set(predictions) != set(labels):
        missing = sorted(set(labels) - set(predictions))
        extra = sorted(set(predictions) - set(labels))
        raise KeyMismatch(f"ids without prediction: {missing[:5]}, ids without label: {extra[:5]}")
    position = {name: i for i, name in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for sample_id, label in labels.items():
        truth, guess = _class_name(label), _class_name(predictions[sample_id])
        if truth not in position or guess not in position:
            raise ValueError(f"'{sample_id}': class outside {list(classes)}")
        counts[position[truth], position[guess]] += 1
    return ConfusionMatrix(classes=tuple(classes), counts=counts)


def binary_view(matrix: ConfusionMatrix) -> ConfusionMatrix:
    """Collapse a category matrix to legitimate versus fraudulent.

    Any fraud category counts as fraudulent, regardless of which one.
    """
    legit = matrix.classes.index(FraudCategory.LEGITIMATE.value)
    fraud = [i for i in range(len(matrix.classes)) if i != legit]
    c = matrix.counts
    counts = np.array(
        [
            [c[legit, legit], c[legit, fraud].sum()],
            [c[fraud, legit].sum(), c[np.ix_(fraud, fraud)].sum()],
        ],
        dtype=np.int64,
    )
    return ConfusionMatrix(classes=BINARY_CLASSES, counts=counts)


def _ratio(numerator: int, denominator: int) -> Fraction:
    return Fraction(numerator, denominator) if denominator else Fraction(0)


def metrics(matrix: ConfusionMatrix) -> MetricsReport:
    """Accuracy plus support-weighted precision, recall and F1.

    Per-class precision and recall are 0 when their denominator is 0; F1 is 0
    when precision and recall are both 0.

    Raises:
        EmptyMatrix: If the matrix holds no samples
    """
    total = matrix.total
    if total == 0:
        raise EmptyMatrix("no samples to compute metrics over")
    counts = [[int(v) for v in row] for row in matrix.counts]
    n = len(matrix.classes)

    correct = sum(counts[i][i] for i in range(n))
    weighted = [Fraction(0), Fraction(0), Fraction(0)]
    per_class: dict[str, ClassMetrics] = {}
    for i, name in enumerate(matrix.classes):
        tp = counts[i][i]
        support = sum(counts[i])
        predicted = sum(counts[j][i] for j in range(n))
        precision = _ratio(tp, predicted)
        recall = _ratio(tp, support)
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else Fraction(0)
        share = Fraction(support, total)
        weighted[0] += share * precision
        weighted[1] += share * recall
        weighted[2] += share * f1
        per_class[name] = ClassMetrics(float(precision), float(recall), float(f1), support)

    return MetricsReport(
        accuracy=float(Fraction(correct, total)),
        precision_w=float(weighted[0]),
        recall_w=float(weighted[1]),
        f1_w=float(weighted[2]),
        per_class=per_class,
    )


# ====================
# Batch evaluation
# ====================


@dataclass(frozen=True)
class SampleOutcome:
    entry: CorpusEntry
    predicted: FraudCategory
    verdict: Optional[Verdict]
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.entry.id,
            "label": self.entry.label.value,
            "predicted": self.predicted.value,
            "failed": self.failed,
            "error": self.error,
            "verdict": None if self.verdict is None else self.verdict.to_dict(),
        }


@dataclass(frozen=True)
class EvaluationReport:
    binary: MetricsReport
    category: MetricsReport
    category_matrix: ConfusionMatrix
    binary_matrix: ConfusionMatrix
    outcomes: tuple[SampleOutcome, ...]
    seed: int
    test_fraction: float
    mode: str

    @property
    def failures(self) -> int:
        return sum(1 for outcome in self.outcomes if outcome.failed)

    def to_dict(self) -> dict[str, Any]:
        return {
            "summary": {
                "binary": self.binary.to_dict(),
                "category": self.category.to_dict(),
                "samples": len(self.outcomes),
                "seed": self.seed,
                "test_fraction": self.test_fraction,
                "mode": self.mode,
            },
            "per_category": {
                "category": self.category_matrix.to_dict(),
                "binary": self.binary_matrix.to_dict(),
            },
            "verdicts": [outcome.to_dict() for outcome in self.outcomes],
            "failures": self.failures,
        }


def _bundle_or_none(entry: CorpusEntry) -> Optional[ApkFeatureBundle]:
    try:
        return build_feature_bundle(entry.apk_path)
    except (TriageError, OSError) as e:
        logger.warning("sample=%s skipped from corpus index: %s", entry.id, format_error(e))
        return None


def build_corpus_index(
    entries: Sequence[CorpusEntry], worker_count: int = 1
) -> CorpusIndex:
    """Index labeled entries for the Link Analyst; unreadable APKs are left out."""
    with ThreadPoolExecutor(max_workers=max(1, worker_count)) as pool:
        bundles = list(pool.map(_bundle_or_none, entries))
    return CorpusIndex.from_bundles(
        (entry.id, entry.label, bundle)
        for entry, bundle in zip(entries, bundles)
        if bundle is not None
    )


def _run_one(
    entry: CorpusEntry,
    suite: AgentSuite,
    config: RunConfig,
    gateway: Optional[Gateway],
) -> SampleOutcome:
    try:
        bundle = build_feature_bundle(entry.apk_path)
        verdict = run_pipeline(bundle, suite, gateway, config.policy())
    except (TriageError, OSError) as e:
        logger.warning("sample=%s failed, counted as legitimate: %s", entry.id, format_error(e))
        return SampleOutcome(entry, FraudCategory.LEGITIMATE, None, error=format_error(e))
    return SampleOutcome(entry, verdict.category, verdict)


def evaluate(
    test_entries: Sequence[CorpusEntry],
    config: RunConfig,
    train_entries: Sequence[CorpusEntry] = (),
    gateway: Optional[Gateway] = None,
    now: Optional[datetime] = None,
) -> EvaluationReport:
    """Run the pipeline on every test entry and score the predictions.

    The Link Analyst's corpus index is built from ``train_entries`` only. A
    sample whose pipeline fails is predicted legitimate and flagged.

    Args:
        test_entries: Samples to score
        config: Run settings (mode, tables, workers, decision parameters)
        train_entries: Labeled samples the Link Analyst may consult
        gateway: LLM gateway for llm mode
        now: Clock for certificate checks, defaults to the current time

    Returns:
        The evaluation report

    Raises:
        TuningOverlap: If a test sample was used to tune the reference icons
        EmptyMatrix: If there are no test entries
    """
    reference_icons = load_reference_icons(config.icon_set_path)
    overlap = sorted({entry.id for entry in test_entries} & set(reference_icons.tuned_on))
    if overlap:
        raise TuningOverlap(f"test samples used for tuning: {', '.join(overlap[:5])}")
    if not test_entries:
        raise EmptyMatrix("the test set is empty")

    index = build_corpus_index(train_entries, config.worker_count) if train_entries else None
    suite_kwargs: dict[str, Any] = {} if now is None else {"now": now}
    suite = AgentSuite(
        lexicon=load_lexicon(config.lexicon_path),
        reference_icons=reference_icons,
        corpus_index=index,
        weights=dict(config.weights),
        threshold=config.decision_threshold,
        **suite_kwargs,
    )

    with ThreadPoolExecutor(max_workers=config.worker_count, thread_name_prefix="sample") as pool:
        outcomes = list(
            pool.map(lambda entry: _run_one(entry, suite, config, gateway), test_entries)
        )

    labels = {outcome.entry.id: outcome.entry.label for outcome in outcomes}
    predictions = {outcome.entry.id: outcome.predicted for outcome in outcomes}
    category_matrix = confusion(predictions, labels)
    binary_matrix = binary_view(category_matrix)
    report = EvaluationReport(
        binary=metrics(binary_matrix),
        category=metrics(category_matrix),
        category_matrix=category_matrix,
        binary_matrix=binary_matrix,
        outcomes=tuple(outcomes),
        seed=config.seed,
        test_fraction=config.test_fraction,
        mode=config.mode,
    )
    logger.info(
        "samples=%d accuracy=%.4f f1=%.4f failures=%d",
        len(outcomes),
        report.binary.accuracy,
        report.binary.f1_w,
        report.failures,
    )
    return report


@dataclass(frozen=True)
class RepeatedEvaluation:
    """Reports of one evaluation per seed and the mean of their headline metrics."""

    reports: tuple[EvaluationReport, ...]

    def mean(self, granularity: str = "binary") -> MetricsReport:
        """Average the headline metrics of every repeat; per-class figures are not averaged."""
        selected = [getattr(report, granularity) for report in self.reports]
        count = len(selected)
        return MetricsReport(
            accuracy=sum(m.accuracy for m in selected) / count,
            precision_w=sum(m.precision_w for m in selected) / count,
            recall_w=sum(m.recall_w for m in selected) / count,
            f1_w=sum(m.f1_w for m in selected) / count,
            per_class={},
        )

    def to_dict(self) -> dict[str, Any]:
        if len(self.reports) == 1:
            return self.reports[0].to_dict()
        return {
            "mean": {
                "binary": self.mean("binary").to_dict(),
                "category": self.mean("category").to_dict(),
            },
            "seeds": [report.seed for report in self.reports],
            "repeats": [report.to_dict() for report in self.reports],
        }


def run_repeats(
    corpus: Sequence[CorpusEntry],
    config: RunConfig,
    repeats: Optional[int] = None,
    gateway: Optional[Gateway] = None,
    now: Optional[datetime] = None,
) -> RepeatedEvaluation:
    """Split and evaluate once per seed ``seed, seed + 1, ...``."""
    count = config.repeats if repeats is None else repeats
    if count < 1:
        raise ValueError(f"repeats must be at least 1, got {count}")
    reports = []
    for offset in range(count):
        seed = config.seed + offset
        train, test = stratified_split(corpus, config.test_fraction, seed)
        run_config = config if seed == config.seed else replace(config, seed=seed)
        reports.append(evaluate(test, run_config, train, gateway, now))
    return RepeatedEvaluation(tuple(reports))


def write_report(payload: Mapping[str, Any], path: PathLike) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(canonical_json(payload), encoding="utf-8")
    return target


# ====================
# Tuning and reporting
# ====================


def tune_reference_icons(
    train_entries: Iterable[CorpusEntry], base_set: ReferenceIconSet
) -> ReferenceIconSet:
    """Add the icon hashes of fraudulent training samples to a reference set.

    Every fraudulent sample whose icon was inspected is recorded in
    ``tuned_on`` so that it can never be scored against the tuned set.
    """
    entries = list(base_set.entries)
    known = {entry.ahash64 for entry in entries}
    tuned_on = list(base_set.tuned_on)
    for entry in train_entries:
        if not entry.label.is_fraud:
            continue
        bundle = _bundle_or_none(entry)
        if bundle is None or bundle.icon is None:
            continue
        tuned_on.append(entry.id)
        if bundle.icon.ahash64 in known:
            continue
        known.add(bundle.icon.ahash64)
        entries.append(
            ReferenceIcon(
                ahash64=bundle.icon.ahash64, category=entry.label, label=f"tuned:{entry.id}"
            )
        )
    logger.info("reference icons: %d -> %d", len(base_set.entries), len(entries))
    return ReferenceIconSet(entries=tuple(entries), tuned_on=tuple(sorted(set(tuned_on))))


TABLE_COLUMNS = ("ACC(%)", "Precision(%)", "Recall(%)", "F1(%)")


def format_table(report: MetricsReport, label: str = "apk-triage") -> str:
    """Render headline metrics as a plain-text table in percent with two decimals."""
    values = [report.accuracy, report.precision_w, report.recall_w, report.f1_w]
    width = max(len(label), len("Method"))
    header = "Method".ljust(width) + "".join(f"  {c:>12}" for c in TABLE_COLUMNS)
    row = label.ljust(width) + "".join(f"  {v * 100:>12.2f}" for v in values)
    return f"{header}\n{row}"
