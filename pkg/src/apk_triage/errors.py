"""Exception hierarchy and error formatting for APK Triage."""

from typing import Optional


class TriageError(Exception):
    """Base class for every error raised by apk_triage."""


# ====================
# Extraction
# ====================


class ExtractionError(TriageError):
    """Raised when an APK or one of its entries cannot be decoded."""


class NotAZip(ExtractionError):
    """The file has no ZIP magic or no end-of-central-directory record."""


class EmptyArchive(ExtractionError):
    """The ZIP central directory lists no entries."""


class ArchiveIoError(ExtractionError, OSError):
    """The APK file (or an entry inside it) could not be read."""


class AxmlError(ExtractionError):
    """Base class for binary XML decoding errors."""


class BadChunkHeader(AxmlError):
    """A chunk header has the wrong type or inconsistent sizes."""


class TruncatedChunk(AxmlError):
    """A chunk extends past the end of the buffer."""


class BadStringIndex(AxmlError):
    """A string reference points outside the string pool."""


class MissingManifestElement(AxmlError):
    """The document decoded but has no <manifest package=...> element."""


class DexError(ExtractionError):
    """Base class for DEX decoding errors."""


class BadDexMagic(DexError):
    """The DEX header magic is not dex\\n035..039."""


class TruncatedDex(DexError):
    """A DEX offset or size points past the end of the file."""


class BadUleb128(DexError):
    """A ULEB128 value is longer than five bytes."""


class MalformedDer(ExtractionError):
    """A signature block exists but holds no parseable certificate."""


class IconDecodeError(ExtractionError):
    """A referenced icon entry has corrupt pixel data."""


class BundleError(ExtractionError):
    """The feature bundle cannot be built (manifest missing or undecodable)."""


# ====================
# LLM gateway
# ====================


class GatewayError(TriageError):
    """Base class for prompt rendering and completion errors."""


class MissingSlot(GatewayError):
    """A template references a slot that was not supplied."""

    def __init__(self, name: str):
        super().__init__(name)
        self.name = name


class AuthError(GatewayError):
    """The endpoint rejected the credential (401/403)."""


class RateLimited(GatewayError):
    """The endpoint kept answering 429 after every retry."""


class TransportError(GatewayError):
    """The request failed at the HTTP layer or returned an unusable body."""


class CompletionTimeout(TransportError):
    """The completion did not finish within the configured timeout."""


class ScriptMiss(GatewayError):
    """The scripted backend has no response for this agent and prompt."""


class Unparseable(GatewayError):
    """The response text holds no JSON object matching the finding schema."""


# ====================
# Orchestration
# ====================


class PipelineError(TriageError):
    """An internal invariant of the task loop was breached."""


class AgentContractError(PipelineError):
    """An agent was invoked without the input its contract requires."""


class AgentFailure(TriageError):
    """An agent could not produce a finding."""

    def __init__(self, agent: str, message: str) -> None:
        super().__init__(f"{agent}: {message}")
        self.agent = agent


# ====================
# Evaluation
# ====================


class CorpusError(TriageError):
    """Base class for corpus manifest and metric errors."""


class BadRecord(CorpusError):
    """A manifest line is not a JSON object with id, path and label."""


class BadLabel(CorpusError):
    """A manifest line carries a label outside the fraud category set."""


class MissingFile(CorpusError):
    """A manifest line points at an APK that does not exist."""


class DuplicateId(CorpusError):
    """Two manifest lines share an id."""


class ClassTooSmall(CorpusError):
    """A class has fewer than two samples and cannot be split."""


class KeyMismatch(CorpusError):
    """Predictions and labels cover different sample ids."""


class EmptyMatrix(CorpusError):
    """Metrics were requested for a confusion matrix with no samples."""


class TuningOverlap(CorpusError):
    """A test sample was used to tune the rule tables."""


# ====================
# Forge, tables, config
# ====================


class ForgeError(TriageError):
    """Base class for fixture forging errors."""


class InvalidWindow(ForgeError):
    """A certificate validity window ends before it starts."""


class InvalidSpec(ForgeError):
    """A forge spec violates its planted-category invariants."""


class TableError(TriageError, ValueError):
    """A lexicon or reference icon file is malformed."""


class ConfigError(TriageError, ValueError):
    """The run configuration is invalid."""


def format_error(error: Exception) -> str:
    """Format an exception with consistent error message style.

    The exception class name always leads the message so that shell users can
    grep for it (``NotAZip``, ``EmptyMatrix``...). When the error was raised
    from another exception, the cause's class name is appended.

    Args:
        error: The exception to format

    Returns:
        Formatted error message string
    """
    error_type = type(error).__name__
    cause: Optional[BaseException] = error.__cause__

    if isinstance(error, ConfigError):
        message = f"❌ Configuration Error ({error_type}): {error}"
    elif isinstance(error, TriageError):
        message = f"❌ {error_type}: {error}"
    elif isinstance(error, FileNotFoundError):
        message = f"❌ Error: {error}"
    elif isinstance(error, OSError):
        message = f"❌ System Error: {error}"
    else:
        message = f"❌ Unexpected Error ({error_type}): {error}"

    if cause is not None:
        message += f" [caused by {type(cause).__name__}: {cause}]"
    return message
