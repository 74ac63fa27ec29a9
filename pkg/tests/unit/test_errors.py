"""Unit tests for the exception hierarchy and error formatting."""

from apk_triage.errors import (
    ArchiveIoError,
    BadChunkHeader,
    ClassTooSmall,
    CompletionTimeout,
    ConfigError,
    EmptyMatrix,
    ExtractionError,
    GatewayError,
    NotAZip,
    TableError,
    TransportError,
    TriageError,
    format_error,
)


class TestHierarchy:
    """Tests for exception inheritance."""

    def test_extraction_errors_share_a_root(self):
        """Test that extractor errors are TriageErrors."""
        assert issubclass(NotAZip, ExtractionError)
        assert issubclass(BadChunkHeader, ExtractionError)
        assert issubclass(ExtractionError, TriageError)

    def test_archive_io_error_is_an_os_error(self):
        """Test that ArchiveIoError can be caught as OSError."""
        assert issubclass(ArchiveIoError, OSError)
        assert issubclass(ArchiveIoError, TriageError)

    def test_timeout_is_a_transport_error(self):
        """Test the gateway error chain."""
        assert issubclass(CompletionTimeout, TransportError)
        assert issubclass(TransportError, GatewayError)

    def test_config_and_table_errors_are_value_errors(self):
        """Test that configuration errors can be caught as ValueError."""
        assert issubclass(ConfigError, ValueError)
        assert issubclass(TableError, ValueError)


class TestFormatError:
    """Tests for format_error."""

    def test_domain_error_leads_with_class_name(self):
        """Test that domain errors name their class first."""
        message = format_error(NotAZip("app.apk is not a ZIP archive"))

        assert message == "❌ NotAZip: app.apk is not a ZIP archive"

    def test_config_error(self):
        """Test the configuration error prefix."""
        message = format_error(ConfigError("bad mode"))

        assert message.startswith("❌ Configuration Error (ConfigError)")
        assert "bad mode" in message

    def test_archive_io_error_formats_as_domain_error(self):
        """Test that a TriageError that is also an OSError keeps its class name."""
        message = format_error(ArchiveIoError("cannot read"))

        assert message.startswith("❌ ArchiveIoError:")

    def test_file_not_found(self):
        """Test formatting of FileNotFoundError."""
        message = format_error(FileNotFoundError("missing.apk"))

        assert message == "❌ Error: missing.apk"

    def test_os_error(self):
        """Test formatting of generic OSError."""
        message = format_error(PermissionError("denied"))

        assert message.startswith("❌ System Error")

    def test_unexpected_error(self):
        """Test formatting of unknown exception types."""
        message = format_error(KeyError("boom"))

        assert message.startswith("❌ Unexpected Error (KeyError)")

    def test_cause_is_appended(self):
        """Test that a chained cause is named."""
        try:
            try:
                raise ValueError("inner")
            except ValueError as inner:
                raise EmptyMatrix("no samples") from inner
        except EmptyMatrix as e:
            message = format_error(e)

        assert message.startswith("❌ EmptyMatrix: no samples")
        assert "[caused by ValueError: inner]" in message

    def test_corpus_error_name_is_greppable(self):
        """Test that the class name can be grepped from output."""
        assert "ClassTooSmall" in format_error(ClassTooSmall("class 'scam' has 1 sample"))
