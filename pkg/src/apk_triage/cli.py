"""Command-line interface for APK Triage."""

import argparse
import logging
import random
import sys
import traceback
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional

from . import __version__
from .agents import AgentSuite
from .bundle import build_feature_bundle, bundle_to_json
from .config import RunConfig, build_config_overrides, load_run_config
from .errors import ConfigError, TriageError, format_error
from .evaluation import (
    build_corpus_index,
    format_table,
    load_corpus,
    run_repeats,
    stratified_split,
    tune_reference_icons,
    write_report,
)
from .forge import assemble_apk, check_spec, generate_corpus, planted_spec
from .models import FraudCategory
from .orchestrator import analyze_path
from .tables import load_lexicon, load_reference_icons, save_reference_icons
from .utils import DEFAULT_REPORT_NAME, canonical_json, configure_logging

logger = logging.getLogger(__name__)

EXIT_CLEAN = 0
EXIT_ERROR = 1
EXIT_FRAUD = 2

CATEGORY_CHOICES = [c.value for c in FraudCategory]


class _ArgumentParser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit 1, keeping 2 for fraud verdicts."""

    def error(self, message: str) -> None:  # type: ignore[override]
        raise ConfigError(f"{self.prog}: {message}")


def add_config_argument(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="Flat TOML config file (default: [tool.apk-triage])")


def add_run_arguments(parser: argparse.ArgumentParser) -> None:
    """Add the configuration arguments shared by every pipeline command.

    Args:
        parser: ArgumentParser or subparser to add arguments to
    """
    add_config_argument(parser)
    parser.add_argument("--mode", choices=["rule", "llm"], help="Agent mode")
    parser.add_argument("--model", dest="model_name", help="Chat model name for llm mode")
    parser.add_argument("--temperature", type=float, help="Sampling temperature")
    parser.add_argument("--endpoint", dest="endpoint_url", help="Chat-completions base URL")
    parser.add_argument("--max-iterations", type=int, help="Task loop iteration bound")
    parser.add_argument("--workers", dest="worker_count", type=int, help="Parallel APKs")
    parser.add_argument("--lexicon", dest="lexicon_path", help="Risk lexicon JSON file")
    parser.add_argument("--icon-set", dest="icon_set_path", help="Reference icon set JSON file")
    parser.add_argument("--script", dest="script_path", help="Scripted llm responses (JSON)")
    parser.add_argument("--seed", type=int, help="Split and generator seed")


def add_verbosity_argument(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "-v",
        "--verbose",
        action="count",
        default=0,
        help="Log progress to stderr (-vv for debug output)",
    )


def handle_cli_error(error: Exception, context: str = "") -> int:
    """Print a diagnostic for a failed command and return the error exit code.

    Args:
        error: The exception that occurred
        context: Optional context about what operation was being performed

    Returns:
        Exit code 1
    """
    error_msg = format_error(error)
    if error_msg:
        print(error_msg, file=sys.stderr)

    if not isinstance(error, (TriageError, OSError)):
        # Unexpected errors get a full traceback
        print(f"{context}: {error}", file=sys.stderr)
        traceback.print_exc()

    return EXIT_ERROR


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Compose defaults, the config file and command-line flags."""
    overrides = build_config_overrides(
        **{
            name: getattr(args, name, None)
            for name in (
                "mode",
                "model_name",
                "temperature",
                "endpoint_url",
                "max_iterations",
                "worker_count",
                "lexicon_path",
                "icon_set_path",
                "script_path",
                "seed",
                "test_fraction",
                "repeats",
            )
        }
    )
    return load_run_config(getattr(args, "config", None), overrides)


def parse_moment(value: Optional[str]) -> Optional[datetime]:
    """Parse an ISO 8601 timestamp; naive values are taken as UTC.

    Raises:
        ConfigError: If the value is not a timestamp
    """
    if value is None:
        return None
    try:
        moment = datetime.fromisoformat(value.replace("Z", "+00:00"))
    except ValueError as e:
        raise ConfigError(f"--now expects an ISO 8601 timestamp, got '{value}'") from e
    if moment.tzinfo is None:
        moment = moment.replace(tzinfo=timezone.utc)
    return moment


def build_suite(
    config: RunConfig, corpus_manifest: Optional[str] = None, now: Optional[datetime] = None
) -> AgentSuite:
    """Assemble the agent suite for a single-APK run."""
    index = None
    if corpus_manifest is not None:
        index = build_corpus_index(load_corpus(corpus_manifest), config.worker_count)
    kwargs: dict[str, Any] = {} if now is None else {"now": now}
    return AgentSuite(
        lexicon=load_lexicon(config.lexicon_path),
        reference_icons=load_reference_icons(config.icon_set_path),
        corpus_index=index,
        weights=dict(config.weights),
        threshold=config.decision_threshold,
        **kwargs,
    )


# ====================
# Commands
# ====================


def run_analyze(args: argparse.Namespace) -> int:
    """Triage one APK and print its verdict.

    Returns:
        0 for a legitimate verdict, 2 for a fraudulent one
    """
    config = resolve_config(args)
    suite = build_suite(config, args.corpus, parse_moment(args.now))
    verdict = analyze_path(args.apk, suite, config.build_gateway(), config.policy())
    payload = {"apk": str(args.apk), **verdict.to_dict()}
    sys.stdout.write(canonical_json(payload))
    logger.info("apk=%s category=%s", args.apk, verdict.category.value)
    return EXIT_FRAUD if verdict.is_fraud else EXIT_CLEAN


def run_evaluate(args: argparse.Namespace) -> int:
    """Split a labeled corpus, evaluate the test half and report metrics."""
    config = resolve_config(args)
    corpus = load_corpus(args.manifest)
    result = run_repeats(
        corpus, config, gateway=config.build_gateway(), now=parse_moment(args.now)
    )
    report_path = write_report(result.to_dict(), args.report)

    lines = [
        format_table(result.mean("binary"), label="apk-triage (binary)"),
        format_table(result.mean("category"), label="apk-triage (category)"),
    ]
    print("\n\n".join(lines))
    print(f"report written to {report_path}", file=sys.stderr)
    return EXIT_CLEAN


def run_extract(args: argparse.Namespace) -> int:
    """Print the canonical feature bundle of one APK."""
    resolve_config(args)
    sys.stdout.write(bundle_to_json(build_feature_bundle(args.apk)))
    return EXIT_CLEAN


def run_forge_apk(args: argparse.Namespace) -> int:
    """Forge a single fixture APK of the requested category."""
    config = resolve_config(args)
    category = FraudCategory.parse(args.category)
    lexicon = load_lexicon(config.lexicon_path)
    reference_icons = load_reference_icons(config.icon_set_path)
    spec = planted_spec(random.Random(config.seed), category, args.index, lexicon, reference_icons)
    if args.no_certificate:
        spec = replace(spec, certificate=None)
    if args.no_icon:
        spec = replace(spec, icon=None)
    if args.utf8:
        spec = replace(spec, utf8_strings=True)
    check_spec(spec, lexicon, reference_icons)
    print(assemble_apk(spec, args.out))
    return EXIT_CLEAN


def run_forge_corpus(args: argparse.Namespace) -> int:
    """Forge a labeled corpus and print its manifest path."""
    config = resolve_config(args)
    counts = {
        FraudCategory.GAMBLING: args.gambling,
        FraudCategory.SCAM: args.scam,
        FraudCategory.SEXUAL_CONTENT: args.sexual_content,
        FraudCategory.OTHER_FRAUD: args.other_fraud,
        FraudCategory.LEGITIMATE: args.legitimate,
    }
    manifest = generate_corpus(
        args.out_dir,
        seed=config.seed,
        counts=counts,
        lexicon=load_lexicon(config.lexicon_path),
        reference_icons=load_reference_icons(config.icon_set_path),
    )
    print(manifest)
    return EXIT_CLEAN


def run_tune(args: argparse.Namespace) -> int:
    """Extend the reference icon set with fraudulent training icons."""
    config = resolve_config(args)
    train, _ = stratified_split(load_corpus(args.manifest), config.test_fraction, config.seed)
    tuned = tune_reference_icons(train, load_reference_icons(config.icon_set_path))
    print(save_reference_icons(tuned, args.out))
    return EXIT_CLEAN


# ====================
# Parser
# ====================


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(
        prog="apk-triage",
        description="Multi-agent fraud triage for Android application packages",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")

    # Add shell completion support (optional - requires shtab)
    try:
        import shtab

        shtab.add_argument_to(
            parser,
            "--print-completion",
            help="Print shell completion script for the specified shell",
        )
    except ImportError:
        # shtab is not installed - skip completion support
        pass

    subparsers = parser.add_subparsers(dest="command", required=False)

    # analyze command
    cmd_analyze = subparsers.add_parser("analyze", help="Triage one APK and print its verdict")
    cmd_analyze.add_argument("apk", help="APK file")
    cmd_analyze.add_argument("--corpus", help="Labeled manifest consulted by link analysis")
    cmd_analyze.add_argument("--now", help="Pin the clock for certificate checks (ISO 8601)")
    add_run_arguments(cmd_analyze)
    add_verbosity_argument(cmd_analyze)

    # evaluate command
    cmd_evaluate = subparsers.add_parser("evaluate", help="Score the pipeline on a corpus")
    cmd_evaluate.add_argument("manifest", help="Corpus manifest (JSON lines)")
    cmd_evaluate.add_argument("--test-fraction", type=float, help="Share of each class held out")
    cmd_evaluate.add_argument("--repeats", type=int, help="Evaluate once per seed and average")
    cmd_evaluate.add_argument(
        "--report",
        default=DEFAULT_REPORT_NAME,
        help=f"JSON report path (default: {DEFAULT_REPORT_NAME})",
    )
    cmd_evaluate.add_argument("--now", help="Pin the clock for certificate checks (ISO 8601)")
    add_run_arguments(cmd_evaluate)
    add_verbosity_argument(cmd_evaluate)

    # extract command
    cmd_extract = subparsers.add_parser("extract", help="Print the extracted features of an APK")
    cmd_extract.add_argument("apk", help="APK file")
    add_config_argument(cmd_extract)
    add_verbosity_argument(cmd_extract)

    # forge command
    cmd_forge = subparsers.add_parser("forge", help="Generate synthetic fixture APKs")
    forge_sub = cmd_forge.add_subparsers(dest="forge_command", required=True)

    forge_apk = forge_sub.add_parser("apk", help="Forge one APK")
    forge_apk.add_argument("out", help="Output APK path")
    forge_apk.add_argument("--category", choices=CATEGORY_CHOICES, default="legitimate")
    forge_apk.add_argument("--seed", type=int, help="Generator seed")
    forge_apk.add_argument("--index", type=int, default=0, help="Sample index within category")
    forge_apk.add_argument("--no-certificate", action="store_true", help="Leave the APK unsigned")
    forge_apk.add_argument("--no-icon", action="store_true", help="Omit the launcher icon")
    forge_apk.add_argument("--utf8", action="store_true", help="UTF-8 manifest string pool")
    forge_apk.add_argument("--lexicon", dest="lexicon_path", help="Risk lexicon JSON file")
    forge_apk.add_argument("--icon-set", dest="icon_set_path", help="Reference icon set")
    add_config_argument(forge_apk)
    add_verbosity_argument(forge_apk)

    forge_corpus = forge_sub.add_parser("corpus", help="Forge a labeled corpus")
    forge_corpus.add_argument("out_dir", help="Output directory")
    forge_corpus.add_argument("--seed", type=int, help="Generator seed")
    forge_corpus.add_argument("--gambling", type=int, default=10)
    forge_corpus.add_argument("--scam", type=int, default=5)
    forge_corpus.add_argument("--sexual-content", type=int, default=5)
    forge_corpus.add_argument("--other-fraud", type=int, default=0)
    forge_corpus.add_argument("--legitimate", type=int, default=20)
    forge_corpus.add_argument("--lexicon", dest="lexicon_path", help="Risk lexicon JSON file")
    forge_corpus.add_argument("--icon-set", dest="icon_set_path", help="Reference icon set")
    add_config_argument(forge_corpus)
    add_verbosity_argument(forge_corpus)

    # tune command
    cmd_tune = subparsers.add_parser("tune", help="Add training icons to the reference set")
    cmd_tune.add_argument("manifest", help="Corpus manifest (JSON lines)")
    cmd_tune.add_argument("--out", required=True, help="Tuned icon set output path")
    cmd_tune.add_argument("--test-fraction", type=float, help="Share of each class held out")
    add_run_arguments(cmd_tune)
    add_verbosity_argument(cmd_tune)

    return parser


COMMANDS = {
    "analyze": run_analyze,
    "evaluate": run_evaluate,
    "extract": run_extract,
    "tune": run_tune,
}


def main(argv: Optional[list[str]] = None) -> int:
    """Main CLI entry point.

    Returns:
        Process exit code: 0 clean, 2 fraud verdict, 1 error
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as e:
        parser.print_usage(sys.stderr)
        return handle_cli_error(e, "arguments")

    if args.command is None:
        parser.print_help()
        return EXIT_CLEAN

    configure_logging(getattr(args, "verbose", 0))

    if args.command == "forge":
        handler = run_forge_apk if args.forge_command == "apk" else run_forge_corpus
    else:
        handler = COMMANDS[args.command]

    try:
        return handler(args)
    except KeyboardInterrupt:
        print("\n⚠️  Interrupted", file=sys.stderr)
        return EXIT_ERROR
    except Exception as e:
        return handle_cli_error(e, f"{args.command} command")


if __name__ == "__main__":
    sys.exit(main())
