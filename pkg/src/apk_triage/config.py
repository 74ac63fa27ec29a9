"""Configuration management for APK Triage."""

import math
import os
import sys
import time
from dataclasses import dataclass, field, fields, replace
from typing import Any, Callable, Optional

import httpx

from .agents import DEFAULT_WEIGHTS
from .errors import ConfigError
from .llm import Gateway, LiveBackend, ScriptedBackend
from .models import TaskKind
from .orchestrator import PipelinePolicy
from .templates import SYSTEM_TEXT
from .utils import (
    API_KEY_ENV,
    DECISION_THRESHOLD,
    DEFAULT_ENDPOINT,
    DEFAULT_MAX_ITERATIONS,
    DEFAULT_MAX_OUTPUT_TOKENS,
    DEFAULT_MODEL,
    DEFAULT_SEED,
    DEFAULT_TEMPERATURE,
    DEFAULT_TEST_FRACTION,
    DEFAULT_TIMEOUT,
    PathLike,
)

# Python 3.11+ has tomllib built-in, otherwise use tomli
if sys.version_info >= (3, 11):
    import tomllib
else:
    try:
        import tomli as tomllib
    except ImportError:
        tomllib = None  # type: ignore[assignment, unused-ignore]

__all__ = [
    "tomllib",
    "RunConfig",
    "load_pyproject_toml",
    "load_config_file",
    "load_run_config",
    "build_config_overrides",
    "merge_cli_args",
]

MODES = ("rule", "llm")
CREDENTIAL_KEYS = frozenset({"api-key", "api_key", "apikey", "token", "secret", "password"})
TOOL_TABLE = "apk-triage"
WEIGHT_PREFIX = "weight-"

# TOML key (kebab-case) for each task weight
WEIGHT_KEYS = {
    "package-trace": TaskKind.PACKAGE_TRACE,
    "icon-analysis": TaskKind.ICON_ANALYSIS,
    "permission-analysis": TaskKind.PERMISSION_ANALYSIS,
    "content-analysis": TaskKind.CONTENT_ANALYSIS,
    "certificate-check": TaskKind.CERTIFICATE_CHECK,
    "link-analysis": TaskKind.LINK_ANALYSIS,
}


def _default_weights() -> dict[TaskKind, float]:
    return dict(DEFAULT_WEIGHTS)


@dataclass(frozen=True)
class RunConfig:
    """Resolved settings for one CLI invocation.

    The credential itself is never stored here; only the name of the
    environment variable that holds it.
    """

    mode: str = "rule"
    model_name: str = DEFAULT_MODEL
    temperature: float = DEFAULT_TEMPERATURE
    endpoint_url: str = DEFAULT_ENDPOINT
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    worker_count: int = 4
    agent_workers: int = len(TaskKind)
    lexicon_path: Optional[str] = None
    icon_set_path: Optional[str] = None
    script_path: Optional[str] = None
    seed: int = DEFAULT_SEED
    test_fraction: float = DEFAULT_TEST_FRACTION
    repeats: int = 1
    timeout: float = DEFAULT_TIMEOUT
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS
    decision_threshold: float = DECISION_THRESHOLD
    weights: dict[TaskKind, float] = field(default_factory=_default_weights)
    api_key_env: str = API_KEY_ENV

    def __post_init__(self) -> None:
        try:
            _validate(self)
        except TypeError as e:
            raise ConfigError(f"invalid setting type: {e}") from e

    def policy(self) -> PipelinePolicy:
        """Return the orchestrator policy these settings describe."""
        return PipelinePolicy(
            max_iterations=self.max_iterations,
            mode=self.mode,
            weights=dict(self.weights),
            threshold=self.decision_threshold,
            agent_workers=self.agent_workers,
        )

    def require_credential(self) -> str:
        """Read the API credential from the environment.

        Raises:
            ConfigError: If the endpoint or the credential variable is missing
        """
        if not self.endpoint_url:
            raise ConfigError("llm mode requires endpoint_url")
        value = os.environ.get(self.api_key_env, "").strip()
        if not value:
            raise ConfigError(
                f"llm mode requires the {self.api_key_env} environment variable to hold an API key"
            )
        return value

    def build_gateway(
        self,
        transport: Optional[httpx.BaseTransport] = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> Optional[Gateway]:
        """Build the LLM gateway for llm mode; rule mode needs none.

        A ``script_path`` selects the scripted backend, which needs no
        credential. Otherwise the live backend is used.

        Raises:
            ConfigError: If the live backend lacks its endpoint or credential
        """
        if self.mode != "llm":
            return None
        if self.script_path:
            backend: Any = ScriptedBackend.from_file(self.script_path)
        else:
            backend = LiveBackend(
                endpoint_url=self.endpoint_url,
                api_key=self.require_credential(),
                timeout=self.timeout,
                transport=transport,
                sleep=sleep,
            )
        return Gateway(
            backend,
            SYSTEM_TEXT,
            model=self.model_name,
            temperature=self.temperature,
            max_output_tokens=self.max_output_tokens,
        )


def _validate(config: RunConfig) -> None:
    """Validate configuration values.

    Raises:
        ConfigError: If any value is out of range
    """
    if config.mode not in MODES:
        raise ConfigError(f"Unknown mode '{config.mode}'. Expected one of: {', '.join(MODES)}")
    if not 0.0 <= config.temperature <= 2.0:
        raise ConfigError(f"temperature must be within [0, 2], got {config.temperature}")
    for name in ("max_iterations", "worker_count", "agent_workers", "repeats", "max_output_tokens"):
        value = getattr(config, name)
        if isinstance(value, bool) or not isinstance(value, int) or value < 1:
            raise ConfigError(f"{name} must be a positive integer, got {value!r}")
    if isinstance(config.seed, bool) or not isinstance(config.seed, int) or config.seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {config.seed!r}")
    if not 0.0 < config.test_fraction < 1.0:
        raise ConfigError(f"test_fraction must be within (0, 1), got {config.test_fraction}")
    if not config.timeout > 0:
        raise ConfigError(f"timeout must be positive, got {config.timeout}")
    if not 0.0 < config.decision_threshold < 1.0:
        raise ConfigError(
            f"decision_threshold must be within (0, 1), got {config.decision_threshold}"
        )
    for kind, weight in config.weights.items():
        if math.isnan(weight) or not 0.0 <= weight <= 1.0:
            raise ConfigError(f"weight for {kind.value} must be within [0, 1], got {weight}")
    if sum(config.weights.values()) <= 0.0:
        raise ConfigError("agent weights must not all be zero")


# ====================
# Config file layers
# ====================


def _require_toml() -> None:
    if tomllib is None:
        raise ConfigError("Cannot parse TOML configuration. Install tomli: pip install tomli")


def _read_toml(path: PathLike) -> dict[str, Any]:
    with open(path, "rb") as f:
        data: dict[str, Any] = tomllib.load(f)
    return data


def load_pyproject_toml(path: PathLike = "pyproject.toml") -> dict[str, Any]:
    """Load and parse pyproject.toml.

    Returns:
        Parsed TOML data, or empty dict if file not found
    """
    _require_toml()
    try:
        return _read_toml(path)
    except FileNotFoundError:
        return {}
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path} is not valid TOML: {e}") from e


def load_config_file(path: PathLike) -> dict[str, Any]:
    """Load a flat TOML configuration file.

    Raises:
        FileNotFoundError: If the file does not exist
        ConfigError: If the file is not valid TOML
    """
    _require_toml()
    try:
        return _read_toml(path)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path} is not valid TOML: {e}") from e


def _file_fields(raw: dict[str, Any], origin: str) -> dict[str, Any]:
    """Translate kebab-case file keys into RunConfig field values.

    Raises:
        ConfigError: On credential keys, unknown keys or unknown weights
    """
    known = {f.name for f in fields(RunConfig)} - {"weights"}
    values: dict[str, Any] = {}
    weights: dict[TaskKind, float] = {}
    for key, value in raw.items():
        if key.lower() in CREDENTIAL_KEYS:
            raise ConfigError(
                f"{origin} contains '{key}'. Credentials are read from the environment only"
            )
        if key.startswith(WEIGHT_PREFIX):
            kind = WEIGHT_KEYS.get(key[len(WEIGHT_PREFIX):])
            if kind is None:
                raise ConfigError(f"{origin}: unknown weight '{key}'")
            weights[kind] = _as_float(key, value)
            continue
        name = key.replace("-", "_")
        if name not in known:
            raise ConfigError(f"{origin}: unknown setting '{key}'")
        values[name] = value
    if weights:
        values["weights"] = weights
    return values


def _as_float(key: str, value: Any) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"'{key}' must be a number, got {value!r}")
    return float(value)


def build_config_overrides(**kwargs: Optional[Any]) -> dict[str, Any]:
    """Build a config overrides dictionary from keyword arguments.

    Filters out None values, returning only the actual overrides.

    Example:
        >>> build_config_overrides(mode="llm", seed=None)
        {'mode': 'llm'}
    """
    return {k: v for k, v in kwargs.items() if v is not None}


def merge_cli_args(config: RunConfig, cli_args: dict[str, Any]) -> RunConfig:
    """Merge CLI argument overrides into config.

    CLI arguments take precedence over config file values. Weights given on
    the command line are merged per task kind.

    Raises:
        ConfigError: If an override names an unknown field or breaks validation
    """
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(cli_args) - known)
    if unknown:
        raise ConfigError(f"Unknown configuration overrides: {unknown}")
    updates = dict(cli_args)
    if "weights" in updates:
        updates["weights"] = {**config.weights, **updates["weights"]}
    return replace(config, **updates)


def load_run_config(
    path: Optional[PathLike] = None,
    overrides: Optional[dict[str, Any]] = None,
    pyproject_path: PathLike = "pyproject.toml",
) -> RunConfig:
    """Resolve defaults, the config file and CLI overrides into a RunConfig.

    With an explicit ``path`` that file is the file layer; otherwise the
    ``[tool.apk-triage]`` table of ``pyproject_path`` is used when present.

    Args:
        path: Flat TOML config file given with ``--config``
        overrides: Non-None CLI values keyed by RunConfig field name
        pyproject_path: Fallback location of the tool table

    Returns:
        The validated configuration

    Raises:
        ConfigError: If any layer is invalid
        FileNotFoundError: If ``path`` does not exist
    """
    if path is not None:
        raw = load_config_file(path)
        origin = str(path)
    else:
        raw = load_pyproject_toml(pyproject_path).get("tool", {}).get(TOOL_TABLE, {})
        origin = f"{pyproject_path} [tool.{TOOL_TABLE}]"
    if not isinstance(raw, dict):
        raise ConfigError(f"{origin} must be a table")

    file_values = _file_fields(raw, origin)
    if "weights" in file_values:
        file_values["weights"] = {**_default_weights(), **file_values["weights"]}
    try:
        config = RunConfig(**file_values)
    except TypeError as e:
        raise ConfigError(f"{origin}: {e}") from e
    return merge_cli_args(config, overrides or {})
