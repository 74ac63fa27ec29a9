"""APK Triage - multi-agent fraud triage for Android application packages."""

__version__ = "0.1.0"

from .bundle import ApkFeatureBundle, build_feature_bundle
from .errors import TriageError
from .models import AgentFinding, FraudCategory, TaskKind, Verdict

__all__ = [
    "__version__",
    "ApkFeatureBundle",
    "AgentFinding",
    "FraudCategory",
    "TaskKind",
    "TriageError",
    "Verdict",
    "build_feature_bundle",
]
