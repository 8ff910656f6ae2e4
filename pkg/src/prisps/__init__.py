"""Privacy-preserving complex event processing over sensor streams."""

__version__ = "0.1.0"

from .access_control import (
    ActionRule,
    Deny,
    PrivatePatternSignature,
    RestrictNodes,
    RewriteSink,
    detect_private_pattern_query,
    rewrite_query,
)
from .adversary import (
    FeatureWindows,
    MomentAlignmentObfuscator,
    ObfuscationConfig,
    PutReport,
    compute_put,
    craft_invasive_query,
    detect_pattern_from_sanitized,
    infer_attribute,
    obfuscate_features,
    select_ppm,
)
from .cep import CountSeries, SequencePattern, count_events, count_pattern_completions, evaluate_query, match_sequence
from .dp import NoiseSchedule, ScheduleConfig, SwellfishSanitizer, allocate_budget, sanitize, window_budget_check
from .events import Event, EventStream, StreamSchema, Timestamp, ingest_events
from .placement import Topology, build_operator_graph, place_operators
from .policy import PrivacyPolicy, derive_ppm_config, evaluate_policy, validate_policy
from .query import QueryAst, parse_query, print_query

__all__ = [name for name in dir() if not name.startswith("_")]
