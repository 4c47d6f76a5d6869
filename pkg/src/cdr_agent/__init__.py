"""Clinical decision rule selection, variable extraction, and execution.

The package is organized as a library: load a rule registry, pick an
embedding/LLM provider pair (deterministic mocks ship in the box), then either
drive the pieces directly (select_cdrs / extract / execute_rule) or run the
whole pipeline through a SessionManager. An HTTP API and a CLI wrap the same
entry points.
"""

from importlib import resources as _resources

from .errors import (
    CdrAgentError,
    EmbeddingError,
    ProviderTransportError,
    RegistryLoadError,
    SessionError,
)
from .evaluation import (
    EvalReport,
    LabeledNote,
    ea_accuracy,
    f1_score,
    gen_synthetic,
    load_dataset,
    run_eval,
    save_dataset,
    sensitivity_specificity,
)
from .execution import ExecutionReport, Outcome, execute_all, execute_rule
from .extraction import (
    ExtractedVariables,
    apply_exclusions,
    build_prompt,
    extract,
    impute_negative,
    parse_extraction,
)
from .pipeline import AnalysisSession, PipelineConfig, SessionManager, Status
from .providers import (
    EmbeddingCache,
    MockEmbeddingProvider,
    MockLlmProvider,
    RemoteEmbeddingProvider,
    RemoteLlmProvider,
)
from .registry import (
    CdrDefinition,
    Registry,
    load_registry,
    selection_text,
    unused_variables,
    validate_definition,
)
from .selection import (
    SelectionConfig,
    SimilarityProfile,
    cosine_similarity,
    embed,
    fit_gaussian,
    qq_points,
    select_cdrs,
    truncate_note,
)

__version__ = "0.1.0"


def bundled_registry_dir() -> str:
    """Path of the rule definitions shipped with the package."""
    return str(_resources.files("cdr_agent") / "data" / "cdrs")
