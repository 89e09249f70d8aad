"""Detector/Resolver retrieval-augmented QA with confidence-gated retrieval."""

from .config import AgentRoles, CheckConfig, EngineConfig, config_from_dict, load_config
from .core import (
    Answer,
    Memory,
    MemoryEntry,
    Phase,
    SessionTrace,
    Task,
    TaskKind,
    TraceEvent,
    load_tasks,
    memory_append,
    memory_render,
)
from .engine import Moderator, run_session
from .evaluation import (
    BenchmarkResult,
    MetricsReport,
    RunRecord,
    compute_metrics,
    role_combinations,
    run_ablation,
    run_benchmark,
)
from .kb import HashingEmbedder, RegexTokenizer, SourceDocument, VectorIndex, build_index, chunk_document
from .llm import BackendDescriptor, CompletionResult, ScriptedBehavior, ScriptedRule
from .parsing import UNPARSED, parse_answer
from .prompts import PromptRegistry, TemplateId, system_prompt
from .scoring import AffirmativeSet, Polarity, Thresholds, affirmative_score, post_check, pre_check

__version__ = "0.1.0"
