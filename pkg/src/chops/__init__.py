"""Classifier-Executor-Verifier customer service engine.

Answers user questions from guide documents or executes guarded
operations against a customer profile store, with a verification retry
loop, per-role model bindings, and character-level cost accounting.
"""

from .gateway import (
    Gateway,
    Message,
    PricingTable,
    Role,
    RoleBinding,
    ScriptEntry,
    ScriptedProvider,
    Usage,
    UsageLedger,
    cost_of,
    relative_cost,
)
from .pipeline import (
    CEV,
    EXECUTOR_ONLY,
    Engine,
    FinalAnswer,
    LoopConfig,
    PipelineTrace,
    QueryClass,
    Strategy,
    TemplateSet,
    VerifierVerdict,
    passing_threshold,
)
from .retrieval import (
    CLASSIFIER_SHORT,
    EXECUTOR_LONG,
    Chunk,
    HashedBowEncoder,
    Index,
    RetrievalProfile,
    chunk_document,
)
from .store import Store, UserProfile, basic_info_text, load_seed
from .tools import ToolCall, ToolDescriptor, ToolRegistry, build_shipped_registry

__all__ = [
    "CEV",
    "CLASSIFIER_SHORT",
    "Chunk",
    "EXECUTOR_LONG",
    "EXECUTOR_ONLY",
    "Engine",
    "FinalAnswer",
    "Gateway",
    "HashedBowEncoder",
    "Index",
    "LoopConfig",
    "Message",
    "PipelineTrace",
    "PricingTable",
    "QueryClass",
    "RetrievalProfile",
    "Role",
    "RoleBinding",
    "ScriptEntry",
    "ScriptedProvider",
    "Store",
    "Strategy",
    "TemplateSet",
    "ToolCall",
    "ToolDescriptor",
    "ToolRegistry",
    "Usage",
    "UsageLedger",
    "UserProfile",
    "VerifierVerdict",
    "basic_info_text",
    "build_shipped_registry",
    "chunk_document",
    "cost_of",
    "load_seed",
    "passing_threshold",
    "relative_cost",
]

__version__ = "0.1.0"
