"""Classifier-Executor-Verifier orchestration.

One question runs as a bounded loop: route it (two-level by default),
let the executor propose an answer or an operation call, score the
proposal with the verifier against a linearly relaxing threshold, and
either release/execute on a passing score or retry with the rejection
reason fed back into the next round's prompts. A summarizer picks among
prior proposals when every round fails; a proposal chosen that way is
never executed.
"""

from __future__ import annotations

import hashlib
import math
import re
import uuid
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

from .gateway import Gateway, Message, Role
from .retrieval import Index, RetrievalProfile, ScoredChunk
from .store import Store, UserProfile, basic_info_text
from .tools import (
    PermissionDenied,
    ToolCall,
    ToolRegistry,
    ToolResult,
    render_call,
    render_for_prompt,
)
from .tools import ArityMismatch, NotExposed, TypeMismatch, UnknownTool


class UnparseableModelReply(Exception):
    pass


class MalformedCallSyntax(Exception):
    pass


class QueryClass(int, Enum):
    BASIC_INFO = 0
    GUIDE_FILE = 1
    SYSTEM_API = 2

    @property
    def label(self) -> str:
        return {0: "BasicInfo", 1: "GuideFile", 2: "SystemApi"}[self.value]


class ClassifierMode(str, Enum):
    ONE_LEVEL = "OneLevel"
    TWO_LEVEL = "TwoLevel"


@dataclass(frozen=True)
class Answer:
    text: str


@dataclass(frozen=True)
class Call:
    call: ToolCall
    raw: str


ExecutorOutcome = Answer | Call


@dataclass(frozen=True)
class VerifierVerdict:
    score: int
    reason: str
    valid: bool

    def __post_init__(self) -> None:
        if not 1 <= self.score <= 10:
            raise ValueError("score must be in [1, 10]")
        if not self.valid and not self.reason:
            raise ValueError("invalid verdicts need a reason")


@dataclass(frozen=True)
class LoopConfig:
    max_iterations: int = 5
    threshold_start: int = 8
    threshold_end: int = 4
    classifier_mode: ClassifierMode = ClassifierMode.TWO_LEVEL
    verifier_enabled: bool = True

    def __post_init__(self) -> None:
        if not 1 <= self.threshold_end <= self.threshold_start <= 10:
            raise ValueError("need 1 <= threshold_end <= threshold_start <= 10")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


def passing_threshold(iteration: int, config: LoopConfig) -> int:
    """Linear schedule from threshold_start (iteration 1) to threshold_end
    (last iteration), rounded half-up; non-increasing in the iteration."""
    if not 1 <= iteration <= config.max_iterations:
        raise ValueError(f"iteration {iteration} outside 1..{config.max_iterations}")
    if config.max_iterations == 1:
        return config.threshold_start
    span = config.threshold_end - config.threshold_start
    value = config.threshold_start + span * (iteration - 1) / (config.max_iterations - 1)
    return int(math.floor(value + 0.5))


@dataclass(frozen=True)
class Strategy:
    kind: str  # "cev" | "executor-only" | "nvote"
    votes: int = 1

    @classmethod
    def parse(cls, text: str) -> "Strategy":
        if text == "cev":
            return cls("cev")
        if text == "executor-only":
            return cls("executor-only")
        if text.startswith("nvote:"):
            votes = int(text.split(":", 1)[1])
            if votes < 1:
                raise ValueError("nvote needs at least 1 vote")
            return cls("nvote", votes)
        raise ValueError(f"unknown strategy {text!r}")

    def __str__(self) -> str:
        return self.kind if self.kind != "nvote" else f"nvote:{self.votes}"


CEV = Strategy("cev")
EXECUTOR_ONLY = Strategy("executor-only")


@dataclass
class IterationRecord:
    index: int
    query_class: QueryClass | None
    context_summary: str
    outcome: ExecutorOutcome
    verdict: VerifierVerdict | None
    threshold: int | None
    prompts: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class FinalAnswer:
    text: str
    executed: ToolResult | None = None


@dataclass
class PipelineTrace:
    trace_id: str
    records: list[IterationRecord]
    final: FinalAnswer | None
    fallback_used: bool
    usage: dict[str, tuple[int, int]]  # model -> (input_chars, output_chars)
    strategy: str

    @property
    def input_chars(self) -> int:
        return sum(v[0] for v in self.usage.values())

    @property
    def output_chars(self) -> int:
        return sum(v[1] for v in self.usage.values())


# --- prompt templates ----------------------------------------------------------

TEMPLATE_DIR = Path(__file__).parent / "templates"
TEMPLATE_FILES = (
    "classifier_l1.txt",
    "classifier_l2.txt",
    "executor_basic.txt",
    "executor_guide.txt",
    "executor_system.txt",
    "verifier_summarizer.txt",
)
_SUMMARIZER_SPLIT = "--- SUMMARIZER ---"
_PLACEHOLDER = re.compile(r"\{(\w+)\}")


def render_template(template: str, **values: str) -> str:
    """Substitute known {name} placeholders in one pass; unknown ones stay."""
    return _PLACEHOLDER.sub(
        lambda m: values[m.group(1)] if m.group(1) in values else m.group(0), template
    )


class TemplateSet:
    """The six prompt templates, loaded from a directory of plain text files."""

    def __init__(self, directory: str | Path = TEMPLATE_DIR):
        self.directory = Path(directory)
        raw = {name: (self.directory / name).read_text(encoding="utf-8") for name in TEMPLATE_FILES}
        self.classifier_l1 = raw["classifier_l1.txt"]
        self.classifier_l2 = raw["classifier_l2.txt"]
        self.executor_basic = raw["executor_basic.txt"]
        self.executor_guide = raw["executor_guide.txt"]
        self.executor_system = raw["executor_system.txt"]
        verifier_raw = raw["verifier_summarizer.txt"]
        if _SUMMARIZER_SPLIT not in verifier_raw:
            raise ValueError(f"verifier_summarizer.txt must contain {_SUMMARIZER_SPLIT!r}")
        self.verifier, self.summarizer = (
            part.strip("\n") for part in verifier_raw.split(_SUMMARIZER_SPLIT, 1)
        )
        self._digests = {
            name: hashlib.sha256(raw[name].encode("utf-8")).hexdigest() for name in TEMPLATE_FILES
        }

    def digests(self) -> dict[str, str]:
        return dict(self._digests)


# --- reply parsing ---------------------------------------------------------------

_CALL_LINE = re.compile(r"^\s*CALL\s+(\w+)\((.*)\)\s*$")


def parse_yes_no(reply: str) -> bool | None:
    token = reply.strip().split()[0].strip(".,:;!").upper() if reply.strip() else ""
    if token in ("YES", "Y", "TRUE"):
        return True
    if token in ("NO", "N", "FALSE"):
        return False
    return None


def parse_level2(reply: str) -> QueryClass:
    """2 (or an explicit system-api marker) routes to SystemApi; everything
    else, including unparseable replies, routes to GuideFile."""
    text = reply.strip()
    first = text.split()[0].strip(".,:;!") if text else ""
    if first == "2" or first.lower() in ("systemapi", "system", "api"):
        return QueryClass.SYSTEM_API
    return QueryClass.GUIDE_FILE


def parse_call_args(raw: str) -> tuple[tuple[str, str], ...]:
    if not raw.strip():
        return ()
    pairs = []
    for part in raw.split(","):
        if "=" not in part:
            raise MalformedCallSyntax(f"argument {part.strip()!r} is not name=value")
        name, value = part.split("=", 1)
        name, value = name.strip(), value.strip()
        if not re.fullmatch(r"\w+", name):
            raise MalformedCallSyntax(f"bad parameter name {name!r}")
        if len(value) >= 2 and value[0] == value[-1] and value[0] in "'\"":
            value = value[1:-1]
        pairs.append((name, value))
    return tuple(pairs)


def parse_executor_reply(reply: str, query_class: QueryClass | None, caller_user_id: int) -> ExecutorOutcome:
    """Answer(text), or Call on the first CALL line for system-routed queries."""
    if query_class is not QueryClass.GUIDE_FILE and query_class is not QueryClass.BASIC_INFO:
        for line in reply.splitlines():
            if line.strip().startswith("CALL"):
                match = _CALL_LINE.match(line)
                if not match:
                    raise MalformedCallSyntax(line.strip())
                name, raw_args = match.group(1), match.group(2)
                args = parse_call_args(raw_args)
                return Call(ToolCall(name, args, caller_user_id), line.strip())
    return Answer(reply.strip())


_SCORE = re.compile(r"SCORE:\s*(\d+)", re.IGNORECASE)
_REASON = re.compile(r"REASON:\s*(.+)", re.IGNORECASE | re.DOTALL)


def parse_verdict(reply: str) -> tuple[int, str] | None:
    score_match = _SCORE.search(reply)
    if not score_match:
        return None
    score = int(score_match.group(1))
    if not 1 <= score <= 10:
        return None
    reason_match = _REASON.search(reply)
    reason = reason_match.group(1).strip() if reason_match else ""
    return score, reason


_CHOICE = re.compile(r"CHOOSE\s+(\d+)", re.IGNORECASE)


def parse_choice(reply: str, n_candidates: int) -> int | None:
    match = _CHOICE.search(reply)
    if not match:
        return None
    choice = int(match.group(1))
    if not 1 <= choice <= n_candidates:
        return None
    return choice


# --- context assembly ---------------------------------------------------------


def render_chunks(chunks: Sequence[ScoredChunk]) -> str:
    return "\n\n".join(f"[chunk {s.chunk.chunk_id}] {s.chunk.text}" for s in chunks)


@dataclass(frozen=True)
class ExecutorContext:
    query_class: QueryClass | None
    basic_info: str
    chunks_text: str
    catalog_text: str
    summary: str

    @property
    def text(self) -> str:
        parts = [self.basic_info]
        if self.chunks_text:
            parts.append(self.chunks_text)
        if self.catalog_text:
            parts.append(self.catalog_text)
        return "\n\n".join(parts)


EventHook = Callable[[str, dict], None]


class Engine:
    """Wires the store, tool registry, retrieval indexes, and gateway into
    the runnable question pipeline."""

    def __init__(
        self,
        store: Store,
        registry: ToolRegistry,
        short_index: Index,
        long_index: Index,
        short_profile: RetrievalProfile,
        long_profile: RetrievalProfile,
        gateway: Gateway,
        templates: TemplateSet | None = None,
        config: LoopConfig | None = None,
    ):
        self.store = store
        self.registry = registry
        self.short_index = short_index
        self.long_index = long_index
        self.short_profile = short_profile
        self.long_profile = long_profile
        self.gateway = gateway
        self.templates = templates if templates is not None else TemplateSet()
        self.config = config if config is not None else LoopConfig()

    # -- single agent steps ------------------------------------------------------

    def _complete(self, role: Role, prompt: str) -> str:
        text, _ = self.gateway.complete(role, [Message("user", prompt)])
        return text

    def classify_level1(self, query: str, basic_info: str, feedback: str) -> tuple[bool, str]:
        """True when basic info alone suffices. Returns (flag, prompt used)."""
        prompt = render_template(
            self.templates.classifier_l1, query=query, basic_info=basic_info, feedback=feedback
        )
        reply = self._complete(Role.CLASSIFIER1, prompt)
        parsed = parse_yes_no(reply)
        if parsed is None:
            reply = self._complete(Role.CLASSIFIER1, prompt + "\n\nReply with exactly YES or NO.")
            parsed = parse_yes_no(reply)
            if parsed is None:
                raise UnparseableModelReply(f"level-1 classifier reply {reply!r}")
        return parsed, prompt

    def classify_level2(
        self, query: str, short_chunks: str, catalog_render: str, feedback: str
    ) -> tuple[QueryClass, str]:
        prompt = render_template(
            self.templates.classifier_l2,
            query=query,
            chunks=short_chunks,
            catalog=catalog_render,
            feedback=feedback,
        )
        reply = self._complete(Role.CLASSIFIER2, prompt)
        return parse_level2(reply), prompt

    def build_executor_context(self, query_class: QueryClass, profile: UserProfile, query: str) -> ExecutorContext:
        basic = basic_info_text(profile)
        if query_class is QueryClass.BASIC_INFO:
            return ExecutorContext(query_class, basic, "", "", "basic-info")
        if query_class is QueryClass.GUIDE_FILE:
            scored = self.long_index.top_k(query, self.long_profile.k)
            ids = ",".join(str(s.chunk.chunk_id) for s in scored)
            return ExecutorContext(query_class, basic, render_chunks(scored), "", f"chunks[{ids}]")
        catalog = render_for_prompt(self.registry.exposed_catalog())
        return ExecutorContext(query_class, basic, "", catalog, "catalog")

    def _full_context(self, profile: UserProfile, query: str) -> ExecutorContext:
        """Everything at once: the executor-only / n-vote baseline context."""
        basic = basic_info_text(profile)
        scored = self.long_index.top_k(query, self.long_profile.k)
        catalog = render_for_prompt(self.registry.exposed_catalog())
        ids = ",".join(str(s.chunk.chunk_id) for s in scored)
        return ExecutorContext(None, basic, render_chunks(scored), catalog, f"full[{ids}]")

    def _executor_prompt(self, context: ExecutorContext, query: str, feedback: str) -> str:
        if context.query_class is QueryClass.BASIC_INFO:
            template = self.templates.executor_basic
        elif context.query_class is QueryClass.GUIDE_FILE:
            template = self.templates.executor_guide
        else:
            template = self.templates.executor_system
        return render_template(
            template,
            query=query,
            basic_info=context.basic_info,
            chunks=context.chunks_text,
            catalog=context.catalog_text,
            feedback=feedback,
        )

    def run_executor(
        self, context: ExecutorContext, query: str, feedback: str, caller_user_id: int
    ) -> tuple[ExecutorOutcome, str]:
        """May raise MalformedCallSyntax; the loop turns that into an
        automatic invalid iteration."""
        prompt = self._executor_prompt(context, query, feedback)
        reply = self._complete(Role.EXECUTOR, prompt)
        return parse_executor_reply(reply, context.query_class, caller_user_id), prompt

    def run_verifier(
        self, query: str, query_class: QueryClass | None, outcome: ExecutorOutcome, context: ExecutorContext
    ) -> tuple[int, str, str]:
        """(score, reason, prompt). Guide-routed proposals are verified with
        the retrieved chunks in view."""
        rendered_outcome = outcome.raw if isinstance(outcome, Call) else outcome.text
        prompt = render_template(
            self.templates.verifier,
            query=query,
            class_label=query_class.label if query_class else "Full",
            context=context.text,
            outcome=rendered_outcome,
        )
        reply = self._complete(Role.VERIFIER, prompt)
        parsed = parse_verdict(reply)
        if parsed is None:
            reply = self._complete(
                Role.VERIFIER, prompt + "\n\nReply exactly as:\nSCORE: <1-10>\nREASON: <text>"
            )
            parsed = parse_verdict(reply)
            if parsed is None:
                return 1, "verifier output unparseable", prompt
        score, reason = parsed
        return score, reason, prompt

    def fallback_summarize(
        self, query: str, records: Sequence[IterationRecord]
    ) -> tuple[FinalAnswer, int]:
        """Pick one prior proposal; never execute it. Returns (answer, index)."""
        lines = []
        for record in records:
            rendered = (
                record.outcome.raw if isinstance(record.outcome, Call) else record.outcome.text
            )
            score = record.verdict.score if record.verdict else 1
            lines.append(f"{record.index}. (score {score}) {rendered}")
        prompt = render_template(
            self.templates.summarizer, query=query, candidates="\n".join(lines)
        )
        reply = self._complete(Role.SUMMARIZER, prompt)
        choice = parse_choice(reply, len(records))
        if choice is None:
            # deterministic fallback: highest score, earliest on ties
            best = max(records, key=lambda r: (r.verdict.score if r.verdict else 1, -r.index))
            choice = best.index
        chosen = records[choice - 1]
        if isinstance(chosen.outcome, Call):
            suggestion = render_call(chosen.outcome.call.name, chosen.outcome.call.args)
            text = (
                "I could not verify a safe answer to this request. "
                f"Suggested action (not executed): {suggestion}"
            )
            return FinalAnswer(text=text, executed=None), choice
        return FinalAnswer(text=chosen.outcome.text, executed=None), choice

    # -- call release -------------------------------------------------------------

    def _settle_call(self, call: Call, profile: UserProfile) -> tuple[FinalAnswer, ToolResult]:
        """Authorize and execute an already-validated proposal; the reply is
        rendered from the tool result."""
        try:
            validated = self.registry.validate(call.call, origin="model")
            self.registry.authorize(validated, profile)
        except (UnknownTool, NotExposed, ArityMismatch, TypeMismatch) as exc:
            result = ToolResult("ValidationError", f"{type(exc).__name__}: {exc}", False)
            return FinalAnswer(f"That request is not something I can run: {exc}"), result
        except PermissionDenied as exc:
            result = ToolResult("PermissionDenied", str(exc), False)
            return FinalAnswer(f"Permission denied: {exc}"), result
        result = self.registry.execute(validated, profile)
        if result.status == "Ok":
            return FinalAnswer(result.payload, executed=result), result
        return FinalAnswer(f"The operation was not performed: {result.payload}"), result

    # -- full runs ------------------------------------------------------------------

    def run(
        self,
        nickname: str,
        query: str,
        strategy: Strategy = CEV,
        on_event: EventHook | None = None,
        question_label: str | None = None,
    ) -> tuple[FinalAnswer, PipelineTrace]:
        profile = self.store.profile_by_nickname(nickname)
        label = question_label or f"q-{uuid.uuid4().hex[:12]}"
        emit = on_event or (lambda stage, payload: None)
        records: list[IterationRecord] = []
        self.gateway.set_question(label)
        try:
            if strategy.kind == "cev":
                final, fallback_used = self._run_cev(profile, query, emit, records)
            else:
                final, fallback_used = self._run_vote(profile, query, strategy, emit, records)
        except Exception as exc:
            # provider failures abort the run; hand callers what happened so far
            exc.partial_trace = PipelineTrace(  # type: ignore[attr-defined]
                trace_id=label,
                records=records,
                final=None,
                fallback_used=False,
                usage=self.gateway.ledger.question_totals(label),
                strategy=str(strategy),
            )
            raise
        finally:
            usage = self.gateway.ledger.question_totals(label)
            self.gateway.set_question(None)
        trace = PipelineTrace(
            trace_id=label,
            records=records,
            final=final,
            fallback_used=fallback_used,
            usage=usage,
            strategy=str(strategy),
        )
        emit("Done", {"reply": final.text, "trace_id": trace.trace_id})
        return final, trace

    def _run_cev(
        self, profile: UserProfile, query: str, emit: EventHook,
        records: list[IterationRecord],
    ) -> tuple[FinalAnswer, bool]:
        config = self.config
        basic = basic_info_text(profile)
        catalog = render_for_prompt(self.registry.exposed_catalog())
        feedback = ""

        for iteration in range(1, config.max_iterations + 1):
            prompts: dict[str, str] = {}
            query_class: QueryClass
            if config.classifier_mode is ClassifierMode.TWO_LEVEL:
                basic_only, l1_prompt = self.classify_level1(query, basic, feedback)
                prompts["classifier_l1"] = l1_prompt
                if basic_only:
                    query_class = QueryClass.BASIC_INFO
                else:
                    short = render_chunks(self.short_index.top_k(query, self.short_profile.k))
                    query_class, l2_prompt = self.classify_level2(query, short, catalog, feedback)
                    prompts["classifier_l2"] = l2_prompt
            else:
                short = render_chunks(self.short_index.top_k(query, self.short_profile.k))
                query_class, l2_prompt = self.classify_level2(query, short, catalog, feedback)
                prompts["classifier_l2"] = l2_prompt
            emit("Classified", {"iteration": iteration, "class": query_class.label})

            context = self.build_executor_context(query_class, profile, query)
            threshold = passing_threshold(iteration, config) if config.verifier_enabled else None
            try:
                outcome, executor_prompt = self.run_executor(
                    context, query, feedback, profile.user_id
                )
            except MalformedCallSyntax as exc:
                prompts["executor"] = self._executor_prompt(context, query, feedback)
                verdict = VerifierVerdict(1, "unparseable tool call", False)
                records.append(
                    IterationRecord(
                        iteration, query_class, context.summary,
                        Answer(str(exc)), verdict, threshold, prompts,
                    )
                )
                emit("Executed", {"iteration": iteration, "outcome": "malformed-call"})
                feedback = verdict.reason
                if iteration < config.max_iterations:
                    emit("Retrying", {"iteration": iteration, "reason": feedback})
                continue
            prompts["executor"] = executor_prompt
            emit(
                "Executed",
                {
                    "iteration": iteration,
                    "outcome": "call" if isinstance(outcome, Call) else "answer",
                },
            )

            # no verifier (C-E rows): single pass, the first outcome is final;
            # _settle_call still maps an invalid call into a refusal reply
            if not config.verifier_enabled:
                records.append(
                    IterationRecord(
                        iteration, query_class, context.summary, outcome, None, None, prompts
                    )
                )
                final = self._finalize(outcome, profile)
                return final, False

            # a call that does not even validate never reaches the verifier
            if isinstance(outcome, Call):
                try:
                    self.registry.validate(outcome.call, origin="model")
                except (UnknownTool, NotExposed, ArityMismatch, TypeMismatch) as exc:
                    verdict = VerifierVerdict(1, f"invalid tool call: {exc}", False)
                    records.append(
                        IterationRecord(
                            iteration, query_class, context.summary,
                            outcome, verdict, threshold, prompts,
                        )
                    )
                    feedback = verdict.reason
                    if iteration < config.max_iterations:
                        emit("Retrying", {"iteration": iteration, "reason": feedback})
                    continue

            score, reason, verifier_prompt = self.run_verifier(query, query_class, outcome, context)
            prompts["verifier"] = verifier_prompt
            valid = score >= threshold
            verdict = VerifierVerdict(score, reason if reason else ("ok" if valid else "(no reason given)"), valid)
            records.append(
                IterationRecord(
                    iteration, query_class, context.summary, outcome, verdict, threshold, prompts
                )
            )
            emit(
                "Verified",
                {"iteration": iteration, "score": score, "threshold": threshold, "valid": valid},
            )
            if valid:
                final = self._finalize(outcome, profile)
                return final, False
            feedback = verdict.reason
            if iteration < config.max_iterations:
                emit("Retrying", {"iteration": iteration, "reason": feedback})

        final, choice = self.fallback_summarize(query, records)
        emit("Fallback", {"chosen": choice})
        return final, True

    def _finalize(self, outcome: ExecutorOutcome, profile: UserProfile) -> FinalAnswer:
        if isinstance(outcome, Answer):
            return FinalAnswer(outcome.text)
        final, _ = self._settle_call(outcome, profile)
        return final

    def _run_vote(
        self, profile: UserProfile, query: str, strategy: Strategy, emit: EventHook,
        records: list[IterationRecord],
    ) -> tuple[FinalAnswer, bool]:
        votes = strategy.votes if strategy.kind == "nvote" else 1
        context = self._full_context(profile, query)
        prompt = self._executor_prompt(context, query, "")
        replies = [self._complete(Role.EXECUTOR, prompt) for _ in range(votes)]
        winner = _majority(replies)
        emit("Executed", {"iteration": 1, "outcome": "vote", "votes": votes})
        try:
            outcome = parse_executor_reply(winner, None, profile.user_id)
        except MalformedCallSyntax as exc:
            outcome = Answer(winner.strip())
            final = FinalAnswer(f"That request could not be parsed: {exc}")
        else:
            final = self._finalize(outcome, profile)
        records.append(
            IterationRecord(1, None, context.summary, outcome, None, None, {"executor": prompt})
        )
        return final, False


def _majority(replies: Sequence[str]) -> str:
    """Majority vote on whitespace/case-normalized replies; ties go to the
    earliest sample."""
    def norm(text: str) -> str:
        return " ".join(text.casefold().split())

    counts: dict[str, int] = {}
    for reply in replies:
        counts[norm(reply)] = counts.get(norm(reply), 0) + 1
    best_key = None
    best_count = -1
    for reply in replies:
        key = norm(reply)
        if counts[key] > best_count:
            best_key, best_count = key, counts[key]
    for reply in replies:
        if norm(reply) == best_key:
            return reply
    return replies[0]
