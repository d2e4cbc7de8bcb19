"""Dataset loading, strategy evaluation, judging, and report emission.

A run loads the seed store, replays every question through the pipeline
(scripted transcripts by default, a live provider when configured),
judges the replies against gold, and writes a machine-readable report
plus a one-row table with the five headline metric columns.
"""

from __future__ import annotations

import datetime
import json
import threading
from concurrent.futures import ThreadPoolExecutor
from concurrent.futures import TimeoutError as FuturesTimeout
from dataclasses import dataclass, field
from pathlib import Path

from .gateway import (
    Gateway,
    HttpChatProvider,
    Message,
    PricingTable,
    ProviderError,
    ProviderUnreachable,
    Role,
    RoleBinding,
    ScriptExhausted,
    ScriptedProvider,
    UsageLedger,
    relative_cost,
)
from .pipeline import (
    Call,
    ClassifierMode,
    Engine,
    FinalAnswer,
    LoopConfig,
    MalformedCallSyntax,
    PipelineTrace,
    Strategy,
    TemplateSet,
    UnparseableModelReply,
)
from .retrieval import (
    HashedBowEncoder,
    Index,
    RetrievalProfile,
    RetrievalRole,
    build_index_from_corpus,
    load_corpus,
)
from .store import Store, load_seed
from .tools import ToolRegistry, build_shipped_registry


class SchemaError(Exception):
    pass


class UnknownNicknameInItem(Exception):
    pass


@dataclass(frozen=True)
class ExpectedAnswer:
    text: str


@dataclass(frozen=True)
class ExpectedCall:
    name: str
    args: dict
    post: dict | None


@dataclass(frozen=True)
class ExpectedRefusal:
    pass


Gold = ExpectedAnswer | ExpectedCall | ExpectedRefusal


@dataclass(frozen=True)
class QAItem:
    id: str
    kind: str  # FileQA | SystemQA
    nickname: str
    query: str
    gold: Gold
    transcript: Path | None


def load_dataset(path: str | Path, store: Store) -> list[QAItem]:
    """Line-delimited records validated against the schema and the seed."""
    dataset_path = Path(path)
    base = dataset_path.parent
    items: list[QAItem] = []
    nicknames = set(store.nicknames())
    text = dataset_path.read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"line {lineno}: invalid JSON ({exc})") from None
        try:
            item_id = record["id"]
            kind = record["kind"]
            nickname = record["nickname"]
            query = record["query"]
            gold_raw = record["gold"]
        except KeyError as exc:
            raise SchemaError(f"line {lineno}: missing field {exc}") from None
        if kind not in ("FileQA", "SystemQA"):
            raise SchemaError(f"line {lineno}: kind must be FileQA or SystemQA, got {kind!r}")
        gold_type = gold_raw.get("type")
        if gold_type == "answer":
            gold: Gold = ExpectedAnswer(gold_raw["text"])
        elif gold_type == "call":
            if kind != "SystemQA":
                raise SchemaError(f"line {lineno}: call gold requires kind SystemQA")
            gold = ExpectedCall(gold_raw["name"], dict(gold_raw["args"]), gold_raw.get("post"))
        elif gold_type == "refusal":
            gold = ExpectedRefusal()
        else:
            raise SchemaError(f"line {lineno}: unknown gold type {gold_type!r}")
        if nickname not in nicknames:
            raise UnknownNicknameInItem(f"line {lineno}: {nickname!r} not in the seed bundle")
        transcript = record.get("transcript")
        items.append(
            QAItem(
                id=item_id,
                kind=kind,
                nickname=nickname,
                query=query,
                gold=gold,
                transcript=(base / transcript) if transcript else None,
            )
        )
    return items


# --- configuration ---------------------------------------------------------------


@dataclass
class EvalConfig:
    root: Path
    seed_bundle: Path
    guides_dir: Path
    templates_dir: Path | None
    pricing_path: Path
    baseline_ledger_path: Path | None
    bindings_raw: dict[str, str]
    loop: LoopConfig
    short_profile: RetrievalProfile
    long_profile: RetrievalProfile
    encoder_dimension: int
    provider: dict
    parallelism: int
    judge_mode: str
    # seconds per item; None disables. Live runs default to 120 s so one
    # hung question cannot stall the whole evaluation.
    item_timeout: float | None = None
    raw: dict = field(default_factory=dict)


def _profile(raw: dict, role: RetrievalRole) -> RetrievalProfile:
    return RetrievalProfile(role, raw["window_words"], raw["overlap_words"], raw["k"])


def load_config_dict(raw: dict, root: Path) -> EvalConfig:
    try:
        thresholds = raw["thresholds"]
        loop = LoopConfig(
            max_iterations=thresholds["max_iterations"],
            threshold_start=thresholds["start"],
            threshold_end=thresholds["end"],
            classifier_mode=ClassifierMode(raw.get("classifier_mode", "TwoLevel")),
            verifier_enabled=bool(raw.get("verifier_enabled", True)),
        )
        profiles = raw["profiles"]
        config = EvalConfig(
            root=root,
            seed_bundle=root / raw["seed_bundle"],
            guides_dir=root / raw["guides_dir"],
            templates_dir=(root / raw["templates_dir"]) if raw.get("templates_dir") else None,
            pricing_path=root / raw["pricing"],
            baseline_ledger_path=(
                root / raw["baseline_ledger"] if raw.get("baseline_ledger") else None
            ),
            bindings_raw=dict(raw["bindings"]),
            loop=loop,
            short_profile=_profile(profiles["short"], RetrievalRole.CLASSIFIER_SHORT),
            long_profile=_profile(profiles["long"], RetrievalRole.EXECUTOR_LONG),
            encoder_dimension=int(raw.get("encoder_dimension", 512)),
            provider=dict(raw.get("provider", {"type": "scripted"})),
            parallelism=int(raw.get("parallelism", 1)),
            judge_mode=raw.get("judge_mode", "NormalizedExactMatch"),
            item_timeout=raw.get("item_timeout"),
            raw=raw,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"bad config: {exc}") from exc
    return config


def load_config(path: str | Path) -> EvalConfig:
    config_path = Path(path)
    try:
        raw = json.loads(config_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{config_path}: invalid JSON ({exc})") from None
    return load_config_dict(raw, config_path.parent)


@dataclass
class Runtime:
    store: Store
    registry: ToolRegistry
    short_index: Index
    long_index: Index
    templates: TemplateSet
    pricing: PricingTable
    bindings: RoleBinding
    config: EvalConfig


def build_runtime(config: EvalConfig) -> Runtime:
    store = load_seed(config.seed_bundle)
    registry = build_shipped_registry(store)
    docs = load_corpus(config.guides_dir)
    encoder = HashedBowEncoder(config.encoder_dimension)
    short_index = build_index_from_corpus(docs, config.short_profile, encoder)
    long_index = build_index_from_corpus(docs, config.long_profile, encoder)
    templates = TemplateSet(config.templates_dir) if config.templates_dir else TemplateSet()
    pricing = PricingTable.load(config.pricing_path)
    bindings = RoleBinding.from_dict(config.bindings_raw, pricing)
    return Runtime(store, registry, short_index, long_index, templates, pricing, bindings, config)


def make_engine(runtime: Runtime, gateway: Gateway) -> Engine:
    config = runtime.config
    return Engine(
        store=runtime.store,
        registry=runtime.registry,
        short_index=runtime.short_index,
        long_index=runtime.long_index,
        short_profile=config.short_profile,
        long_profile=config.long_profile,
        gateway=gateway,
        templates=runtime.templates,
        config=config.loop,
    )


# --- judging ---------------------------------------------------------------------


def normalize(text: str) -> str:
    return " ".join(text.casefold().split())


@dataclass
class ItemOutcome:
    final: FinalAnswer | None
    trace: PipelineTrace | None
    digest_before: str
    digest_after: str
    error: str | None = None


def _check_post(post: dict | None, store: Store) -> bool:
    if post is None:
        return True
    tables = store.tables()
    if post["kind"] == "cell":
        rows = tables[post["table"]]
        row = rows.get(int(post["row_id"]))
        return row is not None and row[post["column"]] == post["equals"]
    if post["kind"] == "exists":
        where = post["where"]
        return any(
            all(row.get(k) == v for k, v in where.items())
            for row in tables[post["table"]].values()
        )
    raise SchemaError(f"unknown post-state kind {post['kind']!r}")


def _executed_call(outcome: ItemOutcome) -> Call | None:
    if outcome.trace is None or not outcome.trace.records:
        return None
    last = outcome.trace.records[-1].outcome
    return last if isinstance(last, Call) else None


def judge(
    item: QAItem,
    outcome: ItemOutcome,
    mode: str,
    registry: ToolRegistry,
    store: Store,
    overrides: dict[str, bool] | None = None,
    gateway: Gateway | None = None,
) -> tuple[bool, str]:
    """Correctness plus a one-line rationale. The override file wins."""
    if overrides and item.id in overrides:
        return overrides[item.id], "human override"
    if outcome.error is not None:
        return False, f"aborted: {outcome.error}"
    assert outcome.final is not None and outcome.trace is not None

    gold = item.gold
    if isinstance(gold, ExpectedCall):
        if outcome.final.executed is None or outcome.final.executed.status != "Ok":
            return False, "expected an executed call, none committed"
        call = _executed_call(outcome)
        if call is None:
            return False, "executed flag set but trace has no call outcome"
        validated = registry.validate(call.call, origin="harness")
        if validated.descriptor.name != gold.name:
            return False, f"called {validated.descriptor.name}, expected {gold.name}"
        if validated.args != gold.args:
            return False, f"args {validated.args} != expected {gold.args}"
        if not _check_post(gold.post, store):
            return False, "post-state assertion failed"
        return True, "call and post-state match gold"
    if isinstance(gold, ExpectedRefusal):
        if outcome.final.executed is not None:
            return False, "expected a refusal but a call was executed"
        if outcome.digest_before != outcome.digest_after:
            return False, "expected a refusal but the store changed"
        return True, "no execution and no state change"
    # ExpectedAnswer
    if mode == "NormalizedExactMatch":
        hit = normalize(gold.text) in normalize(outcome.final.text)
        return hit, ("normalized gold contained in reply" if hit else "gold text missing from reply")
    if mode in ("ScriptedJudge", "LlmJudge"):
        assert gateway is not None, f"{mode} needs a judge-capable gateway"
        prompt = (
            "Decide whether the reply answers the question consistently with the "
            f"expected answer.\nQuestion: {item.query}\nExpected: {gold.text}\n"
            f"Reply: {outcome.final.text}\nRespond with CORRECT or INCORRECT."
        )
        text, _ = gateway.complete(Role.JUDGE, [Message("user", prompt)])
        hit = text.strip().upper().startswith("CORRECT")
        return hit, f"judge said {text.strip()!r}"
    raise SchemaError(f"unknown judge mode {mode!r}")


def load_overrides(path: str | Path) -> dict[str, bool]:
    overrides: dict[str, bool] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        overrides[record["id"]] = bool(record["verdict"])
    return overrides


# --- report -----------------------------------------------------------------------

TABLE_COLUMNS = ("Acc_sys", "Acc_file", "rela. cost.", "#char_in^avg(k)", "#char_out^avg(k)")


@dataclass
class RunReport:
    strategy: str
    acc_sys: float | None
    acc_file: float | None
    n_correct_sys: int
    n_total_sys: int
    n_correct_file: int
    n_total_file: int
    avg_chars: dict[str, dict[str, float]]  # model -> {"in": chars, "out": chars}
    relative_cost_pct: float | None
    baseline: str | None
    config_echo: dict
    items: list[dict]
    generated_at: str

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "acc_sys": self.acc_sys,
            "acc_file": self.acc_file,
            "n_correct_sys": self.n_correct_sys,
            "n_total_sys": self.n_total_sys,
            "n_correct_file": self.n_correct_file,
            "n_total_file": self.n_total_file,
            "avg_chars": self.avg_chars,
            "relative_cost_pct": self.relative_cost_pct,
            "baseline": self.baseline,
            "config_echo": self.config_echo,
            "items": self.items,
            "generated_at": self.generated_at,
        }

    def table(self) -> str:
        def fmt_acc(value: float | None) -> str:
            return "n/a" if value is None else f"{value:.3f}"

        def fmt_chars(key: str) -> str:
            if not self.avg_chars:
                return "0.00k"
            return "+".join(
                f"{self.avg_chars[model][key] / 1000:.2f}k" for model in sorted(self.avg_chars)
            )

        cost = "n/a" if self.relative_cost_pct is None else f"{self.relative_cost_pct:.1f}%"
        cells = (fmt_acc(self.acc_sys), fmt_acc(self.acc_file), cost, fmt_chars("in"), fmt_chars("out"))
        widths = [max(len(h), len(c)) for h, c in zip(TABLE_COLUMNS, cells)]
        header = " | ".join(h.ljust(w) for h, w in zip(TABLE_COLUMNS, widths))
        rule = "-+-".join("-" * w for w in widths)
        row = " | ".join(c.ljust(w) for c, w in zip(cells, widths))
        return f"{header}\n{rule}\n{row}\n"


def write_report(report: RunReport, path: str | Path) -> None:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    out.with_suffix(".txt").write_text(report.table(), encoding="utf-8")


def read_report(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


# --- runner -----------------------------------------------------------------------

_ABORTABLE = (
    ProviderUnreachable,
    ProviderError,
    ScriptExhausted,
    UnparseableModelReply,
    MalformedCallSyntax,
    FileNotFoundError,
)


def run_eval(
    dataset: list[QAItem],
    config: EvalConfig,
    strategy_text: str = "cev",
    transcripts_dir: str | Path | None = None,
    overrides: dict[str, bool] | None = None,
    runtime: Runtime | None = None,
) -> RunReport:
    """Run every item, judge it, aggregate the headline metrics."""
    strategy = Strategy.parse(strategy_text)
    runtime = runtime if runtime is not None else build_runtime(config)
    ledger = UsageLedger()
    live_provider = None
    if config.provider.get("type") == "http":
        live_provider = HttpChatProvider(
            base_url=config.provider["base_url"],
            api_key_env=config.provider.get("api_key_env", "CHOPS_API_KEY"),
            timeout=float(config.provider.get("timeout", 120.0)),
        )
    item_timeout = config.item_timeout
    if item_timeout is None and live_provider is not None:
        item_timeout = 120.0
    mutation_lock = threading.Lock()
    results: dict[str, dict] = {}

    def transcript_path(item: QAItem) -> Path | None:
        if transcripts_dir is not None and item.transcript is not None:
            return Path(transcripts_dir) / item.transcript.name
        return item.transcript

    def run_item(item: QAItem) -> dict:
        if live_provider is not None:
            provider = live_provider
        else:
            path = transcript_path(item)
            if path is None or not path.exists():
                outcome = ItemOutcome(None, None, "", "", error="no transcript for scripted run")
                correct, rationale = judge(
                    item, outcome, config.judge_mode, runtime.registry, runtime.store, overrides
                )
                return _item_record(item, outcome, correct, rationale)
            provider = ScriptedProvider.from_file(path)
        gateway = Gateway(runtime.bindings, provider, runtime.pricing, ledger)
        engine = make_engine(runtime, gateway)

        # SystemQA items may mutate shared state; serialize them so digest
        # checks and post-state judging stay coherent under parallelism.
        lock = mutation_lock if item.kind == "SystemQA" else None
        if lock:
            lock.acquire()
        try:
            digest_before = runtime.store.digest()
            try:
                if item_timeout is not None:
                    # shutdown(wait=False): never block on the hung worker; it
                    # unwinds on its own once the provider timeouts fire
                    single = ThreadPoolExecutor(max_workers=1)
                    try:
                        future = single.submit(
                            engine.run, item.nickname, item.query, strategy,
                            question_label=item.id,
                        )
                        final, trace = future.result(timeout=item_timeout)
                    finally:
                        single.shutdown(wait=False)
                else:
                    final, trace = engine.run(
                        item.nickname, item.query, strategy, question_label=item.id
                    )
                outcome = ItemOutcome(final, trace, digest_before, runtime.store.digest())
            except FuturesTimeout:
                outcome = ItemOutcome(
                    None, None, digest_before, runtime.store.digest(),
                    error=f"timeout after {item_timeout} s",
                )
            except _ABORTABLE as exc:
                outcome = ItemOutcome(
                    None, getattr(exc, "partial_trace", None),
                    digest_before, runtime.store.digest(),
                    error=f"{type(exc).__name__}: {exc}",
                )
            correct, rationale = judge(
                item, outcome, config.judge_mode, runtime.registry, runtime.store,
                overrides, gateway,
            )
        finally:
            if lock:
                lock.release()
        return _item_record(item, outcome, correct, rationale)

    if config.parallelism > 1:
        with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
            for item, record in zip(dataset, pool.map(run_item, dataset)):
                results[item.id] = record
    else:
        for item in dataset:
            results[item.id] = run_item(item)

    item_records = [results[item.id] for item in dataset]
    n_sys = sum(1 for r in item_records if r["kind"] == "SystemQA")
    n_file = sum(1 for r in item_records if r["kind"] == "FileQA")
    c_sys = sum(1 for r in item_records if r["kind"] == "SystemQA" and r["correct"])
    c_file = sum(1 for r in item_records if r["kind"] == "FileQA" and r["correct"])

    n_total = len(dataset)
    avg_chars = {
        model: {"in": chars_in / n_total, "out": chars_out / n_total}
        for model, (chars_in, chars_out) in sorted(ledger.totals_by_model().items())
    } if n_total else {}

    rel_cost = None
    baseline_name = None
    if config.baseline_ledger_path is not None:
        baseline_records = json.loads(config.baseline_ledger_path.read_text(encoding="utf-8"))
        baseline_ledger = UsageLedger.from_totals(
            {r["model"]: (r["input_chars"], r["output_chars"]) for r in baseline_records}
        )
        rel_cost = relative_cost(ledger, baseline_ledger, runtime.pricing)
        baseline_name = config.baseline_ledger_path.name

    return RunReport(
        strategy=str(strategy),
        acc_sys=(c_sys / n_sys) if n_sys else None,
        acc_file=(c_file / n_file) if n_file else None,
        n_correct_sys=c_sys,
        n_total_sys=n_sys,
        n_correct_file=c_file,
        n_total_file=n_file,
        avg_chars=avg_chars,
        relative_cost_pct=rel_cost,
        baseline=baseline_name,
        config_echo={
            "bindings": dict(sorted(runtime.bindings.as_dict().items())),
            "thresholds": {
                "start": config.loop.threshold_start,
                "end": config.loop.threshold_end,
                "max_iterations": config.loop.max_iterations,
            },
            "classifier_mode": config.loop.classifier_mode.value,
            "verifier_enabled": config.loop.verifier_enabled,
            "profiles": {
                "short": config.short_profile.key(),
                "long": config.long_profile.key(),
            },
            "template_digests": runtime.templates.digests(),
            "judge_mode": config.judge_mode,
        },
        items=item_records,
        generated_at=datetime.datetime.now(datetime.timezone.utc).isoformat(),
    )


def _item_record(item: QAItem, outcome: ItemOutcome, correct: bool, rationale: str) -> dict:
    refused = False
    reply = None
    trace_summary = None
    if outcome.trace is not None:
        trace_summary = {
            "iterations": len(outcome.trace.records),
            "fallback_used": outcome.trace.fallback_used,
            "input_chars": outcome.trace.input_chars,
            "output_chars": outcome.trace.output_chars,
        }
    if outcome.trace is not None and outcome.final is not None:
        reply = outcome.final.text
        last_call = _executed_call(outcome)
        refused = last_call is not None and outcome.final.executed is None
    return {
        "id": item.id,
        "kind": item.kind,
        "correct": correct,
        "rationale": rationale,
        "refused": refused,
        "reply": reply,
        "trace": trace_summary,
    }
