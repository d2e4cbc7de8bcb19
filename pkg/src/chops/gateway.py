"""Uniform completion interface with per-role model bindings and cost math.

All agent traffic flows through one gateway so character-level usage is
accounted in a single ledger. Costs follow the character approximation
cost = k * (input_chars * price_in + output_chars * price_out) with
prices per 1M tokens; ratios between two ledgers are k-invariant.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

import requests


class Role(str, Enum):
    CLASSIFIER1 = "Classifier1"
    CLASSIFIER2 = "Classifier2"
    EXECUTOR = "Executor"
    VERIFIER = "Verifier"
    SUMMARIZER = "Summarizer"
    JUDGE = "Judge"


class ProviderUnreachable(Exception):
    pass


class ProviderError(Exception):
    def __init__(self, status: int, message: str = ""):
        super().__init__(f"provider returned status {status}: {message}")
        self.status = status


class ScriptExhausted(Exception):
    """Scripted provider has no (further) entry matching this call."""


class UnpricedModel(Exception):
    pass


class ZeroBaseline(Exception):
    pass


@dataclass(frozen=True)
class Message:
    role: str  # system | user | assistant
    content: str

    def __post_init__(self) -> None:
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"bad message role {self.role!r}")
        if not self.content and self.role != "assistant":
            raise ValueError("only assistant placeholder messages may be empty")


def serialize_messages(messages: Sequence[Message]) -> str:
    """Canonical prompt body; char counts and script matching both use it."""
    return "\n".join(f"{m.role}: {m.content}" for m in messages)


@dataclass(frozen=True)
class Usage:
    model_id: str
    input_chars: int
    output_chars: int


class UsageLedger:
    """Cumulative per-(role, model) character counts with per-question subtotals."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._entries: list[tuple[str, str, int, int, str | None]] = []

    def add(self, role: Role, usage: Usage, question: str | None = None) -> None:
        with self._lock:
            self._entries.append(
                (role.value, usage.model_id, usage.input_chars, usage.output_chars, question)
            )

    def merge(self, other: "UsageLedger") -> None:
        with other._lock:
            entries = list(other._entries)
        with self._lock:
            self._entries.extend(entries)

    @property
    def entries(self) -> list[tuple[str, str, int, int, str | None]]:
        with self._lock:
            return list(self._entries)

    def totals_by_model(self) -> dict[str, tuple[int, int]]:
        totals: dict[str, list[int]] = {}
        for _, model, chars_in, chars_out, _ in self.entries:
            bucket = totals.setdefault(model, [0, 0])
            bucket[0] += chars_in
            bucket[1] += chars_out
        return {m: (v[0], v[1]) for m, v in totals.items()}

    def totals_by_role_model(self) -> dict[tuple[str, str], tuple[int, int]]:
        totals: dict[tuple[str, str], list[int]] = {}
        for role, model, chars_in, chars_out, _ in self.entries:
            bucket = totals.setdefault((role, model), [0, 0])
            bucket[0] += chars_in
            bucket[1] += chars_out
        return {k: (v[0], v[1]) for k, v in totals.items()}

    def question_totals(self, question: str) -> dict[str, tuple[int, int]]:
        totals: dict[str, list[int]] = {}
        for _, model, chars_in, chars_out, q in self.entries:
            if q == question:
                bucket = totals.setdefault(model, [0, 0])
                bucket[0] += chars_in
                bucket[1] += chars_out
        return {m: (v[0], v[1]) for m, v in totals.items()}

    @classmethod
    def from_totals(cls, totals: dict[str, tuple[int, int]]) -> "UsageLedger":
        """Ledger seeded from per-model totals (baseline files, published averages)."""
        ledger = cls()
        for model, (chars_in, chars_out) in totals.items():
            ledger._entries.append(("Executor", model, chars_in, chars_out, None))
        return ledger


@dataclass(frozen=True)
class PricingTable:
    prices: dict[str, tuple[float, float]]  # model -> (in per 1M tok, out per 1M tok)
    k_char_to_token: float = 1.0

    def __post_init__(self) -> None:
        if self.k_char_to_token <= 0:
            raise ValueError("k_char_to_token must be > 0")
        for model, (price_in, price_out) in self.prices.items():
            if price_in < 0 or price_out < 0:
                raise ValueError(f"negative price for {model}")

    def with_k(self, k: float) -> "PricingTable":
        return PricingTable(self.prices, k)

    @classmethod
    def load(cls, path: str | Path, k_char_to_token: float = 1.0) -> "PricingTable":
        records = json.loads(Path(path).read_text(encoding="utf-8"))
        prices = {r["model"]: (float(r["in_per_1m"]), float(r["out_per_1m"])) for r in records}
        return cls(prices, k_char_to_token)


def cost_of(ledger: UsageLedger, pricing: PricingTable) -> float:
    """k * sum over models of (in_chars * price_in + out_chars * price_out) / 1e6."""
    total = 0.0
    for model, (chars_in, chars_out) in ledger.totals_by_model().items():
        if model not in pricing.prices:
            raise UnpricedModel(model)
        price_in, price_out = pricing.prices[model]
        total += chars_in * price_in / 1e6 + chars_out * price_out / 1e6
    return pricing.k_char_to_token * total


def relative_cost(ledger: UsageLedger, baseline: UsageLedger, pricing: PricingTable) -> float:
    """100 * cost(ledger) / cost(baseline); the char-to-token factor cancels."""
    baseline_cost = cost_of(baseline, pricing)
    if baseline_cost == 0:
        raise ZeroBaseline("baseline ledger prices to zero cost")
    return 100.0 * cost_of(ledger, pricing) / baseline_cost


class RoleBinding:
    """Total map from agent role to model id."""

    def __init__(self, bindings: dict[Role, str], pricing: PricingTable | None = None):
        missing = [r for r in Role if r not in bindings]
        if missing:
            raise ValueError(f"unbound roles: {[r.value for r in missing]}")
        if pricing is not None:
            unpriced = sorted({m for m in bindings.values() if m not in pricing.prices})
            if unpriced:
                raise UnpricedModel(", ".join(unpriced))
        self._bindings = dict(bindings)

    def model_for(self, role: Role) -> str:
        return self._bindings[role]

    def as_dict(self) -> dict[str, str]:
        return {role.value: model for role, model in self._bindings.items()}

    @classmethod
    def uniform(cls, model_id: str, pricing: PricingTable | None = None) -> "RoleBinding":
        return cls({role: model_id for role in Role}, pricing)

    @classmethod
    def from_dict(cls, raw: dict[str, str], pricing: PricingTable | None = None) -> "RoleBinding":
        return cls({Role(name): model for name, model in raw.items()}, pricing)


# --- providers ------------------------------------------------------------------


@dataclass(frozen=True)
class ScriptEntry:
    role: str | None  # role filter; None matches any role
    match: str  # substring of the serialized prompt; "" matches anything
    response: str


class ScriptedProvider:
    """Deterministic provider driven by an ordered entry list.

    Default mode consumes the first unconsumed entry whose role filter
    and prompt substring both match. Strict mode additionally requires
    consumption in list order: the next unconsumed entry must match.
    """

    def __init__(self, entries: Sequence[ScriptEntry], strict: bool = False):
        if not entries:
            raise ValueError("script must be non-empty")
        self._entries = list(entries)
        self._consumed = [False] * len(entries)
        self._strict = strict
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path, strict: bool = False) -> "ScriptedProvider":
        entries = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            record = json.loads(line)
            entries.append(
                ScriptEntry(record.get("role"), record.get("match", ""), record["response"])
            )
        return cls(entries, strict=strict)

    def _matches(self, entry: ScriptEntry, role: Role, prompt: str) -> bool:
        if entry.role is not None and entry.role != role.value:
            return False
        return entry.match in prompt

    def complete(self, role: Role, model_id: str, messages: Sequence[Message]) -> str:
        prompt = serialize_messages(messages)
        with self._lock:
            if self._strict:
                for i, consumed in enumerate(self._consumed):
                    if consumed:
                        continue
                    if self._matches(self._entries[i], role, prompt):
                        self._consumed[i] = True
                        return self._entries[i].response
                    raise ScriptExhausted(
                        f"strict order: next entry {i} does not match role={role.value}"
                    )
                raise ScriptExhausted(f"script fully consumed at role={role.value}")
            for i, consumed in enumerate(self._consumed):
                if not consumed and self._matches(self._entries[i], role, prompt):
                    self._consumed[i] = True
                    return self._entries[i].response
        raise ScriptExhausted(f"no unconsumed entry matches role={role.value}")


class HttpChatProvider:
    """Chat-completions client: bearer token from the environment, 2 retries."""

    def __init__(
        self,
        base_url: str,
        api_key_env: str = "CHOPS_API_KEY",
        timeout: float = 120.0,
        retries: int = 2,
        backoff: float = 1.0,
    ):
        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff

    def complete(self, role: Role, model_id: str, messages: Sequence[Message]) -> str:
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        body = {
            "model": model_id,
            "messages": [{"role": m.role, "content": m.content} for m in messages],
        }
        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                response = requests.post(
                    f"{self.base_url}/chat/completions",
                    headers=headers,
                    json=body,
                    timeout=self.timeout,
                )
            except requests.RequestException as exc:
                last_error = ProviderUnreachable(str(exc))
            else:
                if response.status_code == 200:
                    return response.json()["choices"][0]["message"]["content"]
                last_error = ProviderError(response.status_code, response.text[:200])
                if response.status_code < 500 and response.status_code != 429:
                    break
            if attempt < self.retries:
                time.sleep(self.backoff * (2**attempt))
        assert last_error is not None
        raise last_error


# --- gateway ----------------------------------------------------------------------


class Gateway:
    """Binds roles to models, forwards to a provider, accounts every call."""

    def __init__(
        self,
        bindings: RoleBinding,
        provider,
        pricing: PricingTable | None = None,
        ledger: UsageLedger | None = None,
    ):
        self.bindings = bindings
        self.provider = provider
        self.pricing = pricing
        self.ledger = ledger if ledger is not None else UsageLedger()
        self._question = threading.local()

    def set_question(self, question: str | None) -> None:
        """Tag subsequent calls on this thread with a per-question label."""
        self._question.value = question

    def current_question(self) -> str | None:
        return getattr(self._question, "value", None)

    def complete(self, role: Role, messages: Sequence[Message]) -> tuple[str, Usage]:
        model_id = self.bindings.model_for(role)
        text = self.provider.complete(role, model_id, messages)
        usage = Usage(
            model_id=model_id,
            input_chars=len(serialize_messages(messages)),
            output_chars=len(text),
        )
        self.ledger.add(role, usage, question=self.current_question())
        return text, usage
