"""Chat-completion providers behind one contract, plus retries, cassettes and cost accounting."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Callable, Mapping

import httpx

from .errors import (
    AuthError,
    CassetteIoError,
    CassetteMiss,
    NoRuleMatched,
    ProviderError,
    ProviderFailure,
    ProviderTimeout,
    RateLimited,
)
from .prompts import ConversationScript, PromptStage

log = logging.getLogger(__name__)

MILLION = Decimal(1_000_000)


def _dec(value) -> Decimal:
    return value if isinstance(value, Decimal) else Decimal(str(value))


@dataclass(frozen=True)
class ProviderConfig:
    provider_key: str
    model_id: str
    endpoint_url: str = ""
    temperature: float = 1.0
    seed: int | None = None
    max_output_tokens: int | None = None
    price_in_per_million: Decimal = Decimal(0)
    price_out_per_million: Decimal = Decimal(0)
    timeout: float = 120.0
    max_retries: int = 3
    backoff_base: float = 1.0
    backoff_cap: float = 30.0
    name: str = ""  # run-directory label; defaults to model_id

    def __post_init__(self):
        object.__setattr__(self, "price_in_per_million", _dec(self.price_in_per_million))
        object.__setattr__(self, "price_out_per_million", _dec(self.price_out_per_million))
        if self.price_in_per_million < 0 or self.price_out_per_million < 0:
            raise ValueError("prices must be non-negative")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if self.max_retries < 0:
            raise ValueError("max_retries must be non-negative")
        if not self.provider_key or not self.model_id:
            raise ValueError("provider_key and model_id are required")

    @property
    def label(self) -> str:
        return self.name or self.model_id

    @property
    def api_key_env(self) -> str:
        return f"RESTTSL_{re.sub(r'[^A-Z0-9]', '_', self.provider_key.upper())}_API_KEY"


@dataclass(frozen=True)
class Completion:
    content: str
    input_tokens: int = 0
    output_tokens: int = 0
    latency_ms: float = 0.0
    truncated: bool = False

    def __post_init__(self):
        if self.input_tokens < 0 or self.output_tokens < 0:
            raise ValueError("token counts must be non-negative")


def _messages_data(script_or_messages) -> list[dict]:
    messages = script_or_messages.messages if isinstance(script_or_messages, ConversationScript) else script_or_messages
    return [{"role": m.role, "content": m.content} if not isinstance(m, dict) else
            {"role": m["role"], "content": m["content"]} for m in messages]


def fingerprint(model_id: str, script_or_messages) -> str:
    payload = {"model_id": model_id, "messages": _messages_data(script_or_messages)}
    canonical = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# -- cost ---------------------------------------------------------------------


def estimate_cost(input_tokens: int, output_tokens: int, config: ProviderConfig) -> Decimal:
    if input_tokens < 0 or output_tokens < 0:
        raise ValueError("token counts must be non-negative")
    return (Decimal(input_tokens) * config.price_in_per_million
            + Decimal(output_tokens) * config.price_out_per_million) / MILLION


def format_usd(amount: Decimal, places: int = 4) -> str:
    return f"${_dec(amount).quantize(Decimal(1).scaleb(-places), rounding=ROUND_HALF_UP)}"


@dataclass(frozen=True)
class LedgerEntry:
    model_id: str
    project_id: str
    stage: str
    input_tokens: int
    output_tokens: int
    cost: Decimal

    def to_dict(self) -> dict:
        return {"model_id": self.model_id, "project_id": self.project_id, "stage": self.stage,
                "input_tokens": self.input_tokens, "output_tokens": self.output_tokens, "cost": str(self.cost)}

    @classmethod
    def from_dict(cls, data: Mapping) -> "LedgerEntry":
        return cls(data["model_id"], data["project_id"], data["stage"],
                   int(data["input_tokens"]), int(data["output_tokens"]), Decimal(str(data["cost"])))


class CostLedger:
    """Append-only usage log; totals are exact Decimal sums of the entries."""

    def __init__(self, path: Path | None = None):
        self.path = Path(path) if path else None
        self.entries: list[LedgerEntry] = []
        self._lock = threading.Lock()

    def add(self, entry: LedgerEntry) -> None:
        with self._lock:
            self.entries.append(entry)
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(entry.to_dict()) + "\n")

    def charge(self, config: ProviderConfig, project_id: str, stage: str, completion: Completion) -> LedgerEntry:
        entry = LedgerEntry(config.label, project_id, stage, completion.input_tokens, completion.output_tokens,
                            estimate_cost(completion.input_tokens, completion.output_tokens, config))
        self.add(entry)
        return entry

    def total(self) -> Decimal:
        with self._lock:
            return sum((e.cost for e in self.entries), Decimal(0))

    def totals(self) -> dict:
        out: dict[tuple, Decimal] = {}
        with self._lock:
            for e in self.entries:
                key = (e.model_id, e.project_id)
                out[key] = out.get(key, Decimal(0)) + e.cost
        return out

    @classmethod
    def load(cls, path: Path) -> "CostLedger":
        ledger = cls()
        p = Path(path)
        if p.exists():
            for line in p.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    ledger.entries.append(LedgerEntry.from_dict(json.loads(line)))
        ledger.path = p
        return ledger


# -- cassettes ----------------------------------------------------------------


@dataclass(frozen=True)
class CassetteEntry:
    fingerprint: str
    model_id: str
    messages: tuple
    completion: Completion

    def to_dict(self) -> dict:
        c = self.completion
        return {
            "fingerprint": self.fingerprint,
            "model_id": self.model_id,
            "messages": list(self.messages),
            "content": c.content,
            "usage": {"input_tokens": c.input_tokens, "output_tokens": c.output_tokens},
            "latency_ms": c.latency_ms,
            "truncated": c.truncated,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "CassetteEntry":
        usage = data.get("usage") or {}
        completion = Completion(data["content"], int(usage.get("input_tokens", 0)),
                                int(usage.get("output_tokens", 0)), float(data.get("latency_ms", 0.0)),
                                bool(data.get("truncated", False)))
        return cls(data["fingerprint"], data.get("model_id", ""), tuple(data.get("messages", ())), completion)


@dataclass
class Cassette:
    entries: dict = field(default_factory=dict)  # fingerprint -> CassetteEntry, insertion ordered

    def __len__(self):
        return len(self.entries)

    def get(self, fp: str) -> CassetteEntry | None:
        return self.entries.get(fp)

    @classmethod
    def load(cls, path: Path) -> "Cassette":
        p = Path(path)
        cassette = cls()
        if not p.exists():
            return cassette
        try:
            lines = p.read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise CassetteIoError(f"cannot read cassette {p}: {exc}") from exc
        for n, line in enumerate(lines, 1):
            if not line.strip():
                continue
            try:
                entry = CassetteEntry.from_dict(json.loads(line))
            except (ValueError, KeyError, TypeError) as exc:
                raise CassetteIoError(f"{p}:{n}: malformed cassette entry ({exc})") from exc
            cassette.entries[entry.fingerprint] = entry
        return cassette

    def save(self, path: Path) -> None:
        p = Path(path)
        text = "".join(json.dumps(e.to_dict(), ensure_ascii=False) + "\n" for e in self.entries.values())
        try:
            p.parent.mkdir(parents=True, exist_ok=True)
            tmp = p.with_name(p.name + ".tmp")
            tmp.write_text(text, encoding="utf-8")
            os.replace(tmp, p)
        except OSError as exc:
            raise CassetteIoError(f"cannot write cassette {p}: {exc}") from exc


_cassette_lock = threading.Lock()


def record(cassette_path: Path, config: ProviderConfig, script: ConversationScript, completion: Completion) -> Cassette:
    """Add one transcript to a cassette file; a repeated fingerprint replaces the old entry."""
    fp = fingerprint(config.model_id, script)
    with _cassette_lock:
        cassette = Cassette.load(cassette_path)
        if fp in cassette.entries:
            log.warning("cassette %s: overwriting entry %s", cassette_path, fp[:12])
        cassette.entries[fp] = CassetteEntry(fp, config.model_id, tuple(_messages_data(script)), completion)
        cassette.save(cassette_path)
    return cassette


# -- providers ----------------------------------------------------------------


def _rough_tokens(text: str) -> int:
    return (len(text) + 3) // 4


class MockProvider:
    """Deterministic provider answering from rules keyed by fingerprint or stage.

    Rule values may be a string, a Completion, or a callable taking the script.
    Fingerprint rules win over stage rules.
    """

    def __init__(self, rules: Mapping):
        self.rules = {(k.value if isinstance(k, PromptStage) else str(k)): v for k, v in rules.items()}
        self.calls = 0

    def complete(self, config: ProviderConfig, script: ConversationScript) -> Completion:
        self.calls += 1
        fp = fingerprint(config.model_id, script)
        stage = script.stage.value if script.stage else PromptStage.BEHAVIOR.value
        rule = self.rules.get(fp, self.rules.get(stage))
        if rule is None:
            raise NoRuleMatched(f"no mock rule for fingerprint {fp[:12]} or stage {stage}")
        if callable(rule):
            rule = rule(script)
        if isinstance(rule, Completion):
            return rule
        prompt = "".join(m.content for m in script.messages)
        return Completion(str(rule), _rough_tokens(prompt), _rough_tokens(str(rule)))


def mock_provider(rule_set: Mapping) -> MockProvider:
    return MockProvider(rule_set)


class ReplayProvider:
    def __init__(self, cassette: Cassette | Path):
        self.cassette = cassette if isinstance(cassette, Cassette) else Cassette.load(cassette)

    def complete(self, config: ProviderConfig, script: ConversationScript) -> Completion:
        fp = fingerprint(config.model_id, script)
        entry = self.cassette.get(fp)
        if entry is None:
            raise CassetteMiss(f"no recorded completion for fingerprint {fp[:12]} ({config.model_id})")
        return entry.completion


class RecordingProvider:
    def __init__(self, inner, cassette_path: Path):
        self.inner = inner
        self.cassette_path = Path(cassette_path)

    def complete(self, config: ProviderConfig, script: ConversationScript) -> Completion:
        completion = self.inner.complete(config, script)
        record(self.cassette_path, config, script, completion)
        return completion


class OpenAICompatibleProvider:
    """Adapter for the common ``/chat/completions`` wire shape.

    ``transport`` is handed to httpx, so tests can inject a mock or a transport
    that fails on any use.
    """

    def __init__(self, transport: httpx.BaseTransport | None = None, env: Mapping[str, str] | None = None):
        self.transport = transport
        self.env = os.environ if env is None else env

    def _payload(self, config: ProviderConfig, script: ConversationScript) -> dict:
        body = {"model": config.model_id, "messages": _messages_data(script), "temperature": config.temperature}
        if config.seed is not None:
            body["seed"] = config.seed
        if config.max_output_tokens is not None:
            body["max_tokens"] = config.max_output_tokens
        return body

    def complete(self, config: ProviderConfig, script: ConversationScript) -> Completion:
        key = self.env.get(config.api_key_env)
        if not key:
            raise AuthError(f"missing API key: set {config.api_key_env}")
        if not config.endpoint_url:
            raise ProviderError(f"{config.model_id}: endpoint_url not configured")
        started = time.perf_counter()
        try:
            with httpx.Client(transport=self.transport, timeout=config.timeout) as client:
                resp = client.post(config.endpoint_url, json=self._payload(config, script),
                                   headers={"Authorization": f"Bearer {key}"})
        except httpx.TimeoutException as exc:
            raise ProviderTimeout(f"{config.model_id}: {exc}") from exc
        except httpx.TransportError as exc:
            raise ProviderError(f"{config.model_id}: transport failure: {exc}", transient=True) from exc
        latency = (time.perf_counter() - started) * 1000.0

        if resp.status_code in (401, 403):
            raise AuthError(f"{config.model_id}: HTTP {resp.status_code}")
        if resp.status_code == 429:
            raise RateLimited(f"{config.model_id}: HTTP 429")
        if resp.status_code >= 500:
            raise ProviderError(f"{config.model_id}: HTTP {resp.status_code}", transient=True)
        if resp.status_code != 200:
            raise ProviderError(f"{config.model_id}: HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            data = resp.json()
            choice = data["choices"][0]
            content = choice["message"]["content"]
            usage = data.get("usage") or {}
            return Completion(
                content=content or "",
                input_tokens=int(usage.get("prompt_tokens", 0)),
                output_tokens=int(usage.get("completion_tokens", 0)),
                latency_ms=latency,
                truncated=choice.get("finish_reason") == "length",
            )
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"{config.model_id}: malformed response ({exc})") from exc


# -- send ---------------------------------------------------------------------


def backoff_delays(config: ProviderConfig) -> list[float]:
    """Sleep before retry k; exponential, capped, so never decreasing."""
    return [min(config.backoff_base * 2 ** k, config.backoff_cap) for k in range(config.max_retries)]


def send(
    config: ProviderConfig,
    script: ConversationScript,
    provider,
    ledger: CostLedger | None = None,
    project_id: str = "",
    sleep: Callable[[float], None] = time.sleep,
) -> Completion:
    delays = backoff_delays(config)
    attempt = 0
    while True:
        try:
            completion = provider.complete(config, script)
            break
        except ProviderFailure as exc:
            if not exc.transient or attempt >= config.max_retries:
                raise
            log.info("%s: transient failure (%s), retry %d/%d", config.model_id, exc, attempt + 1, config.max_retries)
            sleep(delays[attempt])
            attempt += 1
    if ledger is not None:
        stage = script.stage.value if script.stage else PromptStage.BEHAVIOR.value
        ledger.charge(config, project_id, stage, completion)
    return completion
