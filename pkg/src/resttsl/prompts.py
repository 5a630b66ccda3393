"""Assemble the few-shot conversation: behavior, two worked examples, then the action prompts."""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from pathlib import Path

from .codegen import contains_case_id, load_framework
from .errors import EmptyDocument, InvalidExamplePack, PlanMismatch, ResttslError, UnknownLanguage
from .openapi_model import ApiDocument, serialize_openapi
from .templating import check_placeholders, default_template_root, render
from .tsl import TslDocument, parse_tsl, serialize_cases

LANGUAGES = ("en", "pt")
TEMPLATE_NAMES = (
    "behavior",
    "example_openapi_to_tsl",
    "example_tsl_to_tests",
    "action_generate_tsl",
    "action_generate_tests",
)
PLACEHOLDER_NAMES = ("framework", "openapi", "tsl")
DEFAULT_MAX_CASES = 15


class PromptStage(str, Enum):
    BEHAVIOR = "Behavior"
    EXAMPLE_OPENAPI_TO_TSL = "ExampleOpenApiToTsl"
    EXAMPLE_TSL_TO_TESTS = "ExampleTslToTests"
    ACTION_GENERATE_TSL = "ActionGenerateTsl"
    ACTION_GENERATE_TESTS = "ActionGenerateTests"


ACTION_STAGES = (PromptStage.ACTION_GENERATE_TSL, PromptStage.ACTION_GENERATE_TESTS)
ROLES = ("system", "user", "assistant")


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if not self.content:
            raise ValueError("message content must be non-empty")

    def to_dict(self) -> dict:
        return {"role": self.role, "content": self.content}


_EXAMPLE_SHAPE = (
    ("user", PromptStage.EXAMPLE_OPENAPI_TO_TSL),
    ("assistant", PromptStage.EXAMPLE_OPENAPI_TO_TSL),
    ("user", PromptStage.EXAMPLE_TSL_TO_TESTS),
    ("assistant", PromptStage.EXAMPLE_TSL_TO_TESTS),
)


@dataclass(frozen=True)
class ConversationScript:
    messages: tuple
    stage_labels: tuple

    def __post_init__(self):
        msgs, labels = self.messages, self.stage_labels
        if len(msgs) != len(labels):
            raise ValueError("stage_labels must parallel messages")
        if not msgs or msgs[0].role != "system" or labels[0] != PromptStage.BEHAVIOR:
            raise ValueError("a conversation starts with exactly one system message")
        if any(m.role == "system" for m in msgs[1:]):
            raise ValueError("only the first message may be a system message")
        shape = [(m.role, s) for m, s in zip(msgs[1:5], labels[1:5])]
        if shape != list(_EXAMPLE_SHAPE[: len(shape)]):
            raise ValueError("example block must alternate user/assistant for both worked examples")
        actions = labels[5:]
        if len(msgs) > 5 and len(set(actions)) != 1:
            raise ValueError("action messages must share one stage")
        for m, s in zip(msgs[5:], actions):
            if m.role != "user" or s not in ACTION_STAGES:
                raise ValueError("action messages are user messages with an action stage")

    @property
    def stage(self) -> PromptStage | None:
        return self.stage_labels[5] if len(self.stage_labels) > 5 else None

    def prefix(self) -> "ConversationScript":
        """System message plus the example block, without actions."""
        return ConversationScript(self.messages[:5], self.stage_labels[:5])

    def action_scripts(self) -> list["ConversationScript"]:
        """One sendable script per action message, each on top of the shared prefix."""
        head = self.prefix()
        return [
            ConversationScript(head.messages + (m,), head.stage_labels + (s,))
            for m, s in zip(self.messages[5:], self.stage_labels[5:])
        ]

    def to_dicts(self) -> list[dict]:
        return [{"role": m.role, "stage": s.value, "content": m.content} for m, s in zip(self.messages, self.stage_labels)]

    def dump(self) -> str:
        return json.dumps(self.to_dicts(), indent=2, ensure_ascii=False) + "\n"


@dataclass(frozen=True)
class Segment:
    group: str
    case_ids: tuple
    part: int = 1


@dataclass(frozen=True)
class SegmentPlan:
    segments: tuple

    def __post_init__(self):
        seen: set[str] = set()
        for seg in self.segments:
            if not seg.case_ids:
                raise PlanMismatch(f"segment {seg.group}#{seg.part} is empty")
            for cid in seg.case_ids:
                if cid in seen:
                    raise PlanMismatch(f"{cid} appears in two segments")
                seen.add(cid)

    @property
    def case_ids(self) -> list[str]:
        return [cid for seg in self.segments for cid in seg.case_ids]

    def __len__(self):
        return len(self.segments)


@dataclass(frozen=True)
class ExamplePack:
    example_openapi: str
    example_tsl: str
    example_tests: str
    target_framework_key: str

    def validate(self) -> None:
        for name in ("example_openapi", "example_tsl", "example_tests", "target_framework_key"):
            if not getattr(self, name).strip():
                raise InvalidExamplePack(f"{name} is empty")
        try:
            doc = parse_tsl(self.example_tsl)
        except ResttslError as exc:
            raise InvalidExamplePack(f"example_tsl does not parse: {exc}") from exc
        if not len(doc):
            raise InvalidExamplePack("example_tsl has no cases")


@dataclass(frozen=True)
class PromptSettings:
    language: str = "en"
    framework_key: str = "xunit"
    template_root: Path | None = None
    max_cases_per_segment: int = DEFAULT_MAX_CASES

    @property
    def root(self) -> Path:
        return Path(self.template_root) if self.template_root else default_template_root()


def load_example_pack(framework_key: str, pack_dir: Path | None = None) -> ExamplePack:
    """Read a pack laid out as openapi.yaml, tsl.tsl.yaml and <framework>/tests.txt."""
    base = Path(pack_dir) if pack_dir else default_template_root() / "example_pack"
    tests = base / framework_key / "tests.txt"
    if not tests.is_file():
        tests = base / "tests.txt"
    try:
        pack = ExamplePack(
            example_openapi=(base / "openapi.yaml").read_text(encoding="utf-8"),
            example_tsl=(base / "tsl.tsl.yaml").read_text(encoding="utf-8"),
            example_tests=tests.read_text(encoding="utf-8"),
            target_framework_key=framework_key,
        )
    except OSError as exc:
        raise InvalidExamplePack(f"cannot read example pack: {exc}") from exc
    pack.validate()
    return pack


def _stamp(base: Path) -> tuple:
    """(mtime, size) per template so edits on disk invalidate the cache."""
    out = []
    for name in TEMPLATE_NAMES:
        try:
            st = (base / f"{name}.txt").stat()
            out.append((st.st_mtime_ns, st.st_size))
        except OSError:
            out.append(None)
    return tuple(out)


def _templates(language: str, root: str) -> dict:
    base = Path(root) / "prompts" / language
    if not base.is_dir():
        raise UnknownLanguage(f"{language!r}: no prompt templates under {base}")
    return _read_templates(language, root, _stamp(base))


@lru_cache(maxsize=64)
def _read_templates(language: str, root: str, stamp: tuple) -> dict:
    base = Path(root) / "prompts" / language
    out = {}
    for name in TEMPLATE_NAMES:
        path = base / f"{name}.txt"
        if not path.is_file():
            raise UnknownLanguage(f"{language}: template {name}.txt missing")
        text = path.read_text(encoding="utf-8").rstrip("\n")
        check_placeholders(text, PLACEHOLDER_NAMES, f"prompts/{language}/{name}.txt")
        out[name] = text
    return out


def load_templates(settings: PromptSettings) -> dict:
    return dict(_templates(settings.language, str(settings.root)))


def _display_name(key: str, root: str) -> str:
    meta = Path(root) / "frameworks" / key / "framework.yaml"
    try:
        st = meta.stat()
        stamp = (st.st_mtime_ns, st.st_size)
    except OSError:
        stamp = None
    return _read_display_name(key, root, stamp)


@lru_cache(maxsize=64)
def _read_display_name(key: str, root: str, stamp) -> str:
    return load_framework(key, Path(root)).display_name


def _fill(settings: PromptSettings, name: str, **values) -> str:
    template = _templates(settings.language, str(settings.root))[name]
    framework = _display_name(settings.framework_key, str(settings.root))
    values.setdefault("openapi", "")
    values.setdefault("tsl", "")
    return render(template, framework=framework, **values)


def build_behavior_prompt(settings: PromptSettings) -> ChatMessage:
    return ChatMessage("system", _fill(settings, "behavior"))


def build_example_messages(pack: ExamplePack, settings: PromptSettings | None = None) -> list[ChatMessage]:
    pack.validate()
    settings = settings or PromptSettings(framework_key=pack.target_framework_key)
    return [
        ChatMessage("user", _fill(settings, "example_openapi_to_tsl", openapi=pack.example_openapi.rstrip("\n"))),
        ChatMessage("assistant", pack.example_tsl),
        ChatMessage("user", _fill(settings, "example_tsl_to_tests", tsl=pack.example_tsl.rstrip("\n"))),
        ChatMessage("assistant", pack.example_tests),
    ]


def plan_segments(doc: TslDocument, max_cases_per_segment: int = DEFAULT_MAX_CASES) -> SegmentPlan:
    if max_cases_per_segment < 1:
        raise ValueError("max_cases_per_segment must be positive")
    if not len(doc):
        raise EmptyDocument("cannot segment a document without cases")
    groups: dict[str, list[str]] = {}
    for case in doc.cases:
        groups.setdefault(case.group, []).append(case.id)
    segments = []
    for group, ids in groups.items():
        for part, start in enumerate(range(0, len(ids), max_cases_per_segment), 1):
            segments.append(Segment(group, tuple(ids[start:start + max_cases_per_segment]), part))
    return SegmentPlan(tuple(segments))


def build_action_tsl_prompt(api_slice: ApiDocument, settings: PromptSettings | None = None) -> ChatMessage:
    if not api_slice.endpoints:
        raise EmptyDocument("the OpenAPI slice has no endpoints")
    settings = settings or PromptSettings()
    return ChatMessage("user", _fill(settings, "action_generate_tsl", openapi=serialize_openapi(api_slice).rstrip("\n")))


def build_action_tests_prompts(
    doc: TslDocument, plan: SegmentPlan, settings: PromptSettings | None = None
) -> list[ChatMessage]:
    settings = settings or PromptSettings()
    known = set(doc.ids)
    stray = [cid for cid in plan.case_ids if cid not in known]
    if stray:
        raise PlanMismatch(f"plan cites ids absent from the document: {', '.join(stray)}")
    messages = []
    for seg in plan.segments:
        text = serialize_cases([doc.by_id(cid) for cid in seg.case_ids]).rstrip("\n")
        messages.append(ChatMessage("user", _fill(settings, "action_generate_tests", tsl=text)))
    return messages


def segment_ids_in(message: ChatMessage, ids) -> list[str]:
    return [cid for cid in ids if contains_case_id(message.content, cid)]


def assemble_conversation(
    settings: PromptSettings,
    pack: ExamplePack,
    subject,
    stage: PromptStage,
    plan: SegmentPlan | None = None,
) -> ConversationScript:
    """Full script for one action stage.

    ``subject`` is the OpenAPI slice for ActionGenerateTsl and the TSL document
    for ActionGenerateTests (segmented with ``plan`` or the settings' cap).
    """
    stage = PromptStage(stage)
    head = [build_behavior_prompt(settings)] + build_example_messages(pack, settings)
    labels = [PromptStage.BEHAVIOR] + [s for _, s in _EXAMPLE_SHAPE]
    if stage == PromptStage.ACTION_GENERATE_TSL:
        actions = [build_action_tsl_prompt(subject, settings)]
    elif stage == PromptStage.ACTION_GENERATE_TESTS:
        plan = plan or plan_segments(subject, settings.max_cases_per_segment)
        actions = build_action_tests_prompts(subject, plan, settings)
    else:
        raise ValueError(f"{stage.value} is not an action stage")
    return ConversationScript(tuple(head + actions), tuple(labels + [stage] * len(actions)))
