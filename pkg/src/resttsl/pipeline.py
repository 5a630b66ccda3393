"""Run configuration, the per-run artifact layout, and the stage runners behind the CLI."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .codegen import fenced_blocks, extract_test_code, merge_segments, scaffold_fallback_tests, TestSuite
from .derive import derive_cases_cp
from .errors import ConfigError, EmptyDocument, MissingArtifact, TruncatedCompletion, ValidationFailed
from .gateway import (
    Cassette,
    CostLedger,
    MockProvider,
    OpenAICompatibleProvider,
    ProviderConfig,
    RecordingProvider,
    ReplayProvider,
    send,
)
from .metrics import EQUAL_WEIGHTS, RunMetrics, ScoreRow, Weights, aggregate_projects, read_metrics_json
from .openapi_model import ApiDocument, parse_openapi
from .prompts import PromptSettings, PromptStage, assemble_conversation, load_example_pack, plan_segments
from .tsl import TslDocument, parse_tsl, serialize_tsl
from .validation import ValidationIssue, has_errors, parse_and_validate, validate_against_spec

MODES = ("live", "record", "replay", "mock")


def write_atomic(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _json(data: Any) -> str:
    return json.dumps(data, indent=2, ensure_ascii=False) + "\n"


# -- config -------------------------------------------------------------------


@dataclass(frozen=True)
class ProjectSpec:
    project_id: str
    openapi_path: Path


@dataclass(frozen=True)
class PipelineConfig:
    models: tuple
    projects: tuple
    run_root: Path
    mode: str = "mock"
    prompt_language: str = "en"
    framework_key: str = "xunit"
    max_cases_per_segment: int = 15
    weights: Weights = EQUAL_WEIGHTS
    example_pack_path: Path | None = None
    template_root: Path | None = None
    mock_rules: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.models:
            raise ConfigError("config needs at least one model")
        if not self.projects:
            raise ConfigError("config needs at least one project")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {', '.join(MODES)}")
        labels = [m.label for m in self.models]
        if len(set(labels)) != len(labels):
            raise ConfigError("model names must be unique")
        ids = [p.project_id for p in self.projects]
        if len(set(ids)) != len(ids):
            raise ConfigError("project ids must be unique")

    @property
    def prompt_settings(self) -> PromptSettings:
        return PromptSettings(self.prompt_language, self.framework_key, self.template_root, self.max_cases_per_segment)

    def model(self, label: str) -> ProviderConfig:
        for m in self.models:
            if m.label == label:
                return m
        raise ConfigError(f"unknown model {label!r}")

    def project(self, project_id: str) -> ProjectSpec:
        for p in self.projects:
            if p.project_id == project_id:
                return p
        raise ConfigError(f"unknown project {project_id!r}")

    def with_overrides(self, **changes) -> "PipelineConfig":
        data = {k: getattr(self, k) for k in self.__dataclass_fields__}
        data.update({k: v for k, v in changes.items() if v is not None})
        return PipelineConfig(**data)

    @classmethod
    def from_dict(cls, data: Mapping, base_dir: Path) -> "PipelineConfig":
        base = Path(base_dir)

        def rel(p):
            return None if p in (None, "") else (base / p).resolve()

        try:
            models = tuple(ProviderConfig(**m) for m in data.get("models") or [])
            projects = tuple(ProjectSpec(str(p["id"]), rel(p["openapi"])) for p in data.get("projects") or [])
        except (TypeError, KeyError, ValueError) as exc:
            raise ConfigError(f"bad model or project entry: {exc}") from exc
        w = data.get("weights")
        weights = Weights.normalized(float(w["sr"]), float(w["c"]), float(w["m"])) if w else EQUAL_WEIGHTS
        rules = {}
        for stage, spec in (data.get("mock") or {}).get("rules", {}).items():
            stage = PromptStage(stage).value
            rules[stage] = spec["text"] if isinstance(spec, dict) else rel(spec).read_text(encoding="utf-8")
        return cls(
            models=models,
            projects=projects,
            run_root=rel(data.get("run_root", "runs")),
            mode=data.get("mode", "mock"),
            prompt_language=data.get("prompt_language", "en"),
            framework_key=data.get("framework", "xunit"),
            max_cases_per_segment=int(data.get("max_cases_per_segment", 15)),
            weights=weights,
            example_pack_path=rel(data.get("example_pack")),
            template_root=rel(data.get("template_root")),
            mock_rules=rules,
        )

    @classmethod
    def load(cls, path: Path) -> "PipelineConfig":
        path = Path(path)
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must be a mapping")
        return cls.from_dict(data, path.parent)


# -- run layout ---------------------------------------------------------------


@dataclass(frozen=True)
class RunArtifacts:
    root: Path

    prompts = property(lambda self: self.root / "prompts")
    responses = property(lambda self: self.root / "responses")
    tsl = property(lambda self: self.root / "tsl.tsl.yaml")
    issues = property(lambda self: self.root / "tsl.issues.json")
    tests = property(lambda self: self.root / "tests")
    manifest = property(lambda self: self.root / "tests" / "manifest.json")
    metrics = property(lambda self: self.root / "metrics.json")
    cassette = property(lambda self: self.root / "cassettes" / "cassette.jsonl")
    ledger = property(lambda self: self.root / "ledger.jsonl")


def write_suite(suite: TestSuite, directory: Path) -> None:
    for f in suite.files:
        write_atomic(Path(directory) / f.file_name, f.content)
    write_atomic(Path(directory) / "manifest.json", suite.manifest_json())


def extract_tsl_text(content: str) -> str:
    """YAML from a completion: the largest fenced block when fences exist, else everything."""
    blocks, _, _ = fenced_blocks(content)
    return max(blocks, key=len) + "\n" if blocks else content


@dataclass
class StageResult:
    skipped: bool
    path: Path
    issues: list = field(default_factory=list)
    sends: int = 0


class Pipeline:
    def __init__(self, config: PipelineConfig, force: bool = False, strict: bool = False,
                 transport=None, env: Mapping[str, str] | None = None):
        self.config = config
        self.force = force
        self.strict = strict
        self.transport = transport
        self.env = env
        self._pack = None

    def artifacts(self, model: ProviderConfig, project: ProjectSpec) -> RunArtifacts:
        return RunArtifacts(self.config.run_root / model.label / project.project_id)

    def pack(self):
        if self._pack is None:
            self._pack = load_example_pack(self.config.framework_key, self.config.example_pack_path)
        return self._pack

    def provider(self, art: RunArtifacts):
        mode = self.config.mode
        if mode == "mock":
            return MockProvider(self.config.mock_rules)
        if mode == "replay":
            if not art.cassette.is_file():
                raise ConfigError(f"replay mode needs a cassette at {art.cassette}")
            return ReplayProvider(Cassette.load(art.cassette))
        live = OpenAICompatibleProvider(self.transport, self.env)
        return RecordingProvider(live, art.cassette) if mode == "record" else live

    @staticmethod
    def load_api(project: ProjectSpec) -> ApiDocument:
        try:
            text = Path(project.openapi_path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"{project.project_id}: cannot read {project.openapi_path}: {exc}") from exc
        return parse_openapi(text)

    # stages

    def gen_tsl(self, model: ProviderConfig, project: ProjectSpec) -> StageResult:
        art = self.artifacts(model, project)
        if art.tsl.exists() and not self.force:
            issues = json.loads(art.issues.read_text(encoding="utf-8")) if art.issues.exists() else []
            return StageResult(True, art.tsl, issues)
        api = self.load_api(project)
        settings = self.config.prompt_settings
        script = assemble_conversation(settings, self.pack(), api, PromptStage.ACTION_GENERATE_TSL)
        write_atomic(art.prompts / "tsl.json", script.dump())

        completion = send(model, script, self.provider(art), CostLedger(art.ledger), project.project_id)
        write_atomic(art.responses / "tsl.txt", completion.content)
        if completion.truncated:
            raise TruncatedCompletion(f"{model.label}/{project.project_id}: TSL completion was truncated")

        doc, issues = parse_and_validate(extract_tsl_text(completion.content), api)
        write_atomic(art.issues, _json([i.to_dict() for i in issues]))
        if doc is None:
            raise ValidationFailed(f"{model.label}/{project.project_id}: {issues[0].message}")
        write_atomic(art.tsl, serialize_tsl(doc))
        if self.strict and has_errors(issues):
            raise ValidationFailed(f"{model.label}/{project.project_id}: TSL has validation errors")
        return StageResult(False, art.tsl, [i.to_dict() for i in issues], 1)

    def gen_tests(self, model: ProviderConfig, project: ProjectSpec) -> StageResult:
        art = self.artifacts(model, project)
        if not art.tsl.exists():
            raise MissingArtifact(f"{art.tsl} not found; run gen-tsl first")
        if art.manifest.exists() and not self.force:
            return StageResult(True, art.manifest)
        doc = parse_tsl(art.tsl.read_text(encoding="utf-8"))
        settings = self.config.prompt_settings
        plan = plan_segments(doc, settings.max_cases_per_segment)
        script = assemble_conversation(settings, self.pack(), doc, PromptStage.ACTION_GENERATE_TESTS, plan)
        write_atomic(art.prompts / "tests.json", script.dump())

        provider, ledger = self.provider(art), CostLedger(art.ledger)
        per_segment, reports, sends = [], [], 0
        for k, (segment, seg_script) in enumerate(zip(plan.segments, script.action_scripts()), 1):
            for attempt in (1, 2):  # one segment-level retry on truncation
                completion = send(model, seg_script, provider, ledger, project.project_id)
                sends += 1
                write_atomic(art.responses / f"tests_{k:02d}.txt", completion.content)
                try:
                    files, report = extract_test_code(completion, segment)
                    break
                except TruncatedCompletion:
                    if attempt == 2:
                        raise
            per_segment.append(files)
            reports.append({"segment": k, "group": segment.group, "case_ids": list(segment.case_ids),
                            "blocks_found": report.blocks_found, "blocks_used": report.blocks_used,
                            "discarded": report.discarded_reasons})
        suite = merge_segments(per_segment, doc, self.config.framework_key)
        write_suite(suite, art.tests)
        write_atomic(art.tests / "extraction.json", _json(reports))
        return StageResult(False, art.manifest, sends=sends)

    def derive(self, project: ProjectSpec) -> StageResult:
        """Category-Partition baseline, independent of any model."""
        out = self.config.run_root / "derived" / project.project_id
        api = self.load_api(project)
        if not api.endpoints:
            raise EmptyDocument(f"{project.project_id}: the OpenAPI document declares no operations")
        doc = derive_cases_cp(api)
        write_atomic(out / "tsl.tsl.yaml", serialize_tsl(doc))
        spec_bytes = Path(project.openapi_path).read_bytes()
        write_atomic(out / "provenance.json", _json({
            "origin": "derived",
            "method": "category-partition",
            "generator": "resttsl.derive",
            "openapi": Path(project.openapi_path).name,
            "openapi_sha256": hashlib.sha256(spec_bytes).hexdigest(),
            "cases": len(doc),
        }))
        write_suite(scaffold_fallback_tests(doc, self.config.framework_key, self.config.template_root), out / "tests")
        return StageResult(False, out / "tsl.tsl.yaml")

    def validate(self, model: ProviderConfig, project: ProjectSpec) -> list[ValidationIssue]:
        art = self.artifacts(model, project)
        if not art.tsl.exists():
            raise MissingArtifact(f"{art.tsl} not found")
        issues = validate_against_spec(parse_tsl(art.tsl.read_text(encoding="utf-8")), self.load_api(project))
        write_atomic(art.issues, _json([i.to_dict() for i in issues]))
        return issues

    # scoring

    def run_metrics(self, model: ProviderConfig) -> list[RunMetrics]:
        return [read_metrics_json(self.artifacts(model, p).metrics, model.label, p.project_id)
                for p in self.config.projects]

    def score_rows(self) -> list[ScoreRow]:
        return [aggregate_projects(self.run_metrics(m), self.config.weights) for m in self.config.models]


def validate_files(openapi_path: Path, tsl_path: Path) -> list[ValidationIssue]:
    api = parse_openapi(Path(openapi_path).read_text(encoding="utf-8"))
    doc = parse_tsl(Path(tsl_path).read_text(encoding="utf-8"))
    return validate_against_spec(doc, api)


def derive_file(openapi_path: Path) -> TslDocument:
    return derive_cases_cp(parse_openapi(Path(openapi_path).read_text(encoding="utf-8")))
