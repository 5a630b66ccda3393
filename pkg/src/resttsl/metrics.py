"""Scoring, aggregation, ranking and the failure taxonomy for generated suites."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import EmptyInput, InvalidWeights, MalformedReport, ZeroTests

log = logging.getLogger(__name__)

METRICS = ("S", "SR", "C", "M")
CATEGORIES = (
    "PropertyLength",
    "Misinterpretation",
    "Authentication",
    "PropertyRequirement",
    "RequiredCharacters",
    "JsonDeserialization",
)
CATEGORY_ABBREV = dict(zip(("PL", "MI", "AU", "PR", "RC", "JD"), CATEGORIES))
_QUANTUM = Decimal("1e-9")


def _pct_ok(value: float) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and 0.0 <= value <= 100.0


def round_half_up(value, ndigits: int = 1) -> float:
    return float(Decimal(str(value)).quantize(Decimal(1).scaleb(-ndigits), rounding=ROUND_HALF_UP))


# -- basic rates --------------------------------------------------------------


def _check_counts(total: int, failed: int) -> None:
    if total == 0:
        raise ZeroTests("no tests to rate")
    if total < 0 or failed < 0 or failed > total:
        raise ValueError(f"need 0 <= failed <= total, got failed={failed} total={total}")


def success_rate(total: int, failed: int) -> float:
    _check_counts(total, failed)
    return 100.0 * (total - failed) / total


def failed_pct(total: int, failed: int, ndigits: int | None = 1) -> float:
    """Failed share in percent, rounded half-up to ``ndigits`` (None keeps full precision)."""
    _check_counts(total, failed)
    exact = Decimal(100 * failed) / Decimal(total)
    if ndigits is None:
        return float(exact)
    return float(exact.quantize(Decimal(1).scaleb(-ndigits), rounding=ROUND_HALF_UP))


# -- weights and score --------------------------------------------------------


@dataclass(frozen=True)
class Weights:
    w_sr: float = 1 / 3
    w_c: float = 1 / 3
    w_m: float = 1 / 3

    def __post_init__(self):
        ws = (self.w_sr, self.w_c, self.w_m)
        if any(not math.isfinite(w) or w < 0 for w in ws):
            raise InvalidWeights(f"weights must be finite and non-negative: {ws}")
        if abs(math.fsum(ws) - 1.0) > 1e-9:
            raise InvalidWeights(f"weights must sum to 1, got {math.fsum(ws)}")

    @classmethod
    def normalized(cls, w_sr: float, w_c: float, w_m: float) -> "Weights":
        total = math.fsum((w_sr, w_c, w_m))
        if any(w < 0 for w in (w_sr, w_c, w_m)) or not total > 0:
            raise InvalidWeights(f"cannot normalize weights {(w_sr, w_c, w_m)}")
        return cls(w_sr / total, w_c / total, w_m / total)


EQUAL_WEIGHTS = Weights()


def calculated_score(sr: float, c: float, m: float, weights: Weights = EQUAL_WEIGHTS) -> float:
    for name, v in (("SR", sr), ("C", c), ("M", m)):
        if not _pct_ok(v):
            raise ValueError(f"{name}={v!r} is not a percentage")
    if not isinstance(weights, Weights):
        raise InvalidWeights(f"expected Weights, got {type(weights).__name__}")
    return math.fsum((weights.w_sr * sr, weights.w_c * c, weights.w_m * m))


# -- runs and rows ------------------------------------------------------------


@dataclass(frozen=True)
class RunMetrics:
    model_id: str
    project_id: str
    total_tests: int
    failed_tests: int
    success_rate: float
    branch_coverage: float
    mutation_score: float
    total_cost: Decimal = Decimal(0)

    def __post_init__(self):
        object.__setattr__(self, "total_cost", Decimal(str(self.total_cost)))
        if self.total_tests < 0 or self.failed_tests < 0 or self.failed_tests > self.total_tests:
            raise ValueError(f"{self.model_id}/{self.project_id}: need 0 <= failed <= total")
        for name in ("success_rate", "branch_coverage", "mutation_score"):
            if not _pct_ok(getattr(self, name)):
                raise ValueError(f"{self.model_id}/{self.project_id}: {name} outside [0, 100]")

    def to_dict(self) -> dict:
        return {
            "total_tests": self.total_tests,
            "failed_tests": self.failed_tests,
            "branch_coverage_pct": self.branch_coverage,
            "mutation_score_pct": self.mutation_score,
            "total_cost_usd": str(self.total_cost),
        }


@dataclass(frozen=True)
class ScoreRow:
    model_id: str
    S: float
    SR: float
    C: float
    M: float
    T: float = 0.0
    TC: Decimal = Decimal(0)

    def __post_init__(self):
        object.__setattr__(self, "TC", Decimal(str(self.TC)))

    def value(self, metric: str) -> float:
        if metric not in METRICS:
            raise KeyError(metric)
        return getattr(self, metric)

    def consistent(self, weights: Weights = EQUAL_WEIGHTS, tol: float = 1e-9) -> bool:
        return abs(self.S - calculated_score(self.SR, self.C, self.M, weights)) <= tol


def aggregate_projects(runs: Sequence[RunMetrics], weights: Weights = EQUAL_WEIGHTS) -> ScoreRow:
    """Unweighted mean over projects; costs are summed."""
    if not runs:
        raise EmptyInput("no runs to aggregate")
    models = {r.model_id for r in runs}
    if len(models) != 1:
        raise ValueError(f"runs mix models: {sorted(models)}")
    n = len(runs)
    sr = math.fsum(r.success_rate for r in runs) / n
    c = math.fsum(r.branch_coverage for r in runs) / n
    m = math.fsum(r.mutation_score for r in runs) / n
    t = math.fsum(r.total_tests for r in runs) / n
    tc = sum((r.total_cost for r in runs), Decimal(0))
    row = ScoreRow(runs[0].model_id, calculated_score(sr, c, m, weights), sr, c, m, t, tc)
    assert row.consistent(weights)
    return row


# -- ranking ------------------------------------------------------------------


@dataclass(frozen=True)
class RankEntry:
    model_id: str
    value: Decimal
    delta: Decimal | None  # None for first place

    def delta_text(self, ndigits: int = 1, decimal_sep: str = ".") -> str:
        if self.delta is None:
            return "--"
        return format_number(self.delta, ndigits, decimal_sep)


@dataclass(frozen=True)
class RankingTable:
    columns: Mapping[str, tuple] = field(default_factory=dict)  # metric -> tuple of RankEntry

    def order(self, metric: str) -> list[str]:
        return [e.model_id for e in self.columns[metric]]

    def entry(self, metric: str, model_id: str) -> RankEntry:
        for e in self.columns[metric]:
            if e.model_id == model_id:
                return e
        raise KeyError(model_id)


def _as_decimal(value) -> Decimal:
    return Decimal(repr(value) if isinstance(value, float) else str(value)).quantize(_QUANTUM)


def rank_models(rows: Sequence[ScoreRow], metrics: Iterable[str] = METRICS) -> RankingTable:
    """Per metric, highest first; ties go to the lexicographically smaller model_id."""
    if not rows:
        raise EmptyInput("no rows to rank")
    columns = {}
    for metric in metrics:
        values = sorted(((_as_decimal(r.value(metric)), r.model_id) for r in rows), key=lambda p: (-p[0], p[1]))
        top = values[0][0]
        columns[metric] = tuple(RankEntry(mid, v, None if i == 0 else v - top) for i, (v, mid) in enumerate(values))
    return RankingTable(columns)


# -- failures -----------------------------------------------------------------


def parse_category(text: str) -> str:
    if text in CATEGORIES:
        return text
    if text.upper() in CATEGORY_ABBREV:
        return CATEGORY_ABBREV[text.upper()]
    raise ValueError(f"unknown failure category {text!r}")


@dataclass(frozen=True)
class FailureRecord:
    model_id: str
    project_id: str
    case_id: str
    category: str
    note: str = ""

    def __post_init__(self):
        object.__setattr__(self, "category", parse_category(self.category))


@dataclass(frozen=True)
class FailureTaxonomy:
    counts: Mapping[str, int]

    @property
    def total(self) -> int:
        return sum(self.counts.values())


def tally_failures(records: Iterable[FailureRecord]) -> FailureTaxonomy:
    counts = {c: 0 for c in CATEGORIES}
    for r in records:
        counts[r.category] += 1
    return FailureTaxonomy(counts)


def load_failures(path: Path) -> list[FailureRecord]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return [FailureRecord(d["model_id"], d.get("project_id", ""), d.get("case_id", ""), d["category"],
                              d.get("note", "")) for d in data]
    except FileNotFoundError as exc:
        raise MalformedReport(f"failures file missing: {path}") from exc
    except (ValueError, KeyError, TypeError) as exc:
        raise MalformedReport(f"{path}: {exc}") from exc


# -- ingestion ----------------------------------------------------------------


def _read_json(path: Path, role: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise MalformedReport(f"{role} report missing: {p}")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise MalformedReport(f"{role} report {p} is not JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise MalformedReport(f"{role} report {p} must be a JSON object")
    return data


def _number(data: Mapping, key: str, where: str, pct: bool = False) -> float:
    value = data.get(key)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise MalformedReport(f"{where}: {key} missing or not a number")
    if pct and not 0 <= value <= 100:
        raise MalformedReport(f"{where}: {key}={value} outside [0, 100]")
    return value


def _count(data: Mapping, key: str, where: str) -> int:
    value = data.get(key)
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise MalformedReport(f"{where}: {key} must be a non-negative integer")
    return value


def _build_run(model_id, project_id, total, failed, coverage, mutation, cost, stated_rate, where) -> RunMetrics:
    if failed > total:
        raise MalformedReport(f"{where}: failed_tests {failed} exceeds total_tests {total}")
    if total == 0:
        raise MalformedReport(f"{where}: total_tests is zero")
    sr = success_rate(total, failed)
    if stated_rate is not None and abs(stated_rate - sr) > 0.05:
        log.warning("%s: stated success rate %.2f differs from recomputed %.2f", where, stated_rate, sr)
    return RunMetrics(model_id, project_id, total, failed, sr, float(coverage), float(mutation), Decimal(str(cost)))


def ingest_run_report(
    test_report_file: Path,
    coverage_report_file: Path,
    mutation_report_file: Path,
    model_id: str = "",
    project_id: str = "",
) -> RunMetrics:
    """Build RunMetrics from three report files.

    tests:    {"total_tests": int, "failed_tests": int, "success_rate_pct"?: number, "total_cost_usd"?: number}
    coverage: {"branch_coverage_pct": number}
    mutation: {"mutation_score_pct": number}
    """
    tests = _read_json(test_report_file, "test")
    cov = _read_json(coverage_report_file, "coverage")
    mut = _read_json(mutation_report_file, "mutation")
    where = str(test_report_file)
    stated = tests.get("success_rate_pct")
    return _build_run(
        model_id or tests.get("model_id", ""),
        project_id or tests.get("project_id", ""),
        _count(tests, "total_tests", where),
        _count(tests, "failed_tests", where),
        _number(cov, "branch_coverage_pct", str(coverage_report_file), pct=True),
        _number(mut, "mutation_score_pct", str(mutation_report_file), pct=True),
        tests.get("total_cost_usd", 0),
        _number(tests, "success_rate_pct", where, pct=True) if stated is not None else None,
        where,
    )


def read_metrics_json(path: Path, model_id: str, project_id: str) -> RunMetrics:
    data = _read_json(path, "metrics")
    where = str(path)
    cost = data.get("total_cost_usd", 0)
    try:
        Decimal(str(cost))
    except ArithmeticError as exc:
        raise MalformedReport(f"{where}: total_cost_usd is not a number") from exc
    return _build_run(
        model_id, project_id,
        _count(data, "total_tests", where),
        _count(data, "failed_tests", where),
        _number(data, "branch_coverage_pct", where, pct=True),
        _number(data, "mutation_score_pct", where, pct=True),
        cost, None, where,
    )


def write_metrics_json(run: RunMetrics, path: Path) -> None:
    Path(path).write_text(json.dumps(run.to_dict(), indent=2) + "\n", encoding="utf-8")


# -- reports ------------------------------------------------------------------


def format_number(value, ndigits: int = 1, decimal_sep: str = ".") -> str:
    q = Decimal(repr(value) if isinstance(value, float) else str(value))
    text = f"{q.quantize(Decimal(1).scaleb(-ndigits), rounding=ROUND_HALF_UP):f}"
    if text.startswith("-") and Decimal(text) == 0:
        text = text[1:]
    return text.replace(".", decimal_sep)


def _sep(locale: str) -> str:
    if locale not in ("en", "pt"):
        raise ValueError(f"unknown locale {locale!r}")
    return "," if locale == "pt" else "."


def score_table(rows: Sequence[ScoreRow], locale: str = "en") -> list[list[str]]:
    """Rows shaped like the averages table, highest S first."""
    sep = _sep(locale)
    ordered = sorted(rows, key=lambda r: (-_as_decimal(r.S), r.model_id))
    out = [["Model", "S", "SR", "C", "M", "T", "TC"]]
    for r in ordered:
        out.append([r.model_id] + [format_number(getattr(r, k), 1, sep) for k in ("S", "SR", "C", "M", "T")]
                   + [format_number(r.TC, 2, sep)])
    return out


def rank_table(table: RankingTable, locale: str = "en") -> list[list[str]]:
    sep = _sep(locale)
    metrics = list(table.columns)
    out = [["Position"] + [h for m in metrics for h in (m, f"Δ{m}")]]
    depth = max(len(v) for v in table.columns.values())
    for i in range(depth):
        line = [str(i + 1)]
        for m in metrics:
            e = table.columns[m][i]
            line += [e.model_id, e.delta_text(1, sep)]
        out.append(line)
    return out


def to_markdown(table: list[list[str]]) -> str:
    head, *body = table
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    lines += ["| " + " | ".join(r) + " |" for r in body]
    return "\n".join(lines) + "\n"


def to_csv(table: list[list[str]], locale: str = "en") -> str:
    buf = io.StringIO()
    csv.writer(buf, delimiter=";" if locale == "pt" else ",", lineterminator="\n").writerows(table)
    return buf.getvalue()
