"""Check a TSL document against the OpenAPI document it claims to test."""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import DuplicateId, MatcherSyntax
from .openapi_model import ApiDocument, EndpointDef, SchemaNode
from .tsl import ArrayMatcher, Matcher, ObjectMatcher, TslCase, TslDocument, parse_tsl

ISSUE_CODES = (
    "UnknownEndpoint",
    "MethodMismatch",
    "UndeclaredStatus",
    "UnknownBodyField",
    "MissingRequiredField",
    "DuplicateId",
    "MatcherSyntax",
)


@dataclass(frozen=True)
class ValidationIssue:
    case_id: str
    severity: str  # error | warning
    code: str
    message: str

    def to_dict(self) -> dict:
        return {"case_id": self.case_id, "severity": self.severity, "code": self.code, "message": self.message}


def has_errors(issues) -> bool:
    return any(i.severity == "error" for i in issues)


def _template_regex(template: str) -> re.Pattern:
    parts = re.split(r"(\{[^}/]+\})", template)
    body = "".join("[^/]+" if p.startswith("{") and p.endswith("}") else re.escape(p) for p in parts)
    return re.compile(body + r"/?$")


def _server_prefixes(api: ApiDocument) -> list[str]:
    prefixes = [""]
    for url in api.servers:
        path = re.sub(r"^[a-z]+://[^/]+", "", url).rstrip("/")
        if path and path not in prefixes:
            prefixes.append(path)
    return prefixes


def match_path(api: ApiDocument, endpoint: str) -> list[EndpointDef]:
    """Endpoints whose path template matches ``endpoint``; exact template matches win."""
    endpoint = endpoint.split("?", 1)[0]
    candidates = []
    for prefix in _server_prefixes(api):
        if prefix and not endpoint.startswith(prefix):
            continue
        local = endpoint[len(prefix):] or "/"
        exact = [ep for ep in api.endpoints if ep.path == local]
        if exact:
            return exact
        candidates.extend(ep for ep in api.endpoints if _template_regex(ep.path).match(local))
    return candidates


def _check_body(
    api: ApiDocument, case_id: str, matcher: Matcher, schema: SchemaNode | None, where: str, out: list
) -> None:
    schema = api.resolve(schema)
    if schema is None:
        return
    if isinstance(matcher, ObjectMatcher) and schema.kind == "object":
        if not schema.properties:
            return  # free-form object
        for name, sub in matcher.fields.items():
            if name not in schema.properties:
                out.append(ValidationIssue(case_id, "error", "UnknownBodyField",
                                           f"{where}.{name} is not declared in the response schema"))
            else:
                _check_body(api, case_id, sub, schema.properties[name], f"{where}.{name}", out)
    elif isinstance(matcher, ArrayMatcher) and schema.kind == "array":
        for i, sub in enumerate(matcher.items):
            _check_body(api, case_id, sub, schema.items, f"{where}[{i}]", out)


def _validate_case(case: TslCase, api: ApiDocument) -> list[ValidationIssue]:
    out: list[ValidationIssue] = []
    paths = match_path(api, case.endpoint)
    if not paths:
        return [ValidationIssue(case.id, "error", "UnknownEndpoint", f"no declared path matches {case.endpoint}")]
    endpoint = next((ep for ep in paths if ep.method == case.method), None)
    if endpoint is None:
        declared = ", ".join(sorted({ep.method for ep in paths}))
        return [ValidationIssue(case.id, "error", "MethodMismatch",
                                f"{case.method} not declared for {case.endpoint} (declared: {declared})")]

    status = case.expected_response.status_code
    if status not in endpoint.responses:
        declared = ", ".join(str(s) for s in endpoint.responses)
        out.append(ValidationIssue(case.id, "error", "UndeclaredStatus",
                                   f"{status} not declared for {case.method} {endpoint.path} (declared: {declared})"))
    else:
        body = case.expected_response.body
        schema = endpoint.responses[status]
        if body is not None and schema is None:
            out.append(ValidationIssue(case.id, "warning", "UnknownBodyField",
                                       f"no response schema declared for {status}; body matchers unchecked"))
        elif body is not None:
            _check_body(api, case.id, body, schema, "body", out)

    request = api.resolve(endpoint.request_schema)
    if 200 <= status < 300 and request is not None and request.kind == "object":
        sent = case.request_body if isinstance(case.request_body, dict) else {}
        for name in sorted(request.constraints.required_fields):
            if name not in sent:
                out.append(ValidationIssue(case.id, "warning", "MissingRequiredField",
                                           f"success case omits required request field {name!r}"))
    return out


def validate_against_spec(doc: TslDocument, api: ApiDocument) -> list[ValidationIssue]:
    issues: list[ValidationIssue] = []
    seen: set[str] = set()
    for case in doc.cases:
        if case.id in seen:
            issues.append(ValidationIssue(case.id, "error", "DuplicateId", f"id {case.id} used more than once"))
        seen.add(case.id)
        issues.extend(_validate_case(case, api))
    return issues


def parse_and_validate(text: str, api: ApiDocument) -> tuple[TslDocument | None, list[ValidationIssue]]:
    """Parse model output and validate it; parse failures become document-level issues."""
    try:
        doc = parse_tsl(text)
    except MatcherSyntax as exc:
        return None, [ValidationIssue("-", "error", "MatcherSyntax", str(exc))]
    except DuplicateId as exc:
        return None, [ValidationIssue("-", "error", "DuplicateId", f"id {exc} used more than once")]
    return doc, validate_against_spec(doc, api)
