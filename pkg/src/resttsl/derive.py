"""Deterministic Category-Partition deriver: OpenAPI constraints -> baseline TSL.

Every endpoint yields one nominal case plus one error choice per constraint:
missing required field, length one below/above the bounds, pattern and enum
violations, out-of-range numbers, and a credential-less call for secured
endpoints. Nothing here is random; equal inputs give byte-equal output.
"""

from __future__ import annotations

import re
from typing import Any

try:  # python >= 3.11
    import re._parser as sre_parse  # type: ignore[import-not-found]
    from re._constants import (  # type: ignore[import-not-found]
        ANY, ASSERT, ASSERT_NOT, AT, BRANCH, CATEGORY, CATEGORY_DIGIT, CATEGORY_NOT_DIGIT,
        CATEGORY_NOT_SPACE, CATEGORY_NOT_WORD, CATEGORY_SPACE, CATEGORY_WORD, IN, LITERAL,
        MAX_REPEAT, MIN_REPEAT, NEGATE, NOT_LITERAL, RANGE, SUBPATTERN,
    )
except ImportError:  # python 3.10
    import sre_parse  # type: ignore[no-redef]
    from sre_constants import (  # type: ignore[no-redef]
        ANY, ASSERT, ASSERT_NOT, AT, BRANCH, CATEGORY, CATEGORY_DIGIT, CATEGORY_NOT_DIGIT,
        CATEGORY_NOT_SPACE, CATEGORY_NOT_WORD, CATEGORY_SPACE, CATEGORY_WORD, IN, LITERAL,
        MAX_REPEAT, MIN_REPEAT, NEGATE, NOT_LITERAL, RANGE, SUBPATTERN,
    )

from .openapi_model import ApiDocument, EndpointDef, ParamDef, SchemaNode
from .tsl import ExpectedResponse, Matcher, ObjectMatcher, TslCase, TslDocument, TypeIs

NOMINAL_EMAIL = "unique-token@example.com"
_FORMAT_SAMPLES = {
    "date-time": "2024-01-01T00:00:00Z",
    "date": "2024-01-01",
    "time": "12:00:00",
    "uuid": "00000000-0000-4000-8000-000000000000",
    "uri": "https://example.com",
    "url": "https://example.com",
    "hostname": "example.com",
    "ipv4": "127.0.0.1",
    "password": "Val1d!Pass",
}
_LOGIN_RE = re.compile(r"/(login|logins|token|tokens|session|sessions|signin|auth)(/|$)", re.I)
_MAX_DEPTH = 8


# -- regex samples ------------------------------------------------------------

_CATEGORY_CHAR = {
    CATEGORY_DIGIT: "0",
    CATEGORY_NOT_DIGIT: "a",
    CATEGORY_WORD: "a",
    CATEGORY_NOT_WORD: "-",
    CATEGORY_SPACE: " ",
    CATEGORY_NOT_SPACE: "a",
}


def _class_char(items) -> str:
    negate = any(op == NEGATE for op, _ in items)
    if negate:
        for candidate in "aA0-_ .":
            if not any(_in_item(candidate, op, av) for op, av in items if op != NEGATE):
                return candidate
        return "~"
    for op, av in items:
        if op == LITERAL:
            return chr(av)
        if op == RANGE:
            return chr(av[0])
        if op == CATEGORY:
            return _CATEGORY_CHAR.get(av, "a")
    return "a"


def _in_item(ch: str, op, av) -> bool:
    if op == LITERAL:
        return ord(ch) == av
    if op == RANGE:
        return av[0] <= ord(ch) <= av[1]
    if op == CATEGORY:
        probe = {CATEGORY_DIGIT: r"\d", CATEGORY_NOT_DIGIT: r"\D", CATEGORY_WORD: r"\w",
                 CATEGORY_NOT_WORD: r"\W", CATEGORY_SPACE: r"\s", CATEGORY_NOT_SPACE: r"\S"}.get(av)
        return bool(probe and re.fullmatch(probe, ch))
    return False


def _emit(parsed, rep: int) -> str:
    out = []
    for op, av in parsed:
        if op == LITERAL:
            out.append(chr(av))
        elif op == NOT_LITERAL:
            out.append("a" if av != ord("a") else "b")
        elif op == ANY:
            out.append("a")
        elif op == IN:
            out.append(_class_char(av))
        elif op == CATEGORY:
            out.append(_CATEGORY_CHAR.get(av, "a"))
        elif op in (MAX_REPEAT, MIN_REPEAT):
            lo, hi, sub = av
            count = max(lo, min(hi, rep))
            out.append(_emit(sub, rep) * count)
        elif op == SUBPATTERN:
            out.append(_emit(av[-1], rep))
        elif op == BRANCH:
            out.append(_emit(av[1][0], rep))
        elif op in (AT, ASSERT, ASSERT_NOT):
            continue
        else:
            raise ValueError(f"unsupported regex construct {op}")
    return "".join(out)


def regex_sample(pattern: str, min_length: int | None = None, max_length: int | None = None) -> str | None:
    """Shortest string found that satisfies ``pattern`` (search semantics) and the length bounds."""
    try:
        parsed = sre_parse.parse(pattern)
        compiled = re.compile(pattern)
    except (re.error, ValueError):
        return None
    lo = min_length or 0
    hi = max_length if max_length is not None else max(lo, 64)
    for rep in range(0, max(hi, 1) + 1):
        try:
            sample = _emit(parsed, rep)
        except ValueError:
            return None
        if compiled.search(sample) and lo <= len(sample) <= hi:
            return sample
        if len(sample) > hi:
            break
    return None


def pattern_violation(pattern: str, min_length: int | None = None, max_length: int | None = None) -> str | None:
    compiled = re.compile(pattern)
    lo = min_length or 0
    base = ["", " ", "!", "#", "0", "a", "A", "-", "!invalid!", "@@@"]
    # prefer violations that respect the length bounds so only the pattern is broken
    padded = [c * max(lo, 1) for c in ("!", " ", "#", "0", "a", "A")]
    for candidate in padded + base:
        in_bounds = lo <= len(candidate) <= (max_length if max_length is not None else len(candidate))
        if in_bounds and not compiled.search(candidate):
            return candidate
    for candidate in base:
        if not compiled.search(candidate):
            return candidate
    return None


# -- value synthesis ------------------------------------------------------------


def _numeric_nominal(node: SchemaNode) -> int | float:
    c = node.constraints
    if c.minimum is not None and c.maximum is not None:
        mid = (c.minimum + c.maximum) / 2
        if node.kind == "integer":
            return int((c.minimum + c.maximum) // 2)
        return mid
    if c.minimum is not None and c.minimum > 1:
        return int(c.minimum) if node.kind == "integer" and float(c.minimum).is_integer() else c.minimum
    if c.maximum is not None and c.maximum < 1:
        return int(c.maximum) if node.kind == "integer" and float(c.maximum).is_integer() else c.maximum
    return 1


def _string_nominal(node: SchemaNode) -> str:
    c = node.constraints
    if c.format == "email":
        return NOMINAL_EMAIL
    if c.pattern:
        sample = regex_sample(c.pattern, c.min_length, c.max_length)
        if sample is not None:
            return sample
    sample = _FORMAT_SAMPLES.get(c.format or "")
    if sample is not None and (c.min_length or 0) <= len(sample) <= (c.max_length or len(sample)):
        return sample
    length = max(c.min_length or 0, 1)
    if c.max_length is not None:
        length = min(length, c.max_length)
    return "a" * length


def valid_value(api: ApiDocument, node: SchemaNode | None, depth: int = 0) -> Any:
    node = api.resolve(node)
    if node is None or depth > _MAX_DEPTH:
        return None
    c = node.constraints
    if c.enum_values:
        return c.enum_values[0]
    if node.kind == "string":
        return _string_nominal(node)
    if node.kind in ("integer", "number"):
        return _numeric_nominal(node)
    if node.kind == "boolean":
        return True
    if node.kind == "array":
        return [valid_value(api, node.items, depth + 1)] if node.items is not None else []
    return {name: valid_value(api, sub, depth + 1) for name, sub in node.properties.items()}


def _string_of_length(node: SchemaNode, n: int) -> str:
    suffix = "@x.com"
    if node.constraints.format == "email" and n > len(suffix):
        return "a" * (n - len(suffix)) + suffix
    return "a" * n


def _enum_violation(values: tuple) -> Any:
    if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in values):
        return max(values) + 1
    candidate = f"{values[0]}_invalid"
    while candidate in values:
        candidate += "_"
    return candidate


def constraint_violations(node: SchemaNode) -> list[tuple[str, Any]]:
    """(label, value) error choices for one scalar field, in a fixed order."""
    c = node.constraints
    out: list[tuple[str, Any]] = []
    if node.kind == "string":
        if c.min_length is not None and c.min_length >= 1:
            out.append(("Below Min Length", _string_of_length(node, c.min_length - 1)))
        if c.max_length is not None:
            out.append(("Above Max Length", _string_of_length(node, c.max_length + 1)))
        if c.pattern:
            bad = pattern_violation(c.pattern, c.min_length, c.max_length)
            if bad is not None:
                out.append(("Pattern Mismatch", bad))
    elif node.kind in ("integer", "number"):
        step = 1 if node.kind == "integer" else 1.0
        if c.minimum is not None:
            out.append(("Below Minimum", c.minimum - step))
        if c.maximum is not None:
            out.append(("Above Maximum", c.maximum + step))
    if c.enum_values:
        out.append(("Invalid Enum", _enum_violation(c.enum_values)))
    return out


# -- cases --------------------------------------------------------------------


def _words(text: str) -> str:
    text = re.sub(r"([a-z0-9])([A-Z])", r"\1 \2", text)
    return " ".join(w[:1].upper() + w[1:] for w in re.split(r"[^A-Za-z0-9]+", text) if w)


def operation_title(ep: EndpointDef) -> str:
    if ep.operation_id:
        return _words(ep.operation_id)
    if ep.summary:
        return _words(ep.summary)
    return _words(f"{ep.method.lower()} {ep.path.replace('{', 'by ').replace('}', '')}")


def success_status(ep: EndpointDef) -> int:
    ok = [s for s in ep.responses if 200 <= s < 300]
    return min(ok) if ok else min(ep.responses)


def error_status(ep: EndpointDef) -> int:
    return 422 if 422 in ep.responses else 400


def _response_matcher(api: ApiDocument, ep: EndpointDef, status: int) -> Matcher | None:
    schema = api.resolve(ep.responses.get(status))
    if schema is None:
        return None
    if schema.kind == "object":
        if not schema.properties:
            return TypeIs("object")
        fields = {}
        for name, sub in schema.properties.items():
            resolved = api.resolve(sub)
            fields[name] = TypeIs(resolved.kind if resolved is not None else "object")
        return ObjectMatcher(fields)
    return TypeIs(schema.kind)


def _auth_headers(api: ApiDocument, ep: EndpointDef) -> dict:
    headers = {}
    for name in ep.security:
        scheme = api.schemes.get(name)
        if scheme is None:
            continue
        if scheme.type == "http" and (scheme.scheme or "").lower() == "basic":
            headers["Authorization"] = "Basic dXNlcjpwYXNz"
        elif scheme.type == "apiKey" and scheme.location == "header" and scheme.param_name:
            headers[scheme.param_name] = "valid-api-key"
        else:
            headers["Authorization"] = "Bearer valid-token"
    if ep.security and not headers:
        headers["Authorization"] = "Bearer valid-token"
    return headers


def _params_by(ep: EndpointDef, location: str) -> list[ParamDef]:
    return [p for p in ep.parameters if p.location == location]


class _Builder:
    def __init__(self, api: ApiDocument):
        self.api = api
        self.cases: list[TslCase] = []

    def add(self, **kwargs) -> None:
        self.cases.append(TslCase(id=f"TC{len(self.cases) + 1:03d}", **kwargs))

    def endpoint(self, ep: EndpointDef) -> None:
        api = self.api
        title = operation_title(ep)
        ok, err = success_status(ep), error_status(ep)
        group = ep.tags[0] if ep.tags else "untagged"
        request = api.resolve(ep.request_schema)
        body = valid_value(api, request) if request is not None else None

        path_params = {p.name: valid_value(api, p.schema) for p in _params_by(ep, "path")} or None
        query = {p.name: valid_value(api, p.schema) for p in _params_by(ep, "query")} or None
        auth = _auth_headers(api, ep)
        headers = {p.name: valid_value(api, p.schema) for p in _params_by(ep, "header")}
        headers.update(auth)

        pre: list[str] = []
        if ep.security:
            pre.append("Authenticated user with valid credentials")
        for name, value in (path_params or {}).items():
            pre.append(f"Resource with {name} '{value}' exists")
        login_pre = []
        if ep.method == "POST" and _LOGIN_RE.search(ep.path) and isinstance(body, dict):
            emails = [v for k, v in body.items() if isinstance(v, str) and "@" in v]
            login_pre = [f"User with email '{e}' exists" for e in emails]

        def case(name, status, *, req=body, q=query, h=headers, extra_pre=(), expect_body=None, authed=True):
            kept = pre if authed or not ep.security else pre[1:]
            self.add(
                group=group,
                name=f"{title} {name} Returns {status}",
                endpoint=ep.path,
                method=ep.method,
                preconditions=tuple(extra_pre) + tuple(kept),
                path_params=path_params,
                query_params=q,
                headers=h or None,
                request_body=req,
                expected_response=ExpectedResponse(status, expect_body),
            )

        case("Valid Request", ok, extra_pre=login_pre, expect_body=_response_matcher(api, ep, ok))

        if request is not None and request.kind == "object" and isinstance(body, dict):
            declared = list(request.properties)
            required = [n for n in declared if n in request.constraints.required_fields]
            required += sorted(n for n in request.constraints.required_fields if n not in declared)
            for name in required:
                reduced = {k: v for k, v in body.items() if k != name}
                case(f"Missing {_words(name)}", err, req=reduced)
            for name, sub in request.properties.items():
                node = api.resolve(sub)
                if node is None:
                    continue
                for label, value in constraint_violations(node):
                    case(f"{_words(name)} {label}", err, req={**body, name: value})

        for p in _params_by(ep, "query") + _params_by(ep, "header"):
            node = api.resolve(p.schema)
            holder = "q" if p.location == "query" else "h"
            current = dict(query or {}) if holder == "q" else dict(headers)
            if p.required:
                reduced = {k: v for k, v in current.items() if k != p.name}
                case(f"Missing {_words(p.name)}", err, **{holder: reduced or None})
            for label, value in constraint_violations(node) if node is not None else []:
                case(f"{_words(p.name)} {label}", err, **{holder: {**current, p.name: value}})

        if ep.security:
            unauth = {k: v for k, v in headers.items() if k not in auth}
            case("Without Credentials", 401, h=unauth, authed=False)


def derive_cases_cp(api: ApiDocument) -> TslDocument:
    builder = _Builder(api)
    for ep in api.endpoints:
        builder.endpoint(ep)
    return TslDocument(tuple(builder.cases))
