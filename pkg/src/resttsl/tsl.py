"""TSL documents: the YAML test-case dialect sitting between OpenAPI and test code.

A document is a YAML sequence of case mappings::

    - id: TC101
      group: Account
      name: Login Valid Credentials Returns Token
      endpoint: /api/accounts/tokens
      method: POST
      request_body: {email: valid@test.com, password: Val1d!Pass}
      expected_response:
        status_code: 200
        body:
          token: is string not empty

Inside ``expected_response.body`` a string ``is <kind>`` or ``is <kind> not empty``
is a matcher; every other scalar is an exact literal.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Any, Mapping, Union

import yaml

from .errors import DuplicateId, MatcherSyntax, MissingField, TslSyntax
from .openapi_model import HTTP_METHODS, UNTAGGED

TYPE_KINDS = ("string", "number", "integer", "boolean", "array", "object")
NONEMPTY_KINDS = ("string", "array")

_MATCHER_RE = re.compile(r"^is ([a-z]+)( not empty)?$")

# -- matchers ---------------------------------------------------------------


@dataclass(frozen=True)
class Exact:
    value: Any


@dataclass(frozen=True)
class TypeIs:
    kind: str

    def __post_init__(self):
        if self.kind not in TYPE_KINDS:
            raise MatcherSyntax(f"unknown kind {self.kind!r}")


@dataclass(frozen=True)
class NonEmpty:
    kind: str

    def __post_init__(self):
        if self.kind not in NONEMPTY_KINDS:
            raise MatcherSyntax(f"'not empty' applies to string or array, not {self.kind!r}")


@dataclass(frozen=True)
class ObjectMatcher:
    fields: Mapping[str, "Matcher"] = field(default_factory=dict)


@dataclass(frozen=True)
class ArrayMatcher:
    items: tuple = ()


Matcher = Union[Exact, TypeIs, NonEmpty, ObjectMatcher, ArrayMatcher]


def parse_matcher(raw: Any, where: str = "body") -> Matcher:
    if isinstance(raw, dict):
        return ObjectMatcher({str(k): parse_matcher(v, f"{where}.{k}") for k, v in raw.items()})
    if isinstance(raw, list):
        return ArrayMatcher(tuple(parse_matcher(v, f"{where}[{i}]") for i, v in enumerate(raw)))
    if isinstance(raw, str) and raw.startswith("is "):
        m = _MATCHER_RE.match(raw)
        try:
            if m is None:
                raise MatcherSyntax(raw)
            kind, not_empty = m.group(1), m.group(2)
            return NonEmpty(kind) if not_empty else TypeIs(kind)
        except MatcherSyntax:
            raise MatcherSyntax(f"{where}: {raw!r} is not a valid matcher") from None
    return Exact(raw)


def matcher_to_data(matcher: Matcher) -> Any:
    if isinstance(matcher, ObjectMatcher):
        return {k: matcher_to_data(v) for k, v in matcher.fields.items()}
    if isinstance(matcher, ArrayMatcher):
        return [matcher_to_data(v) for v in matcher.items]
    if isinstance(matcher, NonEmpty):
        return f"is {matcher.kind} not empty"
    if isinstance(matcher, TypeIs):
        return f"is {matcher.kind}"
    if isinstance(matcher.value, str) and matcher.value.startswith("is "):
        raise ValueError(f"exact literal {matcher.value!r} collides with matcher syntax")
    return matcher.value


def _json_kind(value: Any) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "boolean"
    if isinstance(value, (int, float)):
        return "number"
    if isinstance(value, str):
        return "string"
    if isinstance(value, (list, tuple)):
        return "array"
    if isinstance(value, dict):
        return "object"
    return "unknown"


def _json_equal(a: Any, b: Any) -> bool:
    ka, kb = _json_kind(a), _json_kind(b)
    if ka != kb:
        return False
    if ka == "object":
        return a.keys() == b.keys() and all(_json_equal(a[k], b[k]) for k in a)
    if ka == "array":
        return len(a) == len(b) and all(_json_equal(x, y) for x, y in zip(a, b))
    return a == b


def match_value(matcher: Matcher, value: Any) -> bool:
    if isinstance(matcher, Exact):
        return _json_equal(matcher.value, value)
    if isinstance(matcher, TypeIs):
        kind = _json_kind(value)
        if matcher.kind == "integer":
            return kind == "number" and (isinstance(value, int) or (math.isfinite(value) and value.is_integer()))
        return kind == matcher.kind
    if isinstance(matcher, NonEmpty):
        return _json_kind(value) == matcher.kind and len(value) > 0
    if isinstance(matcher, ObjectMatcher):
        if not isinstance(value, dict):
            return False
        return all(name in value and match_value(sub, value[name]) for name, sub in matcher.fields.items())
    if isinstance(matcher, ArrayMatcher):
        if not isinstance(value, (list, tuple)) or len(value) != len(matcher.items):
            return False
        return all(match_value(m, v) for m, v in zip(matcher.items, value))
    raise TypeError(f"not a matcher: {matcher!r}")


# -- documents --------------------------------------------------------------


@dataclass(frozen=True)
class ExpectedResponse:
    status_code: int
    body: Matcher | None = None

    def __post_init__(self):
        if isinstance(self.status_code, bool) or not isinstance(self.status_code, int):
            raise TslSyntax(f"status_code must be an integer, got {self.status_code!r}")
        if not 100 <= self.status_code <= 599:
            raise TslSyntax(f"status_code {self.status_code} outside 100-599")


@dataclass(frozen=True)
class TslCase:
    id: str
    endpoint: str
    method: str
    expected_response: ExpectedResponse
    group: str = UNTAGGED
    name: str = ""
    preconditions: tuple = ()
    path_params: Mapping[str, Any] | None = None
    query_params: Mapping[str, Any] | None = None
    headers: Mapping[str, Any] | None = None
    request_body: Any = None

    def __post_init__(self):
        for attr in ("id", "endpoint", "method", "group"):
            if not isinstance(getattr(self, attr), str) or not getattr(self, attr):
                raise MissingField(f"case {self.id!r}: {attr} must be a non-empty string")
        if self.method not in HTTP_METHODS:
            raise TslSyntax(f"case {self.id}: unknown HTTP method {self.method!r}")


@dataclass(frozen=True)
class TslDocument:
    cases: tuple = ()

    def __post_init__(self):
        seen = set()
        for case in self.cases:
            if case.id in seen:
                raise DuplicateId(case.id)
            seen.add(case.id)

    @property
    def ids(self) -> list[str]:
        return [c.id for c in self.cases]

    def __len__(self):
        return len(self.cases)

    def by_id(self, case_id: str) -> TslCase:
        for case in self.cases:
            if case.id == case_id:
                return case
        raise KeyError(case_id)


_REQUIRED = ("id", "endpoint", "method", "expected_response")
_MAP_FIELDS = ("path_params", "query_params", "headers")


def _case_from_mapping(raw: Any, index: int) -> TslCase:
    if not isinstance(raw, dict):
        raise TslSyntax(f"entry {index} is not a mapping")
    label = raw.get("id", f"#{index}")
    for key in _REQUIRED:
        if raw.get(key) in (None, ""):
            raise MissingField(f"case {label}: missing {key}")
    expected = raw["expected_response"]
    if not isinstance(expected, dict) or "status_code" not in expected:
        raise MissingField(f"case {label}: expected_response.status_code missing")
    body = parse_matcher(expected["body"], f"{label}.body") if "body" in expected else None

    maps = {}
    for key in _MAP_FIELDS:
        value = raw.get(key)
        if value is not None and not isinstance(value, dict):
            raise TslSyntax(f"case {label}: {key} must be a mapping")
        maps[key] = value
    pre = raw.get("preconditions") or []
    if isinstance(pre, str):
        pre = [pre]
    if not isinstance(pre, list):
        raise TslSyntax(f"case {label}: preconditions must be a list")
    group = raw.get("group")
    return TslCase(
        id=str(raw["id"]),
        group=str(group) if group not in (None, "") else UNTAGGED,
        name=str(raw.get("name") or ""),
        endpoint=str(raw["endpoint"]),
        method=str(raw["method"]).upper(),
        preconditions=tuple(str(p) for p in pre),
        request_body=raw.get("request_body"),
        expected_response=ExpectedResponse(expected["status_code"], body),
        **maps,
    )


def parse_tsl(document_text: str) -> TslDocument:
    try:
        raw = yaml.safe_load(document_text)
    except yaml.YAMLError as exc:
        raise TslSyntax(f"malformed YAML: {exc}") from exc
    if raw is None:
        raw = []
    if not isinstance(raw, list):
        raise TslSyntax("a TSL document is a YAML sequence of cases")
    cases = [_case_from_mapping(item, i) for i, item in enumerate(raw)]
    return TslDocument(tuple(cases))


def case_to_data(case: TslCase) -> dict:
    out: dict[str, Any] = {
        "id": case.id,
        "group": case.group,
        "name": case.name,
        "endpoint": case.endpoint,
        "method": case.method,
    }
    if case.preconditions:
        out["preconditions"] = list(case.preconditions)
    for key in _MAP_FIELDS:
        value = getattr(case, key)
        if value is not None:
            out[key] = dict(value)
    if case.request_body is not None:
        out["request_body"] = case.request_body
    expected: dict[str, Any] = {"status_code": case.expected_response.status_code}
    if case.expected_response.body is not None:
        expected["body"] = matcher_to_data(case.expected_response.body)
    out["expected_response"] = expected
    return out


class _TslDumper(yaml.SafeDumper):
    """Indents block sequences nested in mappings, as hand-written TSL does."""

    def increase_indent(self, flow=False, indentless=False):
        return super().increase_indent(flow, False)

    def ignore_aliases(self, data):
        return True


_LINE_BREAKS = ("\x85", "\u2028", "\u2029")


def _represent_str(dumper: yaml.SafeDumper, data: str):
    # plain and single-quoted styles pass these through raw, and the loader reads them as newlines
    style = '"' if any(ch in data for ch in _LINE_BREAKS) else None
    return dumper.represent_scalar("tag:yaml.org,2002:str", data, style=style)


_TslDumper.add_representer(str, _represent_str)


def _dump(data: Any) -> str:
    return yaml.dump(
        data,
        Dumper=_TslDumper,
        sort_keys=False,
        allow_unicode=True,
        default_flow_style=False,
        indent=2,
        width=4096,
    )


def serialize_cases(cases) -> str:
    data = [case_to_data(c) for c in cases]
    if not data:
        return "[]\n"
    return _dump(data)


def serialize_tsl(doc: TslDocument) -> str:
    return serialize_cases(doc.cases)
