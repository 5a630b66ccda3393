import re
import subprocess
import sys

import yaml
from hypothesis import given, settings, strategies as st

from resttsl.derive import constraint_violations, derive_cases_cp, pattern_violation, regex_sample, valid_value
from resttsl.openapi_model import SchemaNode, extract_constraints, parse_openapi
from resttsl.tsl import serialize_tsl

from tests.conftest import fixture_text


def _raw_request_schema(raw, path, method):
    schema = raw["paths"][path][method]["requestBody"]["content"]["application/json"]["schema"]
    while "$ref" in schema:
        schema = raw["components"]["schemas"][schema["$ref"].rsplit("/", 1)[-1]]
    return schema


def boundary_oracle(lo, hi):
    """All lengths at the partition edges, labelled valid or not."""
    return {n: lo <= n <= hi for n in (lo - 1, lo, hi, hi + 1) if n >= 0}


def test_cp_fixture_against_bruteforce_oracle():
    text = fixture_text("openapi", "cp-fixture.yaml")
    raw = yaml.safe_load(text)
    schema = _raw_request_schema(raw, "/api/profiles", "post")
    doc = derive_cases_cp(parse_openapi(text))
    cases = doc.cases

    for field, spec in schema["properties"].items():
        oracle = boundary_oracle(spec["minLength"], spec["maxLength"])
        invalid = {n for n, ok in oracle.items() if not ok}
        seen_invalid = {len(c.request_body[field]) for c in cases
                        if isinstance(c.request_body, dict) and field in c.request_body
                        and not spec["minLength"] <= len(c.request_body[field]) <= spec["maxLength"]
                        and 400 <= c.expected_response.status_code < 500}
        assert seen_invalid == invalid == {7, 65}
        nominal = cases[0]
        assert nominal.expected_response.status_code == 201
        assert oracle[len(nominal.request_body[field])] is True

    for field in schema["required"]:
        assert any(isinstance(c.request_body, dict) and field not in c.request_body
                   and c.expected_response.status_code == 400 for c in cases)

    assert raw["paths"]["/api/profiles"]["post"]["security"]
    unauth = [c for c in cases if c.expected_response.status_code == 401]
    assert len(unauth) == 1 and "Authorization" not in (unauth[0].headers or {})
    assert all("Authorization" in (c.headers or {}) for c in cases if c not in unauth)


def test_password_boundary_lengths():
    text = """
openapi: 3.0.0
info: {title: t, version: "1"}
paths:
  /users:
    post:
      requestBody:
        content:
          application/json:
            schema:
              type: object
              required: [password]
              properties:
                password: {type: string, minLength: 8}
      responses:
        "201": {description: ok}
        "400": {description: bad}
"""
    doc = derive_cases_cp(parse_openapi(text))
    lengths = sorted(len(c.request_body["password"]) for c in doc.cases if "password" in c.request_body)
    assert lengths == [7, 8]
    assert [c.expected_response.status_code for c in doc.cases] == [201, 400, 400]


def test_required_email_omitted_expects_400():
    text = fixture_text("openapi", "todo-api.yaml")
    doc = derive_cases_cp(parse_openapi(text))
    hit = [c for c in doc.cases if c.endpoint == "/api/accounts/tokens"
           and "email" not in (c.request_body or {"email": 1})]
    assert hit and all(c.expected_response.status_code == 400 for c in hit)


def test_422_preferred_when_declared():
    api = parse_openapi(fixture_text("openapi", "shop-api.json"))
    errors = {c.expected_response.status_code for c in derive_cases_cp(api).cases
              if c.endpoint == "/products" and c.method == "POST" and c.expected_response.status_code >= 400}
    assert errors == {422}


def test_ids_sequential_and_group_is_first_tag():
    api = parse_openapi(fixture_text("openapi", "shop-api.json"))
    doc = derive_cases_cp(api)
    assert doc.ids == [f"TC{n:03d}" for n in range(1, len(doc) + 1)]
    by_path = {(ep.path, ep.method): ep.tags[0] for ep in api.endpoints}
    assert all(c.group == by_path[(c.endpoint, c.method)] for c in doc.cases)


def test_every_required_field_omitted_somewhere():
    for name in ("todo-api.yaml", "shop-api.json", "cp-fixture.yaml"):
        api = parse_openapi(fixture_text("openapi", name))
        doc = derive_cases_cp(api)
        for ep in api.endpoints:
            req = api.resolve(ep.request_schema)
            if req is None or req.kind != "object":
                continue
            mine = [c for c in doc.cases if (c.endpoint, c.method) == (ep.path, ep.method)]
            for field in req.constraints.required_fields:
                assert any(isinstance(c.request_body, dict) and field not in c.request_body for c in mine), field


def test_bounded_strings_give_two_boundary_cases():
    for name in ("todo-api.yaml", "shop-api.json", "cp-fixture.yaml"):
        api = parse_openapi(fixture_text("openapi", name))
        doc = derive_cases_cp(api)
        for ep in api.endpoints:
            req = api.resolve(ep.request_schema)
            if req is None or req.kind != "object":
                continue
            mine = [c for c in doc.cases if (c.endpoint, c.method) == (ep.path, ep.method)]
            nominal = mine[0].request_body
            for field, sub in req.properties.items():
                node = api.resolve(sub)
                c = node.constraints
                if node.kind != "string" or c.min_length is None or c.max_length is None or c.min_length < 1:
                    continue
                hits = [k for k in mine if isinstance(k.request_body, dict)
                        and {f for f in k.request_body if k.request_body[f] != nominal.get(f)} == {field}
                        and len(k.request_body[field]) in (c.min_length - 1, c.max_length + 1)]
                assert len(hits) == 2, (name, field)


def test_deriver_is_byte_identical_across_runs_and_processes():
    text = fixture_text("openapi", "shop-api.json")
    first = serialize_tsl(derive_cases_cp(parse_openapi(text)))
    assert first == serialize_tsl(derive_cases_cp(parse_openapi(text)))
    code = ("import sys;from resttsl.derive import derive_cases_cp;from resttsl.openapi_model import parse_openapi;"
            "from resttsl.tsl import serialize_tsl;sys.stdout.write(serialize_tsl(derive_cases_cp("
            "parse_openapi(sys.stdin.read()))))")
    out = subprocess.run([sys.executable, "-c", code], input=text, capture_output=True, text=True, check=True,
                         env={"PYTHONHASHSEED": "123", "PATH": ""})
    assert out.stdout == first


def test_nominal_value_rules():
    api = parse_openapi(fixture_text("openapi", "ping.yaml"))
    mk = lambda kind, **c: SchemaNode(kind, extract_constraints({"type": kind, **c}))
    assert valid_value(api, mk("string", format="email")) == "unique-token@example.com"
    assert valid_value(api, mk("string", minLength=3)) == "aaa"
    assert valid_value(api, mk("string")) == "a"
    assert valid_value(api, mk("integer", minimum=1, maximum=99)) == 50
    assert valid_value(api, mk("number", minimum=0.01, maximum=10000)) == 5000.005
    assert valid_value(api, mk("integer")) == 1
    assert valid_value(api, mk("boolean")) is True
    assert valid_value(api, mk("string", enum=["food", "tools"])) == "food"
    assert re.fullmatch(r"[A-Z]{3}-[0-9]{4}", valid_value(api, mk("string", pattern="^[A-Z]{3}-[0-9]{4}$")))


def test_violations_for_numeric_and_enum():
    node = SchemaNode("integer", extract_constraints({"minimum": 1, "maximum": 99}))
    assert constraint_violations(node) == [("Below Minimum", 0), ("Above Maximum", 100)]
    node = SchemaNode("string", extract_constraints({"enum": ["a", "b"]}))
    assert constraint_violations(node) == [("Invalid Enum", "a_invalid")]


PATTERNS = [r"^[A-Z]{3}-[0-9]{4}$", r"^\d{13}$", r"^[a-z]+(-[a-z]+)*$", r"^(foo|bar)\d?$", r"^[^@]+@[^@]+$",
            r"^\w{2,5}$", r"^[0-9a-f]{8}$"]


@settings(deadline=None)
@given(st.sampled_from(PATTERNS))
def test_regex_sample_and_violation(pattern):
    good = regex_sample(pattern)
    assert good is not None and re.search(pattern, good)
    bad = pattern_violation(pattern)
    assert bad is None or not re.search(pattern, bad)
