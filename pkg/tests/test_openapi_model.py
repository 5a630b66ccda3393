import json

import pytest
import yaml
from hypothesis import given, strategies as st

from resttsl.errors import DuplicateEndpoint, MalformedDocument, UnknownTag, UnresolvableRef
from resttsl.openapi_model import (
    ConstraintSet,
    SchemaNode,
    extract_constraints,
    iter_refs,
    list_tags,
    parse_openapi,
    serialize_openapi,
    slice_by_tag,
)

from tests.conftest import FIXTURES, fixture_text


def _doc(paths, schemas=None, **extra):
    raw = {"openapi": "3.0.3", "info": {"title": "t", "version": "1"}, "paths": paths}
    if schemas:
        raw["components"] = {"schemas": schemas}
    raw.update(extra)
    return json.dumps(raw)


def _op(tags=None, ref=None, responses=("200",)):
    op = {"responses": {code: {"description": "x"} for code in responses}}
    if tags:
        op["tags"] = tags
    if ref:
        op["requestBody"] = {"content": {"application/json": {"schema": {"$ref": f"#/components/schemas/{ref}"}}}}
    return op


def test_ping_minimal():
    api = parse_openapi(fixture_text("openapi", "ping.yaml"))
    assert len(api.endpoints) == 1
    ep = api.endpoints[0]
    assert (ep.method, ep.path, ep.tags) == ("GET", "/ping", ())
    assert list(ep.responses) == [200]


def test_todo_api_has_seven_endpoints(todo_api):
    assert len(todo_api.endpoints) == 7
    assert list_tags(todo_api) == ["Account", "Todos"]


def test_json_and_yaml_inputs_agree():
    raw = yaml.safe_load(fixture_text("openapi", "todo-api.yaml"))
    assert parse_openapi(json.dumps(raw)) == parse_openapi(fixture_text("openapi", "todo-api.yaml"))


def test_every_fixture_parses():
    for path in sorted((FIXTURES / "openapi").iterdir()):
        assert parse_openapi(path.read_text(encoding="utf-8")).endpoints


def test_dangling_ref():
    with pytest.raises(UnresolvableRef):
        parse_openapi(_doc({"/a": {"post": _op(ref="Missing")}}))


def test_rejects_swagger_two_and_garbage():
    with pytest.raises(MalformedDocument):
        parse_openapi('{"swagger": "2.0", "paths": {}}')
    with pytest.raises(MalformedDocument):
        parse_openapi("{not: [valid")
    with pytest.raises(MalformedDocument):
        parse_openapi(_doc({"/a": {"get": {"responses": {}}}}))


def test_duplicate_endpoint():
    from resttsl.openapi_model import ApiDocument

    api = parse_openapi(fixture_text("openapi", "ping.yaml"))
    with pytest.raises(DuplicateEndpoint):
        ApiDocument("t", "1", (), api.endpoints * 2, {}, {})


def test_missing_path_param_is_synthesized_with_warning():
    api = parse_openapi(_doc({"/items/{id}": {"get": _op()}}))
    (param,) = api.endpoints[0].parameters
    assert (param.name, param.location, param.required) == ("id", "path", True)
    assert api.warnings


def test_unknown_features_ignored():
    text = _doc({"/a": {"get": _op(), "x-vendor": {"weird": True}}}, webhooks={"w": {}})
    assert len(parse_openapi(text).endpoints) == 1


def test_all_of_merges_and_one_of_warns():
    schemas = {
        "Base": {"type": "object", "required": ["a"], "properties": {"a": {"type": "string"}}},
        "Both": {"allOf": [{"$ref": "#/components/schemas/Base"},
                           {"type": "object", "required": ["b"], "properties": {"b": {"type": "integer"}}}]},
        "Either": {"oneOf": [{"type": "string"}, {"type": "integer"}]},
    }
    api = parse_openapi(_doc({"/a": {"post": _op(ref="Both")}, "/b": {"post": _op(ref="Either")}}, schemas))
    both = api.shared_schemas["Both"]
    assert both.kind == "object"
    assert set(both.properties) == {"a", "b"}
    assert both.constraints.required_fields == frozenset({"a", "b"})
    assert api.shared_schemas["Either"].kind == "string"
    assert any("oneOf" in w for w in api.warnings)


# tags and slices


def test_list_tags_dedupes_in_order():
    api = parse_openapi(_doc({"/a": {"get": _op(["Account"])}, "/b": {"get": _op(["Users"])},
                              "/c": {"get": _op(["Account"])}}))
    assert list_tags(api) == ["Account", "Users"]


def test_list_tags_fallback():
    assert list_tags(parse_openapi(fixture_text("openapi", "ping.yaml"))) == ["untagged"]


def test_three_tag_fixture():
    raw = json.loads(fixture_text("openapi", "shop-api.json"))
    expected = []
    for item in raw["paths"].values():
        for op in item.values():
            for t in op.get("tags", []):
                if t not in expected:
                    expected.append(t)
    api = parse_openapi(json.dumps(raw))
    assert list_tags(api) == expected and len(expected) == 3


def test_single_tag_slice_is_identity():
    api = parse_openapi(_doc({"/a": {"post": _op(["A"], "S")}}, {"S": {"type": "object"}}))
    assert slice_by_tag(api, "A") == api


def test_unknown_tag():
    with pytest.raises(UnknownTag):
        slice_by_tag(parse_openapi(fixture_text("openapi", "ping.yaml")), "zzz")


def _raw_reachable(raw: dict, tag: str) -> set:
    """Independent oracle: walk raw JSON for $ref strings, following components."""
    schemas = raw.get("components", {}).get("schemas", {})
    todo = []

    def scan(node):
        if isinstance(node, dict):
            for k, v in node.items():
                if k == "$ref" and isinstance(v, str):
                    todo.append(v.rsplit("/", 1)[-1])
                else:
                    scan(v)
        elif isinstance(node, list):
            for v in node:
                scan(v)

    for item in raw["paths"].values():
        for op in item.values():
            if isinstance(op, dict) and tag in (op.get("tags") or ["untagged"]):
                scan(op)
    seen = set()
    while todo:
        name = todo.pop()
        if name not in seen:
            seen.add(name)
            scan(schemas[name])
    return seen


@pytest.mark.parametrize("fixture", ["shop-api.json", "todo-api.yaml"])
def test_slice_matches_bruteforce_reachability(fixture):
    text = fixture_text("openapi", fixture)
    raw = yaml.safe_load(text)
    api = parse_openapi(text)
    for tag in list_tags(api):
        sliced = slice_by_tag(api, tag)
        assert set(sliced.shared_schemas) == _raw_reachable(raw, tag)
        assert all(tag in ep.effective_tags for ep in sliced.endpoints)


def test_two_tag_slice_drops_foreign_schema():
    schemas = {"OnlyA": {"type": "object"}, "OnlyB": {"type": "object"}}
    api = parse_openapi(_doc({"/a": {"post": _op(["A"], "OnlyA")}, "/b": {"post": _op(["B"], "OnlyB")}}, schemas))
    a = slice_by_tag(api, "A")
    assert [ep.path for ep in a.endpoints] == ["/a"]
    assert set(a.shared_schemas) == {"OnlyA"}


def test_partition_property_with_multi_tag():
    api = parse_openapi(fixture_text("openapi", "shop-api.json"))
    counts = {}
    for tag in list_tags(api):
        for ep in slice_by_tag(api, tag).endpoints:
            counts[ep.key] = counts.get(ep.key, 0) + 1
    assert counts == {ep.key: len(ep.effective_tags) for ep in api.endpoints}


def test_ref_closure_in_every_slice():
    for name in ("shop-api.json", "todo-api.yaml", "cp-fixture.yaml"):
        api = parse_openapi(fixture_text("openapi", name))
        for tag in list_tags(api):
            s = slice_by_tag(api, tag)
            nodes = [n for ep in s.endpoints for n in [ep.request_schema, *ep.responses.values()]
                     + [p.schema for p in ep.parameters]]
            nodes += list(s.shared_schemas.values())
            for node in nodes:
                assert set(iter_refs(node)) <= set(s.shared_schemas)


def test_serialized_slice_reparses_equal():
    api = parse_openapi(fixture_text("openapi", "shop-api.json"))
    for tag in list_tags(api):
        s = slice_by_tag(api, tag)
        again = parse_openapi(serialize_openapi(s))
        assert again.endpoints == s.endpoints
        assert again.shared_schemas == s.shared_schemas


# constraints


def test_extract_constraints_copies():
    assert extract_constraints({"type": "string", "minLength": 3, "maxLength": 10}) == ConstraintSet(
        min_length=3, max_length=10)
    c = extract_constraints({"type": "object", "required": ["email", "password"]})
    assert c.required_fields == frozenset({"email", "password"})
    c = extract_constraints({"type": "integer", "minimum": 1})
    assert c.minimum == 1 and c.maximum is None


def test_extract_constraints_from_node():
    api = parse_openapi(fixture_text("openapi", "cp-fixture.yaml"))
    schema = api.resolve(api.endpoints[0].request_schema)
    handle = extract_constraints(schema.properties["handle"])
    assert (handle.min_length, handle.max_length) == (8, 64)
    assert isinstance(schema, SchemaNode)


def test_constraint_invariants():
    with pytest.raises(MalformedDocument):
        ConstraintSet(min_length=5, max_length=2)
    with pytest.raises(MalformedDocument):
        ConstraintSet(minimum=3, maximum=1)


@given(st.integers(0, 50), st.integers(0, 50))
def test_length_bounds_property(a, b):
    lo, hi = min(a, b), max(a, b)
    c = extract_constraints({"type": "string", "minLength": lo, "maxLength": hi})
    assert c.min_length <= c.max_length
