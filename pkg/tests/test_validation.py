import pytest

from resttsl.openapi_model import parse_openapi
from resttsl.tsl import ArrayMatcher, ExpectedResponse, NonEmpty, ObjectMatcher, TslCase, TslDocument, TypeIs, parse_tsl
from resttsl.validation import has_errors, match_path, parse_and_validate, validate_against_spec

from tests.conftest import fixture_text


def _case(**kw):
    base = dict(id="TC1", endpoint="/api/todos", method="GET", expected_response=ExpectedResponse(200))
    base.update(kw)
    return TslCase(**base)


def _codes(issues):
    return [(i.case_id, i.severity, i.code) for i in issues]


def test_listing1_is_clean(todo_api, listing1_text):
    assert validate_against_spec(parse_tsl(listing1_text), todo_api) == []


def test_unknown_endpoint(todo_api):
    issues = validate_against_spec(TslDocument((_case(endpoint="/nope"),)), todo_api)
    assert _codes(issues) == [("TC1", "error", "UnknownEndpoint")]


def test_undeclared_status(todo_api):
    issues = validate_against_spec(TslDocument((_case(expected_response=ExpectedResponse(418)),)), todo_api)
    assert _codes(issues) == [("TC1", "error", "UndeclaredStatus")]


def test_method_mismatch(todo_api):
    issues = validate_against_spec(TslDocument((_case(method="PATCH"),)), todo_api)
    assert _codes(issues) == [("TC1", "error", "MethodMismatch")]


def test_concrete_path_matches_template(todo_api):
    assert [ep.path for ep in match_path(todo_api, "/api/todos/42")] == ["/api/todos/{id}"] * 3
    assert [ep.path for ep in match_path(todo_api, "/api/todos?page=2")] == ["/api/todos"] * 2


def test_unknown_body_field(todo_api, listing1_text):
    case = parse_tsl(listing1_text).cases[0]
    body = ObjectMatcher({**case.expected_response.body.fields, "sessionId": NonEmpty("string")})
    bad = _case(id="TC2", endpoint=case.endpoint, method="POST", request_body=case.request_body,
                expected_response=ExpectedResponse(200, body))
    issues = validate_against_spec(TslDocument((bad,)), todo_api)
    assert _codes(issues) == [("TC2", "error", "UnknownBodyField")]
    assert "sessionId" in issues[0].message


def test_missing_required_request_field_is_warning(todo_api):
    case = _case(endpoint="/api/accounts/tokens", method="POST", request_body={"email": "a@b.co"})
    issues = validate_against_spec(TslDocument((case,)), todo_api)
    assert _codes(issues) == [("TC1", "warning", "MissingRequiredField")]
    assert not has_errors(issues)


def test_body_without_schema_is_warning():
    api = parse_openapi(fixture_text("openapi", "ping.yaml"))
    case = _case(endpoint="/ping", expected_response=ExpectedResponse(200, ObjectMatcher({"x": TypeIs("string")})))
    assert _codes(validate_against_spec(TslDocument((case,)), api)) == [("TC1", "warning", "UnknownBodyField")]


def test_array_items_checked(todo_api):
    body = ArrayMatcher((ObjectMatcher({"nope": TypeIs("string")}),))
    issues = validate_against_spec(TslDocument((_case(expected_response=ExpectedResponse(200, body)),)), todo_api)
    assert [i.code for i in issues] == ["UnknownBodyField"]


def test_parse_and_validate_reports_document_issues(todo_api):
    doc, issues = parse_and_validate("- {id: TC1, endpoint: /x, method: GET, expected_response: "
                                     "{status_code: 200, body: {a: is thing}}}", todo_api)
    assert doc is None and _codes(issues) == [("-", "error", "MatcherSyntax")]
    one = "- {id: TC1, endpoint: /api/todos, method: GET, expected_response: {status_code: 200}}\n"
    doc, issues = parse_and_validate(one * 2, todo_api)
    assert doc is None and _codes(issues) == [("-", "error", "DuplicateId")]


def test_soundness_on_derived_documents():
    """Zero issues means every (endpoint, method, status) triple is declared."""
    from resttsl.derive import derive_cases_cp

    for name in ("todo-api.yaml", "shop-api.json", "cp-fixture.yaml"):
        api = parse_openapi(fixture_text("openapi", name))
        doc = derive_cases_cp(api)
        issues = validate_against_spec(doc, api)
        ids = set(doc.ids)
        assert all(i.case_id in ids for i in issues)
        if not has_errors(issues):
            for c in doc.cases:
                eps = [ep for ep in match_path(api, c.endpoint) if ep.method == c.method]
                assert eps and c.expected_response.status_code in eps[0].responses


@pytest.mark.parametrize("server", ["https://api.example.com/v1", "/v1"])
def test_server_prefix(server):
    text = fixture_text("openapi", "ping.yaml") + f"servers:\n  - url: {server}\n"
    api = parse_openapi(text)
    assert match_path(api, "/v1/ping") and match_path(api, "/ping")
