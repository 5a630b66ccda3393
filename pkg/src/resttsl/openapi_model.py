"""Parse and normalize the subset of OpenAPI 3.x that drives test generation."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field, replace
from typing import Any, Iterator, Mapping

import yaml

from .errors import DuplicateEndpoint, MalformedDocument, UnknownTag, UnresolvableRef

log = logging.getLogger(__name__)

HTTP_METHODS = ("GET", "PUT", "POST", "DELETE", "PATCH", "HEAD", "OPTIONS", "TRACE")
SCHEMA_KINDS = ("string", "number", "integer", "boolean", "array", "object", "ref")
UNTAGGED = "untagged"

_REF_PREFIX = "#/components/schemas/"
_PARAM_REF_PREFIX = "#/components/parameters/"
_PATH_PARAM_RE = re.compile(r"\{([^}/]+)\}")


@dataclass(frozen=True)
class ConstraintSet:
    required_fields: frozenset = frozenset()
    min_length: int | None = None
    max_length: int | None = None
    pattern: str | None = None
    minimum: float | None = None
    maximum: float | None = None
    enum_values: tuple | None = None
    format: str | None = None

    def __post_init__(self):
        for name in ("min_length", "max_length"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise MalformedDocument(f"{name} must be non-negative, got {value}")
        if self.min_length is not None and self.max_length is not None and self.min_length > self.max_length:
            raise MalformedDocument(f"minLength {self.min_length} exceeds maxLength {self.max_length}")
        if self.minimum is not None and self.maximum is not None and self.minimum > self.maximum:
            raise MalformedDocument(f"minimum {self.minimum} exceeds maximum {self.maximum}")


@dataclass(frozen=True)
class SchemaNode:
    kind: str
    constraints: ConstraintSet = ConstraintSet()
    properties: Mapping[str, "SchemaNode"] = field(default_factory=dict)
    items: "SchemaNode | None" = None
    ref_name: str | None = None

    def __post_init__(self):
        if self.kind not in SCHEMA_KINDS:
            raise MalformedDocument(f"unknown schema kind {self.kind!r}")
        if self.properties and self.kind != "object":
            raise MalformedDocument("properties only allowed on object schemas")
        if self.items is not None and self.kind != "array":
            raise MalformedDocument("items only allowed on array schemas")
        if (self.ref_name is not None) != (self.kind == "ref"):
            raise MalformedDocument("ref_name must be set exactly when kind is ref")


@dataclass(frozen=True)
class ParamDef:
    name: str
    location: str  # path | query | header
    required: bool
    schema: SchemaNode


@dataclass(frozen=True)
class SecurityScheme:
    name: str
    type: str
    scheme: str | None = None
    location: str | None = None
    param_name: str | None = None


@dataclass(frozen=True)
class EndpointDef:
    path: str
    method: str
    operation_id: str | None = None
    tags: tuple = ()
    parameters: tuple = ()
    request_schema: SchemaNode | None = None
    responses: Mapping[int, SchemaNode | None] = field(default_factory=dict)
    security: tuple = ()
    summary: str | None = None

    @property
    def effective_tags(self) -> tuple:
        return self.tags or (UNTAGGED,)

    @property
    def key(self) -> tuple:
        return (self.path, self.method)


@dataclass(frozen=True)
class ApiDocument:
    title: str
    version: str
    servers: tuple = ()
    endpoints: tuple = ()
    schemes: Mapping[str, SecurityScheme] = field(default_factory=dict)
    shared_schemas: Mapping[str, SchemaNode] = field(default_factory=dict)
    warnings: tuple = field(default=(), compare=False)

    def __post_init__(self):
        seen = set()
        for ep in self.endpoints:
            if ep.key in seen:
                raise DuplicateEndpoint(f"{ep.method} {ep.path} declared twice")
            seen.add(ep.key)
        for ref in _endpoint_refs(self.endpoints):
            if ref not in self.shared_schemas:
                raise UnresolvableRef(f"{_REF_PREFIX}{ref}")

    def resolve(self, node: SchemaNode | None) -> SchemaNode | None:
        """Follow ref nodes to the shared schema they name."""
        hops = 0
        while node is not None and node.kind == "ref":
            node = self.shared_schemas[node.ref_name]
            hops += 1
            if hops > len(self.shared_schemas):
                raise UnresolvableRef(f"cyclic reference chain through {node.ref_name}")
        return node

    def find_endpoint(self, path: str, method: str) -> EndpointDef | None:
        for ep in self.endpoints:
            if ep.path == path and ep.method == method.upper():
                return ep
        return None


# ---------------------------------------------------------------------------
# parsing


def parse_openapi(document_text: str) -> ApiDocument:
    raw = _load_text(document_text)
    if not isinstance(raw, dict):
        raise MalformedDocument("OpenAPI document must be a mapping")
    if "swagger" in raw:
        raise MalformedDocument(f"Swagger {raw['swagger']} is not supported; only OpenAPI 3.0/3.1")
    version = str(raw.get("openapi", ""))
    if not (version.startswith("3.0") or version.startswith("3.1")):
        raise MalformedDocument(f"unsupported or missing openapi version {version!r}")

    warnings: list[str] = []
    components = raw.get("components") or {}
    raw_schemas = components.get("schemas") or {}
    if not isinstance(raw_schemas, dict):
        raise MalformedDocument("components.schemas must be a mapping")
    ctx = _Ctx(raw_schemas, components.get("parameters") or {}, warnings)

    shared = {name: ctx.schema(body, f"components.schemas.{name}") for name, body in raw_schemas.items()}

    schemes = {}
    for name, body in (components.get("securitySchemes") or {}).items():
        body = body or {}
        schemes[name] = SecurityScheme(
            name=name,
            type=str(body.get("type", "")),
            scheme=body.get("scheme"),
            location=body.get("in"),
            param_name=body.get("name"),
        )

    default_security = _security_names(raw.get("security") or [])
    endpoints = []
    paths = raw.get("paths") or {}
    if not isinstance(paths, dict):
        raise MalformedDocument("paths must be a mapping")
    for path, item in paths.items():
        if not isinstance(item, dict):
            raise MalformedDocument(f"path item {path} must be a mapping")
        shared_params = item.get("parameters") or []
        for method_name, op in item.items():
            method = method_name.upper()
            if method not in HTTP_METHODS:
                continue
            endpoints.append(_endpoint(ctx, path, method, op or {}, shared_params, default_security))

    for ep in endpoints:
        for scheme in ep.security:
            if scheme not in schemes:
                warnings.append(f"{ep.method} {ep.path}: security scheme {scheme!r} not declared")

    info = raw.get("info") or {}
    servers = tuple(str(s.get("url", "")) for s in raw.get("servers") or [] if isinstance(s, dict))
    return ApiDocument(
        title=str(info.get("title", "")),
        version=str(info.get("version", "")),
        servers=servers,
        endpoints=tuple(endpoints),
        schemes=schemes,
        shared_schemas=shared,
        warnings=tuple(warnings),
    )


def _load_text(text: str) -> Any:
    try:
        return json.loads(text)
    except ValueError:
        pass
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise MalformedDocument(f"document is neither JSON nor YAML: {exc}") from exc


def _security_names(requirements) -> tuple:
    names: list[str] = []
    for req in requirements:
        for name in req or {}:
            if name not in names:
                names.append(name)
    return tuple(names)


class _Ctx:
    def __init__(self, raw_schemas, raw_params, warnings):
        self.raw_schemas = raw_schemas
        self.raw_params = raw_params
        self.warnings = warnings

    def schema(self, raw: Any, where: str) -> SchemaNode:
        if not isinstance(raw, dict):
            raise MalformedDocument(f"{where}: schema must be a mapping")
        if "$ref" in raw:
            return SchemaNode(kind="ref", ref_name=self._ref_target(raw["$ref"]))
        if raw.get("allOf"):
            return self._all_of(raw, where)
        for combinator in ("oneOf", "anyOf"):
            if raw.get(combinator):
                self.warnings.append(f"{where}: {combinator} reduced to its first variant")
                return self.schema(raw[combinator][0], where)

        kind = raw.get("type")
        if isinstance(kind, list):
            kind = next((k for k in kind if k != "null"), None)
        if kind is None:
            if "properties" in raw or "required" in raw:
                kind = "object"
            elif "items" in raw:
                kind = "array"
            else:
                kind = "object"
        if kind not in SCHEMA_KINDS or kind == "ref":
            raise MalformedDocument(f"{where}: unknown type {kind!r}")

        props = {}
        items = None
        if kind == "object":
            for name, sub in (raw.get("properties") or {}).items():
                props[name] = self.schema(sub, f"{where}.{name}")
        elif kind == "array" and raw.get("items") is not None:
            items = self.schema(raw["items"], f"{where}[]")
        try:
            constraints = extract_constraints(raw)
        except MalformedDocument as exc:
            raise MalformedDocument(f"{where}: {exc}") from None
        return SchemaNode(kind=kind, constraints=constraints, properties=props, items=items)

    def _ref_target(self, ref: str) -> str:
        if not isinstance(ref, str) or not ref.startswith(_REF_PREFIX):
            raise UnresolvableRef(f"only local schema refs are supported: {ref!r}")
        name = ref[len(_REF_PREFIX):]
        if name not in self.raw_schemas:
            raise UnresolvableRef(ref)
        return name

    def _raw_deref(self, raw: dict, depth: int = 0) -> dict:
        while "$ref" in raw:
            raw = self.raw_schemas[self._ref_target(raw["$ref"])]
            depth += 1
            if depth > len(self.raw_schemas):
                raise UnresolvableRef("cyclic $ref chain")
        return raw

    def _all_of(self, raw: dict, where: str) -> SchemaNode:
        # shallow merge: properties and required sets of each member, then the host's own keywords
        merged: dict = {"type": "object", "properties": {}, "required": []}
        for member in list(raw["allOf"]) + [{k: v for k, v in raw.items() if k != "allOf"}]:
            member = self._raw_deref(member)
            merged["properties"].update(member.get("properties") or {})
            for name in member.get("required") or []:
                if name not in merged["required"]:
                    merged["required"].append(name)
        return self.schema(merged, where)

    def param(self, raw: dict, where: str) -> ParamDef | None:
        if "$ref" in raw:
            ref = raw["$ref"]
            if not isinstance(ref, str) or not ref.startswith(_PARAM_REF_PREFIX):
                raise UnresolvableRef(f"{where}: unsupported parameter ref {ref!r}")
            name = ref[len(_PARAM_REF_PREFIX):]
            if name not in self.raw_params:
                raise UnresolvableRef(ref)
            raw = self.raw_params[name]
        location = raw.get("in")
        if location not in ("path", "query", "header"):
            return None
        schema_raw = raw.get("schema") or {"type": "string"}
        return ParamDef(
            name=str(raw["name"]),
            location=location,
            required=bool(raw.get("required", location == "path")),
            schema=self.schema(schema_raw, f"{where}.{raw['name']}"),
        )


def _json_schema(content: Any) -> Any:
    if not isinstance(content, dict):
        return None
    media = content.get("application/json")
    if media is None:
        media = next((v for k, v in content.items() if k.endswith("+json")), None)
    if not isinstance(media, dict):
        return None
    return media.get("schema")


def _endpoint(ctx: _Ctx, path: str, method: str, op: dict, shared_params, default_security) -> EndpointDef:
    where = f"{method} {path}"
    params: dict[tuple, ParamDef] = {}
    for raw in list(shared_params) + list(op.get("parameters") or []):
        p = ctx.param(raw, where)
        if p is not None:
            params[(p.name, p.location)] = p
    for name in _PATH_PARAM_RE.findall(path):
        if (name, "path") not in params:
            ctx.warnings.append(f"{where}: path parameter {name!r} undeclared; assuming string")
            params[(name, "path")] = ParamDef(name, "path", True, SchemaNode(kind="string"))

    request_schema = None
    body = op.get("requestBody")
    if isinstance(body, dict):
        raw_schema = _json_schema(body.get("content"))
        if raw_schema is not None:
            request_schema = ctx.schema(raw_schema, f"{where} requestBody")

    responses: dict[int, SchemaNode | None] = {}
    for code, resp in (op.get("responses") or {}).items():
        try:
            status = int(str(code))
        except ValueError:
            continue
        if not 100 <= status <= 599:
            continue
        raw_schema = _json_schema((resp or {}).get("content"))
        responses[status] = ctx.schema(raw_schema, f"{where} {status}") if raw_schema is not None else None
    if not responses:
        raise MalformedDocument(f"{where}: no numeric responses declared")

    security = _security_names(op["security"]) if "security" in op else default_security
    tags = tuple(dict.fromkeys(str(t) for t in op.get("tags") or []))
    return EndpointDef(
        path=path,
        method=method,
        operation_id=op.get("operationId"),
        tags=tags,
        parameters=tuple(params.values()),
        request_schema=request_schema,
        responses=dict(sorted(responses.items())),
        security=security,
        summary=op.get("summary"),
    )


def extract_constraints(schema: SchemaNode | Mapping[str, Any]) -> ConstraintSet:
    """Constraint keywords of a schema; accepts a parsed node or a raw schema mapping."""
    if isinstance(schema, SchemaNode):
        return schema.constraints
    enum = schema.get("enum")
    return ConstraintSet(
        required_fields=frozenset(schema.get("required") or ()),
        min_length=schema.get("minLength"),
        max_length=schema.get("maxLength"),
        pattern=schema.get("pattern"),
        minimum=schema.get("minimum"),
        maximum=schema.get("maximum"),
        enum_values=tuple(enum) if enum is not None else None,
        format=schema.get("format"),
    )


# ---------------------------------------------------------------------------
# tags and slicing


def list_tags(doc: ApiDocument) -> list[str]:
    tags: dict[str, None] = {}
    for ep in doc.endpoints:
        for tag in ep.effective_tags:
            tags.setdefault(tag, None)
    return list(tags)


def iter_refs(node: SchemaNode | None) -> Iterator[str]:
    if node is None:
        return
    if node.kind == "ref":
        yield node.ref_name
    for sub in node.properties.values():
        yield from iter_refs(sub)
    yield from iter_refs(node.items)


def _endpoint_refs(endpoints) -> Iterator[str]:
    for ep in endpoints:
        yield from iter_refs(ep.request_schema)
        for p in ep.parameters:
            yield from iter_refs(p.schema)
        for schema in ep.responses.values():
            yield from iter_refs(schema)


def referenced_schemas(doc: ApiDocument, endpoints) -> list[str]:
    """Names of shared schemas reachable from ``endpoints``, in declaration order."""
    reached: set[str] = set()
    stack = list(_endpoint_refs(endpoints))
    while stack:
        name = stack.pop()
        if name in reached:
            continue
        reached.add(name)
        stack.extend(iter_refs(doc.shared_schemas[name]))
    return [name for name in doc.shared_schemas if name in reached]


def slice_by_tag(doc: ApiDocument, tag: str) -> ApiDocument:
    if tag not in list_tags(doc):
        raise UnknownTag(tag)
    endpoints = tuple(ep for ep in doc.endpoints if tag in ep.effective_tags)
    keep = referenced_schemas(doc, endpoints)
    return replace(
        doc,
        endpoints=endpoints,
        shared_schemas={name: doc.shared_schemas[name] for name in keep},
    )


# ---------------------------------------------------------------------------
# canonical serialization (used as prompt payload)


def schema_to_dict(node: SchemaNode) -> dict:
    if node.kind == "ref":
        return {"$ref": _REF_PREFIX + node.ref_name}
    out: dict[str, Any] = {"type": node.kind}
    c = node.constraints
    if c.format is not None:
        out["format"] = c.format
    if c.enum_values is not None:
        out["enum"] = list(c.enum_values)
    for key, value in (
        ("minLength", c.min_length),
        ("maxLength", c.max_length),
        ("pattern", c.pattern),
        ("minimum", c.minimum),
        ("maximum", c.maximum),
    ):
        if value is not None:
            out[key] = value
    if c.required_fields:
        out["required"] = sorted(c.required_fields)
    if node.properties:
        out["properties"] = {k: schema_to_dict(v) for k, v in node.properties.items()}
    if node.items is not None:
        out["items"] = schema_to_dict(node.items)
    return out


def to_openapi_dict(doc: ApiDocument) -> dict:
    paths: dict[str, dict] = {}
    for ep in doc.endpoints:
        op: dict[str, Any] = {}
        if ep.operation_id:
            op["operationId"] = ep.operation_id
        if ep.summary:
            op["summary"] = ep.summary
        if ep.tags:
            op["tags"] = list(ep.tags)
        if ep.parameters:
            op["parameters"] = [
                {"name": p.name, "in": p.location, "required": p.required, "schema": schema_to_dict(p.schema)}
                for p in ep.parameters
            ]
        if ep.request_schema is not None:
            op["requestBody"] = {"content": {"application/json": {"schema": schema_to_dict(ep.request_schema)}}}
        responses = {}
        for status, schema in ep.responses.items():
            entry: dict[str, Any] = {"description": str(status)}
            if schema is not None:
                entry["content"] = {"application/json": {"schema": schema_to_dict(schema)}}
            responses[str(status)] = entry
        op["responses"] = responses
        op["security"] = [{name: []} for name in ep.security]
        paths.setdefault(ep.path, {})[ep.method.lower()] = op

    out: dict[str, Any] = {"openapi": "3.0.3", "info": {"title": doc.title, "version": doc.version}}
    if doc.servers:
        out["servers"] = [{"url": url} for url in doc.servers]
    out["paths"] = paths
    components: dict[str, Any] = {}
    if doc.shared_schemas:
        components["schemas"] = {k: schema_to_dict(v) for k, v in doc.shared_schemas.items()}
    if doc.schemes:
        schemes = {}
        for name, s in doc.schemes.items():
            entry = {"type": s.type}
            if s.scheme:
                entry["scheme"] = s.scheme
            if s.location:
                entry["in"] = s.location
            if s.param_name:
                entry["name"] = s.param_name
            schemes[name] = entry
        components["securitySchemes"] = schemes
    if components:
        out["components"] = components
    return out


def serialize_openapi(doc: ApiDocument) -> str:
    return yaml.safe_dump(to_openapi_dict(doc), sort_keys=False, allow_unicode=True, default_flow_style=False)
