"""Turn completions into test suites, and scaffold suites from TSL without a model."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Iterable, Sequence
from urllib.parse import quote, urlencode

import yaml

from .errors import (
    DuplicateCaseId,
    ExtractionEmpty,
    IncompleteSuite,
    MissingCases,
    TruncatedCompletion,
    UnknownFramework,
)
from .templating import check_placeholders, default_template_root, render
from .tsl import ArrayMatcher, Exact, Matcher, NonEmpty, ObjectMatcher, TslCase, TslDocument, TypeIs


@dataclass(frozen=True)
class TestFile:
    __test__ = False  # not a pytest class

    file_name: str
    group: str
    content: str
    case_ids: tuple = ()


@dataclass(frozen=True)
class ManifestEntry:
    file_name: str
    test_name: str


@dataclass
class TestSuite:
    __test__ = False

    files: list = field(default_factory=list)
    framework_key: str = ""
    manifest: dict = field(default_factory=dict)  # case_id -> ManifestEntry

    def manifest_json(self) -> str:
        data = {cid: {"file": e.file_name, "test_name": e.test_name} for cid, e in self.manifest.items()}
        return json.dumps(data, indent=2, ensure_ascii=False) + "\n"


@dataclass
class ExtractionReport:
    blocks_found: int = 0
    blocks_used: int = 0
    discarded_reasons: list = field(default_factory=list)


# -- case ids -----------------------------------------------------------------


@lru_cache(maxsize=4096)
def _id_regex(case_id: str) -> re.Pattern:
    # TC1 must not match inside TC10 or XTC1
    return re.compile(rf"(?<![A-Za-z0-9]){re.escape(case_id)}(?![0-9])")


def _ascii_alnum(ch: str) -> bool:
    return ch.isascii() and ch.isalnum()


def contains_case_id(text: str, case_id: str) -> bool:
    """Same rule as ``_id_regex`` without compiling a pattern per id."""
    n = len(case_id)
    start = text.find(case_id)
    while start != -1:
        before = text[start - 1] if start else ""
        after = text[start + n:start + n + 1]
        if not _ascii_alnum(before) and not (after.isascii() and after.isdigit()):
            return True
        start = text.find(case_id, start + 1)
    return False


def find_test_name(content: str, case_id: str) -> str:
    """Longest identifier in ``content`` that starts with ``case_id``."""
    pattern = re.compile(rf"(?<![A-Za-z0-9]){re.escape(case_id)}(?![0-9])\w*")
    names = pattern.findall(content)
    return max(names, key=len) if names else case_id


def safe_name(text: str) -> str:
    return re.sub(r"[^0-9A-Za-z_]", "_", text) or "untagged"


def test_name_for(case: TslCase) -> str:
    if not case.name:
        return safe_name(case.id)
    return safe_name(f"{case.id}_{case.name.replace(' ', '_')}")


# -- extraction ---------------------------------------------------------------


def fenced_blocks(content: str) -> tuple[list[str], list[str], list[str]]:
    """Split into (fenced blocks, prose outside fences, warnings)."""
    blocks, outside, notes = [], [], []
    current: list[str] | None = None
    fence = ""
    for line in content.splitlines():
        stripped = line.strip()
        if current is None and (stripped.startswith("```") or stripped.startswith("~~~")):
            fence = stripped[:3]
            current = []
        elif current is not None and stripped.startswith(fence) and stripped.strip(fence[0]) == "":
            blocks.append("\n".join(current))
            current = None
        elif current is not None:
            current.append(line)
        else:
            outside.append(line)
    if current is not None:
        blocks.append("\n".join(current))
        notes.append("last code fence was never closed")
    return blocks, outside, notes


_CODE_CHARS = re.compile(r"[{}();=<>\[\]]")


def _is_prose(line: str) -> bool:
    s = line.strip()
    if not s or _CODE_CHARS.search(s) or s.startswith(("//", "#", "/*", "*", "@")):
        return False
    return bool(re.match(r"[A-Za-z]", s)) and len(s.split()) >= 3 and s[-1] in ".:!?"


def _unfenced_runs(content: str) -> tuple[list[str], int]:
    runs, current, prose = [], [], 0
    for line in content.splitlines():
        if _is_prose(line):
            prose += 1
            if any(x.strip() for x in current):
                runs.append("\n".join(current).strip("\n"))
            current = []
        else:
            current.append(line)
    if any(x.strip() for x in current):
        runs.append("\n".join(current).strip("\n"))
    return runs, prose


def _segment_parts(segment) -> tuple[str, list[str]]:
    if hasattr(segment, "case_ids"):
        return segment.group, list(segment.case_ids)
    group, ids = segment
    return group, list(ids)


def extract_test_code(completion, segment) -> tuple[list[TestFile], ExtractionReport]:
    content = completion if isinstance(completion, str) else completion.content
    if getattr(completion, "truncated", False):
        raise TruncatedCompletion("completion was cut at the output-token limit")
    group, ids = _segment_parts(segment)
    report = ExtractionReport()

    blocks, outside, notes = fenced_blocks(content)
    report.discarded_reasons.extend(notes)
    if blocks:
        if any(line.strip() for line in outside):
            report.discarded_reasons.append(
                f"discarded {sum(1 for x in outside if x.strip())} line(s) outside code fences")
    else:
        runs, prose = _unfenced_runs(content)
        with_ids = [r for r in runs if any(contains_case_id(r, cid) for cid in ids)]
        if with_ids:
            best = max(with_ids, key=len)
            blocks = [best]
            if prose:
                report.discarded_reasons.append(f"discarded {prose} prose line(s) around unfenced code")
            dropped = len(runs) - 1
            if dropped:
                report.discarded_reasons.append(f"discarded {dropped} other unfenced block(s)")
    report.blocks_found = len(blocks)

    files: list[TestFile] = []
    stem = safe_name(group)
    for index, block in enumerate(blocks, 1):
        found = tuple(cid for cid in ids if contains_case_id(block, cid))
        if not found:
            report.discarded_reasons.append(f"block {index} names no case id of this segment")
            continue
        text = block.strip("\n") + "\n"
        files.append(TestFile(f"{stem}{len(files) + 1}.tests", group, text, found))
    report.blocks_used = len(files)

    if not files:
        raise ExtractionEmpty(f"no usable code block for group {group!r}")
    covered = {cid for f in files for cid in f.case_ids}
    missing = [cid for cid in ids if cid not in covered]
    if missing:
        raise MissingCases(missing)
    return files, report


def merge_segments(per_segment: Sequence[Sequence[TestFile]], doc: TslDocument, framework_key: str = "") -> TestSuite:
    known = set(doc.ids)
    owner: dict[str, ManifestEntry] = {}
    files: list[TestFile] = []
    names: set[str] = set()
    for seg_index, seg_files in enumerate(per_segment, 1):
        for f in seg_files:
            name = f.file_name
            if name in names:
                stem, dot, ext = name.rpartition(".")
                name = f"{stem}_{seg_index}.{ext}" if dot else f"{name}_{seg_index}"
            names.add(name)
            f = TestFile(name, f.group, f.content, f.case_ids)
            files.append(f)
            for cid in f.case_ids:
                if cid in owner:
                    raise DuplicateCaseId(f"{cid} claimed by {owner[cid].file_name} and {name}")
                owner[cid] = ManifestEntry(name, find_test_name(f.content, cid))
    missing = [cid for cid in doc.ids if cid not in owner]
    if missing:
        raise IncompleteSuite(f"no test code for: {', '.join(missing)}")
    manifest = {cid: owner[cid] for cid in doc.ids if cid in known}
    return TestSuite(files=files, framework_key=framework_key, manifest=manifest)


# -- frameworks ---------------------------------------------------------------

_STATEMENT_KEYS = {
    "bind": {"var", "call"},
    "setup_hook": {"text", "bindings"},
    "setup_binding": {"name_literal", "var"},
    "request": {"method", "url"},
    "request_with_body": {"method", "url", "body"},
    "header": {"name", "value"},
    "act": set(),
    "status": {"status"},
    "read_body": set(),
    "nonempty_string": {"path"},
    "nonempty_array": {"path"},
    "exact": {"path", "json", "literal"},
    "exact_var": {"path", "var"},
    "array_length": {"path", "n"},
}


@dataclass(frozen=True)
class Framework:
    key: str
    display_name: str
    literal_style: str
    comment: str
    indent: str
    test_separator: str
    markers: dict
    unique_email_call: str
    statements: dict
    body_root: str
    index_field: str
    index_item: str
    kinds: dict
    file_template: str
    test_template: str


def available_frameworks(root: Path | None = None) -> list[str]:
    base = (root or default_template_root()) / "frameworks"
    return sorted(p.name for p in base.iterdir() if (p / "framework.yaml").is_file())


def load_framework(key: str, root: Path | None = None) -> Framework:
    base = (root or default_template_root()) / "frameworks" / key
    meta_path = base / "framework.yaml"
    if not meta_path.is_file():
        raise UnknownFramework(key)
    meta = yaml.safe_load(meta_path.read_text(encoding="utf-8"))
    file_t = (base / "file.tmpl").read_text(encoding="utf-8")
    test_t = (base / "test.tmpl").read_text(encoding="utf-8")
    check_placeholders(file_t, {"class_name", "group", "tests"}, f"{key}/file.tmpl")
    check_placeholders(test_t, {"test_name", "case_id", "arrange", "act", "assert"}, f"{key}/test.tmpl")
    statements = meta["statements"]
    for name, allowed in _STATEMENT_KEYS.items():
        if name not in statements:
            raise UnknownFramework(f"{key}: statement template {name!r} missing")
        check_placeholders(statements[name], allowed, f"{key}/statements.{name}")
    for kind, tmpl in meta["kinds"].items():
        check_placeholders(tmpl, {"path"}, f"{key}/kinds.{kind}")
    if meta["literal_style"] not in _LITERALS:
        raise UnknownFramework(f"{key}: unknown literal style {meta['literal_style']!r}")
    return Framework(
        key=key,
        display_name=meta["display_name"],
        literal_style=meta["literal_style"],
        comment=meta["comment"],
        indent=meta["indent"],
        test_separator=meta.get("test_separator", "\n\n"),
        markers=dict(meta["markers"]),
        unique_email_call=meta["unique_email_call"],
        statements=dict(statements),
        body_root=meta["body_root"],
        index_field=meta["index_field"],
        index_item=meta["index_item"],
        kinds=dict(meta["kinds"]),
        file_template=file_t,
        test_template=test_t,
    )


# -- literals -----------------------------------------------------------------


class _Var(str):
    """A variable reference emitted verbatim instead of as a literal."""


def _escape_chars(s: str, style: str, comment: str) -> str:
    out = []
    for ch in s:
        code = ord(ch)
        if ch == "\\":
            out.append("\\\\")
        elif ch == '"':
            out.append('\\"')
        elif ch == "\n":
            out.append("\\n")
        elif ch == "\r":
            out.append("\\r")
        elif ch == "\t":
            out.append("\\t")
        elif code < 0x20 or 0x7F <= code <= 0x9F or code in (0x2028, 0x2029) or 0xD800 <= code <= 0xDFFF:
            out.append(f"\\u{code:04X}" if style == "csharp" else f"\\u{code:04x}")
        else:
            out.append(ch)
    text = "".join(out)
    # keep the AAA comment markers unique: never let a string literal spell the comment token
    if comment == "//":
        text = text.replace("//", "/\\u002F")
    elif comment == "#":
        text = text.replace("#", "\\x23")
    return text


def _str_literal(s: str, fw: Framework) -> str:
    return '"' + _escape_chars(s, fw.literal_style, fw.comment) + '"'


def _num_literal(v) -> str:
    if isinstance(v, float):
        if v != v or v in (float("inf"), float("-inf")):
            raise ValueError("non-finite numbers have no JSON literal")
        return repr(v)
    return str(v)


def _csharp_literal(value: Any, fw: Framework, nested: bool = False) -> str:
    if isinstance(value, _Var):
        return str(value)
    if value is None:
        return "(JsonNode?)null" if nested else "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return _num_literal(value)
    if isinstance(value, str):
        return _str_literal(value, fw)
    if isinstance(value, list):
        return "new JsonArray(" + ", ".join(_csharp_literal(v, fw, True) for v in value) + ")"
    if isinstance(value, dict):
        if not value:
            return "new JsonObject()"
        body = ", ".join(f"[{_str_literal(str(k), fw)}] = {_csharp_literal(v, fw)}" for k, v in value.items())
        return "new JsonObject { " + body + " }"
    raise TypeError(f"no literal for {type(value).__name__}")


def _python_literal(value: Any, fw: Framework, nested: bool = False) -> str:
    if isinstance(value, _Var):
        return str(value)
    if value is None:
        return "None"
    if isinstance(value, bool):
        return "True" if value else "False"
    if isinstance(value, (int, float)):
        return _num_literal(value)
    if isinstance(value, str):
        return _str_literal(value, fw)
    if isinstance(value, list):
        return "[" + ", ".join(_python_literal(v, fw, True) for v in value) + "]"
    if isinstance(value, dict):
        return "{" + ", ".join(f"{_str_literal(str(k), fw)}: {_python_literal(v, fw, True)}"
                               for k, v in value.items()) + "}"
    raise TypeError(f"no literal for {type(value).__name__}")


_LITERALS = {"csharp": _csharp_literal, "python": _python_literal}


def literal(value: Any, fw: Framework) -> str:
    return _LITERALS[fw.literal_style](value, fw)


# -- scaffolding --------------------------------------------------------------

_EMAIL_VALUE = re.compile(r"^[^@\s'\"]+@[^@\s'\"]+\.[A-Za-z]{2,}$")
_EMAIL_IN_TEXT = re.compile(r"[\w.+-]+@[\w-]+(?:\.[\w-]+)*\.[A-Za-z]{2,}")


def _walk_strings(value: Any) -> Iterable[str]:
    if isinstance(value, str):
        yield value
    elif isinstance(value, dict):
        for v in value.values():
            yield from _walk_strings(v)
    elif isinstance(value, list):
        for v in value:
            yield from _walk_strings(v)


def _swap(value: Any, bindings: dict) -> Any:
    if isinstance(value, str) and value in bindings:
        return _Var(bindings[value])
    if isinstance(value, dict):
        return {k: _swap(v, bindings) for k, v in value.items()}
    if isinstance(value, list):
        return [_swap(v, bindings) for v in value]
    return value


def unique_bindings(case: TslCase) -> dict:
    """Email literals in the case mapped to variable names, in first-use order."""
    found: list[str] = []
    for source in (case.request_body, case.headers, case.query_params):
        for s in _walk_strings(source):
            if _EMAIL_VALUE.match(s) and s not in found:
                found.append(s)
    for text in case.preconditions:
        for s in _EMAIL_IN_TEXT.findall(text):
            if s not in found:
                found.append(s)
    return {email: ("email" if i == 0 else f"email{i + 1}") for i, email in enumerate(found)}


def _url(case: TslCase) -> str:
    url = case.endpoint
    for name, value in (case.path_params or {}).items():
        url = url.replace("{" + name + "}", quote(str(value), safe=""))
    if case.query_params:
        query = urlencode([(k, "" if v is None else str(v).lower() if isinstance(v, bool) else str(v))
                           for k, v in case.query_params.items()])
        url = f"{url}?{query}"
    return url


def _lines(stmt: str) -> list[str]:
    return stmt.split("\n")


def _assertions(matcher: Matcher, path: str, fw: Framework, bindings: dict) -> list[str]:
    st = fw.statements
    if isinstance(matcher, ObjectMatcher):
        out = []
        for name, sub in matcher.fields.items():
            child = render(fw.index_field, path=path, key=_str_literal(name, fw))
            out.extend(_assertions(sub, child, fw, bindings))
        if not matcher.fields:
            out.append(render(fw.kinds["object"], path=path))
        return out
    if isinstance(matcher, ArrayMatcher):
        out = [render(st["array_length"], path=path, n=len(matcher.items))]
        for i, sub in enumerate(matcher.items):
            out.extend(_assertions(sub, render(fw.index_item, path=path, index=i), fw, bindings))
        return out
    if isinstance(matcher, NonEmpty):
        return [render(st["nonempty_" + matcher.kind], path=path)]
    if isinstance(matcher, TypeIs):
        return [render(fw.kinds[matcher.kind], path=path)]
    if isinstance(matcher, Exact) and isinstance(matcher.value, str) and matcher.value in bindings:
        # the request sent a generated value, so the echo must be compared to it
        return [render(st["exact_var"], path=path, var=bindings[matcher.value])]
    if isinstance(matcher, Exact):
        as_json = json.dumps(matcher.value, ensure_ascii=False, separators=(",", ":"))
        return [render(st["exact"], path=path, json=_str_literal(as_json, fw),
                       literal=literal(matcher.value, fw))]
    raise TypeError(matcher)


def _section(marker: str, statements: list[str], fw: Framework) -> str:
    lines = [marker]
    for stmt in statements:
        lines.extend(_lines(stmt))
    return "\n".join(fw.indent + line if line else "" for line in lines)


def scaffold_case(case: TslCase, fw: Framework) -> str:
    st = fw.statements
    bindings = unique_bindings(case)
    arrange: list[str] = []
    for email, var in bindings.items():
        arrange.append(render(st["bind"], var=var, call=fw.unique_email_call))
    for text in case.preconditions:
        used = []
        for email, var in bindings.items():
            if email in text:
                text = text.replace(email, "{" + var + "}")
                used.append(var)
        extra = "".join(render(st["setup_binding"], name_literal=_str_literal(v, fw), var=v) for v in used)
        arrange.append(render(st["setup_hook"], text=_str_literal(text, fw), bindings=extra))

    method, url = _str_literal(case.method, fw), _str_literal(_url(case), fw)
    if case.request_body is not None:
        body = literal(_swap(case.request_body, bindings), fw)
        arrange.append(render(st["request_with_body"], method=method, url=url, body=body))
    else:
        arrange.append(render(st["request"], method=method, url=url))
    for name, value in (case.headers or {}).items():
        value = _swap(value, bindings)
        rendered = value if isinstance(value, _Var) else literal("" if value is None else str(value), fw)
        arrange.append(render(st["header"], name=_str_literal(str(name), fw), value=rendered))

    asserts = [render(st["status"], status=case.expected_response.status_code)]
    if case.expected_response.body is not None:
        asserts.append(st["read_body"])
        asserts.extend(_assertions(case.expected_response.body, fw.body_root, fw, bindings))

    return render(
        fw.test_template,
        test_name=test_name_for(case),
        case_id=case.id,
        arrange=_section(fw.markers["arrange"], arrange, fw),
        act=_section(fw.markers["act"], [st["act"]], fw),
        **{"assert": _section(fw.markers["assert"], asserts, fw)},
    ).rstrip("\n")


def _class_name(group: str) -> str:
    words = re.split(r"[^0-9A-Za-z]+", group)
    name = "".join(w[:1].upper() + w[1:] for w in words if w) or "Untagged"
    if name[0].isdigit():
        name = "_" + name
    return name + "Tests"


def scaffold_fallback_tests(doc: TslDocument, framework_key: str, template_root: Path | None = None) -> TestSuite:
    fw = load_framework(framework_key, template_root)
    groups: dict[str, list[TslCase]] = {}
    for case in doc.cases:
        groups.setdefault(case.group, []).append(case)

    files, manifest = [], {}
    used: set[str] = set()
    for group, cases in groups.items():
        name = f"{safe_name(group)}1.tests"
        k = 1
        while name in used:  # distinct groups may sanitize to the same stem
            k += 1
            name = f"{safe_name(group)}{k}.tests"
        used.add(name)
        tests = fw.test_separator.join(scaffold_case(c, fw) for c in cases)
        content = render(fw.file_template, class_name=_class_name(group), group=group, tests=tests)
        files.append(TestFile(name, group, content, tuple(c.id for c in cases)))
        for c in cases:
            manifest[c.id] = ManifestEntry(name, test_name_for(c))
    manifest = {cid: manifest[cid] for cid in doc.ids}
    return TestSuite(files=files, framework_key=framework_key, manifest=manifest)
