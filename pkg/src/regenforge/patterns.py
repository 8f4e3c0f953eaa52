"""Pattern rules that lift working prototypes into templates.

A rule file is a JSON array of objects::

    [{"name": "msg-name", "scope": "*.py", "match": "Heartbeat",
      "replace": "{{name}}", "order": 10}]

``scope`` is a path glob (``*`` within a segment, ``**`` across segments,
``?`` one character) tested against the prototype's own path. ``replace``
may reference capture groups as ``$1``..``$9`` or ``${name}``; ``$$`` is a
literal dollar sign. Rules run in ``(order, declaration)`` order and each
rewrites every non-overlapping match in both the path and the body.
"""

from __future__ import annotations

import json
import re
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from typing import Any, Union

from .errors import (
    BadGroupReference,
    DuplicateRuleName,
    IllFormedTemplate,
    RegenError,
    RuleSyntaxError,
)
from .nanovc import ContentArea
from .templating import Template, Var, parse_template, render

DEFAULT_LABEL_TOKEN = r"[A-Za-z_][A-Za-z0-9_]*"

_RULE_KEYS = {"name", "scope", "match", "replace", "order"}
_GROUP_REF = re.compile(r"\$\$|\$([1-9])|\$\{([A-Za-z_][A-Za-z0-9_]*|[0-9]+)\}")


def glob_to_regex(glob: str) -> re.Pattern:
    out, i = [], 0
    while i < len(glob):
        if glob.startswith("**/", i):
            out.append("(?:.*/)?")
            i += 3
        elif glob.startswith("**", i):
            out.append(".*")
            i += 2
        elif glob[i] == "*":
            out.append("[^/]*")
            i += 1
        elif glob[i] == "?":
            out.append("[^/]")
            i += 1
        else:
            out.append(re.escape(glob[i]))
            i += 1
    return re.compile("".join(out), re.DOTALL)


def glob_match(glob: str, path: str) -> bool:
    return glob_to_regex(glob).fullmatch(path) is not None


ReplacePart = Union[str, int]


def _parse_replacement(replace: str, regex: re.Pattern, line: int | None) -> tuple[ReplacePart, ...]:
    parts: list[ReplacePart] = []
    pos = 0
    for m in _GROUP_REF.finditer(replace):
        parts.append(replace[pos:m.start()])
        pos = m.end()
        if m.group() == "$$":
            parts.append("$")
            continue
        ref = m.group(1) or m.group(2)
        if ref.isdigit():
            group = int(ref)
            if group > regex.groups:
                raise BadGroupReference(
                    f"replacement references group {group} but the pattern has {regex.groups}", line
                )
        else:
            if ref not in regex.groupindex:
                raise BadGroupReference(f"replacement references unknown group {ref!r}", line)
            group = regex.groupindex[ref]
        parts.append(group)
    parts.append(replace[pos:])
    return tuple(p for p in parts if p != "")


@dataclass(frozen=True)
class PatternRule:
    name: str
    match: re.Pattern
    replace: str
    scope: str = "**"
    order: int = 0
    index: int = 0
    line: int | None = field(default=None, compare=False)
    _parts: tuple = field(default=(), compare=False, repr=False)

    @classmethod
    def create(
        cls,
        name: str,
        match: str,
        replace: str,
        scope: str = "**",
        order: int = 0,
        index: int = 0,
        line: int | None = None,
    ) -> PatternRule:
        try:
            regex = re.compile(match)
        except re.error as exc:
            raise RuleSyntaxError(f"rule {name!r}: bad regular expression: {exc}", line) from exc
        parts = _parse_replacement(replace, regex, line)
        return cls(name, regex, replace, scope, order, index, line, parts)

    def applies_to(self, path: str) -> bool:
        return glob_match(self.scope, path)

    def rewrite(self, text: str) -> str:
        parts = self._parts

        def expand(m: re.Match) -> str:
            return "".join(p if isinstance(p, str) else (m.group(p) or "") for p in parts)

        return self.match.sub(expand, text)


def _line_of(source: str, offset: int) -> int:
    return source.count("\n", 0, offset) + 1


def _skip_ws(source: str, pos: int) -> int:
    while pos < len(source) and source[pos] in " \t\r\n":
        pos += 1
    return pos


def _rule_from_obj(obj: Any, index: int, line: int) -> PatternRule:
    if not isinstance(obj, dict):
        raise RuleSyntaxError("each rule must be a JSON object", line)
    unknown = set(obj) - _RULE_KEYS
    if unknown:
        raise RuleSyntaxError(f"unknown rule keys: {sorted(unknown)}", line)
    for key in ("name", "match", "replace"):
        if not isinstance(obj.get(key), str):
            raise RuleSyntaxError(f"rule key {key!r} must be a string", line)
    if not obj["name"]:
        raise RuleSyntaxError("rule name must be non-empty", line)
    scope = obj.get("scope", "**")
    order = obj.get("order", 0)
    if not isinstance(scope, str) or not scope:
        raise RuleSyntaxError("rule key 'scope' must be a non-empty string", line)
    if isinstance(order, bool) or not isinstance(order, int):
        raise RuleSyntaxError("rule key 'order' must be an integer", line)
    return PatternRule.create(obj["name"], obj["match"], obj["replace"], scope, order, index, line)


def compile_rules(source: str | bytes) -> list[PatternRule]:
    """Parse and compile a rule file; returns rules sorted by (order, declaration)."""
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    decoder = json.JSONDecoder()
    pos = _skip_ws(source, 0)
    if pos == len(source):
        return []
    if source[pos] != "[":
        raise RuleSyntaxError("rule file must be a JSON array", _line_of(source, pos))
    pos = _skip_ws(source, pos + 1)
    rules: list[PatternRule] = []
    names: set[str] = set()
    if pos < len(source) and source[pos] == "]":
        pos += 1
    else:
        while True:
            line = _line_of(source, pos)
            try:
                obj, pos = decoder.raw_decode(source, pos)
            except json.JSONDecodeError as exc:
                raise RuleSyntaxError(exc.msg, exc.lineno) from exc
            rule = _rule_from_obj(obj, len(rules), line)
            if rule.name in names:
                raise DuplicateRuleName(f"duplicate rule name {rule.name!r}", line)
            names.add(rule.name)
            rules.append(rule)
            pos = _skip_ws(source, pos)
            if pos < len(source) and source[pos] == ",":
                pos = _skip_ws(source, pos + 1)
                continue
            if pos < len(source) and source[pos] == "]":
                pos += 1
                break
            raise RuleSyntaxError("expected ',' or ']'", _line_of(source, pos))
    if _skip_ws(source, pos) != len(source):
        raise RuleSyntaxError("trailing content after rule array", _line_of(source, pos))
    return sorted(rules, key=lambda r: (r.order, r.index))


# -- derivation ------------------------------------------------------------


@dataclass(frozen=True)
class TemplateFile:
    source_path: str
    path: Template
    body: Template


def derive_template(proto_file: tuple[str, str], rules: Sequence[PatternRule]) -> TemplateFile:
    """Rewrite one prototype file into a template.

    Scope is tested against the prototype's original path, so a rule that
    renames the file cannot change which later rules apply to it.
    """
    src_path, body = proto_file
    path = src_path
    for rule in rules:
        if rule.applies_to(src_path):
            path = rule.rewrite(path)
            body = rule.rewrite(body)
    try:
        return TemplateFile(src_path, parse_template(path), parse_template(body))
    except IllFormedTemplate as exc:
        raise IllFormedTemplate(f"{src_path}: {exc}") from exc


# -- verification ----------------------------------------------------------


@dataclass(frozen=True)
class WorkingPrototype:
    files: ContentArea
    seed: Any
    label_token: str = DEFAULT_LABEL_TOKEN


def seed_scopes(seed: Any) -> list[dict]:
    """Outer scopes for rendering against a seed: ``root`` is ``seed['root']`` if given, else the seed."""
    if isinstance(seed, dict) and "root" in seed:
        return [{"root": seed["root"]}]
    return [{"root": seed}]


def first_divergence(a: str, b: str) -> int | None:
    if a == b:
        return None
    n = min(len(a), len(b))
    for i in range(n):
        if a[i] != b[i]:
            return i
    return n


@dataclass(frozen=True)
class FileCheck:
    path: str
    passed: bool
    template: TemplateFile | None = None
    rendered_path: str | None = None
    rendered: str | None = None
    divergence: int | None = None
    path_divergence: int | None = None
    error: str | None = None
    label_errors: tuple[str, ...] = ()

    def describe(self) -> str:
        if self.passed:
            return f"ok    {self.path}"
        if self.error:
            return f"FAIL  {self.path}: {self.error}"
        bits = []
        if self.divergence is not None:
            bits.append(f"body diverges at offset {self.divergence}")
        if self.path_divergence is not None:
            bits.append(f"path renders as {self.rendered_path!r}")
        bits += self.label_errors
        return f"FAIL  {self.path}: " + "; ".join(bits)

    def to_dict(self) -> dict:
        return {
            "path": self.path,
            "passed": self.passed,
            "rendered_path": self.rendered_path,
            "divergence": self.divergence,
            "path_divergence": self.path_divergence,
            "error": self.error,
            "label_errors": list(self.label_errors),
        }


@dataclass(frozen=True)
class VerificationReport:
    files: tuple[FileCheck, ...] = ()

    @property
    def passed(self) -> bool:
        return all(f.passed for f in self.files)

    @property
    def failures(self) -> list[FileCheck]:
        return [f for f in self.files if not f.passed]

    def to_dict(self) -> dict:
        return {"passed": self.passed, "files": [f.to_dict() for f in self.files]}


def _check_file(path: str, raw: bytes, proto: WorkingPrototype, rules: Sequence[PatternRule]) -> FileCheck:
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        return FileCheck(path, False, error=f"not UTF-8 text ({exc})")
    try:
        tf = derive_template((path, text), rules)
    except IllFormedTemplate as exc:
        return FileCheck(path, False, error=str(exc))
    scopes = seed_scopes(proto.seed)
    trace: list = []
    try:
        rendered_path = render(tf.path, proto.seed, scopes, trace)
        rendered = render(tf.body, proto.seed, scopes, trace)
    except RegenError as exc:
        return FileCheck(path, False, tf, error=f"render failed: {exc}")
    label = re.compile(proto.label_token)
    label_errors = tuple(
        sorted({
            f"{{{{{node.path}}}}} substitutes {value!r}, not a valid label"
            for node, value in trace
            if isinstance(node, Var) and isinstance(value, str) and not label.fullmatch(value)
        })
    )
    divergence = first_divergence(rendered, text)
    path_divergence = first_divergence(rendered_path, path)
    passed = divergence is None and path_divergence is None and not label_errors
    return FileCheck(
        path, passed, tf, rendered_path, rendered, divergence, path_divergence, None, label_errors
    )


def verify_prototype(proto: WorkingPrototype, rules: Sequence[PatternRule]) -> VerificationReport:
    """Check that every prototype file survives derive -> render(seed) byte-exact.

    Text values substituted through ``{{...}}`` must also match the
    prototype's label token; ``#{...}`` expressions are exempt.
    """
    return VerificationReport(
        tuple(_check_file(p, raw, proto, rules) for p, raw in proto.files.items())
    )


def derive_all(files: ContentArea, rules: Iterable[PatternRule]) -> list[TemplateFile]:
    rules = list(rules)
    return [derive_template((p, raw.decode("utf-8")), rules) for p, raw in files.items()]
