"""Two-layer template rendering and fusion of hand-written partials.

Layer 1 is mustache-like::

    {{path}}              substitute the scalar at path ({{.}} is the current element)
    {{#path}}...{{/path}} repeat the body once per element of the list at path

Layer 2 is a small path/function language::

    #{order.items[0].total}   #{name.snake()}   #{fields.count()}

Fusion regions are delimited by ``<~region:NAME~>`` / ``<~/region:NAME~>``
markers. Markers are plain text to the renderer, so they survive into the
generated output where :func:`fuse` can find them again.

Data is plain JSON-shaped Python: ``None``, ``bool``, ``int``, ``str``,
``list`` and ``dict``. Floats are rejected.
"""

from __future__ import annotations

import json
import re
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any, NamedTuple, Union

from .errors import (
    DataParseError,
    DuplicateRegion,
    IllFormedTemplate,
    NonScalarSubstitution,
    PathError,
    UnbalancedRegion,
)
from .nanovc import ContentArea

INT64_MIN, INT64_MAX = -(2**63), 2**63 - 1

FUNCS = frozenset({"count", "first", "last", "upper", "lower", "snake", "camel", "pascal"})

PartialSet = dict[tuple[str, str], str]


# -- data records ----------------------------------------------------------


def check_data(value: Any, where: str = "$") -> Any:
    """Validate that ``value`` is a finite DataRecord tree; returns it unchanged."""
    _check(value, where, set())
    return value


def _check(value: Any, where: str, active: set[int]) -> None:
    if value is None or isinstance(value, (bool, str)):
        return
    if isinstance(value, int):
        if not INT64_MIN <= value <= INT64_MAX:
            raise DataParseError(f"{where}: integer {value} outside the 64-bit range")
        return
    if isinstance(value, (list, dict)):
        if id(value) in active:
            raise DataParseError(f"{where}: cyclic data")
        active.add(id(value))
        if isinstance(value, list):
            for i, item in enumerate(value):
                _check(item, f"{where}[{i}]", active)
        else:
            for k, item in value.items():
                if not isinstance(k, str):
                    raise DataParseError(f"{where}: record key {k!r} is not text")
                _check(item, f"{where}.{k}", active)
        active.discard(id(value))
        return
    raise DataParseError(f"{where}: unsupported value of type {type(value).__name__}")


def _no_floats(text: str):
    raise DataParseError(f"non-integral number {text} (real values are not supported)")


def _unique_pairs(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise DataParseError(f"duplicate record key {k!r}")
        out[k] = v
    return out


def load_data(source: str | bytes) -> Any:
    """Parse JSON text into a DataRecord, rejecting reals and duplicate keys."""
    if isinstance(source, bytes):
        try:
            source = source.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DataParseError(f"data is not UTF-8: {exc}") from exc
    try:
        value = json.loads(
            source,
            parse_float=_no_floats,
            parse_constant=_no_floats,
            object_pairs_hook=_unique_pairs,
        )
    except json.JSONDecodeError as exc:
        raise DataParseError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return check_data(value)


def render_scalar(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, str)):
        return str(value)
    raise NonScalarSubstitution(f"cannot substitute a {kind_of(value)}")


def kind_of(value: Any) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "bool"
    if isinstance(value, int):
        return "int"
    if isinstance(value, str):
        return "text"
    if isinstance(value, list):
        return "list"
    if isinstance(value, dict):
        return "record"
    return type(value).__name__


# -- expressions -----------------------------------------------------------


class Step(NamedTuple):
    kind: str  # "key" | "index" | "call"
    arg: Union[str, int]

    def __str__(self) -> str:
        if self.kind == "key":
            return f".{self.arg}"
        if self.kind == "index":
            return f"[{self.arg}]"
        return f".{self.arg}()"


@dataclass(frozen=True)
class Expr:
    head: str  # "." means the current context
    steps: tuple[Step, ...] = ()
    source: str = ""

    def __str__(self) -> str:
        return self.source or self.head + "".join(map(str, self.steps))


_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_INDEX = re.compile(r"\[([0-9]+)\]")


def parse_expr(text: str, allow_calls: bool = True) -> Expr:
    """Parse ``ident step*``. Raises :class:`IllFormedTemplate`."""
    src = text.strip()
    if src == ".":
        return Expr(".", (), ".")
    m = _IDENT.match(src)
    if not m:
        raise IllFormedTemplate(f"expression {text!r} must start with an identifier")
    head, pos, steps = m.group(), m.end(), []
    while pos < len(src):
        if src[pos] == ".":
            m = _IDENT.match(src, pos + 1)
            if not m:
                raise IllFormedTemplate(f"expected identifier after '.' at offset {pos} in {text!r}")
            name, pos = m.group(), m.end()
            if src.startswith("()", pos):
                if not allow_calls:
                    raise IllFormedTemplate(f"function calls are not allowed in {{{{{src}}}}}; use #{{...}}")
                if name not in FUNCS:
                    raise IllFormedTemplate(f"unknown function {name}() in {text!r}")
                steps.append(Step("call", name))
                pos += 2
            else:
                steps.append(Step("key", name))
        elif src[pos] == "[":
            m = _INDEX.match(src, pos)
            if not m:
                raise IllFormedTemplate(f"malformed index at offset {pos} in {text!r}")
            steps.append(Step("index", int(m.group(1))))
            pos = m.end()
        else:
            raise IllFormedTemplate(f"unexpected {src[pos]!r} at offset {pos} in {text!r}")
    return Expr(head, tuple(steps), src)


_WORD = re.compile(r"[A-Z]+(?=[A-Z][a-z])|[A-Z]?[a-z]+|[A-Z]+|[0-9]+")


def split_words(text: str) -> list[str]:
    """Split an identifier into words; acronym runs stay together (``HTTPServer`` -> HTTP, Server)."""
    return _WORD.findall(text)


def to_snake(text: str) -> str:
    return "_".join(w.lower() for w in split_words(text))


def to_pascal(text: str) -> str:
    return "".join(w.capitalize() for w in split_words(text))


def to_camel(text: str) -> str:
    words = split_words(text)
    if not words:
        return ""
    return words[0].lower() + "".join(w.capitalize() for w in words[1:])


_TEXT_FUNCS = {
    "upper": str.upper,
    "lower": str.lower,
    "snake": to_snake,
    "camel": to_camel,
    "pascal": to_pascal,
}


def _lookup_head(expr: Expr, stack: Sequence[Any]) -> Any:
    if expr.head == ".":
        return stack[-1]
    for frame in reversed(stack):
        if isinstance(frame, dict) and expr.head in frame:
            return frame[expr.head]
    raise PathError(f"{expr}: name {expr.head!r} is not defined")


def _apply_step(value: Any, step: Step, expr: Expr) -> Any:
    where = f"{expr}: step '{step}'"
    if step.kind == "key":
        if not isinstance(value, dict):
            raise PathError(f"{where} applied to a {kind_of(value)}")
        if step.arg not in value:
            raise PathError(f"{where}: missing key {step.arg!r}")
        return value[step.arg]
    if step.kind == "index":
        if not isinstance(value, list):
            raise PathError(f"{where} applied to a {kind_of(value)}")
        if step.arg >= len(value):
            raise PathError(f"{where}: index out of bounds (length {len(value)})")
        return value[step.arg]
    name = step.arg
    if name == "count":
        if not isinstance(value, (list, dict, str)):
            raise PathError(f"{where} applied to a {kind_of(value)}")
        return len(value)
    if name in ("first", "last"):
        if not isinstance(value, list):
            raise PathError(f"{where} applied to a {kind_of(value)}")
        if not value:
            raise PathError(f"{where}: list is empty")
        return value[0] if name == "first" else value[-1]
    if not isinstance(value, str):
        raise PathError(f"{where} applied to a {kind_of(value)}")
    return _TEXT_FUNCS[name](value)


def eval_expr(expr: Expr | str, ctx: Any, scopes: Sequence[Any] = ()) -> Any:
    """Evaluate ``expr`` with ``ctx`` as the nearest context.

    Heads not found in ``ctx`` are looked up in ``scopes`` from the last
    (innermost) to the first. Nothing is mutated.
    """
    if isinstance(expr, str):
        expr = parse_expr(expr)
    return _eval(expr, [*scopes, ctx])


def _eval(expr: Expr, stack: Sequence[Any]) -> Any:
    value = _lookup_head(expr, stack)
    for step in expr.steps:
        value = _apply_step(value, step, expr)
    return value


# -- templates -------------------------------------------------------------


@dataclass(frozen=True)
class Text:
    value: str


@dataclass(frozen=True)
class Var:
    path: Expr


@dataclass(frozen=True)
class Section:
    path: Expr
    children: tuple = ()


@dataclass(frozen=True)
class ExprNode:
    expr: Expr


@dataclass(frozen=True)
class RegionMarker:
    name: str
    closing: bool
    text: str


Node = Union[Text, Var, Section, ExprNode, RegionMarker]


@dataclass(frozen=True)
class Template:
    source: str
    nodes: tuple = field(default=(), compare=False)

    def render(self, ctx: Any, scopes: Sequence[Any] = ()) -> str:
        return render(self, ctx, scopes)


_TAG = re.compile(r"\\\{\{|\\#\{|\{\{|#\{")
_MARKER = re.compile(r"<~(/?)region:([A-Za-z_][A-Za-z0-9_.-]*)~>")


def _literal_nodes(text: str) -> list[Node]:
    nodes: list[Node] = []
    pos = 0
    for m in _MARKER.finditer(text):
        if m.start() > pos:
            nodes.append(Text(text[pos:m.start()]))
        nodes.append(RegionMarker(m.group(2), bool(m.group(1)), m.group()))
        pos = m.end()
    if pos < len(text):
        nodes.append(Text(text[pos:]))
    return nodes


def parse_template(text: str) -> Template:
    """Parse template text into nodes. Raises :class:`IllFormedTemplate`."""
    root: list[Node] = []
    # (section path, enclosing node list, section children)
    stack: list[tuple[Expr, list[Node], list[Node]]] = []
    current = root
    buf: list[str] = []
    pos = 0

    def flush() -> None:
        if buf:
            current.extend(_literal_nodes("".join(buf)))
            buf.clear()

    while True:
        m = _TAG.search(text, pos)
        if not m:
            buf.append(text[pos:])
            break
        buf.append(text[pos:m.start()])
        tag = m.group()
        if tag.startswith("\\"):
            buf.append(tag[1:])
            pos = m.end()
            continue
        if tag == "#{":
            end = text.find("}", m.end())
            if end < 0:
                raise IllFormedTemplate(f"unterminated #{{ at offset {m.start()}")
            inner = text[m.end():end]
            if not inner.strip():
                raise IllFormedTemplate(f"empty expression at offset {m.start()}")
            flush()
            current.append(ExprNode(parse_expr(inner)))
            pos = end + 1
            continue
        end = text.find("}}", m.end())
        if end < 0:
            raise IllFormedTemplate(f"unterminated {{{{ at offset {m.start()}")
        inner = text[m.end():end].strip()
        pos = end + 2
        if not inner or inner in ("#", "/"):
            raise IllFormedTemplate(f"empty placeholder at offset {m.start()}")
        flush()
        if inner[0] == "#":
            path = parse_expr(inner[1:], allow_calls=False)
            stack.append((path, current, []))
            current = stack[-1][2]
        elif inner[0] == "/":
            name = parse_expr(inner[1:], allow_calls=False).source
            if not stack:
                raise IllFormedTemplate(f"closing {{{{/{name}}}}} without an open section")
            path, parent, children = stack.pop()
            if name != path.source:
                raise IllFormedTemplate(f"section {{{{#{path.source}}}}} closed by {{{{/{name}}}}}")
            parent.append(Section(path, tuple(children)))
            current = parent
        else:
            current.append(Var(parse_expr(inner, allow_calls=False)))
    flush()
    if stack:
        raise IllFormedTemplate(f"section {{{{#{stack[-1][0].source}}}}} is never closed")
    return Template(text, tuple(root))


def _render_nodes(nodes: Sequence[Node], stack: list[Any], out: list[str], trace=None) -> None:
    for node in nodes:
        if isinstance(node, Text):
            out.append(node.value)
        elif isinstance(node, RegionMarker):
            out.append(node.text)
        elif isinstance(node, Var):
            value = _eval(node.path, stack)
            if isinstance(value, (list, dict)):
                raise NonScalarSubstitution(f"{{{{{node.path}}}}} resolves to a {kind_of(value)}")
            if trace is not None:
                trace.append((node, value))
            out.append(render_scalar(value))
        elif isinstance(node, ExprNode):
            value = _eval(node.expr, stack)
            if isinstance(value, (list, dict)):
                raise NonScalarSubstitution(f"#{{{node.expr}}} resolves to a {kind_of(value)}")
            if trace is not None:
                trace.append((node, value))
            out.append(render_scalar(value))
        else:
            items = _eval(node.path, stack)
            if not isinstance(items, list):
                raise PathError(f"section {{{{#{node.path}}}}} needs a list, got a {kind_of(items)}")
            for item in items:
                stack.append(item)
                _render_nodes(node.children, stack, out, trace)
                stack.pop()


def render(template: Template | str, ctx: Any, scopes: Sequence[Any] = (), trace: list | None = None) -> str:
    """Render with ``ctx`` as nearest context and ``scopes`` as outer fallbacks.

    If ``trace`` is a list, every substitution is appended to it as
    ``(node, value)``.
    """
    if isinstance(template, str):
        template = parse_template(template)
    out: list[str] = []
    _render_nodes(template.nodes, [*scopes, ctx], out, trace)
    return "".join(out)


# -- fusion regions --------------------------------------------------------


@dataclass(frozen=True)
class Region:
    name: str
    body_start: int
    body_end: int


_LINE = re.compile(r"[^\n]*\n|[^\n]+")


def find_regions(text: str) -> list[Region]:
    """Locate fusion regions; bodies exclude the marker lines."""
    regions: list[Region] = []
    seen: set[str] = set()
    open_name: str | None = None
    body_start = 0
    for line in _LINE.finditer(text):
        markers = list(_MARKER.finditer(line.group()))
        if not markers:
            continue
        if len(markers) > 1:
            raise UnbalancedRegion(f"more than one region marker on one line: {line.group().strip()!r}")
        closing, name = bool(markers[0].group(1)), markers[0].group(2)
        if not closing:
            if open_name is not None:
                raise UnbalancedRegion(f"region {name!r} opened inside region {open_name!r}")
            if name in seen:
                raise DuplicateRegion(f"region {name!r} appears twice")
            open_name, body_start = name, line.end()
            seen.add(name)
        else:
            if open_name != name:
                raise UnbalancedRegion(f"close of region {name!r} without a matching open")
            regions.append(Region(name, body_start, line.start()))
            open_name = None
    if open_name is not None:
        raise UnbalancedRegion(f"region {open_name!r} is never closed")
    return regions


def extract_partials(files: ContentArea) -> PartialSet:
    """Collect ``(path, region) -> body`` from every text file in ``files``."""
    partials: PartialSet = {}
    for path, raw in files.items():
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError:
            continue
        try:
            regions = find_regions(text)
        except (UnbalancedRegion, DuplicateRegion) as exc:
            raise type(exc)(f"{path}: {exc}") from exc
        for r in regions:
            partials[(path, r.name)] = text[r.body_start:r.body_end]
    return partials


@dataclass(frozen=True)
class FuseResult:
    area: ContentArea
    orphans: tuple[tuple[str, str], ...] = ()
    warnings: tuple[str, ...] = ()


def _as_body(text: str) -> str:
    # the close marker must stay on its own line
    return text if not text or text.endswith("\n") else text + "\n"


def fuse(generated: ContentArea, partials: Mapping[tuple[str, str], str]) -> FuseResult:
    """Swap partial bodies into matching regions of ``generated``.

    Regions without a partial keep their generated body. Partials that
    match no region are returned as orphans.
    """
    used: set[tuple[str, str]] = set()
    warnings: list[str] = []
    wanted = {path for path, _ in partials}
    out = dict(generated)
    for path in sorted(wanted & set(generated)):
        try:
            text = generated[path].decode("utf-8")
            regions = find_regions(text)
        except (UnicodeDecodeError, UnbalancedRegion, DuplicateRegion) as exc:
            warnings.append(f"{path}: left unfused ({exc})")
            continue
        pieces, pos = [], 0
        for r in regions:
            key = (path, r.name)
            if key in partials:
                used.add(key)
                pieces += [text[pos:r.body_start], _as_body(partials[key])]
                pos = r.body_end
        pieces.append(text[pos:])
        out[path] = "".join(pieces).encode("utf-8")
    orphans = tuple(sorted(k for k in partials if k not in used))
    warnings += [f"{p}: partial region {n!r} matches nothing" for p, n in orphans]
    return FuseResult(ContentArea(out), orphans, tuple(warnings))
