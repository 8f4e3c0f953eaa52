"""Robot-of-Robots orchestration and the multi-phase cascade.

For one phase, :func:`build_robot` turns (prototypes, rules, data) into a
:class:`Robot`: a flat list of emit rules, one per (record, prototype file).
:func:`run_robot` renders those rules and fuses hand-written partials into
the result. A manifest chains phases; each phase commits its output on a
branch so later phases can read it.

Workspace layout of a phase (all paths relative to the workspace root)::

    data         JSON data file
    prototypes   directory of working prototype files, plus ``.seed.json``
    rules        JSON rule file
    partials     optional directory mirroring output paths, holding regions
    out          directory the phase's output lands in
"""

from __future__ import annotations

import hashlib
import json
import logging
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Any

from .errors import (
    CollectionNotAList,
    DataParseError,
    DuplicateOutputPath,
    ManifestError,
    PrototypeRoundTripFailure,
    RegenError,
    UnknownBranch,
)
from .nanovc import ContentArea, Digest, Repo, area_digest, check_path, normalize_path
from .patterns import (
    DEFAULT_LABEL_TOKEN,
    PatternRule,
    VerificationReport,
    WorkingPrototype,
    compile_rules,
    verify_prototype,
)
from .templating import (
    PartialSet,
    Template,
    eval_expr,
    extract_partials,
    fuse,
    load_data,
    parse_expr,
    render,
)

log = logging.getLogger(__name__)

SEED_FILE = ".seed.json"
ROOT_HEAD = "root"

_PHASE_KEYS = {"name", "data", "prototypes", "rules", "collection", "partials", "out", "label_token"}
_MANIFEST_KEYS = {"phases", "env_branch", "options"}


@dataclass(frozen=True)
class Phase:
    name: str
    data: str
    prototypes: str
    rules: str
    collection: str
    out: str
    partials: str | None = None
    label_token: str = DEFAULT_LABEL_TOKEN

    def ingredient_paths(self) -> list[str]:
        """Files and directories that hold this phase's hand-written inputs."""
        paths = [self.data, self.prototypes, self.rules]
        if self.partials:
            paths.append(self.partials)
        return paths

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "data": self.data,
            "prototypes": self.prototypes,
            "rules": self.rules,
            "collection": self.collection,
            "out": self.out,
        }
        if self.partials:
            d["partials"] = self.partials
        if self.label_token != DEFAULT_LABEL_TOKEN:
            d["label_token"] = self.label_token
        return d


@dataclass(frozen=True)
class Manifest:
    phases: tuple[Phase, ...] = ()
    env_branch: str = "env"
    max_rounds: int = 16
    max_solutions: int = 64

    def phase(self, name: str) -> Phase:
        for p in self.phases:
            if p.name == name:
                return p
        raise ManifestError(f"no phase named {name!r}")

    @property
    def out_dirs(self) -> list[str]:
        return [p.out for p in self.phases]

    def to_dict(self) -> dict:
        return {
            "phases": [p.to_dict() for p in self.phases],
            "env_branch": self.env_branch,
            "options": {"max_rounds": self.max_rounds, "max_solutions": self.max_solutions},
        }


def _norm(value: Any, what: str) -> str:
    if not isinstance(value, str):
        raise ManifestError(f"{what} must be a string path")
    try:
        return normalize_path(value)
    except RegenError as exc:
        raise ManifestError(f"{what}: {exc}") from exc


def _phase_from_obj(obj: Any, i: int) -> Phase:
    if not isinstance(obj, dict):
        raise ManifestError(f"phases[{i}] must be an object")
    unknown = set(obj) - _PHASE_KEYS
    if unknown:
        raise ManifestError(f"phases[{i}]: unknown keys {sorted(unknown)}")
    for key in ("name", "data", "prototypes", "rules", "collection", "out"):
        if key not in obj:
            raise ManifestError(f"phases[{i}]: missing key {key!r}")
    name = obj["name"]
    if not isinstance(name, str) or not name:
        raise ManifestError(f"phases[{i}]: name must be a non-empty string")
    collection = obj["collection"]
    if not isinstance(collection, str):
        raise ManifestError(f"phase {name!r}: collection must be an expression string")
    try:
        parse_expr(collection)
    except RegenError as exc:
        raise ManifestError(f"phase {name!r}: bad collection expression: {exc}") from exc
    partials = obj.get("partials")
    return Phase(
        name=name,
        data=_norm(obj["data"], f"phase {name!r} data"),
        prototypes=_norm(obj["prototypes"], f"phase {name!r} prototypes"),
        rules=_norm(obj["rules"], f"phase {name!r} rules"),
        collection=collection,
        out=_norm(obj["out"], f"phase {name!r} out"),
        partials=_norm(partials, f"phase {name!r} partials") if partials is not None else None,
        label_token=obj.get("label_token", DEFAULT_LABEL_TOKEN),
    )


def _overlaps(a: str, b: str) -> bool:
    return a == b or a.startswith(b + "/") or b.startswith(a + "/")


def validate_manifest(m: Manifest) -> Manifest:
    names = [p.name for p in m.phases]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise ManifestError(f"duplicate phase names: {dupes}")
    for i, a in enumerate(m.phases):
        for b in m.phases[i + 1:]:
            if _overlaps(a.out, b.out):
                raise ManifestError(f"out dirs of phases {a.name!r} and {b.name!r} overlap")
    if not m.env_branch:
        raise ManifestError("env_branch must be non-empty")
    if m.max_rounds < 0 or m.max_solutions < 1:
        raise ManifestError("options: max_rounds must be >= 0 and max_solutions >= 1")
    return m


def load_manifest(source: str | bytes) -> Manifest:
    try:
        obj = json.loads(source)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest is not valid JSON (line {exc.lineno}): {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise ManifestError("manifest must be a JSON object")
    unknown = set(obj) - _MANIFEST_KEYS
    if unknown:
        raise ManifestError(f"unknown manifest keys {sorted(unknown)}")
    phases = obj.get("phases", [])
    if not isinstance(phases, list):
        raise ManifestError("phases must be an array")
    options = obj.get("options") or {}
    defaults = Manifest()
    try:
        max_rounds = int(options.get("max_rounds", defaults.max_rounds))
        max_solutions = int(options.get("max_solutions", defaults.max_solutions))
    except (TypeError, ValueError) as exc:
        raise ManifestError(f"options must be integers: {exc}") from exc
    m = Manifest(
        phases=tuple(_phase_from_obj(p, i) for i, p in enumerate(phases)),
        env_branch=obj.get("env_branch", defaults.env_branch),
        max_rounds=max_rounds,
        max_solutions=max_solutions,
    )
    return validate_manifest(m)


# -- reading ingredients from a workspace area -----------------------------


def _sha(raw: bytes) -> str:
    return hashlib.sha256(raw).hexdigest()


def _read(workspace: ContentArea, path: str, what: str) -> bytes:
    try:
        return workspace[path]
    except KeyError:
        raise ManifestError(f"{what} {path!r} not found") from None


def read_data(phase: Phase, workspace: ContentArea) -> Any:
    if phase.data not in workspace:
        raise DataParseError(f"phase {phase.name!r}: data file {phase.data!r} not found")
    try:
        return load_data(workspace[phase.data])
    except DataParseError as exc:
        raise DataParseError(f"phase {phase.name!r}: {phase.data}: {exc}") from exc


def read_rules(phase: Phase, workspace: ContentArea) -> list[PatternRule]:
    return compile_rules(_read(workspace, phase.rules, f"phase {phase.name!r}: rule file"))


def read_prototype(phase: Phase, workspace: ContentArea) -> WorkingPrototype:
    tree = workspace.relative_to(phase.prototypes)
    seed: Any = {}
    if SEED_FILE in tree:
        try:
            seed = load_data(tree[SEED_FILE])
        except DataParseError as exc:
            raise DataParseError(f"phase {phase.name!r}: seed: {exc}") from exc
    return WorkingPrototype(tree.without(SEED_FILE), seed, phase.label_token)


def read_partials(phase: Phase, workspace: ContentArea) -> PartialSet:
    if not phase.partials:
        return {}
    return extract_partials(workspace.relative_to(phase.partials))


def select_collection(phase: Phase, data: Any) -> list:
    records = eval_expr(phase.collection, data, [{ROOT_HEAD: data}])
    if not isinstance(records, list):
        raise CollectionNotAList(f"phase {phase.name!r}: {phase.collection} is not a list")
    return records


def verify_phase(phase: Phase, workspace: ContentArea) -> VerificationReport:
    return verify_prototype(read_prototype(phase, workspace), read_rules(phase, workspace))


def verify_phases(m: Manifest, workspace: ContentArea) -> dict[str, VerificationReport]:
    return {p.name: verify_phase(p, workspace) for p in m.phases}


# -- robots ----------------------------------------------------------------


@dataclass(frozen=True)
class Provenance:
    phase: str
    rules_digest: str
    prototypes_digest: str
    data_digest: str


@dataclass(frozen=True)
class EmitRule:
    record_index: int
    path: Template
    body: Template
    source_path: str = ""


@dataclass(frozen=True)
class Robot:
    """The generated generator: fully materialized emit rules for one phase."""

    phase: str
    collection: str
    emit_rules: tuple[EmitRule, ...]
    provenance: Provenance
    warnings: tuple[str, ...] = field(default=(), compare=False)


def build_robot(phase: Phase, workspace: ContentArea) -> Robot:
    data = read_data(phase, workspace)
    rules = read_rules(phase, workspace)
    proto = read_prototype(phase, workspace)
    report = verify_prototype(proto, rules)
    if not report.passed:
        detail = "; ".join(f.describe() for f in report.failures)
        raise PrototypeRoundTripFailure(f"phase {phase.name!r}: {detail}", report, phase.name)
    records = select_collection(phase, data)
    for i, rec in enumerate(records):
        if isinstance(rec, dict) and ROOT_HEAD in rec:
            raise DataParseError(
                f"phase {phase.name!r}: record {i} uses the reserved key {ROOT_HEAD!r}"
            )
    templates = [f.template for f in report.files]
    emit = tuple(
        EmitRule(i, tf.path, tf.body, tf.source_path)
        for i in range(len(records))
        for tf in templates
    )
    provenance = Provenance(
        phase.name,
        _sha(workspace[phase.rules]),
        area_digest(workspace.under(phase.prototypes)),
        _sha(workspace[phase.data]),
    )
    return Robot(phase.name, phase.collection, emit, provenance)


def run_robot(robot: Robot, data: Any, partials: Mapping[tuple[str, str], str] | None = None) -> ContentArea:
    """Render every emit rule, then fuse ``partials`` into the result.

    Output paths are relative to the phase's out dir. Two rules rendering
    the same path must agree on the content.
    """
    records = eval_expr(robot.collection, data, [{ROOT_HEAD: data}])
    if not isinstance(records, list):
        raise CollectionNotAList(f"phase {robot.phase!r}: {robot.collection} is not a list")
    scopes = [{ROOT_HEAD: data}]
    out: dict[str, bytes] = {}
    origin: dict[str, int] = {}
    for k, rule in enumerate(robot.emit_rules):
        if rule.record_index >= len(records):
            raise ManifestError(
                f"phase {robot.phase!r}: emit rule {k} wants record {rule.record_index} "
                f"but the collection has {len(records)}"
            )
        record = records[rule.record_index]
        try:
            path = normalize_path(render(rule.path, record, scopes))
            body = render(rule.body, record, scopes).encode("utf-8")
        except RegenError as exc:
            raise type(exc)(
                f"phase {robot.phase!r}: emit rule {k} ({rule.source_path}) "
                f"record {rule.record_index}: {exc}"
            ) from exc
        if path in out and out[path] != body:
            raise DuplicateOutputPath(
                f"phase {robot.phase!r}: {path!r} produced with different content by "
                f"emit rules {origin[path]} and {k}"
            )
        out.setdefault(path, body)
        origin.setdefault(path, k)
    result = fuse(ContentArea(out), partials or {})
    for w in result.warnings:
        log.warning("phase %s: %s", robot.phase, w)
    return result.area


def run_phase(phase: Phase, workspace: ContentArea) -> ContentArea:
    """Build and run one phase's robot; output paths are relative to ``phase.out``."""
    robot = build_robot(phase, workspace)
    return run_robot(robot, read_data(phase, workspace), read_partials(phase, workspace))


# -- cascade ---------------------------------------------------------------


def cascade_from(
    m: Manifest,
    repo: Repo,
    ingredients: ContentArea,
    base: Digest,
    branch: str | None = None,
) -> Digest:
    """Run every phase starting at ``base``; returns the final commit.

    Each phase replaces its out dir in the current area and commits the
    result with message ``phase:<name>``, unless nothing changed. If
    ``branch`` is given it is moved after every commit, so a failing phase
    leaves it at the last good one.
    """
    if not m.phases:
        raise ManifestError("manifest has no phases")
    head = base
    for phase in m.phases:
        area = repo.checkout(head)
        output = run_phase(phase, area.overlay(ingredients)).prefixed(phase.out)
        new_area = area.outside(phase.out).overlay(output)
        if new_area != area:
            head = repo.commit(new_area, [head], f"phase:{phase.name}")
            if branch is not None:
                repo.move_branch(branch, head)
    return head


def env_head(m: Manifest, repo: Repo) -> Digest:
    """Head of the env branch, creating it at the root commit on first use."""
    if not repo.has_branch(m.env_branch):
        repo.create_branch(m.env_branch, repo.root())
    return repo.head(m.env_branch)


def run_cascade(m: Manifest, repo: Repo, ingredients: ContentArea) -> Digest:
    return cascade_from(m, repo, ingredients, env_head(m, repo), m.env_branch)


def preview(m: Manifest, repo: Repo, ingredients: ContentArea) -> tuple[Digest, str]:
    """Run the cascade on a fresh ``preview/<k>`` branch; env branch untouched.

    Returns ``(final digest, preview branch name)``.
    """
    base = repo.head(m.env_branch) if repo.has_branch(m.env_branch) else repo.root()
    name = repo.next_branch_name("preview/")
    repo.create_branch(name, base)
    return cascade_from(m, repo, ingredients, base, name), name


def rollback(m: Manifest, repo: Repo, to: Digest) -> Digest:
    repo.get(to)
    try:
        repo.move_branch(m.env_branch, to)
    except UnknownBranch:
        repo.create_branch(m.env_branch, to)
    return to


def production_area(m: Manifest, area: ContentArea) -> ContentArea:
    """The part of ``area`` that lives under some phase's out dir."""
    keep: dict[str, bytes] = {}
    for out in m.out_dirs:
        keep.update(area.under(out))
    return ContentArea(keep)


def ingredient_area(m: Manifest, files: Mapping[str, bytes]) -> ContentArea:
    """Select the ingredient files of ``m`` from a larger file map."""
    picked = {}
    for phase in m.phases:
        for root in phase.ingredient_paths():
            check_path(root)
            for p, c in files.items():
                if p == root or p.startswith(root + "/"):
                    picked[p] = c
    return ContentArea(picked)

