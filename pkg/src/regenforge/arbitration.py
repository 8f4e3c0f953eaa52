"""Agent simulation over a NanoVC repo, arbitrated by branching.

Every round each agent sees the same state, as if it were the only one to
act. Agents whose proposals merge cleanly are folded together. Agents that
conflict are grouped into connected components; each component is replayed
in every ordering (later writers win) and the successors are the Cartesian
product of those outcomes, deduplicated by content.

Also here: what-if branches and verified update proposals, which reuse the
cascade on a side branch so the env branch never moves without approval.
"""

from __future__ import annotations

import itertools
import json
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from typing import Protocol

from .cascade import Manifest, cascade_from, env_head, verify_phases
from .errors import (
    ChangeConflict,
    PrototypeRoundTripFailure,
    ProposalError,
    SolutionBudgetExceeded,
    UnknownSolution,
)
from .nanovc import EMPTY_CHANGES, ChangeSet, ContentArea, Digest, Repo, area_digest
from .patterns import VerificationReport


class Agent(Protocol):
    id: str

    def act(self, view: ContentArea, round: int) -> ChangeSet:
        """Proposed edits for ``view``; an empty change set means quiescent."""


@dataclass(frozen=True)
class ScriptedAgent:
    """Emits a fixed list of edits for the first ``rounds`` rounds, then goes quiet."""

    id: str
    edits: tuple = ()
    rounds: int = 1

    def act(self, view: ContentArea, round: int) -> ChangeSet:
        if round >= self.rounds:
            return EMPTY_CHANGES
        return ChangeSet.from_edits(self.edits, view)


@dataclass(frozen=True)
class FunctionAgent:
    """Wraps a plain ``view -> ChangeSet`` function."""

    id: str
    fn: Callable[[ContentArea], ChangeSet]

    def act(self, view: ContentArea, round: int) -> ChangeSet:
        return self.fn(view)


def load_agents(source: str | bytes) -> list[ScriptedAgent]:
    """Parse the scripted-agent JSON format: ``[{id, edits: [...], rounds}]``."""
    try:
        items = json.loads(source)
    except json.JSONDecodeError as exc:
        raise ValueError(f"agents file is not valid JSON (line {exc.lineno}): {exc.msg}") from exc
    if not isinstance(items, list):
        raise ValueError("agents file must be a JSON array")
    agents = []
    for i, item in enumerate(items):
        if not isinstance(item, dict) or not isinstance(item.get("id"), str) or not item["id"]:
            raise ValueError(f"agent {i} needs a non-empty string id")
        edits = item.get("edits", [])
        rounds = item.get("rounds", 1)
        if not isinstance(edits, list) or isinstance(rounds, bool) or not isinstance(rounds, int):
            raise ValueError(f"agent {item['id']!r}: edits must be a list and rounds an integer")
        for e in edits:
            if not isinstance(e, dict) or "path" not in e or ("content" not in e and not e.get("delete")):
                raise ValueError(f"agent {item['id']!r}: bad edit {e!r}")
        agents.append(ScriptedAgent(item["id"], tuple(edits), rounds))
    _check_ids(agents)
    return agents


def load_changes(source: str | bytes, view: ContentArea) -> ChangeSet:
    """Parse a changes file (a list of scripted edits) against ``view``."""
    edits = json.loads(source)
    if isinstance(edits, dict):
        edits = edits.get("edits", [])
    if not isinstance(edits, list):
        raise ValueError("changes file must be a JSON array of edits")
    return ChangeSet.from_edits(edits, view)


def _check_ids(agents: Sequence) -> None:
    ids = [a.id for a in agents]
    if len(set(ids)) != len(ids):
        raise ValueError(f"agent ids must be unique: {ids}")


# -- one round -------------------------------------------------------------


@dataclass(frozen=True)
class Successor:
    commit: Digest
    area_digest: Digest
    choice: str


def _components(ids: list[str], edges: set[tuple[str, str]]) -> list[list[str]]:
    adj: dict[str, set[str]] = {i: set() for i in ids}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    seen: set[str] = set()
    comps = []
    for start in ids:
        if start in seen:
            continue
        comp, stack = [], [start]
        seen.add(start)
        while stack:
            cur = stack.pop()
            comp.append(cur)
            for nxt in adj[cur] - seen:
                seen.add(nxt)
                stack.append(nxt)
        comps.append(sorted(comp))
    return comps


def _replay(order: Sequence[str], changes: dict[str, ChangeSet]) -> dict[str, bytes | None]:
    out: dict[str, bytes | None] = {}
    for aid in order:
        out.update(changes[aid].targets())
    return out


def _write(area: ContentArea, targets: dict[str, bytes | None]) -> ContentArea:
    new = dict(area)
    for p, v in targets.items():
        if v is None:
            new.pop(p, None)
        else:
            new[p] = v
    return ContentArea(new)


def propose(state: Digest, agents: Sequence[Agent], repo: Repo, round: int = 0) -> dict[str, tuple[ChangeSet, Digest]]:
    """Let every agent act on ``state`` from its own ``agent/<id>`` branch.

    Returns the non-empty proposals keyed by agent id.
    """
    view = repo.checkout(state)
    proposals = {}
    for agent in sorted(agents, key=lambda a: a.id):
        changes = agent.act(view, round)
        branch = f"agent/{agent.id}"
        repo.set_branch(branch, state)
        if changes:
            c = repo.commit(changes.apply(view, strict=False), [state], f"agent:{agent.id}")
            repo.move_branch(branch, c)
            proposals[agent.id] = (changes, c)
    return proposals


def arbitrate(
    state: Digest,
    proposals: dict[str, tuple[ChangeSet, Digest]],
    repo: Repo,
    max_solutions: int,
    round: int = 0,
) -> list[Successor]:
    """Merge the proposals of one round into successor states."""
    view = repo.checkout(state)
    ids = sorted(proposals)
    changes = {i: proposals[i][0] for i in ids}
    edges = {
        (a, b)
        for a, b in itertools.combinations(ids, 2)
        if not repo.merge3(state, proposals[a][1], proposals[b][1]).clean
    }
    comps = _components(ids, edges)
    clean: dict[str, bytes | None] = {}
    conflicted = []
    for comp in comps:
        if len(comp) == 1:
            clean.update(changes[comp[0]].targets())
        else:
            conflicted.append(comp)

    per_comp: list[list[tuple[str, dict]]] = []
    for comp in conflicted:
        outcomes: dict[tuple, tuple[str, dict]] = {}
        for order in itertools.permutations(comp):
            result = _replay(order, changes)
            key = tuple(sorted(result.items(), key=lambda kv: kv[0]))
            outcomes.setdefault(key, (">".join(order), result))
        per_comp.append(list(outcomes.values()))

    sizes = [len(c) for c in conflicted]
    areas: dict[Digest, tuple[ContentArea, str]] = {}
    for combo in itertools.product(*per_comp):
        targets = dict(clean)
        for _, result in combo:
            targets.update(result)
        area = _write(view, targets)
        adig = area_digest(area)
        if adig not in areas:
            if len(areas) == max_solutions:
                raise SolutionBudgetExceeded(max_solutions, len(areas) + 1, sizes)
            areas[adig] = (area, " | ".join(label for label, _ in combo) or "clean")

    successors: dict[Digest, Successor] = {}
    for adig, (area, choice) in areas.items():
        digest = repo.commit(area, [state], f"round {round}: {choice}")
        repo.set_branch(f"sim/{digest[:12]}", digest)
        successors[adig] = Successor(digest, adig, choice)
    return list(successors.values())


def run_round(
    state: Digest,
    agents: Sequence[Agent],
    repo: Repo,
    max_solutions: int,
    round: int = 0,
) -> set[Digest]:
    """One arbitration round. All agents quiescent returns ``{state}``."""
    if not agents:
        raise ValueError("run_round needs at least one agent")
    _check_ids(agents)
    repo.get(state)
    proposals = propose(state, agents, repo, round)
    if not proposals:
        return {state}
    return {s.commit for s in arbitrate(state, proposals, repo, max_solutions, round)}


# -- simulation ------------------------------------------------------------


@dataclass(frozen=True)
class Solution:
    label: str
    commit: Digest
    area_digest: Digest
    lineage: tuple[str, ...]


@dataclass(frozen=True)
class SolutionSet:
    solutions: tuple[Solution, ...] = ()
    complete: bool = True
    rounds: int = 0
    unfinished: tuple[Digest, ...] = ()

    @property
    def leaves(self) -> frozenset[Digest]:
        return frozenset(s.commit for s in self.solutions)

    @property
    def branches(self) -> dict[Digest, str]:
        return {s.commit: s.label for s in self.solutions}

    def by_label(self, label: str) -> Solution:
        for s in self.solutions:
            if s.label == label:
                return s
        raise UnknownSolution(f"unknown solution {label!r}")


def run_simulation(
    initial: Digest,
    agents: Sequence[Agent],
    repo: Repo,
    max_rounds: int,
    max_solutions: int,
) -> SolutionSet:
    """Breadth-first arbitration until every branch is quiescent.

    Leaves are deduplicated by content and labelled ``sol/0..n-1`` in
    order of their area digest. Hitting ``max_rounds`` with live states
    returns the leaves found so far with ``complete=False``.
    """
    if not agents:
        raise ValueError("run_simulation needs at least one agent")
    _check_ids(agents)
    repo.get(initial)
    frontier: list[tuple[Digest, tuple[str, ...]]] = [(initial, ())]
    leaves: dict[Digest, tuple[Digest, tuple[str, ...]]] = {}
    unfinished: list[Digest] = []
    rnd = 0
    while frontier:
        nxt: dict[Digest, tuple[Digest, tuple[str, ...]]] = {}
        for state, lineage in frontier:
            proposals = propose(state, agents, repo, rnd)
            if not proposals:
                leaves.setdefault(area_digest(repo.checkout(state)), (state, lineage))
                continue
            if rnd >= max_rounds:
                unfinished.append(state)
                continue
            for s in arbitrate(state, proposals, repo, max_solutions, rnd):
                nxt.setdefault(s.area_digest, (s.commit, lineage + (s.choice,)))
        if len(leaves) > max_solutions:
            raise SolutionBudgetExceeded(max_solutions, len(leaves), [])
        frontier = [nxt[k] for k in sorted(nxt)]
        if frontier:
            rnd += 1

    for b in repo.list_branches():
        if b.name.startswith("sol/"):
            repo.delete_branch(b.name)
    solutions = []
    for k, adig in enumerate(sorted(leaves)):
        commit, lineage = leaves[adig]
        label = f"sol/{k}"
        repo.create_branch(label, commit)
        solutions.append(Solution(label, commit, adig, lineage))
    return SolutionSet(tuple(solutions), not unfinished, rnd, tuple(sorted(set(unfinished))))


def solutions_in(repo: Repo) -> list[tuple[str, Digest]]:
    """Solution branches currently in ``repo``, in label order."""
    sols = [(b.name, b.head) for b in repo.list_branches() if b.name.startswith("sol/")]
    return sorted(sols, key=lambda s: int(s[0].split("/", 1)[1]) if s[0][4:].isdigit() else -1)


def solution_head(repo: Repo, label: str) -> Digest:
    if not label.startswith("sol/") or not repo.has_branch(label):
        raise UnknownSolution(f"unknown solution {label!r}")
    return repo.head(label)


def adopt(m: Manifest, repo: Repo, label: str) -> Digest:
    """Make a solution the env state through a two-parent commit (undoable by rollback)."""
    sol = solution_head(repo, label)
    head = env_head(m, repo)
    digest = repo.commit(repo.checkout(sol), [head, sol], f"adopt:{label}")
    repo.move_branch(m.env_branch, digest)
    return digest


# -- what-if and update proposals ------------------------------------------


@dataclass(frozen=True)
class WhatIf:
    commit: Digest
    diff: ChangeSet
    branch: str
    baseline: Digest


def whatif(
    base: Digest,
    change: ChangeSet,
    m: Manifest,
    repo: Repo,
    ingredients: ContentArea,
) -> WhatIf:
    """Simulate an ingredient change on a ``whatif/<k>`` branch.

    The impact diff is taken against the cascade of the unchanged
    ingredients from the same base, so an empty change has an empty diff.
    """
    repo.get(base)
    try:
        changed = change.apply(ingredients)
    except ChangeConflict as exc:
        raise ChangeConflict(f"change does not apply to the ingredients: {exc}") from exc
    baseline = cascade_from(m, repo, ingredients, base)
    name = repo.next_branch_name("whatif/")
    repo.create_branch(name, base)
    result = cascade_from(m, repo, changed, base, name)
    return WhatIf(result, repo.diff(baseline, result), name, baseline)


READY = "ready-for-approval"
FAILED = "failed"


@dataclass(frozen=True)
class UpdateProposal:
    base: Digest
    change: ChangeSet
    status: str
    commit: Digest | None = None
    diff: ChangeSet | None = None
    reports: dict[str, VerificationReport] = field(default_factory=dict)
    error: str | None = None

    @property
    def ready(self) -> bool:
        return self.status == READY


def propose_update(
    base: Digest,
    change: ChangeSet,
    m: Manifest,
    repo: Repo,
    ingredients: ContentArea,
) -> UpdateProposal:
    """What-if plus verification of every phase; never touches the env branch."""
    try:
        w = whatif(base, change, m, repo, ingredients)
    except PrototypeRoundTripFailure as exc:
        reports = {exc.phase: exc.report} if exc.report is not None else {}
        return UpdateProposal(base, change, FAILED, reports=reports, error=str(exc))
    workspace = repo.checkout(w.commit).overlay(change.apply(ingredients))
    reports = verify_phases(m, workspace)
    ok = all(r.passed for r in reports.values())
    return UpdateProposal(base, change, READY if ok else FAILED, w.commit, w.diff, reports)


def approve(proposal: UpdateProposal, m: Manifest, repo: Repo) -> Digest:
    """Move the env branch to an accepted proposal.

    The caller still owns writing ``proposal.change`` into the ingredient
    files; the repo only records the generated state.
    """
    if not proposal.ready or proposal.commit is None:
        raise ProposalError(f"proposal is {proposal.status}; only {READY} proposals can be approved")
    head = env_head(m, repo)
    if head != proposal.base:
        raise ProposalError(f"env branch moved since the proposal was made ({proposal.base[:12]} -> {head[:12]})")
    repo.move_branch(m.env_branch, proposal.commit)
    return proposal.commit

