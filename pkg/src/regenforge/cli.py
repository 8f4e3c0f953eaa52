"""``regenforge`` command line.

Exit codes: 0 success, 1 verification/build failure, 2 usage error,
3 budget exceeded.
"""

from __future__ import annotations

import json
import shutil
import sys
from contextlib import contextmanager
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import click
from filelock import FileLock, Timeout

from . import arbitration, cascade
from .errors import AlreadyInitialized, RegenError, SolutionBudgetExceeded
from .nanovc import ChangeSet, ContentArea, Repo, normalize_path
from .store import export_repo, import_repo

MANIFEST = "regenforge.json"
STORE = ".regenforge"

EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_BUDGET = 3

LOCK_TIMEOUT = 10.0  # seconds


@dataclass
class Workspace:
    root: Path

    @property
    def manifest_path(self) -> Path:
        return self.root / MANIFEST

    @property
    def store(self) -> Path:
        return self.root / STORE

    def load_manifest(self) -> cascade.Manifest:
        if not self.manifest_path.exists():
            raise click.UsageError(f"no {MANIFEST} in {self.root}; run `regenforge init` first")
        return cascade.load_manifest(self.manifest_path.read_bytes())

    def read_ingredients(self, m: cascade.Manifest) -> ContentArea:
        files: dict[str, bytes] = {}
        for phase in m.phases:
            for rel in phase.ingredient_paths():
                target = self.root / rel
                if target.is_file():
                    files[rel] = target.read_bytes()
                elif target.is_dir():
                    for p in sorted(target.rglob("*")):
                        if p.is_file():
                            files[normalize_path(p.relative_to(self.root).as_posix())] = p.read_bytes()
        return ContentArea(files)

    def write_outputs(self, m: cascade.Manifest, area: ContentArea) -> int:
        """Replace every out dir on disk with its part of ``area``."""
        written = 0
        for out in m.out_dirs:
            target = (self.root / out).resolve()
            if self.root.resolve() not in target.parents:
                raise RegenError(f"out dir {out!r} escapes the workspace")
            if target.exists():
                shutil.rmtree(target)
            for path, content in area.under(out).items():
                dest = self.root / path
                dest.parent.mkdir(parents=True, exist_ok=True)
                dest.write_bytes(content)
                written += 1
        return written

    @contextmanager
    def locked_repo(self):
        """Load the repo under the workspace lock and save it on the way out."""
        self.store.mkdir(exist_ok=True)
        lock = FileLock(str(self.store / "lock"), timeout=LOCK_TIMEOUT)
        try:
            with lock:
                repo = import_repo(self.store)
                try:
                    yield repo
                finally:
                    export_repo(repo, self.store)
        except Timeout:
            raise RegenError(f"workspace {self.root} is locked by another process") from None


class Output:
    def __init__(self, as_json: bool) -> None:
        self.as_json = as_json

    def emit(self, payload: dict, lines: list[str]) -> None:
        if self.as_json:
            click.echo(json.dumps(payload, indent=2, sort_keys=True))
        else:
            for line in lines:
                click.echo(line)


def _diff_payload(changes: ChangeSet) -> list[dict]:
    return [{"status": s, "path": p} for s, p in changes.summary()]


def _diff_lines(changes: ChangeSet) -> list[str]:
    rows = changes.summary()
    return [f"  {s} {p}" for s, p in rows] if rows else ["  (no changes)"]


def _fail(exc: Exception) -> None:
    code = EXIT_BUDGET if isinstance(exc, SolutionBudgetExceeded) else EXIT_FAILURE
    click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
    sys.exit(code)


@contextmanager
def _guard():
    try:
        yield
    except RegenError as exc:
        _fail(exc)


@click.group()
@click.option(
    "-C", "--root", type=click.Path(file_okay=False, path_type=Path), default=".",
    help="Workspace directory.",
)
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
@click.pass_context
def main(ctx: click.Context, root: Path, as_json: bool) -> None:
    """Regenerate production code from data, patterns and working prototypes."""
    ctx.obj = (Workspace(root), Output(as_json))


def _copy_tree(src, dest: Path, created: list[str], base: Path) -> None:
    for item in src.iterdir():
        if item.name == "__pycache__":
            continue
        target = dest / item.name
        if item.is_dir():
            target.mkdir(parents=True, exist_ok=True)
            _copy_tree(item, target, created, base)
        else:
            target.write_bytes(item.read_bytes())
            created.append(target.relative_to(base).as_posix())


@main.command()
@click.option("--example", type=click.Choice(["protocol"]), default=None,
              help="Ship a complete example instead of the minimal skeleton.")
@click.pass_obj
def init(obj, example: str | None) -> None:
    """Create a workspace skeleton."""
    ws, out = obj
    with _guard():
        if ws.manifest_path.exists() or ws.store.exists():
            raise AlreadyInitialized(f"{ws.root} already holds a regenforge workspace")
        ws.root.mkdir(parents=True, exist_ok=True)
        src = resources.files("regenforge") / "fixtures" / (example or "skeleton")
        created: list[str] = []
        _copy_tree(src, ws.root, created, ws.root)
        ws.store.mkdir()
        export_repo(Repo(), ws.store)
        created.sort()
    out.emit({"created": created}, [f"initialized {ws.root}"] + [f"  {p}" for p in created])


@main.command()
@click.pass_obj
def verify(obj) -> None:
    """Round-trip every prototype through its rules and seed."""
    ws, out = obj
    with _guard():
        m = ws.load_manifest()
        ingredients = ws.read_ingredients(m)
        with ws.locked_repo() as repo:
            env = repo.checkout(repo.head(m.env_branch)) if repo.has_branch(m.env_branch) else ContentArea()
        reports = cascade.verify_phases(m, env.overlay(ingredients))
    ok = all(r.passed for r in reports.values())
    lines = []
    for name, report in reports.items():
        lines.append(f"phase {name}: {'ok' if report.passed else 'FAILED'}")
        lines += [f"  {f.describe()}" for f in report.files]
    lines.append("verify: ok" if ok else "verify: FAILED")
    out.emit({"passed": ok, "phases": {n: r.to_dict() for n, r in reports.items()}}, lines)
    sys.exit(0 if ok else EXIT_FAILURE)


@main.command()
@click.pass_obj
def build(obj) -> None:
    """Run the cascade and rewrite the out dirs."""
    ws, out = obj
    with _guard():
        m = ws.load_manifest()
        ingredients = ws.read_ingredients(m)
        with ws.locked_repo() as repo:
            digest = cascade.run_cascade(m, repo, ingredients)
            area = repo.checkout(digest)
        written = ws.write_outputs(m, area)
    out.emit({"digest": digest, "files": written}, [digest])


@main.command()
@click.pass_obj
def preview(obj) -> None:
    """Run the cascade on a throwaway branch and show the diff against env."""
    ws, out = obj
    with _guard():
        m = ws.load_manifest()
        ingredients = ws.read_ingredients(m)
        with ws.locked_repo() as repo:
            digest, branch = cascade.preview(m, repo, ingredients)
            head = repo.head(m.env_branch) if repo.has_branch(m.env_branch) else repo.root()
            changes = repo.diff(head, digest)
    out.emit(
        {"digest": digest, "branch": branch, "diff": _diff_payload(changes)},
        [digest, f"branch {branch}, diff against {m.env_branch}:"] + _diff_lines(changes),
    )


@main.command()
@click.argument("agents_file", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--max-rounds", type=int, default=None)
@click.option("--max-solutions", type=int, default=None)
@click.pass_obj
def simulate(obj, agents_file: Path, max_rounds: int | None, max_solutions: int | None) -> None:
    """Run scripted agents against env and list the solutions."""
    ws, out = obj
    try:
        agents = arbitration.load_agents(agents_file.read_bytes())
    except ValueError as exc:
        raise click.BadParameter(str(exc), param_hint="AGENTS_FILE") from exc
    if not agents:
        raise click.BadParameter("no agents defined", param_hint="AGENTS_FILE")
    with _guard():
        m = ws.load_manifest()
        with ws.locked_repo() as repo:
            initial = repo.head(m.env_branch) if repo.has_branch(m.env_branch) else repo.root()
            sols = arbitration.run_simulation(
                initial,
                agents,
                repo,
                m.max_rounds if max_rounds is None else max_rounds,
                m.max_solutions if max_solutions is None else max_solutions,
            )
    rows = [
        {"label": s.label, "digest": s.commit, "lineage": list(s.lineage)}
        for s in sols.solutions
    ]
    lines = [f"{'label':<8} {'digest':<14} lineage"]
    lines += [f"{s.label:<8} {s.commit[:12]:<14} {' / '.join(s.lineage) or '-'}" for s in sols.solutions]
    if not sols.complete:
        lines.append(f"incomplete: round budget reached with {len(sols.unfinished)} live state(s)")
    out.emit({"solutions": rows, "complete": sols.complete, "rounds": sols.rounds}, lines)
    if not sols.complete:
        sys.exit(EXIT_BUDGET)


@main.group()
def solutions() -> None:
    """Inspect or adopt simulation solutions."""


@solutions.command("show")
@click.argument("label")
@click.pass_obj
def solutions_show(obj, label: str) -> None:
    """Show a solution's diff against env."""
    ws, out = obj
    with _guard():
        m = ws.load_manifest()
        with ws.locked_repo() as repo:
            sol = arbitration.solution_head(repo, label)
            head = repo.head(m.env_branch) if repo.has_branch(m.env_branch) else repo.root()
            changes = repo.diff(head, sol)
    out.emit(
        {"label": label, "digest": sol, "diff": _diff_payload(changes), "edits": changes.to_edits()},
        [f"{label} {sol}"] + _diff_lines(changes),
    )


@solutions.command("adopt")
@click.argument("label")
@click.pass_obj
def solutions_adopt(obj, label: str) -> None:
    """Move env to a solution via an adopt commit."""
    ws, out = obj
    with _guard():
        m = ws.load_manifest()
        with ws.locked_repo() as repo:
            digest = arbitration.adopt(m, repo, label)
            area = repo.checkout(digest)
        ws.write_outputs(m, area)
    out.emit({"label": label, "digest": digest}, [digest])


@main.command()
@click.option("--to", "target", required=True,
              help="Commit digest, unique prefix, branch name, or 'root'.")
@click.pass_obj
def rollback(obj, target: str) -> None:
    """Move env to an earlier commit and rewrite the out dirs."""
    ws, out = obj
    with _guard():
        m = ws.load_manifest()
        with ws.locked_repo() as repo:
            to = repo.root() if target == cascade.ROOT_HEAD else repo.resolve(target)
            digest = cascade.rollback(m, repo, to)
            area = repo.checkout(digest)
        ws.write_outputs(m, area)
    out.emit({"digest": digest}, [digest])


@main.command()
@click.option("--change", "change_file", required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="JSON list of edits to ingredient files.")
@click.pass_obj
def whatif(obj, change_file: Path) -> None:
    """Simulate an ingredient change and print its impact."""
    ws, out = obj
    with _guard():
        m = ws.load_manifest()
        ingredients = ws.read_ingredients(m)
        try:
            change = arbitration.load_changes(change_file.read_bytes(), ingredients)
        except (ValueError, KeyError) as exc:
            raise click.BadParameter(str(exc), param_hint="--change") from exc
        with ws.locked_repo() as repo:
            base = repo.head(m.env_branch) if repo.has_branch(m.env_branch) else repo.root()
            result = arbitration.whatif(base, change, m, repo, ingredients)
    out.emit(
        {"digest": result.commit, "branch": result.branch, "diff": _diff_payload(result.diff)},
        [result.commit, f"branch {result.branch}, impact:"] + _diff_lines(result.diff),
    )


if __name__ == "__main__":  # pragma: no cover
    main()
