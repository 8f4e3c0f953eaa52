"""On-disk persistence of a :class:`~regenforge.nanovc.Repo`.

Layout::

    <store>/objects/<hex digest>   canonical commit serialization
    <store>/branches.json          {"name": "<hex digest>", ...}

Object files are named by the hash of their own bytes, so corruption is
caught on load by re-hashing.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

from .errors import StoreCorrupt
from .nanovc import Commit, Repo, deserialize_commit

OBJECTS = "objects"
BRANCHES = "branches.json"


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def export_repo(repo: Repo, store: Path) -> None:
    objects = store / OBJECTS
    objects.mkdir(parents=True, exist_ok=True)
    for c in repo.commits():
        target = objects / c.id
        if not target.exists():
            _atomic_write(target, c.serialize())
    heads = {b.name: b.head for b in repo.list_branches()}
    _atomic_write(store / BRANCHES, (json.dumps(heads, indent=2, sort_keys=True) + "\n").encode())


def import_repo(store: Path) -> Repo:
    """Load a repo; a missing store yields an empty repo."""
    if not store.exists():
        return Repo()
    commits = []
    objects = store / OBJECTS
    if objects.is_dir():
        for path in sorted(objects.iterdir()):
            if path.name.endswith(".tmp"):
                continue
            raw = path.read_bytes()
            actual = hashlib.sha256(raw).hexdigest()
            if actual != path.name:
                raise StoreCorrupt(f"{path}: content hashes to {actual}, not its name", path)
            try:
                area, parents, message = deserialize_commit(raw)
            except (ValueError, UnicodeDecodeError) as exc:
                raise StoreCorrupt(f"{path}: unreadable object ({exc})", path) from exc
            commits.append(Commit(path.name, parents, area, message))
    heads: dict[str, str] = {}
    branches = store / BRANCHES
    if branches.exists():
        try:
            heads = json.loads(branches.read_text())
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise StoreCorrupt(f"{branches}: not valid JSON ({exc})", branches) from exc
        if not isinstance(heads, dict) or not all(isinstance(v, str) for v in heads.values()):
            raise StoreCorrupt(f"{branches}: expected an object of branch -> digest", branches)
    try:
        return Repo.from_objects(commits, heads)
    except ValueError as exc:
        raise StoreCorrupt(f"{store}: {exc}", store) from exc


def store_digest(store: Path) -> str:
    """Digest over every persisted file (lock files excluded)."""
    h = hashlib.sha256()
    for path in sorted(p for p in store.rglob("*") if p.is_file()):
        rel = path.relative_to(store).as_posix()
        if rel == "lock" or rel.endswith(".tmp"):
            continue
        h.update(rel.encode() + b"\0")
        h.update(hashlib.sha256(path.read_bytes()).digest())
    return h.hexdigest()
