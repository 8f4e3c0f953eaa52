"""Nano version control: an in-memory, content-addressed snapshot repository.

A :class:`ContentArea` is a full snapshot of a file tree (path -> bytes).
Commits store whole snapshots, never deltas, so ``checkout`` is a lookup and
rollback is a branch move. Merging is whole-file per path.

Commit ids are SHA-256 over a canonical, length-prefixed serialization::

    u64 entry_count
    per entry (paths sorted bytewise):  u64 len(path) path  u64 len(content) content
    u64 parent_count
    per parent (in order):              32 raw digest bytes
    u64 len(message) message

All integers are big-endian. The same bytes are what the on-disk object
store holds, so a stored object can always be re-hashed against its name.
"""

from __future__ import annotations

import hashlib
import re
import threading
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field

from .errors import (
    ChangeConflict,
    DuplicateBranch,
    InvalidPath,
    UnknownBranch,
    UnknownCommit,
    UnknownParent,
)

Digest = str  # lowercase hex sha256

_HEX_DIGEST = re.compile(r"[0-9a-f]{64}")


def check_path(path: str) -> str:
    """Raise :class:`InvalidPath` unless ``path`` is relative and normalized."""
    if not isinstance(path, str) or not path:
        raise InvalidPath(f"path must be a non-empty string: {path!r}")
    if "\x00" in path or "\\" in path:
        raise InvalidPath(f"path contains a forbidden character: {path!r}")
    for seg in path.split("/"):
        if seg in ("", ".", ".."):
            raise InvalidPath(f"path is not normalized: {path!r}")
    return path


def normalize_path(path: str) -> str:
    """Turn a user-supplied relative path into normalized form.

    Backslashes become ``/``; empty and ``.`` segments are dropped. ``..`` is
    rejected rather than resolved.
    """
    segs = [s for s in path.replace("\\", "/").split("/") if s not in ("", ".")]
    if any(s == ".." for s in segs):
        raise InvalidPath(f"path escapes its root: {path!r}")
    return check_path("/".join(segs))


def join_path(*parts: str) -> str:
    return normalize_path("/".join(p for p in parts if p))


def _sort_key(path: str) -> bytes:
    return path.encode("utf-8")


class ContentArea(Mapping[str, bytes]):
    """Immutable mapping from normalized path to byte content."""

    __slots__ = ("_entries", "_hash")

    def __init__(self, entries: Mapping[str, bytes] | Iterable[tuple[str, bytes]] = ()):
        items = entries.items() if isinstance(entries, Mapping) else entries
        data: dict[str, bytes] = {}
        for path, content in items:
            check_path(path)
            if not isinstance(content, (bytes, bytearray, memoryview)):
                raise TypeError(f"content for {path!r} must be bytes, not {type(content).__name__}")
            data[path] = bytes(content)
        self._entries = {p: data[p] for p in sorted(data, key=_sort_key)}
        self._hash: int | None = None

    @classmethod
    def from_text(cls, files: Mapping[str, str]) -> ContentArea:
        return cls({p: t.encode("utf-8") for p, t in files.items()})

    def __getitem__(self, path: str) -> bytes:
        return self._entries[path]

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __eq__(self, other: object) -> bool:
        if isinstance(other, ContentArea):
            return self._entries == other._entries
        if isinstance(other, Mapping):
            return self._entries == dict(other)
        return NotImplemented

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(tuple(self._entries.items()))
        return self._hash

    def __repr__(self) -> str:
        return f"ContentArea({len(self)} files)"

    def text(self, path: str) -> str:
        return self._entries[path].decode("utf-8")

    def with_file(self, path: str, content: bytes | str) -> ContentArea:
        if isinstance(content, str):
            content = content.encode("utf-8")
        new = dict(self._entries)
        new[path] = content
        return ContentArea(new)

    def without(self, *paths: str) -> ContentArea:
        drop = set(paths)
        return ContentArea({p: c for p, c in self._entries.items() if p not in drop})

    def overlay(self, other: Mapping[str, bytes]) -> ContentArea:
        """Return self with every entry of ``other`` written on top."""
        new = dict(self._entries)
        new.update(other)
        return ContentArea(new)

    def under(self, prefix: str) -> ContentArea:
        """Entries at or below directory ``prefix`` (paths unchanged)."""
        if not prefix:
            return self
        pre = prefix.rstrip("/") + "/"
        return ContentArea({p: c for p, c in self._entries.items() if p.startswith(pre)})

    def outside(self, prefix: str) -> ContentArea:
        """Entries not below directory ``prefix``."""
        if not prefix:
            return ContentArea()
        pre = prefix.rstrip("/") + "/"
        return ContentArea({p: c for p, c in self._entries.items() if not p.startswith(pre)})

    def relative_to(self, prefix: str) -> ContentArea:
        if not prefix:
            return self
        pre = prefix.rstrip("/") + "/"
        return ContentArea({p[len(pre):]: c for p, c in self._entries.items() if p.startswith(pre)})

    def prefixed(self, prefix: str) -> ContentArea:
        if not prefix:
            return self
        return ContentArea({join_path(prefix, p): c for p, c in self._entries.items()})


EMPTY_AREA = ContentArea()


# -- canonical serialization -----------------------------------------------


def _u64(n: int) -> bytes:
    return n.to_bytes(8, "big")


def serialize_area(area: ContentArea) -> bytes:
    parts = [_u64(len(area))]
    for path, content in area.items():
        raw = path.encode("utf-8")
        parts += [_u64(len(raw)), raw, _u64(len(content)), content]
    return b"".join(parts)


def serialize_commit(area: ContentArea, parents: Iterable[Digest], message: str) -> bytes:
    parents = list(parents)
    msg = message.encode("utf-8")
    parts = [serialize_area(area), _u64(len(parents))]
    parts += [bytes.fromhex(p) for p in parents]
    parts += [_u64(len(msg)), msg]
    return b"".join(parts)


def commit_digest(area: ContentArea, parents: Iterable[Digest], message: str) -> Digest:
    return hashlib.sha256(serialize_commit(area, parents, message)).hexdigest()


def area_digest(area: ContentArea) -> Digest:
    """Digest of a snapshot alone, independent of history."""
    return hashlib.sha256(serialize_area(area)).hexdigest()


class _Reader:
    def __init__(self, raw: bytes) -> None:
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        end = self.pos + n
        if end > len(self.raw):
            raise ValueError("truncated commit serialization")
        chunk = self.raw[self.pos:end]
        self.pos = end
        return chunk

    def u64(self) -> int:
        return int.from_bytes(self.take(8), "big")


def deserialize_commit(raw: bytes) -> tuple[ContentArea, tuple[Digest, ...], str]:
    """Inverse of :func:`serialize_commit`; raises ``ValueError`` on malformed input."""
    r = _Reader(raw)
    entries = []
    for _ in range(r.u64()):
        path = r.take(r.u64()).decode("utf-8")
        entries.append((path, r.take(r.u64())))
    parents = tuple(r.take(32).hex() for _ in range(r.u64()))
    message = r.take(r.u64()).decode("utf-8")
    if r.pos != len(raw):
        raise ValueError("trailing bytes after commit serialization")
    try:
        area = ContentArea(entries)
    except InvalidPath as exc:
        raise ValueError(str(exc)) from exc
    return area, parents, message


# -- value types -----------------------------------------------------------


@dataclass(frozen=True)
class Commit:
    id: Digest
    parents: tuple[Digest, ...]
    area: ContentArea
    message: str

    def serialize(self) -> bytes:
        return serialize_commit(self.area, self.parents, self.message)


@dataclass(frozen=True)
class Branch:
    name: str
    head: Digest


@dataclass(frozen=True)
class ChangeSet:
    """Per-path difference between two areas.

    ``modified`` maps a path to ``(old, new)``. The three key sets are
    pairwise disjoint.
    """

    added: Mapping[str, bytes] = field(default_factory=dict)
    removed: frozenset[str] = frozenset()
    modified: Mapping[str, tuple[bytes, bytes]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "removed", frozenset(self.removed))
        a, r, m = set(self.added), set(self.removed), set(self.modified)
        if a & r or a & m or r & m:
            raise ValueError(f"change set key sets overlap: {sorted((a & r) | (a & m) | (r & m))}")
        for p in a | r | m:
            check_path(p)

    def __bool__(self) -> bool:
        return bool(self.added or self.removed or self.modified)

    @property
    def paths(self) -> list[str]:
        return sorted(set(self.added) | self.removed | set(self.modified), key=_sort_key)

    def targets(self) -> dict[str, bytes | None]:
        """Final value per touched path; ``None`` means deleted."""
        out: dict[str, bytes | None] = dict(self.added)
        out.update({p: new for p, (_, new) in self.modified.items()})
        out.update({p: None for p in self.removed})
        return out

    def apply(self, area: ContentArea, strict: bool = True) -> ContentArea:
        """Apply to ``area``.

        With ``strict`` every precondition (absent for adds, present for
        removes, matching old content for modifies) must hold, else
        :class:`ChangeConflict`. Non-strict mode just writes the targets.
        """
        if strict:
            for p in self.added:
                if p in area:
                    raise ChangeConflict(f"cannot add {p!r}: already present")
            for p in self.removed:
                if p not in area:
                    raise ChangeConflict(f"cannot remove {p!r}: not present")
            for p, (old, _) in self.modified.items():
                if area.get(p) != old:
                    raise ChangeConflict(f"cannot modify {p!r}: content differs from expected")
        new = dict(area)
        for p, value in self.targets().items():
            if value is None:
                new.pop(p, None)
            else:
                new[p] = value
        return ContentArea(new)

    @classmethod
    def between(cls, before: ContentArea, after: ContentArea) -> ChangeSet:
        added = {p: c for p, c in after.items() if p not in before}
        removed = frozenset(p for p in before if p not in after)
        modified = {
            p: (before[p], c) for p, c in after.items() if p in before and before[p] != c
        }
        return cls(added, removed, modified)

    @classmethod
    def from_edits(cls, edits: Iterable[Mapping], view: ContentArea) -> ChangeSet:
        """Build a change set from ``{path, content}`` / ``{path, delete: true}`` edits.

        Edits are interpreted against ``view``: writing content that is
        already there, or deleting an absent path, is not a change.
        """
        target = dict(view)
        for edit in edits:
            path = normalize_path(edit["path"])
            if edit.get("delete"):
                target.pop(path, None)
            else:
                content = edit.get("content")
                if content is None:
                    raise ValueError(f"edit for {path!r} needs 'content' or 'delete': true")
                target[path] = content.encode("utf-8") if isinstance(content, str) else bytes(content)
        return cls.between(view, ContentArea(target))

    def to_edits(self) -> list[dict]:
        edits = []
        for p, value in sorted(self.targets().items(), key=lambda kv: _sort_key(kv[0])):
            if value is None:
                edits.append({"path": p, "delete": True})
            else:
                edits.append({"path": p, "content": value.decode("utf-8", errors="replace")})
        return edits

    def summary(self) -> list[tuple[str, str]]:
        """``(status, path)`` rows with status ``A``/``D``/``M``, sorted by path."""
        rows = [("A", p) for p in self.added]
        rows += [("D", p) for p in self.removed]
        rows += [("M", p) for p in self.modified]
        return sorted(rows, key=lambda r: _sort_key(r[1]))


EMPTY_CHANGES = ChangeSet()


@dataclass(frozen=True)
class Conflict:
    path: str
    base: bytes | None
    ours: bytes | None
    theirs: bytes | None


@dataclass(frozen=True)
class MergeOutcome:
    merged: ContentArea | None = None
    conflicts: tuple[Conflict, ...] = ()

    def __post_init__(self) -> None:
        if (self.merged is None) == (not self.conflicts):
            raise ValueError("exactly one of merged / conflicts must be populated")
        paths = [c.path for c in self.conflicts]
        if len(set(paths)) != len(paths):
            raise ValueError("conflict paths must be distinct")

    @property
    def clean(self) -> bool:
        return self.merged is not None

    @property
    def conflict_paths(self) -> frozenset[str]:
        return frozenset(c.path for c in self.conflicts)


def merge3_areas(base: ContentArea, ours: ContentArea, theirs: ContentArea) -> MergeOutcome:
    """Whole-file three-way merge.

    A path changed on one side only takes that side; identical changes
    agree; anything else (including delete vs modify and add/add with
    different content) is a conflict.
    """
    merged: dict[str, bytes] = {}
    conflicts = []
    for path in sorted(set(base) | set(ours) | set(theirs), key=_sort_key):
        b, o, t = base.get(path), ours.get(path), theirs.get(path)
        if o == t:
            value = o
        elif o == b:
            value = t
        elif t == b:
            value = o
        else:
            conflicts.append(Conflict(path, b, o, t))
            continue
        if value is not None:
            merged[path] = value
    if conflicts:
        return MergeOutcome(conflicts=tuple(conflicts))
    return MergeOutcome(merged=ContentArea(merged))


# -- repository ------------------------------------------------------------


class Repo:
    """Object store plus branch table.

    Stored commits are immutable. Mutating methods hold an internal lock, so
    one writer at a time is safe alongside concurrent readers.
    """

    ROOT_MESSAGE = "root"

    def __init__(self) -> None:
        self._objects: dict[Digest, Commit] = {}
        self._branches: dict[str, Digest] = {}
        self._lock = threading.RLock()

    @classmethod
    def from_objects(cls, commits: Iterable[Commit], branches: Mapping[str, Digest]) -> Repo:
        """Rebuild a repo from stored objects, checking ids, parents and heads."""
        repo = cls()
        for c in commits:
            if commit_digest(c.area, c.parents, c.message) != c.id:
                raise ValueError(f"commit {c.id} does not hash to its id")
            repo._objects[c.id] = c
        for c in repo._objects.values():
            missing = [p for p in c.parents if p not in repo._objects]
            if missing:
                raise ValueError(f"commit {c.id} has missing parents {missing}")
        for name, head in branches.items():
            if head not in repo._objects:
                raise ValueError(f"branch {name!r} points at missing commit {head}")
            repo._branches[name] = head
        return repo

    # objects

    def commit(self, area: ContentArea, parents: Iterable[Digest] = (), message: str = "") -> Digest:
        parents = tuple(parents)
        for p in parents:
            if p not in self._objects:
                raise UnknownParent(f"unknown parent commit {p}")
        digest = commit_digest(area, parents, message)
        with self._lock:
            if digest not in self._objects:
                self._objects[digest] = Commit(digest, parents, area, message)
        return digest

    def root(self) -> Digest:
        """The canonical empty root commit, created on demand."""
        return self.commit(EMPTY_AREA, (), self.ROOT_MESSAGE)

    def get(self, digest: Digest) -> Commit:
        try:
            return self._objects[digest]
        except KeyError:
            raise UnknownCommit(f"unknown commit {digest}") from None

    def __contains__(self, digest: object) -> bool:
        return digest in self._objects

    def __len__(self) -> int:
        return len(self._objects)

    def commits(self) -> list[Commit]:
        return [self._objects[d] for d in sorted(self._objects)]

    def checkout(self, digest: Digest) -> ContentArea:
        return self.get(digest).area

    def diff(self, source: Digest, target: Digest) -> ChangeSet:
        return ChangeSet.between(self.checkout(source), self.checkout(target))

    def merge3(self, base: Digest, ours: Digest, theirs: Digest) -> MergeOutcome:
        return merge3_areas(self.checkout(base), self.checkout(ours), self.checkout(theirs))

    def ancestors(self, digest: Digest) -> list[Digest]:
        """First-parent chain from ``digest`` back to a root, newest first."""
        chain = []
        cur: Digest | None = digest
        while cur is not None:
            chain.append(cur)
            parents = self.get(cur).parents
            cur = parents[0] if parents else None
        return chain

    def is_ancestor(self, ancestor: Digest, digest: Digest) -> bool:
        seen, stack = set(), [digest]
        while stack:
            cur = stack.pop()
            if cur == ancestor:
                return True
            if cur not in seen:
                seen.add(cur)
                stack.extend(self.get(cur).parents)
        return False

    def resolve(self, ref: str) -> Digest:
        """Resolve a branch name, full digest, or unique digest prefix (>= 4 chars)."""
        if ref in self._branches:
            return self._branches[ref]
        ref = ref.lower()
        if _HEX_DIGEST.fullmatch(ref):
            self.get(ref)
            return ref
        if len(ref) >= 4 and all(c in "0123456789abcdef" for c in ref):
            hits = [d for d in self._objects if d.startswith(ref)]
            if len(hits) == 1:
                return hits[0]
            if len(hits) > 1:
                raise UnknownCommit(f"ambiguous commit prefix {ref}")
        raise UnknownCommit(f"unknown commit {ref}")

    # branches

    def create_branch(self, name: str, at: Digest) -> Branch:
        if not name:
            raise ValueError("branch name must be non-empty")
        self.get(at)
        with self._lock:
            if name in self._branches:
                raise DuplicateBranch(f"branch {name!r} already exists")
            self._branches[name] = at
        return Branch(name, at)

    def move_branch(self, name: str, to: Digest) -> Branch:
        self.get(to)
        with self._lock:
            if name not in self._branches:
                raise UnknownBranch(f"unknown branch {name!r}")
            self._branches[name] = to
        return Branch(name, to)

    def set_branch(self, name: str, at: Digest) -> Branch:
        """Create ``name`` at ``at``, or move it there if it exists."""
        with self._lock:
            if name in self._branches:
                return self.move_branch(name, at)
            return self.create_branch(name, at)

    def delete_branch(self, name: str) -> None:
        with self._lock:
            if name not in self._branches:
                raise UnknownBranch(f"unknown branch {name!r}")
            del self._branches[name]

    def has_branch(self, name: str) -> bool:
        return name in self._branches

    def head(self, name: str) -> Digest:
        try:
            return self._branches[name]
        except KeyError:
            raise UnknownBranch(f"unknown branch {name!r}") from None

    def list_branches(self) -> list[Branch]:
        return [Branch(n, self._branches[n]) for n in sorted(self._branches)]

    def next_branch_name(self, prefix: str) -> str:
        """``prefix`` + the next unused counter, e.g. ``preview/3``."""
        used = [
            int(n[len(prefix):])
            for n in self._branches
            if n.startswith(prefix) and n[len(prefix):].isdigit()
        ]
        return f"{prefix}{max(used, default=-1) + 1}"
