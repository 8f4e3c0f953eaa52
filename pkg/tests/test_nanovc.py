import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import oracle_digest

from regenforge.errors import (
    ChangeConflict,
    DuplicateBranch,
    InvalidPath,
    UnknownBranch,
    UnknownCommit,
    UnknownParent,
)
from regenforge.nanovc import (
    ChangeSet,
    ContentArea,
    Repo,
    area_digest,
    commit_digest,
    deserialize_commit,
    merge3_areas,
    normalize_path,
)


# -- paths and areas -------------------------------------------------------


@pytest.mark.parametrize("raw,expected", [
    ("a/b.txt", "a/b.txt"),
    ("./a//b.txt", "a/b.txt"),
    ("a\\b", "a/b"),
    ("a/./b/", "a/b"),
])
def test_normalize_path(raw, expected):
    assert normalize_path(raw) == expected


@pytest.mark.parametrize("bad", ["", "/", "..", "a/../b", "../x"])
def test_bad_paths_rejected(bad):
    with pytest.raises(InvalidPath):
        normalize_path(bad)


def test_area_rejects_unnormalized_keys():
    with pytest.raises(InvalidPath):
        ContentArea({"a/./b": b"x"})
    with pytest.raises(InvalidPath):
        ContentArea({"/abs": b"x"})


def test_area_value_semantics():
    a = ContentArea({"x": b"1"})
    b = a.with_file("y", b"2")
    assert "y" not in a
    assert dict(b) == {"x": b"1", "y": b"2"}
    assert a.without("x") == ContentArea()
    assert a == ContentArea({"x": b"1"})
    assert hash(a) == hash(ContentArea({"x": b"1"}))


def test_area_iterates_bytewise():
    a = ContentArea({"b": b"", "B": b"", "a/z": b"", "a": b""})
    assert list(a) == sorted(a, key=str.encode)


def test_under_outside_prefixed():
    a = ContentArea({"gen/a.py": b"1", "gen/sub/b.py": b"2", "general.txt": b"3"})
    assert set(a.under("gen")) == {"gen/a.py", "gen/sub/b.py"}
    assert set(a.outside("gen")) == {"general.txt"}
    assert dict(a.under("gen").relative_to("gen").prefixed("out")) == {"out/a.py": b"1", "out/sub/b.py": b"2"}


# -- commits ---------------------------------------------------------------


def test_root_commit_deterministic():
    r = Repo()
    d1 = r.commit(ContentArea(), [], "root")
    d2 = r.commit(ContentArea(), [], "root")
    assert d1 == d2 == r.root()
    assert len(r) == 1
    assert d1 == oracle_digest({}, [], "root")


def test_commit_checkout_identity():
    r = Repo()
    root = r.root()
    a = ContentArea({"a.txt": b"alpha", "d/b.bin": bytes(range(256))})
    c = r.commit(a, [root], "x")
    assert r.checkout(c) == a
    assert r.checkout(root) == ContentArea()


def test_message_only_difference_matches_oracle():
    r = Repo()
    root = r.root()
    files = {"a.txt": b"1", "b/c.txt": b"2"}
    c1 = r.commit(ContentArea(files), [root], "one")
    c2 = r.commit(ContentArea(files), [root], "two")
    assert c1 != c2
    assert c1 == oracle_digest(files, [root], "one")
    assert c2 == oracle_digest(files, [root], "two")


def test_parent_order_is_significant():
    r = Repo()
    root = r.root()
    x = r.commit(ContentArea({"x": b"x"}), [root], "x")
    m1 = r.commit(ContentArea(), [root, x], "m")
    m2 = r.commit(ContentArea(), [x, root], "m")
    assert m1 != m2
    assert m1 == oracle_digest({}, [root, x], "m")


def test_unknown_parent():
    r = Repo()
    with pytest.raises(UnknownParent):
        r.commit(ContentArea(), ["00" * 32], "orphan")


def test_unknown_commit_checkout():
    with pytest.raises(UnknownCommit):
        Repo().checkout("ab" * 32)


def test_snapshots_not_deltas():
    r = Repo()
    h = r.root()
    for i in range(3):
        h = r.commit(ContentArea({f"f{i}": b"v"}), [h], str(i))
    assert r.checkout(h) == ContentArea({"f2": b"v"})
    assert len(r.ancestors(h)) == 4


def test_serialization_round_trip():
    area = ContentArea({"a": b"\x00\xff", "z/y": b""})
    r = Repo()
    c = r.get(r.commit(area, [r.root()], "msg é"))
    assert deserialize_commit(c.serialize()) == (area, (r.root(),), "msg é")
    with pytest.raises(ValueError):
        deserialize_commit(c.serialize() + b"x")
    with pytest.raises(ValueError):
        deserialize_commit(c.serialize()[:-1])


def test_area_digest_ignores_history():
    r = Repo()
    a = ContentArea({"p": b"1"})
    c1 = r.commit(a, [r.root()], "a")
    c2 = r.commit(a, [], "b")
    assert c1 != c2
    assert area_digest(r.checkout(c1)) == area_digest(r.checkout(c2))


def test_resolve():
    r = Repo()
    c = r.commit(ContentArea({"a": b"1"}), [r.root()], "c")
    r.create_branch("main", c)
    assert r.resolve("main") == c
    assert r.resolve(c) == c
    assert r.resolve(c[:8]) == c
    with pytest.raises(UnknownCommit):
        r.resolve("zzzz")


# -- diff ------------------------------------------------------------------


def test_diff_reflexive():
    r = Repo()
    c = r.commit(ContentArea({"a": b"1"}), [r.root()], "")
    assert not r.diff(c, c)


def test_diff_example():
    r = Repo()
    x = r.commit(ContentArea({"a.txt": b"1"}), [], "x")
    y = r.commit(ContentArea({"a.txt": b"2", "b.txt": b"3"}), [], "y")
    d = r.diff(x, y)
    assert dict(d.modified) == {"a.txt": (b"1", b"2")}
    assert dict(d.added) == {"b.txt": b"3"}
    assert d.removed == frozenset()
    assert d.summary() == [("M", "a.txt"), ("A", "b.txt")]


def test_changeset_disjoint():
    with pytest.raises(ValueError):
        ChangeSet(added={"a": b"1"}, removed={"a"})


def test_strict_apply_conflicts():
    area = ContentArea({"a": b"1"})
    with pytest.raises(ChangeConflict):
        ChangeSet(added={"a": b"2"}).apply(area)
    with pytest.raises(ChangeConflict):
        ChangeSet(removed={"b"}).apply(area)
    with pytest.raises(ChangeConflict):
        ChangeSet(modified={"a": (b"0", b"2")}).apply(area)
    assert ChangeSet(added={"a": b"2"}).apply(area, strict=False) == ContentArea({"a": b"2"})


def test_edits_round_trip():
    view = ContentArea({"a": b"1", "b": b"2"})
    cs = ChangeSet.from_edits(
        [{"path": "a", "content": "9"}, {"path": "b", "delete": True}, {"path": "c", "content": "3"}], view
    )
    assert cs.apply(view) == ContentArea({"a": b"9", "c": b"3"})
    assert ChangeSet.from_edits(cs.to_edits(), view) == cs
    # rewriting current content is not a change
    assert not ChangeSet.from_edits([{"path": "a", "content": "1"}], view)


# -- merge -----------------------------------------------------------------


def test_merge_one_sided():
    r = Repo()
    b = r.commit(ContentArea({"p": b"0"}), [], "b")
    t = r.commit(ContentArea({"p": b"1", "q": b"2"}), [b], "t")
    out = r.merge3(b, b, t)
    assert out.clean and out.merged == r.checkout(t)


def test_merge_identical_change():
    base = ContentArea({"p": b"0"})
    same = ContentArea({"p": b"A"})
    out = merge3_areas(base, same, same)
    assert out.merged == same


def test_merge_conflict():
    out = merge3_areas(ContentArea({"p": b"0"}), ContentArea({"p": b"A"}), ContentArea({"p": b"B"}))
    assert not out.clean
    (c,) = out.conflicts
    assert (c.path, c.base, c.ours, c.theirs) == ("p", b"0", b"A", b"B")


def test_merge_delete_vs_modify_and_add_add():
    base = ContentArea({"p": b"0"})
    out = merge3_areas(base, ContentArea(), ContentArea({"p": b"1"}))
    assert out.conflict_paths == {"p"}
    out = merge3_areas(ContentArea(), ContentArea({"n": b"x"}), ContentArea({"n": b"y"}))
    assert out.conflict_paths == {"n"}
    out = merge3_areas(base, ContentArea(), ContentArea())
    assert out.merged == ContentArea()


# -- branches --------------------------------------------------------------


def test_branches():
    r = Repo()
    root = r.root()
    for i in range(5):
        r.create_branch(f"b{i}", root)
    assert [(b.name, b.head) for b in r.list_branches()] == [(f"b{i}", root) for i in range(5)]
    assert len(r) == 1
    with pytest.raises(DuplicateBranch):
        r.create_branch("b0", root)
    with pytest.raises(UnknownBranch):
        r.move_branch("nope", root)
    with pytest.raises(UnknownCommit):
        r.create_branch("x", "cd" * 32)
    assert r.next_branch_name("preview/") == "preview/0"
    r.create_branch("preview/0", root)
    assert r.next_branch_name("preview/") == "preview/1"


# -- properties ------------------------------------------------------------

names = st.sampled_from(["a", "b", "c", "d/e", "d/f", "g/h/i"])
contents = st.sampled_from([b"", b"0", b"1", b"2", b"\xff\x00"])
areas = st.dictionaries(names, contents, max_size=6).map(ContentArea)
messages = st.text(max_size=8)


@settings(max_examples=250)
@given(areas, messages)
def test_prop_checkout_commit_identity(area, msg):
    r = Repo()
    c = r.commit(area, [r.root()], msg)
    assert r.checkout(c) == area
    assert c == oracle_digest(dict(area), [r.root()], msg)


@settings(max_examples=250)
@given(areas, areas)
def test_prop_patch_round_trip(x, y):
    r = Repo()
    cx, cy = r.commit(x, [], "x"), r.commit(y, [], "y")
    assert r.diff(cx, cy).apply(r.checkout(cx)) == r.checkout(cy)


@settings(max_examples=250)
@given(areas, areas, areas)
def test_prop_merge_conflict_symmetry(b, x, y):
    assert merge3_areas(b, x, y).conflict_paths == merge3_areas(b, y, x).conflict_paths


@settings(max_examples=250)
@given(areas, areas, areas)
def test_prop_clean_merge_commutes(b, x, y):
    xy = merge3_areas(b, x, y)
    if xy.clean:
        assert xy.merged == merge3_areas(b, y, x).merged


@settings(max_examples=250)
@given(areas, areas, messages)
def test_prop_content_addressing(x, y, msg):
    assert (commit_digest(x, [], msg) == commit_digest(y, [], msg)) == (x == y)
