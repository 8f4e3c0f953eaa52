import json
import re

import pytest

from regenforge.cascade import (
    Manifest,
    Phase,
    build_robot,
    cascade_from,
    env_head,
    load_manifest,
    preview,
    production_area,
    read_data,
    rollback,
    run_cascade,
    run_phase,
    run_robot,
    verify_phases,
)
from regenforge.errors import (
    CollectionNotAList,
    DataParseError,
    DuplicateOutputPath,
    ManifestError,
    PathError,
    PrototypeRoundTripFailure,
)
from regenforge.nanovc import ContentArea, Repo, area_digest

PHASE = Phase("greet", "d.json", "proto", "rules.json", "people", "out")

RULES = json.dumps([{"name": "n", "match": "World", "replace": "{{name}}"}])


def workspace(people, proto_text="Hello, World!\n", proto_path="hello_World.txt", seed=None):
    return ContentArea.from_text({
        "d.json": json.dumps({"people": people}),
        "rules.json": RULES,
        f"proto/{proto_path}": proto_text,
        "proto/.seed.json": json.dumps(seed if seed is not None else {"name": "World"}),
    })


def names(n):
    return [{"name": f"P{i:02d}"} for i in range(n)]


# -- manifest --------------------------------------------------------------


def test_manifest_round_trip(protocol):
    m, _ = protocol
    assert [p.name for p in m.phases] == ["messages", "activities", "entities", "sync"]
    assert load_manifest(json.dumps(m.to_dict())) == m


@pytest.mark.parametrize("obj", [
    {"phases": [{"name": "a"}]},
    {"phases": [dict(PHASE.to_dict()), dict(PHASE.to_dict())]},
    {"phases": [PHASE.to_dict(), dict(PHASE.to_dict(), name="b", out="out/sub")]},
    {"phases": [dict(PHASE.to_dict(), collection="a..b")]},
    {"phases": [dict(PHASE.to_dict(), out="../x")]},
    {"bogus": 1},
    [],
])
def test_manifest_errors(obj):
    with pytest.raises(ManifestError):
        load_manifest(json.dumps(obj))


def test_empty_manifest_loads_but_cannot_cascade():
    m = load_manifest("{}")
    assert m.phases == () and verify_phases(m, ContentArea()) == {}
    repo = Repo()
    with pytest.raises(ManifestError):
        cascade_from(m, repo, ContentArea(), repo.root())


# -- build_robot -----------------------------------------------------------


def test_zero_records_zero_rules():
    assert build_robot(PHASE, workspace([])).emit_rules == ()


def test_product_count():
    robot = build_robot(PHASE, workspace(names(12)))
    assert len(robot.emit_rules) == 12
    assert [r.record_index for r in robot.emit_rules] == list(range(12))


def test_product_count_multiple_files():
    ws = workspace(names(3)).with_file("proto/World.md", b"# World\n")
    assert len(build_robot(PHASE, ws).emit_rules) == 6


def test_provenance_tracks_every_ingredient():
    ws = workspace(names(2))
    base = build_robot(PHASE, ws).provenance
    assert build_robot(PHASE, ws).provenance == base
    # one-byte edits that keep every ingredient valid
    edits = {
        "d.json": ("data_digest", ws["d.json"] + b" "),
        "rules.json": ("rules_digest", ws["rules.json"] + b"\n"),
        "proto/hello_World.txt": ("prototypes_digest", b"Hello, World?\n"),
        "proto/.seed.json": ("prototypes_digest", ws["proto/.seed.json"] + b" "),
    }
    for path, (field, content) in edits.items():
        prov = build_robot(PHASE, ws.with_file(path, content)).provenance
        changed = {f for f in ("data_digest", "rules_digest", "prototypes_digest")
                   if getattr(prov, f) != getattr(base, f)}
        assert changed == {field}, path


def test_round_trip_failure_carries_report():
    with pytest.raises(PrototypeRoundTripFailure) as info:
        build_robot(PHASE, workspace(names(1), seed={"name": "Earth"}))
    assert info.value.phase == "greet"
    assert info.value.report.failures[0].divergence == 7


def test_collection_must_be_list():
    ws = workspace(names(1)).with_file("d.json", b'{"people": {"a": 1}}')
    with pytest.raises(CollectionNotAList):
        build_robot(PHASE, ws)


def test_bad_data():
    with pytest.raises(DataParseError):
        build_robot(PHASE, workspace(names(1)).with_file("d.json", b"{"))
    with pytest.raises(DataParseError):
        build_robot(PHASE, workspace(names(1)).without("d.json"))


def test_reserved_root_key():
    with pytest.raises(DataParseError):
        build_robot(PHASE, workspace([{"name": "A", "root": 1}]))


# -- run_robot -------------------------------------------------------------


def test_empty_robot_empty_output():
    ws = workspace([])
    assert run_robot(build_robot(PHASE, ws), read_data(PHASE, ws)) == ContentArea()


def test_twelve_files_named_by_record():
    ws = workspace(names(12))
    out = run_robot(build_robot(PHASE, ws), read_data(PHASE, ws))
    assert sorted(out) == sorted(f"hello_P{i:02d}.txt" for i in range(12))
    assert out.text("hello_P03.txt") == "Hello, P03!\n"


def test_robot_is_self_contained():
    ws = workspace(names(2))
    robot = build_robot(PHASE, ws)
    data = read_data(PHASE, ws)
    # no prototypes or rules needed any more
    assert run_robot(robot, data) == run_phase(PHASE, ws)


def test_duplicate_output_path():
    ws = workspace([{"name": "A", "v": "One"}, {"name": "A", "v": "Two"}],
                   proto_text="World Val\n", proto_path="World.txt",
                   seed={"name": "World", "v": "Val"})
    ws = ws.with_file("rules.json", json.dumps([
        {"name": "n", "match": "World", "replace": "{{name}}"},
        {"name": "v", "match": "Val", "replace": "{{v}}"},
    ]).encode())
    robot = build_robot(PHASE, ws)
    with pytest.raises(DuplicateOutputPath):
        run_robot(robot, read_data(PHASE, ws))


def test_identical_duplicates_collapse():
    ws = workspace([{"name": "A"}, {"name": "A"}])
    out = run_robot(build_robot(PHASE, ws), read_data(PHASE, ws))
    assert list(out) == ["hello_A.txt"]


def test_render_error_has_context():
    ws = workspace([{"nom": "A"}])
    robot = build_robot(PHASE, ws)
    with pytest.raises(PathError) as info:
        run_robot(robot, read_data(PHASE, ws))
    assert "record 0" in str(info.value)


def test_root_head_reaches_whole_data():
    ws = workspace(names(2)).with_file(
        "rules.json",
        json.dumps([
            {"name": "n", "match": "World", "replace": "{{name}}"},
            {"name": "t", "match": "Hello", "replace": "#{root.greeting}"},
        ]).encode(),
    ).with_file("d.json", json.dumps({"greeting": "Hi", "people": names(2)}).encode())
    ws = ws.with_file("proto/.seed.json", b'{"name": "World", "root": {"greeting": "Hello"}}')
    out = run_phase(PHASE, ws)
    assert out.text("hello_P00.txt") == "Hi, P00!\n"


def test_partials_fused():
    proto = "x = World\n# <~region:impl~>\npass\n# <~/region:impl~>\n"
    phase = Phase("greet", "d.json", "proto", "rules.json", "people", "out", partials="parts")
    ws = workspace(names(2), proto_text=proto, proto_path="World.py")
    ws = ws.with_file("parts/P01.py", b"# <~region:impl~>\nreturn 1\n# <~/region:impl~>\n")
    out = run_phase(phase, ws)
    assert out.text("P00.py") == proto.replace("World", "P00")
    assert out.text("P01.py") == "x = P01\n# <~region:impl~>\nreturn 1\n# <~/region:impl~>\n"


# -- cascade ---------------------------------------------------------------


def single_manifest():
    return Manifest((PHASE,))


def test_single_phase_cascade():
    m, repo = single_manifest(), Repo()
    ws = workspace(names(2))
    head = run_cascade(m, repo, ws)
    assert repo.head("env") == head
    assert repo.get(head).message == "phase:greet"
    assert repo.get(head).parents == (repo.root(),)
    assert repo.checkout(head) == run_phase(PHASE, ws).prefixed("out")


def test_rerun_is_stable():
    m, repo = single_manifest(), Repo()
    ws = workspace(names(3))
    first = run_cascade(m, repo, ws)
    assert run_cascade(m, repo, ws) == first
    assert run_cascade(m, Repo(), ws) == first


def test_failed_phase_leaves_env_at_last_good():
    second = Phase("two", "d2.json", "proto", "rules.json", "people", "out2")
    m, repo = Manifest((PHASE, second)), Repo()
    ws = workspace(names(1))
    with pytest.raises(DataParseError):
        run_cascade(m, repo, ws)
    assert repo.get(repo.head("env")).message == "phase:greet"


def test_preview_matches_build_and_keeps_env():
    m, repo = single_manifest(), Repo()
    ws = workspace(names(2))
    before = env_head(m, repo)
    d1, b1 = preview(m, repo, ws)
    d2, b2 = preview(m, repo, ws)
    assert repo.head("env") == before
    assert (b1, b2) == ("preview/0", "preview/1")
    built = run_cascade(m, repo, ws)
    assert area_digest(repo.checkout(d1)) == area_digest(repo.checkout(built))
    assert d1 == d2 == built


def test_rollback_moves_env():
    m, repo = single_manifest(), Repo()
    first = run_cascade(m, repo, workspace(names(1)))
    run_cascade(m, repo, workspace(names(2)))
    assert rollback(m, repo, first) == first
    assert repo.head("env") == first


def test_protocol_cascade(protocol):
    m, ingredients = protocol
    repo = Repo()
    head = run_cascade(m, repo, ingredients)
    area = repo.checkout(head)
    assert production_area(m, area) == area
    msgs = area.under("gen/msgs")
    data = json.loads(ingredients["data/messages.json"])
    assert len(data["messages"]) == 12
    assert len(msgs) == 12
    for rec in data["messages"]:
        text = msgs.text(f"gen/msgs/{rec['name']}.py")
        assert len(rec["fields"]) <= 5
        for f in rec["fields"]:
            assert f["name"] in text
        compile(text, rec["name"], "exec")
    seqs = json.loads(ingredients["data/sequences.json"])["sequences"]
    acts = area.under("gen/activities")
    assert sorted(acts) == sorted(f"gen/activities/{s['name']}.py" for s in seqs)
    for path, raw in acts.items():
        for name in re.findall(r"from msgs\.(\w+) import", raw.decode()):
            assert f"gen/msgs/{name}.py" in msgs
    messages = [c.message for c in (repo.get(d) for d in repo.ancestors(head))]
    assert messages == ["phase:sync", "phase:entities", "phase:activities", "phase:messages", "root"]


def test_protocol_partial_fused(protocol):
    m, ingredients = protocol
    repo = Repo()
    area = repo.checkout(run_cascade(m, repo, ingredients))
    text = area.text("gen/msgs/NewOrderSingle.py")
    assert 'return self.order_qty > 0 and self.side in ("1", "2")' in text
    assert "return True" in area.text("gen/msgs/Heartbeat.py")


def test_skeleton_cascade(skeleton):
    m, ingredients = skeleton
    repo = Repo()
    area = repo.checkout(run_cascade(m, repo, ingredients))
    assert area.text("gen/greetings/hello_Robots.txt") == "Hello, Robots!\n"
    assert len(area) == 2
