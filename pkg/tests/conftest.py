from pathlib import Path

import pytest

import regenforge
from regenforge.cascade import load_manifest
from regenforge.nanovc import ContentArea

FIXTURES = Path(regenforge.__file__).parent / "fixtures"


def read_tree(root: Path) -> ContentArea:
    files = {}
    for p in sorted(root.rglob("*")):
        if p.is_file() and "__pycache__" not in p.parts:
            files[p.relative_to(root).as_posix()] = p.read_bytes()
    return ContentArea(files)


def fixture_workspace(name: str):
    """(manifest, ingredient area) for a shipped example."""
    area = read_tree(FIXTURES / name)
    manifest = load_manifest(area["regenforge.json"])
    return manifest, area.without("regenforge.json")


@pytest.fixture
def protocol():
    return fixture_workspace("protocol")


@pytest.fixture
def skeleton():
    return fixture_workspace("skeleton")


# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
