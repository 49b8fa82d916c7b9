import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ntfsbuild import standard_fixture  # noqa: E402

from sit import cli  # noqa: E402

FIXED_URN = "aff4://0f1e2d3c-4b5a-4978-8695-a4b3c2d1e0f9"
FIXED_TIME = "2024-03-01T12:00:00Z"


def run_sit(*argv):
    """Run the CLI in-process and return its exit code."""
    argv = [str(a) for a in argv]
    try:
        cli.main(argv)
    except SystemExit as exc:
        return exc.code
    raise AssertionError("cli.main returned without exiting")


@pytest.fixture(scope="session")
def fixture_image(tmp_path_factory):
    """(builder, path) for the standard NTFS fixture image, written once per session."""
    builder, image = standard_fixture()
    path = tmp_path_factory.mktemp("image") / "fixture.raw"
    path.write_bytes(image)
    return builder, path


@pytest.fixture
def select_all(tmp_path):
    path = tmp_path / "select_all.json"
    path.write_text(json.dumps({"rules": [{"name_glob": "*"}]}))
    return path


@pytest.fixture
def staging_tree(tmp_path):
    root = tmp_path / "staging"
    (root / "docs").mkdir(parents=True)
    (root / "empty.txt").write_bytes(b"")
    (root / "abc.txt").write_bytes(b"abc")
    (root / "docs" / "letter.txt").write_bytes(b"Dear reader,\nnothing to see.\n" * 50)
    (root / "docs" / "data.bin").write_bytes(bytes(range(256)) * 300)
    return root


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
