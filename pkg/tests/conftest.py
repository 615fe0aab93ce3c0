from importlib import resources

import pytest

from mpcslam import cli

_VERDICTS: dict[str, str] = {}


@pytest.fixture(scope="session")
def smoke_runs(tmp_path_factory):
    """Two consecutive ``run-all`` runs of the bundled smoke manifest."""
    manifest = resources.files("mpcslam") / "data" / "smoke_manifest.json"
    outs = []
    with resources.as_file(manifest) as path:
        for i in range(2):
            out = tmp_path_factory.mktemp(f"smoke{i}")
            assert cli.main(["run-all", "--manifest", str(path), "--out", str(out)]) == 0
            outs.append(out)
    return outs


@pytest.fixture
def verdict(request):
    """Record the measured detail of an acceptance test, then assert it."""

    def record(detail: str, ok: bool):
        _VERDICTS[request.node.nodeid] = detail
        print(("PASS " if ok else "FAIL ") + detail)
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter):
    reports = [r for key in ("passed", "failed", "error") for r in terminalreporter.stats.get(key, [])
               if r.when == "call" or r.outcome != "passed"]
    rows = {}
    for r in reports:
        if "test_acceptance.py::" not in r.nodeid:
            continue
        rows[r.nodeid] = ("PASS" if r.outcome == "passed" else "FAIL")
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid in sorted(rows):
        name = nodeid.split("::")[-1].removeprefix("test_criterion_")
        detail = _VERDICTS.get(nodeid, "no measurement recorded")
        terminalreporter.write_line(f"{rows[nodeid]} criterion {name}: {detail}")
