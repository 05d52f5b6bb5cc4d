from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import pytest

from ownerscope.ingest import load_release_list, load_vulnerability_records, parse_commit_log
from ownerscope.metrics import Study, assemble_rows

CORPUS = Path(__file__).parent / "fixtures" / "synthetic"

_criteria: dict[int, list[str]] = defaultdict(list)


@pytest.fixture(scope="session")
def corpus_dir() -> Path:
    return CORPUS


@pytest.fixture(scope="session")
def corpus_study() -> Study:
    return Study(
        commits=parse_commit_log((CORPUS / "history.log").read_bytes()),
        releases=load_release_list(CORPUS / "releases.csv"),
        vulns=load_vulnerability_records(CORPUS / "vulns.jsonl"),
    )


@pytest.fixture(scope="session")
def corpus_rows(corpus_study):
    return assemble_rows(corpus_study)


def pytest_runtest_logreport(report):
    marker = getattr(report, "acceptance", None)
    if marker is None:
        return
    if report.when == "call" or report.outcome != "passed":
        _criteria[marker].append(report.outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    mark = item.get_closest_marker("acceptance")
    if mark is not None:
        outcome.get_result().acceptance = mark.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        outcomes = _criteria[n]
        ok = all(o == "passed" for o in outcomes)
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} ({len(outcomes)} checks)")
