from __future__ import annotations

import io
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ownerscope.errors import ComponentUnknown, InvalidThreshold, NegativeSpan, SchemaViolation
from ownerscope.ingest import CommitRecord, FileChange, ReleaseRecord, VulnerabilityRecord
from ownerscope.metrics import (
    DAY,
    METRIC_ROW_COLUMNS,
    Calendar,
    ContributionLedger,
    HistoryIndex,
    OssStage,
    ReleaseTimeline,
    Study,
    TimeStage,
    assemble_group_rows,
    assemble_metric_row,
    assemble_rows,
    build_ledger,
    classic_metrics,
    component_age,
    days_difference,
    merge_ledgers,
    ownership_profile,
    parse_metric_csv,
    pre_post_flags,
    release_counts,
    repository_row,
    time_stage,
    write_metric_csv,
)

T0 = 1_600_000_000


def commit(i, author, day, *changes, parents=1):
    return CommitRecord(f"{i:040x}", author, T0 + int(day * DAY), parents, tuple(FileChange(*c) for c in changes))


def vuln(vid, day, *files, severity=5.0, group=None, commits=("f" * 40,)):
    return VulnerabilityRecord(vid, severity, T0 + int(day * DAY), tuple(commits), tuple(files), group or vid)


# -- ledgers and ownership ---------------------------------------------------

def test_ledger_counts_commits():
    history = [commit(i, a, i + 1, ("f", 1, 0)) for i, a in enumerate("AAAB")]
    ledger = build_ledger(history, "f", T0 + 10 * DAY)
    assert ledger.counts == {"A": 3, "B": 1} and ledger.total == 4


def test_ledger_single_commit():
    assert build_ledger([commit(0, "A", 1, ("f", 9, 9))], "f", T0 + DAY).counts == {"A": 1}


def test_ledger_cutoff_before_touch():
    history = [commit(0, "A", 0, ("g", 1, 0)), commit(1, "A", 5, ("f", 1, 0))]
    with pytest.raises(ComponentUnknown):
        build_ledger(history, "f", T0 + DAY)
    with pytest.raises(ComponentUnknown):
        build_ledger(history, "nope", T0 + 10 * DAY)


def test_ledger_skips_merges_and_counts_each_commit_once():
    history = [
        commit(0, "A", 0, ("f", 1, 0), ("f", 2, 0)),
        commit(1, "B", 1, ("f", 50, 0), parents=2),
        commit(2, "B", 2, ("f", None, None)),
    ]
    assert build_ledger(history, "f", T0 + 3 * DAY).counts == {"A": 1, "B": 1}


def test_cutoff_is_inclusive():
    history = [commit(0, "A", 0, ("f", 1, 0)), commit(1, "B", 1, ("f", 1, 0))]
    assert build_ledger(history, "f", T0 + DAY).total == 2


@pytest.mark.parametrize(
    "counts,threshold,expected",
    [
        ({"A": 3, "B": 1}, 0.10, (0.75, 2, 0, 0.0)),
        ({"A": 19, "B": 1}, 0.10, (0.95, 2, 1, 0.5)),
        ({"A": 1}, 0.10, (1.0, 1, 0, 0.0)),
        ({"A": 1}, 0.99, (1.0, 1, 0, 0.0)),
        ({"A": 9, "B": 1}, 0.10, (0.9, 2, 0, 0.0)),  # exactly 10% is not minor
    ],
)
def test_ownership_profile_examples(counts, threshold, expected):
    p = ownership_profile(ContributionLedger("f", 0, counts), threshold)
    assert (p.ownership, p.n_contributors, p.n_minor, p.per_minor) == pytest.approx(expected)


@pytest.mark.parametrize("t", [0.0, 1.0, -0.1, 1.5])
def test_invalid_threshold(t):
    with pytest.raises(InvalidThreshold):
        ownership_profile(ContributionLedger("f", 0, {"A": 1}), t)


def test_all_contributors_minor_is_possible():
    # 20 equal contributors each hold 5%, below the 10% line
    p = ownership_profile(ContributionLedger("f", 0, {f"c{i}": 1 for i in range(20)}), 0.10)
    assert p.n_minor == p.n_contributors == 20 and p.per_minor == 1.0


ledgers = st.dictionaries(st.text("abcdefgh", min_size=1, max_size=3), st.integers(1, 100), min_size=1, max_size=25)


@settings(max_examples=300, deadline=None)
@given(ledgers, st.floats(0.001, 0.999), st.floats(0.001, 0.999))
def test_ownership_invariants(counts, t1, t2):
    ledger = ContributionLedger("f", 0, counts)
    assert math.isclose(sum(ledger.proportions().values()), 1.0, abs_tol=1e-9)
    lo, hi = sorted((t1, t2))
    a, b = ownership_profile(ledger, lo), ownership_profile(ledger, hi)
    assert a.n_minor <= b.n_minor
    assert a.ownership >= 1 / a.n_contributors
    assert a.per_minor == a.n_minor / a.n_contributors
    if hi <= 0.5:
        assert b.n_minor < b.n_contributors or b.ownership < hi


@settings(max_examples=200, deadline=None)
@given(ledgers)
def test_new_contributor_never_raises_top_share(counts):
    before = ownership_profile(ContributionLedger("f", 0, counts))
    grown = ownership_profile(ContributionLedger("f", 0, {**counts, "zz-newcomer": 1}))
    assert grown.ownership <= before.ownership
    assert ownership_profile(ContributionLedger("f", 0, dict(counts))) == before


def test_merge_ledgers_sums_counts():
    merged = merge_ledgers([ContributionLedger("a", 5, {"x": 2}), ContributionLedger("b", 9, {"x": 1, "y": 4})], "g")
    assert merged.counts == {"x": 3, "y": 4} and merged.cutoff == 9


# -- classic -----------------------------------------------------------------

def test_classic_examples():
    history = [commit(0, "A", 0, ("f", 10, 0)), commit(1, "A", 1, ("f", 5, 3))]
    cm = classic_metrics(history, "f", T0 + 2 * DAY)
    assert (cm.file_size, cm.code_churn, cm.churn_rate) == (12, 18, 1.5)
    cm = classic_metrics(history[:1], "f", T0)
    assert (cm.file_size, cm.code_churn, cm.churn_rate) == (10, 10, 1.0)


def test_classic_binary_only():
    cm = classic_metrics([commit(0, "A", 0, ("b.png", None, None))], "b.png", T0)
    assert (cm.file_size, cm.code_churn, cm.churn_rate) == (0, 0, 0.0)


def test_classic_size_clamped_and_override():
    history = [commit(0, "A", 0, ("f", 2, 10))]
    assert classic_metrics(history, "f", T0).file_size == 0
    cm = classic_metrics(history, "f", T0, size_override=4)
    assert (cm.file_size, cm.churn_rate) == (4, 3.0)


# -- durations and stages ----------------------------------------------------

def test_day_counts():
    assert days_difference(T0, T0) == 0.0
    assert days_difference(1600000000, 1600086400) == 1.0
    assert component_age(T0, T0 + 30 * DAY) == 30.0
    with pytest.raises(NegativeSpan):
        days_difference(T0, T0 - 1)
    with pytest.raises(NegativeSpan):
        component_age(T0, T0 - 1)


@pytest.mark.parametrize("days,stage", [(5, TimeStage.T1), (100, TimeStage.T3), (1095, TimeStage.T5)])
def test_time_stage_examples(days, stage):
    assert time_stage(days) is stage
    assert stage.label == f"T{stage.numeric}"


def test_time_stage_calendar_is_configurable():
    assert time_stage(92, Calendar(month_days=31)) is TimeStage.T2
    assert time_stage(92) is TimeStage.T3


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 10_000, allow_nan=False))
def test_time_stage_partition(d):
    inside = {
        1: 0 <= d <= 7,
        2: 7 < d <= 90,
        3: 90 < d <= 270,
        4: 270 < d < 1095,
        5: d >= 1095,
    }
    assert [k for k, hit in inside.items() if hit] == [time_stage(d).numeric]


def test_oss_stage_numeric_order():
    assert [s.label for s in sorted(OssStage)] == ["SI", "TI", "II", "IG", "SG", "TG"]
    assert [s.numeric for s in sorted(OssStage)] == [1, 2, 3, 4, 5, 6]


def test_timeline_rejects_reversed_window():
    with pytest.raises(NegativeSpan):
        ReleaseTimeline((), T0 + 1, T0)


def rel(*days):
    return [ReleaseRecord(f"v{i}", T0 + int(d * DAY)) for i, d in enumerate(days)]


def test_release_counts_examples():
    assert release_counts([], T0, T0, T0) == (0, 0)
    assert release_counts(rel(10, 50), T0 + 60 * DAY, T0, T0 + 30 * DAY) == (2, 1)
    assert release_counts(rel(10, 50), T0 + 5 * DAY, T0, T0) == (0, 0)


def test_pre_post_flags():
    releases = rel(10, 20)
    assert pre_post_flags(T0, releases) == (1, 0)
    assert pre_post_flags(T0 + 15 * DAY, releases) == (0, 1)
    assert pre_post_flags(T0 + 10 * DAY, releases) == (0, 1)
    assert pre_post_flags(T0, []) == (0, 0)


# -- rows --------------------------------------------------------------------

def small_study():
    commits = [
        commit(0, "A", 0, ("g.py", 30, 0)),
        commit(1, "A", 40, ("f.py", 10, 0)),
        commit(2, "B", 60, ("f.py", 4, 2)),
        commit(3, "C", 80, ("f.py", 1, 1), ("g.py", 2, 0)),
        commit(4, "A", 90, ("h.py", 5, 0)),
        commit(5, "A", 300, ("g.py", 1, 0)),
    ]
    return Study(commits, rel(20, 200), [vuln("CVE-1", 100, "f.py"), vuln("CVE-2", 10, "f.py"), vuln("CVE-3", 50, "zz.py")])


def test_vulnerable_row_composition():
    s = small_study()
    row = assemble_metric_row(s.commits, s.releases, s.vulns[0], "f.py")
    assert row.days_difference == 100.0 and row.age == 60.0
    assert row.time_stage_aged_numeric == time_stage(60).numeric == 2
    assert row.is_defective == 1 and row.severity == 5.0
    assert (row.ownership, row.n_contributors) == (pytest.approx(1 / 3), 3)
    assert (row.file_size, row.code_churn) == (12, 18)
    assert (row.is_pre_release, row.is_post_release) == (0, 1)
    assert (row.release_amounts, row.release_amounts_aged) == (1, 0)
    assert row.oss_stage_aged_numeric == OssStage.II.numeric


def test_snapshot_row():
    s = small_study()
    row = assemble_metric_row(s.commits, s.releases, None, "h.py")
    assert row.is_defective == 0 and row.severity is None
    assert row.days_difference == 300.0 and row.age == 210.0


def test_assemble_rows_exclusions_and_pool():
    rows = assemble_rows(small_study())
    assert [r.component for r in rows.vulnerable] == ["f.py"]
    assert {(e.vulnerability, e.reason.split(":")[0]) for e in rows.exclusions} == {
        ("CVE-2", "ComponentUnknown"),
        ("CVE-3", "ComponentUnknown"),
    }
    assert sorted(r.component for r in rows.pool) == ["g.py", "h.py"]
    assert rows.keys[0][0].id == "CVE-1"


def test_threshold_changes_minor_counts(corpus_study):
    low = assemble_rows(corpus_study, 0.10)
    high = assemble_rows(corpus_study, 0.50)
    assert [r.n_contributors for r in low.vulnerable] == [r.n_contributors for r in high.vulnerable]
    assert all(h.n_minor >= l.n_minor for l, h in zip(low.vulnerable, high.vulnerable))
    assert any(h.n_minor > l.n_minor for l, h in zip(low.vulnerable, high.vulnerable))


def test_jobs_do_not_change_rows(corpus_study):
    assert assemble_rows(corpus_study, jobs=4) == assemble_rows(corpus_study, jobs=1)


def test_corpus_row_invariants(corpus_rows):
    for r in corpus_rows.vulnerable + corpus_rows.pool:
        assert r.release_amounts_aged <= r.release_amounts
        assert r.is_pre_release + r.is_post_release == 1
        assert r.churn_rate == r.code_churn / max(r.file_size, 1)


def test_group_rows_merge_members():
    commits = [
        commit(0, "A", 0, ("a.py", 10, 0)),
        commit(1, "B", 10, ("b.py", 4, 0)),
        commit(2, "A", 20, ("b.py", 1, 1)),
        commit(3, "C", 30, ("c.py", 3, 0)),
    ]
    vulns = [vuln("V1", 40, "a.py", "b.py", group="pr-1", severity=3.0), vuln("V2", 50, "c.py", group="pr-2", severity=None)]
    study = Study(commits, [], vulns)
    rows = assemble_rows(study)
    groups = assemble_group_rows(study, rows)
    assert [g.component for g in groups] == ["pr-1", "pr-2"]
    g = groups[0]
    assert g.n_contributors == 2 and g.ownership == pytest.approx(2 / 3)
    assert (g.file_size, g.code_churn) == (14, 16)
    assert g.age == 40.0 and g.severity == 3.0
    assert groups[1].severity is None


def test_singleton_groups_reproduce_file_rows(corpus_study, corpus_rows):
    groups = assemble_group_rows(corpus_study, corpus_rows)
    strip = lambda r: {c: getattr(r, c) for c in METRIC_ROW_COLUMNS if c != "component"}  # noqa: E731
    assert [strip(g) for g in groups] == [strip(r) for r in corpus_rows.vulnerable]


def test_repository_row_is_union():
    s = small_study()
    row = repository_row(s)
    assert row.component == "*" and row.n_contributors == 3
    assert row.ownership == pytest.approx(4 / 7)


def test_history_index():
    idx = HistoryIndex(small_study().commits)
    assert idx.components() == ["f.py", "g.py", "h.py"]
    assert idx.first_touch("f.py") == T0 + 40 * DAY
    assert idx.project_start == T0 and idx.snapshot == T0 + 300 * DAY
    with pytest.raises(ComponentUnknown):
        HistoryIndex([])


# -- CSV ---------------------------------------------------------------------

def test_metric_csv_round_trip(corpus_rows):
    rows = corpus_rows.vulnerable + corpus_rows.pool
    buf = io.StringIO()
    write_metric_csv(rows, buf)
    text = buf.getvalue()
    assert text.splitlines()[0] == ",".join(METRIC_ROW_COLUMNS)
    assert parse_metric_csv(text) == rows


@pytest.mark.parametrize(
    "text",
    ["", "component,is_defective\n", ",".join(METRIC_ROW_COLUMNS) + "\nf,1\n", ",".join(METRIC_ROW_COLUMNS) + "\n" + ",".join(["x"] * 18)],
)
def test_metric_csv_schema(text):
    with pytest.raises(SchemaViolation):
        parse_metric_csv(text)
