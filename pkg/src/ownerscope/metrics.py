"""Per-component ownership, classic and time/release metrics.

A component is one file path. A contribution is one non-merge commit that
touches the component, whatever the size of the change.
"""

from __future__ import annotations

import bisect
import csv
import logging
import math
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from enum import IntEnum
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence

from ownerscope.errors import ComponentUnknown, InvalidThreshold, NegativeSpan, SchemaViolation
from ownerscope.ingest import CommitRecord, ReleaseRecord, VulnerabilityRecord

log = logging.getLogger(__name__)

DAY = 86_400
DEFAULT_THRESHOLD = 0.10


@dataclass(frozen=True)
class Calendar:
    month_days: int = 30
    year_days: int = 365


DEFAULT_CALENDAR = Calendar()


class TimeStage(IntEnum):
    T1 = 1
    T2 = 2
    T3 = 3
    T4 = 4
    T5 = 5

    @property
    def label(self) -> str:
        return self.name

    @property
    def numeric(self) -> int:
        return int(self)


class OssStage(IntEnum):
    SI = 1  # success initiation
    TI = 2  # tragedy initiation
    II = 3  # indeterminate initiation
    IG = 4  # indeterminate growth
    SG = 5  # success growth
    TG = 6  # tragedy growth

    @property
    def label(self) -> str:
        return self.name

    @property
    def numeric(self) -> int:
        return int(self)


@dataclass(frozen=True)
class ContributionLedger:
    component: str
    cutoff: int
    counts: Mapping[str, int]

    def __post_init__(self) -> None:
        if not self.counts:
            raise ValueError("ledger needs at least one contribution")
        if any(c < 1 for c in self.counts.values()):
            raise ValueError("every contributor count must be >= 1")

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def proportions(self) -> dict[str, float]:
        total = self.total
        return {who: n / total for who, n in self.counts.items()}


@dataclass(frozen=True)
class OwnershipProfile:
    ownership: float
    n_contributors: int
    n_minor: int
    per_minor: float
    threshold: float


@dataclass(frozen=True)
class ClassicMetrics:
    file_size: int
    code_churn: int
    churn_rate: float


@dataclass(frozen=True)
class ReleaseTimeline:
    releases: tuple[ReleaseRecord, ...]
    origin: int
    evaluation: int

    def __post_init__(self) -> None:
        if self.origin > self.evaluation:
            raise NegativeSpan(f"timeline origin {self.origin} is after evaluation {self.evaluation}")

    def window(self) -> list[ReleaseRecord]:
        return sorted(
            (r for r in self.releases if self.origin <= r.timestamp <= self.evaluation),
            key=lambda r: r.timestamp,
        )


@dataclass(frozen=True)
class MetricRow:
    component: str
    is_defective: int
    severity: float | None
    ownership: float
    n_contributors: int
    n_minor: int
    per_minor: float
    days_difference: float
    age: float
    time_stage_aged_numeric: int
    oss_stage_aged_numeric: int
    file_size: int
    code_churn: int
    churn_rate: float
    is_pre_release: int
    is_post_release: int
    release_amounts: int
    release_amounts_aged: int


METRIC_ROW_COLUMNS = tuple(f.name for f in fields(MetricRow))


# -- history index -----------------------------------------------------------

@dataclass(frozen=True)
class Touch:
    timestamp: int
    author: str
    added: int | None
    deleted: int | None


class HistoryIndex:
    """Per-component view of a commit list, built once and queried by cutoff."""

    def __init__(self, commits: Sequence[CommitRecord]) -> None:
        if not commits:
            raise ComponentUnknown("history contains no commits")
        ordered = sorted(commits, key=lambda c: c.timestamp)
        self.project_start = ordered[0].timestamp
        self.snapshot = ordered[-1].timestamp
        touches: dict[str, list[Touch]] = defaultdict(list)
        for commit in ordered:
            if commit.is_merge:
                continue
            seen = set()
            for ch in commit.changes:
                # a path listed twice in one commit is still one contribution
                if ch.path in seen:
                    continue
                seen.add(ch.path)
                touches[ch.path].append(Touch(commit.timestamp, commit.author, ch.added, ch.deleted))
        self._touches = dict(touches)
        self._times = {p: [t.timestamp for t in ts] for p, ts in self._touches.items()}

    def components(self) -> list[str]:
        return sorted(self._touches)

    def __contains__(self, component: str) -> bool:
        return component in self._touches

    def first_touch(self, component: str) -> int:
        if component not in self._touches:
            raise ComponentUnknown(f"no commit touches {component!r}")
        return self._times[component][0]

    def touches(self, component: str, cutoff: int) -> list[Touch]:
        if component not in self._touches:
            raise ComponentUnknown(f"no commit touches {component!r}")
        end = bisect.bisect_right(self._times[component], cutoff)
        if end == 0:
            raise ComponentUnknown(f"no commit touches {component!r} at or before {cutoff}")
        return self._touches[component][:end]


def _as_index(commits: Sequence[CommitRecord] | HistoryIndex) -> HistoryIndex:
    return commits if isinstance(commits, HistoryIndex) else HistoryIndex(commits)


# -- ownership ---------------------------------------------------------------

def build_ledger(commits: Sequence[CommitRecord] | HistoryIndex, component: str, cutoff: int) -> ContributionLedger:
    counts = Counter(t.author for t in _as_index(commits).touches(component, cutoff))
    return ContributionLedger(component, cutoff, dict(sorted(counts.items())))


def merge_ledgers(ledgers: Iterable[ContributionLedger], component: str) -> ContributionLedger:
    """Union of ledgers with per-contributor counts summed."""
    counts: Counter[str] = Counter()
    cutoff = 0
    for ledger in ledgers:
        counts.update(ledger.counts)
        cutoff = max(cutoff, ledger.cutoff)
    return ContributionLedger(component, cutoff, dict(sorted(counts.items())))


def ownership_profile(ledger: ContributionLedger, threshold: float = DEFAULT_THRESHOLD) -> OwnershipProfile:
    if not (0.0 < threshold < 1.0):
        raise InvalidThreshold(f"threshold {threshold} must lie strictly between 0 and 1")
    props = ledger.proportions().values()
    n = len(ledger.counts)
    n_minor = sum(1 for p in props if p < threshold)
    return OwnershipProfile(
        ownership=max(props),
        n_contributors=n,
        n_minor=n_minor,
        per_minor=n_minor / n,
        threshold=threshold,
    )


def classic_metrics(
    commits: Sequence[CommitRecord] | HistoryIndex,
    component: str,
    cutoff: int,
    size_override: int | None = None,
) -> ClassicMetrics:
    """Size, churn and churn rate from numstat deltas up to ``cutoff``.

    Binary changes contribute nothing to either sum. ``size_override``
    replaces the numstat size estimate with an exact line count.
    """
    added = deleted = 0
    for t in _as_index(commits).touches(component, cutoff):
        if t.added is not None:
            added += t.added
            deleted += t.deleted
    size = max(0, added - deleted) if size_override is None else size_override
    churn = added + deleted
    return ClassicMetrics(size, churn, churn / max(size, 1))


# -- time and release --------------------------------------------------------

def days_difference(project_start: int, event: int) -> float:
    if event < project_start:
        raise NegativeSpan(f"event {event} precedes project start {project_start}")
    return (event - project_start) / DAY


def component_age(first_touch: int, event: int) -> float:
    if event < first_touch:
        raise NegativeSpan(f"event {event} precedes component first touch {first_touch}")
    return (event - first_touch) / DAY


def time_stage(duration: float, calendar: Calendar = DEFAULT_CALENDAR) -> TimeStage:
    """Bucket a duration in days into T1..T5.

    T1 covers [0, 7], T2 (7, 3 months], T3 (3, 9 months], T4 (9 months,
    3 years) and T5 everything from 3 years on.
    """
    if duration < 0 or math.isnan(duration):
        raise NegativeSpan(f"duration {duration} is negative")
    if duration <= 7:
        return TimeStage.T1
    if duration <= 3 * calendar.month_days:
        return TimeStage.T2
    if duration <= 9 * calendar.month_days:
        return TimeStage.T3
    if duration < 3 * calendar.year_days:
        return TimeStage.T4
    return TimeStage.T5


def oss_stage(timeline: ReleaseTimeline, calendar: Calendar = DEFAULT_CALENDAR) -> OssStage:
    window = timeline.window()
    n = len(window)
    year = calendar.year_days * DAY
    half_year = 6 * calendar.month_days * DAY
    elapsed = timeline.evaluation - timeline.origin
    growth = window[-1].timestamp - window[0].timestamp if n >= 2 else 0
    since_last = timeline.evaluation - window[-1].timestamp if n else elapsed

    # the stage predicates overlap, so precedence decides
    if n == 0:
        return OssStage.TI if elapsed > year else OssStage.II
    if n >= 3 and growth > half_year:
        return OssStage.SG
    if n <= 2 and since_last > year:
        return OssStage.TG
    if (n < 3 and elapsed < year) or (n == 3 and growth < half_year):
        return OssStage.IG
    return OssStage.SI


def release_counts(
    releases: Sequence[ReleaseRecord], event: int, project_start: int, first_touch: int
) -> tuple[int, int]:
    amounts = sum(1 for r in releases if project_start <= r.timestamp <= event)
    aged = sum(1 for r in releases if first_touch <= r.timestamp <= event)
    return amounts, aged


def pre_post_flags(event: int, releases: Sequence[ReleaseRecord]) -> tuple[int, int]:
    if not releases:
        return 0, 0
    pre = int(event < min(r.timestamp for r in releases))
    return pre, 1 - pre


# -- rows --------------------------------------------------------------------

def _compose_row(
    component: str,
    is_defective: int,
    severity: float | None,
    ledger: ContributionLedger,
    classic: ClassicMetrics,
    project_start: int,
    first_touch: int,
    event: int,
    releases: Sequence[ReleaseRecord],
    threshold: float,
    calendar: Calendar,
) -> MetricRow:
    profile = ownership_profile(ledger, threshold)
    diff = days_difference(project_start, event)
    age = component_age(first_touch, event)
    stage = time_stage(age, calendar)
    oss = oss_stage(ReleaseTimeline(tuple(releases), first_touch, event), calendar)
    amounts, aged = release_counts(releases, event, project_start, first_touch)
    pre, post = pre_post_flags(event, releases)
    return MetricRow(
        component=component,
        is_defective=is_defective,
        severity=severity,
        ownership=profile.ownership,
        n_contributors=profile.n_contributors,
        n_minor=profile.n_minor,
        per_minor=profile.per_minor,
        days_difference=diff,
        age=age,
        time_stage_aged_numeric=stage.numeric,
        oss_stage_aged_numeric=oss.numeric,
        file_size=classic.file_size,
        code_churn=classic.code_churn,
        churn_rate=classic.churn_rate,
        is_pre_release=pre,
        is_post_release=post,
        release_amounts=amounts,
        release_amounts_aged=aged,
    )


def assemble_metric_row(
    commits: Sequence[CommitRecord] | HistoryIndex,
    releases: Sequence[ReleaseRecord],
    vuln: VulnerabilityRecord | None,
    component: str,
    threshold: float = DEFAULT_THRESHOLD,
    calendar: Calendar = DEFAULT_CALENDAR,
    sizes: Mapping[str, int] | None = None,
) -> MetricRow:
    """Build one observation; ``vuln=None`` means a snapshot (non-vulnerable) row."""
    history = _as_index(commits)
    event = history.snapshot if vuln is None else vuln.published
    ledger = build_ledger(history, component, event)
    classic = classic_metrics(history, component, event, (sizes or {}).get(component))
    return _compose_row(
        component,
        0 if vuln is None else 1,
        None if vuln is None else vuln.severity,
        ledger,
        classic,
        history.project_start,
        history.first_touch(component),
        event,
        releases,
        threshold,
        calendar,
    )


@dataclass(frozen=True)
class Exclusion:
    vulnerability: str
    component: str
    reason: str


@dataclass
class RowSet:
    vulnerable: list[MetricRow]
    pool: list[MetricRow]
    exclusions: list[Exclusion] = field(default_factory=list)
    # (vulnerability, component) for each vulnerable row, same order
    keys: list[tuple[VulnerabilityRecord, str]] = field(default_factory=list)


@dataclass
class Study:
    """Everything a metric table is computed from."""

    commits: Sequence[CommitRecord]
    releases: Sequence[ReleaseRecord]
    vulns: Sequence[VulnerabilityRecord]
    sizes: Mapping[str, int] | None = None
    _history: HistoryIndex | None = field(default=None, repr=False)

    @property
    def history(self) -> HistoryIndex:
        if self._history is None:
            self._history = HistoryIndex(self.commits)
        return self._history

    def vulnerable_components(self) -> set[str]:
        return {f for v in self.vulns for f in v.files}


def _pairs(vulns: Iterable[VulnerabilityRecord]) -> list[tuple[VulnerabilityRecord, str]]:
    out = []
    for v in vulns:
        for f in dict.fromkeys(v.files):
            out.append((v, f))
    return out


def assemble_rows(
    study: Study,
    threshold: float = DEFAULT_THRESHOLD,
    calendar: Calendar = DEFAULT_CALENDAR,
    jobs: int = 1,
) -> RowSet:
    """Vulnerable rows per (advisory, file) plus the snapshot pool.

    The pool holds one snapshot row for every component that no advisory
    names. Vulnerable rows that cannot be computed are skipped and listed
    in ``exclusions``.
    """
    if not (0.0 < threshold < 1.0):
        raise InvalidThreshold(f"threshold {threshold} must lie strictly between 0 and 1")
    history = study.history
    pairs = _pairs(study.vulns)

    def one(pair):
        vuln, component = pair
        try:
            return assemble_metric_row(history, study.releases, vuln, component, threshold, calendar, study.sizes)
        except (ComponentUnknown, NegativeSpan) as exc:
            return Exclusion(vuln.id, component, f"{type(exc).__name__}: {exc}")

    flagged = study.vulnerable_components()
    pool_components = [c for c in history.components() if c not in flagged]

    def snap(component):
        return assemble_metric_row(history, study.releases, None, component, threshold, calendar, study.sizes)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(one, pairs))
            pool = list(ex.map(snap, pool_components))
    else:
        results = [one(p) for p in pairs]
        pool = [snap(c) for c in pool_components]

    rows = RowSet([], pool)
    for pair, res in zip(pairs, results):
        if isinstance(res, Exclusion):
            log.warning("excluding %s / %s: %s", res.vulnerability, res.component, res.reason)
            rows.exclusions.append(res)
        else:
            rows.vulnerable.append(res)
            rows.keys.append(pair)
    return rows


def assemble_group_rows(
    study: Study,
    rows: RowSet,
    threshold: float = DEFAULT_THRESHOLD,
    calendar: Calendar = DEFAULT_CALENDAR,
) -> list[MetricRow]:
    """Aggregate vulnerable rows by advisory group key.

    Member ledgers are merged by summing counts, classic metrics are summed,
    the group event is the earliest member event and the group is as old as
    its oldest member (whose first touch precedes that event, since every
    member was touched before its own advisory). Only members that produced
    a file-level row take part. Groups keep the order of their first member,
    so singleton groups reproduce the file-level rows exactly.
    """
    history = study.history
    members: dict[str, list[tuple[VulnerabilityRecord, str]]] = defaultdict(list)
    for vuln, component in rows.keys:
        members[vuln.group_key].append((vuln, component))

    out = []
    for key, group in members.items():
        ledgers, size, churn = [], 0, 0
        for vuln, component in group:
            ledgers.append(build_ledger(history, component, vuln.published))
            cm = classic_metrics(history, component, vuln.published, (study.sizes or {}).get(component))
            size += cm.file_size
            churn += cm.code_churn
        event = min(v.published for v, _ in group)
        oldest = min(history.first_touch(c) for _, c in group)
        severities = [v.severity for v, _ in group if v.severity is not None]
        out.append(
            _compose_row(
                key,
                1,
                max(severities) if severities else None,
                merge_ledgers(ledgers, key),
                ClassicMetrics(size, churn, churn / max(size, 1)),
                history.project_start,
                oldest,
                event,
                study.releases,
                threshold,
                calendar,
            )
        )
    return out


def repository_row(
    study: Study, threshold: float = DEFAULT_THRESHOLD, calendar: Calendar = DEFAULT_CALENDAR
) -> MetricRow:
    """Repository-wide snapshot row from the union of every component ledger."""
    history = study.history
    ledgers, size, churn = [], 0, 0
    for component in history.components():
        ledgers.append(build_ledger(history, component, history.snapshot))
        cm = classic_metrics(history, component, history.snapshot, (study.sizes or {}).get(component))
        size += cm.file_size
        churn += cm.code_churn
    first = min(history.first_touch(c) for c in history.components())
    return _compose_row(
        "*",
        0,
        None,
        merge_ledgers(ledgers, "*"),
        ClassicMetrics(size, churn, churn / max(size, 1)),
        history.project_start,
        first,
        history.snapshot,
        study.releases,
        threshold,
        calendar,
    )


# -- CSV ---------------------------------------------------------------------

_INT_COLUMNS = {f.name for f in fields(MetricRow) if f.type in ("int", int)}
_FLOAT_COLUMNS = {f.name for f in fields(MetricRow) if f.type in ("float", float)}


def _fmt(value) -> str:
    if value is None:
        return ""
    return repr(float(value)) if isinstance(value, float) else str(value)


def write_metric_csv(rows: Iterable[MetricRow], fh: IO[str]) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(METRIC_ROW_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(getattr(row, c)) for c in METRIC_ROW_COLUMNS])


def parse_metric_csv(text: str) -> list[MetricRow]:
    reader = csv.reader(text.splitlines())
    header = next(reader, None)
    if header is None or tuple(header) != METRIC_ROW_COLUMNS:
        raise SchemaViolation("metric CSV header does not match the MetricRow columns", line=1)
    rows = []
    for lineno, rec in enumerate(reader, start=2):
        if not rec:
            continue
        if len(rec) != len(METRIC_ROW_COLUMNS):
            raise SchemaViolation(f"expected {len(METRIC_ROW_COLUMNS)} fields, got {len(rec)}", line=lineno)
        values = {}
        try:
            for name, cell in zip(METRIC_ROW_COLUMNS, rec):
                if name == "component":
                    values[name] = cell
                elif name == "severity":
                    values[name] = float(cell) if cell else None
                elif name in _INT_COLUMNS:
                    values[name] = int(cell)
                else:
                    values[name] = float(cell)
        except ValueError as exc:
            raise SchemaViolation(f"bad value: {exc}", line=lineno) from None
        rows.append(MetricRow(**values))
    return rows


def read_metric_csv(path: str | Path) -> list[MetricRow]:
    return parse_metric_csv(Path(path).read_text(encoding="utf-8"))


def load_sizes_csv(path: str | Path) -> dict[str, int]:
    """Exact line counts, CSV with header ``path,lines``."""
    sizes = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["path", "lines"]:
            raise SchemaViolation("sizes CSV header must be 'path,lines'", line=1)
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            try:
                path_, lines = rec
                n = int(lines)
                if n < 0:
                    raise ValueError("negative line count")
            except ValueError as exc:
                raise SchemaViolation(f"bad sizes row: {exc}", line=lineno) from None
            sizes[path_] = n
    return sizes
