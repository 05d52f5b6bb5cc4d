"""Dataset assembly, correlation reports, regression suite and distortion sweeps."""

from __future__ import annotations

import itertools
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ownerscope import stats
from ownerscope.errors import (
    DegenerateRangeWarning,
    NoSeverityRows,
    OwnerscopeError,
    PoolTooSmall,
    SingleClass,
    SingleGroup,
    ValidationError,
    ZeroVector,
)
from ownerscope.metrics import (
    DEFAULT_CALENDAR,
    DEFAULT_THRESHOLD,
    Calendar,
    MetricRow,
    Study,
    assemble_group_rows,
    assemble_rows,
)

log = logging.getLogger(__name__)

# core metric order; also the fixed column set of every heatmap
CORE_METRICS = (
    "ownership",
    "n_contributors",
    "n_minor",
    "per_minor",
    "days_difference",
    "age",
    "oss_stage_aged_numeric",
    "file_size",
    "code_churn",
    "churn_rate",
)
SEVERITY_METRICS = CORE_METRICS + ("is_pre_release", "is_post_release", "release_amounts", "release_amounts_aged")
CLASSIC = ("file_size", "code_churn", "churn_rate")
MINOR = ("n_minor", "per_minor")

RATIOS = tuple(round(0.1 * i, 1) for i in range(1, 11))
THRESHOLDS = (0.05, 0.10, 0.20, 0.50)

# (target, model name, predictors); the first predictor is the focal one
REGRESSION_MODELS: tuple[tuple[str, str, tuple[str, ...]], ...] = (
    ("is_defective", "days_difference", ("days_difference",)),
    ("is_defective", "days_difference+classic", ("days_difference",) + CLASSIC),
    ("is_defective", "age", ("age",)),
    ("is_defective", "age+classic", ("age",) + CLASSIC),
    ("time_stage_aged_numeric", "per_minor", ("per_minor",)),
    ("time_stage_aged_numeric", "per_minor+classic", ("per_minor",) + CLASSIC),
    ("time_stage_aged_numeric", "oss_stage_aged", ("oss_stage_aged_numeric",)),
    ("time_stage_aged_numeric", "oss_stage_aged+classic", ("oss_stage_aged_numeric",) + CLASSIC),
    ("time_stage_aged_numeric", "per_minor+oss_stage_aged", ("per_minor", "oss_stage_aged_numeric")),
    ("severity", "days_difference", ("days_difference",)),
    ("severity", "days_difference+classic", ("days_difference",) + CLASSIC),
    ("severity", "days_difference+minor", ("days_difference",) + MINOR),
)


@dataclass(frozen=True)
class DatasetSpec:
    """How to mix vulnerable and snapshot rows.

    By default ``ratio`` r asks for ``round(n_vuln / r)`` snapshot rows, so
    0.1 is one vulnerable row per ten clean ones. ``inverse`` flips that to
    ``round(n_vuln * r)``.
    """

    ratio: float = 1.0
    seed: int = 42
    threshold: float = DEFAULT_THRESHOLD
    snapshot: int | None = None
    inverse: bool = False

    def nonvulnerable_count(self, n_vuln: int) -> int:
        if not (0.0 < self.ratio <= 1.0):
            raise ValidationError(f"ratio {self.ratio} must lie in (0, 1]")
        return round(n_vuln * self.ratio) if self.inverse else round(n_vuln / self.ratio)


def build_dataset(vuln_rows: Sequence[MetricRow], nonvuln_pool: Sequence[MetricRow], spec: DatasetSpec) -> list[MetricRow]:
    """All vulnerable rows plus a seeded sample of the snapshot pool."""
    want = spec.nonvulnerable_count(len(vuln_rows))
    if want > len(nonvuln_pool):
        raise PoolTooSmall(
            f"ratio {spec.ratio} needs {want} non-vulnerable rows but the pool has {len(nonvuln_pool)}"
        )
    rng = np.random.default_rng(spec.seed)
    picked = np.sort(rng.choice(len(nonvuln_pool), size=want, replace=False))
    return list(vuln_rows) + [nonvuln_pool[int(i)] for i in picked]


# -- correlation reports -----------------------------------------------------

@dataclass
class CorrelationReport:
    analysis: str
    n: int
    metrics: tuple[str, ...]
    targets: tuple[str, ...]
    methods: tuple[str, ...]
    # target -> metric -> method -> coefficient (undefined stored as 0.0)
    values: dict[str, dict[str, dict[str, float]]]
    masked: list[tuple[str, str, str]] = field(default_factory=list)

    def get(self, metric: str, method: str, target: str | None = None) -> float:
        return self.values[target or self.targets[0]][metric][method]

    def to_dict(self) -> dict:
        return {
            "analysis": self.analysis,
            "n": self.n,
            "methods": list(self.methods),
            "targets": {
                t: [{"metric": m, **self.values[t][m]} for m in self.metrics] for t in self.targets
            },
            "masked": [{"target": t, "metric": m, "method": k} for t, m, k in self.masked],
        }


def _check_methods(methods: Sequence[str]) -> tuple[str, ...]:
    methods = tuple(methods)
    for m in methods:
        if m not in stats.METHODS:
            raise ValidationError(f"unknown correlation method {m!r}")
    return methods


def _correlate_table(analysis, rows, metrics, targets, methods) -> CorrelationReport:
    methods = _check_methods(methods)
    report = CorrelationReport(analysis, len(rows), tuple(metrics), tuple(targets), methods, {})
    for target in targets:
        y = stats.column(rows, target)
        per_metric = {}
        for metric in metrics:
            x = stats.column(rows, metric)
            coeffs = {}
            for method in methods:
                r = stats.correlate(x, y, method)
                if math.isnan(r):
                    report.masked.append((target, metric, method))
                    r = 0.0
                coeffs[method] = r
            per_metric[metric] = coeffs
        report.values[target] = per_metric
    return report


def direct_correlation_report(table: Sequence[MetricRow], methods: Sequence[str] = stats.METHODS) -> CorrelationReport:
    labels = {r.is_defective for r in table}
    if len(labels) < 2 or len(table) < 2:
        raise SingleClass("table holds only one class of is_defective")
    return _correlate_table("is_defective", table, CORE_METRICS, ("is_defective",), methods)


def staged_correlation_report(table: Sequence[MetricRow], methods: Sequence[str] = stats.METHODS) -> CorrelationReport:
    rows = [r for r in table if r.is_defective == 1]
    if len({r.time_stage_aged_numeric for r in rows}) < 2:
        raise SingleClass("vulnerable rows all fall in one time stage")
    return _correlate_table(
        "time_stage",
        rows,
        CORE_METRICS,
        ("time_stage_aged_numeric", "is_pre_release", "is_post_release"),
        methods,
    )


def severity_rows(table: Sequence[MetricRow]) -> list[MetricRow]:
    return [r for r in table if r.is_defective == 1 and r.severity is not None]


def severity_correlation_report(table: Sequence[MetricRow], methods: Sequence[str] = stats.METHODS) -> CorrelationReport:
    rows = severity_rows(table)
    if len(rows) < 2:
        raise NoSeverityRows(f"need at least 2 vulnerable rows with a severity, found {len(rows)}")
    return _correlate_table("severity", rows, SEVERITY_METRICS, ("severity",), methods)


# -- regression --------------------------------------------------------------

@dataclass
class ModelFit:
    target: str
    model: str
    predictors: tuple[str, ...]
    result: stats.RegressionResult | None = None
    error: str | None = None

    @property
    def focal_coefficient(self) -> float | None:
        return None if self.result is None else self.result.coefficient(self.predictors[0])

    def to_dict(self) -> dict:
        out = {"target": self.target, "model": self.model, "predictors": list(self.predictors)}
        if self.result is None:
            out["error"] = self.error
            return out
        res = self.result
        out.update(
            coefficients=dict(zip(("intercept",) + res.names, res.coefficients)),
            focal_coefficient=self.focal_coefficient,
            r_squared=res.r_squared,
            adj_r_squared=res.adj_r_squared,
            f_statistic=res.f_statistic,
            n=res.n,
            p=res.p,
        )
        return out


def _rows_for_target(table: Sequence[MetricRow], target: str) -> list[MetricRow]:
    if target == "is_defective":
        return list(table)
    if target == "severity":
        return severity_rows(table)
    return [r for r in table if r.is_defective == 1]


def regression_suite(table: Sequence[MetricRow]) -> list[ModelFit]:
    """Fit every robustness model; one failing model does not stop the rest."""
    fits = []
    for target, name, predictors in REGRESSION_MODELS:
        fit = ModelFit(target, name, predictors)
        rows = _rows_for_target(table, target)
        try:
            x = np.column_stack([stats.column(rows, p) for p in predictors]) if rows else np.empty((0, len(predictors)))
            y = stats.column(rows, target)
            fit.result = stats.ols_fit(x, y, names=predictors)
        except OwnerscopeError as exc:
            fit.error = f"{type(exc).__name__}: {exc}"
        fits.append(fit)
    return fits


# -- sweeps ------------------------------------------------------------------

@dataclass
class PairComparison:
    a: float | str
    b: float | str
    frobenius: float
    minmax: float
    expdecay: float
    cosine: float
    ks_d: float
    ks_p: float
    mantel_r: float
    mantel_p: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class SweepReport:
    axis: str
    points: list[tuple[float | str, stats.CorrelationMatrix]]
    pairwise: list[PairComparison]
    summary: dict = field(default_factory=dict)

    def pair(self, a, b) -> PairComparison:
        for p in self.pairwise:
            if {p.a, p.b} == {a, b}:
                return p
        raise KeyError((a, b))

    def to_dict(self) -> dict:
        return {
            "axis": self.axis,
            "points": [{"setting": s, "matrix": m.to_dict()} for s, m in self.points],
            "pairwise": [p.to_dict() for p in self.pairwise],
            "summary": self.summary,
        }


def _safe_cosine(a, b) -> float:
    try:
        return stats.cosine_similarity(a, b)
    except ZeroVector:
        return math.nan


def _mean(values) -> float:
    values = [v for v in values if not math.isnan(v)]
    return float(np.mean(values)) if values else math.nan


def compare_points(
    axis: str,
    points: list[tuple[float | str, stats.CorrelationMatrix]],
    *,
    seed: int,
    lam: float = 1.0,
    permutations: int = 999,
    average: str = "all",
) -> SweepReport:
    """Every pairwise comparison between sweep matrices, plus averages.

    Min-max similarity is taken over the Frobenius distances of all pairs.
    ``average`` picks which pairs enter the summary means: ``all`` unordered
    pairs or only ``consecutive`` settings. Two exactly equal matrices whose
    cosine or Mantel statistic is undefined (all-zero or constant entries)
    score 1.0, with Mantel p = 1.0.
    """
    if average not in ("all", "consecutive"):
        raise ValidationError(f"average must be 'all' or 'consecutive', got {average!r}")
    index_pairs = list(itertools.combinations(range(len(points)), 2))
    frob = [stats.frobenius_distance(points[i][1], points[j][1]) for i, j in index_pairs]
    degenerate = False
    if frob:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", DegenerateRangeWarning)
            mm = stats.minmax_similarity(frob)
        degenerate = any(issubclass(w.category, DegenerateRangeWarning) for w in caught)
        if degenerate:
            log.warning("all sweep matrices are equidistant; min-max similarity set to 1.0")
    else:
        mm = []

    pairwise = []
    for k, (i, j) in enumerate(index_pairs):
        ma, mb = points[i][1], points[j][1]
        ks_d, ks_p = stats.ks_two_sample(ma.values.ravel(), mb.values.ravel())
        m_r, m_p = stats.mantel(
            stats.correlation_to_distance(ma),
            stats.correlation_to_distance(mb),
            permutations,
            seed=seed + k,
        )
        cos = _safe_cosine(ma, mb)
        if np.array_equal(ma.values, mb.values):
            # equal matrices with no spread: every permutation ties
            if math.isnan(m_r):
                m_r, m_p = 1.0, 1.0
            if math.isnan(cos):
                cos = 1.0
        pairwise.append(
            PairComparison(
                points[i][0],
                points[j][0],
                frob[k],
                mm[k],
                stats.expdecay_similarity(frob[k], lam),
                cos,
                ks_d,
                ks_p,
                m_r,
                m_p,
            )
        )

    chosen = pairwise if average == "all" else [p for (i, j), p in zip(index_pairs, pairwise) if j == i + 1]
    summary = {
        "pairs_averaged": average,
        "lambda": lam,
        "permutations": permutations,
        "minmax_degenerate": degenerate,
        "mean_frobenius": _mean(p.frobenius for p in chosen),
        "mean_minmax": _mean(p.minmax for p in chosen),
        "mean_expdecay": _mean(p.expdecay for p in chosen),
        "mean_cosine": _mean(p.cosine for p in chosen),
        "mean_ks_p": _mean(p.ks_p for p in chosen),
        "mean_mantel_r": _mean(p.mantel_r for p in chosen),
        "mean_mantel_p": _mean(p.mantel_p for p in chosen),
        "min_mantel_p": min((p.mantel_p for p in chosen), default=math.nan),
    }
    return SweepReport(axis, points, pairwise, summary)


def _map(fn: Callable, items: list, jobs: int) -> list:
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(item) for item in items]


def common_vulnerable_count(n_vuln: int, pool_size: int, ratios: Sequence[float], inverse: bool = False) -> int:
    """Largest vulnerable-row count every ratio can be served with from the pool."""
    for n in range(n_vuln, 0, -1):
        if all(DatasetSpec(ratio=r, inverse=inverse).nonvulnerable_count(n) <= pool_size for r in ratios):
            return n
    return 0


def ratio_sweep(
    vuln_rows: Sequence[MetricRow],
    nonvuln_pool: Sequence[MetricRow],
    *,
    seed: int = 42,
    ratios: Sequence[float] = RATIOS,
    method: str = "pearson",
    lam: float = 1.0,
    permutations: int = 999,
    average: str = "all",
    inverse: bool = False,
    jobs: int = 1,
) -> SweepReport:
    """Heatmaps across vulnerable:non-vulnerable mixes.

    Every point shares one vulnerable-row set. When the pool cannot serve the
    most demanding ratio with all vulnerable rows, a seeded subset of them is
    used throughout so that only the snapshot sample varies between points.
    Point ``i`` samples the pool with seed ``seed + i``.
    """
    n_common = common_vulnerable_count(len(vuln_rows), len(nonvuln_pool), ratios, inverse)
    if n_common < 2:
        raise PoolTooSmall(
            f"pool of {len(nonvuln_pool)} snapshot rows cannot cover ratios down to {min(ratios)}"
        )
    vuln = list(vuln_rows)
    if n_common < len(vuln):
        log.info("ratio sweep uses %d of %d vulnerable rows to fit the pool", n_common, len(vuln))
        rng = np.random.default_rng(seed)
        keep = np.sort(rng.choice(len(vuln), size=n_common, replace=False))
        vuln = [vuln[int(i)] for i in keep]

    def point(item):
        i, ratio = item
        table = build_dataset(vuln, nonvuln_pool, DatasetSpec(ratio=ratio, seed=seed + i, inverse=inverse))
        return ratio, stats.correlation_matrix(table, CORE_METRICS, method)

    points = _map(point, list(enumerate(ratios)), jobs)
    report = compare_points("ratio", points, seed=seed, lam=lam, permutations=permutations, average=average)
    report.summary["vulnerable_rows_used"] = n_common
    report.summary["inverse_ratio"] = inverse
    return report


def threshold_sweep(
    study: Study,
    *,
    seed: int = 42,
    thresholds: Sequence[float] = THRESHOLDS,
    reference: float = DEFAULT_THRESHOLD,
    ratio: float = 1.0,
    method: str = "pearson",
    lam: float = 1.0,
    permutations: int = 999,
    average: str = "all",
    calendar: Calendar = DEFAULT_CALENDAR,
    jobs: int = 1,
) -> SweepReport:
    """Heatmaps recomputed at each minor-contributor threshold.

    All points share one dataset draw (same seed, same pool order), so the
    threshold is the only thing that changes between matrices.
    """

    def point(t):
        rows = assemble_rows(study, t, calendar)
        table = build_dataset(rows.vulnerable, rows.pool, DatasetSpec(ratio=ratio, seed=seed, threshold=t))
        return t, stats.correlation_matrix(table, CORE_METRICS, method)

    points = _map(point, list(thresholds), jobs)
    report = compare_points("threshold", points, seed=seed, lam=lam, permutations=permutations, average=average)

    settings = [s for s, _ in points]
    mean_cos = {}
    for s in settings:
        mean_cos[s] = _mean(p.cosine for p in report.pairwise if s in (p.a, p.b))
    report.summary["mean_cosine_to_others"] = [{"threshold": s, "mean_cosine": mean_cos[s]} for s in settings]
    report.summary["best_threshold"] = max(settings, key=lambda s: (mean_cos[s], -settings.index(s)))
    if reference in settings:
        report.summary["reference_threshold"] = reference
        report.summary["ks_vs_reference"] = [
            {"threshold": s, "ks_d": report.pair(reference, s).ks_d, "ks_p": report.pair(reference, s).ks_p}
            for s in settings
            if s != reference
        ]
    return report


@dataclass
class LocalityResult:
    mantel_r: float
    mantel_p: float
    file_matrix: stats.CorrelationMatrix
    group_matrix: stats.CorrelationMatrix
    n_file_rows: int
    n_groups: int


def locality_check(
    study: Study,
    *,
    seed: int = 42,
    threshold: float = DEFAULT_THRESHOLD,
    method: str = "pearson",
    permutations: int = 999,
    calendar: Calendar = DEFAULT_CALENDAR,
) -> LocalityResult:
    """Mantel test between file-level and group-level heatmaps of vulnerable rows."""
    rows = assemble_rows(study, threshold, calendar)
    groups = assemble_group_rows(study, rows, threshold, calendar)
    if len(groups) < 2:
        raise SingleGroup(f"need at least 2 advisory groups, found {len(groups)}")
    file_m = stats.correlation_matrix(rows.vulnerable, CORE_METRICS, method)
    group_m = stats.correlation_matrix(groups, CORE_METRICS, method)
    r, p = stats.mantel(
        stats.correlation_to_distance(file_m),
        stats.correlation_to_distance(group_m),
        permutations,
        seed=seed,
    )
    return LocalityResult(r, p, file_m, group_m, len(rows.vulnerable), len(groups))


def locality_sweep(study: Study, *, seed: int = 42, lam: float = 1.0, permutations: int = 999, **kwargs) -> SweepReport:
    res = locality_check(study, seed=seed, permutations=permutations, **kwargs)
    report = compare_points(
        "locality",
        [("file", res.file_matrix), ("group", res.group_matrix)],
        seed=seed,
        lam=lam,
        permutations=permutations,
    )
    report.summary["n_file_rows"] = res.n_file_rows
    report.summary["n_groups"] = res.n_groups
    report.summary["mantel_r"] = res.mantel_r
    report.summary["mantel_p"] = res.mantel_p
    return report
