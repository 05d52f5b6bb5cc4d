"""Command-line entry point.

Every option can also be set through an ``OWNERSCOPE_<FLAG>`` environment
variable (``--seed`` -> ``OWNERSCOPE_SEED``); flags win over the environment.
Exit codes: 0 success, 2 bad input, 3 network failure, 4 degenerate analysis.
"""

from __future__ import annotations

import io
import json
import logging
import sys
from pathlib import Path

import click

from ownerscope import analysis, reports
from ownerscope.errors import OwnerscopeError
from ownerscope.ingest import (
    SENTINEL,
    dump_commits_jsonl,
    dump_releases_csv,
    dump_vulnerabilities_jsonl,
    load_commits_jsonl,
    load_release_list,
    load_vulnerability_records,
    parse_commit_log,
)
from ownerscope.metrics import (
    Calendar,
    Study,
    assemble_rows,
    load_sizes_csv,
    read_metric_csv,
    repository_row,
    write_metric_csv,
)
from ownerscope.stats import METHODS, correlation_matrix

log = logging.getLogger("ownerscope")

CONTEXT = {"show_default": True, "help_option_names": ["-h", "--help"]}


def opt(*decls, **kwargs):
    """click.option with an OWNERSCOPE_* environment mirror."""
    long = next(d for d in decls if d.startswith("--"))
    kwargs.setdefault("envvar", "OWNERSCOPE_" + long[2:].upper().replace("-", "_"))
    kwargs.setdefault("show_envvar", True)
    return click.option(*decls, **kwargs)


def existing(**kw):
    return click.Path(exists=True, dir_okay=False, path_type=Path, **kw)


def output_opt(default="-"):
    return opt("-o", "--output", default=default, help="Output path, '-' for standard output.")


def _write(target: str, text: str) -> None:
    if target == "-":
        click.get_text_stream("stdout").write(text)
    else:
        Path(target).write_text(text, encoding="utf-8")


class Cli(click.Group):
    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except OwnerscopeError as exc:
            _fail(ctx, exc.as_dict(), exc.exit_code)
        except (OSError, UnicodeDecodeError) as exc:
            _fail(ctx, {"error": type(exc).__name__, "message": str(exc)}, 2)


def _fail(ctx, payload: dict, code: int) -> None:
    root = ctx.find_root()
    if (root.obj or {}).get("json_errors"):
        click.echo(json.dumps(payload, sort_keys=True), err=True)
    else:
        click.echo(f"error: {payload['message']}", err=True)
    ctx.exit(code)


@click.group(cls=Cli, context_settings=CONTEXT)
@opt("--json-errors", is_flag=True, help="Report errors as JSON on standard error.")
@opt("-v", "--verbose", count=True, help="Log more (repeatable).")
@click.pass_context
def main(ctx, json_errors, verbose):
    """Code-ownership, classic and time/release metrics for file-level
    components, joined with vulnerability records, plus the correlation,
    regression and distortion analyses built on them."""
    ctx.obj = {"json_errors": json_errors}
    level = logging.WARNING if verbose == 0 else logging.INFO if verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)


# -- ingest ------------------------------------------------------------------

@main.group(cls=Cli, context_settings=CONTEXT)
def ingest():
    """Convert raw inputs into the canonical JSON Lines / CSV formats."""


@ingest.command("history", context_settings=CONTEXT)
@opt("--log", "log_file", required=True, type=existing(), help="Output of: git log --numstat --date=unix --no-renames --pretty=format:'@@@%H|%ae|%ad|%P'")
@output_opt()
def ingest_history(log_file, output):
    """Parse a numstat commit log into commits.jsonl (one commit per line)."""
    commits = parse_commit_log(log_file.read_bytes())
    buf = io.StringIO()
    dump_commits_jsonl(commits, buf)
    _write(output, buf.getvalue())
    log.info("wrote %d commits", len(commits))


@ingest.command("releases", context_settings=CONTEXT)
@opt("--file", "csv_file", required=True, type=existing(), help="CSV with header 'name,timestamp' (RFC3339).")
@output_opt()
def ingest_releases(csv_file, output):
    """Validate a release list and write it sorted by time."""
    buf = io.StringIO()
    dump_releases_csv(load_release_list(csv_file), buf)
    _write(output, buf.getvalue())


@ingest.command("vulns", context_settings=CONTEXT)
@opt("--file", "jsonl_file", type=existing(), help="Vulnerability records as JSON Lines.")
@opt("--fetch", is_flag=True, help="Download advisories instead of reading --file.")
@opt("--project", help="Project slug passed to the advisory endpoint.")
@opt("--endpoint", help="Advisory endpoint URL (HTTP+JSON).")
@opt("--token", help="Bearer token for the endpoint.", show_default=False)
@opt("--max-retries", default=4, type=click.IntRange(min=0), help="Retries on rate limits and transient failures.")
@opt("--backoff", default=1.0, type=click.FloatRange(min=0), help="Base seconds for exponential backoff.")
@output_opt()
def ingest_vulns(jsonl_file, fetch, project, endpoint, token, max_retries, backoff, output):
    """Validate vulnerability records, or fetch them with --fetch."""
    if fetch:
        if jsonl_file or not project or not endpoint:
            raise click.UsageError("--fetch needs --project and --endpoint and excludes --file")
        from ownerscope.fetch import fetch_advisories

        records = fetch_advisories(project, endpoint, token, max_retries=max_retries, backoff=backoff)
    else:
        if jsonl_file is None:
            raise click.UsageError("give --file or --fetch")
        records = load_vulnerability_records(jsonl_file)
    buf = io.StringIO()
    dump_vulnerabilities_jsonl(records, buf)
    _write(output, buf.getvalue())
    log.info("wrote %d vulnerability records", len(records))


# -- metrics -----------------------------------------------------------------

def calendar_opts(fn):
    fn = opt("--year-days", default=365, type=click.IntRange(min=1), help="Days per year for stage boundaries.")(fn)
    fn = opt("--month-days", default=30, type=click.IntRange(min=1), help="Days per month for stage boundaries.")(fn)
    return fn


def _load_commits(path: Path):
    data = path.read_bytes()
    if data.lstrip().startswith(SENTINEL.encode()):
        return parse_commit_log(data)
    return load_commits_jsonl(path)


def _load_study(commits, releases, vulns, sizes) -> Study:
    return Study(
        commits=_load_commits(commits),
        releases=load_release_list(releases),
        vulns=load_vulnerability_records(vulns),
        sizes=load_sizes_csv(sizes) if sizes else None,
    )


@main.command("metrics", context_settings=CONTEXT)
@opt("--commits", required=True, type=existing(), help="commits.jsonl (or a raw numstat log).")
@opt("--releases", required=True, type=existing(), help="releases.csv")
@opt("--vulns", required=True, type=existing(), help="vulns.jsonl")
@opt("--threshold", default=0.10, type=click.FloatRange(0, 1, min_open=True, max_open=True), help="Minor-contributor threshold.")
@opt("--sizes", type=existing(), help="Exact line counts, CSV 'path,lines'; replaces numstat size estimates.")
@opt("--aggregate", type=click.Choice(["file", "repo"]), default="file", help="Per-file rows, or one repository-wide snapshot row.")
@opt("--jobs", default=1, type=click.IntRange(min=1), help="Worker threads; output is identical for any value.")
@calendar_opts
@output_opt()
def metrics_cmd(commits, releases, vulns, threshold, sizes, aggregate, jobs, month_days, year_days, output):
    """Compute one metric row per (file, advisory) plus snapshot rows."""
    study = _load_study(commits, releases, vulns, sizes)
    calendar = Calendar(month_days, year_days)
    buf = io.StringIO()
    if aggregate == "repo":
        write_metric_csv([repository_row(study, threshold, calendar)], buf)
    else:
        rows = assemble_rows(study, threshold, calendar, jobs=jobs)
        write_metric_csv(rows.vulnerable + rows.pool, buf)
        click.echo(
            f"{len(rows.vulnerable)} vulnerable rows, {len(rows.pool)} snapshot rows, "
            f"{len(rows.exclusions)} excluded",
            err=True,
        )
        for ex in rows.exclusions:
            click.echo(f"  excluded {ex.vulnerability} {ex.component}: {ex.reason}", err=True)
    _write(output, buf.getvalue())


# -- analyze -----------------------------------------------------------------

@main.group(cls=Cli, context_settings=CONTEXT)
def analyze():
    """Correlation, regression and distortion-check reports."""


def _emit(output: str, text_path: str | None, payload: dict, text: str) -> None:
    _write(output, reports.dumps(payload))
    if text_path:
        _write(text_path, text)
    elif output != "-":
        click.echo(text, nl=False)


def dataset_opts(fn):
    fn = opt("--inverse-ratio", is_flag=True, help="Read --ratio as non-vulnerable rows per vulnerable row.")(fn)
    fn = opt("--ratio", default=1.0, type=click.FloatRange(0, 1, min_open=True), help="Vulnerable : non-vulnerable mix (1.0 = balanced).")(fn)
    fn = opt("--seed", default=42, type=int, help="Seed for every random draw.")(fn)
    return fn


def _balanced(rows, ratio, seed, inverse):
    vuln = [r for r in rows if r.is_defective == 1]
    pool = [r for r in rows if r.is_defective == 0]
    return analysis.build_dataset(vuln, pool, analysis.DatasetSpec(ratio=ratio, seed=seed, inverse=inverse))


def _methods(value: str) -> tuple[str, ...]:
    methods = tuple(m.strip() for m in value.split(",") if m.strip())
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise click.BadParameter(f"choose from {', '.join(METHODS)}", param_hint="--methods")
    return methods


@analyze.command("correlate", context_settings=CONTEXT)
@opt("--metrics", required=True, type=existing(), help="metrics.csv")
@opt("--target", required=True, type=click.Choice(["is-defective", "time-stage", "severity"]), help="What the metrics are correlated against.")
@opt("--methods", default=",".join(METHODS), help="Comma-separated subset of pearson,spearman,kendall.")
@dataset_opts
@opt("--text", "text_path", help="Also write the aligned-text table here.")
@output_opt()
def correlate_cmd(metrics, target, methods, seed, ratio, inverse_ratio, text_path, output):
    """Correlate every metric with vulnerability presence, time stage or severity.

    is-defective uses a seeded vulnerable/snapshot mix at --ratio; the other
    targets use vulnerable rows only."""
    rows = read_metric_csv(metrics)
    methods = _methods(methods)
    if target == "is-defective":
        report = analysis.direct_correlation_report(_balanced(rows, ratio, seed, inverse_ratio), methods)
    elif target == "time-stage":
        report = analysis.staged_correlation_report(rows, methods)
    else:
        report = analysis.severity_correlation_report(rows, methods)
    payload = {"seed": seed, "ratio": ratio, **report.to_dict()}
    _emit(output, text_path, payload, reports.correlation_text(report))


@analyze.command("regress", context_settings=CONTEXT)
@opt("--metrics", required=True, type=existing(), help="metrics.csv")
@dataset_opts
@opt("--text", "text_path", help="Also write the aligned-text table here.")
@output_opt()
def regress_cmd(metrics, seed, ratio, inverse_ratio, text_path, output):
    """Fit the robustness-check regression models."""
    rows = read_metric_csv(metrics)
    fits = analysis.regression_suite(_balanced(rows, ratio, seed, inverse_ratio))
    payload = {"seed": seed, "ratio": ratio, "models": [f.to_dict() for f in fits]}
    _emit(output, text_path, payload, reports.regression_text(fits))


@analyze.command("heatmap", context_settings=CONTEXT)
@opt("--metrics", required=True, type=existing(), help="metrics.csv")
@opt("--method", default="pearson", type=click.Choice(METHODS), help="Correlation method.")
@opt("--rows", "row_set", default="balanced", type=click.Choice(["balanced", "vulnerable", "all"]), help="Which rows enter the matrix.")
@dataset_opts
@output_opt()
def heatmap_cmd(metrics, method, row_set, seed, ratio, inverse_ratio, output):
    """Write the metric correlation matrix as CSV for plotting."""
    rows = read_metric_csv(metrics)
    if row_set == "balanced":
        rows = _balanced(rows, ratio, seed, inverse_ratio)
    elif row_set == "vulnerable":
        rows = [r for r in rows if r.is_defective == 1]
    _write(output, correlation_matrix(rows, analysis.CORE_METRICS, method).to_csv())


@analyze.command("sweep", context_settings=CONTEXT)
@opt("--axis", required=True, type=click.Choice(["ratio", "threshold", "locality"]), help="Distortion factor to vary.")
@opt("--metrics", type=existing(), help="metrics.csv (ratio axis).")
@opt("--commits", type=existing(), help="commits.jsonl (threshold and locality axes).")
@opt("--releases", type=existing(), help="releases.csv (threshold and locality axes).")
@opt("--vulns", type=existing(), help="vulns.jsonl (threshold and locality axes).")
@opt("--sizes", type=existing(), help="Exact line counts, CSV 'path,lines'.")
@dataset_opts
@opt("--threshold", default=0.10, type=click.FloatRange(0, 1, min_open=True, max_open=True), help="Minor threshold (ratio/locality axes); reference point of the threshold axis.")
@opt("--method", default="pearson", type=click.Choice(METHODS), help="Correlation method for the heatmaps.")
@opt("--lambda", "lam", default=1.0, type=click.FloatRange(0, min_open=True), help="Exponential-decay rate.")
@opt("--permutations", default=999, type=click.IntRange(min=1), help="Mantel permutations.")
@opt("--pairs", default="all", type=click.Choice(["all", "consecutive"]), help="Which setting pairs enter the summary averages.")
@opt("--matrices-dir", type=click.Path(file_okay=False, path_type=Path), help="Also write each point's matrix as CSV here.")
@opt("--jobs", default=1, type=click.IntRange(min=1), help="Worker threads; output is identical for any value.")
@calendar_opts
@opt("--text", "text_path", help="Also write the aligned-text table here.")
@output_opt()
def sweep_cmd(axis, metrics, commits, releases, vulns, sizes, seed, ratio, inverse_ratio, threshold, method, lam,
              permutations, pairs, matrices_dir, jobs, month_days, year_days, text_path, output):
    """Compare metric heatmaps across a distortion factor."""
    calendar = Calendar(month_days, year_days)
    if axis == "ratio":
        if metrics is None:
            raise click.UsageError("--axis ratio needs --metrics")
        rows = read_metric_csv(metrics)
        report = analysis.ratio_sweep(
            [r for r in rows if r.is_defective == 1],
            [r for r in rows if r.is_defective == 0],
            seed=seed, method=method, lam=lam, permutations=permutations,
            average=pairs, inverse=inverse_ratio, jobs=jobs,
        )
    else:
        if not (commits and releases and vulns):
            raise click.UsageError(f"--axis {axis} needs --commits, --releases and --vulns")
        study = _load_study(commits, releases, vulns, sizes)
        if axis == "threshold":
            report = analysis.threshold_sweep(
                study, seed=seed, reference=threshold, ratio=ratio, method=method, lam=lam,
                permutations=permutations, average=pairs, calendar=calendar, jobs=jobs,
            )
        else:
            report = analysis.locality_sweep(
                study, seed=seed, threshold=threshold, method=method, lam=lam,
                permutations=permutations, calendar=calendar,
            )
    if matrices_dir is not None:
        matrices_dir.mkdir(parents=True, exist_ok=True)
        for setting, matrix in report.points:
            (matrices_dir / f"{axis}_{setting}.csv").write_text(matrix.to_csv(), encoding="utf-8")
    payload = {"seed": seed, **report.to_dict()}
    _emit(output, text_path, payload, reports.sweep_text(report))


if __name__ == "__main__":
    main()
