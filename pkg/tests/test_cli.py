from __future__ import annotations

import json
import socket

import pytest
from click.testing import CliRunner

from ownerscope.cli import main
from ownerscope.metrics import read_metric_csv

SUBCOMMANDS = [
    ["ingest", "history"],
    ["ingest", "releases"],
    ["ingest", "vulns"],
    ["metrics"],
    ["analyze", "correlate"],
    ["analyze", "regress"],
    ["analyze", "heatmap"],
    ["analyze", "sweep"],
]


def run(*args, env=None):
    return CliRunner().invoke(main, [str(a) for a in args], env=env, catch_exceptions=False)


@pytest.fixture(scope="module")
def built(tmp_path_factory, corpus_dir):
    out = tmp_path_factory.mktemp("cli")
    assert run("ingest", "history", "--log", corpus_dir / "history.log", "-o", out / "commits.jsonl").exit_code == 0
    assert run("ingest", "releases", "--file", corpus_dir / "releases.csv", "-o", out / "releases.csv").exit_code == 0
    assert run("ingest", "vulns", "--file", corpus_dir / "vulns.jsonl", "-o", out / "vulns.jsonl").exit_code == 0
    res = run("metrics", "--commits", out / "commits.jsonl", "--releases", out / "releases.csv",
              "--vulns", out / "vulns.jsonl", "-o", out / "metrics.csv")
    assert res.exit_code == 0, res.output
    return out


def inputs(d):
    return ["--commits", d / "commits.jsonl", "--releases", d / "releases.csv", "--vulns", d / "vulns.jsonl"]


@pytest.mark.parametrize("cmd", SUBCOMMANDS, ids=" ".join)
def test_help_lists_flags_and_env(cmd):
    res = run(*cmd, "--help")
    assert res.exit_code == 0
    assert "--output" in res.output
    assert "OWNERSCOPE_OUTPUT" in res.output


def test_malformed_log_exit_2(tmp_path):
    log = tmp_path / "bad.log"
    log.write_text("@@@" + "a" * 40 + "|x@y|1600000000|\n1\t2\tok.py\nnot numstat\n")
    res = run("ingest", "history", "--log", log)
    assert res.exit_code == 2
    assert "line 3" in res.stderr


def test_json_errors(tmp_path):
    log = tmp_path / "bad.log"
    log.write_text("garbage\n")
    res = run("--json-errors", "ingest", "history", "--log", log)
    assert res.exit_code == 2
    payload = json.loads(res.stderr)
    assert payload["error"] and "line 1" in payload["message"]


def test_missing_file_is_usage_error(tmp_path):
    assert run("ingest", "releases", "--file", tmp_path / "nope.csv").exit_code == 2


def test_unreachable_fetch_exit_3():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    res = run("ingest", "vulns", "--fetch", "--project", "p", "--endpoint", f"http://127.0.0.1:{port}/adv",
              "--max-retries", 0)
    assert res.exit_code == 3


def test_fetch_flag_combination_checked():
    assert run("ingest", "vulns", "--fetch", "--project", "p").exit_code == 2
    assert run("ingest", "vulns").exit_code == 2


def test_degenerate_analyses_exit_4(built, tmp_path):
    rows = (built / "metrics.csv").read_text().splitlines()
    header, body = rows[0], rows[1:]
    col = header.split(",").index("is_defective")
    clean = [r for r in body if r.split(",")[col] == "0"]
    only_clean = tmp_path / "clean.csv"
    only_clean.write_text("\n".join([header] + clean) + "\n")
    for target in ("is-defective", "time-stage", "severity"):
        res = run("analyze", "correlate", "--metrics", only_clean, "--target", target)
        assert res.exit_code == 4, (target, res.output)


def test_env_var_mirrors_flag(built):
    args = ["analyze", "correlate", "--metrics", built / "metrics.csv", "--target", "is-defective"]
    by_flag = run(*args, "--seed", 7)
    by_env = run(*args, env={"OWNERSCOPE_SEED": "7"})
    default = run(*args)
    assert by_flag.stdout == by_env.stdout != default.stdout
    assert json.loads(by_env.stdout)["seed"] == 7
    # the flag wins over the environment
    assert run(*args, "--seed", 42, env={"OWNERSCOPE_SEED": "7"}).stdout == default.stdout


def test_threshold_flag_changes_minor_counts(built, tmp_path):
    run("metrics", *inputs(built), "--threshold", 0.5, "-o", tmp_path / "m50.csv")
    low = read_metric_csv(built / "metrics.csv")
    high = read_metric_csv(tmp_path / "m50.csv")
    assert [r.component for r in low] == [r.component for r in high]
    assert sum(r.n_minor for r in high) > sum(r.n_minor for r in low)
    assert all(h.n_minor >= lo.n_minor for h, lo in zip(high, low))


def test_exclusions_reported_on_stderr(built, tmp_path):
    vulns = tmp_path / "v.jsonl"
    extra = {"id": "CVE-X", "severity": 1.0, "published": "2020-01-01T00:00:00Z",
             "commits": ["0" * 40], "files": ["never/touched.py"]}
    vulns.write_text((built / "vulns.jsonl").read_text() + json.dumps(extra) + "\n")
    args = ["--commits", built / "commits.jsonl", "--releases", built / "releases.csv", "--vulns", vulns]
    res = run("metrics", *args, "-o", tmp_path / "m.csv")
    assert res.exit_code == 0
    assert "1 excluded" in res.stderr and "never/touched.py" in res.stderr


def test_raw_log_accepted_by_metrics(built, corpus_dir, tmp_path):
    args = ["--releases", built / "releases.csv", "--vulns", built / "vulns.jsonl", "-o", tmp_path / "m.csv"]
    assert run("metrics", "--commits", corpus_dir / "history.log", *args).exit_code == 0
    assert (tmp_path / "m.csv").read_bytes() == (built / "metrics.csv").read_bytes()


def test_jobs_do_not_change_output(built, tmp_path):
    run("metrics", *inputs(built), "--jobs", 4, "-o", tmp_path / "m4.csv")
    assert (tmp_path / "m4.csv").read_bytes() == (built / "metrics.csv").read_bytes()


def test_repository_aggregate(built):
    res = run("metrics", *inputs(built), "--aggregate", "repo")
    lines = res.stdout.strip().splitlines()
    assert res.exit_code == 0 and len(lines) == 2
    assert lines[1].startswith("*,")


def test_threshold_sweep_shape_and_matrices(built, tmp_path):
    res = run("analyze", "sweep", "--axis", "threshold", *inputs(built), "--permutations", 19,
              "--matrices-dir", tmp_path / "mats", "-o", tmp_path / "s.json")
    assert res.exit_code == 0, res.output
    report = json.loads((tmp_path / "s.json").read_text())
    assert len(report["points"]) == 4 and len(report["pairwise"]) == 6
    assert sorted(p.name for p in (tmp_path / "mats").iterdir()) == [
        f"threshold_{t}.csv" for t in ("0.05", "0.1", "0.2", "0.5")
    ]
    # text table goes to stdout when JSON goes to a file
    assert "frobenius" in res.stdout.lower()


def test_sweep_requires_its_inputs(built):
    assert run("analyze", "sweep", "--axis", "ratio").exit_code == 2
    assert run("analyze", "sweep", "--axis", "locality", "--metrics", built / "metrics.csv").exit_code == 2


def test_heatmap_csv(built):
    res = run("analyze", "heatmap", "--metrics", built / "metrics.csv", "--rows", "vulnerable")
    lines = res.stdout.strip().splitlines()
    assert res.exit_code == 0 and len(lines) == 11


def test_bad_methods_rejected(built):
    res = run("analyze", "correlate", "--metrics", built / "metrics.csv", "--target", "severity", "--methods", "pearson,tau")
    assert res.exit_code == 2


def test_text_output_path(built, tmp_path):
    res = run("analyze", "regress", "--metrics", built / "metrics.csv", "--text", tmp_path / "r.txt")
    assert res.exit_code == 0
    json.loads(res.stdout)
    assert "days_difference" in (tmp_path / "r.txt").read_text()
