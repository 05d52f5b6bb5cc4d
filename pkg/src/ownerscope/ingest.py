"""Parsers for commit logs, release lists and vulnerability records.

The commit log must be produced by::

    git log --numstat --date=unix --no-renames \\
        --pretty=format:"@@@%H|%ae|%ad|%P"

Each record is a ``@@@`` header line followed by zero or more numstat lines
(``<added>\\t<deleted>\\t<path>``, ``-\\t-\\t<path>`` for binaries). Records are
separated by blank lines, which git omits after commits without numstat.
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import IO, Iterable

from ownerscope.errors import (
    DuplicateName,
    EmptyInput,
    MalformedRecord,
    SchemaViolation,
    SeverityOutOfRange,
)

SENTINEL = "@@@"
LOG_FORMAT = '@@@%H|%ae|%ad|%P'
GIT_LOG_ARGS = ("log", "--numstat", "--date=unix", "--no-renames", f"--pretty=format:{LOG_FORMAT}")

_HASH = re.compile(r"[0-9a-f]{40}")
_NUMSTAT = re.compile(r"(\d+|-)\t(\d+|-)\t(.+)")
_C_ESCAPES = {"a": 7, "b": 8, "t": 9, "n": 10, "v": 11, "f": 12, "r": 13, '"': 34, "\\": 92}


@dataclass(frozen=True)
class FileChange:
    """Line deltas for one path in one commit; ``None`` deltas mark binary files."""

    path: str
    added: int | None
    deleted: int | None

    def __post_init__(self) -> None:
        if (self.added is None) != (self.deleted is None):
            raise ValueError("added/deleted must both be known or both unknown")
        if self.added is not None and (self.added < 0 or self.deleted < 0):
            raise ValueError("line deltas must be non-negative")

    @property
    def is_binary(self) -> bool:
        return self.added is None

    @property
    def churn(self) -> int:
        return 0 if self.added is None else self.added + self.deleted


@dataclass(frozen=True)
class CommitRecord:
    hash: str
    author: str
    timestamp: int
    parent_count: int
    changes: tuple[FileChange, ...] = ()

    @property
    def is_merge(self) -> bool:
        return self.parent_count >= 2

    def to_json(self) -> dict:
        return {
            "hash": self.hash,
            "author": self.author,
            "timestamp": self.timestamp,
            "parent_count": self.parent_count,
            "changes": [{"path": c.path, "added": c.added, "deleted": c.deleted} for c in self.changes],
        }

    @classmethod
    def from_json(cls, obj: dict) -> CommitRecord:
        return cls(
            hash=obj["hash"],
            author=obj["author"],
            timestamp=obj["timestamp"],
            parent_count=obj["parent_count"],
            changes=tuple(FileChange(c["path"], c["added"], c["deleted"]) for c in obj["changes"]),
        )


@dataclass(frozen=True)
class ReleaseRecord:
    name: str
    timestamp: int


@dataclass(frozen=True)
class VulnerabilityRecord:
    id: str
    severity: float | None
    published: int
    commits: tuple[str, ...]
    files: tuple[str, ...]
    group_key: str = field(default="")

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "severity": self.severity,
            "published": format_rfc3339(self.published),
            "commits": list(self.commits),
            "files": list(self.files),
            "group_key": self.group_key,
        }


# -- time helpers ------------------------------------------------------------

def parse_rfc3339(value: str) -> int:
    """Convert an RFC3339 timestamp to UTC unix seconds. An offset is required."""
    if not isinstance(value, str):
        raise ValueError(f"expected RFC3339 string, got {type(value).__name__}")
    text = value.strip()
    if text[-1:] in ("Z", "z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        raise ValueError(f"timestamp {value!r} has no UTC offset")
    return math.floor(dt.timestamp())


def format_rfc3339(ts: int) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


# -- commit log --------------------------------------------------------------

def _unquote_path(raw: str, lineno: int) -> str:
    """Undo git's C-style quoting of unusual path names."""
    if not (len(raw) >= 2 and raw.startswith('"') and raw.endswith('"')):
        return raw
    body = raw[1:-1]
    out = bytearray()
    i = 0
    while i < len(body):
        ch = body[i]
        if ch != "\\":
            out += ch.encode("utf-8")
            i += 1
            continue
        nxt = body[i + 1 : i + 2]
        if nxt in _C_ESCAPES:
            out.append(_C_ESCAPES[nxt])
            i += 2
        elif re.fullmatch(r"[0-7]{3}", body[i + 1 : i + 4]):
            out.append(int(body[i + 1 : i + 4], 8))
            i += 4
        else:
            raise MalformedRecord(f"bad escape in quoted path {raw!r}", line=lineno)
    try:
        return out.decode("utf-8")
    except UnicodeDecodeError:
        raise MalformedRecord(f"quoted path {raw!r} is not UTF-8", line=lineno) from None


def _check_path(path: str, lineno: int) -> str:
    if not path or path.startswith("/") or "\\" in path or path.startswith("./"):
        raise MalformedRecord(f"path {path!r} is not a repository-relative '/' path", line=lineno)
    return path


def _parse_header(line: str, lineno: int) -> tuple[str, str, int, int]:
    fields = line[len(SENTINEL):].split("|")
    if len(fields) < 4:
        raise MalformedRecord("header needs 4 '|'-separated fields", line=lineno)
    sha, parents, date = fields[0], fields[-1], fields[-2]
    email = "|".join(fields[1:-2])
    if not _HASH.fullmatch(sha):
        raise MalformedRecord(f"commit hash {sha!r} is not 40 lowercase hex chars", line=lineno)
    if not email.strip():
        raise MalformedRecord("empty author email", line=lineno)
    if not re.fullmatch(r"\d+", date) or int(date) <= 0:
        raise MalformedRecord(f"timestamp {date!r} is not positive unix seconds", line=lineno)
    parent_list = parents.split()
    for p in parent_list:
        if not _HASH.fullmatch(p):
            raise MalformedRecord(f"parent hash {p!r} is not 40 lowercase hex chars", line=lineno)
    return sha, email.strip().lower(), int(date), len(parent_list)


def parse_commit_log(data: bytes | str) -> list[CommitRecord]:
    """Parse numstat log output into commits ordered oldest-first.

    Ties on timestamp keep input order. Merge commits are retained; callers
    filter them with ``CommitRecord.is_merge``.
    """
    if isinstance(data, str):
        data = data.encode("utf-8")
    if not data.strip():
        raise EmptyInput("commit log is empty")

    records: list[CommitRecord] = []
    header: tuple[str, str, int, int] | None = None
    changes: list[FileChange] = []

    def flush() -> None:
        if header is not None:
            sha, author, ts, parents = header
            records.append(CommitRecord(sha, author, ts, parents, tuple(changes)))

    for lineno, raw in enumerate(data.split(b"\n"), start=1):
        try:
            line = raw.decode("utf-8")
        except UnicodeDecodeError:
            raise MalformedRecord("line is not valid UTF-8", line=lineno) from None
        if line == "":
            continue
        if line.startswith(SENTINEL):
            flush()
            header = _parse_header(line, lineno)
            changes = []
            continue
        if header is None:
            raise MalformedRecord("content before first '@@@' header", line=lineno)
        m = _NUMSTAT.fullmatch(line)
        if m is None:
            raise MalformedRecord(f"not a numstat line: {line!r}", line=lineno)
        added, deleted, path = m.groups()
        if (added == "-") != (deleted == "-"):
            raise MalformedRecord("binary marker '-' must appear in both columns", line=lineno)
        path = _check_path(_unquote_path(path, lineno), lineno)
        if added == "-":
            changes.append(FileChange(path, None, None))
        else:
            changes.append(FileChange(path, int(added), int(deleted)))
    flush()

    return sorted(records, key=lambda c: c.timestamp)


def dump_commits_jsonl(commits: Iterable[CommitRecord], fh: IO[str]) -> None:
    for c in commits:
        fh.write(json.dumps(c.to_json(), separators=(",", ":")) + "\n")


def load_commits_jsonl(path: str | Path) -> list[CommitRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(CommitRecord.from_json(json.loads(line)))
            except (KeyError, TypeError, ValueError) as exc:
                raise SchemaViolation(f"bad commit record: {exc}", line=lineno) from None
    return out


# -- vulnerabilities ---------------------------------------------------------

def _require(obj: dict, key: str, types: type | tuple, lineno: int, nullable: bool = False):
    if key not in obj:
        raise SchemaViolation(f"missing key {key!r}", line=lineno)
    value = obj[key]
    if value is None and nullable:
        return None
    if isinstance(value, bool) or not isinstance(value, types):
        raise SchemaViolation(f"key {key!r} has wrong type {type(value).__name__}", line=lineno)
    return value


def vulnerability_from_json(obj: dict, lineno: int | None = None) -> VulnerabilityRecord:
    if not isinstance(obj, dict):
        raise SchemaViolation("record is not a JSON object", line=lineno)
    vid = _require(obj, "id", str, lineno)
    if not vid.strip():
        raise SchemaViolation("empty id", line=lineno)
    severity = _require(obj, "severity", (int, float), lineno, nullable=True)
    if severity is not None:
        severity = float(severity)
        if not (0.0 <= severity <= 10.0):
            raise SeverityOutOfRange(f"severity {severity} outside [0, 10]", line=lineno)
    try:
        published = parse_rfc3339(_require(obj, "published", str, lineno))
    except ValueError as exc:
        raise SchemaViolation(f"bad 'published': {exc}", line=lineno) from None
    commits = _require(obj, "commits", list, lineno)
    for sha in commits:
        if not isinstance(sha, str) or not _HASH.fullmatch(sha):
            raise SchemaViolation(f"commit {sha!r} is not a 40-hex hash", line=lineno)
    files = _require(obj, "files", list, lineno)
    if not files:
        raise SchemaViolation("'files' is empty", line=lineno)
    for f in files:
        if not isinstance(f, str) or not f or f.startswith("/") or "\\" in f:
            raise SchemaViolation(f"file {f!r} is not a repository-relative path", line=lineno)
    group_key = obj.get("group_key")
    if group_key is None:
        group_key = commits[0] if commits else vid
    elif not isinstance(group_key, str) or not group_key:
        raise SchemaViolation("'group_key' must be a non-empty string", line=lineno)
    return VulnerabilityRecord(vid, severity, published, tuple(commits), tuple(files), group_key)


def parse_vulnerability_jsonl(text: str) -> list[VulnerabilityRecord]:
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"invalid JSON: {exc.msg}", line=lineno) from None
        out.append(vulnerability_from_json(obj, lineno))
    return out


def load_vulnerability_records(path: str | Path) -> list[VulnerabilityRecord]:
    return parse_vulnerability_jsonl(Path(path).read_text(encoding="utf-8"))


def dump_vulnerabilities_jsonl(records: Iterable[VulnerabilityRecord], fh: IO[str]) -> None:
    for r in records:
        fh.write(json.dumps(r.to_json(), separators=(",", ":")) + "\n")


# -- releases ----------------------------------------------------------------

def parse_release_csv(text: str) -> list[ReleaseRecord]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["name", "timestamp"]:
        raise SchemaViolation("release CSV header must be 'name,timestamp'", line=1)
    seen: set[str] = set()
    releases = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 2 or not row[0].strip():
            raise SchemaViolation("expected 'name,timestamp'", line=lineno)
        name = row[0].strip()
        if name in seen:
            raise DuplicateName(f"release {name!r} listed twice", line=lineno)
        seen.add(name)
        try:
            ts = parse_rfc3339(row[1])
        except (ValueError, IndexError) as exc:
            raise SchemaViolation(f"bad timestamp: {exc}", line=lineno) from None
        releases.append(ReleaseRecord(name, ts))
    releases.sort(key=lambda r: r.timestamp)
    for prev, cur in zip(releases, releases[1:]):
        if cur.timestamp == prev.timestamp:
            raise SchemaViolation(f"releases {prev.name!r} and {cur.name!r} share a timestamp")
    return releases


def load_release_list(path: str | Path) -> list[ReleaseRecord]:
    return parse_release_csv(Path(path).read_text(encoding="utf-8"))


def dump_releases_csv(releases: Iterable[ReleaseRecord], fh: IO[str]) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["name", "timestamp"])
    for r in releases:
        writer.writerow([r.name, format_rfc3339(r.timestamp)])
