"""Minimal advisory fetcher.

Talks to an HTTP+JSON endpoint that returns advisories for a project, either
as a bare JSON array or as ``{"advisories": [...]}``. Pagination follows
``Link: <...>; rel="next"`` headers. Each advisory may use the canonical
record keys (``id``, ``severity``, ``published``, ``commits``, ``files``,
``group_key``) or the GitHub-flavoured aliases handled in ``normalize``.
"""

from __future__ import annotations

import logging
import time
from pathlib import Path
from typing import Callable

import requests

from ownerscope.errors import AuthError, NetworkError, RateLimited, SchemaViolation
from ownerscope.ingest import VulnerabilityRecord, dump_vulnerabilities_jsonl, vulnerability_from_json

log = logging.getLogger(__name__)

RETRY_STATUSES = {429, 502, 503, 504}


def _first(obj: dict, *keys):
    for key in keys:
        if obj.get(key) is not None:
            return obj[key]
    return None


def normalize(raw: dict) -> dict:
    """Map one advisory payload onto the canonical record keys."""
    severity = _first(raw, "severity", "cvss_score")
    if severity is None and isinstance(raw.get("cvss"), dict):
        severity = raw["cvss"].get("score")
    if isinstance(severity, str):
        # GitHub reports a label ("high") when no CVSS score exists
        severity = None

    commits = []
    for c in raw.get("commits") or []:
        commits.append(c.get("sha") if isinstance(c, dict) else c)
    files = []
    for f in raw.get("files") or []:
        files.append(_first(f, "filename", "path") if isinstance(f, dict) else f)

    group = _first(raw, "group_key", "pull_request")
    return {
        "id": _first(raw, "id", "cve_id", "ghsa_id"),
        "severity": severity,
        "published": _first(raw, "published", "published_at"),
        "commits": commits,
        "files": files,
        "group_key": None if group is None else str(group),
    }


def _get(session: requests.Session, url: str, params: dict | None, headers: dict,
         max_retries: int, backoff: float, timeout: float,
         sleep: Callable[[float], None]) -> requests.Response:
    for attempt in range(max_retries + 1):
        last = attempt == max_retries
        try:
            resp = session.get(url, params=params, headers=headers, timeout=timeout)
        except requests.RequestException as exc:
            if last:
                raise NetworkError(f"GET {url} failed: {exc}") from None
            sleep(backoff * 2 ** attempt)
            continue

        limited = resp.status_code in RETRY_STATUSES or (
            resp.status_code == 403 and resp.headers.get("X-RateLimit-Remaining") == "0"
        )
        if limited:
            if last:
                if resp.status_code in (403, 429):
                    raise RateLimited(f"GET {url}: rate limited after {max_retries} retries")
                raise NetworkError(f"GET {url}: HTTP {resp.status_code} after {max_retries} retries")
            wait = backoff * 2 ** attempt
            retry_after = resp.headers.get("Retry-After", "")
            if retry_after.strip().isdigit():
                wait = max(wait, float(retry_after))
            log.warning("HTTP %s from %s, retrying in %.1fs", resp.status_code, url, wait)
            sleep(wait)
            continue
        if resp.status_code in (401, 403):
            raise AuthError(f"GET {url}: HTTP {resp.status_code} (check the token)")
        if resp.status_code != 200:
            raise NetworkError(f"GET {url}: HTTP {resp.status_code}")
        return resp
    raise AssertionError("unreachable")


def fetch_advisories(
    project: str,
    endpoint: str,
    token: str | None = None,
    *,
    out: str | Path | None = None,
    max_retries: int = 4,
    backoff: float = 1.0,
    timeout: float = 30.0,
    session: requests.Session | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> list[VulnerabilityRecord]:
    """Download advisories for ``project`` and normalize them.

    Advisories without a file list cannot be mapped to components and are
    dropped with a warning, as are records that fail validation. When ``out``
    is given the accepted records are also written there as JSON Lines.
    """
    headers = {"Accept": "application/json"}
    if token:
        headers["Authorization"] = f"Bearer {token}"
    session = session or requests.Session()

    records: list[VulnerabilityRecord] = []
    url: str | None = endpoint
    params: dict | None = {"project": project, "per_page": 100}
    while url:
        resp = _get(session, url, params, headers, max_retries, backoff, timeout, sleep)
        try:
            payload = resp.json()
        except ValueError:
            raise NetworkError(f"GET {url}: response is not JSON") from None
        items = payload.get("advisories", []) if isinstance(payload, dict) else payload
        if not isinstance(items, list):
            raise NetworkError(f"GET {url}: unexpected payload shape")
        for raw in items:
            if not isinstance(raw, dict):
                log.warning("skipping non-object advisory entry")
                continue
            norm = normalize(raw)
            if not norm["files"]:
                log.warning("dropping advisory %s: no affected files", norm["id"])
                continue
            try:
                records.append(vulnerability_from_json(norm))
            except SchemaViolation as exc:
                log.warning("dropping advisory %s: %s", norm["id"], exc)
        url = resp.links.get("next", {}).get("url")
        params = None

    if out is not None:
        with open(out, "w", encoding="utf-8") as fh:
            dump_vulnerabilities_jsonl(records, fh)
    return records
