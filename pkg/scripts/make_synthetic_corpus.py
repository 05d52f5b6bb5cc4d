#!/usr/bin/env python3
"""Generate the seeded synthetic repository used by the acceptance tests.

Writes four files into the output directory:

  history.log        numstat commit log in the documented git format, newest first
  releases.csv       release list (name,timestamp)
  vulns.jsonl        one advisory per line
  ground_truth.json  what the generator intended: per-advisory age in days and
                     the time stage that age falls in, the vulnerable file set

"Vulnerable" files start with a single owner and collect a growing crowd of
drive-by contributors, each landing one commit, so ownership falls and the
share of minor contributors rises with file age. Advisories hit every file at
ages spread across all five time stages. The remaining files are kept by a
small set of maintainers.

Deliberately standalone (stdlib only): the labels must not come from the code
they are used to check.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import random
from datetime import datetime, timezone
from pathlib import Path

DAY = 86_400
PROJECT_START = 1_483_228_800  # 2017-01-01T00:00:00Z
SNAPSHOT_DAY = 1_900

N_VULNERABLE = 6
N_CLEAN = 34
# one advisory per stage band; ages are jittered inside the band
AGE_BANDS = [(2, 6), (30, 80), (110, 250), (420, 900), (1150, 1300)]
OWNER_AGES = [0, 2, 20, 60, 200, 400, 800]
DRIVE_BY_AGES = [10, 40, 80, 120, 170, 250, 300, 350, 450, 550, 650, 750, 900, 1000, 1100]
RELEASE_DAYS = [("v0.9", 900), ("v1.0", 950), ("v1.1", 1000), ("v1.2", 1040)]


def stage_for(age_days: float) -> int:
    # month = 30 days, year = 365 days
    if age_days <= 7:
        return 1
    if age_days <= 90:
        return 2
    if age_days <= 270:
        return 3
    if age_days < 1095:
        return 4
    return 5


def sha(*parts) -> str:
    return hashlib.sha1("/".join(map(str, parts)).encode()).hexdigest()


def rfc3339(ts: int) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def generate(seed: int) -> dict[str, str]:
    rng = random.Random(seed)
    commits = []  # (timestamp, author, parents, [(path, added, deleted)], fix tag)

    def at(day: float) -> int:
        return PROJECT_START + int(day * DAY) + rng.randrange(0, 6 * 3600)

    def edit(path: str, first: bool = False):
        if first:
            return (path, rng.randint(40, 200), 0)
        return (path, rng.randint(1, 30), rng.randint(0, 10))

    drive_by = 0
    advisories = []
    truth = []
    vulnerable = []
    for k in range(N_VULNERABLE):
        path = f"src/core/module_{k}.py"
        vulnerable.append(path)
        birth = 40 + 90 * k + rng.uniform(0, 20)
        owner = f"Owner{k}@Example.com"
        for i, age in enumerate(OWNER_AGES):
            commits.append((at(birth + age) if age else PROJECT_START + int(birth * DAY), owner, 1, [edit(path, first=i == 0)], None))
        for age in DRIVE_BY_AGES:
            if rng.random() < 0.85:
                commits.append((at(birth + age + rng.uniform(-3, 3)), f"dev{drive_by}@users.example.org", 1, [edit(path)], None))
                drive_by += 1
        for band, (lo, hi) in enumerate(AGE_BANDS):
            age = rng.uniform(lo, hi)
            published = PROJECT_START + int((birth + age) * DAY)
            fix_ts = published + rng.randint(3600, 20 * 3600)
            vid = f"CVE-2099-{1000 + 10 * k + band}"
            commits.append((fix_ts, owner, 1, [edit(path)], vid))
            advisories.append((published, vid, path, band))

    clean = []
    for j in range(N_CLEAN):
        path = f"src/util/helper_{j}.py" if j < N_CLEAN - 2 else f"assets/blob_{j}.bin"
        clean.append(path)
        maintainer = f"Maint{j % 5}@Example.com"
        born = rng.uniform(0, SNAPSHOT_DAY - 400)
        binary = path.endswith(".bin")
        commits.append((at(born), maintainer, 1, [(path, None, None) if binary else edit(path, first=True)], None))
        for _ in range(rng.randint(1, 3)):
            who = maintainer if rng.random() < 0.7 else f"Maint{rng.randrange(5)}@Example.com"
            change = (path, None, None) if binary else edit(path)
            commits.append((at(rng.uniform(born + 1, SNAPSHOT_DAY - 1)), who, 1, [change], None))

    # two merges, ignored for contributions
    for day in (700, 1500):
        commits.append((at(day), "Maint0@Example.com", 2, [], None))
    # one last commit pins the snapshot date
    commits.append((PROJECT_START + SNAPSHOT_DAY * DAY, "Maint0@Example.com", 1, [edit(clean[0])], None))

    commits.sort(key=lambda c: c[0])
    hashes = []
    fix_hash = {}
    lines = []
    for i, (ts, author, parents, changes, tag) in enumerate(commits):
        h = sha(seed, i, ts, author)
        parent_hashes = [hashes[-1]] if hashes else []
        if parents == 2 and len(hashes) > 1:
            parent_hashes = [hashes[-1], hashes[-2]]
        hashes.append(h)
        if tag:
            fix_hash[tag] = h
        block = [f"@@@{h}|{author}|{ts}|{' '.join(parent_hashes)}"]
        for path, added, deleted in changes:
            block.append(f"-\t-\t{path}" if added is None else f"{added}\t{deleted}\t{path}")
        lines.append(block)

    # git prints newest first; a blank line follows every commit with numstat
    out = []
    for block in reversed(lines):
        out.append("\n".join(block) + ("\n" if len(block) > 1 else ""))
    log_text = "\n".join(out).rstrip("\n")

    vuln_lines = []
    for published, vid, path, band in sorted(advisories):
        days = (published - PROJECT_START) / DAY
        severity = round(min(10.0, max(0.0, 3.0 + days / 400 + rng.gauss(0, 1.0))), 1)
        record = {
            "id": vid,
            "severity": severity if rng.random() > 0.1 else None,
            "published": rfc3339(published),
            "commits": [fix_hash[vid]],
            "files": [path],
        }
        vuln_lines.append(json.dumps(record))
        first_touch = min(c[0] for c in commits if c[2] < 2 and any(ch[0] == path for ch in c[3]))
        age = (published - first_touch) / DAY
        truth.append({"id": vid, "file": path, "age_days": round(age, 6), "time_stage": stage_for(age)})

    releases = "name,timestamp\n" + "".join(
        f"{name},{rfc3339(PROJECT_START + day * DAY)}\n" for name, day in RELEASE_DAYS
    )
    ground_truth = {
        "seed": seed,
        "project_start": PROJECT_START,
        "snapshot": PROJECT_START + SNAPSHOT_DAY * DAY,
        "n_commits": len(commits),
        "vulnerable_files": vulnerable,
        "clean_files": clean,
        "advisories": truth,
    }
    return {
        "history.log": log_text,
        "releases.csv": releases,
        "vulns.jsonl": "\n".join(vuln_lines) + "\n",
        "ground_truth.json": json.dumps(ground_truth, indent=2) + "\n",
    }


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--out", type=Path, default=Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "synthetic")
    parser.add_argument("--seed", type=int, default=20240501)
    args = parser.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    for name, text in generate(args.seed).items():
        (args.out / name).write_text(text, encoding="utf-8")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
