"""Cached Monte Carlo runs behind the acceptance suite.

Each run is a bundled preset. Its report is stored in ``tests/.acceptance_cache``
under a key that hashes the preset and the numerical source files, so any
change to the estimator, learners, or data generation forces a fresh run.

Run ahead of pytest to fill the cache (hours on one core for the forest runs)::

    python3 tests/acceptance_runs.py                 # every run
    python3 tests/acceptance_runs.py oracle-example1 # selected runs
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
import time
from pathlib import Path

from aipwlab import harness
from aipwlab.cli import load_preset

CACHE = Path(__file__).parent / ".acceptance_cache"
SOURCE = Path(harness.__file__).parent
NUMERIC_SOURCES = ("aipw.py", "dgp.py", "glm.py", "harness.py", "forest/forest.py",
                   "forest/_pure.py", "forest/_tree.pyx")
RUNS = ("oracle-example1", "glm-example2", "dr-wrong-outcome", "dr-wrong-propensity",
        "coverage-example1-p2", "coverage-example2-p200", "coverage-example1-p20")


def source_digest() -> str:
    h = hashlib.sha256()
    for rel in NUMERIC_SOURCES:
        h.update(rel.encode())
        h.update((SOURCE / rel).read_bytes())
    return h.hexdigest()


def cache_key(preset: dict) -> str:
    doc = json.dumps(preset, sort_keys=True) + source_digest()
    return hashlib.sha256(doc.encode()).hexdigest()[:16]


def load_or_run(name: str, run_if_missing: bool = True):
    """Return ``(report, runtime_seconds, from_cache)``; ``report`` is None when missing and not run."""
    preset = load_preset(name)
    key = cache_key(preset)
    path = CACHE / f"{name}.json"
    if path.exists():
        doc = json.loads(path.read_text())
        if doc.get("key") == key:
            return harness.CoverageReport.from_dict(doc["report"]), doc["runtime_seconds"], True
    if not run_if_missing:
        return None, None, False
    config = dict(preset, parallelism=int(os.environ.get("AIPWLAB_ACCEPTANCE_WORKERS", os.cpu_count() or 1)))
    start = time.perf_counter()
    report = harness.run_experiment(harness.ExperimentConfig.from_dict(config))
    runtime = time.perf_counter() - start
    CACHE.mkdir(exist_ok=True)
    doc = {"key": key, "runtime_seconds": runtime, "report": json.loads(report.to_json())}
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(doc, sort_keys=True) + "\n")
    tmp.replace(path)
    return report, runtime, False


def main(names) -> None:
    for name in names or RUNS:
        report, runtime, cached = load_or_run(name)
        state = "cached" if cached else "ran"
        print(f"{name}: {state} in {runtime:.0f}s", flush=True)
        print(harness.format_summary(report), flush=True)


if __name__ == "__main__":
    main(sys.argv[1:])
