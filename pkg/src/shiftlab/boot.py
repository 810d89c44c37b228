"""Bootstrap driver and percentile confidence intervals.

Replicate ``b`` draws from a generator seeded by ``SeedSequence([seed, b])``
and results are stored by replicate index, so output does not depend on
how many worker threads run or in which order they finish.
"""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Hashable, Mapping, Sequence

import numpy as np

from .errors import PipelineFailure
from .ingest import format_number

log = logging.getLogger(__name__)

THREADS_ENV = "SHIFTLAB_THREADS"


class ResampleUnit(str, Enum):
    ROW = "ROW"
    CLUSTER = "CLUSTER"


def percentile_ci(replicates, level: float = 0.95) -> tuple[float, float, float]:
    """(low, median, high) empirical quantiles with linear interpolation between order statistics."""
    x = np.asarray(replicates, dtype=float)
    if x.size == 0:
        raise ValueError("no replicates")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    a = (1 - level) / 2
    lo, med, hi = np.quantile(x, [a, 0.5, 1 - a], method="linear")
    return float(lo), float(med), float(hi)


@dataclass(frozen=True)
class BootstrapResult:
    """Replicates of one statistic; failed replicates hold ``nan`` and are listed in ``failures``."""

    statistic: str
    replicates: tuple[float, ...]
    failures: tuple[int, ...]
    median: float
    ci_low: float
    ci_high: float
    level: float
    seed: int

    @property
    def B(self) -> int:
        return len(self.replicates)


def thread_count(threads: int | None = None) -> int:
    if threads is None:
        raw = os.environ.get(THREADS_ENV, "")
        threads = int(raw) if raw.strip() else (os.cpu_count() or 1)
    return max(1, int(threads))


def replicate_rng(seed: int, b: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, b]))


def resample_indices(rng: np.random.Generator, n: int, clusters: Sequence[Hashable] | None = None) -> np.ndarray:
    """Row indices for one bootstrap sample: rows or whole clusters, with replacement."""
    if clusters is None:
        return rng.integers(0, n, size=n)
    groups: dict[Hashable, list[int]] = {}
    for i, c in enumerate(clusters):
        groups.setdefault(c, []).append(i)
    ids = sorted(groups, key=str)
    pick = rng.integers(0, len(ids), size=len(ids))
    return np.fromiter((i for g in pick for i in groups[ids[g]]), dtype=np.int64)


def _take(data, idx):
    if isinstance(data, np.ndarray):
        return data[idx]
    return [data[i] for i in idx]


def bootstrap(
    pipeline: Callable[[Any], Mapping[str, float]],
    data,
    B: int,
    seed: int,
    resample_unit: ResampleUnit | str = ResampleUnit.ROW,
    clusters: Sequence[Hashable] | None = None,
    level: float = 0.95,
    threads: int | None = None,
) -> dict[str, BootstrapResult]:
    """Run ``pipeline`` on ``B`` resamples of ``data``.

    ``pipeline`` maps a data sample to named scalar statistics. With
    ``resample_unit=CLUSTER``, ``clusters[i]`` is the block (e.g. reporting
    country) of row ``i``. A replicate that raises, or does not return a
    statistic, counts as failed for it; fewer than half successful
    replicates raises :class:`PipelineFailure`.
    """
    if B < 1:
        raise ValueError("B must be at least 1")
    n = len(data)
    if n == 0:
        raise ValueError("data is empty")
    unit = ResampleUnit(resample_unit)
    if unit is ResampleUnit.CLUSTER:
        if clusters is None or len(clusters) != n:
            raise ValueError("CLUSTER resampling needs one cluster id per row")
    block = clusters if unit is ResampleUnit.CLUSTER else None

    def one(b: int):
        try:
            idx = resample_indices(replicate_rng(seed, b), n, block)
            return {k: float(v) for k, v in pipeline(_take(data, idx)).items()}
        except Exception as exc:  # a failed replicate is data, not a crash
            log.debug("replicate %d failed: %s", b, exc)
            return None

    workers = thread_count(threads)
    if workers == 1:
        outcomes = [one(b) for b in range(B)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(one, range(B)))

    names: list[str] = []
    for o in outcomes:
        for k in o or ():
            if k not in names:
                names.append(k)
    if not names:
        raise PipelineFailure(f"all {B} bootstrap replicates failed")

    results = {}
    for name in names:
        vals = [np.nan if o is None or name not in o else o[name] for o in outcomes]
        failed = tuple(b for b, v in enumerate(vals) if not np.isfinite(v))
        if len(failed) * 2 > B:
            raise PipelineFailure(f"{len(failed)} of {B} replicates failed for {name!r}")
        ok = [v for v in vals if np.isfinite(v)]
        lo, med, hi = percentile_ci(ok, level)
        results[name] = BootstrapResult(name, tuple(vals), failed, med, lo, hi, level, seed)
    return results


def write_ci_csv(results: Mapping[str, BootstrapResult] | Sequence[BootstrapResult], path: str | Path) -> None:
    rows = results.values() if isinstance(results, Mapping) else results
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["statistic", "median", "ci_low", "ci_high", "B", "failures"])
        for r in rows:
            w.writerow([r.statistic, format_number(r.median), format_number(r.ci_low),
                        format_number(r.ci_high), r.B, len(r.failures)])
