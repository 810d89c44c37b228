from __future__ import annotations

import numpy as np
import pytest

from shiftlab.boot import ResampleUnit, bootstrap, percentile_ci, resample_indices, replicate_rng, write_ci_csv
from shiftlab.errors import PipelineFailure


def mean_stat(sample):
    return {"mean": float(np.mean(sample))}


def test_percentile_ci_matches_numpy_type7():
    x = np.arange(101.0)
    assert percentile_ci(x, 0.9) == pytest.approx((5.0, 50.0, 95.0), abs=1e-9)
    assert percentile_ci(x, 0.5)[0] == np.quantile(x, 0.25, method="linear")
    with pytest.raises(ValueError):
        percentile_ci([], 0.9)


def test_replicates_are_independent_of_threads(tmp_path):
    data = np.random.default_rng(0).normal(size=50)
    outs = []
    for threads in (1, 2, 3, 8):
        res = bootstrap(mean_stat, data, 64, seed=11, threads=threads)
        write_ci_csv(res, tmp_path / f"ci{threads}.csv")
        outs.append((tmp_path / f"ci{threads}.csv").read_bytes())
    assert len(set(outs)) == 1


def test_replicate_stream_depends_only_on_seed_and_index():
    a = replicate_rng(3, 5).integers(0, 100, 10)
    b = replicate_rng(3, 5).integers(0, 100, 10)
    c = replicate_rng(3, 6).integers(0, 100, 10)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_cluster_resampling_keeps_blocks_whole():
    clusters = ["a", "a", "b", "b", "b", "c"]
    idx = resample_indices(replicate_rng(0, 0), 6, clusters)
    picked = [clusters[i] for i in idx]
    for c in set(picked):
        assert picked.count(c) % clusters.count(c) == 0


def test_cluster_mode_needs_labels():
    with pytest.raises(ValueError):
        bootstrap(mean_stat, np.ones(5), 4, 0, ResampleUnit.CLUSTER)


def test_failures_are_recorded():
    def flaky(sample):
        if sample[0] > 0.8:
            raise RuntimeError("boom")
        return {"mean": float(np.mean(sample))}

    data = np.linspace(0, 1, 40)
    res = bootstrap(flaky, data, 100, 1, threads=1)["mean"]
    assert 0 < len(res.failures) < 50
    assert all(np.isnan(res.replicates[b]) for b in res.failures)
    with pytest.raises(PipelineFailure):
        bootstrap(lambda s: 1 / 0, data, 10, 1, threads=1)
