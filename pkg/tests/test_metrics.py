"""Aggregation, CSV round trips, and the contact-cluster statistic."""

import numpy as np
import pytest

from brownsim.core import ConfigError, PeriodicBox
from brownsim.dynamics import StepStats
from brownsim.metrics import (
    RunReport,
    aggregate,
    cluster_sizes,
    contact_clusters,
    read_csv,
    write_csv,
)


def stats(step, iters, step_ms=1.25, flips=0):
    return StepStats(step=step, dt_used=0.01, overlap_iterations=iters,
                     flip_passes=flips, step_ms=step_ms,
                     force_ms=step_ms / 2, maintain_ms=step_ms / 4,
                     overlap_ms=step_ms / 8)


class TestAggregate:
    def test_constant_series(self):
        s = [stats(i, 2) for i in range(10)]
        out = aggregate(s, warmup=0)
        assert out["mean_overlap_iters"] == 2.0
        assert out["max_overlap_iters"] == 2

    def test_warmup_window(self):
        s = [stats(i, it) for i, it in enumerate([0, 1, 2, 3])]
        out = aggregate(s, warmup=2)
        assert out["mean_overlap_iters"] == 2.5
        assert out["steps"] == 2

    def test_empty_window_rejected(self):
        with pytest.raises(ConfigError):
            aggregate([stats(0, 1)], warmup=1)


class TestCsvRoundTrip:
    def test_header_only_plus_summary(self, tmp_path):
        report = RunReport(config_id="t", n=8, series=[], warmup=0)
        path = tmp_path / "m.csv"
        write_csv(report, str(path))
        text = path.read_text().splitlines()
        assert text[0].startswith("step,dt_used,")
        assert all(line.startswith("#") for line in text[1:])

    def test_round_trip_counters_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        series = [
            StepStats(step=i, dt_used=0.01 * rng.random(),
                      overlap_iterations=int(rng.integers(0, 50)),
                      flip_passes=int(rng.integers(0, 9)),
                      inversion_repairs=int(rng.integers(0, 3)),
                      rollbacks=int(rng.integers(0, 2)),
                      step_ms=float(rng.random() * 7),
                      force_ms=float(rng.random()),
                      maintain_ms=float(rng.random()),
                      overlap_ms=float(rng.random()))
            for i in range(25)
        ]
        report = RunReport(config_id="x", n=64, series=series, warmup=5)
        path = tmp_path / "run.csv"
        write_csv(report, str(path))
        loaded, summary = read_csv(str(path))
        for a, b in zip(series, loaded):
            assert a.step == b.step
            assert a.overlap_iterations == b.overlap_iterations
            assert a.flip_passes == b.flip_passes
            assert a.inversion_repairs == b.inversion_repairs
            assert a.rollbacks == b.rollbacks
            assert a.dt_used == b.dt_used          # 17 digits: bit exact
            assert a.step_ms == b.step_ms
        recomputed = aggregate(loaded, warmup=5)
        for key, val in summary.items():
            assert recomputed[key] == val

    def test_parseable_by_generic_reader(self, tmp_path):
        import csv
        series = [stats(i, i % 3) for i in range(3)]
        report = RunReport(config_id="g", n=4, series=series, warmup=1)
        path = tmp_path / "g.csv"
        write_csv(report, str(path))
        with open(path) as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
        assert len(rows) == 4  # header + 3 steps
        assert len(rows[1]) == len(rows[0])


class TestContactClusters:
    def test_two_dimers_and_a_loner(self):
        box = PeriodicBox(30.0)
        pos = np.array([
            [5.0, 5.0], [6.0, 5.0],      # dimer
            [15.0, 15.0], [15.0, 16.0],  # dimer
            [25.0, 25.0],                # loner
        ])
        labels = contact_clusters(pos, box, threshold=1.05)
        sizes = cluster_sizes(labels)
        assert sizes.tolist() == [2, 2, 1]

    def test_wraps_across_boundary(self):
        box = PeriodicBox(20.0)
        pos = np.array([[0.2, 10.0], [19.9, 10.0]])
        labels = contact_clusters(pos, box, threshold=0.5)
        assert labels[0] == labels[1]

    def test_chain_is_one_cluster(self):
        box = PeriodicBox(50.0)
        pos = np.stack([5.0 + np.arange(20) * 1.05, np.full(20, 25.0)], axis=1)
        labels = contact_clusters(pos, box, threshold=1.1)
        assert cluster_sizes(labels)[0] == 20
