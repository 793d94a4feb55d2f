"""Measurement collection: per-step series, aggregates, CSV output, and the
contact-cluster statistic used to characterize configurations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import BrownsimError, ConfigError, PeriodicBox
from .dynamics import StepStats
from .forces import build_cell_grid, build_verlet

CSV_HEADER = ("step,dt_used,step_ms,force_ms,maintain_ms,overlap_ms,"
              "overlap_iters,flip_passes,inversion_repairs,rollbacks")

# (csv column, StepStats attribute, is integer counter)
_COLUMNS = [
    ("step", "step", True),
    ("dt_used", "dt_used", False),
    ("step_ms", "step_ms", False),
    ("force_ms", "force_ms", False),
    ("maintain_ms", "maintain_ms", False),
    ("overlap_ms", "overlap_ms", False),
    ("overlap_iters", "overlap_iterations", True),
    ("flip_passes", "flip_passes", True),
    ("inversion_repairs", "inversion_repairs", True),
    ("rollbacks", "rollbacks", True),
]

DEFAULT_WARMUP = 10  # early steps start from a lattice and are unrepresentative


@dataclass
class RunReport:
    config_id: str
    n: int
    series: list[StepStats] = field(default_factory=list)
    warmup: int = DEFAULT_WARMUP

    def summary(self) -> dict:
        return aggregate(self.series, min(self.warmup, max(len(self.series) - 1, 0)))


def aggregate(series: list[StepStats], warmup: int) -> dict:
    """Mean and max of every counter and timing over the post-warmup window."""
    if warmup >= len(series):
        raise ConfigError(
            f"warmup of {warmup} leaves no steps to aggregate (series has {len(series)})"
        )
    window = series[warmup:]
    out = {}
    for name, attr, _ in _COLUMNS:
        if name == "step":
            continue
        vals = np.array([getattr(s, attr) for s in window], dtype=np.float64)
        out[f"mean_{name}"] = float(vals.mean())
        out[f"max_{name}"] = float(vals.max())
    out["steps"] = len(window)
    return out


def _fmt(x, integer: bool) -> str:
    return str(int(x)) if integer else format(float(x), ".17g")


def write_csv(report: RunReport, path: str):
    """One row per step, then '#'-prefixed summary rows (mean/max per column)."""
    summary = report.summary() if len(report.series) > report.warmup else None
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(CSV_HEADER + "\n")
        for s in report.series:
            fh.write(",".join(_fmt(getattr(s, attr), i) for _, attr, i in _COLUMNS) + "\n")
        fh.write(f"# config={report.config_id} n={report.n} warmup={report.warmup}\n")
        if summary is not None:
            for kind in ("mean", "max"):
                cells = [format(summary[f"{kind}_{name}"], ".17g")
                         for name, _, _ in _COLUMNS if name != "step"]
                fh.write(f"# {kind}," + ",".join(cells) + "\n")


def read_csv(path: str) -> tuple[list[StepStats], dict]:
    """Inverse of write_csv: the step series plus the parsed summary rows."""
    series = []
    summary = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != CSV_HEADER:
            raise BrownsimError(f"{path}: unexpected header {header!r}")
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                kind = body.split(",", 1)[0]
                if kind in ("mean", "max"):
                    cells = body.split(",")[1:]
                    names = [name for name, _, _ in _COLUMNS if name != "step"]
                    for name, cell in zip(names, cells):
                        summary[f"{kind}_{name}"] = float(cell)
                continue
            cells = line.split(",")
            kw = {}
            for (name, attr, integer), cell in zip(_COLUMNS, cells):
                kw[attr] = int(cell) if integer else float(cell)
            series.append(StepStats(**kw))
    return series, summary


# ---------------------------------------------------------------------------
# contact clusters (union-find)


def contact_clusters(positions: np.ndarray, box: PeriodicBox, threshold: float) -> np.ndarray:
    """Cluster label per particle; particles within threshold are connected."""
    n = positions.shape[0]
    grid = build_cell_grid(positions, box, threshold)
    vl = build_verlet(grid, positions, box, threshold, skin=0.0)
    parent = np.arange(n, dtype=np.int64)

    def find(i):
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:  # path compression
            parent[i], i = root, parent[i]
        return root

    for a, b in zip(vl.pair_a, vl.pair_b):
        ra, rb = find(int(a)), find(int(b))
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    return np.array([find(int(i)) for i in range(n)], dtype=np.int64)


def cluster_sizes(labels: np.ndarray) -> np.ndarray:
    """Sizes of all clusters, descending."""
    _, counts = np.unique(labels, return_counts=True)
    return np.sort(counts)[::-1]
