"""Command line front end: run / bench / abp / render.

Config files are `key = value` lines with '#' comments; particle types are
repeated `type = phi,alpha,mu` lines. Preset charge tables are qualitative
reconstructions calibrated to reproduce the documented morphologies (the
original numeric tables are not available), and are marked as such here.
"""

from __future__ import annotations

import argparse
import math
import sys as _sys
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels, metrics
from .core import (
    HEX_PACKING_BOUND,
    BrownsimError,
    ConfigError,
    ParticleSystem,
    PeriodicBox,
    RngStream,
    SimParams,
    box_length_for_density,
)
from .dynamics import (
    AbpSimulation,
    AbpState,
    LongRangeSimulation,
    ShortRangeSimulation,
)
from .initial import InitConfig, init_system

MODES = ("long-range", "short-range", "abp")

TYPE_PALETTE = ("#2ca02c", "#1f77b4", "#ff7f0e", "#9467bd")  # type 0 green, type 1 blue
LOCALITY_HIT = "#d62728"    # took part in an overlap correction
LOCALITY_CLEAN = "#2ca02c"  # did not


@dataclass
class RunConfig:
    mode: str
    n: int
    rho: float
    sigma: float = 1.0
    dt: float = 0.01
    diffusion: float = 0.01
    r_cutoff: float | None = None       # defaults to 2.5 * sigma in short-range mode
    skin: float | None = None           # defaults to 0.5 * sigma
    seed: int = 0
    steps: int = 100
    types: list[tuple[float, float, float]] = field(default_factory=lambda: [(1.0, 0.0, 0.0)])
    v0: float | None = None             # required in abp mode
    snapshot_interval: int = 0
    out_dir: str = "."
    deterministic: bool = True          # accepted for compatibility; all paths are deterministic
    precision: str = "double"
    threads: int = 0                    # 0 = leave the pool size alone
    tile: int = 32
    config_id: str = "custom"

    def violations(self) -> list[str]:
        v = []
        if self.mode not in MODES:
            v.append(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.n < 1:
            v.append(f"n must be >= 1, got {self.n}")
        if not (0.0 < self.rho < HEX_PACKING_BOUND):
            v.append(
                f"rho={self.rho} outside (0, {HEX_PACKING_BOUND:.4f}): equal disks "
                "cannot pack beyond the hexagonal bound"
            )
        if self.sigma <= 0:
            v.append(f"sigma must be positive, got {self.sigma}")
        if self.dt <= 0:
            v.append(f"dt must be positive, got {self.dt}")
        if self.diffusion < 0:
            v.append(f"diffusion must be >= 0, got {self.diffusion}")
        if self.r_cutoff is not None and self.r_cutoff <= self.sigma:
            v.append(f"r_cutoff must exceed sigma, got {self.r_cutoff}")
        if self.skin is not None and self.skin <= 0:
            v.append(f"skin must be positive, got {self.skin}")
        if self.steps < 0:
            v.append(f"steps must be >= 0, got {self.steps}")
        if not self.types:
            v.append("at least one type line is required")
        else:
            fr = [t[0] for t in self.types]
            if any(f < 0 for f in fr):
                v.append("type fractions must be non-negative")
            elif abs(sum(fr) - 1.0) > 1e-12:
                v.append(f"type fractions must sum to 1, got {sum(fr)}")
        if self.mode == "abp" and self.v0 is None:
            v.append("abp mode requires v0")
        if self.precision not in ("double", "single"):
            v.append(f"precision must be double or single, got {self.precision!r}")
        if self.snapshot_interval < 0:
            v.append(f"snapshot_interval must be >= 0, got {self.snapshot_interval}")
        if self.tile < 1:
            v.append(f"tile must be >= 1, got {self.tile}")
        return v

    def validated(self) -> "RunConfig":
        v = self.violations()
        if v:
            raise ConfigError(v)
        out = replace(self)
        if out.r_cutoff is None:
            out.r_cutoff = 2.5 * out.sigma
        if out.skin is None:
            out.skin = 0.5 * out.sigma
        return out

    @property
    def dtype(self):
        return np.float32 if self.precision == "single" else np.float64


_SCALARS = {
    "mode": str,
    "n": int,
    "rho": float,
    "sigma": float,
    "dt": float,
    "diffusion": float,
    "r_cutoff": float,
    "skin": float,
    "seed": int,
    "steps": int,
    "v0": float,
    "snapshot_interval": int,
    "out_dir": str,
    "deterministic": None,  # bool, parsed specially
    "precision": str,
    "threads": int,
    "tile": int,
}


def parse_config(text: str) -> RunConfig:
    """Parse and validate a config file; reports every violation at once."""
    problems = []
    fields: dict = {}
    types: list[tuple[float, float, float]] = []
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"line {ln}: expected 'key = value', got {raw!r}")
            continue
        key, val = (part.strip() for part in line.split("=", 1))
        if key == "type":
            parts = [p.strip() for p in val.split(",")]
            if len(parts) != 3:
                problems.append(f"line {ln}: type needs 'phi,alpha,mu', got {val!r}")
                continue
            try:
                types.append(tuple(float(p) for p in parts))
            except ValueError:
                problems.append(f"line {ln}: malformed type values {val!r}")
        elif key in _SCALARS:
            caster = _SCALARS[key]
            if caster is None:  # booleans
                low = val.lower()
                if low in ("true", "1", "yes", "on"):
                    fields[key] = True
                elif low in ("false", "0", "no", "off"):
                    fields[key] = False
                else:
                    problems.append(f"line {ln}: expected a boolean for {key}, got {val!r}")
            else:
                try:
                    fields[key] = caster(val)
                except ValueError:
                    problems.append(f"line {ln}: malformed value for {key}: {val!r}")
        else:
            problems.append(f"line {ln}: unknown key {key!r}")
    missing = [k for k in ("mode", "n", "rho") if k not in fields]
    problems.extend(f"missing required key {k!r}" for k in missing)
    if types:
        fields["types"] = types
    if not missing:
        cfg = RunConfig(**fields)
        problems.extend(cfg.violations())
    if problems:
        raise ConfigError(problems)
    return cfg.validated()


# ---------------------------------------------------------------------------
# presets
#
# The two-type charge tables below are reconstructions: signs chosen so the
# documented behavior emerges (asymmetric cross attraction for c0, a dense
# self-attracting minority cluster for c1, alternating chains for c2, dense
# segregated clusters for c3, c2's interactions in a dilute regime for c4),
# magnitudes and densities calibrated by running them and checking the
# resulting morphology and overlap statistics. sigma, dt and diffusion are
# held at 1, 0.01 and 0.01 everywhere.

PRESETS: dict[str, RunConfig] = {
    "c0": RunConfig(mode="long-range", n=4096, rho=0.25, config_id="c0",
                    types=[(0.5, 3.0, 3.0), (0.5, -3.0, -1.5)]),
    "c1": RunConfig(mode="long-range", n=4096, rho=0.25, config_id="c1",
                    types=[(0.25, 3.0, 3.0), (0.75, -3.0, 3.0)]),
    "c2": RunConfig(mode="long-range", n=4096, rho=0.25, config_id="c2",
                    types=[(0.5, 3.0, 3.0), (0.5, -3.0, -3.0)]),
    "c3": RunConfig(mode="long-range", n=4096, rho=0.25, config_id="c3",
                    types=[(0.5, 3.0, -3.0), (0.5, -3.0, 3.0)]),
    "c4": RunConfig(mode="long-range", n=4096, rho=0.08, config_id="c4",
                    types=[(0.5, 2.6, 2.6), (0.5, -2.6, -2.6)]),
    "abp-dense": RunConfig(mode="abp", n=10_000, rho=0.7, v0=0.15, steps=10_000,
                           config_id="abp-dense"),
    "abp-dilute": RunConfig(mode="abp", n=10_000, rho=0.4, v0=0.15, steps=10_000,
                            config_id="abp-dilute"),
}


def load_preset(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; have {sorted(PRESETS)}")
    return PRESETS[name].validated()


# ---------------------------------------------------------------------------
# simulation assembly


def build_simulation(cfg: RunConfig, debug_scan: bool = False, collect_flags: bool = False):
    """Particle system + stepper for a validated config."""
    cfg = cfg.validated()
    if cfg.threads:
        _kernels.set_threads(cfg.threads)
    box = PeriodicBox(box_length_for_density(cfg.n, cfg.sigma, cfg.rho))
    system = init_system(InitConfig(
        n=cfg.n, box=box, sigma=cfg.sigma, types=cfg.types, seed=cfg.seed,
        dtype=cfg.dtype,
    ))
    params = SimParams(
        n=cfg.n, sigma=cfg.sigma, dt=cfg.dt, diffusion=cfg.diffusion,
        r_cutoff=cfg.r_cutoff, tile=cfg.tile,
    )
    rng = RngStream(cfg.seed, stream=2)
    kw = dict(debug_scan=debug_scan, collect_flags=collect_flags)
    if cfg.mode == "long-range":
        return LongRangeSimulation(system, params, rng, **kw)
    if cfg.mode == "short-range":
        return ShortRangeSimulation(system, params, rng, skin=cfg.skin, **kw)
    angles = RngStream(cfg.seed, stream=3).uniform(cfg.n) * 2.0 * math.pi
    abp = AbpState(angles=angles, speed=cfg.v0, rot_diffusion=cfg.diffusion)
    return AbpSimulation(system, params, rng, abp, skin=cfg.skin, **kw)


# ---------------------------------------------------------------------------
# snapshot files


def write_snapshot(system: ParticleSystem, t: float, path: str):
    """Text snapshot, one particle per line; reals carry 17 significant digits."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(
            f"# brownsim-snapshot v1 N={system.n} "
            f"L={format(system.box.length, '.17g')} t={format(t, '.17g')}\n"
        )
        for i in range(system.n):
            fh.write(
                f"{format(float(system.positions[i, 0]), '.17g')} "
                f"{format(float(system.positions[i, 1]), '.17g')} "
                f"{int(system.type_of[i])}\n"
            )


def read_snapshot(path: str):
    """Inverse of write_snapshot: (positions, types, box, t)."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        parts = header.split()
        if parts[:3] != ["#", "brownsim-snapshot", "v1"]:
            raise BrownsimError(f"{path}:1: not a brownsim snapshot header: {header!r}")
        try:
            kv = dict(p.split("=", 1) for p in parts[3:])
            n = int(kv["N"])
            box = PeriodicBox(float(kv["L"]))
            t = float(kv["t"])
        except (KeyError, ValueError) as exc:
            raise BrownsimError(f"{path}:1: malformed header fields: {exc}") from exc
        positions = np.empty((n, 2), dtype=np.float64)
        types = np.empty(n, dtype=np.int32)
        for i in range(n):
            line = fh.readline()
            if not line:
                raise BrownsimError(f"{path}: truncated file, missing particle row {i}")
            cells = line.split()
            if len(cells) != 3:
                raise BrownsimError(f"{path}:{i + 2}: expected 'x y type', got {line!r}")
            try:
                positions[i, 0] = float(cells[0])
                positions[i, 1] = float(cells[1])
                types[i] = int(cells[2])
            except ValueError as exc:
                raise BrownsimError(f"{path}:{i + 2}: malformed row: {exc}") from exc
        extra = fh.readline()
        if extra.strip():
            raise BrownsimError(f"{path}: header says N={n} but more rows follow")
    return positions, types, box, t


def write_locality_flags(flags: np.ndarray, path: str):
    with open(path, "w", encoding="utf-8") as fh:
        for f in flags:
            fh.write("1\n" if f else "0\n")


def read_locality_flags(path: str) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        return np.array([line.strip() == "1" for line in fh if line.strip() != ""], dtype=bool)


# ---------------------------------------------------------------------------
# rendering


def render_svg(positions: np.ndarray, types: np.ndarray, box: PeriodicBox,
               sigma: float, locality: np.ndarray | None = None) -> str:
    """SVG with one circle per particle, radius sigma/2, viewport = box.

    Default palette colors by type; locality mode paints particles that took
    part in overlap corrections red and the rest green.
    """
    L = box.length
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {L:.6g} {L:.6g}" '
        f'width="800" height="800">',
        f'<rect x="0" y="0" width="{L:.6g}" height="{L:.6g}" fill="white"/>',
    ]
    r = sigma / 2.0
    for i in range(positions.shape[0]):
        if locality is not None:
            fill = LOCALITY_HIT if locality[i] else LOCALITY_CLEAN
        else:
            fill = TYPE_PALETTE[int(types[i]) % len(TYPE_PALETTE)]
        x = positions[i, 0]
        y = L - positions[i, 1]  # svg y axis points down
        out.append(f'<circle cx="{x:.6g}" cy="{y:.6g}" r="{r:.6g}" fill="{fill}"/>')
    out.append("</svg>")
    return "\n".join(out)


# ---------------------------------------------------------------------------
# commands


def _run_to_report(cfg: RunConfig, debug_scan=False, collect_flags=False,
                   steps: int | None = None):
    sim = build_simulation(cfg, debug_scan=debug_scan, collect_flags=collect_flags)
    series = sim.run(cfg.steps if steps is None else steps)
    report = metrics.RunReport(config_id=cfg.config_id, n=cfg.n, series=series)
    return sim, report


def cmd_run(cfg: RunConfig, out_prefix: str) -> int:
    sim = build_simulation(cfg)
    on_step = None
    if cfg.snapshot_interval > 0:
        def on_step(s, st):
            if (st.step + 1) % cfg.snapshot_interval == 0:
                write_snapshot(s.sys, (st.step + 1) * cfg.dt,
                               f"{out_prefix}-{st.step + 1:06d}.snap")
    series = sim.run(cfg.steps, on_step=on_step)
    report = metrics.RunReport(config_id=cfg.config_id, n=cfg.n, series=series)
    metrics.write_csv(report, f"{out_prefix}-metrics.csv")
    write_snapshot(sim.sys, cfg.steps * cfg.dt, f"{out_prefix}-final.snap")
    write_locality_flags(sim.last_overlap_flags, f"{out_prefix}-locality.txt")
    print(f"wrote {out_prefix}-metrics.csv, {out_prefix}-final.snap, {out_prefix}-locality.txt")
    return 0


def cmd_bench(preset_names: list[str], n_values: list[int], steps: int, out_path: str) -> int:
    """100-iteration style scaling matrix; one CSV row per (preset, N) cell.

    The box is resized per N to hold the preset's packing fraction. A failed
    cell is recorded with its error and the matrix continues.
    """
    rows = ["preset,n,mode,status,mean_step_ms,mean_force_ms,mean_maintain_ms,"
            "mean_overlap_ms,mean_overlap_iters,mean_flip_passes"]
    for name in preset_names:
        base = load_preset(name)
        for n in n_values:
            cfg = replace(base, n=n, steps=steps)
            try:
                _, report = _run_to_report(cfg)
                s = report.summary()
                rows.append(
                    f"{name},{n},{cfg.mode},ok,"
                    f"{s['mean_step_ms']:.6g},{s['mean_force_ms']:.6g},"
                    f"{s['mean_maintain_ms']:.6g},{s['mean_overlap_ms']:.6g},"
                    f"{s['mean_overlap_iters']:.6g},{s['mean_flip_passes']:.6g}"
                )
            except BrownsimError as exc:
                rows.append(f"{name},{n},{base.mode},error: {exc},,,,,,")
            print(rows[-1], flush=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(rows) + "\n")
    return 0


def cmd_render(snapshot_path: str, out_path: str, locality_path: str | None,
               sigma: float = 1.0) -> int:
    positions, types, box, _ = read_snapshot(snapshot_path)
    locality = read_locality_flags(locality_path) if locality_path else None
    if locality is not None and locality.shape[0] != positions.shape[0]:
        raise ConfigError(
            f"locality file has {locality.shape[0]} flags for {positions.shape[0]} particles"
        )
    svg = render_svg(positions, types, box, sigma, locality)
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(svg)
    print(f"wrote {out_path}")
    return 0


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="brownsim",
                                 description="Brownian hard-disk simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one configuration")
    p_run.add_argument("--config", help="config file path")
    p_run.add_argument("--preset", help="preset name instead of a config file")
    p_run.add_argument("--steps", type=int, help="override step count")
    p_run.add_argument("--threads", type=int, default=0)
    p_run.add_argument("--deterministic", action="store_true", default=False)
    p_run.add_argument("-o", "--out-prefix", default="brownsim-run")

    p_bench = sub.add_parser("bench", help="scaling matrix over presets and sizes")
    p_bench.add_argument("--presets", nargs="+", default=["c0"])
    p_bench.add_argument("--n-range", nargs="+", type=int,
                         default=[2**k for k in range(10, 17)])
    p_bench.add_argument("--steps", type=int, default=100)
    p_bench.add_argument("-o", "--out", default="bench.csv")

    p_abp = sub.add_parser("abp", help="active-particle validation run")
    p_abp.add_argument("--preset", choices=["abp-dense", "abp-dilute"], required=True)
    p_abp.add_argument("--steps", type=int, help="override step count")
    p_abp.add_argument("-o", "--out-prefix", default="brownsim-abp")

    p_render = sub.add_parser("render", help="snapshot to SVG")
    p_render.add_argument("--snapshot", required=True)
    p_render.add_argument("--locality", help="flags file for overlap-locality colors")
    p_render.add_argument("--sigma", type=float, default=1.0)
    p_render.add_argument("-o", "--out", default="out.svg")

    args = ap.parse_args(argv)
    try:
        if args.command == "run":
            if bool(args.config) == bool(args.preset):
                raise ConfigError("run needs exactly one of --config or --preset")
            if args.config:
                with open(args.config, encoding="utf-8") as fh:
                    cfg = parse_config(fh.read())
            else:
                cfg = load_preset(args.preset)
            if args.steps is not None:
                cfg = replace(cfg, steps=args.steps)
            if args.threads:
                cfg = replace(cfg, threads=args.threads)
            return cmd_run(cfg, args.out_prefix)
        if args.command == "bench":
            return cmd_bench(args.presets, args.n_range, args.steps, args.out)
        if args.command == "abp":
            cfg = load_preset(args.preset)
            if args.steps is not None:
                cfg = replace(cfg, steps=args.steps)
            return cmd_run(cfg, args.out_prefix)
        if args.command == "render":
            return cmd_render(args.snapshot, args.out, args.locality, args.sigma)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=_sys.stderr)
        return 2
    except BrownsimError as exc:
        print(f"simulation error: {exc}", file=_sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=_sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
