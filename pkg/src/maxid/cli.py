"""Command-line front end.

    maxid simulate --preset paper-s4 --replicates 1000 --seed 1 --out run1
    maxid coeff    --preset paper-s4 --samples run1/samples.csv --out run1
    maxid diagnose --preset paper-s4 --samples run1/samples.csv --out run1
    maxid bench    --preset paper-s4 --sizes 25,100,225,400 --out bench
    maxid presets  [name]

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import dataclasses
import json
import logging
import math
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .engine import ModelSpec, Simulator, parse_method, simulate_batch, spec_for_method
from .errors import ConfigError, MissingSamples, NumericalError
from .gaussian_fields import ORDERINGS, CorrelationModel, as_coords, grid_sites
from .measures import LocationMagnitudeMeasure, ScaleMagnitudeMeasure
from .samplers import MHConfig, random_stream

log = logging.getLogger("maxid")

SCHEMA_VERSION = 1
DEFAULT_LEVELS = (0.05, 0.25, 0.5, 0.75, 0.95)


# --------------------------------------------------------------------------
# configuration


@dataclass
class ModelBlock:
    mixture: str = "scale"
    alpha: float = 1.0
    beta: float = 0.0
    beta1: float = 1.0
    beta2: float = 1.0
    correlation: str = "exponential"
    rate: float = 1.0
    nu: float = 0.0
    surface: str = "constant"
    surface_value: float = 1.0


@dataclass
class SitesBlock:
    grid: list | None = None
    coords: list | None = None
    ordering: str = "coordinate"


@dataclass
class RunBlock:
    replicates: int = 1000
    seed: int = 0
    workers: int = 1
    method: str = "exact-ars"
    mh_sigma: float = 1.0
    mh_iterations: int = 100
    mh_init: str | float = "auto-mode"


@dataclass
class OutputBlock:
    directory: str = "out"
    formats: list = field(default_factory=lambda: ["csv"])


@dataclass
class RunConfig:
    model: ModelBlock = field(default_factory=ModelBlock)
    sites: SitesBlock = field(default_factory=SitesBlock)
    run: RunBlock = field(default_factory=RunBlock)
    output: OutputBlock = field(default_factory=OutputBlock)

    # -- serialisation

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        blocks = {"model": ModelBlock, "sites": SitesBlock, "run": RunBlock, "output": OutputBlock}
        unknown = set(data) - set(blocks)
        if unknown:
            raise ConfigError(f"unknown configuration block(s): {sorted(unknown)}")
        kwargs = {}
        for name, kind in blocks.items():
            raw = data.get(name, {})
            if not isinstance(raw, dict):
                raise ConfigError(f"{name}: expected an object")
            names = {f.name for f in dataclasses.fields(kind)}
            bad = set(raw) - names
            if bad:
                raise ConfigError(f"{name}: unknown field(s) {sorted(bad)}")
            kwargs[name] = kind(**raw)
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None

    # -- validation and conversion

    def validate(self) -> None:
        self.model_spec()
        self.site_coords()
        r = self.run
        if not (isinstance(r.replicates, int) and r.replicates >= 1):
            raise ConfigError("run.replicates: must be a positive integer")
        if not (isinstance(r.workers, int) and r.workers >= 1):
            raise ConfigError("run.workers: must be a positive integer")
        if not (isinstance(r.seed, int) and r.seed >= 0):
            raise ConfigError("run.seed: must be a nonnegative integer")
        try:
            parse_method(r.method)
        except ConfigError as exc:
            raise ConfigError(f"run.method: {exc}") from None
        if not isinstance(self.output.formats, list) or not set(self.output.formats) <= {"csv"}:
            raise ConfigError("output.formats: only 'csv' is supported")

    def model_spec(self) -> ModelSpec:
        m, r = self.model, self.run
        try:
            if m.mixture == "scale":
                measure = ScaleMagnitudeMeasure(float(m.alpha), float(m.beta))
            elif m.mixture == "location":
                measure = LocationMagnitudeMeasure(float(m.alpha), float(m.beta1), float(m.beta2))
            else:
                raise ConfigError(f"unknown mixture {m.mixture!r}; expected 'scale' or 'location'")
        except ConfigError as exc:
            raise ConfigError(f"model: {exc}") from None
        try:
            corr = CorrelationModel(m.correlation, float(m.rate), float(m.nu), m.surface, float(m.surface_value))
        except ConfigError as exc:
            raise ConfigError(f"model.correlation: {exc}") from None
        try:
            mh = MHConfig(float(r.mh_sigma), int(r.mh_iterations), r.mh_init)
        except (ConfigError, ValueError) as exc:
            raise ConfigError(f"run.mh: {exc}") from None
        kind, _ = parse_method(r.method)
        sampler = "mh" if kind == "mh" or (kind == "naive" and m.mixture == "location") else "ars"
        try:
            return ModelSpec(measure, corr, sampler, mh, self.sites.ordering)
        except ConfigError as exc:
            raise ConfigError(f"run.method: {exc}") from None

    def site_coords(self) -> np.ndarray:
        s = self.sites
        if s.ordering not in ORDERINGS:
            raise ConfigError(f"sites.ordering: expected one of {ORDERINGS}")
        if (s.grid is None) == (s.coords is None):
            raise ConfigError("sites: give exactly one of 'grid' or 'coords'")
        if s.grid is not None:
            g = list(s.grid)
            if not (1 <= len(g) <= 2 and all(isinstance(v, int) and v >= 1 for v in g)):
                raise ConfigError("sites.grid: expected [n] or [n1, n2] with positive integers")
            if len(g) == 1:
                return (np.arange(1, g[0] + 1) / (g[0] + 1))[:, None]
            return grid_sites(g[0], g[1])
        try:
            coords = as_coords(s.coords)
        except (TypeError, ValueError):
            raise ConfigError("sites.coords: expected a list of coordinates") from None
        if coords.ndim != 2 or not np.all(np.isfinite(coords)) or len(coords) == 0:
            raise ConfigError("sites.coords: expected a non-empty list of finite coordinates")
        if len(np.unique(coords, axis=0)) != len(coords):
            raise ConfigError("sites.coords: sites must be distinct")
        return coords


PRESETS = {
    "paper-s4": RunConfig(
        ModelBlock("scale", 5.0, 2.0, correlation="nonstationary", nu=3.0, surface="probit-x"),
        SitesBlock(grid=[7, 7]),
        RunBlock(replicates=100_000, method="exact-ars"),
    ),
    "br-boundary": RunConfig(
        ModelBlock("location", 1.0, beta1=1.0, beta2=1.0, correlation="exponential", rate=2.0),
        SitesBlock(coords=[[0.25], [0.75]]),
        RunBlock(replicates=100_000, method="exact-mh"),
    ),
    "extremal-t-boundary": RunConfig(
        ModelBlock("scale", 1.0, 0.0, correlation="nonstationary", nu=0.0, surface="constant", surface_value=0.5),
        SitesBlock(coords=[[0.25], [0.75]]),
        RunBlock(replicates=100_000, method="exact-ars"),
    ),
}


def preset(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    return copy.deepcopy(PRESETS[name])


def load_config(args) -> RunConfig:
    if args.config and args.preset:
        raise ConfigError("use either --config or --preset, not both")
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        cfg = RunConfig.from_json(path.read_text())
    elif args.preset:
        cfg = preset(args.preset)
    else:
        raise ConfigError("a model is required: pass --config or --preset")
    if args.seed is not None:
        cfg.run.seed = args.seed
    if args.replicates is not None:
        cfg.run.replicates = args.replicates
    if args.method is not None:
        cfg.run.method = args.method
    if args.workers is not None:
        cfg.run.workers = args.workers
    if args.out is not None:
        cfg.output.directory = args.out
    cfg.validate()
    return cfg


# --------------------------------------------------------------------------
# file output


def versions() -> dict:
    import numba
    import scipy
    import statsmodels

    return {
        "maxid": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "statsmodels": statsmodels.__version__,
        "numba": numba.__version__,
    }


def write_matrix(path: Path, values: np.ndarray) -> None:
    header = ",".join(f"site_{i + 1}" for i in range(values.shape[1]))
    np.savetxt(path, values, fmt="%.17g", delimiter=",", header=header, comments="", encoding="utf-8")


def read_matrix(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MissingSamples(f"sample file {path} does not exist; run 'maxid simulate' first")
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    if not header or not all(h == f"site_{i + 1}" for i, h in enumerate(header)):
        raise MissingSamples(f"{path} is not a replicate matrix (expected site_<i> headers)")
    return np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2))


def write_rows(path: Path, rows: list) -> None:
    if not rows:
        path.write_text("", encoding="utf-8")
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in row.items()})


def write_meta(path: Path, cfg: RunConfig, **extra) -> None:
    meta = {"schema_version": SCHEMA_VERSION, "config": cfg.to_dict(), "versions": versions(), **extra}
    path.write_text(json.dumps(meta, indent=2), encoding="utf-8")


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _method_label(samples_path: Path, default: str) -> str:
    meta = samples_path.with_suffix(".json")
    if meta.exists():
        try:
            return json.loads(meta.read_text())["config"]["run"]["method"]
        except (KeyError, json.JSONDecodeError):
            pass
    return default


# --------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: RunConfig, name: str = "samples") -> Path:
    spec, coords, run = cfg.model_spec(), cfg.site_coords(), cfg.run
    out = _outdir(cfg)
    t0 = time.perf_counter()
    batch = simulate_batch(spec, coords, run.replicates, run.seed, method=run.method, workers=run.workers)
    elapsed = time.perf_counter() - t0
    path = out / f"{name}.csv"
    write_matrix(path, batch.values)
    write_meta(
        out / f"{name}.json",
        cfg,
        seed=run.seed,
        method=run.method,
        replicates=run.replicates,
        sites=coords.tolist(),
        mean_profiles=float(batch.profiles.mean()),
        profiles=batch.profiles.tolist(),
        levels=batch.levels.tolist(),
        seconds=batch.times.tolist(),
        wall_time=elapsed,
    )
    log.info("wrote %d x %d replicates to %s (mean profiles %.2f)", *batch.values.shape, path, batch.profiles.mean())
    return path


def _parse_pairs(text: str | None, n: int):
    if text in (None, "", "all"):
        return [(i, j) for i in range(n) for j in range(i + 1, n)]
    pairs = []
    for item in text.split(","):
        try:
            a, b = (int(v) for v in item.split("-"))
        except ValueError:
            raise ConfigError(f"--pairs: cannot parse {item!r}; use e.g. 1-2,1-3") from None
        if not (1 <= a <= n and 1 <= b <= n):
            raise ConfigError(f"--pairs: site index out of range 1..{n} in {item!r}")
        pairs.append((a - 1, b - 1))
    return pairs


def _parse_levels(text: str | None):
    if not text:
        return DEFAULT_LEVELS
    try:
        levels = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"--levels: cannot parse {text!r}") from None
    if not all(0 < p < 1 for p in levels):
        raise ConfigError("--levels: quantile levels must lie in (0, 1)")
    return levels


def cmd_coeff(cfg: RunConfig, samples=None, pairs=None, levels=None) -> Path:
    from .diagnostics import empirical_theta2, theoretical_theta2
    from .marginal import marginal_law

    spec, coords = cfg.model_spec(), cfg.site_coords()
    data = read_matrix(samples) if samples else None
    if data is not None and data.shape[1] != len(coords):
        raise ConfigError(f"sample file has {data.shape[1]} columns but the configuration has {len(coords)} sites")
    law = marginal_law(spec.measure)
    rows = []
    for i, j in _parse_pairs(pairs, len(coords)):
        for p in _parse_levels(levels):
            z0 = law.quantile(p)
            row = {"site_i": i + 1, "site_j": j + 1, "p": p, "z0": z0,
                   "theoretical": theoretical_theta2(spec, coords[i], coords[j], z0)}  # fmt: skip
            if data is not None:
                row["empirical"] = empirical_theta2(data, i, j, p)
            rows.append(row)
    out = _outdir(cfg)
    path = out / "coeff.csv"
    write_rows(path, rows)
    write_meta(out / "coeff.json", cfg, samples=str(samples) if samples else None)
    return path


def cmd_diagnose(cfg: RunConfig, samples) -> Path:
    from .diagnostics import kl_report
    from .marginal import marginal_law

    if not samples:
        raise MissingSamples("diagnose needs --samples <file> [<file> ...]")
    law = marginal_law(cfg.model_spec().measure)
    rows = []
    for k, path in enumerate(samples):
        path = Path(path)
        data = read_matrix(path)
        label = _method_label(path, f"samples{k + 1}")
        rep = kl_report(data, law, label)
        for site, (v, w) in enumerate(zip(rep.values, rep.literal)):
            rows.append({"method": label, "site": site + 1, "n": rep.n, "kl": v, "kl_literal": w})
        log.info("%s: median KL %.4g over %d sites", label, rep.median, len(rep.values))
    out = _outdir(cfg)
    path = out / "kl.csv"
    write_rows(path, rows)
    write_meta(out / "kl.json", cfg, samples=[str(p) for p in samples])
    return path


def run_bench(spec: ModelSpec, sizes, replicates: int, seed: int, method: str = "exact-ars"):
    """Wall time and profile counts per replicate on random sites in the unit square."""
    rows = []
    run_spec = spec_for_method(spec, method)
    for size in sizes:
        coords = random_stream(seed, 1_000_000 + size).random((size, 2))
        sim = Simulator(run_spec, coords)
        sim.run(method, random_stream(seed, 2_000_000))  # untimed warm-up (loads compiled kernels)
        for i in range(replicates):
            res = sim.run(method, random_stream(seed, i))
            rows.append({"size": size, "replicate": i + 1, "seconds": res.wall_time, "profiles": res.profiles})
    sizes_arr = np.array(sorted(set(sizes)), dtype=float)
    mean_t = np.array([np.mean([r["seconds"] for r in rows if r["size"] == s]) for s in sizes_arr])
    slope = float(np.polyfit(np.log(sizes_arr), np.log(mean_t), 1)[0]) if len(sizes_arr) > 1 else math.nan
    return rows, slope


def cmd_bench(cfg: RunConfig, sizes: str | None = None, replicates: int | None = None) -> Path:
    try:
        size_list = [int(v) for v in (sizes or "25,100,225,400").split(",")]
    except ValueError:
        raise ConfigError(f"--sizes: cannot parse {sizes!r}") from None
    if not all(s >= 1 for s in size_list):
        raise ConfigError("--sizes: sizes must be positive")
    reps = replicates or 3
    rows, slope = run_bench(cfg.model_spec(), size_list, reps, cfg.run.seed, cfg.run.method)
    out = _outdir(cfg)
    path = out / "bench.csv"
    write_rows(path, rows)
    summary = []
    for s in size_list:
        sub = [r for r in rows if r["size"] == s]
        summary.append({"size": s, "mean_seconds": float(np.mean([r["seconds"] for r in sub])),
                        "mean_profiles": float(np.mean([r["profiles"] for r in sub]))})  # fmt: skip
    write_meta(out / "bench.json", cfg, sizes=size_list, replicates=reps, loglog_slope=slope, summary=summary)
    print(f"log-log slope of time vs |K|: {slope:.3f}")
    for row in summary:
        print(f"  |K|={row['size']:5d}  {row['mean_seconds']:.4g} s  {row['mean_profiles']:.1f} profiles")
    return path


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--preset", choices=sorted(PRESETS), help="built-in configuration")
    common.add_argument("--seed", type=int, help="master seed (replicate i uses stream i)")
    common.add_argument("--replicates", type=int, help="number of replicates")
    common.add_argument("--method", help="exact-ars, exact-mh or naive:<n>")
    common.add_argument("--workers", type=int, help="worker processes")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="maxid", description="Exact simulation of max-id processes.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate replicates and write a CSV matrix")
    p = sub.add_parser("coeff", parents=[common], help="theoretical and empirical extremal coefficients")
    p.add_argument("--samples", help="replicate matrix from 'simulate' (enables the empirical column)")
    p.add_argument("--pairs", help="site pairs, 1-based, e.g. 1-2,1-3 (default: all)")
    p.add_argument("--levels", help="quantile levels, e.g. 0.05,0.5,0.95")
    p = sub.add_parser("diagnose", parents=[common], help="per-site marginal KL divergences")
    p.add_argument("--samples", nargs="+", help="one or more replicate matrices")
    p = sub.add_parser("bench", parents=[common], help="timing and profile counts versus |K|")
    p.add_argument("--sizes", help="comma-separated site counts (default 25,100,225,400)")
    p = sub.add_parser("presets", help="list presets or print one as JSON")
    p.add_argument("name", nargs="?")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")  # fmt: skip
    try:
        if args.command == "presets":
            if args.name:
                print(preset(args.name).to_json())
            else:
                for name in sorted(PRESETS):
                    print(name)
            return 0
        cfg = load_config(args)
        if args.command == "simulate":
            path = cmd_simulate(cfg)
        elif args.command == "coeff":
            path = cmd_coeff(cfg, args.samples, args.pairs, args.levels)
        elif args.command == "diagnose":
            path = cmd_diagnose(cfg, args.samples)
        else:
            path = cmd_bench(cfg, args.sizes, args.replicates)
        print(path)
        return 0
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
