"""Parameter sweeps over (m0_minus, m1_plus) and the ``echolab`` command line."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .echo_estimator import append_csv, estimate_echo_index, realization_seeds
from .errors import ConfigError, EchoLabError, InvalidSpec
from .map_atlas import (
    MapFamily,
    attractor_sequence_mmin,
    build_atlas,
    esn_funnel_mmin,
    family_from_config,
)
from .nonautonomous_sim import esp_test, iterate_cocycle, pullback_cloud, sample_ensemble, write_trajectory
from .pgm import write_pgm
from .seeding import derive_seed
from .symbolic_inputs import (
    RepeatSpec,
    SymbolSequence,
    build_forbidden_set,
    generate_sequence,
    load_spec,
    read_sequence,
    validate_sequence,
    write_sequence,
)

log = logging.getLogger("echolab")

THREADS_ENV = "ECHOLAB_THREADS"
CSV_HEADER = ["m0_minus", "m1_plus", "index", "seed", "n_clusters_flagged"]


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------


def _values(spec, name) -> tuple:
    """Inclusive [lo, hi] range, or ``{"values": [...]}``, to a tuple of ints."""
    if isinstance(spec, dict):
        vals = spec.get("values")
    elif isinstance(spec, (list, tuple)) and len(spec) == 2:
        lo, hi = int(spec[0]), int(spec[1])
        vals = range(lo, hi + 1)
    else:
        vals = spec
    try:
        out = tuple(sorted({int(v) for v in vals}))
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: expected [lo, hi] or {{'values': [...]}}") from None
    if not out:
        raise ConfigError(f"{name}: empty range")
    return out


@dataclass(frozen=True)
class SweepConfig:
    preset: str = "esn2d"
    family: Optional[dict] = None
    m0_minus: tuple = tuple(range(1, 41))
    m1_plus: tuple = tuple(range(1, 41))
    m0_plus: int = 40
    m1_minus: int = 1
    p0: float = 0.9
    p1: float = 0.95
    T: int = 2000
    n_ic: int = 50
    cluster_tol: float = 1e-3
    base_seed: int = 0
    realizations: int = 1
    threads: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "m0_minus", _values(self.m0_minus, "m0_minus"))
        object.__setattr__(self, "m1_plus", _values(self.m1_plus, "m1_plus"))
        if self.T < 1:
            raise ConfigError("T must be at least 1")
        if self.n_ic < 1:
            raise ConfigError("n_ic must be at least 1")
        if self.realizations < 1:
            raise ConfigError("realizations must be at least 1")
        if not self.cluster_tol > 0:
            raise ConfigError("cluster_tol must be positive")
        if self.base_seed < 0:
            raise ConfigError("base_seed must be non-negative")
        for m0 in self.m0_minus:
            for m1 in self.m1_plus:
                try:
                    self.cell_spec(m0, m1)
                except InvalidSpec as exc:
                    raise ConfigError(f"cell (m0_minus={m0}, m1_plus={m1}): {exc}") from None

    def cell_spec(self, m0_minus: int, m1_plus: int) -> RepeatSpec:
        return RepeatSpec.two_symbol(m0_minus, self.m0_plus, self.m1_minus, m1_plus, self.p0, self.p1)

    def cell_seed(self, m0_minus: int, m1_plus: int) -> int:
        return derive_seed(self.base_seed, m0_minus, m1_plus)

    def make_family(self) -> MapFamily:
        return family_from_config(self.family if self.family else {"preset": self.preset})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["m0_minus"] = {"values": list(self.m0_minus)}
        d["m1_plus"] = {"values": list(self.m1_plus)}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SweepConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return doc


def resolve_threads(requested: Optional[int]) -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            requested = int(env)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer") from None
    n = requested or os.cpu_count() or 1
    if n < 1:
        raise ConfigError("thread count must be positive")
    return n


# --------------------------------------------------------------------------
# Sweep
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Cell:
    m0_minus: int
    m1_plus: int
    seed: int
    index: Optional[float] = None
    indices: tuple = ()
    cluster_sizes: tuple = ()
    n_clusters_flagged: int = 0
    error: Optional[str] = None

    @property
    def gray(self) -> int:
        return 0 if self.index is None else int(math.floor(self.index + 0.5))


@dataclass(frozen=True)
class SweepResult:
    config: SweepConfig
    cells: tuple
    warnings: tuple = ()

    @property
    def failures(self) -> list:
        return [c for c in self.cells if c.error is not None]

    def grid(self) -> np.ndarray:
        """Rounded index, rows indexed by m1_plus, columns by m0_minus (0 = failed)."""
        cols = {m: j for j, m in enumerate(self.config.m0_minus)}
        rows = {m: i for i, m in enumerate(self.config.m1_plus)}
        out = np.zeros((len(rows), len(cols)), dtype=np.int64)
        for c in self.cells:
            out[rows[c.m1_plus], cols[c.m0_minus]] = c.gray
        return out

    def cell(self, m0_minus, m1_plus) -> Cell:
        for c in self.cells:
            if c.m0_minus == m0_minus and c.m1_plus == m1_plus:
                return c
        raise KeyError((m0_minus, m1_plus))


_worker_state = {}


def _init_worker(config: SweepConfig, family: MapFamily):
    _worker_state["config"] = config
    _worker_state["family"] = family


def run_cell(config: SweepConfig, family: MapFamily, m0_minus: int, m1_plus: int) -> Cell:
    seed = config.cell_seed(m0_minus, m1_plus)
    try:
        spec = config.cell_spec(m0_minus, m1_plus)
        ests = []
        for r in range(config.realizations):
            s_seq, s_ic = realization_seeds(seed, r)
            v = generate_sequence(spec, config.T, s_seq)
            ests.append(estimate_echo_index(family, v, config.n_ic, config.T, config.cluster_tol, s_ic))
    except Exception as exc:  # recorded, never fatal for the sweep
        return Cell(m0_minus, m1_plus, seed, error=f"{type(exc).__name__}: {exc}")
    indices = tuple(e.index for e in ests)
    index = indices[0] if len(indices) == 1 else sum(indices) / len(indices)
    return Cell(
        m0_minus,
        m1_plus,
        seed,
        index=index,
        indices=indices,
        cluster_sizes=tuple(tuple(e.cluster_sizes) for e in ests),
        n_clusters_flagged=sum(e.n_clusters_flagged for e in ests),
    )


def _run_cell_task(args):
    return run_cell(_worker_state["config"], _worker_state["family"], *args)


def monotonicity_warnings(result: SweepResult) -> list:
    """Columns where index 1 at some m1_plus is followed by a larger index."""
    out = []
    for m0 in result.config.m0_minus:
        col = sorted((c for c in result.cells if c.m0_minus == m0 and c.index is not None), key=lambda c: c.m1_plus)
        seen_one = None
        for c in col:
            if c.gray == 1 and seen_one is None:
                seen_one = c.m1_plus
            elif seen_one is not None and c.gray != 1:
                out.append(
                    f"m0_minus={m0}: index {c.gray} at m1_plus={c.m1_plus} after index 1 at m1_plus={seen_one}"
                )
                break
    return out


def run_sweep(config: SweepConfig, threads: Optional[int] = None) -> SweepResult:
    """Estimate the echo index on every (m0_minus, m1_plus) cell.

    Cells are ordered by (m0_minus, m1_plus); each is seeded from its own
    coordinates, so the result does not depend on the worker count.
    """
    family = config.make_family()
    tasks = [(m0, m1) for m0 in config.m0_minus for m1 in config.m1_plus]
    n = resolve_threads(threads if threads is not None else config.threads)
    n = min(n, len(tasks))
    if n <= 1:
        cells = [run_cell(config, family, *t) for t in tasks]
    else:
        chunk = max(1, len(tasks) // (4 * n))
        with ProcessPoolExecutor(n, initializer=_init_worker, initargs=(config, family)) as pool:
            cells = list(pool.map(_run_cell_task, tasks, chunksize=chunk))
    result = SweepResult(config, tuple(cells))
    warns = monotonicity_warnings(result)
    for w in warns:
        log.warning("non-monotone boundary: %s", w)
    for c in result.failures:
        log.error("cell (%d, %d) failed: %s", c.m0_minus, c.m1_plus, c.error)
    return replace(result, warnings=tuple(warns))


def _fmt_index(c: Cell) -> str:
    if c.index is None:
        return ""
    if isinstance(c.index, int):
        return str(c.index)
    return f"{c.index:.6g}"


def format_csv(result: SweepResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for c in result.cells:
        w.writerow([c.m0_minus, c.m1_plus, _fmt_index(c), c.seed, "" if c.error else c.n_clusters_flagged])
    return buf.getvalue()


def heatmap(result: SweepResult) -> np.ndarray:
    """Rows run from the largest m1_plus at the top down to the smallest."""
    return result.grid()[::-1]


def metadata(result: SweepResult) -> dict:
    return {
        "version": __version__,
        "config": result.config.to_dict(),
        "family": result.config.make_family().describe(),
        "cells": [
            {
                "m0_minus": c.m0_minus,
                "m1_plus": c.m1_plus,
                "seed": c.seed,
                "index": c.index,
                "indices": list(c.indices),
                "cluster_sizes": [list(s) for s in c.cluster_sizes],
                "n_clusters_flagged": c.n_clusters_flagged,
                "error": c.error,
            }
            for c in result.cells
        ],
        "monotonicity_warnings": list(result.warnings),
        "failures": len(result.failures),
    }


def emit_outputs(result: SweepResult, out_dir, stem: str = "sweep") -> dict:
    """Write ``<stem>.csv``, ``<stem>.pgm`` and ``<stem>.meta.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "csv": out / f"{stem}.csv",
        "pgm": out / f"{stem}.pgm",
        "meta": out / f"{stem}.meta.json",
    }
    with open(paths["csv"], "w", newline="") as fh:
        fh.write(format_csv(result))
    img = heatmap(result)
    write_pgm(paths["pgm"], img, maxval=max(1, int(img.max())))
    paths["meta"].write_text(json.dumps(metadata(result), indent=2) + "\n")
    return paths


# --------------------------------------------------------------------------
# Command line
# --------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """Usage errors count as configuration errors (exit 1)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _bound(text):
    return None if text.lower() in ("inf", "none", "unbounded") else int(text)


def _global_flags(p, suppress):
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--preset", default=d, help="map family preset (esn2d, diabolic)")
    p.add_argument("--config", default=d, help="JSON config file")
    p.add_argument("--seed", type=int, default=d, help="base seed")
    p.add_argument("--threads", type=int, default=d, help="worker processes (ECHOLAB_THREADS overrides)")
    p.add_argument("--out-dir", default=d if suppress else ".", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="echolab", description="Echo index experiments for input-driven maps.")
    parser.add_argument("--version", action="version", version=__version__)
    _global_flags(parser, suppress=False)
    glob = _Parser(add_help=False)
    _global_flags(glob, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    inputs = sub.add_parser("inputs", help="symbol sequences")
    isub = inputs.add_subparsers(dest="action", required=True, parser_class=_Parser)
    for name in ("gen", "validate"):
        q = isub.add_parser(name, parents=[glob])
        q.add_argument("--spec", help="RepeatSpec JSON file")
        q.add_argument("--m-minus", type=int, nargs="+")
        q.add_argument("--m-plus", type=_bound, nargs="+", help="integers or 'inf'")
        if name == "gen":
            q.add_argument("--p", type=float, nargs="+")
            q.add_argument("--length", type=int, required=True)
            q.add_argument("--origin", type=int, default=0)
            q.add_argument("--start-symbol", type=int)
            q.add_argument("-o", "--output", help="sequence file (default stdout)")
        else:
            q.add_argument("sequence", help="sequence file")

    a = sub.add_parser("atlas", parents=[glob], help="fixed points, basins and transition table")
    a.add_argument("--grid-res", type=int, default=200)
    a.add_argument("--seeds-per-dim", type=int, default=21)
    a.add_argument("--max-iter", type=int, default=2000)
    a.add_argument("--ball-radius", type=float, default=1e-3)

    def window_args(q):
        src = q.add_mutually_exclusive_group(required=True)
        src.add_argument("--sequence", help="sequence file")
        src.add_argument("--constant", type=int, help="constant input symbol")

    e = sub.add_parser("echo", parents=[glob], help="estimate the echo index of one sequence")
    window_args(e)
    e.add_argument("--T", type=int, default=2000)
    e.add_argument("--n-ic", type=int, default=50)
    e.add_argument("--tol", type=float, default=1e-3)
    e.add_argument("--csv", help="append a row to this CSV file")

    s = sub.add_parser("esp", parents=[glob], help="pullback test of the echo state property")
    window_args(s)
    s.add_argument("--n", type=int, default=500)
    s.add_argument("--eps", type=float, default=1e-6)
    s.add_argument("--ensemble", type=int, default=50)
    s.add_argument("--trajectory", action="store_true", help="also dump the first ensemble member's path")

    m = sub.add_parser("mmin", parents=[glob], help="funnelling time estimates")
    m.add_argument("--map", type=int, help="target map k (attractor-tracking estimate)")
    m.add_argument("--eps", type=float, default=0.05)
    m.add_argument("--grid-res", type=int, default=100)

    w = sub.add_parser("sweep", parents=[glob], help="(m0_minus, m1_plus) echo index sweep")
    w.add_argument("--m0-minus", type=int, nargs=2, metavar=("LO", "HI"))
    w.add_argument("--m1-plus", type=int, nargs=2, metavar=("LO", "HI"))
    w.add_argument("--m1-plus-values", type=int, nargs="+")
    w.add_argument("--m0-plus", type=int)
    w.add_argument("--m1-minus", type=int)
    w.add_argument("--p0", type=float)
    w.add_argument("--p1", type=float)
    w.add_argument("--T", type=int)
    w.add_argument("--n-ic", type=int)
    w.add_argument("--tol", type=float, dest="cluster_tol")
    w.add_argument("--realizations", type=int)
    return parser


def _family(args, cfg: dict) -> MapFamily:
    if cfg.get("family"):
        return family_from_config(cfg["family"])
    return family_from_config({"preset": args.preset or cfg.get("preset", "esn2d")})


def _spec(args) -> RepeatSpec:
    if args.spec:
        try:
            return load_spec(args.spec)
        except OSError as exc:
            raise ConfigError(f"cannot read spec: {exc}") from None
    if not args.m_minus or not args.m_plus:
        raise ConfigError("give --spec or both --m-minus and --m-plus")
    p = getattr(args, "p", None)
    return RepeatSpec(tuple(args.m_minus), tuple(args.m_plus), tuple(p) if p else None)


def _window(args, steps_back: int, steps_fwd: int) -> SymbolSequence:
    if args.sequence:
        try:
            return read_sequence(args.sequence)
        except OSError as exc:
            raise ConfigError(f"cannot read sequence: {exc}") from None
    return SymbolSequence.constant(args.constant, steps_back + max(steps_fwd, 1), origin=steps_back)


def _print_json(doc):
    print(json.dumps(doc, indent=2))


def cmd_inputs(args, cfg) -> int:
    spec = _spec(args)
    if args.action == "gen":
        seed = args.seed if args.seed is not None else cfg.get("base_seed", 0)
        v = generate_sequence(spec, args.length, seed, args.start_symbol, args.origin)
        if args.output:
            write_sequence(v, args.output)
        else:
            write_sequence(v, sys.stdout)
        return 0
    try:
        v = read_sequence(args.sequence, spec.alphabet_size)
    except OSError as exc:
        raise ConfigError(f"cannot read sequence: {exc}") from None
    bad = validate_sequence(v, build_forbidden_set(spec))
    for pos, w in bad:
        print(f"{pos - v.origin}\t{''.join(map(str, w))}")
    print(f"{len(bad)} violation(s)", file=sys.stderr)
    return 2 if bad else 0


def cmd_atlas(args, cfg) -> int:
    fam = _family(args, cfg)
    atlas = build_atlas(fam, args.seeds_per_dim, grid_res=args.grid_res, max_iter=args.max_iter,
                        ball_radius=args.ball_radius)
    paths = atlas.write(args.out_dir)
    print(f"L = {atlas.L}; unresolved fraction {atlas.unresolved_fraction:.4f}")
    for p in paths:
        print(p)
    return 2 if atlas.table.straddles else 0


def cmd_echo(args, cfg) -> int:
    fam = _family(args, cfg)
    v = _window(args, 0, args.T)
    seed = args.seed if args.seed is not None else cfg.get("base_seed", 0)
    est = estimate_echo_index(fam, v, args.n_ic, args.T, args.tol, seed)
    _print_json(est.to_dict())
    if args.csv:
        append_csv(args.csv, [est])
    return 0


def cmd_esp(args, cfg) -> int:
    fam = _family(args, cfg)
    v = _window(args, 2 * args.n, 0)
    seed = args.seed if args.seed is not None else cfg.get("base_seed", 0)
    res = esp_test(fam, v, args.n, args.eps, args.ensemble, seed)
    ens = sample_ensemble(fam.box, args.ensemble, seed)
    doc = {"result": res.to_dict(), "pullback": pullback_cloud(fam, v, args.n, ens).to_dict()}
    _print_json(doc)
    if args.trajectory:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        traj = iterate_cocycle(fam, v, ens.points[0], -args.n, args.n)
        write_trajectory(out / "trajectory.csv", v, traj, -args.n)
    return 0


def cmd_mmin(args, cfg) -> int:
    fam = _family(args, cfg)
    if args.map is None:
        if fam.name != "esn2d" and not cfg.get("family"):
            raise ConfigError("the funnelling estimate needs an ESN family; pass --map for others")
        print(esn_funnel_mmin(fam, args.grid_res))
        return 0
    atlas = build_atlas(fam, grid_res=None)
    print(attractor_sequence_mmin(atlas, args.map, eps=args.eps))
    return 0


def sweep_config(args, cfg: dict) -> SweepConfig:
    cfg = dict(cfg)
    if args.preset:
        cfg["preset"] = args.preset
    if args.seed is not None:
        cfg["base_seed"] = args.seed
    if args.threads is not None:
        cfg["threads"] = args.threads
    if args.m0_minus:
        cfg["m0_minus"] = list(args.m0_minus)
    if args.m1_plus:
        cfg["m1_plus"] = list(args.m1_plus)
    if args.m1_plus_values:
        cfg["m1_plus"] = {"values": args.m1_plus_values}
    for key in ("m0_plus", "m1_minus", "p0", "p1", "T", "n_ic", "cluster_tol", "realizations"):
        val = getattr(args, key)
        if val is not None:
            cfg[key] = val
    return SweepConfig.from_dict(cfg)


def cmd_sweep(args, cfg) -> int:
    config = sweep_config(args, cfg)
    result = run_sweep(config)
    paths = emit_outputs(result, args.out_dir)
    for p in paths.values():
        print(p)
    if result.warnings:
        print(f"{len(result.warnings)} column(s) with a non-monotone boundary", file=sys.stderr)
    return 2 if result.failures else 0


COMMANDS = {
    "inputs": cmd_inputs,
    "atlas": cmd_atlas,
    "echo": cmd_echo,
    "esp": cmd_esp,
    "mmin": cmd_mmin,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else {}
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, InvalidSpec) as exc:
        print(f"echolab: config error: {exc}", file=sys.stderr)
        return 1
    except EchoLabError as exc:
        print(f"echolab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
