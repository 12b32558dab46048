"""Batch driver: ``supgdwr run <config.toml> [--mode M] [--tol X] [--out DIR] [--snapshots]``.

The config file is flat TOML, one ``key = value`` per line::

    problem = "rotating_hill"   # only built-in problem
    eps = 1e-3                  # diffusion, 0 < eps <= 1
    a0 = 50.0                   # hill sharpness
    nx = 16                     # initial mesh cells in x (ny defaults to nx)
    N = 16                      # initial number of slabs
    mode = "adaptive"           # or "uniform"
    theta_tau = 0.3
    theta_h = 0.5
    tol = 0.0
    max_loops = 5
    max_dofs = 300000           # optional cap on space-time DoFs
    stabilization = true        # SUPG on/off
    delta0 = 0.5
    peclet_cutoff = 1.0
    output = "out"
    snapshots = false           # VTK + indicator CSV per slab and loop
    dump_matrices = false       # Matrix Market file of the first slab matrix

Exit status: 0 success, 1 configuration error, 2 solver failure.
"""
from __future__ import annotations

import argparse
import logging
import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .adaptivity import MODES, AdaptivityConfig, ConvergenceReport, SolverFailure, run_loop
from .discretization import uniform_slabs
from .linalg import write_matrix_market
from .mesh import create_rectangle_mesh
from .primal import NO_STABILIZATION, PrimalAssembler, StabilizationParams
from .problems import PROBLEMS, ProblemError
from .vtk import write_slab

log = logging.getLogger("supgdwr")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2


class ConfigError(ValueError):
    pass


# key -> (accepted types, default)
_SCHEMA = {
    "problem": ((str,), "rotating_hill"),
    "eps": ((int, float), 1.0),
    "a0": ((int, float), 50.0),
    "nx": ((int,), 8),
    "ny": ((int,), None),
    "N": ((int,), 8),
    "mode": ((str,), "adaptive"),
    "theta_tau": ((int, float), 0.3),
    "theta_h": ((int, float), 0.5),
    "tol": ((int, float), 0.0),
    "max_loops": ((int,), 5),
    "max_dofs": ((int,), None),
    "stabilization": ((bool,), True),
    "delta0": ((int, float), 0.5),
    "peclet_cutoff": ((int, float), 1.0),
    "output": ((str,), "out"),
    "snapshots": ((bool,), False),
    "dump_matrices": ((bool,), False),
}


@dataclass
class RunConfig:
    problem: str
    eps: float
    a0: float
    nx: int
    ny: int
    N: int
    adaptivity: AdaptivityConfig
    stabilization: StabilizationParams
    output: Path
    snapshots: bool = False
    dump_matrices: bool = False
    source: dict = field(default_factory=dict)


def _line_of(text: str, key: str) -> int | None:
    pat = re.compile(r"^\s*" + re.escape(key) + r"\s*=")
    for no, line in enumerate(text.splitlines(), 1):
        if pat.match(line):
            return no
    return None


def _where(text: str, key: str) -> str:
    line = _line_of(text, key)
    return f"line {line}, field {key!r}" if line else f"field {key!r}"


def parse_config(text: str, base_dir: Path | None = None,
                 overrides: dict | None = None) -> RunConfig:
    """Validate a config text; ``overrides`` (from command-line flags) win
    over file values."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"syntax error: {exc}") from None
    for key, value in raw.items():
        if key not in _SCHEMA:
            raise ConfigError(f"{_where(text, key)}: unknown key")
        types, _ = _SCHEMA[key]
        ok = isinstance(value, types) and not (
            isinstance(value, bool) and bool not in types)
        if not ok:
            names = "/".join(t.__name__ for t in types)
            raise ConfigError(f"{_where(text, key)}: expected {names}, got {value!r}")
    vals = {k: d for k, (_, d) in _SCHEMA.items()}
    vals.update(raw)
    vals.update({k: v for k, v in (overrides or {}).items() if v is not None})

    def check(cond, key, msg):
        if not cond:
            raise ConfigError(f"{_where(text, key)}: {msg} (got {vals[key]!r})")

    for key in ("eps", "a0", "theta_tau", "theta_h", "tol", "delta0", "peclet_cutoff"):
        check(math.isfinite(vals[key]) or (key == "tol" and vals[key] == math.inf),
              key, "must be a finite number")
    check(vals["problem"] in PROBLEMS, "problem", f"must be one of {sorted(PROBLEMS)}")
    check(0.0 < vals["eps"] <= 1.0, "eps", "must lie in (0, 1]")
    check(vals["a0"] > 0, "a0", "must be positive")
    if vals["ny"] is None:
        vals["ny"] = vals["nx"]
    for key in ("nx", "ny", "N", "max_loops"):
        check(vals[key] >= 1, key, "must be >= 1")
    check(vals["mode"] in MODES, "mode", f"must be one of {list(MODES)}")
    check(0.0 <= vals["theta_tau"] <= 1.0, "theta_tau", "must lie in [0, 1]")
    check(0.0 < vals["theta_h"] <= 1.0, "theta_h", "must lie in (0, 1]")
    check(vals["tol"] >= 0.0, "tol", "must be >= 0")
    check(vals["max_dofs"] is None or vals["max_dofs"] >= 1, "max_dofs", "must be >= 1")
    check(vals["delta0"] >= 0.0, "delta0", "must be >= 0")
    check(vals["peclet_cutoff"] >= 0.0, "peclet_cutoff", "must be >= 0")

    adapt = AdaptivityConfig(theta_tau=float(vals["theta_tau"]), theta_h=float(vals["theta_h"]),
                             tol=float(vals["tol"]), max_loops=int(vals["max_loops"]),
                             mode=vals["mode"], max_dofs=vals["max_dofs"])
    stab = (StabilizationParams(float(vals["delta0"]), float(vals["peclet_cutoff"]))
            if vals["stabilization"] else NO_STABILIZATION)
    out = Path(vals["output"])
    if not out.is_absolute() and base_dir is not None and (overrides or {}).get("output") is None:
        out = base_dir / out
    return RunConfig(problem=vals["problem"], eps=float(vals["eps"]), a0=float(vals["a0"]),
                     nx=int(vals["nx"]), ny=int(vals["ny"]), N=int(vals["N"]),
                     adaptivity=adapt, stabilization=stab, output=out,
                     snapshots=bool(vals["snapshots"]),
                     dump_matrices=bool(vals["dump_matrices"]), source=vals)


def execute(cfg: RunConfig) -> ConvergenceReport:
    """Run the study described by ``cfg`` and write its artifacts."""
    problem = PROBLEMS[cfg.problem](a0=cfg.a0, eps=cfg.eps)
    mesh = create_rectangle_mesh(problem.domain, cfg.nx, cfg.ny)
    slabs = uniform_slabs(mesh, problem.T, cfg.N)
    cfg.output.mkdir(parents=True, exist_ok=True)

    def on_loop(state):
        i = state.loop
        if cfg.snapshots:
            for n, slab in enumerate(state.slabs):
                write_slab(cfg.output / f"slab_{n + 1}_loop_{i}.vtk", slab, state.u, state.z,
                           n, state.indicators)
            state.indicators.write_csv(cfg.output / f"indicators_loop_{i}.csv")
            state.indicators.write_slab_csv(cfg.output / f"slab_indicators_loop_{i}.csv")
        if cfg.dump_matrices:
            asm = PrimalAssembler(problem, cfg.stabilization)
            system = asm.system(state.slabs[0], None, True)
            write_matrix_market(cfg.output / f"primal_slab_1_loop_{i}.mtx", system.matrix,
                                comment=f"reduced primal matrix, slab 1, loop {i}")

    report_path = cfg.output / "report.csv"
    try:
        report = run_loop(problem, slabs, cfg.adaptivity, cfg.stabilization, on_loop=on_loop)
    except SolverFailure as exc:
        exc.report.write_csv(report_path)
        (cfg.output / "summary.txt").write_text(exc.report.summary_table(), encoding="utf-8")
        raise
    report.write_csv(report_path)
    (cfg.output / "summary.txt").write_text(report.summary_table(), encoding="utf-8")
    return report


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="supgdwr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log every loop")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a uniform or adaptive study")
    run.add_argument("config", help="flat TOML configuration file")
    run.add_argument("--mode", choices=MODES, help="override the refinement mode")
    run.add_argument("--tol", type=float, help="override the stopping tolerance")
    run.add_argument("--out", help="override the output directory")
    run.add_argument("--snapshots", action="store_true", default=None,
                     help="write VTK snapshots and indicator tables")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    path = Path(args.config)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        print(f"error: cannot read config {path}: {exc.strerror}", file=sys.stderr)
        return EXIT_CONFIG
    overrides = {"mode": args.mode, "tol": args.tol, "output": args.out,
                 "snapshots": args.snapshots}
    try:
        cfg = parse_config(text, path.parent, overrides)
        report = execute(cfg)
    except (ConfigError, ProblemError) as exc:
        print(f"error: {path}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverFailure as exc:
        print(f"error: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    sys.stdout.write(report.summary_table())
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
