"""The DWR loop: solve, estimate, mark, refine in space and time."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .discretization import SpaceTimeSlab, build_space, check_slabs
from .dual import DualAssembler, solve_dual
from .estimator import ErrorIndicators, estimate
from .linalg import SingularSystemError
from .mesh import Mesh, refine, refine_uniform
from .primal import PrimalAssembler, StabilizationParams, solve_primal
from .problems import (GoalFunctional, ProblemData, UndefinedEffectivity, effectivity,
                       exact_goal_error, goal_l2_error)

log = logging.getLogger(__name__)

MODES = ("adaptive", "uniform")
REPORT_COLUMNS = ("loop", "N", "N_DoF_tot", "N_DoF_max", "J_error",
                  "eta_signed", "eta_abs", "I_eff")


@dataclass(frozen=True)
class AdaptivityConfig:
    theta_tau: float = 0.3
    theta_h: float = 0.5
    tol: float = 0.0
    max_loops: int = 5
    mode: str = "adaptive"
    max_dofs: int | None = None
    """Stop once a loop reaches this many space-time DoFs (``None``: no cap)."""

    def __post_init__(self):
        if not 0.0 <= self.theta_tau <= 1.0:
            raise ValueError(f"theta_tau must lie in [0, 1], got {self.theta_tau}")
        if not 0.0 < self.theta_h <= 1.0:
            raise ValueError(f"theta_h must lie in (0, 1], got {self.theta_h}")
        if isinstance(self.max_loops, bool) or not isinstance(self.max_loops, int) \
                or self.max_loops < 1:
            raise ValueError(f"max_loops must be an integer >= 1, got {self.max_loops}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if math.isnan(self.tol) or self.tol < 0:
            raise ValueError(f"tol must be >= 0, got {self.tol}")
        if self.max_dofs is not None and self.max_dofs < 1:
            raise ValueError(f"max_dofs must be positive, got {self.max_dofs}")


# -- marking --------------------------------------------------------------

def mark_time(ind: ErrorIndicators, theta_tau: float) -> list[int]:
    """0-based indices of the ``round(theta_tau N)`` slabs with the largest
    ``eta^n = sum_K |eta_K^n|``; ties go to the lower index.

    Halves round up, so ``theta_tau = 0.34`` on three slabs marks one.
    """
    N = ind.N
    if N < 1:
        raise ValueError("no time intervals to mark")
    count = min(N, int(math.floor(theta_tau * N + 0.5)))
    if count == 0:
        return []
    eta = ind.per_slab
    order = np.argsort(-eta, kind="stable")
    return sorted(int(n) for n in order[:count])


def dorfler_prefix(values, theta: float) -> np.ndarray:
    """Indices of the shortest prefix of ``values`` sorted descending (ties by
    index) whose sum reaches ``theta`` times the total."""
    v = np.abs(np.asarray(values, dtype=float))
    total = v.sum()
    if total == 0.0:
        return np.zeros(0, dtype=np.int64)
    order = np.argsort(-v, kind="stable")
    csum = np.cumsum(v[order])
    target = theta * total * (1.0 - 1e-12)
    k = int(np.searchsorted(csum, target, side="left")) + 1
    chosen = order[:min(k, len(v))]
    return np.sort(chosen[v[chosen] > 0.0])


def mark_space(ind: ErrorIndicators, theta_h: float) -> list[np.ndarray]:
    """Per-slab Dörfler marking on ``|eta_K^n|``."""
    return [dorfler_prefix(c, theta_h) for c in ind.cells]


# -- refinement -----------------------------------------------------------

class _MeshPool:
    """Shares one Mesh object between slabs with identical cells so that the
    operator and factorization caches keyed on meshes are reused."""

    def __init__(self):
        self._pool: dict = {}

    def get(self, mesh: Mesh) -> Mesh:
        key = (mesh.nx, mesh.ny, mesh.domain, mesh.keys.tobytes())
        return self._pool.setdefault(key, mesh)


def adapt(slabs, time_marks, space_marks) -> list[SpaceTimeSlab]:
    """Refine the marked cells of each slab, then bisect the marked slabs.

    ``time_marks`` are 0-based slab indices; ``space_marks[n]`` holds cell
    ids of slab ``n``'s mesh.
    """
    check_slabs(slabs)
    tmarks = set(int(n) for n in time_marks)
    if any(n < 0 or n >= len(slabs) for n in tmarks):
        raise ValueError("time mark out of range")
    if len(space_marks) != len(slabs):
        raise ValueError("one set of space marks per slab is required")
    pool = _MeshPool()
    refined: dict = {}
    out = []
    for n, slab in enumerate(slabs):
        marks = np.unique(np.asarray(space_marks[n], dtype=np.int64))
        if len(marks):
            ck = (id(slab.mesh), marks.tobytes())
            if ck not in refined:
                refined[ck] = pool.get(refine(slab.mesh, marks))
            mesh = refined[ck]
        else:
            mesh = pool.get(slab.mesh)
        if n in tmarks:
            mid = 0.5 * (slab.t0 + slab.t1)
            out.append(SpaceTimeSlab(slab.t0, mid, mesh))
            out.append(SpaceTimeSlab(mid, slab.t1, mesh))
        else:
            out.append(SpaceTimeSlab(slab.t0, slab.t1, mesh))
    return out


def refine_all(slabs, space_times: int = 1, time_times: int = 2) -> list[SpaceTimeSlab]:
    """Uniform step: every mesh refined ``space_times`` times, every slab
    bisected ``time_times`` times."""
    meshes: dict = {}
    out = list(slabs)
    new = []
    for slab in out:
        m = meshes.get(id(slab.mesh))
        if m is None:
            m = refine_uniform(slab.mesh, space_times)
            meshes[id(slab.mesh)] = m
        new.append(SpaceTimeSlab(slab.t0, slab.t1, m))
    out = new
    for _ in range(time_times):
        nxt = []
        for slab in out:
            mid = 0.5 * (slab.t0 + slab.t1)
            nxt.append(SpaceTimeSlab(slab.t0, mid, slab.mesh))
            nxt.append(SpaceTimeSlab(mid, slab.t1, slab.mesh))
        out = nxt
    return out


# -- the loop -------------------------------------------------------------

@dataclass
class LoopRecord:
    loop: int
    N: int
    n_dof_tot: int
    n_dof_max: int
    J_error: float | None
    eta_signed: float
    eta_abs: float
    I_eff: float | None

    def as_row(self) -> list[str]:
        def num(v):
            return "" if v is None else f"{v:.5e}"
        return [str(self.loop), str(self.N), str(self.n_dof_tot), str(self.n_dof_max),
                num(self.J_error), num(self.eta_signed), num(self.eta_abs), num(self.I_eff)]


@dataclass
class ConvergenceReport:
    records: list = field(default_factory=list)
    stop_reason: str = ""

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i) -> LoopRecord:
        return self.records[i]

    def column(self, name: str) -> list:
        attr = {"N_DoF_tot": "n_dof_tot", "N_DoF_max": "n_dof_max"}.get(name, name)
        return [getattr(r, attr) for r in self.records]

    def to_csv(self) -> str:
        lines = [",".join(REPORT_COLUMNS)]
        lines += [",".join(r.as_row()) for r in self.records]
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_csv())

    def summary_table(self) -> str:
        """Plain-text table with the columns N_DoF_tot, N_DoF_max, N, J(e),
        |eta|, I_eff."""
        head = ["N_DoF_tot", "N_DoF_max", "N", "J(e)", "|eta|", "I_eff"]
        rows = []
        for r in self.records:
            rows.append([str(r.n_dof_tot), str(r.n_dof_max), str(r.N),
                         "-" if r.J_error is None else f"{r.J_error:.3e}",
                         f"{abs(r.eta_signed):.3e}",
                         "-" if r.I_eff is None else f"{r.I_eff:.3f}"])
        widths = [max(len(h), *(len(row[i]) for row in rows)) if rows else len(h)
                  for i, h in enumerate(head)]
        fmt = "  ".join("{:>%d}" % w for w in widths)
        out = [fmt.format(*head), "  ".join("-" * w for w in widths)]
        out += [fmt.format(*row) for row in rows]
        return "\n".join(out) + "\n"


class SolverFailure(RuntimeError):
    """A linear solve failed; ``report`` holds the loops completed so far."""

    def __init__(self, message: str, report: ConvergenceReport):
        super().__init__(message)
        self.report = report


@dataclass
class LoopState:
    """Everything computed in one loop, handed to the ``on_loop`` callback."""

    loop: int
    slabs: list
    u: object
    z: object
    indicators: ErrorIndicators
    record: LoopRecord


def dof_counts(slabs, p: int = 1) -> tuple[int, int]:
    sizes = [build_space(s.mesh, p).n_dofs for s in slabs]
    return int(sum(sizes)), int(max(sizes))


def run_loop(problem: ProblemData, slabs, config: AdaptivityConfig,
             params: StabilizationParams,
             goal: Callable[[ProblemData, object], GoalFunctional] = goal_l2_error,
             on_loop: Callable[[LoopState], None] | None = None) -> ConvergenceReport:
    """Run DWR loops from the initial ``slabs``.

    ``goal`` builds the goal functional from the loop's primal solution.
    The loop stops when ``sum |eta_K^n| < tol``, after ``max_loops`` loops,
    or once ``N_DoF_tot >= max_dofs``.
    """
    check_slabs(slabs)
    report = ConvergenceReport()
    for i in range(config.max_loops):
        try:
            state = _one_loop(i, problem, slabs, params, goal)
        except (SingularSystemError, FloatingPointError, np.linalg.LinAlgError) as exc:
            report.stop_reason = f"solver failure in loop {i}: {exc}"
            raise SolverFailure(report.stop_reason, report) from exc
        rec = state.record
        for name in ("eta_signed", "eta_abs", "J_error", "I_eff"):
            v = getattr(rec, name)
            if v is not None and not math.isfinite(v):
                report.records.append(rec)
                report.stop_reason = f"non-finite {name} in loop {i}"
                raise SolverFailure(report.stop_reason, report)
        report.records.append(rec)
        log.info("loop %d: N=%d dofs=%d J(e)=%s eta=%.4e", i, rec.N, rec.n_dof_tot,
                 rec.J_error, rec.eta_signed)
        if on_loop is not None:
            on_loop(state)
        if rec.eta_abs < config.tol:
            report.stop_reason = "tolerance reached"
            break
        if config.max_dofs is not None and rec.n_dof_tot >= config.max_dofs:
            report.stop_reason = "DoF limit reached"
            break
        if i == config.max_loops - 1:
            report.stop_reason = "loop limit reached"
            break
        if config.mode == "uniform":
            slabs = refine_all(slabs)
        else:
            ind = state.indicators
            slabs = adapt(slabs, mark_time(ind, config.theta_tau),
                          mark_space(ind, config.theta_h))
    return report


def _one_loop(i, problem, slabs, params, goal_builder) -> LoopState:
    u = solve_primal(slabs, problem, params, PrimalAssembler(problem, params))
    goal = goal_builder(problem, u)
    z = solve_dual(slabs, goal, u, problem, params, assembler=DualAssembler(problem, params))
    ind = estimate(slabs, u, z, problem, params)
    n_tot, n_max = dof_counts(slabs)
    Je = I_eff = None
    if problem.exact is not None:
        Je = exact_goal_error(problem, u, goal)
        try:
            I_eff = effectivity(ind.signed, Je)
        except UndefinedEffectivity:
            I_eff = None
    rec = LoopRecord(loop=i, N=len(slabs), n_dof_tot=n_tot, n_dof_max=n_max,
                     J_error=Je, eta_signed=ind.signed, eta_abs=ind.absolute, I_eff=I_eff)
    return LoopState(i, slabs, u, z, ind, rec)
