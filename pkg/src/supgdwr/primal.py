"""SUPG-stabilized dG(0)-in-time / Q1-in-space primal solver."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .assembly import ReducedSystem, SlabOperators, cell_fields, load_vector, slab_operators
from .discretization import (SPACE_QUAD, TIME_QUAD, FESpace, SpaceTimeFunction,
                             SpaceTimeSlab, build_space, check_slabs, cross_load,
                             transfer)
from .linalg import BoundedCache, Factorization
from .problems import ProblemData

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StabilizationParams:
    """``delta_K = delta0 h_K / |b|_K`` on cells with local Peclet number
    ``|b|_K h_K / (2 eps)`` above ``peclet_cutoff``, zero elsewhere."""

    delta0: float = 0.5
    peclet_cutoff: float = 1.0
    enabled: bool = True

    def __post_init__(self):
        if self.delta0 < 0:
            raise ValueError(f"delta0 must be >= 0, got {self.delta0}")
        if self.peclet_cutoff < 0:
            raise ValueError(f"peclet_cutoff must be >= 0, got {self.peclet_cutoff}")


NO_STABILIZATION = StabilizationParams(enabled=False)


def delta_K(h_K, b_norm, eps: float, params: StabilizationParams) -> np.ndarray:
    """Stabilization parameter for cells of diameter ``h_K`` with local
    convection magnitude ``b_norm``."""
    h_K, b_norm = np.broadcast_arrays(np.asarray(h_K, dtype=float),
                                      np.asarray(b_norm, dtype=float))
    out = np.zeros(h_K.shape)
    if not params.enabled or params.delta0 == 0:
        return out
    active = b_norm > 0
    pe = np.where(active, b_norm * h_K / (2.0 * eps), 0.0)
    sel = active & (pe > params.peclet_cutoff)
    out[sel] = params.delta0 * h_K[sel] / b_norm[sel]
    return out


def cell_deltas(space: FESpace, problem: ProblemData,
                params: StabilizationParams) -> np.ndarray:
    cf = cell_fields(space, SPACE_QUAD)
    bq = problem.convection(cf.x, cf.y)
    b_inf = np.sqrt((bq ** 2).sum(axis=-1)).max(axis=1)
    return delta_K(space.mesh.cell_diameter, b_inf, problem.eps, params)


def boundary_values(space: FESpace, problem: ProblemData, slab: SpaceTimeSlab) -> np.ndarray:
    """``g_D(t_n)`` at the Dirichlet nodes (the dG(0) value is the left
    limit at the slab's end)."""
    pts = space.nodes[space.dirichlet_dofs]
    g = problem.g_D(slab.t1, pts[:, 0], pts[:, 1])
    return np.broadcast_to(np.asarray(g, dtype=float), (len(pts),)).copy()


def source_load(space: FESpace, problem: ProblemData, slab: SpaceTimeSlab,
                delta, b, sign: float = 1.0) -> np.ndarray:
    """``int_In (f, phi + sign delta b.grad phi) dt``."""
    cf = cell_fields(space, SPACE_QUAD)
    ts, wt = slab.time_points(TIME_QUAD)
    fbar = sum(w * problem.f(t, cf.x, cf.y) for t, w in zip(ts, wt))
    return load_vector(space, fbar, delta, sign * np.asarray(b))


@dataclass
class SlabSystem:
    """Dirichlet-eliminated system of one slab with the data to rebuild
    the full coefficient vector."""

    matrix: object
    rhs: np.ndarray
    reduced: ReducedSystem
    boundary: np.ndarray
    full_matrix: object
    full_rhs: np.ndarray

    def expand(self, x) -> np.ndarray:
        return self.reduced.expand(x, self.boundary)


class PrimalAssembler:
    """Caches operators per mesh and factorizations per ``(mesh, tau)``."""

    def __init__(self, problem: ProblemData, params: StabilizationParams, p: int = 1):
        self.problem = problem
        self.params = params
        self.p = p
        self._ops = BoundedCache()
        self._lu = BoundedCache()

    def operators(self, mesh) -> SlabOperators:
        ops = self._ops.get(mesh)
        if ops is None:
            space = build_space(mesh, self.p)
            delta = cell_deltas(space, self.problem, self.params)
            ops = slab_operators(space, self.problem.eps, self.problem.b_vector,
                                 self.problem.alpha, delta)
            self._ops[mesh] = ops
        return ops

    def system(self, slab: SpaceTimeSlab, u_prev, first: bool,
               prev_space: FESpace | None = None) -> SlabSystem:
        """Slab system; ``u_prev`` lives on ``prev_space`` (default: this
        slab's space)."""
        ops = self.operators(slab.mesh)
        space = ops.space
        key = (slab.mesh, slab.tau)
        entry = self._lu.get(key)
        A_full = ops.jump + slab.tau * ops.steady
        if entry is None:
            red = ReducedSystem(space, A_full)
            entry = (red, None)
            self._lu[key] = entry
        red = entry[0]
        rhs = source_load(space, self.problem, slab, ops.delta, ops.b)
        if first:
            cf = cell_fields(space, SPACE_QUAD)
            rhs += load_vector(space, self.problem.u0(cf.x, cf.y), ops.delta, ops.b)
        elif prev_space is None or prev_space is space:
            rhs += ops.jump @ u_prev
        elif prev_space.mesh.same_cells(slab.mesh):
            rhs += ops.jump @ transfer(prev_space, u_prev, space)
        else:
            rhs += cross_load(prev_space, u_prev, space, ops.delta, ops.b)
        g = boundary_values(space, self.problem, slab)
        return SlabSystem(matrix=red.A_ii, rhs=red.rhs(rhs, g), reduced=red,
                          boundary=g, full_matrix=A_full, full_rhs=rhs)

    def factor(self, slab: SpaceTimeSlab, system: SlabSystem) -> Factorization:
        key = (slab.mesh, slab.tau)
        red, lu = self._lu[key]
        if lu is None:
            lu = Factorization(system.matrix)
            self._lu[key] = (red, lu)
        return lu


def assemble_slab_system(slab: SpaceTimeSlab, u_prev, problem: ProblemData,
                         params: StabilizationParams,
                         prev_space: FESpace | None = None) -> SlabSystem:
    """System for the dG(0) value on ``slab``.

    ``u_prev`` is the previous slab's value, given on ``prev_space`` (this
    slab's Q1 space by default), or ``None`` on the first slab, where the
    initial condition enters through ``(u0, phi + delta b.grad phi)``.
    The pairing of ``u_prev`` with the test functions is integrated exactly
    when the two meshes differ.
    """
    if not slab.tau > 0:
        raise ValueError("slab length must be positive")
    return PrimalAssembler(problem, params).system(slab, u_prev, u_prev is None, prev_space)


def solve_primal(slabs, problem: ProblemData, params: StabilizationParams,
                 assembler: PrimalAssembler | None = None) -> SpaceTimeFunction:
    """Forward sweep over the slabs; returns the dG(0) trajectory."""
    check_slabs(slabs)
    asm = assembler or PrimalAssembler(problem, params)
    values = []
    prev_space = None
    for n, slab in enumerate(slabs):
        space = build_space(slab.mesh, asm.p)
        u_prev = values[-1] if n > 0 else None
        system = asm.system(slab, u_prev, n == 0, prev_space)
        x = asm.factor(slab, system).solve(system.rhs)
        values.append(system.expand(x))
        prev_space = space
    log.debug("primal: %d slabs solved", len(slabs))
    return SpaceTimeFunction(slabs, asm.p, "dG0", values)
