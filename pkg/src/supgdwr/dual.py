"""Stabilized discrete dual problem, solved backward in time.

The dual operator is the primal one with the convection field reversed;
SUPG is applied to it after dualization with ``delta*_K = delta_K``.
Two temporal discretizations are offered:

* ``"cG1"`` (default): continuous piecewise linear trial, piecewise
  constant test. On each slab
  ``(J + tau/2 A*) z(t_{n-1}) = (J - tau/2 A*) z(t_n) + int_In (j, psi - delta b.grad psi)``.
* ``"dG0"``: the backward counterpart of the primal scheme,
  ``(J + tau A*) z_n = J z_{n+1} + ...``; its matrices are the transposes
  of the primal ones when the spaces coincide.
"""
from __future__ import annotations

import numpy as np

from .assembly import ReducedSystem, cell_fields, load_vector, slab_operators
from .discretization import (SPACE_QUAD, TIME_QUAD, SpaceTimeFunction, SpaceTimeSlab,
                             build_space, check_slabs, cross_load, tensor_rule,
                             transfer)
from .linalg import BoundedCache, Factorization
from .primal import StabilizationParams, cell_deltas
from .problems import GoalFunctional, ProblemData

DUAL_KINDS = ("cG1", "dG0")


class DualAssembler:
    def __init__(self, problem: ProblemData, params: StabilizationParams,
                 p: int = 2, kind: str = "cG1"):
        if kind not in DUAL_KINDS:
            raise ValueError(f"unknown dual time discretization {kind!r}")
        self.problem = problem
        self.params = params
        self.p = p
        self.kind = kind
        self._ops = BoundedCache()
        self._sys = BoundedCache()

    def operators(self, mesh):
        ops = self._ops.get(mesh)
        if ops is None:
            space = build_space(mesh, self.p)
            delta = cell_deltas(space, self.problem, self.params)
            ops = slab_operators(space, self.problem.eps, -self.problem.b_vector,
                                 self.problem.alpha, delta)
            self._ops[mesh] = ops
        return ops

    def matrices(self, slab: SpaceTimeSlab):
        """``(lhs, rhs_operator)`` on all nodes for one backward step."""
        ops = self.operators(slab.mesh)
        tau = slab.tau
        if self.kind == "cG1":
            return ops.jump + 0.5 * tau * ops.steady, ops.jump - 0.5 * tau * ops.steady
        return ops.jump + tau * ops.steady, ops.jump

    def reduced(self, slab: SpaceTimeSlab):
        key = (slab.mesh, slab.tau)
        entry = self._sys.get(key)
        if entry is None:
            lhs, rhs_op = self.matrices(slab)
            red = ReducedSystem(self.operators(slab.mesh).space, lhs)
            entry = (red, Factorization(red.A_ii), rhs_op)
            self._sys[key] = entry
        return entry

    def goal_load(self, slab: SpaceTimeSlab, n: int, goal: GoalFunctional) -> np.ndarray:
        """``int_In (j, psi - delta b.grad psi) dt``."""
        ops = self.operators(slab.mesh)
        rule = tensor_rule(SPACE_QUAD)
        ts, wt = slab.time_points(TIME_QUAD)
        jbar = None
        for t, w in zip(ts, wt):
            j = goal.density(n, t, rule.points)
            if j is None:
                continue
            jbar = w * j if jbar is None else jbar + w * j
        if jbar is None:
            return np.zeros(ops.space.n_dofs)
        return load_vector(ops.space, jbar, ops.delta, ops.b)

    def terminal_load(self, goal: GoalFunctional):
        slab = goal.slabs[-1]
        space = self.operators(slab.mesh).space
        rule = tensor_rule(SPACE_QUAD)
        jt = goal.terminal(rule.points)
        if jt is None:
            return None
        return load_vector(space, jt)


def assemble_dual_slab(slab: SpaceTimeSlab, n: int, z_next, goal: GoalFunctional,
                       problem: ProblemData, params: StabilizationParams,
                       p: int = 2, kind: str = "cG1"):
    """Interior system ``(A, b)`` for one backward step on slab ``n``.

    ``z_next`` is the dual at ``t_n`` on this slab's space (cG1) or the
    next slab's value transferred here (dG0); ``None`` means zero.
    """
    asm = DualAssembler(problem, params, p, kind)
    red, _, rhs_op = asm.reduced(slab)
    rhs = asm.goal_load(slab, n, goal)
    if z_next is not None:
        rhs = rhs + rhs_op @ z_next
    return red.A_ii, red.rhs(rhs)


def solve_dual(slabs, goal: GoalFunctional, u_primal: SpaceTimeFunction | None,
               problem: ProblemData, params: StabilizationParams, p: int = 2,
               kind: str = "cG1", assembler: DualAssembler | None = None
               ) -> SpaceTimeFunction:
    """Backward sweep ``n = N, ..., 1`` with homogeneous Dirichlet values."""
    check_slabs(slabs)
    if goal.kind != "custom" and u_primal is None:
        raise ValueError("goal depends on the primal solution, which is missing")
    if u_primal is not None and len(u_primal.slabs) != len(slabs):
        raise ValueError("primal and dual slab sequences differ")
    asm = assembler or DualAssembler(problem, params, p, kind)
    N = len(slabs)
    values: list = [None] * N
    terminal = asm.terminal_load(goal)
    z_next = None  # dual at t_n on the space of slab n+1 (cG1) / value on slab n+1 (dG0)
    next_space = None
    for n in range(N - 1, -1, -1):
        slab = slabs[n]
        red, lu, rhs_op = asm.reduced(slab)
        space = red.space
        rhs = asm.goal_load(slab, n, goal)
        if n == N - 1:
            if asm.kind == "cG1":
                z_end = _terminal_projection(asm, slab, terminal)
            else:
                z_end = None
                if terminal is not None:
                    rhs = rhs + terminal
        elif asm.kind == "dG0" and not next_space.mesh.same_cells(slab.mesh):
            # exact pairing of the next slab's value with this slab's tests
            ops = asm.operators(slab.mesh)
            rhs = rhs + cross_load(next_space, z_next, space, ops.delta, ops.b)
            z_end = None
        else:
            z_end = transfer(next_space, z_next, space)
        if z_end is not None:
            rhs = rhs + rhs_op @ z_end
        z_start = red.expand(lu.solve(red.rhs(rhs)))
        if asm.kind == "cG1":
            values[n] = np.stack([z_start, z_end])
        else:
            values[n] = z_start
        z_next = z_start
        next_space = space
    return SpaceTimeFunction(slabs, asm.p, asm.kind, values)


def _terminal_projection(asm: DualAssembler, slab, terminal) -> np.ndarray:
    space = asm.operators(slab.mesh).space
    if terminal is None:
        return np.zeros(space.n_dofs)
    red = ReducedSystem(space, asm.operators(slab.mesh).mass)
    return red.expand(Factorization(red.A_ii).solve(red.rhs(terminal)))
