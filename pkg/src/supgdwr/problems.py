"""Problem data, the rotating-hill benchmark and goal functionals."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .discretization import (ERROR_QUAD, ERROR_TIME_QUAD, SPACE_QUAD, TIME_QUAD,
                             SpaceTimeFunction, reference_basis, tensor_rule)
from .mesh import Rectangle


class ProblemError(ValueError):
    pass


class DegenerateGoalError(ProblemError):
    """The error defining the goal weight vanishes identically."""


class UndefinedEffectivity(ZeroDivisionError):
    pass


def _zero(*args):
    return np.zeros(np.broadcast(*args).shape)


@dataclass(frozen=True)
class ProblemData:
    """Coefficients and data of ``u_t - eps Lap u + b.grad u + alpha u = f``.

    ``f``, ``g_D`` and ``exact`` take ``(t, x, y)``; ``u0`` takes ``(x, y)``.
    ``b`` is a constant vector (divergence free by construction).
    """

    eps: float
    b: tuple = (0.0, 0.0)
    alpha: float = 0.0
    f: Callable = _zero
    g_D: Callable = _zero
    u0: Callable = _zero
    exact: Optional[Callable] = None
    T: float = 1.0
    domain: Rectangle = field(default_factory=Rectangle)
    name: str = "custom"

    def __post_init__(self):
        if not 0.0 < self.eps <= 1.0:
            raise ProblemError(f"diffusion eps must lie in (0, 1], got {self.eps}")
        if self.alpha < 0.0:
            raise ProblemError(f"reaction alpha must be >= 0, got {self.alpha}")
        if not self.T > 0.0:
            raise ProblemError(f"final time must be positive, got {self.T}")
        b = np.asarray(self.b, dtype=float)
        if b.shape != (2,) or not np.isfinite(b).all():
            raise ProblemError(f"convection must be a finite 2-vector, got {self.b}")
        object.__setattr__(self, "b", (float(b[0]), float(b[1])))

    @property
    def b_vector(self) -> np.ndarray:
        return np.array(self.b)

    @property
    def b_norm(self) -> float:
        return float(np.hypot(*self.b))

    def convection(self, x, y) -> np.ndarray:
        shape = np.broadcast(x, y).shape
        return np.broadcast_to(self.b_vector, shape + (2,))

    def divergence_free(self) -> bool:
        return True

    def with_eps(self, eps: float) -> "ProblemData":
        from dataclasses import replace
        return replace(self, eps=eps)


# -- rotating hill --------------------------------------------------------

def _hill_parts(t, x, y, a0):
    t, x, y = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (t, x, y)))
    arg = 5.0 * np.pi * (2.0 * t - 1.0)
    amp = np.arctan(arg)
    damp = 10.0 * np.pi / (1.0 + arg ** 2)
    cx = 0.5 + 0.25 * np.cos(2.0 * np.pi * t)
    cy = 0.5 + 0.25 * np.sin(2.0 * np.pi * t)
    dcx = -0.5 * np.pi * np.sin(2.0 * np.pi * t)
    dcy = 0.5 * np.pi * np.cos(2.0 * np.pi * t)
    X, Y = x - cx, y - cy
    D = 1.0 + a0 * X ** 2 + a0 * Y ** 2
    return amp, damp, X, Y, dcx, dcy, D


def rotating_hill(a0: float = 50.0, eps: float = 1.0, b=(2.0, 3.0),
                  alpha: float = 1.0) -> ProblemData:
    """Counterclockwise rotating hill whose sign flips at ``t = 1/2``.

    The source is obtained by applying the differential operator to the
    closed-form solution on ``(0, 1)^2 x (0, 1]``.
    """
    if not a0 > 0:
        raise ProblemError(f"a0 must be positive, got {a0}")
    bx, by = float(b[0]), float(b[1])

    def exact(t, x, y):
        amp, _, _, _, _, _, D = _hill_parts(t, x, y, a0)
        return amp / D

    def source(t, x, y):
        amp, damp, X, Y, dcx, dcy, D = _hill_parts(t, x, y, a0)
        u = amp / D
        Dt = -2.0 * a0 * (X * dcx + Y * dcy)
        ut = damp / D - amp * Dt / D ** 2
        ux = -2.0 * a0 * X * amp / D ** 2
        uy = -2.0 * a0 * Y * amp / D ** 2
        uxx = -2.0 * a0 * amp / D ** 2 + 8.0 * a0 ** 2 * X ** 2 * amp / D ** 3
        uyy = -2.0 * a0 * amp / D ** 2 + 8.0 * a0 ** 2 * Y ** 2 * amp / D ** 3
        return ut - eps * (uxx + uyy) + bx * ux + by * uy + alpha * u

    return ProblemData(eps=eps, b=(bx, by), alpha=alpha, f=source, g_D=exact,
                       u0=lambda x, y: exact(0.0, x, y), exact=exact, T=1.0,
                       domain=Rectangle(0.0, 0.0, 1.0, 1.0), name="rotating_hill")


PROBLEMS = {"rotating_hill": rotating_hill}


# -- quadrature over space-time ------------------------------------------

def spacetime_integral(u: SpaceTimeFunction, integrand, q_space: int = ERROR_QUAD,
                       q_time: int = ERROR_TIME_QUAD) -> float:
    """Sum over slabs of ``int_In int_Omega integrand(t, x, y, uh)``.

    ``uh`` holds the values of ``u`` at the quadrature points of each cell.
    """
    rule = tensor_rule(q_space)
    basis = reference_basis(u.p, rule.points)
    total = 0.0
    for n, slab in enumerate(u.slabs):
        space = u.space(n)
        x, y = space.physical_points(rule.points)
        jxw = space.mesh.cell_area[:, None] * rule.weights[None, :]
        ts, wt = slab.time_points(q_time)
        for t, w in zip(ts, wt):
            uh = space.cell_values(u.at(n, t), basis)
            total += w * float(np.sum(integrand(t, x, y, uh) * jxw))
    return total


def l2_error(problem: ProblemData, u: SpaceTimeFunction, q_space: int = ERROR_QUAD,
             q_time: int = ERROR_TIME_QUAD) -> float:
    if problem.exact is None:
        raise ProblemError("exact solution required")
    sq = spacetime_integral(u, lambda t, x, y, uh: (problem.exact(t, x, y) - uh) ** 2,
                            q_space, q_time)
    return float(np.sqrt(sq))


# -- goals --------------------------------------------------------------

class GoalFunctional:
    """Linear goal ``J(v) = int_I (j, v) dt + (j_T, v(T))``.

    ``density(n, t, ref_points)`` returns ``j`` at the physical images of
    ``ref_points`` in every cell of slab ``n``; ``terminal(ref_points)``
    returns ``j_T`` on the last slab's cells (or ``None``).
    """

    kinds = ("spacetime_l2_error", "terminal_l2_error", "custom")

    def __init__(self, kind, slabs, weight=None, terminal_weight=None,
                 norm: float = 1.0, reference: SpaceTimeFunction | None = None,
                 problem: ProblemData | None = None):
        if kind not in self.kinds:
            raise ProblemError(f"unknown goal kind {kind!r}")
        self.kind = kind
        self.slabs = list(slabs)
        self.weight = weight
        self.terminal_weight = terminal_weight
        self.norm = norm
        self.reference = reference
        self.problem = problem

    def _points(self, n, ref_points):
        from .discretization import build_space
        space = build_space(self.slabs[n].mesh, 1)
        return space, space.physical_points(ref_points)

    def density(self, n: int, t: float, ref_points) -> np.ndarray | None:
        if self.kind == "terminal_l2_error":
            return None
        space, (x, y) = self._points(n, ref_points)
        if self.kind == "custom":
            if self.weight is None:
                return None
            return np.broadcast_to(self.weight(t, x, y), x.shape)
        uh = self.reference.space(n).cell_values(
            self.reference.at(n, t), reference_basis(self.reference.p, ref_points))
        return (self.problem.exact(t, x, y) - uh) / self.norm

    def terminal(self, ref_points) -> np.ndarray | None:
        n = len(self.slabs) - 1
        space, (x, y) = self._points(n, ref_points)
        T = self.slabs[-1].t1
        if self.kind == "terminal_l2_error":
            uh = self.reference.space(n).cell_values(
                self.reference.end(n), reference_basis(self.reference.p, ref_points))
            return (self.problem.exact(T, x, y) - uh) / self.norm
        if self.kind == "custom" and self.terminal_weight is not None:
            return np.broadcast_to(self.terminal_weight(x, y), x.shape)
        return None

    def __call__(self, v: SpaceTimeFunction, q_space: int = ERROR_QUAD,
                 q_time: int = ERROR_TIME_QUAD) -> float:
        """Evaluate ``J(v)`` by quadrature."""
        rule = tensor_rule(q_space)
        total = 0.0
        vb = reference_basis(v.p, rule.points)
        for n, slab in enumerate(v.slabs):
            space = v.space(n)
            jxw = space.mesh.cell_area[:, None] * rule.weights[None, :]
            ts, wt = slab.time_points(q_time)
            for t, w in zip(ts, wt):
                j = self.density(n, t, rule.points)
                if j is not None:
                    total += w * float(np.sum(j * space.cell_values(v.at(n, t), vb) * jxw))
        jt = self.terminal(rule.points)
        if jt is not None:
            n = v.N - 1
            space = v.space(n)
            jxw = space.mesh.cell_area[:, None] * rule.weights[None, :]
            total += float(np.sum(jt * space.cell_values(v.end(n), vb) * jxw))
        return total


def goal_l2_error(problem: ProblemData, u_current: SpaceTimeFunction) -> GoalFunctional:
    """Normalized error goal ``J(v) = int_I (v, e) dt / ||e||`` with ``e`` frozen
    at ``u_exact - u_current`` and ``||e||`` evaluated with the estimator's rules."""
    if problem.exact is None:
        raise ProblemError("the L2-error goal needs an exact solution")
    norm = l2_error(problem, u_current, SPACE_QUAD, TIME_QUAD)
    if not norm > 0.0:
        raise DegenerateGoalError("discrete solution equals the exact solution")
    return GoalFunctional("spacetime_l2_error", u_current.slabs, norm=norm,
                          reference=u_current, problem=problem)


def goal_terminal_l2_error(problem: ProblemData, u_current: SpaceTimeFunction) -> GoalFunctional:
    """Normalized error of the final-time state."""
    if problem.exact is None:
        raise ProblemError("the terminal L2-error goal needs an exact solution")
    rule = tensor_rule(SPACE_QUAD)
    n = u_current.N - 1
    space = u_current.space(n)
    x, y = space.physical_points(rule.points)
    uh = space.cell_values(u_current.end(n), reference_basis(u_current.p, rule.points))
    e = problem.exact(u_current.slabs[-1].t1, x, y) - uh
    norm = float(np.sqrt(np.sum(e ** 2 * space.mesh.cell_area[:, None] * rule.weights)))
    if not norm > 0.0:
        raise DegenerateGoalError("discrete solution equals the exact solution")
    return GoalFunctional("terminal_l2_error", u_current.slabs, norm=norm,
                          reference=u_current, problem=problem)


def exact_goal_error(problem: ProblemData, u: SpaceTimeFunction,
                     goal: GoalFunctional) -> float:
    """``J(u) - J(u_h)`` evaluated with the elevated rules (4x4 space, 4 in time)."""
    if problem.exact is None:
        raise ProblemError("exact solution required")
    if goal.kind == "spacetime_l2_error":
        return l2_error(problem, u)
    if goal.kind == "terminal_l2_error":
        rule = tensor_rule(ERROR_QUAD)
        n = u.N - 1
        space = u.space(n)
        x, y = space.physical_points(rule.points)
        uh = space.cell_values(u.end(n), reference_basis(u.p, rule.points))
        e = problem.exact(u.slabs[-1].t1, x, y) - uh
        return float(np.sqrt(np.sum(e ** 2 * space.mesh.cell_area[:, None] * rule.weights)))
    rule = tensor_rule(ERROR_QUAD)
    basis = reference_basis(u.p, rule.points)
    total = 0.0
    for n, slab in enumerate(u.slabs):
        space = u.space(n)
        x, y = space.physical_points(rule.points)
        jxw = space.mesh.cell_area[:, None] * rule.weights[None, :]
        ts, wt = slab.time_points(ERROR_TIME_QUAD)
        for t, w in zip(ts, wt):
            j = goal.density(n, t, rule.points)
            if j is not None:
                e = problem.exact(t, x, y) - space.cell_values(u.at(n, t), basis)
                total += w * float(np.sum(j * e * jxw))
    jt = goal.terminal(rule.points)
    if jt is not None:
        n = u.N - 1
        space = u.space(n)
        x, y = space.physical_points(rule.points)
        e = problem.exact(u.slabs[-1].t1, x, y) - space.cell_values(u.end(n), basis)
        total += float(np.sum(jt * e * space.mesh.cell_area[:, None] * rule.weights))
    return total


def effectivity(eta: float, Je: float) -> float:
    """``|eta / J(e)|``."""
    if Je == 0.0 or not np.isfinite(Je):
        raise UndefinedEffectivity(f"effectivity undefined for exact error {Je}")
    return abs(eta / Je)
