"""Cell-wise dual weighted residual indicators for the stabilized scheme.

For each slab ``n`` and cell ``K`` the indicator collects

* ``int_In (R(u), z - phi)_K - delta_K (R(u), b.grad phi)_K dt`` with the
  strong residual ``R(u) = f - u_t + div(eps grad u) - b.grad u - alpha u``,
* ``-int_In (E(u), z - phi)_dK dt`` with ``E = n.[eps grad u] / 2`` on
  interior edges,
* the temporal jump at ``t_{n-1}`` (initial defect for ``n = 1``) paired
  with ``-(z(t_{n-1}) - phi)`` and ``+delta_K b.grad phi``,
* ``-int_In (g_D - u, eps grad z . n)_{dK cap dOmega} dt`` for the boundary
  data mismatch,

where ``z`` is the discrete dual and ``phi`` its restriction to the primal
space.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .discretization import (SPACE_QUAD, TIME_QUAD, SpaceTimeFunction, gauss_rule, overlay,
                             reference_basis, restrict_to_primal, tensor_rule)
from .mesh import BOUNDARY, EDGE_NORMALS, Edges
from .primal import StabilizationParams, cell_deltas
from .problems import ProblemData

EDGE_QUAD = 3


@dataclass
class ErrorIndicators:
    """Signed indicators ``eta_K^n`` per slab."""

    cells: list

    @property
    def N(self) -> int:
        return len(self.cells)

    @property
    def per_slab(self) -> np.ndarray:
        """``eta^n = sum_K |eta_K^n|``."""
        return np.array([np.abs(c).sum() for c in self.cells])

    @property
    def per_slab_signed(self) -> np.ndarray:
        return np.array([c.sum() for c in self.cells])

    @property
    def signed(self) -> float:
        return math.fsum(math.fsum(c) for c in self.cells)

    @property
    def absolute(self) -> float:
        return float(sum(np.abs(c).sum() for c in self.cells))

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("slab,cell,eta\n")
            for n, c in enumerate(self.cells):
                for k, v in enumerate(c):
                    fh.write(f"{n + 1},{k},{v:.6e}\n")

    def write_slab_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("slab,eta_abs,eta_signed\n")
            for n, (a, s) in enumerate(zip(self.per_slab, self.per_slab_signed)):
                fh.write(f"{n + 1},{a:.6e},{s:.6e}\n")


def boundary_edge_set(mesh) -> Edges:
    """Boundary edges in the :class:`Edges` layout (``neighbor == -1``,
    outward normals)."""
    cell, edge = mesh.boundary_edges()
    order = np.lexsort((edge, cell))
    cell, edge = cell[order], edge[order]
    start, end = mesh.edge_endpoints(cell, edge)
    return Edges(cell=cell, neighbor=np.full(len(cell), BOUNDARY),
                 normal=EDGE_NORMALS[edge].copy(), hanging=np.zeros(len(cell), bool),
                 start=start, end=end)


def edge_points(edges: Edges, q: int = EDGE_QUAD):
    """Gauss points ``(ne, q, 2)`` and weights ``(ne, q)`` on edge segments."""
    g = gauss_rule(q)
    pts = (edges.start[:, None, :]
           + g.points[None, :, None] * (edges.end - edges.start)[:, None, :])
    wts = edges.length[:, None] * g.weights[None, :]
    return pts, wts


def _slab_of(u: SpaceTimeFunction, t: float) -> int:
    for n, slab in enumerate(u.slabs):
        if t <= slab.t1 or n == u.N - 1:
            return n
    return u.N - 1


def cell_residual(u: SpaceTimeFunction, problem: ProblemData, point, t: float) -> float:
    """Strong residual ``f - u_t + div(eps grad u) - b.grad u - alpha u`` at
    an interior point of a cell."""
    n = _slab_of(u, t)
    space = u.space(n)
    pt = np.atleast_2d(np.asarray(point, dtype=float))
    cell = space.mesh.locate(pt)
    coeff = u.at(n, t)
    val, grad = space.evaluate_in_cells(coeff, cell, pt)
    ref = space.to_reference(cell, pt)
    basis = reference_basis(space.p, ref)
    h = space.mesh.cell_size[cell]
    loc = coeff[space.cell_dofs[cell]]
    lap = (np.einsum("nk,nk->n", loc, basis.dxx) / h[:, 0] ** 2
           + np.einsum("nk,nk->n", loc, basis.dyy) / h[:, 1] ** 2)
    ut = u.time_derivative(n)
    ut_val, _ = space.evaluate_in_cells(ut, cell, pt)
    b = problem.convection(pt[:, 0], pt[:, 1])
    f = problem.f(t, pt[:, 0], pt[:, 1])
    r = f - ut_val + problem.eps * lap - (b * grad).sum(-1) - problem.alpha * val
    return float(r[0])


def edge_jump(u: SpaceTimeFunction, edges: Edges, index: int, t: float,
              eps: float, q: int = EDGE_QUAD) -> np.ndarray:
    """``E(u) = n.(eps grad u|_K - eps grad u|_K') / 2`` at the Gauss points
    of one edge segment; zero on boundary edges."""
    if edges.neighbor[index] == BOUNDARY:
        return np.zeros(q)
    n = _slab_of(u, t)
    sub = Edges(*(np.asarray(a)[index:index + 1] for a in (
        edges.cell, edges.neighbor, edges.normal, edges.hanging, edges.start, edges.end)))
    return _edge_jumps(u.space(n), u.at(n, t), sub, eps, q)[0]


def _edge_jumps(space, coeff, edges: Edges, eps: float, q: int = EDGE_QUAD) -> np.ndarray:
    pts, _ = edge_points(edges, q)
    flat = pts.reshape(-1, 2)
    k = np.repeat(edges.cell, q)
    kp = np.repeat(edges.neighbor, q)
    _, g_k = space.evaluate_in_cells(coeff, k, flat)
    _, g_kp = space.evaluate_in_cells(coeff, kp, flat)
    nrm = np.repeat(edges.normal, q, axis=0)
    return (0.5 * eps * ((g_k - g_kp) * nrm).sum(-1)).reshape(len(edges), q)


def estimate(slabs, u: SpaceTimeFunction, z: SpaceTimeFunction, problem: ProblemData,
             params: StabilizationParams,
             phi: SpaceTimeFunction | None = None) -> ErrorIndicators:
    """Indicators ``eta_K^n`` with weights ``z - phi``, ``phi`` defaulting to
    :func:`restrict_to_primal` of ``z``."""
    if len(slabs) != u.N or u.N != z.N:
        raise ValueError("primal and dual slab sequences differ")
    for a, b_, c in zip(slabs, u.slabs, z.slabs):
        if not (a.mesh.same_cells(b_.mesh) and a.mesh.same_cells(c.mesh)
                and abs(a.t0 - b_.t0) < 1e-14 and abs(a.t1 - c.t1) < 1e-14):
            raise ValueError("primal and dual slab sequences differ")
    if phi is None:
        phi = restrict_to_primal(z, u.p)
    rule = tensor_rule(SPACE_QUAD)
    bu = reference_basis(u.p, rule.points)
    bz = reference_basis(z.p, rule.points)
    eps, alpha = problem.eps, problem.alpha
    out = []
    for n, slab in enumerate(slabs):
        su, sz = u.space(n), z.space(n)
        mesh = slab.mesh
        delta = cell_deltas(su, problem, params)
        x, y = su.physical_points(rule.points)
        jxw = mesh.cell_area[:, None] * rule.weights[None, :]
        bq = problem.convection(x, y)
        U = u.values[n]
        Phi = phi.values[n]
        u_val = su.cell_values(U, bu)
        u_grad = su.cell_gradients(U, bu)
        u_lap = su.cell_laplacians(U, bu)
        ph_val = su.cell_values(Phi, bu)
        ph_stream = (bq * su.cell_gradients(Phi, bu)).sum(-1)
        steady = eps * u_lap - (bq * u_grad).sum(-1) - alpha * u_val
        u_t = su.cell_values(u.time_derivative(n), bu)
        eta = np.zeros(mesh.n_cells)

        ts, wt = slab.time_points(TIME_QUAD)
        for t, w in zip(ts, wt):
            R = problem.f(t, x, y) - u_t + steady
            weight = sz.cell_values(z.at(n, t), bz) - ph_val
            eta += w * np.sum(jxw * R * weight, axis=1)
            eta -= w * delta * np.sum(jxw * R * ph_stream, axis=1)

        # temporal jump at t_{n-1}, or the initial defect
        w0 = sz.cell_values(z.start(n), bz) - ph_val
        prev_mesh = slabs[n - 1].mesh if n > 0 else None
        if n == 0:
            defect = u_val - problem.u0(x, y)
        elif prev_mesh.same_cells(mesh):
            defect = u_val - su.cell_values(u.previous_end(n), bu)
        else:
            defect = u_val
            _previous_state_terms(eta, n, u, z, phi, delta, problem.b_vector)
        eta -= np.sum(jxw * defect * w0, axis=1)
        eta += delta * np.sum(jxw * defect * ph_stream, axis=1)

        _edge_terms(eta, n, slab, u, z, phi, eps, ts, wt)
        _boundary_terms(eta, n, slab, u, z, problem, ts, wt)
        out.append(eta)
    return ErrorIndicators(out)


def _previous_state_terms(eta, n, u, z, phi, delta, b):
    """``+(u(t_{n-1}^-), z(t_{n-1}) - phi - delta b.grad phi)`` when the
    previous slab has a different mesh, integrated on the common
    refinement and attributed to the cells of slab ``n``."""
    src, su, sz = u.space(n - 1), u.space(n), z.space(n)
    ov = overlay(src.mesh, su.mesh)
    rule = tensor_rule(SPACE_QUAD)
    pts = ov.points(rule.points)
    nq = pts.shape[1]
    flat = pts.reshape(-1, 2)
    ca, cb = np.repeat(ov.cell_a, nq), np.repeat(ov.cell_b, nq)
    prev, _ = src.evaluate_in_cells(u.end(n - 1), ca, flat)
    zv, _ = sz.evaluate_in_cells(z.start(n), cb, flat)
    pv, pg = su.evaluate_in_cells(phi.values[n], cb, flat)
    jxw = ((ov.size[:, 0] * ov.size[:, 1])[:, None] * rule.weights[None, :]).ravel()
    val = prev * jxw * (zv - pv - delta[cb] * (pg @ b))
    eta += np.bincount(cb, weights=val, minlength=len(eta))


def _edge_terms(eta, n, slab, u, z, phi, eps, ts, wt):
    edges = slab.mesh.edge_list()
    if not len(edges):
        return
    su, sz = u.space(n), z.space(n)
    pts, ew = edge_points(edges)
    flat = pts.reshape(-1, 2)
    k = np.repeat(edges.cell, EDGE_QUAD)
    jump = _edge_jumps(su, u.values[n], edges, eps)
    ph, _ = su.evaluate_in_cells(phi.values[n], k, flat)
    contrib = np.zeros(len(edges))
    for t, w in zip(ts, wt):
        zv, _ = sz.evaluate_in_cells(z.at(n, t), k, flat)
        weight = (zv - ph).reshape(len(edges), EDGE_QUAD)
        contrib -= w * np.sum(ew * jump * weight, axis=1)
    # both adjacent cells see the same E = n.[eps grad u]/2 on this segment
    np.add.at(eta, edges.cell, contrib)
    np.add.at(eta, edges.neighbor, contrib)


def _boundary_terms(eta, n, slab, u, z, problem, ts, wt):
    edges = boundary_edge_set(slab.mesh)
    su, sz = u.space(n), z.space(n)
    pts, ew = edge_points(edges)
    flat = pts.reshape(-1, 2)
    k = np.repeat(edges.cell, EDGE_QUAD)
    nrm = np.repeat(edges.normal, EDGE_QUAD, axis=0)
    uh, _ = su.evaluate_in_cells(u.values[n], k, flat)
    contrib = np.zeros(len(edges))
    for t, w in zip(ts, wt):
        g = problem.g_D(t, flat[:, 0], flat[:, 1])
        _, gz = sz.evaluate_in_cells(z.at(n, t), k, flat)
        flux = problem.eps * (gz * nrm).sum(-1)
        contrib -= w * np.sum(ew * ((g - uh) * flux).reshape(len(edges), EDGE_QUAD),
                              axis=1)
    np.add.at(eta, edges.cell, contrib)
