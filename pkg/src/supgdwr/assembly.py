"""Cell-wise assembly of the bilinear and linear forms on one spatial mesh."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .discretization import (Q1_MATRIX_QUAD, SPACE_QUAD, FESpace, reference_basis,
                             tensor_rule)
from .linalg import csr_from_coo


def matrix_quadrature(p: int) -> int:
    return Q1_MATRIX_QUAD if p == 1 else SPACE_QUAD


@dataclass
class CellFields:
    """Basis data at the quadrature points of every cell."""

    values: np.ndarray      # (nq, k)
    gx: np.ndarray          # (nc, nq, k)
    gy: np.ndarray
    lap: np.ndarray         # (nc, nq, k)
    jxw: np.ndarray         # (nc, nq)
    x: np.ndarray           # (nc, nq)
    y: np.ndarray

    def streamline(self, b) -> np.ndarray:
        """``b . grad phi_k`` at the quadrature points, ``(nc, nq, k)``."""
        return b[0] * self.gx + b[1] * self.gy


def cell_fields(space: FESpace, q: int) -> CellFields:
    rule = tensor_rule(q)
    basis = reference_basis(space.p, rule.points)
    hx, hy = space.mesh.cell_size.T
    gx = basis.dx[None, :, :] / hx[:, None, None]
    gy = basis.dy[None, :, :] / hy[:, None, None]
    lap = (basis.dxx[None, :, :] / hx[:, None, None] ** 2
           + basis.dyy[None, :, :] / hy[:, None, None] ** 2)
    jxw = (hx * hy)[:, None] * rule.weights[None, :]
    x, y = space.physical_points(rule.points)
    return CellFields(basis.values, gx, gy, lap, jxw, x, y)


def scatter_matrix(space: FESpace, local) -> sp.csr_matrix:
    """Sum element matrices ``local[c, i, j]`` (row ``i`` = test) into a
    matrix on all nodes."""
    dofs = space.cell_dofs
    k = dofs.shape[1]
    rows = np.repeat(dofs[:, :, None], k, axis=2)
    cols = np.repeat(dofs[:, None, :], k, axis=1)
    return csr_from_coo(rows, cols, local, (space.n_dofs, space.n_dofs))


def scatter_vector(space: FESpace, local) -> np.ndarray:
    return np.bincount(space.cell_dofs.ravel(), weights=np.asarray(local).ravel(),
                       minlength=space.n_dofs)


@dataclass
class SlabOperators:
    """Time-independent pieces of a slab system, on all nodes.

    ``jump`` pairs the temporal jump with the (streamline-modified) test
    function, ``steady`` is the stabilized steady operator; a dG(0) step is
    ``jump + tau * steady``.
    """

    space: FESpace
    mass: sp.csr_matrix
    jump: sp.csr_matrix
    steady: sp.csr_matrix
    delta: np.ndarray
    b: np.ndarray


def slab_operators(space: FESpace, eps: float, b, alpha: float,
                   delta: np.ndarray) -> SlabOperators:
    """Assemble ``M``, ``M + D`` and ``eps K + C + alpha M + S`` where, with
    ``phi_j`` trial and ``phi_i`` test,

    * ``D_ij = sum_K delta_K (phi_j, b.grad phi_i)_K``
    * ``S_ij = sum_K delta_K (b.grad phi_j - eps Lap phi_j + alpha phi_j, b.grad phi_i)_K``.

    Passing ``-b`` yields the adjoint (backward) operators.
    """
    b = np.asarray(b, dtype=float)
    cf = cell_fields(space, matrix_quadrature(space.p))
    V = cf.values
    w = cf.jxw
    bg = cf.streamline(b)
    mass = np.einsum("cq,qi,qj->cij", w, V, V)
    stiff = (np.einsum("cq,cqi,cqj->cij", w, cf.gx, cf.gx)
             + np.einsum("cq,cqi,cqj->cij", w, cf.gy, cf.gy))
    conv = np.einsum("cq,qi,cqj->cij", w, V, bg)
    local_steady = eps * stiff + conv + alpha * mass
    local_jump = mass.copy()
    if np.any(delta > 0):
        dw = delta[:, None] * w
        local_jump += np.einsum("cq,cqi,qj->cij", dw, bg, V)
        strong = bg - eps * cf.lap + alpha * V[None, :, :]
        local_steady += np.einsum("cq,cqi,cqj->cij", dw, bg, strong)
    return SlabOperators(space=space, mass=scatter_matrix(space, mass),
                         jump=scatter_matrix(space, local_jump),
                         steady=scatter_matrix(space, local_steady),
                         delta=np.asarray(delta, dtype=float), b=b)


def load_vector(space: FESpace, values, delta=None, b=None,
                q: int = SPACE_QUAD) -> np.ndarray:
    """``(g, phi_i + delta_K b.grad phi_i)`` from values of ``g`` at the
    ``q x q`` quadrature points of each cell."""
    cf = cell_fields(space, q)
    values = np.asarray(values, dtype=float)
    local = np.einsum("cq,cq,qi->ci", cf.jxw, values, cf.values)
    if delta is not None and np.any(delta > 0):
        bg = cf.streamline(np.asarray(b, dtype=float))
        local += np.einsum("cq,cq,cqi->ci", delta[:, None] * cf.jxw, values, bg)
    return scatter_vector(space, local)


class ReducedSystem:
    """Constraint-reduced matrix split into interior and Dirichlet blocks."""

    def __init__(self, space: FESpace, A_full):
        self.space = space
        A = space.reduce_matrix(A_full)
        I, B = space.free_interior, space.free_boundary
        self.A_ii = A[I][:, I].tocsr()
        self.A_ib = A[I][:, B].tocsr()

    def rhs(self, b_full, boundary_values=None) -> np.ndarray:
        b = self.space.reduce_vector(b_full)[self.space.free_interior]
        if boundary_values is not None and len(boundary_values):
            b = b - self.A_ib @ boundary_values
        return b

    def expand(self, x_interior, boundary_values=None) -> np.ndarray:
        space = self.space
        free = np.zeros(space.n_free)
        free[space.free_interior] = x_interior
        if boundary_values is not None:
            free[space.free_boundary] = boundary_values
        return space.distribute(free)
