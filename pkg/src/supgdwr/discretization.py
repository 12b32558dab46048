"""Lagrange Q1/Q2 spaces with hanging-node constraints, quadrature and
space-time functions on slab sequences."""
from __future__ import annotations

import weakref
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .mesh import MAX_LEVEL, Mesh

SUPPORTED_DEGREES = (1, 2)


class DiscretizationError(ValueError):
    pass


# -- quadrature ---------------------------------------------------------

@dataclass(frozen=True)
class QuadratureRule:
    """Rule on the reference interval ``[0, 1]`` or square ``[0, 1]^2``."""

    points: np.ndarray
    weights: np.ndarray

    @property
    def size(self) -> int:
        return len(self.weights)


@lru_cache(maxsize=None)
def gauss_rule(q: int) -> QuadratureRule:
    """``q``-point Gauss-Legendre rule on ``[0, 1]``, exact to degree ``2q-1``."""
    x, w = np.polynomial.legendre.leggauss(q)
    pts = 0.5 * (x + 1.0)
    pts.setflags(write=False)
    w = 0.5 * w
    w.setflags(write=False)
    return QuadratureRule(pts, w)


@lru_cache(maxsize=None)
def tensor_rule(q: int) -> QuadratureRule:
    """Tensor Gauss rule on the unit square, x index running fastest."""
    g = gauss_rule(q)
    xx, yy = np.meshgrid(g.points, g.points, indexing="xy")
    ww = np.outer(g.weights, g.weights)
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    return QuadratureRule(pts, ww.ravel())


# Rules used throughout: data and estimator integrals, pure Q1 forms, exact errors.
SPACE_QUAD = 3
Q1_MATRIX_QUAD = 2
ERROR_QUAD = 4
TIME_QUAD = 2
ERROR_TIME_QUAD = 4


# -- reference basis ----------------------------------------------------

def lagrange_1d(p: int, s):
    """Values, first and second derivatives of the degree-``p`` Lagrange
    basis on equispaced nodes of ``[0, 1]``; each of shape ``(len(s), p+1)``."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if p == 1:
        v = np.stack([1.0 - s, s], axis=-1)
        d = np.stack([-np.ones_like(s), np.ones_like(s)], axis=-1)
        dd = np.zeros_like(v)
    elif p == 2:
        v = np.stack([2.0 * (s - 0.5) * (s - 1.0), -4.0 * s * (s - 1.0),
                      2.0 * s * (s - 0.5)], axis=-1)
        d = np.stack([4.0 * s - 3.0, 4.0 - 8.0 * s, 4.0 * s - 1.0], axis=-1)
        dd = np.broadcast_to(np.array([4.0, -8.0, 4.0]), v.shape).copy()
    else:
        raise DiscretizationError(f"unsupported degree {p}")
    return v, d, dd


@dataclass(frozen=True)
class ReferenceBasis:
    """Tensor basis on the unit square evaluated at reference points.

    Local node ``a + (p+1) b`` sits at ``(a/p, b/p)``. Derivative arrays are
    with respect to reference coordinates.
    """

    values: np.ndarray
    dx: np.ndarray
    dy: np.ndarray
    dxx: np.ndarray
    dyy: np.ndarray


def reference_basis(p: int, points) -> ReferenceBasis:
    points = np.atleast_2d(points)
    vx, dx, ddx = lagrange_1d(p, points[:, 0])
    vy, dy, ddy = lagrange_1d(p, points[:, 1])

    def tens(fx, fy):
        return (fy[:, :, None] * fx[:, None, :]).reshape(len(points), -1)

    return ReferenceBasis(values=tens(vx, vy), dx=tens(dx, vy), dy=tens(vx, dy),
                          dxx=tens(ddx, vy), dyy=tens(vx, ddy))


def face_local_nodes(p: int, edge: int) -> np.ndarray:
    """Local node indices on a reference edge, ordered by increasing coordinate."""
    k = np.arange(p + 1)
    if edge == 0:
        return k
    if edge == 1:
        return p + (p + 1) * k
    if edge == 2:
        return (p + 1) * p + k
    if edge == 3:
        return (p + 1) * k
    raise ValueError(edge)


# -- finite element spaces -----------------------------------------------

class FESpace:
    """Continuous Q``p`` space on a mesh.

    Coefficient vectors are indexed by all nodes (``n_dofs``); values at
    hanging nodes are determined by the constraint matrix ``C`` mapping
    the ``n_free`` unconstrained values to all nodes.
    """

    def __init__(self, mesh: Mesh, p: int):
        if p not in SUPPORTED_DEGREES:
            raise DiscretizationError(f"unsupported polynomial degree {p}")
        self.mesh = mesh
        self.p = p
        self.n_local = (p + 1) ** 2
        self._number_nodes()
        self._build_constraints()

    def _number_nodes(self):
        mesh, p = self.mesh, self.p
        a = np.arange(p + 1)
        aa, bb = np.meshgrid(a, a, indexing="xy")
        offsets = np.stack([aa.ravel(), bb.ravel()], axis=1)
        step = mesh.cell_lattice_span // p
        lat = (mesh.cell_lattice_origin[:, None, :]
               + offsets[None, :, :] * step[:, None, None])
        codes = mesh.encode_lattice(lat.reshape(-1, 2))
        uniq, inverse = np.unique(codes, return_inverse=True)
        self.node_codes = uniq
        self.node_lattice = mesh.decode_lattice(uniq)
        self.nodes = mesh.lattice_to_physical(self.node_lattice)
        self.cell_dofs = inverse.reshape(mesh.n_cells, self.n_local)
        top = (mesh.nx << MAX_LEVEL, mesh.ny << MAX_LEVEL)
        lx, ly = self.node_lattice.T
        self.on_boundary = (lx == 0) | (ly == 0) | (lx == top[0]) | (ly == top[1])

    @property
    def n_dofs(self) -> int:
        return len(self.nodes)

    def node_index(self, lattice) -> np.ndarray:
        codes = self.mesh.encode_lattice(lattice)
        pos = np.searchsorted(self.node_codes, codes)
        pos = np.clip(pos, 0, len(self.node_codes) - 1)
        if not np.array_equal(self.node_codes[pos], codes):
            raise DiscretizationError("lattice point is not a node of this space")
        return pos

    def _build_constraints(self):
        mesh, p = self.mesh, self.p
        raw: dict[int, dict[int, float]] = {}
        cells, edges = np.nonzero(mesh._coarser)
        for c, e in zip(cells.tolist(), edges.tolist()):
            coarse = int(mesh.neighbors[c, e])
            ce = (e + 2) % 4
            masters = self.cell_dofs[coarse, face_local_nodes(p, ce)]
            slaves = self.cell_dofs[c, face_local_nodes(p, e)]
            axis = 0 if e in (0, 2) else 1
            m_lat = self.node_lattice[masters, axis]
            start, length = m_lat[0], m_lat[-1] - m_lat[0]
            master_set = set(masters.tolist())
            for s_node in slaves.tolist():
                if s_node in master_set or s_node in raw:
                    continue
                s = (self.node_lattice[s_node, axis] - start) / length
                w = lagrange_1d(p, s)[0][0]
                raw[s_node] = {int(m): float(wk) for m, wk in zip(masters, w)
                               if wk != 0.0}
        # masters may themselves hang on a coarser edge
        resolved: dict[int, dict[int, float]] = {}

        def resolve(node):
            if node in resolved:
                return resolved[node]
            out: dict[int, float] = {}
            for m, w in raw[node].items():
                if m in raw:
                    for mm, ww in resolve(m).items():
                        out[mm] = out.get(mm, 0.0) + w * ww
                else:
                    out[m] = out.get(m, 0.0) + w
            resolved[node] = out
            return out

        for node in raw:
            resolve(node)
        self.constraints = resolved
        constrained = np.zeros(self.n_dofs, dtype=bool)
        constrained[list(resolved)] = True
        self.constrained = constrained
        self.free = np.flatnonzero(~constrained)
        self.n_free = len(self.free)
        free_pos = np.full(self.n_dofs, -1, dtype=np.int64)
        free_pos[self.free] = np.arange(self.n_free)
        rows = list(self.free)
        cols = list(range(self.n_free))
        vals = [1.0] * self.n_free
        for node in sorted(resolved):
            for m, w in sorted(resolved[node].items()):
                rows.append(node)
                cols.append(int(free_pos[m]))
                vals.append(w)
        self.C = sp.csr_matrix((vals, (rows, cols)), shape=(self.n_dofs, self.n_free))
        bnd = self.on_boundary[self.free]
        self.free_boundary = np.flatnonzero(bnd)
        self.free_interior = np.flatnonzero(~bnd)

    @property
    def dirichlet_dofs(self) -> np.ndarray:
        """Node indices carrying Dirichlet values."""
        return self.free[self.free_boundary]

    # -- constraint handling -------------------------------------------
    def distribute(self, free_values) -> np.ndarray:
        return np.asarray(self.C @ np.asarray(free_values, dtype=float))

    def project(self, values) -> np.ndarray:
        """Overwrite hanging-node values from their masters."""
        values = np.asarray(values, dtype=float)
        return self.distribute(values[self.free])

    def reduce_matrix(self, A):
        return (self.C.T @ A @ self.C).tocsr()

    def reduce_vector(self, b) -> np.ndarray:
        return np.asarray(self.C.T @ b)

    # -- evaluation ------------------------------------------------------
    def cell_values(self, coeffs, basis: ReferenceBasis) -> np.ndarray:
        """Function values at reference points of every cell, ``(n_cells, nq)``."""
        return np.asarray(coeffs)[self.cell_dofs] @ basis.values.T

    def cell_gradients(self, coeffs, basis: ReferenceBasis) -> np.ndarray:
        """Physical gradients at reference points, ``(n_cells, nq, 2)``."""
        u = np.asarray(coeffs)[self.cell_dofs]
        hx, hy = self.mesh.cell_size.T
        gx = (u @ basis.dx.T) / hx[:, None]
        gy = (u @ basis.dy.T) / hy[:, None]
        return np.stack([gx, gy], axis=-1)

    def cell_laplacians(self, coeffs, basis: ReferenceBasis) -> np.ndarray:
        u = np.asarray(coeffs)[self.cell_dofs]
        hx, hy = self.mesh.cell_size.T
        return (u @ basis.dxx.T) / hx[:, None] ** 2 + (u @ basis.dyy.T) / hy[:, None] ** 2

    def physical_points(self, ref_points) -> tuple[np.ndarray, np.ndarray]:
        ref_points = np.atleast_2d(ref_points)
        o, h = self.mesh.cell_origin, self.mesh.cell_size
        x = o[:, 0, None] + h[:, 0, None] * ref_points[None, :, 0]
        y = o[:, 1, None] + h[:, 1, None] * ref_points[None, :, 1]
        return x, y

    def to_reference(self, cells, points) -> np.ndarray:
        o, h = self.mesh.cell_origin[cells], self.mesh.cell_size[cells]
        return np.clip((points - o) / h, 0.0, 1.0)

    def evaluate_in_cells(self, coeffs, cells, points):
        """Values and gradients at ``points`` known to lie in ``cells``."""
        ref = self.to_reference(cells, points)
        vx, dx, _ = lagrange_1d(self.p, ref[:, 0])
        vy, dy, _ = lagrange_1d(self.p, ref[:, 1])
        n = len(points)
        val_b = (vy[:, :, None] * vx[:, None, :]).reshape(n, -1)
        dx_b = (vy[:, :, None] * dx[:, None, :]).reshape(n, -1)
        dy_b = (dy[:, :, None] * vx[:, None, :]).reshape(n, -1)
        u = np.asarray(coeffs)[self.cell_dofs[cells]]
        h = self.mesh.cell_size[cells]
        value = np.einsum("nk,nk->n", u, val_b)
        grad = np.stack([np.einsum("nk,nk->n", u, dx_b) / h[:, 0],
                         np.einsum("nk,nk->n", u, dy_b) / h[:, 1]], axis=-1)
        return value, grad

    def __repr__(self):
        return f"FESpace(Q{self.p}, n_dofs={self.n_dofs}, n_free={self.n_free})"


_space_cache: "weakref.WeakKeyDictionary[Mesh, dict[int, FESpace]]" = \
    weakref.WeakKeyDictionary()


def build_space(mesh: Mesh, p: int) -> FESpace:
    """Q``p`` space on ``mesh``; spaces are cached per mesh object."""
    if p not in SUPPORTED_DEGREES:
        raise DiscretizationError(f"unsupported polynomial degree {p}")
    per_mesh = _space_cache.setdefault(mesh, {})
    if p not in per_mesh:
        per_mesh[p] = FESpace(mesh, p)
    return per_mesh[p]


def evaluate(space: FESpace, coeffs, points):
    """Value and gradient of the finite element function at physical points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    cells = space.mesh.locate(pts)
    if (cells < 0).any():
        bad = pts[np.flatnonzero(cells < 0)[0]]
        raise DiscretizationError(f"point {bad} outside the mesh")
    value, grad = space.evaluate_in_cells(coeffs, cells, pts)
    if np.ndim(points) == 1:
        return value[0], grad[0]
    return value, grad


def interpolate(space: FESpace, g) -> np.ndarray:
    """Nodal interpolant of ``g(x, y)``; hanging values come from constraints."""
    pts = space.nodes[space.free]
    vals = np.broadcast_to(np.asarray(g(pts[:, 0], pts[:, 1]), dtype=float),
                           (len(pts),))
    return space.distribute(vals)


def transfer(src: FESpace, coeffs, dst: FESpace) -> np.ndarray:
    """Nodal interpolation of a finite element function onto another space."""
    if src is dst:
        return np.array(coeffs, dtype=float)
    pts = dst.nodes[dst.free]
    if src.p == dst.p and src.mesh.same_cells(dst.mesh):
        return np.array(coeffs, dtype=float)[
            src.node_index(dst.node_lattice)]
    cells = src.mesh.locate(pts)
    vals, _ = src.evaluate_in_cells(coeffs, cells, pts)
    return dst.distribute(vals)


@dataclass
class Overlay:
    """Common refinement of two meshes of the same quadtree.

    Leaf ``k`` is the square at ``origin[k]`` with extent ``size[k]``; it lies
    inside cell ``cell_a[k]`` of the first mesh and ``cell_b[k]`` of the
    second.
    """

    cell_a: np.ndarray
    cell_b: np.ndarray
    origin: np.ndarray
    size: np.ndarray

    def points(self, ref_points) -> np.ndarray:
        """Physical images ``(n_leaves, nq, 2)`` of reference points."""
        ref = np.atleast_2d(ref_points)
        return self.origin[:, None, :] + self.size[:, None, :] * ref[None, :, :]


def overlay(mesh_a: Mesh, mesh_b: Mesh) -> Overlay:
    """Leaves of the common refinement of ``mesh_a`` and ``mesh_b``."""
    if (mesh_a.nx, mesh_a.ny, mesh_a.domain) != (mesh_b.nx, mesh_b.ny, mesh_b.domain):
        raise DiscretizationError("meshes do not share a coarse grid")
    ca = mesh_a.cell_origin + 0.5 * mesh_a.cell_size
    cb = mesh_b.cell_origin + 0.5 * mesh_b.cell_size
    b_of_a = mesh_b.locate(ca)
    a_of_b = mesh_a.locate(cb)
    keep_a = mesh_b.cell_level[b_of_a] <= mesh_a.cell_level
    keep_b = mesh_a.cell_level[a_of_b] < mesh_b.cell_level
    ia, ib = np.flatnonzero(keep_a), np.flatnonzero(keep_b)
    cell_a = np.concatenate([ia, a_of_b[ib]])
    cell_b = np.concatenate([b_of_a[ia], ib])
    origin = np.concatenate([mesh_a.cell_origin[ia], mesh_b.cell_origin[ib]])
    size = np.concatenate([mesh_a.cell_size[ia], mesh_b.cell_size[ib]])
    order = np.lexsort((cell_a, cell_b))
    return Overlay(cell_a[order], cell_b[order], origin[order], size[order])


def cross_load(src: FESpace, coeffs, dst: FESpace, delta=None, b=None,
               q: int = SPACE_QUAD) -> np.ndarray:
    """``(v, phi_i + delta_K b.grad phi_i)`` for ``v`` living on ``src`` and
    test functions of ``dst``, integrated exactly on the common refinement."""
    ov = overlay(src.mesh, dst.mesh)
    rule = tensor_rule(q)
    pts = ov.points(rule.points)
    nl, nq = pts.shape[:2]
    flat = pts.reshape(-1, 2)
    ca = np.repeat(ov.cell_a, nq)
    cb = np.repeat(ov.cell_b, nq)
    v, _ = src.evaluate_in_cells(coeffs, ca, flat)
    ref = dst.to_reference(cb, flat)
    vx, dx, _ = lagrange_1d(dst.p, ref[:, 0])
    vy, dy, _ = lagrange_1d(dst.p, ref[:, 1])
    n = len(flat)
    test = (vy[:, :, None] * vx[:, None, :]).reshape(n, -1)
    jxw = (ov.size[:, 0] * ov.size[:, 1])[:, None] * rule.weights[None, :]
    vw = v * jxw.ravel()
    local = vw[:, None] * test
    if delta is not None and np.any(np.asarray(delta) > 0):
        h = dst.mesh.cell_size[cb]
        gx = (vy[:, :, None] * dx[:, None, :]).reshape(n, -1) / h[:, 0, None]
        gy = (dy[:, :, None] * vx[:, None, :]).reshape(n, -1) / h[:, 1, None]
        b = np.asarray(b, dtype=float)
        local += (np.asarray(delta)[cb] * vw)[:, None] * (b[0] * gx + b[1] * gy)
    return np.bincount(dst.cell_dofs[cb].ravel(), weights=local.ravel(),
                       minlength=dst.n_dofs)


# -- space-time -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SpaceTimeSlab:
    """Time interval ``(t0, t1]`` with its spatial mesh."""

    t0: float
    t1: float
    mesh: Mesh

    def __post_init__(self):
        if not self.t1 > self.t0:
            raise DiscretizationError(f"degenerate slab ({self.t0}, {self.t1}]")

    @property
    def tau(self) -> float:
        return self.t1 - self.t0

    def time_points(self, q: int = TIME_QUAD) -> tuple[np.ndarray, np.ndarray]:
        g = gauss_rule(q)
        return self.t0 + self.tau * g.points, self.tau * g.weights


def uniform_slabs(mesh: Mesh, T: float, N: int) -> list[SpaceTimeSlab]:
    t = np.linspace(0.0, T, N + 1)
    return [SpaceTimeSlab(float(a), float(b), mesh) for a, b in zip(t[:-1], t[1:])]


def check_slabs(slabs) -> None:
    if not slabs:
        raise DiscretizationError("empty slab sequence")
    for a, b in zip(slabs[:-1], slabs[1:]):
        if abs(a.t1 - b.t0) > 1e-14 * max(1.0, abs(b.t0)):
            raise DiscretizationError("slabs do not form a partition")


class SpaceTimeFunction:
    """Piecewise-polynomial-in-time finite element function on slabs.

    ``kind="dG0"``: one coefficient vector per slab (constant in time).
    ``kind="cG1"``: a pair per slab, values at ``t0`` and ``t1`` of the slab,
    linear in between. When consecutive slabs share a mesh the shared
    endpoint values coincide.
    """

    def __init__(self, slabs, p: int, kind: str, values):
        if kind not in ("dG0", "cG1"):
            raise DiscretizationError(f"unknown temporal kind {kind!r}")
        self.slabs = list(slabs)
        self.p = p
        self.kind = kind
        self.values = [np.asarray(v, dtype=float) for v in values]
        if len(self.values) != len(self.slabs):
            raise DiscretizationError("one coefficient block per slab expected")

    @property
    def N(self) -> int:
        return len(self.slabs)

    def space(self, n: int) -> FESpace:
        return build_space(self.slabs[n].mesh, self.p)

    def start(self, n: int) -> np.ndarray:
        """Right limit at ``t0`` of slab ``n`` (the ``+`` trace)."""
        v = self.values[n]
        return v if self.kind == "dG0" else v[0]

    def end(self, n: int) -> np.ndarray:
        """Left limit at ``t1`` of slab ``n`` (the ``-`` trace)."""
        v = self.values[n]
        return v if self.kind == "dG0" else v[1]

    def at(self, n: int, t) -> np.ndarray:
        """Coefficients at time(s) ``t`` inside slab ``n``; shape ``(..., n_dofs)``."""
        v = self.values[n]
        if self.kind == "dG0":
            return np.broadcast_to(v, np.shape(t) + v.shape)
        s = (np.asarray(t, dtype=float) - self.slabs[n].t0) / self.slabs[n].tau
        s = s[..., None]
        return (1.0 - s) * v[0] + s * v[1]

    def time_derivative(self, n: int) -> np.ndarray:
        if self.kind == "dG0":
            return np.zeros_like(self.values[n])
        return (self.values[n][1] - self.values[n][0]) / self.slabs[n].tau

    def mean(self, n: int) -> np.ndarray:
        v = self.values[n]
        return v if self.kind == "dG0" else 0.5 * (v[0] + v[1])

    def previous_end(self, n: int) -> np.ndarray:
        """``-`` trace at ``t0`` of slab ``n`` transferred to slab ``n``'s space."""
        if n == 0:
            raise DiscretizationError("no slab before the first")
        return transfer(self.space(n - 1), self.end(n - 1), self.space(n))

    def jump(self, n: int) -> np.ndarray:
        """``[v]`` at ``t0`` of slab ``n`` (n >= 1) on slab ``n``'s space."""
        return self.start(n) - self.previous_end(n)

    def scaled(self, c: float) -> "SpaceTimeFunction":
        return SpaceTimeFunction(self.slabs, self.p, self.kind,
                                 [c * v for v in self.values])


def restrict_to_primal(z: SpaceTimeFunction, p: int = 1) -> SpaceTimeFunction:
    """Temporal mean and spatial nodal Q``p`` interpolant on each slab's mesh."""
    vals = []
    for n in range(z.N):
        src = z.space(n)
        dst = build_space(z.slabs[n].mesh, p)
        if dst.mesh is not src.mesh and not dst.mesh.same_cells(src.mesh):
            raise DiscretizationError("mesh mismatch between spaces")
        mean = z.mean(n)
        if src.p == p:
            vals.append(dst.project(mean))
            continue
        idx = src.node_index(dst.node_lattice[dst.free])
        vals.append(dst.distribute(mean[idx]))
    return SpaceTimeFunction(z.slabs, p, "dG0", vals)
