"""Quadrilateral meshes on rectangles with 1-irregular quadrisection refinement.

Cells are axis-aligned rectangles addressed by ``(level, i, j)``: cell
``(l, i, j)`` covers the index box ``[i, i+1] x [j, j+1]`` of the ``nx 2^l``
by ``ny 2^l`` grid obtained by ``l`` uniform bisections of the base grid.
All geometry is derived from an integer lattice at level ``MAX_LEVEL`` so
vertices and higher-order nodes can be identified exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_LEVEL = 20
#: Deepest cell level accepted by :func:`refine` (Q2 nodes need one more).
MAX_CELL_LEVEL = MAX_LEVEL - 2

# Edge numbering follows the counterclockwise vertex order
# (0,0) -> (1,0) -> (1,1) -> (0,1): bottom, right, top, left.
EDGE_OFFSETS = np.array([[0, -1], [1, 0], [0, 1], [-1, 0]], dtype=np.int64)
EDGE_NORMALS = EDGE_OFFSETS.astype(float)
BOUNDARY = -1
REFINED = -2


class MeshError(ValueError):
    """Invalid mesh construction or refinement request."""


@dataclass(frozen=True)
class Rectangle:
    x0: float = 0.0
    y0: float = 0.0
    x1: float = 1.0
    y1: float = 1.0

    def __post_init__(self):
        if not (np.isfinite([self.x0, self.y0, self.x1, self.y1]).all()
                and self.x1 > self.x0 and self.y1 > self.y0):
            raise MeshError(f"degenerate rectangle {self}")

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.x1 - self.x0, self.y1 - self.y0))


@dataclass(frozen=True)
class Edges:
    """Interior edge segments, each listed once.

    ``cell`` is the side owning the segment (the finer side for hanging
    edges), ``neighbor`` the cell across it and ``normal`` the unit normal
    pointing from ``cell`` to ``neighbor``. ``start``/``end`` are the
    physical endpoints of the segment.
    """

    cell: np.ndarray
    neighbor: np.ndarray
    normal: np.ndarray
    hanging: np.ndarray
    start: np.ndarray
    end: np.ndarray

    def __len__(self) -> int:
        return len(self.cell)

    @property
    def length(self) -> np.ndarray:
        return np.linalg.norm(self.end - self.start, axis=1)


class Mesh:
    """Immutable 1-irregular quadrilateral mesh of a rectangle.

    Parameters
    ----------
    domain : Rectangle
    nx, ny : int
        Base grid dimensions.
    keys : (n_cells, 3) int array
        Active cells as ``(level, i, j)`` in storage order.
    """

    def __init__(self, domain: Rectangle, nx: int, ny: int, keys):
        self.domain = domain
        self.nx = int(nx)
        self.ny = int(ny)
        keys = np.asarray(keys, dtype=np.int64).reshape(-1, 3)
        keys.setflags(write=False)
        self.keys = keys
        self._tables = {}
        for lev in np.unique(keys[:, 0]):
            idx = np.flatnonzero(keys[:, 0] == lev)
            codes = keys[idx, 1] * (self.ny << int(lev)) + keys[idx, 2]
            order = np.argsort(codes)
            self._tables[int(lev)] = (codes[order], idx[order])
        self._build_geometry()
        self._build_topology()

    # -- geometry -------------------------------------------------------
    @property
    def n_cells(self) -> int:
        return len(self.keys)

    @property
    def cell_level(self) -> np.ndarray:
        return self.keys[:, 0]

    @property
    def max_level(self) -> int:
        return int(self.keys[:, 0].max())

    @property
    def h(self) -> float:
        """Largest cell diameter."""
        return float(self.cell_diameter.max())

    @property
    def lattice_step(self) -> np.ndarray:
        """Physical size of one lattice unit in x and y."""
        d = self.domain
        return np.array([(d.x1 - d.x0) / (self.nx << MAX_LEVEL),
                         (d.y1 - d.y0) / (self.ny << MAX_LEVEL)])

    def lattice_to_physical(self, lattice) -> np.ndarray:
        lattice = np.asarray(lattice)
        return (np.array([self.domain.x0, self.domain.y0])
                + lattice * self.lattice_step)

    def _build_geometry(self):
        lev, i, j = self.keys.T
        span = np.left_shift(1, MAX_LEVEL - lev)
        self.cell_lattice_origin = np.stack([i * span, j * span], axis=1)
        self.cell_lattice_span = span
        self.cell_origin = self.lattice_to_physical(self.cell_lattice_origin)
        self.cell_size = span[:, None] * self.lattice_step[None, :]
        self.cell_diameter = np.hypot(self.cell_size[:, 0], self.cell_size[:, 1])
        self.cell_area = self.cell_size[:, 0] * self.cell_size[:, 1]

        corners = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=np.int64)
        lat = (self.cell_lattice_origin[:, None, :]
               + corners[None, :, :] * span[:, None, None])
        codes = self.encode_lattice(lat.reshape(-1, 2))
        uniq, inverse = np.unique(codes, return_inverse=True)
        self.vertex_lattice = self.decode_lattice(uniq)
        self.vertices = self.lattice_to_physical(self.vertex_lattice)
        self.cells = inverse.reshape(-1, 4)

    def encode_lattice(self, lattice) -> np.ndarray:
        lattice = np.asarray(lattice, dtype=np.int64)
        return lattice[..., 0] * ((self.ny << MAX_LEVEL) + 1) + lattice[..., 1]

    def decode_lattice(self, codes) -> np.ndarray:
        w = (self.ny << MAX_LEVEL) + 1
        codes = np.asarray(codes, dtype=np.int64)
        return np.stack([codes // w, codes % w], axis=-1)

    # -- cell lookup ----------------------------------------------------
    def lookup(self, lev, i, j) -> np.ndarray:
        """Index of the active cell with key ``(lev, i, j)`` or -1."""
        lev, i, j = np.broadcast_arrays(*(np.asarray(a, dtype=np.int64)
                                          for a in (lev, i, j)))
        out = np.full(lev.shape, -1, dtype=np.int64)
        for level, (codes, idx) in self._tables.items():
            sel = lev == level
            if not sel.any():
                continue
            ii, jj = i[sel], j[sel]
            ok = ((ii >= 0) & (jj >= 0)
                  & (ii < (self.nx << level)) & (jj < (self.ny << level)))
            c = ii * (self.ny << level) + jj
            pos = np.clip(np.searchsorted(codes, c), 0, len(codes) - 1)
            hit = ok & (codes[pos] == c)
            res = np.full(c.shape, -1, dtype=np.int64)
            res[hit] = idx[pos[hit]]
            out[sel] = res
        return out

    def locate(self, points) -> np.ndarray:
        """Index of an active cell containing each point (-1 if outside)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        d = self.domain
        tol = 1e-12 * d.diagonal
        inside = ((points[:, 0] >= d.x0 - tol) & (points[:, 0] <= d.x1 + tol)
                  & (points[:, 1] >= d.y0 - tol) & (points[:, 1] <= d.y1 + tol))
        rel = (points - np.array([d.x0, d.y0])) / np.array(
            [d.x1 - d.x0, d.y1 - d.y0])
        out = np.full(len(points), -1, dtype=np.int64)
        for level in sorted(self._tables):
            todo = inside & (out < 0)
            if not todo.any():
                break
            gx, gy = self.nx << level, self.ny << level
            i = np.clip(np.floor(rel[todo, 0] * gx).astype(np.int64), 0, gx - 1)
            j = np.clip(np.floor(rel[todo, 1] * gy).astype(np.int64), 0, gy - 1)
            out[todo] = self.lookup(level, i, j)
        return out

    # -- topology -------------------------------------------------------
    def _build_topology(self):
        lev, i, j = self.keys.T
        n = self.n_cells
        neighbors = np.full((n, 4), BOUNDARY, dtype=np.int64)
        coarser = np.zeros((n, 4), dtype=bool)
        for e, (di, dj) in enumerate(EDGE_OFFSETS):
            ni, nj = i + di, j + dj
            in_domain = ((ni >= 0) & (nj >= 0)
                         & (ni < np.left_shift(self.nx, lev))
                         & (nj < np.left_shift(self.ny, lev)))
            same = self.lookup(lev, ni, nj)
            parent = np.where(lev > 0,
                              self.lookup(lev - 1, ni >> 1, nj >> 1), -1)
            parent = np.where(lev > 0, parent, -1)
            nb = np.where(same >= 0, same, parent)
            nb = np.where(in_domain & (nb < 0), REFINED, nb)
            nb = np.where(in_domain, nb, BOUNDARY)
            neighbors[:, e] = nb
            coarser[:, e] = (same < 0) & (parent >= 0) & in_domain
        self.neighbors = neighbors
        self._coarser = coarser

    def boundary_edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell indices and local edge numbers lying on the boundary."""
        cell, edge = np.nonzero(self.neighbors == BOUNDARY)
        return cell, edge

    def edge_endpoints(self, cell, edge) -> tuple[np.ndarray, np.ndarray]:
        """Physical endpoints of local edge ``edge`` of ``cell`` (CCW order)."""
        cell = np.asarray(cell)
        edge = np.asarray(edge)
        v = self.vertices[self.cells[cell]]
        a = v[np.arange(len(cell)), edge]
        b = v[np.arange(len(cell)), (edge + 1) % 4]
        return a, b

    def edge_list(self) -> Edges:
        """Interior edge segments; hanging edges appear as fine sub-edges."""
        cells, owners, normals, hanging = [], [], [], []
        for e in range(4):
            nb = self.neighbors[:, e]
            if e in (1, 2):
                take = nb >= 0
            else:
                # left/bottom neighbors are listed from their own side unless
                # they are coarser, in which case this cell owns the segment
                take = self._coarser[:, e]
            idx = np.flatnonzero(take)
            cells.append(idx)
            owners.append(np.full(len(idx), e))
            normals.append(np.repeat(EDGE_NORMALS[e][None, :], len(idx), axis=0))
            hanging.append(self._coarser[idx, e])
        cell = np.concatenate(cells)
        edge = np.concatenate(owners)
        order = np.lexsort((edge, cell))
        cell, edge = cell[order], edge[order]
        start, end = self.edge_endpoints(cell, edge)
        return Edges(cell=cell, neighbor=self.neighbors[cell, edge],
                     normal=EDGE_NORMALS[edge].copy(),
                     hanging=self._coarser[cell, edge], start=start, end=end)

    def hanging_nodes(self) -> np.ndarray:
        """Rows ``(hanging vertex, parent vertex a, parent vertex b)``."""
        rows = set()
        vcodes = self.encode_lattice(self.vertex_lattice)
        cell, edge = np.nonzero(self._coarser)
        for c, e in zip(cell.tolist(), edge.tolist()):
            coarse = int(self.neighbors[c, e])
            # the coarse cell's edge facing back toward ``c``
            ce = (e + 2) % 4
            a, b = self.cells[coarse, ce], self.cells[coarse, (ce + 1) % 4]
            mid = (self.vertex_lattice[a] + self.vertex_lattice[b]) // 2
            code = self.encode_lattice(mid)
            vidx = int(np.searchsorted(vcodes, code))
            rows.add((vidx, int(min(a, b)), int(max(a, b))))
        if not rows:
            return np.zeros((0, 3), dtype=np.int64)
        return np.array(sorted(rows), dtype=np.int64)

    def max_level_jump(self) -> int:
        """Largest level difference between cells sharing part of an edge."""
        jump = 0
        cell, edge = np.nonzero(self.neighbors >= 0)
        if len(cell):
            diff = np.abs(self.cell_level[cell]
                          - self.cell_level[self.neighbors[cell, edge]])
            jump = int(diff.max())
        # a REFINED marker with no child at level+1 means a deeper gap
        cell, edge = np.nonzero(self.neighbors == REFINED)
        if len(cell):
            lev, i, j = self.keys[cell].T
            di, dj = EDGE_OFFSETS[edge].T
            ci = 2 * (i + di) + (di < 0)
            cj = 2 * (j + dj) + (dj < 0)
            # probe both children touching the shared edge
            oi = np.where(di == 0, 1, 0)
            oj = np.where(dj == 0, 1, 0)
            c1 = self.lookup(lev + 1, ci, cj)
            c2 = self.lookup(lev + 1, ci + oi, cj + oj)
            if ((c1 < 0) | (c2 < 0)).any():
                jump = max(jump, 2)
        return jump

    # -- comparison -----------------------------------------------------
    def same_cells(self, other: "Mesh") -> bool:
        return (self is other
                or (self.domain == other.domain and self.nx == other.nx
                    and self.ny == other.ny
                    and np.array_equal(self.keys, other.keys)))

    def __repr__(self):
        return (f"Mesh(n_cells={self.n_cells}, n_vertices={len(self.vertices)}, "
                f"max_level={self.max_level})")


def create_rectangle_mesh(domain: Rectangle, nx: int, ny: int) -> Mesh:
    """Uniform ``nx`` by ``ny`` grid of level-0 cells."""
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise MeshError(f"cell counts must be positive integers, got {nx}, {ny}")
    if not isinstance(domain, Rectangle):
        domain = Rectangle(*domain)
    jj, ii = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    keys = np.stack([np.zeros(nx * ny, dtype=np.int64),
                     ii.ravel(), jj.ravel()], axis=1)
    return Mesh(domain, nx, ny, keys)


def refine(mesh: Mesh, marked) -> Mesh:
    """Quadrisect the marked cells, refining neighbors to keep 1-irregularity.

    Children replace their parent in storage order, numbered
    lower-left, lower-right, upper-left, upper-right.
    """
    marked = sorted({int(c) for c in np.atleast_1d(np.asarray(marked, dtype=np.int64))}
                    if np.size(marked) else set())
    for c in marked:
        if c < 0 or c >= mesh.n_cells:
            raise MeshError(f"unknown cell id {c}")
    if not marked:
        return mesh

    active = {tuple(k): idx for idx, k in enumerate(mesh.keys.tolist())}
    refined: set[tuple[int, int, int]] = set()

    def split(key):
        if key in refined:
            return
        lev, i, j = key
        if lev >= MAX_CELL_LEVEL:
            raise MeshError(f"refinement beyond level {MAX_CELL_LEVEL}")
        for di, dj in EDGE_OFFSETS.tolist():
            ni, nj = i + di, j + dj
            if not (0 <= ni < mesh.nx << lev and 0 <= nj < mesh.ny << lev):
                continue
            if lev > 0 and (lev, ni, nj) not in active and not _is_split_child(
                    (lev, ni, nj), refined):
                parent = (lev - 1, ni >> 1, nj >> 1)
                if parent in active and parent not in refined:
                    split(parent)
        refined.add(key)

    for c in marked:
        split(tuple(mesh.keys[c].tolist()))

    out = []
    for k in mesh.keys.tolist():
        key = tuple(k)
        if key in refined:
            lev, i, j = key
            out.extend([(lev + 1, 2 * i, 2 * j), (lev + 1, 2 * i + 1, 2 * j),
                        (lev + 1, 2 * i, 2 * j + 1), (lev + 1, 2 * i + 1, 2 * j + 1)])
        else:
            out.append(key)
    return Mesh(mesh.domain, mesh.nx, mesh.ny, np.array(out, dtype=np.int64))


def _is_split_child(key, refined) -> bool:
    lev, i, j = key
    return lev > 0 and (lev - 1, i >> 1, j >> 1) in refined


def refine_uniform(mesh: Mesh, times: int = 1) -> Mesh:
    for _ in range(times):
        mesh = refine(mesh, np.arange(mesh.n_cells))
    return mesh
