"""Legacy ASCII VTK output of slab meshes and nodal fields."""
from __future__ import annotations

import numpy as np

from .discretization import FESpace, build_space
from .mesh import Mesh

VTK_QUAD = 9


def vertex_values(space: FESpace, coeffs) -> np.ndarray:
    """Values of a Q1 or Q2 field at the mesh vertices."""
    coeffs = np.asarray(coeffs, dtype=float)
    if space.p == 1:
        return coeffs
    return coeffs[space.node_index(space.mesh.vertex_lattice)]


def write_vtk(path, mesh: Mesh, point_data: dict | None = None,
              cell_data: dict | None = None, title: str = "supgdwr") -> None:
    """Write ``mesh`` as an unstructured grid of quads.

    ``point_data`` maps names to vertex arrays, ``cell_data`` to per-cell
    arrays.
    """
    nv, nc = len(mesh.vertices), mesh.n_cells
    lines = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {nv} double"]
    lines += [f"{x:.12e} {y:.12e} 0" for x, y in mesh.vertices]
    lines.append(f"CELLS {nc} {5 * nc}")
    lines += ["4 " + " ".join(str(int(v)) for v in c) for c in mesh.cells]
    lines.append(f"CELL_TYPES {nc}")
    lines += [str(VTK_QUAD)] * nc
    for kind, data, size in (("POINT_DATA", point_data, nv), ("CELL_DATA", cell_data, nc)):
        if not data:
            continue
        lines.append(f"{kind} {size}")
        for name, values in data.items():
            values = np.asarray(values, dtype=float).ravel()
            if len(values) != size:
                raise ValueError(f"{name!r} has {len(values)} values, expected {size}")
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [f"{v:.12e}" for v in values]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_slab(path, slab, u=None, z=None, n: int | None = None, indicators=None) -> None:
    """Snapshot of one slab: ``u`` (dG(0) value), ``z`` at the slab end and
    the cell indicators, whichever are given."""
    mesh = slab.mesh
    point, cell = {}, {}
    if u is not None:
        point["u"] = vertex_values(build_space(mesh, u.p), u.end(n))
    if z is not None:
        point["z"] = vertex_values(build_space(mesh, z.p), z.end(n))
    if indicators is not None:
        cell["eta"] = indicators.cells[n]
    write_vtk(path, mesh, point, cell, title=f"slab {n + 1} t=[{slab.t0:.6g},{slab.t1:.6g}]")
