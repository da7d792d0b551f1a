"""Legacy ASCII VTK output for quadrilateral meshes and nodal fields."""

from __future__ import annotations

import numpy as np

from .mesh import Mesh

VTK_QUAD = 9


def write_vtk(
    path: str,
    mesh: Mesh,
    point_scalars: dict[str, np.ndarray] | None = None,
    point_vectors: dict[str, np.ndarray] | None = None,
    title: str = "pffc fields",
) -> None:
    """Write an unstructured-grid file with optional nodal data.

    Scalars are one value per vertex; vectors are (n_vertices, 2) arrays
    padded with a zero third component.
    """
    point_scalars = point_scalars or {}
    point_vectors = point_vectors or {}
    n = mesh.n_vertices
    for name, data in point_scalars.items():
        if np.shape(data) != (n,):
            raise ValueError(f"scalar field {name!r} must have one value per vertex")
    for name, data in point_vectors.items():
        if np.shape(data) != (n, 2):
            raise ValueError(f"vector field {name!r} must be (n_vertices, 2)")

    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(title + "\n")
        fh.write("ASCII\n")
        fh.write("DATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {n} double\n")
        for x, y in mesh.vertices:
            fh.write(f"{x:.10g} {y:.10g} 0\n")
        nc = mesh.n_cells
        fh.write(f"CELLS {nc} {5 * nc}\n")
        for cell in mesh.cells:
            fh.write("4 " + " ".join(str(int(v)) for v in cell) + "\n")
        fh.write(f"CELL_TYPES {nc}\n")
        for _ in range(nc):
            fh.write(f"{VTK_QUAD}\n")
        if point_scalars or point_vectors:
            fh.write(f"POINT_DATA {n}\n")
            for name, data in point_scalars.items():
                fh.write(f"SCALARS {name} double 1\n")
                fh.write("LOOKUP_TABLE default\n")
                for v in np.asarray(data, dtype=float):
                    fh.write(f"{v:.10e}\n")
            for name, data in point_vectors.items():
                fh.write(f"VECTORS {name} double\n")
                for vx, vy in np.asarray(data, dtype=float):
                    fh.write(f"{vx:.10e} {vy:.10e} 0\n")
