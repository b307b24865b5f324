"""Legacy ASCII VTK unstructured-grid snapshots of deformed P2 meshes."""

from __future__ import annotations

import numpy as np

# local P2 node order here: v0 v1 v2 v3, m01 m02 m03 m12 m13 m23;
# VTK quadratic tetra (cell type 24) wants v0 v1 v2 v3, m01 m12 m02 m03 m13 m23
_VTK_ORDER = (0, 1, 2, 3, 4, 7, 5, 6, 8, 9)
QUADRATIC_TET = 24


def write_snapshot(path, space, field, comment: str = "viscofem snapshot") -> None:
    """Write deformed point positions and displacement vectors.

    Cells are quadratic tetrahedra (VTK cell type 24); the header comment
    records that choice.
    """
    points = field.positions()
    disp = points - space.nodes
    cells = space.element_nodes[:, _VTK_ORDER]
    ncells = cells.shape[0]
    with open(path, "w") as f:
        f.write("# vtk DataFile Version 3.0\n")
        f.write(f"{comment} [quadratic tets, cell type {QUADRATIC_TET}]\n")
        f.write("ASCII\n")
        f.write("DATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {points.shape[0]} double\n")
        for x, y, z in points:
            f.write(f"{x:.12g} {y:.12g} {z:.12g}\n")
        f.write(f"\nCELLS {ncells} {ncells * 11}\n")
        for row in cells:
            f.write("10 " + " ".join(str(int(v)) for v in row) + "\n")
        f.write(f"\nCELL_TYPES {ncells}\n")
        for _ in range(ncells):
            f.write(f"{QUADRATIC_TET}\n")
        f.write(f"\nPOINT_DATA {points.shape[0]}\n")
        f.write("VECTORS displacement double\n")
        for x, y, z in disp:
            f.write(f"{x:.12g} {y:.12g} {z:.12g}\n")


def read_points(path) -> np.ndarray:
    """Read back the POINTS block (for round-trip tests)."""
    with open(path) as f:
        lines = f.readlines()
    for i, line in enumerate(lines):
        if line.startswith("POINTS"):
            n = int(line.split()[1])
            data = [tuple(float(v) for v in lines[i + 1 + k].split()) for k in range(n)]
            return np.array(data)
    raise ValueError(f"no POINTS block in {path}")
