"""Run outputs: convergence CSV, legacy ASCII VTK snapshots and a summary file."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .mesh import TriMesh, aspect_ratios

VTK_TRIANGLE = 5


def write_history_csv(records, path) -> None:
    from .optimizer import IterationRecord

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(IterationRecord.CSV_FIELDS)
        for r in records:
            w.writerow(r.csv_row())


def read_history_csv(path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _fmt(values: np.ndarray) -> str:
    return "\n".join(" ".join(repr(float(v)) for v in row) for row in np.atleast_2d(values))


def format_vtk(mesh: TriMesh, point_data: dict | None = None, title: str = "mesh") -> str:
    """Legacy ASCII unstructured grid.

    ``point_data`` maps names to nodal scalars ``(n,)`` or vectors ``(n, 2)``.
    Cell data always holds the region label and the quality ``1 / aspect
    ratio`` (0 for inverted triangles).
    """
    n, m = mesh.n_vertices, mesh.n_triangles
    pts = np.column_stack([mesh.vertices, np.zeros(n)])
    cells = np.column_stack([np.full(m, 3), mesh.triangles])
    ratio = aspect_ratios(mesh.vertices, mesh.triangles)
    quality = np.where(np.isfinite(ratio), 1.0 / np.where(np.isfinite(ratio), ratio, 1.0), 0.0)
    out = [
        "# vtk DataFile Version 3.0",
        title.replace("\n", " ")[:255],
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {n} double",
        _fmt(pts),
        f"CELLS {m} {4 * m}",
        "\n".join(" ".join(str(int(v)) for v in row) for row in cells),
        f"CELL_TYPES {m}",
        "\n".join([str(VTK_TRIANGLE)] * m),
        f"CELL_DATA {m}",
        "SCALARS region int 1",
        "LOOKUP_TABLE default",
        "\n".join(str(int(v)) for v in mesh.labels),
        "SCALARS quality double 1",
        "LOOKUP_TABLE default",
        _fmt(quality[:, None]),
    ]
    if point_data:
        out.append(f"POINT_DATA {n}")
        for name, values in point_data.items():
            v = np.asarray(values, dtype=float)
            if v.ndim == 1:
                out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default", _fmt(v[:, None])]
            else:
                out += [f"VECTORS {name} double", _fmt(np.column_stack([v.reshape(n, 2), np.zeros(n)]))]
    return "\n".join(out) + "\n"


def write_vtk(mesh: TriMesh, path, point_data: dict | None = None, title: str = "mesh") -> None:
    Path(path).write_text(format_vtk(mesh, point_data, title), encoding="utf-8")


def write_summary(path, values: dict) -> None:
    lines = []
    for k, v in values.items():
        if isinstance(v, float):
            v = repr(v)
        lines.append(f"{k} = {'' if v is None else v}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
