"""Plain-text file formats: meshes, nodal field snapshots, run metadata and traces."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DomainError
from .geometry import Circle, Marker, Mesh

__all__ = [
    "write_mesh",
    "read_mesh",
    "field_filename",
    "write_field_csv",
    "read_field_csv",
    "write_metadata",
    "read_metadata",
    "write_csv",
    "read_csv",
]

_FMT = "%.17g"


def write_mesh(mesh: Mesh, path) -> Path:
    """Write ``nodes N triangles T``, node lines, triangle lines, tagged edge lines.

    The triangle marker column is the region (0 outside the cell, 1 inside).
    """
    path = Path(path)
    lines = [f"nodes {mesh.n_nodes} triangles {mesh.n_triangles}"]
    lines += [f"{_FMT % x} {_FMT % y}" for x, y in mesh.nodes]
    lines += [f"{i} {j} {k} {m}" for (i, j, k), m in zip(mesh.triangles, mesh.region)]
    lines += [f"{i} {j} {Marker(m).label}" for (i, j), m in zip(mesh.edges, mesh.edge_markers)]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_mesh(path) -> Mesh:
    """Inverse of :func:`write_mesh`.

    The cell circle is recovered from the ``CellBoundary`` polygon and the
    half width from the node extent. A mesh without interior triangles is
    read back as an annulus whose parent map is the identity.
    """
    rows = Path(path).read_text().split("\n")
    rows = [r for r in rows if r.strip()]
    head = rows[0].split()
    if len(head) != 4 or head[0] != "nodes" or head[2] != "triangles":
        raise DomainError(f"bad mesh header: {rows[0]!r}")
    n, t = int(head[1]), int(head[3])
    nodes = np.array([[float(v) for v in r.split()] for r in rows[1:1 + n]]).reshape(n, 2)
    tri = np.array([[int(v) for v in r.split()] for r in rows[1 + n:1 + n + t]],
                   dtype=np.int64).reshape(t, 4)
    edges, markers = [], []
    for r in rows[1 + n + t:]:
        i, j, name = r.split()
        edges.append((int(i), int(j)))
        markers.append(int(Marker.parse(name)))
    edges = np.array(edges, dtype=np.int64).reshape(-1, 2)
    markers = np.array(markers, dtype=np.int64)

    poly = np.unique(edges[markers == Marker.CELL_BOUNDARY])
    if len(poly) < 3:
        raise DomainError("mesh file has no cell polygon")
    center = nodes[poly].mean(axis=0)
    radius = float(np.mean(np.hypot(*(nodes[poly] - center).T)))
    circle = Circle((center[0], center[1]), radius)
    poly = poly[np.argsort(circle.angle_of(nodes[poly]), kind="stable")]
    half_width = float(np.abs(nodes).max())
    region = tri[:, 3].copy()
    mesh = Mesh(nodes, tri[:, :3].copy(), edges, markers, poly, circle, half_width, region,
                np.arange(n), is_annulus=not np.any(region))
    mesh.validate()
    return mesh


def field_filename(run_id: str, time: float) -> str:
    return f"{run_id}_t{time:.4}.csv"


def write_field_csv(field, directory, run_id: str) -> Path:
    """Columns ``node_index,x,y,value``; NaN values are written as ``nan``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / field_filename(run_id, field.time)
    nodes = field.mesh.nodes
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_index", "x", "y", "value"])
        for k in range(len(nodes)):
            w.writerow([k, _FMT % nodes[k, 0], _FMT % nodes[k, 1], _FMT % field.values[k]])
    return path


def read_field_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Returns node coordinates (N, 2) and values (N,)."""
    data = read_csv(path)
    order = np.argsort(data["node_index"])
    xy = np.column_stack([data["x"], data["y"]])[order]
    return xy, data["value"][order]


def write_metadata(path, values: Mapping) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{k} = {_fmt_value(v)}\n" for k, v in values.items()))
    return path


def _fmt_value(v) -> str:
    if isinstance(v, float):
        return _FMT % v
    if isinstance(v, (list, tuple, np.ndarray)):
        return ", ".join(_fmt_value(x) for x in v)
    return str(v)


def read_metadata(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def write_csv(path, columns: Mapping[str, Sequence]) -> Path:
    """Write equal-length columns; floats at full precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    keys = list(columns)
    cols = [list(columns[k]) for k in keys]
    lengths = {len(c) for c in cols}
    if len(lengths) > 1:
        raise DomainError("columns differ in length")
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for row in zip(*cols):
            w.writerow([_fmt_value(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def read_csv(path) -> dict[str, np.ndarray]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    head, body = rows[0], rows[1:]
    return {k: np.array([float(r[i]) for r in body]) for i, k in enumerate(head)}
