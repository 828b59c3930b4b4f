"""Triangular meshes of a square domain containing one circular cell.

The full mesh covers the whole square; the cell boundary is a regular
polygon whose chords are edges of the triangulation, so removing the
triangles inside the polygon yields the extracellular (annulus) mesh with
identical node coordinates.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay

from .errors import DomainError, InternalError

__all__ = [
    "Marker",
    "Circle",
    "Mesh",
    "BoundaryArc",
    "BoundaryArcs",
    "build_full_mesh",
    "extract_annulus",
    "boundary_arcs",
    "default_circle_points",
]


class Marker(enum.IntEnum):
    OUTER_WALL = 1
    CELL_BOUNDARY = 2

    @classmethod
    def parse(cls, name: str) -> "Marker":
        key = name.replace("-", "_").upper()
        aliases = {"OUTERWALL": "OUTER_WALL", "CELLBOUNDARY": "CELL_BOUNDARY"}
        try:
            return cls[aliases.get(key, key)]
        except KeyError:
            raise ValueError(f"unknown boundary marker {name!r}") from None

    @property
    def label(self) -> str:
        return {Marker.OUTER_WALL: "OuterWall", Marker.CELL_BOUNDARY: "CellBoundary"}[self]


@dataclass(frozen=True)
class Circle:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise DomainError(f"circle radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    def point(self, theta):
        theta = np.asarray(theta, dtype=float)
        return np.stack(
            [self.center[0] + self.radius * np.cos(theta),
             self.center[1] + self.radius * np.sin(theta)],
            axis=-1,
        )

    def angle_of(self, xy):
        xy = np.asarray(xy, dtype=float)
        return np.mod(np.arctan2(xy[..., 1] - self.center[1], xy[..., 0] - self.center[0]), 2 * np.pi)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming P1 triangulation.

    Attributes
    ----------
    nodes : (N, 2) float array
    triangles : (T, 3) int array, counter-clockwise
    edges : (E, 2) int array of tagged edges
    edge_markers : (E,) int array of :class:`Marker` values
    cell_polygon : (n,) int array, node indices of the cell polygon ordered by angle
    circle : the cell
    half_width : half side length of the square domain
    region : (T,) int array, 0 outside the cell, 1 inside
    parent_nodes : (N,) int array mapping to the full mesh (identity for a full mesh)
    """

    nodes: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    edge_markers: np.ndarray
    cell_polygon: np.ndarray
    circle: Circle
    half_width: float
    region: np.ndarray
    parent_nodes: np.ndarray
    is_annulus: bool = False
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for name in ("nodes", "triangles", "edges", "edge_markers", "cell_polygon",
                     "region", "parent_nodes"):
            arr = getattr(self, name)
            arr.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def area(self) -> float:
        return float(self.signed_areas().sum())

    def all_edges(self) -> np.ndarray:
        """Unique undirected edges, each as a sorted pair."""
        if "all_edges" not in self._cache:
            e = np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]],
                                self.triangles[:, [2, 0]]])
            e.sort(axis=1)
            self._cache["all_edges"] = np.unique(e, axis=0)
        return self._cache["all_edges"]

    def edge_triangle_counts(self) -> tuple[np.ndarray, np.ndarray]:
        e = np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]],
                            self.triangles[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0, return_counts=True)

    def topological_boundary(self) -> np.ndarray:
        edges, counts = self.edge_triangle_counts()
        return edges[counts == 1]

    def mean_edge_length(self) -> float:
        e = self.all_edges()
        return float(np.linalg.norm(self.nodes[e[:, 0]] - self.nodes[e[:, 1]], axis=1).mean())

    def marked_edges(self, marker: Marker) -> np.ndarray:
        return self.edges[self.edge_markers == int(marker)]

    def edge_to_triangle(self) -> dict:
        """Map sorted edge pair -> list of adjacent triangle indices."""
        if "edge_tri" not in self._cache:
            table: dict = {}
            for t, tri in enumerate(self.triangles):
                for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                    key = (a, b) if a < b else (b, a)
                    table.setdefault(key, []).append(t)
            self._cache["edge_tri"] = table
        return self._cache["edge_tri"]

    def restrict(self, values_on_parent: np.ndarray) -> np.ndarray:
        """Restrict a nodal field given on the parent (full) mesh to this mesh."""
        return np.asarray(values_on_parent)[..., self.parent_nodes]

    def validate(self) -> None:
        areas = self.signed_areas()
        if np.any(areas <= 0):
            bad = int(np.argmin(areas))
            raise InternalError(f"triangle {bad} has non-positive area {areas[bad]:.3e}")
        edges, counts = self.edge_triangle_counts()
        if np.any(counts > 2):
            raise InternalError("non-conforming triangulation: edge shared by >2 triangles")
        boundary = {tuple(e) for e in edges[counts == 1]}
        tagged = {}
        for (a, b), m in zip(np.sort(self.edges, axis=1), self.edge_markers):
            key = (int(a), int(b))
            if key in tagged:
                raise InternalError(f"edge {key} carries more than one marker")
            tagged[key] = m
        missing = [e for e in boundary if e not in tagged]
        if missing:
            raise InternalError(f"{len(missing)} boundary edges carry no marker")
        r = np.linalg.norm(self.nodes[self.cell_polygon] - np.array(self.circle.center), axis=1)
        if np.max(np.abs(r - self.circle.radius)) > 1e-12:
            raise InternalError("cell polygon nodes are not on the circle")

    def save(self, path) -> None:
        from .io import write_mesh

        write_mesh(self, path)


@dataclass(frozen=True)
class BoundaryArc:
    edge: tuple[int, int]
    theta_range: tuple[float, float]
    length: float
    theta: float


@dataclass(frozen=True, eq=False)
class BoundaryArcs:
    """Tagged boundary edges sorted by the polar angle of their midpoints.

    Arrays are aligned; ``theta`` is the midpoint angle about the cell
    center and ``theta_lo``/``theta_hi`` the angles of the endpoints.
    """

    edges: np.ndarray
    theta: np.ndarray
    theta_lo: np.ndarray
    theta_hi: np.ndarray
    length: np.ndarray
    midpoints: np.ndarray
    marker: Marker

    def __len__(self) -> int:
        return len(self.edges)

    def __getitem__(self, i) -> BoundaryArc:
        return BoundaryArc(
            edge=(int(self.edges[i, 0]), int(self.edges[i, 1])),
            theta_range=(float(self.theta_lo[i]), float(self.theta_hi[i])),
            length=float(self.length[i]),
            theta=float(self.theta[i]),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def total_length(self) -> float:
        return float(self.length.sum())


def default_circle_points(radius: float = 1.0, target_h: float = 0.0875) -> int:
    """Polygon resolution: 128 points for the unit cell at h = 0.0875.

    Scales with perimeter / h so the chord-to-h ratio stays fixed, never
    below 64 points.
    """
    return max(64, int(round(128 * 0.0875 * radius / target_h)))


def _ring(center, radius, count, phase=0.0):
    theta = phase + 2 * np.pi * np.arange(count) / count
    return np.column_stack([center[0] + radius * np.cos(theta),
                            center[1] + radius * np.sin(theta)])


def _graded_rings(circle: Circle, chord: float, h: float, outward: bool, growth: float = 1.25):
    """Concentric point rings next to the cell polygon, spacing grows towards h.

    Returns the points and the radius beyond (outward) or within (inward)
    which the uniform lattice may take over.
    """
    R = circle.radius
    pts = []
    radius = R
    spacing = chord
    phase = 0.0
    while True:
        step = spacing * np.sqrt(3) / 2
        radius = radius + step if outward else radius - step
        if not outward and radius < 0.75 * spacing:
            pts.append(np.array([circle.center]))
            return np.vstack(pts), 0.0
        if not outward and spacing >= h:
            return (np.vstack(pts) if pts else np.empty((0, 2))), radius + step
        count = max(6, int(round(2 * np.pi * radius / spacing)))
        phase += np.pi / count
        pts.append(_ring(circle.center, radius, count, phase))
        if spacing >= h:
            return np.vstack(pts), radius
        spacing = min(h, spacing * growth)


def build_full_mesh(
    half_width: float,
    cell: Circle,
    n_circle_points: int | None = None,
    target_h: float = 0.0875,
) -> Mesh:
    """Mesh the square ``[-half_width, half_width]^2`` with the cell polygon embedded.

    Parameters
    ----------
    half_width : float
        Half of the side length of the square domain.
    cell : Circle
        The cell. Must lie strictly inside the square.
    n_circle_points : int, optional
        Number of polygon vertices on the cell boundary (>= 16). Defaults to
        :func:`default_circle_points`.
    target_h : float
        Target edge length away from the cell.

    Returns
    -------
    Mesh
        Full mesh; ``region`` marks triangles inside the polygon with 1.
    """
    if not target_h > 0:
        raise DomainError(f"target_h must be positive, got {target_h}")
    if n_circle_points is None:
        n_circle_points = default_circle_points(cell.radius, target_h)
    if n_circle_points < 16:
        raise DomainError(f"n_circle_points must be >= 16, got {n_circle_points}")
    L = float(half_width)
    cx, cy = cell.center
    R = cell.radius
    if min(L - abs(cx), L - abs(cy)) <= R:
        raise DomainError("cell circle intersects or touches the outer wall")

    h = float(target_h)
    chord = 2 * R * np.sin(np.pi / n_circle_points)
    h_eff = max(h, chord)

    theta = 2 * np.pi * np.arange(n_circle_points) / n_circle_points
    circle_pts = cell.point(theta)

    outer, r_out = _graded_rings(cell, chord, h_eff, outward=True)
    inner, r_in = _graded_rings(cell, chord, h_eff, outward=False)

    # boundary of the square, corners included exactly once
    n_side = max(2, int(np.ceil(2 * L / h)))
    s = np.linspace(-L, L, n_side + 1)
    side = np.concatenate([
        np.column_stack([s[:-1], np.full(n_side, -L)]),
        np.column_stack([np.full(n_side, L), s[:-1]]),
        np.column_stack([s[::-1][:-1], np.full(n_side, L)]),
        np.column_stack([np.full(n_side, -L), s[::-1][:-1]]),
    ])

    # triangular lattice in the interior
    dy = h * np.sqrt(3) / 2
    ys = np.arange(-L + dy, L - 0.45 * h, dy)
    rows = []
    for i, y in enumerate(ys):
        xs = np.arange(-L + (0.5 * h if i % 2 == 0 else h), L - 0.45 * h, h)
        rows.append(np.column_stack([xs, np.full_like(xs, y)]))
    lattice = np.vstack(rows) if rows else np.empty((0, 2))
    dist = np.hypot(lattice[:, 0] - cx, lattice[:, 1] - cy)
    lattice = lattice[(dist > r_out + 0.6 * h_eff) | (dist < r_in - 0.6 * h_eff)]

    # ring points too close to the wall would make slivers
    def inside(pts, margin):
        return (np.abs(pts[:, 0]) < L - margin) & (np.abs(pts[:, 1]) < L - margin)

    outer = outer[inside(outer, 0.45 * h)]

    points = np.vstack([circle_pts, inner, outer, side, lattice])
    poly_idx = np.arange(n_circle_points)

    tri = Delaunay(points)
    if len(tri.coplanar):
        raise InternalError(f"{len(tri.coplanar)} points were dropped by the triangulation")
    triangles = np.asarray(tri.simplices, dtype=np.int64)

    p = points[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    areas = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    flip = areas < 0
    triangles[flip] = triangles[flip][:, [0, 2, 1]]
    areas = np.abs(areas)
    tiny = 1e-10 * h * h
    if np.any(areas <= tiny):
        raise InternalError(
            f"degenerate triangle produced (min area {areas.min():.3e}); "
            "try a different target_h or n_circle_points"
        )

    poly_edges = np.column_stack([poly_idx, np.roll(poly_idx, -1)])
    tmp = Mesh(points, triangles, np.empty((0, 2), int), np.empty(0, int), poly_idx, cell, L,
               np.zeros(len(triangles), int), np.arange(len(points)))
    existing = {tuple(e) for e in tmp.all_edges()}
    missing = [tuple(sorted(e)) for e in poly_edges if tuple(sorted(e)) not in existing]
    if missing:
        raise InternalError(f"cell polygon is not conforming: {len(missing)} chords missing")

    wall = tmp.topological_boundary()
    on_wall = np.isclose(np.abs(points[wall]).max(axis=2), L).all(axis=1)
    if not on_wall.all():
        raise InternalError("mesh boundary does not coincide with the square")

    region = _inside_polygon(points[triangles].mean(axis=1), circle_pts).astype(np.int64)
    edges = np.vstack([wall, poly_edges])
    markers = np.concatenate([np.full(len(wall), int(Marker.OUTER_WALL)),
                              np.full(len(poly_edges), int(Marker.CELL_BOUNDARY))])
    mesh = Mesh(points, triangles, edges, markers, poly_idx, cell, L, region,
                np.arange(len(points)))
    mesh.validate()
    return mesh


def _inside_polygon(pts: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Points strictly inside a convex counter-clockwise polygon."""
    a = poly
    b = np.roll(poly, -1, axis=0)
    inside = np.ones(len(pts), dtype=bool)
    for k in range(len(poly)):
        cross = (b[k, 0] - a[k, 0]) * (pts[:, 1] - a[k, 1]) - (b[k, 1] - a[k, 1]) * (pts[:, 0] - a[k, 0])
        inside &= cross > 0
    return inside


def extract_annulus(full: Mesh) -> Mesh:
    """Submesh of the triangles outside the cell polygon.

    The returned mesh's ``parent_nodes`` maps each of its nodes to the full
    mesh node with identical coordinates.
    """
    if full.is_annulus:
        raise InternalError("mesh is already an annulus")
    poly = full.cell_polygon
    poly_edges = np.sort(np.column_stack([poly, np.roll(poly, -1)]), axis=1)
    existing = {tuple(e) for e in full.all_edges()}
    if not all(tuple(e) in existing for e in poly_edges):
        raise InternalError("cell polygon is not a closed edge cycle of the mesh")

    keep = full.region == 0
    tris = full.triangles[keep]
    used = np.unique(tris)
    remap = -np.ones(full.n_nodes, dtype=np.int64)
    remap[used] = np.arange(len(used))
    tris = remap[tris]
    edges = remap[full.edges]
    if np.any(edges < 0):
        raise InternalError("tagged edge lost while extracting the annulus")
    mesh = Mesh(
        nodes=full.nodes[used].copy(),
        triangles=tris,
        edges=edges,
        edge_markers=full.edge_markers.copy(),
        cell_polygon=remap[poly],
        circle=full.circle,
        half_width=full.half_width,
        region=np.zeros(len(tris), dtype=np.int64),
        parent_nodes=used,
        is_annulus=True,
    )
    mesh.validate()
    return mesh


def boundary_arcs(mesh: Mesh, marker: Marker = Marker.CELL_BOUNDARY) -> BoundaryArcs:
    """Tagged edges as angular arcs about the cell center, sorted by angle."""
    key = ("arcs", int(marker))
    if key in mesh._cache:
        return mesh._cache[key]
    edges = mesh.marked_edges(marker)
    if len(edges) == 0:
        raise DomainError(f"mesh has no edges marked {Marker(marker).label}")
    circle = mesh.circle
    a = mesh.nodes[edges[:, 0]]
    b = mesh.nodes[edges[:, 1]]
    mid = 0.5 * (a + b)
    theta = circle.angle_of(mid)
    ta = circle.angle_of(a)
    tb = circle.angle_of(b)
    lo = np.minimum(ta, tb)
    hi = np.maximum(ta, tb)
    # an edge whose endpoints straddle theta = 0
    wrap = (hi - lo) > np.pi
    lo, hi = np.where(wrap, hi, lo), np.where(wrap, lo + 2 * np.pi, hi)
    order = np.argsort(theta, kind="stable")
    arcs = BoundaryArcs(
        edges=edges[order],
        theta=theta[order],
        theta_lo=lo[order],
        theta_hi=hi[order],
        length=np.linalg.norm(b - a, axis=1)[order],
        midpoints=mid[order],
        marker=Marker(marker),
    )
    mesh._cache[key] = arcs
    return arcs
