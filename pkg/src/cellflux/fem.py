"""Linear (P1) finite elements on triangles.

Assembly of the consistent mass and stiffness matrices, boundary and point
load vectors, a preconditioned CG solve, implicit Euler stepping and
post-processing of the normal flux across the cell polygon.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg

from .errors import DomainError, InternalError, NumericalError
from .geometry import BoundaryArcs, Marker, Mesh, boundary_arcs

__all__ = [
    "ScalarField",
    "FluxProfile",
    "SolveInfo",
    "assemble_mass",
    "assemble_stiffness",
    "assemble_boundary_load",
    "edge_quadrature",
    "edge_load_matrix",
    "point_load_matrix",
    "assemble_point_load",
    "locate_points",
    "solve_spd",
    "backward_euler_step",
    "ImplicitEuler",
    "boundary_flux_postprocess",
    "p1_gradients",
]


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Nodal values of a P1 function at one time."""

    mesh: Mesh
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.mesh.n_nodes,):
            raise DomainError(
                f"field has {values.shape} values for a mesh with {self.mesh.n_nodes} nodes"
            )
        object.__setattr__(self, "values", values)

    def to_csv(self, directory, run_id: str) -> Path:
        from .io import write_field_csv

        return write_field_csv(self, directory, run_id)


@dataclass(frozen=True, eq=False)
class FluxProfile:
    """Flux density samples over the cell boundary at one time.

    ``theta`` is strictly increasing in [0, 2*pi); ``length`` holds the
    boundary length each sample represents (may be None).
    """

    theta: np.ndarray
    values: np.ndarray
    time: float = 0.0
    length: np.ndarray | None = None

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if theta.shape != values.shape:
            raise DomainError("theta and values differ in shape")
        if theta.size and (np.any(np.diff(theta) <= 0) or theta[0] < 0 or theta[-1] >= 2 * np.pi):
            raise DomainError("theta must be strictly increasing in [0, 2pi)")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "values", values)
        if self.length is not None:
            object.__setattr__(self, "length", np.asarray(self.length, dtype=float))

    def __len__(self):
        return len(self.theta)


@dataclass
class SolveInfo:
    iterations: int = 0
    residual: float = 0.0


def p1_gradients(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the three barycentric basis functions on every triangle.

    Returns
    -------
    grads : (T, 3, 2) array
    area : (T,) array
    """
    key = "p1_grads"
    if key not in mesh._cache:
        p = mesh.nodes[mesh.triangles]
        x, y = p[..., 0], p[..., 1]
        area = 0.5 * ((x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0])
                      - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0]))
        # grad lambda_i = (y_j - y_k, x_k - x_j) / (2 area) for cyclic (i, j, k)
        g = np.empty(p.shape)
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            g[:, i, 0] = y[:, j] - y[:, k]
            g[:, i, 1] = x[:, k] - x[:, j]
        g /= (2 * area)[:, None, None]
        mesh._cache[key] = (g, area)
    return mesh._cache[key]


def _scatter(mesh: Mesh, local: np.ndarray) -> sp.csr_matrix:
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    n = mesh.n_nodes
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def assemble_mass(mesh: Mesh) -> sp.csr_matrix:
    """Consistent P1 mass matrix."""
    _, area = p1_gradients(mesh)
    ref = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
    return _scatter(mesh, area[:, None, None] * ref)


def assemble_stiffness(mesh: Mesh, D: float = 1.0) -> sp.csr_matrix:
    """P1 stiffness matrix for ``-div(D grad u)`` with natural boundary conditions."""
    if not D > 0:
        raise DomainError(f"diffusivity must be positive, got {D}")
    g, area = p1_gradients(mesh)
    local = D * area[:, None, None] * np.einsum("tid,tjd->tij", g, g)
    K = _scatter(mesh, local)
    # exact zero row sums: the diagonal is minus the off-diagonal sum
    off = (K - sp.diags(K.diagonal())).tocsr()
    off.eliminate_zeros()
    return (off - sp.diags(np.asarray(off.sum(axis=1)).ravel())).tocsr()


def assemble_boundary_load(mesh: Mesh, marker: Marker, g: Callable) -> np.ndarray:
    """Trapezoidal boundary load ``b_i = int g(theta) phi_i dGamma``.

    Each edge gives ``length/2 * g(theta_node)`` to both of its endpoints;
    ``theta`` is the polar angle of the node about the cell center.
    """
    edges = mesh.marked_edges(marker)
    if len(edges) == 0:
        raise DomainError(f"mesh has no edges marked {Marker(marker).label}")
    length = np.linalg.norm(mesh.nodes[edges[:, 0]] - mesh.nodes[edges[:, 1]], axis=1)
    theta = mesh.circle.angle_of(mesh.nodes)
    values = np.asarray(g(theta[edges]), dtype=float)
    values = np.broadcast_to(values, edges.shape)
    if not np.all(np.isfinite(values)):
        raise DomainError("boundary data is not finite")
    b = np.zeros(mesh.n_nodes)
    np.add.at(b, edges[:, 0], 0.5 * length * values[:, 0])
    np.add.at(b, edges[:, 1], 0.5 * length * values[:, 1])
    return b


def edge_quadrature(mesh: Mesh, marker: Marker, order: int = 3):
    """Gauss-Legendre points on every edge carrying ``marker``.

    Returns
    -------
    points : (E, q, 2) array
    weights : (E, q) array, physical weights (sum to the edge lengths)
    normals : (E, 2) array, unit normals pointing out of the mesh
    edges : (E, 2) array
    s : (q,) array, node positions in [0, 1] along each edge
    """
    edges = mesh.marked_edges(marker)
    if len(edges) == 0:
        raise DomainError(f"mesh has no edges marked {Marker(marker).label}")
    xg, wg = np.polynomial.legendre.leggauss(order)
    s = 0.5 * (xg + 1.0)
    a = mesh.nodes[edges[:, 0]]
    b = mesh.nodes[edges[:, 1]]
    length = np.linalg.norm(b - a, axis=1)
    points = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
    weights = 0.5 * wg[None, :] * length[:, None]
    tangent = (b - a) / length[:, None]
    normal = np.column_stack([tangent[:, 1], -tangent[:, 0]])
    # orient away from the adjacent triangle
    table = mesh.edge_to_triangle()
    for e, (i, j) in enumerate(edges):
        tris = table.get((min(i, j), max(i, j)))
        if not tris:
            raise InternalError(f"edge ({i}, {j}) has no adjacent triangle")
        c = mesh.nodes[mesh.triangles[tris[0]]].mean(axis=0)
        if np.dot(c - 0.5 * (a[e] + b[e]), normal[e]) > 0:
            normal[e] = -normal[e]
    return points, weights, normal, edges, s


def edge_load_matrix(mesh: Mesh, marker: Marker, order: int = 3) -> sp.csr_matrix:
    """Matrix mapping values at edge Gauss points to the P1 load vector.

    With ``f`` the flattened (E*q,) values from :func:`edge_quadrature`,
    ``B @ f`` approximates ``int f phi_i dGamma``.
    """
    _, weights, _, edges, s = edge_quadrature(mesh, marker, order)
    E, q = weights.shape
    cols = np.arange(E * q).reshape(E, q)
    rows = np.concatenate([np.repeat(edges[:, 0], q), np.repeat(edges[:, 1], q)])
    vals = np.concatenate([(weights * (1 - s)[None, :]).ravel(), (weights * s[None, :]).ravel()])
    return sp.csr_matrix((vals, (rows, np.concatenate([cols.ravel(), cols.ravel()]))),
                         shape=(mesh.n_nodes, E * q))


def locate_points(mesh: Mesh, points, tol: float = 1e-12):
    """Enclosing triangle and barycentric coordinates of each point.

    Raises
    ------
    DomainError
        If a point lies outside the mesh.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    p = mesh.nodes[mesh.triangles]
    g, area = p1_gradients(mesh)
    tri_idx = np.empty(len(points), dtype=np.int64)
    bary = np.empty((len(points), 3))
    for k, x in enumerate(points):
        lam = np.einsum("tid,td->ti", g, x[None, :] - p[:, 0, :])
        lam[:, 0] = 1.0 - lam[:, 1] - lam[:, 2]
        worst = lam.min(axis=1)
        t = int(np.argmax(worst))
        if worst[t] < -tol * max(1.0, np.abs(x).max()):
            raise DomainError(f"point {tuple(x)} lies outside the mesh")
        l = np.clip(lam[t], 0.0, None)
        tri_idx[k] = t
        bary[k] = l / l.sum()
    return tri_idx, bary


def point_load_matrix(mesh: Mesh, points) -> sp.csr_matrix:
    """Sparse (N, P) matrix with barycentric weights of each point in its column."""
    tri_idx, bary = locate_points(mesh, points)
    P = len(tri_idx)
    rows = mesh.triangles[tri_idx].ravel()
    cols = np.repeat(np.arange(P), 3)
    return sp.csr_matrix((bary.ravel(), (rows, cols)), shape=(mesh.n_nodes, P))


def assemble_point_load(mesh: Mesh, points, intensities) -> np.ndarray:
    """Load vector of weighted Dirac deltas against the P1 basis."""
    intensities = np.atleast_1d(np.asarray(intensities, dtype=float))
    B = point_load_matrix(mesh, points)
    if B.shape[1] != len(intensities):
        raise DomainError("one intensity per point is required")
    return B @ intensities


def solve_spd(A, b, rel_tol: float = 1e-10, x0=None, info: SolveInfo | None = None) -> np.ndarray:
    """Jacobi-preconditioned conjugate gradients.

    Stops when ``||A x - b|| <= rel_tol * ||b||``. Raises
    :class:`NumericalError` (with the residual norm attached) after
    ``10 * dim`` iterations.
    """
    if not 0 < rel_tol < 1:
        raise DomainError(f"rel_tol must lie in (0, 1), got {rel_tol}")
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        if info is not None:
            info.iterations, info.residual = 0, 0.0
        return np.zeros(n)
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise DomainError("matrix is not positive definite (non-positive diagonal)")
    inv = 1.0 / diag
    prec = LinearOperator((n, n), matvec=lambda r: inv * r, dtype=float)
    count = [0]

    def tick(_):
        count[0] += 1

    x, status = cg(A, b, x0=x0, rtol=rel_tol, atol=0.0, maxiter=10 * n, M=prec, callback=tick)
    res = float(np.linalg.norm(A @ x - b))
    if info is not None:
        info.iterations, info.residual = count[0], res
    if status != 0 or not np.isfinite(res):
        raise NumericalError(f"CG did not converge in {10 * n} iterations, residual {res:.3e}", res)
    if res > rel_tol * bnorm:
        # recursive residual drifted from the true one; polish once
        x, status = cg(A, b, x0=x, rtol=rel_tol, atol=0.0, maxiter=10 * n, M=prec)
        res = float(np.linalg.norm(A @ x - b))
        if info is not None:
            info.residual = res
        if res > rel_tol * bnorm:
            raise NumericalError(f"CG stagnated at residual {res:.3e}", res)
    return x


def backward_euler_step(M, K, u_prev, dt: float, load, rel_tol: float = 1e-10):
    """One implicit Euler step ``(M + dt K) u = M u_prev + dt load``.

    ``u_prev`` may be an array or a :class:`ScalarField`; the result has the
    same kind (a field is advanced in time by ``dt``).
    """
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    field = u_prev if isinstance(u_prev, ScalarField) else None
    u0 = field.values if field is not None else np.asarray(u_prev, dtype=float)
    A = (M + dt * K).tocsr()
    u = solve_spd(A, M @ u0 + dt * np.asarray(load, dtype=float), rel_tol, x0=u0)
    if field is not None:
        return ScalarField(field.mesh, u, field.time + dt)
    return u


class ImplicitEuler:
    """Backward Euler stepper with the system matrix built once.

    Parameters
    ----------
    M, K : sparse matrices
    dt : float
    rel_tol : float
        CG tolerance.
    """

    def __init__(self, M, K, dt: float, rel_tol: float = 1e-10):
        if not dt > 0:
            raise DomainError(f"dt must be positive, got {dt}")
        self.M = M.tocsr()
        self.A = (M + dt * K).tocsr()
        self.dt = dt
        self.rel_tol = rel_tol
        self.iterations: list[int] = []

    def step(self, u_prev: np.ndarray, load: np.ndarray) -> np.ndarray:
        info = SolveInfo()
        u = solve_spd(self.A, self.M @ u_prev + self.dt * load, self.rel_tol, x0=u_prev, info=info)
        self.iterations.append(info.iterations)
        return u


def boundary_flux_postprocess(mesh: Mesh, field, D: float, arcs: BoundaryArcs | None = None,
                              time: float | None = None) -> FluxProfile:
    """Normal flux ``D grad(u) . n`` across the cell polygon.

    The gradient is taken on the triangle adjacent to each arc on the
    extracellular side; ``n`` is the unit edge normal pointing towards the
    cell center. One sample per arc at its midpoint angle.
    """
    values = field.values if isinstance(field, ScalarField) else np.asarray(field, dtype=float)
    if time is None:
        time = field.time if isinstance(field, ScalarField) else 0.0
    if values.shape != (mesh.n_nodes,):
        raise DomainError("field does not live on this mesh")
    if arcs is None:
        arcs = boundary_arcs(mesh, Marker.CELL_BOUNDARY)
    tri_of, normal = _arc_triangles(mesh, arcs)
    g, _ = p1_gradients(mesh)
    grad = np.einsum("aid,ai->ad", g[tri_of], values[mesh.triangles[tri_of]])
    flux = D * np.einsum("ad,ad->a", grad, normal)
    return FluxProfile(arcs.theta, flux, float(time), arcs.length)


def _arc_triangles(mesh: Mesh, arcs: BoundaryArcs):
    key = ("arc_tris", id(arcs))
    if key in mesh._cache:
        return mesh._cache[key]
    table = mesh.edge_to_triangle()
    center = np.asarray(mesh.circle.center)
    tri_of = np.empty(len(arcs), dtype=np.int64)
    normal = np.empty((len(arcs), 2))
    for k, (i, j) in enumerate(arcs.edges):
        tris = [t for t in table.get((min(i, j), max(i, j)), []) if mesh.region[t] == 0]
        if not tris:
            raise InternalError(f"arc ({i}, {j}) has no adjacent extracellular triangle")
        tri_of[k] = tris[0]
        d = mesh.nodes[j] - mesh.nodes[i]
        n = np.array([d[1], -d[0]]) / np.hypot(*d)
        if np.dot(center - arcs.midpoints[k], n) < 0:
            n = -n
        normal[k] = n
    mesh._cache[key] = (tri_of, normal)
    return tri_of, normal
