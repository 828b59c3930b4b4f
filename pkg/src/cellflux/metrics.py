"""Norms and comparison quantities on the extracellular region."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.spatial import cKDTree

from .errors import DomainError
from .fem import FluxProfile, ScalarField, assemble_mass, assemble_stiffness, p1_gradients
from .geometry import Mesh
from .intensities import FluxSpec, flux_density

__all__ = [
    "DeviationCurves",
    "norm",
    "flux_deviation",
    "c_star",
    "homogeneity_indicator",
    "relative_error",
    "interpolate_p1",
    "deviation_curves",
]


@dataclass(frozen=True, eq=False)
class DeviationCurves:
    """Per-time deviations between a point-source run and the exclusion run."""

    times: np.ndarray
    l2_dev: np.ndarray
    h1_dev: np.ndarray
    flux_dev: np.ndarray
    c_star: np.ndarray

    def __post_init__(self):
        for name in ("times", "l2_dev", "h1_dev", "flux_dev", "c_star"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        n = len(self.times)
        if any(len(getattr(self, k)) != n for k in ("l2_dev", "h1_dev", "flux_dev", "c_star")):
            raise DomainError("deviation curves differ in length")

    def columns(self) -> dict:
        return {"t": self.times, "l2_dev": self.l2_dev, "h1_dev": self.h1_dev,
                "flux_dev": self.flux_dev, "c_star": self.c_star}

    def to_csv(self, path) -> Path:
        from .io import write_csv

        return write_csv(path, self.columns())


def _matrices(mesh: Mesh):
    key = ("norm_mats",)
    if key not in mesh._cache:
        mesh._cache[key] = (assemble_mass(mesh), assemble_stiffness(mesh, 1.0))
    return mesh._cache[key]


def _values(field, mesh):
    if isinstance(field, ScalarField):
        if mesh is not None and field.mesh is not mesh:
            raise DomainError("field belongs to a different mesh")
        return field.values, field.mesh
    if mesh is None:
        raise DomainError("a mesh is required for raw nodal values")
    values = np.asarray(field, dtype=float)
    if values.shape != (mesh.n_nodes,):
        raise DomainError("field length does not match the mesh")
    return values, mesh


def norm(field, mesh: Mesh | None = None, kind: str = "L2", region: str = "annulus") -> float:
    """L2 norm ``sqrt(u^T M u)`` or H1 norm ``sqrt(u^T M u + u^T K u)``.

    ``region="annulus"`` requires the field to live on the extracellular
    mesh; ``region="full"`` accepts any mesh.
    """
    u, mesh = _values(field, mesh)
    if region == "annulus" and not mesh.is_annulus:
        raise DomainError("field is not restricted to the extracellular region")
    if region not in ("annulus", "full"):
        raise DomainError(f"unknown region {region!r}")
    M, K = _matrices(mesh)
    kind = kind.upper()
    sq = float(u @ (M @ u))
    if kind == "H1":
        sq += float(u @ (K @ u))
    elif kind != "L2":
        raise DomainError(f"unknown norm kind {kind!r}")
    return float(np.sqrt(max(sq, 0.0)))


def flux_deviation(prescribed: FluxSpec, profile: FluxProfile, R: float = 1.0) -> float:
    """Midpoint-rule ``L2`` norm of ``phi - profile`` over the cell boundary.

    Sample weights are the arc lengths carried by the profile, or
    ``2 pi R / n`` when it has none.
    """
    if len(profile) == 0:
        raise DomainError("empty flux profile")
    w = profile.length if profile.length is not None else np.full(len(profile), 2 * np.pi * R / len(profile))
    diff = flux_density(prescribed, profile.theta) - profile.values
    return float(np.sqrt(np.sum(w * diff * diff)))


def c_star(flux_dev, dt: float | None = None, times=None) -> np.ndarray:
    """Cumulative trapezoid of a deviation series, starting at 0."""
    flux_dev = np.asarray(flux_dev, dtype=float)
    if flux_dev.size == 0:
        return flux_dev.copy()
    if times is not None:
        return cumulative_trapezoid(flux_dev, x=np.asarray(times, dtype=float), initial=0.0)
    if dt is None or not dt > 0:
        raise DomainError("a positive dt or explicit times are required")
    return cumulative_trapezoid(flux_dev, dx=dt, initial=0.0)


def _ratio_series(num, den):
    out = np.full(len(num), np.nan)
    ok = np.asarray(den) > 0
    out[ok] = np.asarray(num)[ok] / np.asarray(den)[ok]
    return out


def homogeneity_indicator(run_homo, run_inhomo, kind: str = "L2") -> np.ndarray:
    """``||u_homo - u_inhomo|| / ||u_homo||`` per snapshot; NaN where ``u_homo = 0``."""
    a, b = run_homo.snapshots, run_inhomo.snapshots
    if len(a) != len(b) or any(x.mesh is not y.mesh for x, y in zip(a, b)):
        raise DomainError("runs do not share mesh and output times")
    if not np.allclose([x.time for x in a], [y.time for y in b]):
        raise DomainError("runs do not share output times")
    num = [norm(ScalarField(x.mesh, x.values - y.values, x.time), kind=kind) for x, y in zip(a, b)]
    den = [norm(x, kind=kind) for x in a]
    return _ratio_series(num, den)


def interpolate_p1(mesh: Mesh, values, points, k: int = 12) -> np.ndarray:
    """Evaluate a P1 field at arbitrary points by barycentric interpolation.

    Candidate triangles come from a centroid k-d tree; points that none of
    the ``k`` nearest candidates contain fall back to an exhaustive search.
    """
    values = np.asarray(values, dtype=float)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    p = mesh.nodes[mesh.triangles]
    g, _ = p1_gradients(mesh)
    key = ("centroid_tree",)
    if key not in mesh._cache:
        mesh._cache[key] = cKDTree(p.mean(axis=1))
    tree = mesh._cache[key]
    k = min(k, mesh.n_triangles)
    _, cand = tree.query(points, k=k)
    cand = cand.reshape(len(points), k)
    lam = np.einsum("nkid,nkd->nki", g[cand], points[:, None, :] - p[cand][:, :, 0, :])
    lam[:, :, 0] = 1.0 - lam[:, :, 1] - lam[:, :, 2]
    worst = lam.min(axis=2)
    best = np.argmax(worst, axis=1)
    rows = np.arange(len(points))
    tri = cand[rows, best]
    bary = lam[rows, best]
    tol = -1e-10
    bad = np.flatnonzero(worst[rows, best] < tol)
    for i in bad:
        lam_all = np.einsum("tid,td->ti", g, points[i][None, :] - p[:, 0, :])
        lam_all[:, 0] = 1.0 - lam_all[:, 1] - lam_all[:, 2]
        t = int(np.argmax(lam_all.min(axis=1)))
        if lam_all[t].min() < tol * 1e3:
            raise DomainError(f"point {tuple(points[i])} lies outside the mesh")
        tri[i], bary[i] = t, lam_all[t]
    return np.einsum("ni,ni->n", bary, values[mesh.triangles[tri]])


def _on_reference(field: ScalarField, ref_mesh: Mesh) -> np.ndarray:
    """Values of ``field`` at the nodes of ``ref_mesh``."""
    m = field.mesh
    if m is ref_mesh:
        return field.values
    # shared nodes: the reference is the annulus of this very mesh
    pn = ref_mesh.parent_nodes
    if pn.max() < m.n_nodes and np.array_equal(m.nodes[pn], ref_mesh.nodes):
        return field.values[pn]
    return interpolate_p1(m, field.values, ref_mesh.nodes)


def relative_error(ref_run, run, kind: str = "L2") -> np.ndarray:
    """``||u_ref - u|| / ||u_ref||`` on the reference extracellular mesh per snapshot.

    ``run`` is restricted through the parent map when it lives on the
    reference's full mesh and interpolated otherwise.
    """
    a, b = ref_run.snapshots, run.snapshots
    if len(a) != len(b) or not np.allclose([x.time for x in a], [y.time for y in b]):
        raise DomainError("runs do not share output times")
    num, den = [], []
    for x, y in zip(a, b):
        ref_mesh = x.mesh
        if not ref_mesh.is_annulus:
            raise DomainError("reference run must live on the extracellular mesh")
        yv = _on_reference(y, ref_mesh)
        num.append(norm(x.values - yv, ref_mesh, kind))
        den.append(norm(x.values, ref_mesh, kind))
    return _ratio_series(num, den)


def deviation_curves(run_S, run_P, prescribed: FluxSpec | None = None) -> DeviationCurves:
    """L2/H1 deviation on the extracellular mesh, flux deviation and ``c*``."""
    a, b = run_S.snapshots, run_P.snapshots
    if len(a) != len(b) or not np.allclose([x.time for x in a], [y.time for y in b], rtol=0, atol=1e-9):
        raise DomainError("runs do not share output times")
    if prescribed is None:
        prescribed = run_S.scenario.flux_spec
    R = run_S.scenario.R
    times = np.array([x.time for x in a])
    l2, h1, fd = [], [], []
    for x, y, prof in zip(a, b, run_P.flux_trace):
        yv = _on_reference(y, x.mesh)
        diff = x.values - yv
        l2.append(norm(diff, x.mesh, "L2"))
        h1.append(norm(diff, x.mesh, "H1"))
        fd.append(flux_deviation(prescribed, prof, R))
    fd = np.asarray(fd)
    return DeviationCurves(times, l2, h1, fd, c_star(fd, times=times))
