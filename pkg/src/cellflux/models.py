"""Solvers for the exclusion and point-source models.

All runs start from zero and use backward Euler with P1 elements:

* :func:`solve_exclusion` on the extracellular mesh with the prescribed
  Neumann flux on the cell polygon;
* :func:`solve_point_direct` on the full mesh with Dirac loads;
* :func:`solve_point_green` splits ``u_P = u_hat + v``: ``u_hat`` is the
  free-space response (closed-form step integrals of the heat kernel) and
  ``v`` a smooth FEM correction driven by the wall flux of ``u_hat``.
"""

from __future__ import annotations

import dataclasses
import enum
import functools
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, IntensityOverflow
from .fem import (FluxProfile, ImplicitEuler, ScalarField, assemble_boundary_load, assemble_mass,
                  assemble_stiffness, boundary_flux_postprocess, edge_load_matrix, edge_quadrature,
                  point_load_matrix)
from .geometry import Circle, Marker, Mesh, boundary_arcs, build_full_mesh, extract_annulus
from .greens import (MIN_SOURCE_DISTANCE, StepKernels, _gradient_double_integral, gradient_integral,
                     gradients_at_steps, kernel_integral, square_mass_steps, values_at_steps)
from .intensities import (DiracLayout, FluxSpec, IntensitySchedule, constant_schedule, dirac_layout,
                          flux_density, make_schedule)
from .metrics import DeviationCurves, deviation_curves

__all__ = [
    "Variant",
    "Scenario",
    "NondimScaling",
    "RunResult",
    "nondimensionalize",
    "scenario_meshes",
    "solve_exclusion",
    "solve_point_direct",
    "solve_point_green",
    "run",
    "compare_runs",
    "single_layout",
]

log = logging.getLogger(__name__)


class Variant(str, enum.Enum):
    EXCLUSION = "Exclusion"
    POINT_DIRECT = "PointDirect"
    POINT_GREEN = "PointGreen"
    POINT_SINGLE = "PointSingle"

    @classmethod
    def parse(cls, name) -> "Variant":
        if isinstance(name, cls):
            return name
        key = str(name).strip().replace("_", "").replace("-", "").lower()
        for v in cls:
            if v.value.lower() == key or v.name.replace("_", "").lower() == key:
                return v
        raise ValueError(f"unknown variant {name!r}")


@dataclass(frozen=True)
class Scenario:
    """Non-dimensional problem description; defaults are the standard set.

    ``output_times`` defaults to every ``round(1 / dt)`` steps plus ``T``.
    ``green_mode`` selects how :func:`solve_point_green` treats the
    intensity history ("history": convolution over the schedule, "frozen":
    intensities held at their current value).
    """

    n: int = 1
    rho: float = 1.0
    D: float = 1.0
    R: float = 1.0
    r: float = 0.01
    half_width: float = 5.0
    dt: float = 0.04
    T: float = 40.0
    h: float = 0.0875
    variant: Variant = Variant.EXCLUSION
    output_times: tuple = None
    center: tuple = (0.0, 0.0)
    phi0: float = 1.0
    n_circle_points: int | None = None
    layout: str = "symmetric"
    green_mode: str = "history"
    rel_tol: float = 1e-10

    def __post_init__(self):
        def bad(key, msg):
            raise ConfigError(key, msg)

        object.__setattr__(self, "variant", _variant(self.variant))
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if int(self.n) != self.n or self.n < 1:
            bad("n", f"mode must be a positive integer, got {self.n}")
        if not 0 <= self.rho <= 1:
            bad("rho", f"fluctuation ratio must lie in [0, 1], got {self.rho}")
        for key in ("D", "R", "dt", "h", "phi0", "half_width"):
            if not getattr(self, key) > 0:
                bad(key, f"must be positive, got {getattr(self, key)}")
        if not 0 < self.r < self.R:
            bad("r", f"offset must satisfy 0 < r < R = {self.R}, got {self.r}")
        if not self.T >= self.dt:
            bad("T", f"horizon must be at least dt, got {self.T}")
        if abs(self.T / self.dt - round(self.T / self.dt)) > 1e-9 * self.T / self.dt:
            bad("T", "horizon must be a whole number of time steps")
        if min(self.half_width - abs(c) for c in self.center) <= self.R:
            bad("half_width", "cell does not fit inside the domain")
        if self.layout not in ("symmetric", "general"):
            bad("layout", f"unknown layout {self.layout!r}")
        if self.green_mode not in ("history", "frozen"):
            bad("green_mode", f"unknown mode {self.green_mode!r}")
        if not 0 < self.rel_tol < 1:
            bad("rel_tol", "must lie in (0, 1)")
        times = self.output_times
        if times is None:
            every = max(1, int(round(1.0 / self.dt)))
            levels = list(range(every, self.steps + 1, every))
            if not levels or levels[-1] != self.steps:
                levels.append(self.steps)
            times = np.array(levels) * self.dt
        times = tuple(float(t) for t in np.atleast_1d(times))
        for t in times:
            k = t / self.dt
            if t <= 0 or t > self.T * (1 + 1e-12) or abs(k - round(k)) > 1e-6:
                bad("output_times", f"{t} is not a time level in (0, T]")
        if len(set(round(t / self.dt) for t in times)) != len(times) or list(times) != sorted(times):
            bad("output_times", "must be strictly increasing")
        object.__setattr__(self, "output_times", times)

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def output_steps(self) -> list[int]:
        return [int(round(t / self.dt)) for t in self.output_times]

    @property
    def tau_trunc(self) -> float:
        return 0.5 * self.dt

    @property
    def flux_spec(self) -> FluxSpec:
        return FluxSpec.from_ratio(self.n, self.rho, self.phi0)

    def replace(self, **kw) -> "Scenario":
        return dataclasses.replace(self, **kw)

    def metadata(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.value if isinstance(v, Variant) else ("none" if v is None else v)
        return out


def _variant(v):
    try:
        return Variant.parse(v)
    except ValueError as exc:
        raise ConfigError("variant", str(exc)) from None


@dataclass(frozen=True)
class NondimScaling:
    """Length scale ``R``, time scale ``tau0`` and density scale ``u_star``.

    ``phi0 * tau0 / (R * u_star) = 1``, so the scaled mean flux is 1.
    """

    R: float
    tau0: float
    u_star: float
    phi0: float

    def __post_init__(self):
        if min(self.R, self.tau0, self.u_star, self.phi0) <= 0:
            raise DomainError("scales must be positive")
        c = self.phi0 * self.tau0 / (self.R * self.u_star)
        if abs(c - 1.0) > 1e-12:
            raise DomainError(f"scales violate phi0 tau0 / (R u*) = 1 ({c})")

    def to_physical(self, xi=None, tau=None, gamma=None):
        """Physical ``(x, t, u)`` from scaled ``(xi, tau, gamma)``; None passes through."""
        return (None if xi is None else np.asarray(xi) * self.R,
                None if tau is None else np.asarray(tau) * self.tau0,
                None if gamma is None else np.asarray(gamma) * self.u_star)

    def to_scaled(self, x=None, t=None, u=None):
        return (None if x is None else np.asarray(x) / self.R,
                None if t is None else np.asarray(t) / self.tau0,
                None if u is None else np.asarray(u) / self.u_star)


def nondimensionalize(R: float, D: float, phi0: float, u_star: float, domain_size: float,
                      **scenario_kw) -> tuple[NondimScaling, Scenario]:
    """Scale a physical problem so the cell radius and mean flux are 1.

    ``tau0 = R u* / phi0``, ``D_hat = D tau0 / R^2``; the square of side
    ``domain_size`` becomes half width ``domain_size / (2R)``.
    """
    for name, v in (("R", R), ("D", D), ("phi0", phi0), ("u_star", u_star), ("domain_size", domain_size)):
        if not v > 0:
            raise DomainError(f"{name} must be positive, got {v}")
    tau0 = R * u_star / phi0
    scaling = NondimScaling(R, tau0, u_star, phi0)
    sc = Scenario(D=D * tau0 / R ** 2, R=1.0, half_width=domain_size / (2 * R), phi0=1.0, **scenario_kw)
    return scaling, sc


@dataclass(eq=False)
class RunResult:
    """Snapshots at the output times plus per-step bookkeeping.

    ``mass_trace`` and ``injected_trace`` have one entry per time level
    (including t = 0); ``flux_trace`` holds the flux over the cell boundary
    at each output time.
    """

    scenario: Scenario
    mesh: Mesh
    snapshots: list
    flux_trace: list
    mass_trace: np.ndarray
    injected_trace: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.snapshots])

    @property
    def step_times(self) -> np.ndarray:
        return np.arange(len(self.mass_trace)) * self.scenario.dt

    def conservation_error(self) -> float:
        """``|mass - injected| / injected`` at the final time level."""
        inj = self.injected_trace[-1]
        return float(abs(self.mass_trace[-1] - inj) / abs(inj))

    def save(self, directory, run_id: str | None = None, curves: DeviationCurves | None = None,
             fields: bool = True) -> Path:
        """Write ``metadata.txt``, one field CSV per snapshot and ``trace.csv``.

        ``trace.csv`` has one row per output time with the mass; deviation
        columns are added when ``curves`` is given.
        """
        from .io import write_csv, write_metadata

        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        run_id = run_id or self.scenario.variant.value
        meta = self.scenario.metadata()
        meta.update({f"diag_{k}": v for k, v in self.diagnostics.items() if np.isscalar(v)})
        write_metadata(directory / "metadata.txt", meta)
        if fields:
            for snap in self.snapshots:
                snap.to_csv(directory, run_id)
        steps = self.scenario.output_steps
        cols = {"t": self.times, "mass": self.mass_trace[steps]}
        if curves is not None:
            cols.update({k: v for k, v in curves.columns().items() if k != "t"})
        write_csv(directory / "trace.csv", cols)
        return directory


@functools.lru_cache(maxsize=8)
def _meshes(half_width, R, center, h, ncp):
    full = build_full_mesh(half_width, Circle(center, R), ncp, h)
    return full, extract_annulus(full)


def scenario_meshes(sc: Scenario) -> tuple[Mesh, Mesh]:
    """Full and extracellular meshes of a scenario (cached; meshes are immutable)."""
    return _meshes(float(sc.half_width), float(sc.R), sc.center, float(sc.h), sc.n_circle_points)


def single_layout(center=(0.0, 0.0), R: float = 1.0) -> DiracLayout:
    """The centre point alone."""
    c = (float(center[0]), float(center[1]))
    return DiracLayout(c, np.empty((0, 2)), 0.0, float(R), np.empty(0), symmetric=True)


def _default_sources(sc: Scenario, layout, schedule):
    if sc.variant == Variant.POINT_SINGLE:
        layout = layout or single_layout(sc.center, sc.R)
        schedule = schedule or constant_schedule([2 * np.pi * sc.R * sc.phi0], sc.tau_trunc)
    else:
        layout = layout or dirac_layout(sc.flux_spec, sc.center, sc.R, sc.r, sc.layout)
        schedule = schedule or make_schedule(sc.flux_spec, layout, sc.D, sc.tau_trunc)
    if schedule.n_points != len(layout):
        raise DomainError("schedule and layout disagree on the number of points")
    return layout, schedule


def _check_finite(phi):
    if not np.all(np.isfinite(phi)):
        raise IntensityOverflow("intensity is not finite")


def solve_exclusion(sc: Scenario, flux: FluxSpec | None = None) -> RunResult:
    """Prescribed Neumann flux on the cell polygon, zero flux on the wall."""
    flux = flux or sc.flux_spec
    _, ann = scenario_meshes(sc)
    M = assemble_mass(ann)
    K = assemble_stiffness(ann, sc.D)
    b = assemble_boundary_load(ann, Marker.CELL_BOUNDARY, lambda th: flux_density(flux, th))
    arcs = boundary_arcs(ann, Marker.CELL_BOUNDARY)
    stepper = ImplicitEuler(M, K, sc.dt, sc.rel_tol)
    mvec = np.asarray(M.sum(axis=0)).ravel()
    out = set(sc.output_steps)
    u = np.zeros(ann.n_nodes)
    mass = [0.0]
    snaps, fluxes = [], []
    for m in range(1, sc.steps + 1):
        u = stepper.step(u, b)
        mass.append(float(mvec @ u))
        if m in out:
            t = m * sc.dt
            snaps.append(ScalarField(ann, u.copy(), t))
            fluxes.append(FluxProfile(arcs.theta, flux_density(flux, arcs.theta), t, arcs.length))
    injected = np.arange(sc.steps + 1) * sc.dt * float(b.sum())
    diag = {"iterations": int(np.sum(stepper.iterations)), "overflow": False,
            "min_value": float(min(s.values.min() for s in snaps))}
    return RunResult(sc, ann, snaps, fluxes, np.array(mass), injected, diag)


def solve_point_direct(sc: Scenario, layout: DiracLayout | None = None,
                       schedule: IntensitySchedule | None = None) -> RunResult:
    """Dirac loads on the full mesh, intensities at the end of each step.

    Raises
    ------
    IntensityOverflow
        If the schedule is not representable on ``[tau_trunc, T]``.
    """
    layout, schedule = _default_sources(sc, layout, schedule)
    schedule.validate(sc.T)
    full, _ = scenario_meshes(sc)
    M = assemble_mass(full)
    K = assemble_stiffness(full, sc.D)
    B = point_load_matrix(full, layout.points)
    times = np.arange(1, sc.steps + 1) * sc.dt
    phi = schedule.sample(times)  # (steps, P)
    _check_finite(phi)
    stepper = ImplicitEuler(M, K, sc.dt, sc.rel_tol)
    mvec = np.asarray(M.sum(axis=0)).ravel()
    out = set(sc.output_steps)
    u = np.zeros(full.n_nodes)
    mass = [0.0]
    snaps, fluxes = [], []
    for m in range(1, sc.steps + 1):
        u = stepper.step(u, B @ phi[m - 1])
        mass.append(float(mvec @ u))
        if m in out:
            f = ScalarField(full, u.copy(), m * sc.dt)
            snaps.append(f)
            fluxes.append(boundary_flux_postprocess(full, f, sc.D))
    injected = np.concatenate([[0.0], sc.dt * np.cumsum(phi.sum(axis=1))])
    diag = {"iterations": int(np.sum(stepper.iterations)), "overflow": False,
            "max_intensity": float(np.abs(phi).max())}
    return RunResult(sc, full, snaps, fluxes, np.array(mass), injected, diag)


def solve_point_green(sc: Scenario, layout: DiracLayout | None = None,
                      schedule: IntensitySchedule | None = None, mode: str | None = None) -> RunResult:
    """``u_P = u_hat + v`` with ``v`` solved by FEM on the full mesh.

    ``v`` starts at zero, has no sources and receives the outward wall flux
    of ``u_hat`` as a Neumann load, so ``u_hat + v`` has zero wall flux.

    In "history" mode the intensities are replaced by their exact mean
    over each step and ``u_hat`` is the exact convolution of that step
    function with the heat kernel. In "frozen" mode
    ``u_hat(t) = sum_i Phi_i(t) int_0^t K(x - x_i, s) ds`` uses the
    current intensities only.

    The boundary flux combines the exact gradient of ``u_hat`` at the arc
    midpoints with the P1 gradient of ``v``.

    Nodes closer than ``MIN_SOURCE_DISTANCE`` to a Dirac point are
    reported as NaN in the snapshots and listed in the diagnostics.
    """
    mode = mode or sc.green_mode
    if mode not in ("history", "frozen"):
        raise DomainError(f"unknown mode {mode!r}")
    layout, schedule = _default_sources(sc, layout, schedule)
    schedule.validate(sc.T)
    full, _ = scenario_meshes(sc)
    src = layout.points
    D, dt, steps = sc.D, sc.dt, sc.steps

    M = assemble_mass(full)
    K = assemble_stiffness(full, D)
    stepper = ImplicitEuler(M, K, dt, sc.rel_tol)
    mvec = np.asarray(M.sum(axis=0)).ravel()

    pts, _, normals, _, _ = edge_quadrature(full, Marker.OUTER_WALL, 3)
    q = pts.shape[1]
    sites = pts.reshape(-1, 2)
    nrm = np.repeat(normals, q, axis=0)
    Bw = edge_load_matrix(full, Marker.OUTER_WALL, 3)
    F = square_mass_steps(src, sc.half_width, D, dt, steps)  # (steps, P)

    if mode == "history":
        phi = schedule.step_means(dt, steps)
        _check_finite(phi)
        kern = StepKernels(sites, src, D, dt, steps, with_values=False)
        wall = -D * np.einsum("msk,sk->ms", kern.mean_gradient(phi), nrm)  # outward flux density
        hat_mass = np.zeros(steps + 1)
        for p in range(len(src)):
            hat_mass[1:] += np.convolve(phi[:, p], F[:, p])[:steps]
        injected = np.concatenate([[0.0], dt * np.cumsum(phi.sum(axis=1))])
    else:
        tl = np.arange(0, steps + 1) * dt
        phi = np.vstack([np.zeros((1, len(src))), schedule.sample(tl[1:])])  # (steps+1, P)
        _check_finite(phi)
        diff = sites[:, None, :] - src[None]
        d2 = np.sum(diff * diff, axis=-1)
        proj = np.einsum("spk,sk->sp", diff, nrm)
        W = _gradient_double_integral(d2[None], D, tl[:, None, None])  # (steps+1, S, P)
        cum_out = D * np.einsum("tsp,sp,tp->ts", W, proj, phi)  # cumulative outflow density
        wall = np.diff(cum_out, axis=0) / dt
        G = np.concatenate([np.zeros((1, len(src))), np.cumsum(F, axis=0)])
        hat_mass = np.sum(phi * G, axis=1)
        injected = tl * phi.sum(axis=1)

    out_steps = sc.output_steps
    d_nodes = np.min(np.linalg.norm(full.nodes[:, None, :] - src[None], axis=-1), axis=1)
    masked = np.flatnonzero(d_nodes < MIN_SOURCE_DISTANCE)
    if len(masked):
        log.warning("%d mesh node(s) coincide with Dirac points and are masked", len(masked))
    keep = np.setdiff1d(np.arange(full.n_nodes), masked)
    uhat = np.full((len(out_steps), full.n_nodes), np.nan)
    if mode == "history":
        uhat[:, keep] = values_at_steps(full.nodes[keep], src, phi, D, dt, out_steps)
    else:
        d2n = np.sum((full.nodes[keep][:, None, :] - src[None]) ** 2, axis=-1)
        for k, m in enumerate(out_steps):
            uhat[k, keep] = kernel_integral(d2n, D, m * dt) @ phi[m]

    # flux over the cell polygon: exact gradient of u_hat plus P1 gradient of v
    arcs = boundary_arcs(full, Marker.CELL_BOUNDARY)
    inward = np.asarray(sc.center) - arcs.midpoints
    inward /= np.linalg.norm(inward, axis=1)[:, None]
    if mode == "history":
        ghat = gradients_at_steps(arcs.midpoints, src, phi, D, dt, out_steps)
    else:
        diff = arcs.midpoints[:, None, :] - src[None]
        qa = np.stack([gradient_integral(np.sum(diff ** 2, axis=-1), D, m * dt) * phi[m] for m in out_steps])
        ghat = -np.einsum("kap,apd->kad", qa, diff)
    flux_hat = D * np.einsum("kad,ad->ka", ghat, inward)

    v = np.zeros(full.n_nodes)
    mass = [0.0]
    snaps, fluxes = [], []
    pos = {m: k for k, m in enumerate(out_steps)}
    v_norm_ratio = []
    for m in range(1, steps + 1):
        v = stepper.step(v, Bw @ wall[m - 1])
        mass.append(hat_mass[m] + float(mvec @ v))
        if m in pos:
            u = uhat[pos[m]] + v
            f = ScalarField(full, u, m * dt)
            snaps.append(f)
            fv = boundary_flux_postprocess(full, v, D, arcs, m * dt)
            fluxes.append(FluxProfile(arcs.theta, flux_hat[pos[m]] + fv.values, m * dt, arcs.length))
            ok = np.isfinite(uhat[pos[m]])
            v_norm_ratio.append(float(np.linalg.norm(v[ok]) / max(np.linalg.norm(uhat[pos[m]][ok]), 1e-300)))
    diag = {"iterations": int(np.sum(stepper.iterations)), "overflow": False, "mode": mode,
            "masked_nodes": masked.tolist(), "n_masked": int(len(masked)),
            "max_intensity": float(np.abs(phi).max()), "v_over_uhat": v_norm_ratio}
    return RunResult(sc, full, snaps, fluxes, np.array(mass), np.asarray(injected), diag)


def run(sc: Scenario, **kw) -> RunResult:
    """Dispatch on ``sc.variant``."""
    if sc.variant == Variant.EXCLUSION:
        return solve_exclusion(sc, **kw)
    if sc.variant == Variant.POINT_GREEN:
        return solve_point_green(sc, **kw)
    return solve_point_direct(sc, **kw)


def compare_runs(result_S: RunResult, result_P: RunResult) -> DeviationCurves:
    """Deviation curves of a point-source run from the exclusion run.

    The point-source fields are restricted to the extracellular nodes
    through the parent map of the exclusion mesh.
    """
    return deviation_curves(result_S, result_P)
