"""Prescribed flux densities and the Dirac intensities that reproduce them.

A cell of radius ``R`` secretes with flux density
``phi_n(theta) = phi0 * (1 + rho * sin(n theta))``. In the point-source
picture the cell is replaced by a centre Dirac point plus off-centre points
at distance ``r``; their intensities are chosen so that the free-space
boundary flux ``phi_hat`` has the same extreme values at the same angles as
``phi_n`` for every ``t``.

All exponentials are combined in log space. With ``s = 1 / (4 D t)``,
``a = R - r`` and ``b = R + r``, the quantities of order ``exp(R^2 s)`` are
only formed when the intensities themselves are requested.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, IntensityOverflow, NumericalError

__all__ = [
    "FluxSpec",
    "flux_density",
    "DiracLayout",
    "dirac_layout",
    "extrema_angles",
    "intensity_dipole",
    "intensity_tripole",
    "intensity_general",
    "approx_flux",
    "approx_flux_hat",
    "approx_flux_steady",
    "phi_hat_derivative",
    "t_min_dipole",
    "t_min_dipole_stated",
    "Regime",
    "phi_c_regime",
    "phi_c_extrema_count",
    "IntensitySchedule",
    "make_schedule",
    "constant_schedule",
    "MAX_INTENSITY",
]

MAX_INTENSITY = 1e300
_LOG_MAX = math.log(MAX_INTENSITY)


@dataclass(frozen=True)
class FluxSpec:
    """Flux density ``phi0 + A sin(n theta)``.

    Parameters
    ----------
    n : int
        Mode, ``n >= 1``.
    phi0 : float
        Mean flux density, positive.
    A : float
        Amplitude, ``0 <= A <= phi0``.
    """

    n: int
    phi0: float = 1.0
    A: float = 1.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise DomainError(f"mode n must be a positive integer, got {self.n}")
        if not self.phi0 > 0:
            raise DomainError(f"phi0 must be positive, got {self.phi0}")
        if self.A < 0:
            raise DomainError(f"amplitude must be non-negative, got {self.A}")
        if self.A > self.phi0 * (1 + 1e-15):
            raise DomainError(f"rho = A/phi0 = {self.A / self.phi0:g} > 1 gives negative flux")

    @classmethod
    def from_ratio(cls, n: int, rho: float, phi0: float = 1.0) -> "FluxSpec":
        return cls(n, phi0, rho * phi0)

    @property
    def rho(self) -> float:
        return self.A / self.phi0


def flux_density(spec: FluxSpec, theta):
    """Prescribed flux density ``phi0 (1 + rho sin(n theta))``."""
    if spec.rho > 1 + 1e-15:
        raise DomainError("rho > 1 is not supported")
    theta = np.asarray(theta, dtype=float)
    return spec.phi0 + spec.A * np.sin(spec.n * theta)


def extrema_angles(n: int) -> np.ndarray:
    """Angles ``(k - 1/2) pi / n``, k = 1..2n; odd k are maxima."""
    k = np.arange(1, 2 * n + 1)
    return (k - 0.5) * np.pi / n


@dataclass(frozen=True)
class DiracLayout:
    """Centre point plus off-centre points at distance ``r``.

    ``points`` stacks the centre first, then the off-centre points.
    """

    center: tuple[float, float]
    off_center: np.ndarray
    r: float
    R: float
    angles: np.ndarray = field(default=None)
    symmetric: bool = True

    @property
    def points(self) -> np.ndarray:
        return np.vstack([np.asarray(self.center, dtype=float)[None, :], self.off_center])

    def __len__(self) -> int:
        return 1 + len(self.off_center)


def _check_r(R: float, r: float):
    if not R > 0:
        raise DomainError(f"cell radius must be positive, got {R}")
    if not 0 < r < R:
        raise DomainError(f"offset r must satisfy 0 < r < R, got r={r}, R={R}")


def dirac_layout(spec: FluxSpec | int, center=(0.0, 0.0), R: float = 1.0, r: float = 0.01,
                 kind: str = "symmetric") -> DiracLayout:
    """Place the Dirac points for mode ``n``.

    ``kind="symmetric"`` puts n points at the maxima angles (odd k);
    ``kind="general"`` puts ``2n - 1`` points at the first ``2n - 1``
    extrema angles, which yields a square extrema-matching system.
    """
    n = spec.n if isinstance(spec, FluxSpec) else int(spec)
    _check_r(R, r)
    ang = extrema_angles(n)
    if kind == "symmetric":
        ang = ang[0::2]
    elif kind == "general":
        ang = ang[: 2 * n - 1]
    else:
        raise DomainError(f"unknown layout kind {kind!r}")
    c = np.asarray(center, dtype=float)
    pts = c[None, :] + r * np.column_stack([np.cos(ang), np.sin(ang)])
    if kind == "symmetric" and n == 1:
        # exact coordinates (x_C, y_C + r)
        pts = np.array([[c[0], c[1] + r]])
    return DiracLayout((float(c[0]), float(c[1])), pts, float(r), float(R), ang,
                       symmetric=(kind == "symmetric"))


def _s(t, D):
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise DomainError("t must be positive")
    if not D > 0:
        raise DomainError(f"D must be positive, got {D}")
    return 1.0 / (4.0 * D * t)


def _pos_exp(logc, expo, sign=1.0):
    """``sign * exp(logc + expo)`` with the overflow policy applied."""
    total = logc + expo
    if np.any(total > _LOG_MAX):
        raise IntensityOverflow(
            f"intensity overflow: |value| ~ exp({float(np.max(total)):.1f}) exceeds {MAX_INTENSITY:g}",
            value=float(np.max(total)),
        )
    return sign * np.exp(total)


def _terms(pairs):
    """Sum of ``c * exp(e)`` terms with the overflow policy applied."""
    out = 0.0
    for c, e in pairs:
        c = np.asarray(c, dtype=float)
        with np.errstate(divide="ignore"):
            logc = np.log(np.abs(c))
        out = out + np.where(c == 0, 0.0, _pos_exp(np.where(c == 0, 0.0, logc), e, np.sign(c)))
    return out


def _dipole_parts(s, R, r):
    a, b = R - r, R + r
    z = np.exp(-4 * R * r * s)
    w = -np.expm1(-4 * R * r * s)  # 1 - z, accurate for small arguments
    den = 2 * r + a * w  # = b - a z > 0
    return a, b, z, den


def intensity_dipole(t, R: float, r: float, D: float, phi0: float, A: float):
    """Intensities ``(Phi_D, Phi_C)`` of the off-centre and centre points, n = 1.

    Parameters
    ----------
    t : float or array
        Time, positive.

    Returns
    -------
    (Phi_D, Phi_C)

    Raises
    ------
    IntensityOverflow
        When a magnitude would exceed ``MAX_INTENSITY``.
    """
    _check_r(R, r)
    s = _s(t, D)
    a, b, z, den = _dipole_parts(s, R, r)
    phi_d = _terms([(4 * np.pi * A * a * b / den, a * a * s)])
    # phi0 + A - 2Ab/(b - a z) = (phi0 - A) - 2 A a z / (b - a z)
    phi_c = _terms([
        (2 * np.pi * R * (phi0 - A), R * R * s),
        (-2 * np.pi * R * 2 * A * a / den, (R * R - 4 * R * r) * s),
    ])
    return phi_d, phi_c


def _tripole_bracket(s, R, r):
    """``e^{a^2 s} * [e^{-a^2 s}/a + e^{-b^2 s}/b - 2R/(R^2+r^2) e^{-(R^2+r^2) s}]``.

    Written as a sum of non-negative terms in ``y = 1 - exp(-2 R r s)``,
    which makes positivity manifest for ``0 < r < R``.
    """
    a, b = R - r, R + r
    q = R * R + r * r
    y = -np.expm1(-2 * R * r * s)
    return 4 * R * r * r / (a * b * q) + 2 * r * a * y / (q * b) + y * y / b


def intensity_tripole(t, R: float, r: float, D: float, phi0: float, A: float):
    """Intensities ``(Phi_D, Phi_C)`` for n = 2 (two off-centre points).

    ``Phi_D = 2 pi C_2(t)`` is shared by both off-centre points.
    """
    _check_r(R, r)
    s = _s(t, D)
    a = R - r
    q = R * R + r * r
    bx = _tripole_bracket(s, R, r)
    phi_d = _terms([(4 * np.pi * A / bx, a * a * s)])
    # Phi_C = 2 pi R e^{R^2 s} [phi0 - A - 4 A R x / (q bx)], x = e^{-2 R r s}
    phi_c = _terms([
        (2 * np.pi * R * (phi0 - A), R * R * s),
        (-2 * np.pi * R * 4 * A * R / (q * bx), (R * R - 2 * R * r) * s),
    ])
    return phi_d, phi_c


def c2(t, R: float, r: float, D: float, A: float = 1.0):
    """``C_2(t) = Phi_D / (2 pi)`` for the tripole."""
    return intensity_tripole(t, R, r, D, A, A)[0] / (2 * np.pi)


def _kernel_weights(theta, t, points, center, R, D, shift=None):
    """Free-space flux weights ``w_i(theta)`` of unit point sources.

    ``phi_hat(theta) = sum_i Phi_i w_i(theta)``, with
    ``w_i = (x - x_C).(x - x_i) / (2 pi R |x - x_i|^2) exp(-|x - x_i|^2 s)``.
    ``shift[i]`` is added to every exponent of column i (log scaling).
    """
    theta = np.asarray(theta, dtype=float)
    s = _s(t, D)
    c = np.asarray(center, dtype=float)
    x = c + R * np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    d = x[..., None, :] - points  # (..., P, 2)
    dist2 = np.einsum("...pk,...pk->...p", d, d)
    dot = np.einsum("...k,...pk->...p", x - c, d)
    expo = -dist2 * s
    if shift is not None:
        expo = expo + shift
    return dot / (2 * np.pi * R * dist2) * np.exp(expo)


def intensity_general(spec: FluxSpec, layout: DiracLayout, t: float, D: float = 1.0):
    """Intensities of all layout points from the extrema-matching conditions.

    Requires ``phi_hat(theta_k, t) = phi0 +/- A`` at all ``2n`` extrema angles.
    The system is square for a general layout (``2n`` points) and
    overdetermined but consistent for the symmetric n = 2 layout; the latter
    is solved in the least-squares sense.

    Returns
    -------
    ndarray
        Intensities in ``layout.points`` order (centre first).
    """
    n = spec.n
    theta_k = extrema_angles(n)
    rhs = spec.phi0 + spec.A * np.where(np.arange(1, 2 * n + 1) % 2 == 1, 1.0, -1.0)
    pts = layout.points
    if len(pts) > len(theta_k):
        raise DomainError(f"{len(pts)} unknowns for {len(theta_k)} conditions")
    s = float(_s(t, D))
    c = np.asarray(layout.center)
    # column scaling: Phi_i = y_i exp(dmin_i^2 s), dmin_i the distance to the circle
    dmin = layout.R - np.linalg.norm(pts - c, axis=1)
    shift = dmin ** 2 * s
    W = _kernel_weights(theta_k, t, pts, c, layout.R, D, shift=shift)
    scale = np.abs(W).max(axis=1)
    if np.any(scale == 0):
        raise NumericalError("extrema-matching system has a zero row")
    Ws = W / scale[:, None]
    bs = rhs / scale
    if Ws.shape[0] == Ws.shape[1]:
        cond = np.linalg.cond(Ws)
        if not np.isfinite(cond) or cond > 1e14:
            raise NumericalError(f"extrema-matching system is singular (cond {cond:.2e})")
        y = np.linalg.solve(Ws, bs)
    else:
        y, _, rank, _ = np.linalg.lstsq(Ws, bs, rcond=None)
        if rank < Ws.shape[1]:
            raise NumericalError("extrema-matching system is rank deficient")
    with np.errstate(divide="ignore"):
        return np.array([_terms([(yi, sh)]) for yi, sh in zip(y, shift)], dtype=float)


def approx_flux(theta, t, points, intensities, center=(0.0, 0.0), R: float = 1.0, D: float = 1.0):
    """Free-space boundary flux of point sources with frozen intensities."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    w = _kernel_weights(theta, t, pts, center, R, D)
    return w @ np.asarray(intensities, dtype=float)


def approx_flux_hat(spec: FluxSpec | int, theta, t, R: float = 1.0, r: float = 0.01, D: float = 1.0,
                    phi0: float | None = None, A: float | None = None):
    """Approximate boundary flux ``phi_hat_n(theta, t)`` for n in {1, 2}.

    Evaluated in a scaled form that never forms the large intensities, so it
    stays finite for all ``t > 0``.
    """
    n, phi0, A = _unpack(spec, phi0, A)
    _check_r(R, r)
    theta = np.asarray(theta, dtype=float)
    s = _s(t, D)
    if n == 1:
        a, b, z, den = _dipole_parts(s, R, r)
        q = R * R + r * r - 2 * R * r * np.sin(theta)
        # C_1 e^{-q s} = 2 A a b e^{(a^2 - q) s} / den, with a^2 - q = -2 R r (1 - sin)
        c1 = 2 * A * a * b / den * np.exp(-2 * R * r * (1 - np.sin(theta)) * s)
        return (phi0 - A) - 2 * A * a * z / den + c1 * (R - r * np.sin(theta)) / q
    if n == 2:
        a = R - r
        qq = R * R + r * r
        bx = _tripole_bracket(s, R, r)
        cs = np.sqrt(2) / 2 * r * (np.sin(theta) + np.cos(theta))
        # centre part folds into the last term: 4 A R x / (q bx) = (2A/bx)(2R/q) x
        total = 0.0
        for sign in (1.0, -1.0):
            qi = qq - sign * 2 * R * cs
            total = total + (R - sign * cs) / qi * np.exp((a * a - qi) * s)
        total = total - 2 * R / qq * np.exp((a * a - qq) * s)
        return (phi0 - A) + 2 * A / bx * total
    raise DomainError("closed forms exist for n = 1 and n = 2 only")


def _unpack(spec, phi0, A):
    if isinstance(spec, FluxSpec):
        return spec.n, spec.phi0 if phi0 is None else phi0, spec.A if A is None else A
    return int(spec), 1.0 if phi0 is None else phi0, 1.0 if A is None else A


def approx_flux_steady(spec: FluxSpec | int, theta, R: float = 1.0, r: float = 0.01,
                       phi0: float | None = None, A: float | None = None):
    """Large-time limit of ``phi_hat_n`` for n in {1, 2}."""
    n, phi0, A = _unpack(spec, phi0, A)
    if r == 0:
        raise DomainError("the limit is singular at r = 0")
    _check_r(R, r)
    theta = np.asarray(theta, dtype=float)
    if n == 1:
        sn = np.sin(theta)
        return phi0 + A - A * (R + r) ** 2 * (1 - sn) / (R * R - 2 * R * r * sn + r * r)
    if n == 2:
        s2 = np.sin(2 * theta)
        R2, r2 = R * R, r * r
        num = r2 * r2 - 2 * R2 * r2 + r2 * r2 * s2 + R2 * R2 + R2 * R2 * s2 - 2 * R2 * r2 * s2
        return phi0 - A + A * num / (R2 * R2 + r2 * r2 - 2 * R2 * r2 * s2)
    raise DomainError("closed forms exist for n = 1 and n = 2 only")


def phi_hat_derivative(theta, t, R: float = 1.0, r: float = 0.01, D: float = 1.0,
                       phi0: float = 1.0, A: float = 1.0):
    """Closed-form ``d phi_hat_1 / d theta``.

    ``C_1 r cos(theta) / q * exp(-q s) * [(R^2 - r^2)/q + R (R - r sin(theta)) / (2 D t)]``
    with ``q = R^2 + r^2 - 2 R r sin(theta)``.
    """
    _check_r(R, r)
    theta = np.asarray(theta, dtype=float)
    s = _s(t, D)
    a, b, z, den = _dipole_parts(s, R, r)
    sn = np.sin(theta)
    q = R * R + r * r - 2 * R * r * sn
    c1e = 2 * A * a * b / den * np.exp(-2 * R * r * (1 - sn) * s)
    bracket = (R * R - r * r) / q + R * (R - r * sn) / (2 * D * t)
    return c1e * r * np.cos(theta) / q * bracket


def t_min_dipole(D: float, R: float, r: float) -> float:
    """Time at which the off-centre dipole intensity is smallest.

    Setting ``d Phi_D / dt = 0`` gives ``exp(4 R r s) = (R + r)/(R - r)``,
    i.e. ``t_min = R r / (D ln((R + r)/(R - r)))``.
    """
    _check_r(R, r)
    if not D > 0:
        raise DomainError("D must be positive")
    return R * r / (D * math.log((R + r) / (R - r)))


def t_min_dipole_stated(D: float, R: float, r: float) -> float:
    """The reciprocal-form expression ``D ln((R + r)/(R - r)) / (R r)``.

    Kept for comparison; it does not locate the minimum of ``Phi_D`` (see
    :func:`t_min_dipole`).
    """
    _check_r(R, r)
    return D * math.log((R + r) / (R - r)) / (R * r)


class Regime(enum.Enum):
    MONOTONE_DECREASING = "MonotoneDecreasing"
    TWO_EXTREMA = "TwoExtrema"
    OTHER = "Other"


def phi_c_regime(R: float, r: float, rho: float) -> Regime:
    """Shape class of the centre intensity of the dipole, from ``beta = r/R``.

    ``rho = 1`` with ``beta < 1/4`` is counted as two extrema.
    """
    _check_r(R, r)
    beta = r / R
    if beta >= 0.25:
        return Regime.MONOTONE_DECREASING
    if 8 * beta / (16 * beta * beta + 1) < rho <= 1:
        return Regime.TWO_EXTREMA
    return Regime.OTHER


def phi_c_extrema_count(R: float, r: float, rho: float, D: float = 1.0,
                        t_lo: float | None = None, t_hi: float = 1e5, samples: int = 20000) -> int:
    """Number of interior extrema of the dipole ``Phi_C`` on a log-spaced grid.

    The grid starts where ``exp(R^2 / 4 D t)`` is still comfortably finite.
    Values are compared after dividing by ``phi0`` (set to 1).
    """
    if t_lo is None:
        t_lo = R * R / (4 * D * 600.0)
    t = np.geomspace(t_lo, t_hi, samples)
    _, phi_c = intensity_dipole(t, R, r, D, 1.0, rho)
    d = np.diff(phi_c)
    sgn = np.sign(d[d != 0])
    return int(np.count_nonzero(sgn[1:] != sgn[:-1]))


@dataclass(frozen=True)
class IntensitySchedule:
    """Time-dependent intensities of all points of a layout.

    ``evaluator(t)`` returns the intensities in layout order (centre first).
    For ``t < tau_trunc`` the value at ``tau_trunc`` is used.
    """

    evaluator: Callable[[float], np.ndarray]
    tau_trunc: float
    n_points: int
    vectorized: bool = False

    def __post_init__(self):
        if not self.tau_trunc > 0:
            raise DomainError("tau_trunc must be positive")

    def intensities(self, t: float) -> np.ndarray:
        t = max(float(t), self.tau_trunc)
        return np.asarray(self.evaluator(t), dtype=float).reshape(self.n_points)

    def sample(self, times: Sequence[float]) -> np.ndarray:
        """(len(times), n_points) array."""
        times = np.maximum(np.asarray(times, dtype=float).ravel(), self.tau_trunc)
        if self.vectorized and len(times):
            v = np.asarray(self.evaluator(times), dtype=float)
            return np.broadcast_to(v.reshape(self.n_points, -1), (self.n_points, len(times))).T.copy()
        return np.array([self.intensities(t) for t in times]).reshape(len(times), self.n_points)

    def validate(self, t_end: float) -> None:
        """Evaluate at ``tau_trunc`` and ``t_end``; raises on overflow."""
        self.intensities(self.tau_trunc)
        self.intensities(t_end)

    def step_means(self, dt: float, steps: int, order: int = 6, depth: int = 5) -> np.ndarray:
        """Mean intensity over each step ``((m-1) dt, m dt]``, shape (steps, P).

        The schedule is zero before ``tau_trunc``, so the first step
        averages over ``[tau_trunc, dt]`` only. Each step uses composite
        Gauss-Legendre panels graded towards its left end, where the
        early-time intensities are largest.
        """
        if not dt > 0 or steps < 1:
            raise DomainError("need dt > 0 and at least one step")
        xg, wg = np.polynomial.legendre.leggauss(order)
        breaks = np.concatenate([[0.0], 10.0 ** np.arange(-depth, 0.5, 0.5)])
        a, b = breaks[:-1], breaks[1:]
        # unit-interval rule graded towards 0
        u = (0.5 * (a + b))[:, None] + (0.5 * (b - a))[:, None] * xg[None, :]
        w = (0.5 * (b - a))[:, None] * wg[None, :]
        u, w = u.ravel(), w.ravel()
        lo = np.maximum(np.arange(steps) * dt, self.tau_trunc)
        hi = np.arange(1, steps + 1) * dt
        width = np.clip(hi - lo, 0.0, None)
        times = lo[:, None] + width[:, None] * u[None, :]  # (steps, Q)
        vals = self.sample(times.ravel()).reshape(steps, len(u), self.n_points)
        return np.einsum("mqp,q->mp", vals, w) * (width / dt)[:, None]

    def __call__(self, t: float) -> tuple[float, float]:
        """``(Phi_C, Phi_D)``: centre and first off-centre intensity."""
        v = self.intensities(t)
        return float(v[0]), float(v[1]) if self.n_points > 1 else 0.0

    def frozen(self, t: float) -> "IntensitySchedule":
        """Schedule held constant at its value at ``t``.

        A constant needs no truncation, so the result integrates from 0.
        """
        return constant_schedule(self.intensities(t))


def constant_schedule(values, tau_trunc: float = 1e-12) -> IntensitySchedule:
    v = np.atleast_1d(np.asarray(values, dtype=float)).copy()
    return IntensitySchedule(lambda t: v, tau_trunc, len(v), vectorized=True)


def make_schedule(spec: FluxSpec, layout: DiracLayout, D: float, tau_trunc: float) -> IntensitySchedule:
    """Intensity schedule for a layout: closed forms for the symmetric n = 1, 2 cases."""
    R, r = layout.R, layout.r
    if layout.symmetric and spec.n == 1:
        def ev(t):
            d, c = intensity_dipole(t, R, r, D, spec.phi0, spec.A)
            return np.array([c, d])
        vec = True
    elif layout.symmetric and spec.n == 2:
        def ev(t):
            d, c = intensity_tripole(t, R, r, D, spec.phi0, spec.A)
            return np.array([c, d, d])
        vec = True
    else:
        def ev(t):
            return intensity_general(spec, layout, t, D)
        vec = False
    return IntensitySchedule(ev, tau_trunc, len(layout), vectorized=vec)
