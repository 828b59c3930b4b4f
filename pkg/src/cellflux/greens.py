"""Free-space solution of point sources via the heat kernel.

``u_hat(x, t) = sum_i int_0^t Phi_i(s) K(x - x_i, t - s) ds`` with the
two-dimensional heat kernel ``K``. Two evaluation paths are provided:

* a graded composite Gauss-Legendre rule in ``s`` for arbitrary schedules
  (:func:`u_hat`, :func:`grad_u_hat`, :func:`phi_P_semianalytic`);
* exact time integrals for intensities that are constant on the steps of a
  uniform time grid (:class:`StepKernels`), which is what the time-stepping
  solvers use. These reduce to the exponential integral ``E1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import toeplitz
from scipy.special import erf, exp1

from .errors import DomainError
from .intensities import DiracLayout, IntensitySchedule

__all__ = [
    "heat_kernel",
    "QuadratureRule",
    "u_hat",
    "grad_u_hat",
    "phi_P_semianalytic",
    "StepKernels",
    "kernel_integral",
    "gradient_integral",
    "square_fraction",
    "toeplitz_apply",
    "values_at_step",
    "values_at_steps",
    "gradients_at_steps",
    "mass_in_square",
    "square_mass_steps",
]

MIN_SOURCE_DISTANCE = 1e-6


def heat_kernel(x, x0, D: float, t):
    """``(4 pi D t)^-1 exp(-|x - x0|^2 / (4 D t))``."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise DomainError("heat kernel needs t > 0")
    if not D > 0:
        raise DomainError("D must be positive")
    d = np.asarray(x, dtype=float) - np.asarray(x0, dtype=float)
    r2 = np.sum(d * d, axis=-1)
    return np.exp(-r2 / (4 * D * t)) / (4 * np.pi * D * t)


@dataclass(frozen=True)
class QuadratureRule:
    """Composite Gauss-Legendre rule on ``[t_start, t_end]``.

    Panels are graded geometrically towards both ends: towards ``t_end``
    the kernel narrows, towards ``t_start`` the truncated schedules are
    steepest.

    Attributes
    ----------
    nodes, weights : ndarray
        Nodes lie strictly inside the interval; weights are positive and
        sum to ``t_end - t_start``.
    """

    nodes: np.ndarray
    weights: np.ndarray
    t_start: float
    t_end: float

    @classmethod
    def graded(cls, t_start: float, t_end: float, panels_per_decade: int = 8,
               order: int = 6, decades: int = 14) -> "QuadratureRule":
        if not t_end > t_start:
            raise DomainError("empty integration interval")
        L = t_end - t_start
        # offsets from the ends: L/2 * 10^(-k/ppd), k = 0..K, then 0
        k = np.arange(panels_per_decade * decades + 1)
        off = 0.5 * L * 10.0 ** (-k / panels_per_decade)
        left = t_start + np.concatenate([[0.0], off[::-1]])
        right = t_end - off[1:]
        right = np.concatenate([right, [t_end]])
        breaks = np.concatenate([left, right])
        breaks = np.unique(breaks)
        xg, wg = np.polynomial.legendre.leggauss(order)
        a, b = breaks[:-1], breaks[1:]
        half = 0.5 * (b - a)
        nodes = (0.5 * (a + b))[:, None] + half[:, None] * xg[None, :]
        weights = half[:, None] * wg[None, :]
        return cls(nodes.ravel(), weights.ravel(), float(t_start), float(t_end))

    def __len__(self) -> int:
        return len(self.nodes)


def _rule_for(t, schedule: IntensitySchedule, rule: QuadratureRule | None, **kw) -> QuadratureRule | None:
    if rule is not None:
        return rule
    if t <= schedule.tau_trunc:
        return None
    return QuadratureRule.graded(schedule.tau_trunc, t, **kw)


def _usable(rule: QuadratureRule, t: float):
    # nodes that round to t carry a vanishing kernel; drop them to avoid 0/0
    keep = rule.nodes < t
    return rule.nodes[keep], rule.weights[keep]


def _check_sites(x, points):
    d = np.linalg.norm(x[..., None, :] - points, axis=-1)
    if np.any(d < MIN_SOURCE_DISTANCE):
        raise DomainError("evaluation site coincides with a Dirac point")
    return d


def u_hat(x, t: float, layout: DiracLayout, schedule: IntensitySchedule, D: float,
          rule: QuadratureRule | None = None, **rule_kw):
    """Free-space concentration at ``x`` (shape (..., 2)) and time ``t``.

    The convolution runs over ``[tau_trunc, t]`` of the schedule.
    """
    if not t > 0:
        raise DomainError("t must be positive")
    x = np.asarray(x, dtype=float)
    pts = layout.points
    d = _check_sites(x, pts)
    rule = _rule_for(t, schedule, rule, **rule_kw)
    if rule is None:
        return np.zeros(x.shape[:-1])
    nodes, weights = _usable(rule, t)
    phi = schedule.sample(nodes)  # (Q, P)
    u = t - nodes  # (Q,)
    d2 = d * d  # (..., P)
    K = np.exp(-d2[..., None, :] / (4 * D * u[:, None])) / (4 * np.pi * D * u[:, None])
    return np.einsum("...qp,qp,q->...", K, phi, weights)


def grad_u_hat(x, t: float, layout: DiracLayout, schedule: IntensitySchedule, D: float,
               rule: QuadratureRule | None = None, **rule_kw):
    """Gradient of :func:`u_hat`, shape (..., 2)."""
    if not t > 0:
        raise DomainError("t must be positive")
    x = np.asarray(x, dtype=float)
    pts = layout.points
    d = _check_sites(x, pts)
    rule = _rule_for(t, schedule, rule, **rule_kw)
    if rule is None:
        return np.zeros(x.shape)
    nodes, weights = _usable(rule, t)
    phi = schedule.sample(nodes)
    u = t - nodes
    d2 = d * d
    K = np.exp(-d2[..., None, :] / (4 * D * u[:, None])) / (4 * np.pi * D * u[:, None])
    # grad K = -(x - x_i) / (2 D u) K
    coef = np.einsum("...qp,qp,q->...p", K / (2 * D * u[:, None]), phi, weights)
    diff = x[..., None, :] - pts  # (..., P, 2)
    return -np.einsum("...p,...pk->...k", coef, diff)


def phi_P_semianalytic(theta, t: float, layout: DiracLayout, schedule: IntensitySchedule, D: float,
                       R: float | None = None, center=None, rule: QuadratureRule | None = None,
                       **rule_kw):
    """Emergent free-space flux ``D grad(u_hat) . n`` on the circle.

    ``n = -(x - x_C) / R`` points towards the cell centre.
    """
    R = layout.R if R is None else R
    c = np.asarray(layout.center if center is None else center, dtype=float)
    theta = np.asarray(theta, dtype=float)
    e = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    x = c + R * e
    g = grad_u_hat(x, t, layout, schedule, D, rule, **rule_kw)
    return -D * np.sum(g * e, axis=-1)


# closed-form time integrals for step-constant intensities

def kernel_integral(dist2, D: float, u):
    """``H(u) = int_0^u K(d, tau) dtau = E1(d^2 / 4 D u) / (4 pi D)``; 0 for u <= 0."""
    dist2 = np.asarray(dist2, dtype=float)
    u = np.asarray(u, dtype=float)
    pos = u > 0
    arg = np.where(pos, dist2 / (4 * D * np.where(pos, u, 1.0)), np.inf)
    return np.where(pos, exp1(arg) / (4 * np.pi * D), 0.0)


def gradient_integral(dist2, D: float, u):
    """Scalar factor ``q(u)`` with ``int_0^u grad K dtau = -(x - x_i) q(u)``.

    ``q(u) = exp(-a/u) / (2 pi D d^2)``, ``a = d^2 / 4D``.
    """
    dist2 = np.asarray(dist2, dtype=float)
    u = np.asarray(u, dtype=float)
    pos = u > 0
    a = dist2 / (4 * D)
    return np.where(pos, np.exp(-a / np.where(pos, u, 1.0)) / (2 * np.pi * D * dist2), 0.0)


def _gradient_double_integral(dist2, D: float, u):
    """``w(u)`` with ``int_0^u int_0^v grad K = -(x - x_i) w(u)``."""
    dist2 = np.asarray(dist2, dtype=float)
    u = np.asarray(u, dtype=float)
    pos = u > 0
    a = dist2 / (4 * D)
    us = np.where(pos, u, 1.0)
    val = us * np.exp(-a / us) - a * exp1(a / us)
    return np.where(pos, val / (2 * np.pi * D * dist2), 0.0)


def square_fraction(center, half_width: float, D: float, u):
    """Fraction of a Gaussian of variance ``2 D u`` centred at ``center`` inside the square."""
    u = np.asarray(u, dtype=float)
    out = np.ones(u.shape)
    pos = u > 0
    su = np.sqrt(4 * D * np.where(pos, u, 1.0))
    for c in center:
        f = 0.5 * (erf((half_width - c) / su) + erf((half_width + c) / su))
        out = out * np.where(pos, f, 1.0)
    return out


def toeplitz_apply(phi: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """``out[m] = sum_{k<=m} phi[k] kernel[m - k]``, lower-triangular Toeplitz.

    ``phi`` has shape (M,), ``kernel`` shape (M, ...).
    """
    M = len(phi)
    T = toeplitz(phi, np.zeros(M))
    flat = kernel.reshape(M, -1)
    return (T @ flat).reshape(kernel.shape)


class StepKernels:
    """Exact step integrals of the heat kernel for a uniform time grid.

    Intensities are constant on each step ``((m-1) dt, m dt]``, m = 1..M.
    For a set of evaluation sites and sources this precomputes

    * ``hk[j] = H((j+1) dt) - H(j dt)``: response of ``u_hat`` at ``t_m`` to a
      unit intensity on step ``m - j``;
    * ``gk[j]``: the same for the step-averaged gradient over step ``m``.

    Parameters
    ----------
    sites : (S, 2) array
    sources : (P, 2) array
    D, dt : float
    steps : int
    """

    def __init__(self, sites, sources, D: float, dt: float, steps: int, with_values=True,
                 with_gradient=True):
        sites = np.atleast_2d(np.asarray(sites, dtype=float))
        sources = np.atleast_2d(np.asarray(sources, dtype=float))
        diff = sites[:, None, :] - sources[None, :, :]  # (S, P, 2)
        d2 = np.sum(diff * diff, axis=-1)
        if np.any(d2 < MIN_SOURCE_DISTANCE ** 2):
            raise DomainError("evaluation site coincides with a Dirac point")
        self.diff, self.d2 = diff, d2
        self.D, self.dt, self.steps = D, dt, steps
        j = np.arange(steps + 1, dtype=float)[:, None, None] * dt  # (M+1, 1, 1)
        if with_values:
            H = kernel_integral(d2[None], D, j)  # (M+1, S, P)
            self.hk = np.diff(H, axis=0)  # (M, S, P)
        if with_gradient:
            W = _gradient_double_integral(d2[None], D, j)  # W(j dt), j = 0..M
            Wm1 = np.concatenate([np.zeros((1,) + d2.shape), W[:-2]], axis=0)  # W((j-1) dt)
            g = W[1:] - 2 * W[:-1] + Wm1  # (M, S, P)
            self.gk = g / dt

    def values(self, phi: np.ndarray) -> np.ndarray:
        """``u_hat`` at all steps, shape (M, S); ``phi`` has shape (M, P)."""
        out = 0.0
        for p in range(phi.shape[1]):
            out = out + toeplitz_apply(phi[:, p], self.hk[:, :, p])
        return out

    def mean_gradient(self, phi: np.ndarray) -> np.ndarray:
        """Step-averaged gradient of ``u_hat`` over every step, shape (M, S, 2)."""
        out = 0.0
        for p in range(phi.shape[1]):
            coef = toeplitz_apply(phi[:, p], self.gk[:, :, p])  # (M, S)
            out = out - coef[:, :, None] * self.diff[None, :, p, :]
        return out


def values_at_step(sites, sources, phi: np.ndarray, D: float, dt: float, m: int,
                   block: int = 512) -> np.ndarray:
    """``u_hat`` at time ``m dt`` for step-constant intensities ``phi`` (M, P)."""
    return values_at_steps(sites, sources, phi, D, dt, [m], block)[0]


def values_at_steps(sites, sources, phi: np.ndarray, D: float, dt: float, steps,
                    block: int = 512) -> np.ndarray:
    """``u_hat`` at the times ``m dt`` for each ``m`` in ``steps``; shape (len(steps), S).

    Memory-light variant of :meth:`StepKernels.values`: the step integrals
    ``H(j dt)`` are computed once per block of sites and shared by all
    requested time levels.
    """
    sites = np.atleast_2d(np.asarray(sites, dtype=float))
    sources = np.atleast_2d(np.asarray(sources, dtype=float))
    steps = [int(m) for m in steps]
    if any(m < 0 or m > len(phi) for m in steps):
        raise DomainError("requested step outside the intensity history")
    out = np.zeros((len(steps), len(sites)))
    top = max(steps, default=0)
    if top == 0:
        return out
    j = np.arange(top + 1, dtype=float) * dt
    for lo in range(0, len(sites), block):
        s = sites[lo:lo + block]
        d2 = np.sum((s[:, None, :] - sources[None]) ** 2, axis=-1)  # (B, P)
        H = kernel_integral(d2[None], D, j[:, None, None])  # (top+1, B, P)
        hk = np.diff(H, axis=0)  # hk[j]: lag j
        for k, m in enumerate(steps):
            w = phi[:m][::-1]  # w[j] = phi[m-1-j]
            out[k, lo:lo + block] = np.einsum("jbp,jp->b", hk[:m], w)
    return out


def gradients_at_steps(sites, sources, phi: np.ndarray, D: float, dt: float, steps) -> np.ndarray:
    """Gradient of ``u_hat`` at the times ``m dt``; shape (len(steps), S, 2).

    Pointwise counterpart of :meth:`StepKernels.mean_gradient` built from
    the step increments of :func:`gradient_integral`.
    """
    sites = np.atleast_2d(np.asarray(sites, dtype=float))
    sources = np.atleast_2d(np.asarray(sources, dtype=float))
    steps = [int(m) for m in steps]
    if any(m < 0 or m > len(phi) for m in steps):
        raise DomainError("requested step outside the intensity history")
    diff = sites[:, None, :] - sources[None]  # (S, P, 2)
    d2 = np.sum(diff * diff, axis=-1)
    if np.any(d2 < MIN_SOURCE_DISTANCE ** 2):
        raise DomainError("evaluation site coincides with a Dirac point")
    out = np.zeros((len(steps), len(sites), 2))
    top = max(steps, default=0)
    if top == 0:
        return out
    Q = gradient_integral(d2[None], D, np.arange(top + 1, dtype=float)[:, None, None] * dt)
    qk = np.diff(Q, axis=0)  # (top, S, P), lag j
    for k, m in enumerate(steps):
        coef = np.einsum("jsp,jp->sp", qk[:m], phi[:m][::-1])
        out[k] = -np.einsum("sp,spk->sk", coef, diff)
    return out


def square_mass_steps(sources, half_width: float, D: float, dt: float, steps: int,
                      order: int = 8) -> np.ndarray:
    """``F[j, p] = int_{j dt}^{(j+1) dt} frac_p(u) du``, shape (steps, P).

    ``frac_p`` is :func:`square_fraction` of source ``p``; a unit intensity
    held on one step contributes ``F[j]`` to the mass inside the square
    ``j`` steps later.
    """
    xg, wg = np.polynomial.legendre.leggauss(order)
    sources = np.atleast_2d(np.asarray(sources, dtype=float))
    u = (np.arange(steps)[:, None] + 0.5 * (xg[None, :] + 1.0)) * dt
    out = np.empty((steps, len(sources)))
    for p, c in enumerate(sources):
        out[:, p] = 0.5 * dt * (square_fraction(c, half_width, D, u) @ wg)
    return out


def mass_in_square(sources, phi: np.ndarray, half_width: float, D: float, dt: float, m: int,
                   order: int = 8) -> float:
    """Exact mass of ``u_hat`` inside the square at ``t = m dt`` (step-constant intensities)."""
    F = square_mass_steps(sources, half_width, D, dt, m, order)
    return float(np.sum(F * phi[:m][::-1]))
