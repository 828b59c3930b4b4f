"""How the approximate boundary flux of a few Dirac points approaches a sinusoid.

Prints, for modes 1 and 2, the worst deviation of the free-space flux from
the prescribed one as time goes on and as the points move towards the
centre. Runs in well under a second.
"""
import numpy as np

from cellflux.intensities import (FluxSpec, approx_flux_hat, approx_flux_steady, flux_density,
                                  intensity_dipole, t_min_dipole)

theta = np.linspace(0, 2 * np.pi, 2048, endpoint=False)

for n in (1, 2):
    spec = FluxSpec(n, 1.0, 1.0)
    target = flux_density(spec, theta)
    print(f"mode {n}")
    for r in (0.25, 0.1, 0.01):
        devs = [np.max(np.abs(approx_flux_hat(spec, theta, t, r=r) - target)) for t in (0.04, 0.8, 8, 40)]
        steady = np.max(np.abs(approx_flux_steady(spec, theta, r=r) - target))
        print(f"  r={r:<5} sup deviation at t=0.04/0.8/8/40: " + " ".join(f"{d:.4f}" for d in devs)
              + f"  steady {steady:.4f}")

# the off-centre intensity dips once before settling; where the dip sits
t = np.geomspace(0.01, 100, 10_000)
phi_d, phi_c = intensity_dipole(t, 1.0, 0.25, 1.0, 1.0, 1.0)
print(f"dipole r=0.25: numeric minimum of the off-centre intensity at t={t[np.argmin(phi_d)]:.4f},"
      f" closed form {t_min_dipole(1.0, 1.0, 0.25):.4f}")
