"""When does the flux pattern matter? Homogeneity indicator of the exclusion model.

Compares the field produced by a sinusoidal flux with the one produced by
a uniform flux of the same mean, over a few diffusivities and modes.
"""
from cellflux.metrics import homogeneity_indicator
from cellflux.models import Scenario, run

base = Scenario(h=0.3, dt=0.08)
for D in (0.1, 1.0, 30.0):
    hom = run(base.replace(D=D, rho=0.0))
    for n in (1, 3):
        for rho in (0.1, 1.0):
            H = homogeneity_indicator(hom, run(base.replace(D=D, n=n, rho=rho)))
            print(f"D={D:<5} n={n} rho={rho:<4} H(10)={H[9]:.4f} H(40)={H[-1]:.4f}")
