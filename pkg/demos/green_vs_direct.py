"""Exclusion model against the two point-source solvers on a coarse mesh.

Solves the three models for mode 1 up to t = 40 and prints the L2
deviation of each point-source field from the exclusion field, plus the
mean boundary flux at the end. Uses h = 0.3 so it finishes in about a
minute.
"""
import numpy as np

from cellflux.models import Scenario, Variant, compare_runs, run

base = Scenario(h=0.3, dt=0.08)
ref = run(base.replace(variant=Variant.EXCLUSION))
print("t      " + "  ".join(f"{v:>12}" for v in ("PointDirect", "Green hist", "Green frozen", "PointSingle")))
curves = []
for v, mode in ((Variant.POINT_DIRECT, "history"), (Variant.POINT_GREEN, "history"),
                (Variant.POINT_GREEN, "frozen"), (Variant.POINT_SINGLE, "history")):
    res = run(base.replace(variant=v, green_mode=mode))
    curves.append(compare_runs(ref, res))
    print(f"{v.value:>12} {mode:>7}: mass error {res.conservation_error():.1e}, "
          f"mean flux at t=40 {np.mean(res.flux_trace[-1].values):.3f}")
for i in range(4, len(ref.times), 5):
    print(f"{ref.times[i]:5.1f}  " + "  ".join(f"{c.l2_dev[i]:12.4f}" for c in curves))
