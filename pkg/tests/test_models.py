import numpy as np
import pytest

from cellflux.errors import ConfigError, DomainError, IntensityOverflow
from cellflux.greens import kernel_integral
from cellflux.intensities import constant_schedule
from cellflux.io import read_csv, read_metadata
from cellflux.metrics import norm
from cellflux.models import (NondimScaling, RunResult, Scenario, Variant, compare_runs, nondimensionalize, run,
                             scenario_meshes, single_layout, solve_exclusion, solve_point_direct,
                             solve_point_green)

QUICK = Scenario(h=0.3, T=2.0, dt=0.04, output_times=(1.0, 2.0))


def test_nondimensionalize_examples():
    s, sc = nondimensionalize(1.0, 0.7, 1.0, 1.0, 10.0)
    assert s.tau0 == 1.0 and sc.D == pytest.approx(0.7) and sc.half_width == 5.0 and sc.R == 1.0
    s, sc = nondimensionalize(2.0, 4.0, 1.0, 1.0, 20.0)
    assert s.tau0 == pytest.approx(2.0) and sc.D == pytest.approx(2.0)
    gamma = np.array([0.3, 1.7])
    _, _, u = s.to_physical(gamma=gamma)
    assert np.allclose(s.to_scaled(u=u)[2], gamma, rtol=1e-14)
    with pytest.raises(DomainError):
        nondimensionalize(1.0, -1.0, 1.0, 1.0, 10.0)
    with pytest.raises(DomainError):
        NondimScaling(1.0, 2.0, 1.0, 1.0)


def test_scenario_defaults():
    sc = Scenario()
    assert (sc.n, sc.rho, sc.D, sc.r, sc.half_width, sc.dt, sc.T, sc.h) == (1, 1.0, 1.0, 0.01, 5.0, 0.04, 40.0, 0.0875)
    assert sc.steps == 1000
    assert sc.output_times[0] == pytest.approx(1.0) and sc.output_times[-1] == pytest.approx(40.0)
    assert len(sc.output_times) == 40
    assert sc.tau_trunc == 0.02
    assert Scenario(dt=0.08).output_times[-1] == pytest.approx(40.0)


@pytest.mark.parametrize("kw,key", [
    ({"r": 1.0}, "r"), ({"rho": 1.5}, "rho"), ({"dt": 0.0}, "dt"), ({"T": 1.01}, "T"),
    ({"half_width": 1.0}, "half_width"), ({"output_times": (0.5, 0.3)}, "output_times"),
    ({"output_times": (0.05,)}, "output_times"), ({"variant": "Nope"}, "variant"),
    ({"green_mode": "x"}, "green_mode"), ({"n": 0}, "n"),
])
def test_scenario_validation(kw, key):
    with pytest.raises(ConfigError) as exc:
        Scenario(**kw)
    assert exc.value.key == key


def test_variant_parse():
    assert Variant.parse("point_green") is Variant.POINT_GREEN
    assert Variant.parse("PointSingle") is Variant.POINT_SINGLE
    with pytest.raises(ValueError):
        Variant.parse("green")


def test_exclusion_mass_and_symmetry():
    hom = solve_exclusion(QUICK.replace(rho=0.0))
    inh = solve_exclusion(QUICK)
    full, _ = scenario_meshes(QUICK)
    n = len(full.cell_polygon)
    perimeter = 2 * n * np.sin(np.pi / n)
    k = np.arange(QUICK.steps + 1)
    assert np.allclose(hom.mass_trace, perimeter * k * QUICK.dt, rtol=1e-8, atol=1e-12)
    assert np.allclose(inh.mass_trace, hom.mass_trace, rtol=1e-6, atol=1e-12)
    assert inh.conservation_error() < 1e-8
    assert len(inh.snapshots) == len(QUICK.output_times)
    assert inh.diagnostics["min_value"] >= -1e-10


def test_exclusion_first_order_in_time():
    base = Scenario(h=0.4, T=1.0, dt=0.1, output_times=(1.0,), rho=0.5)
    u = [solve_exclusion(base.replace(dt=dt)).snapshots[-1].values for dt in (0.1, 0.05, 0.025)]
    e1, e2 = np.linalg.norm(u[0] - u[1]), np.linalg.norm(u[1] - u[2])
    assert 1.6 < e1 / e2 < 2.4


def test_direct_zero_schedule():
    sc = QUICK.replace(variant=Variant.POINT_DIRECT)
    res = solve_point_direct(sc, schedule=constant_schedule([0.0, 0.0]))
    assert all(np.all(s.values == 0) for s in res.snapshots)


def test_direct_mass_equals_injection():
    sc = QUICK.replace(variant=Variant.POINT_DIRECT)
    res = solve_point_direct(sc)
    assert res.conservation_error() < 1e-8
    assert res.injected_trace[-1] == pytest.approx(res.mass_trace[-1], rel=1e-8)


def test_single_flux_tends_to_phi0():
    sc = Scenario(h=0.2, T=4.0, dt=0.04, D=10.0, output_times=(0.4, 1.0, 4.0), variant=Variant.POINT_SINGLE)
    res = run(sc)
    means = [np.mean(f.values) for f in res.flux_trace]
    assert means[0] < means[1] < means[2]
    assert abs(means[-1] - 1.0) < 0.1
    assert np.ptp(res.flux_trace[-1].values) < 0.03
    # with the exact free-space gradient the flux settles at the share of mass leaving the disc
    g = solve_point_green(sc.replace(variant=Variant.POINT_GREEN), single_layout(),
                          constant_schedule([2 * np.pi], sc.tau_trunc))
    assert np.mean(g.flux_trace[-1].values) == pytest.approx(1 - np.pi / 100, abs=0.005)
    assert np.ptp(g.flux_trace[-1].values) < 0.002


def test_direct_overflow():
    sc = QUICK.replace(variant=Variant.POINT_DIRECT, D=0.001)
    with pytest.raises(IntensityOverflow):
        solve_point_direct(sc)


def test_green_zero_schedule():
    sc = QUICK.replace(variant=Variant.POINT_GREEN)
    res = solve_point_green(sc, schedule=constant_schedule([0.0, 0.0], sc.tau_trunc))
    for s in res.snapshots:
        assert np.all(np.nan_to_num(s.values) == 0)
    assert res.mass_trace[-1] == 0


@pytest.mark.parametrize("mode", ["history", "frozen"])
def test_green_conservation_and_masking(mode):
    sc = QUICK.replace(variant=Variant.POINT_GREEN, green_mode=mode)
    res = run(sc)
    assert res.conservation_error() < 1e-8
    # the centre Dirac point sits on a mesh node
    assert res.diagnostics["n_masked"] == 1
    k = res.diagnostics["masked_nodes"][0]
    assert np.allclose(res.mesh.nodes[k], (0, 0))
    assert np.isnan(res.snapshots[0].values[k])
    assert np.isfinite(np.delete(res.snapshots[0].values, k)).all()


def test_green_wall_correction_small_early():
    sc = Scenario(h=0.3, T=0.4, dt=0.04, output_times=(0.4,), variant=Variant.POINT_GREEN)
    res = run(sc)
    assert res.diagnostics["v_over_uhat"][-1] < 1e-3


def test_green_agrees_with_direct_single_source():
    base = Scenario(h=0.15, T=40.0, dt=0.08, output_times=(40.0,))
    lay = single_layout()
    sched = constant_schedule([2 * np.pi], base.tau_trunc)
    g = solve_point_green(base.replace(variant=Variant.POINT_GREEN), lay, sched)
    d = solve_point_direct(base.replace(variant=Variant.POINT_DIRECT), lay, sched)
    _, ann = scenario_meshes(base)
    ug = ann.restrict(g.snapshots[-1].values)
    ud = ann.restrict(d.snapshots[-1].values)
    rel = norm(ug - ud, ann) / norm(ud, ann)
    assert rel < 0.02


def test_direct_matches_free_space_far_wall():
    sc = Scenario(h=0.3, half_width=20.0, T=1.0, dt=0.02, output_times=(1.0,), variant=Variant.POINT_DIRECT)
    res = solve_point_direct(sc, single_layout(), constant_schedule([1.0], sc.tau_trunc))
    full = res.mesh
    poly = full.cell_polygon
    exact = kernel_integral(np.sum(full.nodes[poly] ** 2, axis=1), 1.0, 1.0)
    got = res.snapshots[-1].values[poly]
    assert np.max(np.abs(got - exact)) / np.max(exact) < 0.05


def test_compare_identical_runs_is_zero():
    res = solve_exclusion(QUICK)
    curves = compare_runs(res, res)
    assert np.all(curves.l2_dev == 0) and np.all(curves.h1_dev == 0) and np.all(curves.c_star == 0)


def test_compare_curves_nonnegative():
    ex = solve_exclusion(QUICK)
    pd = run(QUICK.replace(variant=Variant.POINT_DIRECT))
    curves = compare_runs(ex, pd)
    assert np.all(curves.l2_dev >= 0) and np.all(curves.h1_dev >= 0)
    assert np.all(np.diff(curves.c_star) >= 0)


def test_save_layout(tmp_path):
    res = solve_exclusion(QUICK)
    res.save(tmp_path)
    meta = read_metadata(tmp_path / "metadata.txt")
    assert meta["variant"] == "Exclusion" and float(meta["D"]) == 1.0
    assert (tmp_path / "Exclusion_t1.0.csv").exists() and (tmp_path / "Exclusion_t2.0.csv").exists()
    trace = read_csv(tmp_path / "trace.csv")
    assert np.allclose(trace["t"], [1.0, 2.0])
    assert np.allclose(trace["mass"], res.mass_trace[[25, 50]])
    assert isinstance(res, RunResult)
