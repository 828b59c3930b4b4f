"""Configuration files, scenario runs, Monte Carlo sweeps and the mesh study."""

from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CellFluxError, ConfigError, NumericalError
from .fem import FluxProfile, ScalarField, boundary_flux_postprocess
from .geometry import boundary_arcs
from .intensities import flux_density
from .io import field_filename, read_csv, read_field_csv, read_metadata, write_csv, write_metadata
from .metrics import DeviationCurves, relative_error
from .models import RunResult, Scenario, Variant, compare_runs, run, scenario_meshes

__all__ = [
    "Config",
    "SweepSample",
    "parse_config",
    "run_scenario",
    "label_run",
    "sweep_draw",
    "mc_sweep",
    "write_sweep_csv",
    "mesh_study",
    "load_run",
    "EXIT_OK",
    "EXIT_CONFIG",
    "EXIT_NUMERICAL",
]

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

SWEEP_WINDOW = (10.0, 40.0)


@dataclass(frozen=True)
class Config:
    """Parsed configuration file.

    ``scenario`` carries every model parameter; ``variants`` lists the
    solvers of a ``run``; the sweep and mesh-study blocks hold their own
    settings.
    """

    scenario: Scenario = field(default_factory=Scenario)
    variants: tuple = (Variant.EXCLUSION, Variant.POINT_GREEN, Variant.POINT_SINGLE)
    output_dir: str = "out"
    write_fields: bool = True
    samples: int = 50
    seed: int = 0
    workers: int = 1
    sweep_h: float = 0.2
    sweep_dt: float = 0.08
    fine_h: float = 0.09577
    coarse_h: float = 0.28773


_SCENARIO_KEYS = {f.name for f in dataclasses.fields(Scenario)}
_SECTIONS = {
    "scenario": set(_SCENARIO_KEYS) - {"variant"},
    "run": {"variants", "output_dir", "write_fields"},
    "sweep": {"samples", "seed", "workers", "h", "dt"},
    "mesh_study": {"fine_h", "coarse_h"},
}


def _number(key, text, kind=float):
    try:
        v = kind(text)
    except ValueError:
        raise ConfigError(key, f"cannot parse {text!r} as {kind.__name__}") from None
    if kind is float and not np.isfinite(v):
        raise ConfigError(key, "value must be finite")
    return v


def _list(key, text, kind=float):
    return tuple(_number(key, t.strip(), kind) for t in text.split(",") if t.strip())


def _bool(key, text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(key, f"cannot parse {text!r} as a boolean")


def _scenario_value(key, text):
    if key in ("n",):
        return _number(key, text, int)
    if key == "n_circle_points":
        return None if text.lower() in ("none", "") else _number(key, text, int)
    if key == "center":
        v = _list(key, text)
        if len(v) != 2:
            raise ConfigError(key, "expected two coordinates")
        return v
    if key == "output_times":
        return _list(key, text)
    if key in ("layout", "green_mode"):
        return text
    return _number(key, text)


def parse_config(text: str) -> Config:
    """Parse ``key = value`` lines grouped under ``[section]`` headers.

    Keys before the first header belong to ``[scenario]``. ``#`` starts a
    comment. Omitted keys take the standard values.

    Raises
    ------
    ConfigError
        Unknown section or key, unparseable value or an invalid scenario;
        ``.key`` names the offending entry.
    """
    section = "scenario"
    raw: dict[str, dict[str, str]] = {s: {} for s in _SECTIONS}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower().replace("-", "_")
            if section not in _SECTIONS:
                raise ConfigError(section, f"unknown section on line {lineno}")
            continue
        if "=" not in line:
            raise ConfigError(line, f"line {lineno} is not 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _SECTIONS[section]:
            raise ConfigError(key, f"unknown key in [{section}]")
        if key in raw[section]:
            raise ConfigError(key, "given twice")
        raw[section][key] = value

    sc_kw = {k: _scenario_value(k, v) for k, v in raw["scenario"].items()}
    scenario = Scenario(**sc_kw)  # raises ConfigError naming the key

    kw = {"scenario": scenario}
    r = raw["run"]
    if "variants" in r:
        names = [v.strip() for v in r["variants"].split(",") if v.strip()]
        try:
            kw["variants"] = tuple(Variant.parse(v) for v in names)
        except ValueError as exc:
            raise ConfigError("variants", str(exc)) from None
        if not kw["variants"]:
            raise ConfigError("variants", "empty list")
    if "output_dir" in r:
        kw["output_dir"] = r["output_dir"]
    if "write_fields" in r:
        kw["write_fields"] = _bool("write_fields", r["write_fields"])
    s = raw["sweep"]
    for key, name, kind in (("samples", "samples", int), ("seed", "seed", int), ("workers", "workers", int),
                            ("h", "sweep_h", float), ("dt", "sweep_dt", float)):
        if key in s:
            kw[name] = _number(key, s[key], kind)
    m = raw["mesh_study"]
    for key in ("fine_h", "coarse_h"):
        if key in m:
            kw[key] = _number(key, m[key])
    cfg = Config(**kw)
    if cfg.samples < 1:
        raise ConfigError("samples", "need at least one sample")
    if cfg.workers < 1:
        raise ConfigError("workers", "need at least one worker")
    if cfg.seed < 0:
        raise ConfigError("seed", "must be non-negative")
    for key in ("sweep_h", "sweep_dt", "fine_h", "coarse_h"):
        if not getattr(cfg, key) > 0:
            raise ConfigError(key, "must be positive")
    return cfg


def label_run(curves_multi: DeviationCurves | None, curves_single: DeviationCurves | None,
              window=SWEEP_WINDOW, failed: bool = False) -> tuple[int, int]:
    """Outcome label and the number of window samples violating the ordering.

    -1: the run failed. 0: the multi-Dirac L2 deviation is strictly below
    the single-Dirac one at every output time inside the open window.
    1: anything else (the ordering is violated at least once).
    """
    if failed or curves_multi is None or curves_single is None:
        return -1, 0
    t = curves_multi.times
    if len(t) != len(curves_single.times) or not np.allclose(t, curves_single.times):
        raise ConfigError("output_times", "curves are sampled at different times")
    w = (t > window[0]) & (t < window[1])
    if not np.any(w):
        raise ConfigError("output_times", f"no output time inside {window}")
    a, b = curves_multi.l2_dev[w], curves_single.l2_dev[w]
    violations = int(np.count_nonzero(~(a < b)))
    return (0 if violations == 0 else 1), violations


def _compare_variants(sc: Scenario):
    """Exclusion, multi-Dirac Green and single-Dirac runs with deviation curves."""
    S = run(sc.replace(variant=Variant.EXCLUSION))
    G = run(sc.replace(variant=Variant.POINT_GREEN))
    P1 = run(sc.replace(variant=Variant.POINT_SINGLE))
    return compare_runs(S, G), compare_runs(S, P1)


def run_scenario(cfg: Config, out_dir=None) -> int:
    """Run every configured variant and write results under ``out_dir``.

    Each variant gets a directory with ``metadata.txt``, field snapshots
    and ``trace.csv``; every point-source variant is compared with the
    exclusion run in ``compare_<variant>.csv``. Returns an exit status.
    """
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    sc = cfg.scenario
    variants = list(dict.fromkeys(cfg.variants))
    if any(v != Variant.EXCLUSION for v in variants) and Variant.EXCLUSION in variants:
        variants.remove(Variant.EXCLUSION)
        variants.insert(0, Variant.EXCLUSION)
    status = EXIT_OK
    ref = None
    for v in variants:
        vsc = sc.replace(variant=v)
        vdir = out / v.value
        try:
            res = run(vsc)
        except NumericalError as exc:
            log.error("%s failed: %s", v.value, exc)
            meta = vsc.metadata() | {"status": "failed", "label": -1, "error": str(exc).replace("\n", " ")}
            write_metadata(vdir / "metadata.txt", meta)
            status = EXIT_NUMERICAL
            continue
        curves = compare_runs(ref, res) if (ref is not None and v != Variant.EXCLUSION) else None
        res.save(vdir, v.value, curves, fields=cfg.write_fields)
        if v == Variant.EXCLUSION:
            ref = res
        elif curves is not None:
            curves.to_csv(out / f"compare_{v.value}.csv")
    return status


@dataclass(frozen=True)
class SweepSample:
    sample: int
    log10_D: float
    log10_rho: float
    seed: int
    label: int
    violations: int = 0


def sweep_draw(seed: int, index: int) -> tuple[float, float]:
    """``(log10 D, log10 rho)`` for one sample from a counter-based generator.

    The stream depends only on ``(seed, index)``, not on execution order.
    """
    rng = np.random.Generator(np.random.Philox(key=[int(seed), int(index)]))
    return float(rng.uniform(-3.0, 1.5)), float(rng.uniform(-3.0, 0.0))


def _sweep_one(args) -> SweepSample:
    base, seed, index = args
    lD, lr = sweep_draw(seed, index)
    sc = base.replace(D=10.0 ** lD, rho=10.0 ** lr)
    try:
        multi, single = _compare_variants(sc)
        label, violations = label_run(multi, single)
    except (CellFluxError, FloatingPointError) as exc:
        log.info("sample %d failed: %s", index, exc)
        label, violations = -1, 0
    return SweepSample(index, lD, lr, seed, label, violations)


def mc_sweep(n: int, samples: int, seed: int, workers: int = 1, h: float = 0.2, dt: float = 0.08,
             base: Scenario | None = None) -> list[SweepSample]:
    """Monte Carlo over ``log10 D ~ U(-3, 1.5)``, ``log10 rho ~ U(-3, 0)``.

    Every sample runs the exclusion, multi-Dirac Green and single-Dirac
    models at ``r = 0.01`` and is labelled by :func:`label_run`. Failures
    become label -1. Rows come back in sample order.
    """
    if samples < 1:
        raise ConfigError("samples", "need at least one sample")
    base = (base or Scenario()).replace(n=n, r=0.01, h=h, dt=dt, output_times=None)
    jobs = [(base, seed, i) for i in range(samples)]
    if workers <= 1:
        return [_sweep_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_sweep_one, jobs))


def write_sweep_csv(rows, path) -> Path:
    return write_csv(path, {
        "sample": [r.sample for r in rows],
        "log10_D": [r.log10_D for r in rows],
        "log10_rho": [r.log10_rho for r in rows],
        "label": [r.label for r in rows],
        "violations": [r.violations for r in rows],
    })


def mesh_study(base: Scenario | None = None, fine_h: float = 0.09577, coarse_h: float = 0.28773,
               variants=(Variant.POINT_GREEN, Variant.POINT_DIRECT)) -> dict[str, np.ndarray]:
    """Relative errors of point-source runs on a fine and a coarse mesh.

    The reference is the exclusion solution on the fine mesh. Returns
    columns ``t`` and ``<variant>_<fine|coarse>_<l2|h1>``.
    """
    base = base or Scenario()
    ref = run(base.replace(variant=Variant.EXCLUSION, h=fine_h))
    cols = {"t": ref.times}
    for v in variants:
        for tag, h in (("fine", fine_h), ("coarse", coarse_h)):
            res = run(base.replace(variant=v, h=h))
            for kind in ("L2", "H1"):
                cols[f"{v.value}_{tag}_{kind.lower()}"] = relative_error(ref, res, kind)
    return cols


def load_run(directory) -> RunResult:
    """Read a run written by :meth:`RunResult.save` back from disk.

    Meshes are rebuilt from the scenario (construction is deterministic)
    and checked against the node coordinates in the snapshots. Point-source
    boundary fluxes are recomputed from the fields; mass traces only cover
    the output times.
    """
    directory = Path(directory)
    meta = read_metadata(directory / "metadata.txt")
    if meta.get("status") == "failed":
        raise NumericalError(f"run in {directory} failed: {meta.get('error', '')}")
    kw = {k: _scenario_value(k, v) for k, v in meta.items() if k in _SCENARIO_KEYS and k != "variant"}
    sc = Scenario(variant=meta.get("variant", "Exclusion"), **kw)
    full, ann = scenario_meshes(sc)
    mesh = ann if sc.variant == Variant.EXCLUSION else full
    run_id = sc.variant.value
    snaps, fluxes = [], []
    for t in sc.output_times:
        path = directory / field_filename(run_id, t)
        if not path.exists():
            raise ConfigError("output_times", f"missing snapshot {path.name}")
        xy, values = read_field_csv(path)
        if xy.shape != mesh.nodes.shape or not np.allclose(xy, mesh.nodes, rtol=0, atol=1e-12):
            raise ConfigError("h", f"snapshot {path.name} does not match the rebuilt mesh")
        f = ScalarField(mesh, values, t)
        snaps.append(f)
        if sc.variant == Variant.EXCLUSION:
            arcs = boundary_arcs(ann)
            fluxes.append(FluxProfile(arcs.theta, flux_density(sc.flux_spec, arcs.theta), t, arcs.length))
        else:
            fluxes.append(boundary_flux_postprocess(full, f, sc.D))
    trace = read_csv(directory / "trace.csv")
    return RunResult(sc, mesh, snaps, fluxes, trace["mass"], np.full(len(snaps), np.nan),
                     {"loaded_from": str(directory)})
