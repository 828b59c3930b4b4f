"""Command line interface: ``cellflux <subcommand> [flags]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, NumericalError
from .experiments import (EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, Config, load_run, mc_sweep, mesh_study,
                          parse_config, run_scenario, write_sweep_csv)
from .intensities import (approx_flux, approx_flux_hat, approx_flux_steady, dirac_layout, flux_density,
                          intensity_general)
from .io import write_csv, write_mesh
from .metrics import deviation_curves
from .models import scenario_meshes

log = logging.getLogger("cellflux")


def _config(args) -> Config:
    if args.config is None:
        return parse_config("")
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("config", str(exc)) from None
    return parse_config(text)


def _out(args, cfg: Config) -> Path:
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_mesh(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    full, ann = scenario_meshes(cfg.scenario)
    write_mesh(full, out / "full.mesh")
    write_mesh(ann, out / "annulus.mesh")
    print(f"full: {full.n_nodes} nodes, {full.n_triangles} triangles, mean edge {full.mean_edge_length():.4f}")
    print(f"annulus: {ann.n_nodes} nodes, {ann.n_triangles} triangles")
    return EXIT_OK


def cmd_flux(args) -> int:
    cfg = _config(args)
    sc = cfg.scenario
    out = _out(args, cfg)
    spec = sc.flux_spec
    theta = 2 * np.pi * np.arange(args.samples) / args.samples
    times = args.t if args.t else [sc.T]
    if spec.n in (1, 2):
        steady = approx_flux_steady(spec, theta, sc.R, sc.r, sc.phi0, spec.A)
    else:
        steady = np.full(len(theta), np.nan)  # no closed-form limit beyond n = 2
    for t in times:
        if spec.n in (1, 2):
            hat = approx_flux_hat(spec, theta, t, sc.R, sc.r, sc.D, sc.phi0, spec.A)
        else:
            layout = dirac_layout(spec, sc.center, sc.R, sc.r, "general")
            phi = intensity_general(spec, layout, t, sc.D)
            hat = approx_flux(theta, t, layout.points, phi, sc.center, sc.R, sc.D)
        cols = {"theta": theta, "phi_prescribed": flux_density(spec, theta), "phi_hat_t": hat,
                "phi_hat_steady": steady}
        path = write_csv(out / f"flux_n{spec.n}_t{t:.4}.csv", cols)
        print(path)
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    status = run_scenario(cfg, out)
    print(f"results in {out}")
    return status


def cmd_compare(args) -> int:
    run_s = load_run(args.run_s)
    run_p = load_run(args.run_p)
    curves = deviation_curves(run_s, run_p)
    out = Path(args.out) if args.out else Path("compare.csv")
    if out.suffix != ".csv":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "compare.csv"
    curves.to_csv(out)
    print(out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    seed = cfg.seed if args.seed is None else args.seed
    workers = cfg.workers if args.workers is None else args.workers
    samples = cfg.samples if args.samples is None else args.samples
    rows = mc_sweep(args.n, samples, seed, workers, cfg.sweep_h, cfg.sweep_dt, base=cfg.scenario)
    path = write_sweep_csv(rows, out / f"sweep_n{args.n}_seed{seed}.csv")
    counts = {lab: sum(r.label == lab for r in rows) for lab in sorted({r.label for r in rows})}
    print(path, counts)
    return EXIT_OK


def cmd_mesh_study(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    cols = mesh_study(cfg.scenario, cfg.fine_h, cfg.coarse_h)
    path = write_csv(out / "mesh_study.csv", cols)
    print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cellflux", description="Secretion by a circular cell: exclusion vs point sources.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=False):
        sp.add_argument("--config", type=str, default=None, help="key = value configuration file")
        sp.add_argument("--out", type=str, default=None, help="output directory")
        if seed:
            sp.add_argument("--seed", type=int, default=None)
            sp.add_argument("--workers", type=int, default=None)

    sp = sub.add_parser("mesh", help="write the full and extracellular meshes")
    common(sp)
    sp.set_defaults(func=cmd_mesh)

    sp = sub.add_parser("flux", help="prescribed and approximate boundary flux as CSV")
    common(sp)
    sp.add_argument("--t", type=float, nargs="*", default=None, help="times (default: T)")
    sp.add_argument("--samples", type=int, default=512, help="number of angles")
    sp.set_defaults(func=cmd_flux)

    sp = sub.add_parser("run", help="run the configured variants")
    common(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("compare", help="deviation curves between two saved runs")
    sp.add_argument("run_s", help="exclusion run directory")
    sp.add_argument("run_p", help="point-source run directory")
    sp.add_argument("--out", type=str, default=None, help="CSV file or directory")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("sweep", help="Monte Carlo sweep over D and rho")
    common(sp, seed=True)
    sp.add_argument("--n", type=int, default=1, help="flux mode")
    sp.add_argument("--samples", type=int, default=None)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("mesh-study", help="fine/coarse relative errors")
    common(sp)
    sp.set_defaults(func=cmd_mesh_study)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DomainError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
