"""Command-line entry point.

Every subcommand that writes an output directory also writes one
``manifest.json`` recording the command, inputs, resolved parameters, output
hashes, tool version and wall-clock time.  Exit codes: 0 success, 1 invalid
input or failed check, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .asymptotics import AsymptoticsError, analyse, eigenvector_measure, generator_matrix, leading_eigenpair
from .bl_functions import PiecewiseLinearFn
from .dual_solver import MissingKappaError, dual_contraction_check, parse_grid
from .flat_metric import FlatNormError, NormVariant, flat_distance, flat_norm_oracle
from .forward_solver import Checkpoint, SimConfig, SimulationError, Trajectory, simulate, weak_residual
from .io import (
    SchemaError,
    dumps,
    file_digest,
    load_function,
    load_measure,
    load_model,
    write_csv,
    write_json,
)
from .measures import AtomicMeasure
from .model_config import InvalidModelError, lotka_model, validate_assumptions

logger = logging.getLogger("flatpop")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2


class _Run:
    """Collects what goes into the manifest of one output directory."""

    def __init__(self, command: str, out: Path, inputs: dict[str, str], params: dict):
        self.command = command
        self.out = out
        self.inputs = inputs
        self.params = params
        self.started = time.perf_counter()
        out.mkdir(parents=True, exist_ok=True)

    def finish(self) -> Path:
        outputs = {
            str(p.relative_to(self.out)): file_digest(p)
            for p in sorted(self.out.rglob("*"))
            if p.is_file() and p.name != "manifest.json"
        }
        manifest = {
            "command": self.command,
            "inputs": {k: {"path": v, "sha256": file_digest(v)} for k, v in self.inputs.items()},
            "parameters": self.params,
            "outputs": outputs,
            "version": __version__,
            "wall_clock_seconds": time.perf_counter() - self.started,
        }
        return write_json(self.out / "manifest.json", manifest)


def _window(text: str) -> tuple[float, float]:
    try:
        a, b = (float(v) for v in text.split(":"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected start:stop, got {text!r}") from exc
    if b <= a:
        raise argparse.ArgumentTypeError("window stop must exceed start")
    return a, b


def _positive(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


# ---------------------------------------------------------------------------
# trajectory files


def save_trajectory(traj: Trajectory, out: Path, plots: bool = True) -> None:
    cp_dir = out / "checkpoints"
    cp_dir.mkdir(parents=True, exist_ok=True)
    for k, cp in enumerate(traj.checkpoints):
        doc = cp.measure.to_dict()
        doc["t"] = cp.t
        write_json(cp_dir / f"cp_{k:05d}.json", doc)
    rows = [(cp.t, cp.mass, len(cp.measure), cp.error_bound) for cp in traj.checkpoints]
    write_csv(out / "series.csv", ["t", "mass", "atoms", "error_bound"], rows)
    write_json(out / "summary.json", {
        "config": traj.config.to_dict(),
        "model_digest": traj.model_digest,
        "checkpoints": len(traj.checkpoints),
        "t_end": traj.checkpoints[-1].t,
        "final_mass": traj.checkpoints[-1].mass,
        "final_atoms": len(traj.final),
        "error_bound": traj.checkpoints[-1].error_bound,
    })
    if plots:
        from .plotting import plot_csv

        plot_csv(out / "series.csv")


def load_trajectory(path: Path) -> Trajectory:
    import json

    summary = json.loads((path / "summary.json").read_text())
    series = {}
    with open(path / "series.csv") as fh:
        next(fh)
        for line in fh:
            t, _, _, err = line.strip().split(",")
            series[float(t)] = float(err)
    cps = []
    for f in sorted((path / "checkpoints").glob("cp_*.json")):
        mu = load_measure(f)
        t = float(json.loads(f.read_text())["t"])
        cps.append(Checkpoint(t, mu, mu.mass, series.get(t, 0.0)))
    if not cps:
        raise SchemaError(str(path), ["/: trajectory directory has no checkpoints"])
    return Trajectory(cps, SimConfig(**summary["config"]), summary.get("model_digest", ""))


# ---------------------------------------------------------------------------
# subcommands


def cmd_validate(args) -> int:
    report = validate_assumptions(load_model(args.model))
    sys.stdout.write(dumps(report.to_dict()))
    return EXIT_OK if report.ok else EXIT_INVALID


def _sim_config(args) -> SimConfig:
    return SimConfig(
        dt=args.dt,
        t_end=args.t_end,
        splitting=args.splitting,
        ode_substeps=args.ode_substeps,
        coalesce_radius=args.coalesce,
        prune=args.prune,
        coalesce_every=args.coalesce_every,
        checkpoint_every=args.checkpoint_every,
        max_atoms=args.max_atoms,
    )


def cmd_simulate(args) -> int:
    ing = load_model(args.model).validated()
    mu0 = load_measure(args.init)
    cfg = _sim_config(args)
    out = Path(args.out)
    run = _Run("simulate", out, {"model": args.model, "init": args.init}, cfg.to_dict())
    traj = simulate(mu0, ing, cfg)
    save_trajectory(traj, out, plots=not args.no_plots)
    run.finish()
    print(f"t={traj.checkpoints[-1].t:.6g} mass={traj.checkpoints[-1].mass:.17g} atoms={len(traj.final)}")
    return EXIT_OK


def cmd_distance(args) -> int:
    a, b = load_measure(args.a), load_measure(args.b)
    if args.oracle is not None:
        value = flat_norm_oracle(a - b, args.variant, h=args.oracle)
    else:
        value = flat_distance(a, b, args.variant)
    print(repr(float(value)))
    return EXIT_OK


def cmd_dualcheck(args) -> int:
    ing = load_model(args.model).validated()
    phi = load_function(args.phi)
    norm_t, bound, passed = dual_contraction_check(phi, ing, args.t, parse_grid(args.grid))
    print(f"norm_t={norm_t:.17g}")
    print(f"bound={bound:.17g}")
    print("PASS" if passed else "FAIL")
    return EXIT_OK if passed else EXIT_INVALID


def cmd_asymptotics(args) -> int:
    traj = load_trajectory(Path(args.traj))
    target = Path(args.out) if args.out else Path(args.traj) / "asymptotics"
    params = {"window": list(args.window), "tail": args.tail, "lambda_tol": args.lambda_tol}
    run = _Run("asymptotics", target, {"series": str(Path(args.traj) / "series.csv")}, params)
    est, series = analyse(traj, args.window, args.tail, lambda_tol=args.lambda_tol)
    write_json(target / "spectral.json", est.to_dict())
    write_json(target / "profile.json", est.profile.to_dict())
    tail = traj.checkpoints[-args.tail:]
    aeg = est.diagnostics["tail_distances"] or [float("nan")] * len(series)
    rows = [(cp.t, float(d), float(g)) for cp, d, g in zip(tail[:-1], series, aeg)]
    write_csv(target / "convergence.csv", ["t", "distance", "aeg_distance"], rows)
    if not args.no_plots and rows:
        from .plotting import plot_csv

        plot_csv(target / "convergence.csv")
    run.finish()
    print(f"lambda_star={est.lambda_star:.17g}")
    print(f"epsilon={est.epsilon:.17g}")
    print(f"classification={est.classification.value}")
    return EXIT_OK


def cmd_spectrum(args) -> int:
    ing = load_model(args.model).validated()
    G = generator_matrix(ing, args.xmax, args.cells)
    lam, v = leading_eigenpair(G, tol=args.tol)
    print(f"lambda_h={lam:.17g}")
    if args.out:
        out = Path(args.out)
        run = _Run("spectrum", out, {"model": args.model}, {"xmax": args.xmax, "cells": args.cells, "tol": args.tol})
        write_csv(out / "eigenvector.csv", ["x", "mass"], [(float(x), float(m)) for x, m in zip(G.centers, v)])
        write_json(out / "spectrum.json", {"lambda_h": lam, "h": G.h, "x_max": G.x_max, "cells": G.n})
        write_json(out / "profile.json", eigenvector_measure(G, v).to_dict())
        run.finish()
    return EXIT_OK


def random_tents(rng: np.random.Generator, count: int, x_max: float, lattice: float = 0.1) -> list[PiecewiseLinearFn]:
    """Tent functions with corners on a lattice; used for weak-form checks."""
    tents = []
    cells = max(int(round(x_max / lattice)), 3)
    for _ in range(count):
        width = int(rng.integers(1, max(2, cells // 3)))
        start = int(rng.integers(0, max(1, cells - 2 * width)))
        height = float(rng.uniform(0.5, 1.5))
        a, m, b = (start * lattice, (start + width) * lattice, (start + 2 * width) * lattice)
        if a == 0.0:
            tents.append(PiecewiseLinearFn([0.0, m, b], [0.0, height, 0.0]))
        else:
            tents.append(PiecewiseLinearFn([0.0, a, m, b], [0.0, 0.0, height, 0.0]))
    return tents


def cmd_weakcheck(args) -> int:
    ing = load_model(args.model).validated()
    traj = load_trajectory(Path(args.traj))
    if args.phi:
        phis = [load_function(p) for p in args.phi]
    else:
        reach = float(traj.final.locations[-1]) if len(traj.final) else 1.0
        phis = [PiecewiseLinearFn.constant(1.0)] + random_tents(np.random.default_rng(args.seed), args.random_tents, reach)
    for k, phi in enumerate(phis):
        print(f"phi[{k}] residual={weak_residual(traj, phi, ing):.17g}")
    return EXIT_OK


def cmd_plot(args) -> int:
    from .plotting import plot_csv

    for path in args.csv:
        for svg in plot_csv(path, args.out if len(args.csv) == 1 else None):
            print(svg)
    return EXIT_OK


def cmd_demo(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ing = lotka_model(beta=1.0, mortality=0.5, speed=1.0)
    write_json(out / "model.json", ing.to_dict())
    write_json(out / "init.json", AtomicMeasure.dirac(1.0).to_dict())
    cfg = SimConfig(dt=args.dt, t_end=args.t_end, checkpoint_every=max(1, int(round(1.0 / args.dt))))
    traj_dir = out / "traj"
    run = _Run("demo lotka", traj_dir, {"model": str(out / "model.json"), "init": str(out / "init.json")}, cfg.to_dict())
    traj = simulate(AtomicMeasure.dirac(1.0), ing, cfg)
    save_trajectory(traj, traj_dir, plots=not args.no_plots)
    run.finish()
    t_end = traj.checkpoints[-1].t
    window = (0.4 * t_end, t_end)
    tail = min(len(traj.checkpoints), max(4, int(0.6 * t_end) + 1))
    asym = _Run("demo lotka asymptotics", out / "asymptotics", {"series": str(traj_dir / "series.csv")},
                {"window": list(window), "tail": tail})
    est, series = analyse(traj, window, tail)
    write_json(asym.out / "spectral.json", est.to_dict())
    write_json(asym.out / "profile.json", est.profile.to_dict())
    asym.finish()
    print(f"lambda_star={est.lambda_star:.17g}")
    print(f"classification={est.classification.value}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flatpop", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads for distance batches (overrides FLATPOP_THREADS)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", help="check model assumptions and print the report")
    s.add_argument("--model", required=True)
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("simulate", help="run the particle solver")
    s.add_argument("--model", required=True)
    s.add_argument("--init", required=True)
    s.add_argument("--dt", type=_positive, default=0.01)
    s.add_argument("--t-end", type=float, default=1.0)
    s.add_argument("--splitting", choices=["lie", "strang"], default="strang")
    s.add_argument("--ode-substeps", type=int, default=4)
    s.add_argument("--coalesce", type=float, default=0.0, help="merge radius")
    s.add_argument("--prune", type=float, default=0.0, help="drop atoms lighter than this")
    s.add_argument("--coalesce-every", type=int, default=1)
    s.add_argument("--checkpoint-every", type=int, default=1)
    s.add_argument("--max-atoms", type=int, default=2_000_000)
    s.add_argument("--out", required=True)
    s.add_argument("--no-plots", action="store_true")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("distance", help="flat distance between two measures")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--variant", choices=["paper", "classic"], default="paper")
    s.add_argument("--oracle", type=_positive, default=None, metavar="H", help="use the grid LP with step H")
    s.set_defaults(func=cmd_distance)

    s = sub.add_parser("dualcheck", help="contraction check of the backward evolution")
    s.add_argument("--model", required=True)
    s.add_argument("--phi", required=True)
    s.add_argument("--t", type=float, required=True)
    s.add_argument("--grid", default="0:20:0.01", help="start:stop:step")
    s.set_defaults(func=cmd_dualcheck)

    s = sub.add_parser("asymptotics", help="growth rate, profile and convergence fit of a trajectory")
    s.add_argument("--traj", required=True)
    s.add_argument("--window", type=_window, required=True)
    s.add_argument("--tail", type=int, default=8)
    s.add_argument("--lambda-tol", type=float, default=1e-4)
    s.add_argument("--out", default=None, help="output directory (default: TRAJ/asymptotics)")
    s.add_argument("--no-plots", action="store_true")
    s.set_defaults(func=cmd_asymptotics)

    s = sub.add_parser("spectrum", help="leading eigenpair of the finite-volume generator")
    s.add_argument("--model", required=True)
    s.add_argument("--xmax", type=_positive, default=40.0)
    s.add_argument("--cells", type=int, default=2000)
    s.add_argument("--tol", type=_positive, default=1e-10)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_spectrum)

    s = sub.add_parser("weakcheck", help="weak-formulation residual of a trajectory")
    s.add_argument("--traj", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--phi", action="append", default=None, help="test function JSON (repeatable)")
    s.add_argument("--random-tents", type=int, default=2)
    s.add_argument("--seed", type=int, default=0, help="seed for the random test functions")
    s.set_defaults(func=cmd_weakcheck)

    s = sub.add_parser("plot", help="render diagnostics CSV files to SVG")
    s.add_argument("csv", nargs="+")
    s.add_argument("--out", default=None, help="SVG path (single CSV with one data column)")
    s.set_defaults(func=cmd_plot)

    s = sub.add_parser("demo", help="built-in examples")
    s.add_argument("name", choices=["lotka"])
    s.add_argument("--out", default="demo-lotka")
    s.add_argument("--dt", type=_positive, default=0.01)
    s.add_argument("--t-end", type=_positive, default=50.0)
    s.add_argument("--no-plots", action="store_true")
    s.set_defaults(func=cmd_demo)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.threads is not None:
        os.environ["FLATPOP_THREADS"] = str(max(1, args.threads))
    try:
        return args.func(args)
    except (SchemaError, InvalidModelError, MissingKappaError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (SimulationError, FlatNormError, AsymptoticsError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
