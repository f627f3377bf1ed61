"""Command-line front end: model, synthesize, simulate, verify.

Exit status: 0 on success, 2 when ``verify`` finds a failed check, 1 on
any error (bad input, infeasible synthesis, diverging simulation).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .bench import get_fixture, get_system, parse_value, parse_vector
from .errors import DivergenceError, IsmpcError, NoFeasibleOffsets, SynthesisFailed
from .palm import ErrorBounds, PartitionSpec, PwaModel, build_pwa, estimate_error_bounds
from .sim import SimConfig, simulate_practical
from .synthesis import (
    Attempt,
    ControllerDesign,
    DesignOptions,
    GridSpec,
    default_gamma,
    default_grid,
    design_controller,
    sample_offsets,
    solve_surface,
)
from .verify import verify_design

EXIT_OK, EXIT_ERROR, EXIT_VERIFY = 0, 1, 2


class CliError(Exception):
    pass


# -- parsing helpers -------------------------------------------------------------


def load_json(path):
    """Read a JSON file; syntax errors are reported as ``file:line:col: msg``."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(f"{path}: {exc.strerror or exc}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None


def _from_json(path, kind, build):
    data = load_json(path)
    if not isinstance(data, dict):
        raise CliError(f"{path}:1:1: expected a JSON object holding a {kind}")
    try:
        return build(data)
    except KeyError as exc:
        raise CliError(f"{path}: {kind} is missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError, IsmpcError) as exc:
        raise CliError(f"{path}: invalid {kind}: {exc}") from None


def load_model(path) -> PwaModel:
    return _from_json(path, "PWA model", PwaModel.from_dict)


def load_design(path) -> ControllerDesign:
    return _from_json(path, "controller", ControllerDesign.from_dict)


def parse_params(items):
    out = {}
    for item in items or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise CliError(f"parameter {item!r} must look like name=value")
        out[key.strip()] = parse_value(val)
    return out


def parse_partition(text, dim, n):
    """``AXIS:c0,c1,...`` with AXIS one of ``x1..xn``, ``u1..um`` or a
    bracketed direction ``[t1,...,tN]``; or ``@file.json`` holding
    ``{"theta": [...], "centers": [...]}``.  Centers accept ``deg``.
    """
    if text.startswith("@"):
        d = load_json(text[1:])
        try:
            return PartitionSpec(d["theta"], [parse_value(c) for c in d["centers"]], d.get("edges"))
        except KeyError as exc:
            raise CliError(f"{text[1:]}: partition is missing field {exc.args[0]!r}") from None
    axis, sep, centers = text.rpartition(":")
    if not sep:
        raise CliError(f"partition {text!r} must look like x1:0,60deg,-60deg")
    axis = axis.strip()
    if axis.startswith("["):
        theta = parse_vector(axis)
    else:
        if len(axis) < 2 or axis[0] not in "xu" or not axis[1:].isdigit():
            raise CliError(f"unknown premise axis {axis!r}")
        k = int(axis[1:]) - 1 + (n if axis[0] == "u" else 0)
        if not 0 <= k < dim:
            raise CliError(f"premise axis {axis!r} is out of range")
        theta = np.zeros(dim)
        theta[k] = 1.0
    if theta.shape != (dim,):
        raise CliError(f"premise direction needs {dim} entries")
    return PartitionSpec(theta, list(parse_vector(centers)))


def parse_grid(text, model):
    """``R[:PPA[:MAX]]``: offsets in ``[-R, R]``, PPA points per axis, MAX LMI solves."""
    parts = text.split(":")
    try:
        r = float(parts[0])
        ppa = int(parts[1]) if len(parts) > 1 else 5
        top = int(parts[2]) if len(parts) > 2 else 64
    except ValueError:
        raise CliError(f"grid {text!r} must look like R[:PPA[:MAX]]") from None
    if not r > 0 or ppa < 1 or top < 1:
        raise CliError("grid radius, points per axis and budget must be positive")
    return GridSpec([(-r, r)] * (model.l * model.m), ppa, max_points=top)


def _write(path, text):
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise CliError(f"{path}: {exc.strerror or exc}") from None


# -- subcommands -----------------------------------------------------------------


def cmd_model(args):
    params = parse_params(args.param)
    if args.published:
        if args.system != "pendulum":
            raise CliError("--published is only available for the pendulum")
        model = get_fixture("pendulum", samples_per_region=args.samples, seed=args.seed, **params).model
    else:
        system = get_system(args.system, **params)
        part = parse_partition(args.partition, system.dim, system.n)
        model = build_pwa(system, part)
        if not args.no_bounds:
            model.bounds = estimate_error_bounds(system, model, args.samples, seed=args.seed)
    _write(args.output, model.dumps() + "\n")
    b = model.bounds
    print(f"{model.system}: {model.l + 1} regions, eps_f0={b.eps_f0:.4g} eps_f={b.eps_f:.4g} eps_g={b.eps_g:.4g}")
    return EXIT_OK


def _partition_of(model):
    theta = model.regions[0].theta
    centers = [float(theta @ s.op_point) for s in model.submodels]
    centers[0] = 0.0
    return PartitionSpec(theta, centers)


def cmd_synthesize(args):
    model = load_model(args.model)
    grid = parse_grid(args.grid, model) if args.grid else None
    if args.refine is not None:
        system = get_system(model.system, **parse_params(args.param))
        opts = DesignOptions(bounds=model.bounds if args.keep_bounds else None, grid=grid, l_max=args.refine,
                             gamma=args.gamma, tol=args.tol, seed=args.seed)
        design, model = design_controller(system, _partition_of(model), opts)
    else:
        try:
            nominal = sample_offsets(model, grid or default_grid(model), tol=args.tol, seed=args.seed)
        except NoFeasibleOffsets as exc:
            raise SynthesisFailed("nominal design failed", [Attempt(model.l, "nominal", str(exc), model.bounds)])
        surface, sol = solve_surface(model, nominal, model.bounds, tol=args.tol, seed=args.seed)
        if surface is None:
            raise SynthesisFailed("surface design failed", [
                Attempt(model.l, "surface", f"{sol.status}: {sol.message}", model.bounds, sol.margin)])
        gamma = args.gamma if args.gamma is not None else default_gamma(model, surface)
        design = ControllerDesign.from_parts(nominal, surface, model.bounds, gamma, system=model.system, model=model)
    _write(args.output, design.dumps() + "\n")
    print(f"controller written to {args.output}: gamma={design.gamma:.6g}, regions={len(design.K)}")
    return EXIT_OK


def cmd_simulate(args):
    params = parse_params(args.param)
    fixture = get_fixture(args.fixture, **params) if args.fixture else None
    if args.controller:
        design = load_design(args.controller)
        if design.model is None:
            raise CliError(f"{args.controller}: controller carries no PWA model")
    elif fixture is not None:
        design = fixture.design
    else:
        raise CliError("give a controller file, --fixture, or both")
    if fixture is not None:
        system, base = fixture.system, fixture.config
    else:
        system, base = get_system(design.model.system or design.system, **params), SimConfig()
    config = SimConfig(
        h=args.h if args.h is not None else base.h,
        T=args.T if args.T is not None else base.T,
        sigma=args.sigma if args.sigma is not None else base.sigma,
        record_stride=args.stride,
    )
    if args.x0 is not None:
        x0 = parse_vector(args.x0)
    elif fixture is not None:
        x0 = fixture.x0[: system.n]
    else:
        raise CliError("--x0 is required without --fixture")
    if x0.shape != (system.n,):
        raise CliError(f"--x0 needs {system.n} entries, got {x0.size}")
    status = EXIT_OK
    try:
        traj = simulate_practical(system, design, config, x0)
    except DivergenceError as exc:
        traj = exc.trajectory
        print(f"error: {exc}; partial trajectory written", file=sys.stderr)
        status = EXIT_ERROR
    traj.to_csv(args.output)
    if args.plot_script:
        title = args.fixture or design.system or "closed loop"
        _write(args.plot_script, traj.plot_script(Path(args.output).name, title))
    if traj.any_exit:
        k = int(np.argmax(traj.domain_exit))
        print(f"warning: state left the model domain at t = {traj.t[k]:.6g}", file=sys.stderr)
    if status == EXIT_OK:
        print(f"{len(traj.t)} samples to {args.output}; final |x| = {np.linalg.norm(traj.x[-1]):.4g}, "
              f"final |s| = {np.linalg.norm(traj.s[-1]):.4g}")
    return status


def cmd_verify(args):
    design = load_design(args.controller)
    model = load_model(args.model)
    report = verify_design(design, model, runs=args.runs, seed=args.seed)
    print(report.to_text())
    return EXIT_OK if report.passed else EXIT_VERIFY


# -- entry point -----------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="ismpc", description="Integral sliding-mode parallel control toolkit")
    parser.add_argument("--seed", type=int, default=0, help="seed for every stochastic step")
    parser.add_argument("-v", "--verbose", action="store_true", help="log synthesis progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("model", help="build a PWA model of a built-in plant")
    p.add_argument("system", help="chua, pendulum or test<seed> (randomized stable plant)")
    p.add_argument("partition", nargs="?", default="x1:0",
                   help="premise axis and operating points, e.g. x1:0,60deg,78deg,-60deg,-78deg")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--param", action="append", help="plant parameter name=value (repeatable)")
    p.add_argument("--samples", type=int, default=1024, help="samples per region for the error bounds")
    p.add_argument("--no-bounds", action="store_true", help="leave the error bounds at zero")
    p.add_argument("--published", action="store_true", help="pendulum only: use the printed submodels")
    p.set_defaults(func=cmd_model)

    p = sub.add_parser("synthesize", help="offsets, gains and surface for a model")
    p.add_argument("model")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--gamma", type=float, help="reaching gain (default from the bounds)")
    p.add_argument("--grid", help="offset search R[:PPA[:MAX]]")
    p.add_argument("--tol", type=float, default=1e-7, help="required LMI margin")
    p.add_argument("--refine", type=int, metavar="L_MAX",
                   help="re-partition the built-in plant up to L_MAX extra regions on failure")
    p.add_argument("--keep-bounds", action="store_true", help="with --refine, keep the model's bounds")
    p.add_argument("--param", action="append", help="plant parameter for --refine")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("simulate", help="closed-loop simulation to CSV")
    p.add_argument("controller", nargs="?")
    p.add_argument("--fixture", choices=["chua", "pendulum"])
    p.add_argument("--x0", help="initial state, e.g. '82deg,0'")
    p.add_argument("--sigma", type=float)
    p.add_argument("--h", type=float)
    p.add_argument("--T", type=float)
    p.add_argument("--stride", type=int, default=1, help="keep every k-th step")
    p.add_argument("--param", action="append", help="plant parameter name=value (repeatable)")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--plot-script", help="write a gnuplot script for the CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="re-check a controller against its model")
    p.add_argument("controller")
    p.add_argument("model")
    p.add_argument("--runs", type=int, default=20, help="nominal simulations for the descent check")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except SynthesisFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        for a in exc.log or []:
            print(f"  {a}", file=sys.stderr)
        return EXIT_ERROR
    except (CliError, IsmpcError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
