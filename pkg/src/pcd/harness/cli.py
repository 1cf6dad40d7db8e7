"""Command line entry point ``pcd``.

Exit codes: 0 success, 1 failed assertion or numerical failure, 2 bad
configuration or arguments.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from importlib import resources

import numpy as np

from .. import gauss_ou, lattice, lp_besov, renorm, solver
from ..errors import ConfigError, PCDError
from ..gauss_ou import STATIONARY, OUSampler
from ..lattice import SpectralField
from . import experiments
from .config import ExperimentConfig, load_config, parse_config
from .report import Table, write_outputs

OK, FAILED, BAD_CONFIG = 0, 1, 2

_SCHEMAS = {
    "sample-ou": "ou_stats.csv: epsilon,t,mean_square,sup  (plus ou_<i>.pcd trajectories)",
    "renorm-constants": "constants.csv: epsilon,c1,c2_plain,c2_block,c_combined (c_combined uses c2_block)",
    "phi-eps": "phi.csv: epsilon,t,phi",
    "build-rough": "rough.csv: epsilon,component,exponent,sup_norm",
    "solve": "solution.csv: t,mean,l2,sup; picard.csv: iteration,distance,ratio (paracontrolled only); u.pcd",
    "verify": "verify.csv: check,passed,detail; exponents.csv: quantity,fitted,target,tolerance,passed",
    "converge": "cauchy.csv: seed,epsilon,c1,c2,d_<component>...,d_rough,d_u,sup_u_T,status; cauchy_summary.csv",
    "diverge": "constants.csv: epsilon,c1,eps_c1,c2,delta_c2; resonant.csv: epsilon,c2_plus_phi,raw_mean,raw_se,subtracted_mean,subtracted_se",
}


def shipped_config(name: str) -> ExperimentConfig:
    text = resources.files("pcd.harness").joinpath("configs", f"{name.replace('-', '_')}.ini").read_text()
    return parse_config(text, f"<shipped {name}>")


def _threads(args) -> None:
    n = args.threads
    if n is None:
        env = os.environ.get("PCD_THREADS")
        if env:
            try:
                n = int(env)
            except ValueError as exc:
                raise ConfigError(f"PCD_THREADS is not an integer: {env!r}") from exc
    if n is not None:
        if n < 1:
            raise ConfigError("thread count must be >= 1")
        lattice.set_threads(n)


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else shipped_config(args.command)
    changes = {}
    if args.seed is not None:
        changes["seeds"] = (args.seed,)
    if args.out is not None:
        changes["out"] = args.out
    return cfg.replace(**changes) if changes else cfg


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _u0(cfg: ExperimentConfig, amplitude: float) -> SpectralField:
    spec = cfg.lattice()
    if amplitude == 0:
        return SpectralField.zeros(spec)
    return SpectralField.from_modes(spec, {(1,) + (0,) * (spec.dim - 1): amplitude / 2})


def _constants(cfg: ExperimentConfig, eps: float):
    if not cfg.renormalize:
        return cfg.a, cfg.b
    spec, f = cfg.lattice(), cfg.mollifier()
    return renorm.compute_c1(eps, f, dim=spec.dim, lattice=spec), renorm.compute_c2(eps, f, dim=spec.dim, lattice=spec)


def _stats_rows(traj, extra=()):
    spec = traj.spec
    for t, d in zip(traj.times, traj.data):
        grid = lattice.to_grid(d, spec)
        yield (*extra, float(t), float(np.mean(grid)), float(np.sqrt(np.mean(grid**2))), float(np.max(np.abs(grid))))


# subcommands -----------------------------------------------------------------------------


def cmd_sample_ou(cfg, args):
    spec, f = cfg.lattice(), cfg.mollifier()
    stride = experiments._stride(cfg)
    table = Table("ou_stats", ("epsilon", "t", "mean_square", "sup"))
    for i, eps in enumerate(cfg.epsilons):
        sampler = OUSampler(spec, STATIONARY, eps, seed=cfg.seeds[0], profile=f)
        X = gauss_ou.sample_ou_strided(sampler, 0.0, cfg.T, cfg.n_steps, stride)
        for _, t, mean, l2, sup in _stats_rows(X, (eps,)):
            table.add(eps, t, l2 * l2, sup)
        os.makedirs(cfg.out, exist_ok=True)
        gauss_ou.dump_trajectory(os.path.join(cfg.out, f"ou_{i}.pcd"), X, sampler)
    return [table], True


def _eps_list(cfg, args):
    if not args.epsilon:
        return cfg.epsilons
    if any(not e >= 0 for e in args.epsilon):
        raise ConfigError("--epsilon must be >= 0")
    return tuple(args.epsilon)


def _profile(cfg, args):
    if args.f_support is None:
        return cfg.mollifier()
    try:
        return gauss_ou.MollifierProfile(args.f_support)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_renorm_constants(cfg, args):
    f = _profile(cfg, args)
    spec = cfg.lattice() if args.on_lattice else None
    table = Table("constants", ("epsilon", "c1", "c2_plain", "c2_block", "c_combined"))
    for eps in _eps_list(cfg, args):
        rc = renorm.renorm_constants(eps, f, dim=cfg.dim, lattice=spec)
        plain = renorm.compute_c2(eps, f, dim=cfg.dim, lattice=spec, variant=renorm.PLAIN)
        table.add(eps, rc.c1, plain, rc.c2, rc.c_combined)
    return [table], True


def cmd_phi_eps(cfg, args):
    f = _profile(cfg, args)
    spec = cfg.lattice() if args.on_lattice else None
    times = np.linspace(0.0, cfg.T, cfg.snapshots + 1)
    table = Table("phi", ("epsilon", "t", "phi"))
    for eps in _eps_list(cfg, args):
        cf = renorm.compute_phi_eps(times, eps, f, dim=cfg.dim, lattice=spec)
        for t, v in zip(cf.times, cf.samples):
            table.add(eps, float(t), float(v))
    return [table], True


def cmd_build_rough(cfg, args):
    spec, f, K = cfg.lattice(), cfg.mollifier(), cfg.exponents()
    part = lp_besov.build_partition(spec)
    stride = experiments._stride(cfg)
    table = Table("rough", ("epsilon", "component", "exponent", "sup_norm"))
    for eps in cfg.epsilons:
        a, b = _constants(cfg, eps)
        sampler = OUSampler(spec, STATIONARY, eps, seed=cfg.seeds[0], profile=f)
        X = gauss_ou.sample_ou_strided(sampler, 0.0, cfg.T, cfg.n_steps, stride)
        R = renorm.build_rough_distribution(X, a, b, renorm.compute_phi_eps(X.times, eps, f, dim=spec.dim, lattice=spec), part, K)
        for name, comp, beta in zip(renorm.COMPONENT_NAMES, R.fields(), K.space_exponents()):
            table.add(eps, name, beta, float(np.max(lp_besov.holder_norms(comp.data, beta, part))))
        table.add(eps, "phi", 0.0, float(np.max(np.abs(R.phi.samples))))
    return [table], True


def cmd_solve(cfg, args):
    spec, f = cfg.lattice(), cfg.mollifier()
    eps = cfg.epsilons[0]
    a, b = _constants(cfg, eps)
    u0 = _u0(cfg, args.u0_amplitude)
    sampler = OUSampler(spec, STATIONARY, eps, seed=cfg.seeds[0], profile=f)
    dump = args.dump_every or experiments._stride(cfg)
    if cfg.n_steps % dump:
        raise ConfigError("--dump-every must divide T/dt")
    tables = []
    ok = True
    if args.mode == "direct":
        scfg = solver.SolveConfig(T=cfg.T, dt=cfg.dt, z=cfg.z, L=cfg.weights(), record_every=dump)
        u, status = solver.solve_direct(u0, sampler, a, b, scfg, return_status=True)
        ok = status.status == solver.CONVERGED
    else:
        part = lp_besov.build_partition(spec)
        X = gauss_ou.sample_ou(sampler, 0.0, cfg.T, cfg.n_steps)
        XX = renorm.build_rough_distribution(X, a, b, renorm.compute_phi_eps(X.times, eps, f, dim=spec.dim, lattice=spec), part, cfg.exponents())
        scfg = solver.SolveConfig(T=cfg.T, dt=cfg.dt, z=cfg.z, L=cfg.weights(), max_picard=args.max_picard)
        Phi, status = solver.picard_solve(u0, XX, scfg, part)
        full = solver.solution_field(Phi, XX)
        step = dump if (len(full.times) - 1) % dump == 0 else 1
        u = lattice.TrajectoryField(spec, full.t0, full.t1, full.data[::step])
        pic = Table("picard", ("iteration", "distance", "ratio"))
        ratios = [None] + list(status.ratios)
        for i, d in enumerate(status.distances):
            pic.add(i + 1, d, ratios[i] if i < len(ratios) else None)
        tables.append(pic)
        _log(f"picard: {status.status} at T={status.T:.6g} after {status.iterations} iterations")
    sol = Table("solution", ("t", "mean", "l2", "sup"))
    for row in _stats_rows(u):
        sol.add(*row)
    tables.insert(0, sol)
    os.makedirs(cfg.out, exist_ok=True)
    lattice.write_trajectory(os.path.join(cfg.out, "u.pcd"), u, {"mode": args.mode, "epsilon": eps, "seed": int(cfg.seeds[0])})
    return tables, ok


def cmd_verify(cfg, args):
    rep = experiments.run_verify(cfg, inject=tuple(args.inject or ()))
    for c in rep.checks:
        _log(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.detail}")
    if not rep.passed:
        _log("failed checks: " + ", ".join(rep.failures))
    return rep.tables(), rep.passed


def cmd_converge(cfg, args):
    rep = experiments.run_convergence(cfg, workers=args.workers, rough=not args.skip_rough, log=_log)
    _log(f"u monotone in {rep.u_monotone}/{rep.n_seeds} seeds, rough metric in {rep.rough_monotone}/{rep.n_seeds} (need {rep.required})")
    return rep.tables(), rep.passed


def cmd_diverge(cfg, args):
    rep = experiments.run_divergence_demo(cfg, log=_log)
    _log(f"eps*C1 spread {rep.c1_spread:.4f}, delta C2 spread {rep.c2_spread:.4f}")
    return rep.tables(), rep.passed


_COMMANDS = {
    "sample-ou": cmd_sample_ou,
    "renorm-constants": cmd_renorm_constants,
    "phi-eps": cmd_phi_eps,
    "build-rough": cmd_build_rough,
    "solve": cmd_solve,
    "verify": cmd_verify,
    "converge": cmd_converge,
    "diverge": cmd_diverge,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="sectioned .ini file (default: the shipped example for the subcommand)")
    common.add_argument("--seed", type=int, help="run a single seed instead of the configured list")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, help="FFT worker threads (fallback: PCD_THREADS)")
    common.add_argument("--svg", action="store_true", help="also emit SVG plots derived from the CSV tables")
    parser = argparse.ArgumentParser(prog="pcd", description="Paracontrolled dynamic Phi^4_3 experiments on the 3-torus.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name, parents=[common], epilog="CSV schema: " + _SCHEMAS[name], formatter_class=argparse.RawDescriptionHelpFormatter)
        if name in ("renorm-constants", "phi-eps"):
            p.add_argument("--on-lattice", action="store_true", help="restrict the sums to the configured lattice")
            p.add_argument("--epsilon", type=float, action="append", help="mollification scale (repeatable; overrides the schedule)")
            p.add_argument("--f-support", type=float, help="mollifier support radius (plateau at half of it)")
        if name == "solve":
            p.add_argument("--mode", choices=("direct", "paracontrolled"), default="direct")
            p.add_argument("--dump-every", type=int, default=0, help="record every k-th step (default: T/dt / snapshots)")
            p.add_argument("--u0-amplitude", type=float, default=0.0, help="initial datum A cos(x_1)")
            p.add_argument("--max-picard", type=int, default=12)
        if name == "verify":
            p.add_argument("--inject", action="append", choices=sorted(experiments.BATTERY), help="corrupt the data of a check (negative control)")
        if name == "converge":
            p.add_argument("--workers", type=int, default=1, help="processes over seeds")
            p.add_argument("--skip-rough", action="store_true", help="only the solver column")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    started = time.time()
    try:
        _threads(args)
        cfg = _config(args)
        tables, ok = _COMMANDS[args.command](cfg, args)
        man = write_outputs(cfg.out, cfg, tables, started, svg=args.svg)
    except ConfigError as exc:
        _log(f"configuration error: {exc}")
        return BAD_CONFIG
    except PCDError as exc:
        _log(f"error: {type(exc).__name__}: {exc}")
        return FAILED
    for name in sorted(man.checksums):
        print(f"{os.path.join(cfg.out, name)}  sha256:{man.checksums[name]}")
    return OK if ok else FAILED


if __name__ == "__main__":
    sys.exit(main())
