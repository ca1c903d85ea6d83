"""Command line entry point: ``nlsrd <subcommand> [flags]``.

Every output file starts with ``# manifest: <hash>`` (CSV) or carries a
``manifest`` key (JSON), and a ``<name>.manifest.json`` sidecar records the
configuration hash, seeds, parameters and output list.  The hash covers
everything that determines the numbers, and nothing else: worker count and
output directory are excluded, so runs are byte-identical across them.

Exit status: 0 success, 1 a validation or check failed, 2 numerical
divergence, 64 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import __version__, attractor, conjugate, model, noise, solver, wiener
from .galerkin import Field, grid_for

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_DIVERGED = 2
EXIT_USAGE = 64

NOISE_CHOICES = ("ou", "mollifier", "diffq", "white", "none")
# keys that never influence the numbers
_NON_SEMANTIC = {"out_dir", "workers", "command", "out", "func"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


# -- output helpers ----------------------------------------------------------------


def fmt(x: float) -> str:
    return f"{float(x):.17g}"


class Run:
    """Output bookkeeping for one subcommand invocation."""

    def __init__(self, args: argparse.Namespace, spec: model.ModelSpec, seeds: Sequence[int]):
        params = {k: v for k, v in sorted(vars(args).items()) if k not in _NON_SEMANTIC and k != "config"}
        self.body = {
            "tool": "nlsrd",
            "version": __version__,
            "subcommand": args.command,
            "config_hash": spec.digest(),
            "seeds": list(seeds),
            "parameters": params,
        }
        blob = json.dumps(self.body, sort_keys=True, separators=(",", ":"), default=str)
        self.hash = hashlib.sha256(blob.encode()).hexdigest()
        self.out_dir = Path(args.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.outputs: list[str] = []

    def _sidecar(self, name: str) -> None:
        self.outputs.append(name)
        doc = dict(self.body, manifest=self.hash, outputs=[name])
        (self.out_dir / f"{name}.manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")

    def csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
        target = self.out_dir / name
        with open(target, "w") as fh:
            fh.write(f"# manifest: {self.hash}\n")
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(v if isinstance(v, str) else (str(v) if isinstance(v, (int, np.integer)) else fmt(v))
                                  for v in row) + "\n")
        self._sidecar(name)
        return target

    def json(self, name: str, payload) -> Path:
        target = self.out_dir / name
        doc = {"manifest": self.hash, "result": payload}
        target.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        self._sidecar(name)
        return target


def fan_out(fn: Callable, jobs: Sequence, workers: int) -> list:
    """Map ``fn`` over ``jobs``; results come back in job order whatever the schedule."""
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as ex:
        return list(ex.map(fn, jobs))


# -- shared argument handling ------------------------------------------------------


def _load(args) -> model.ModelSpec:
    base = {
        "additive": model.default_additive,
        "multiplicative": model.default_multiplicative,
        "general": model.default_general,
    }[args.coupling or "additive"]()
    spec = model.load_spec(args.config, base) if args.config else base
    if args.coupling and args.config:
        spec = spec.with_(coupling=args.coupling)
    eps = getattr(args, "epsilon", None)
    if eps is not None:
        if eps < 0:
            raise UsageError("--epsilon must be nonnegative")
        spec = spec.with_(epsilon=eps)
    return spec


def _noise(args, allow_none: bool = True, allow_white: bool = True):
    name = args.noise
    if name == "none":
        if not allow_none:
            raise UsageError("this subcommand needs a noise kind")
        if getattr(args, "epsilon", None):
            raise UsageError("epsilon requires a noise kind (got --noise none)")
        return None
    if name == "white":
        if not allow_white:
            raise UsageError("white noise is not available here")
        return solver.WHITE
    if args.delta is None:
        raise UsageError(f"--noise {name} needs --delta")
    if not args.delta > 0:
        raise UsageError("--delta must be positive")
    return noise.NoiseKind(name, args.delta)


def _window(lo: float, hi: float) -> tuple[float, float]:
    return float(np.floor(min(lo, 0.0))), float(np.ceil(max(hi, 0.0)))


def _seeds(args) -> list[int]:
    return [args.seed + i for i in range(args.n_seeds)]


def _common() -> argparse.ArgumentParser:
    p = _Parser(add_help=False)
    p.add_argument("--seed", type=int, default=7, help="path seed (default 7)")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1, help="worker processes (default: all cores)")
    p.add_argument("--out-dir", default=".", help="directory for outputs and manifests")
    p.add_argument("--config", help="TOML file whose keys are model fields")
    p.add_argument("--coupling", choices=model.COUPLINGS, help="start from this default model")
    return p


def _grid_flags(p: argparse.ArgumentParser, dt: float = 1e-3) -> None:
    p.add_argument("--dt", type=float, default=dt, help="solver step")
    p.add_argument("--dt-grid", type=float, default=2.5e-4, help="path grid step")
    p.add_argument("--n-modes", type=int, default=16)


def _noise_flags(p: argparse.ArgumentParser, default: str = "none", choices=NOISE_CHOICES) -> None:
    p.add_argument("--noise", choices=choices, default=default)
    p.add_argument("--delta", type=float)
    p.add_argument("--epsilon", type=float)


# -- subcommands ---------------------------------------------------------------------


def _noise_job(job):
    kind, seed, T, deltas, dt_grid = job
    reach = max(max(noise.NoiseKind(kind, d).reach()) for d in deltas)
    lo, hi = _window(-T - reach - noise.T_TRUNC, T + reach)
    path = wiener.sample_path(seed, lo, hi, dt_grid)
    return noise.certify_hypotheses(kind, path, T, deltas).to_dict()


def cmd_noise_check(args) -> int:
    kinds = noise.VARIANTS if args.kind == "all" else (args.kind,)
    seeds = _seeds(args)
    jobs = [(k, s, args.T, tuple(args.deltas), args.dt_grid) for k in kinds for s in seeds]
    reports = fan_out(_noise_job, jobs, args.workers)
    for (k, s, *_), r in zip(jobs, reports):
        r["seed"] = s
        print(f"{k:10s} seed {s}: {'pass' if r['pass'] else 'FAIL'}")
    run = Run(args, model.default_additive(), seeds)
    run.json("noise_check.json", reports)
    return EXIT_OK if all(r["pass"] for r in reports) else EXIT_FAILED


def cmd_validate(args) -> int:
    spec = _load(args)
    diag = model.validate(spec, alpha=args.alpha)
    print(diag.table())
    print(f"estimated Lipschitz constant of a: {diag.lipschitz_a:.6g}")
    run = Run(args, spec, [])
    run.csv("validate.csv", ["condition", "lhs", "relation", "rhs", "pass", "gating"],
            [(c.name, c.lhs, c.relation, c.rhs, str(c.passed).lower(), str(c.gating).lower()) for c in diag.conditions])
    return EXIT_OK if diag.passed else EXIT_FAILED


def _initial(args, n_modes: int) -> Field:
    return Field.mode(args.ic_mode, n_modes, args.ic_amplitude)


def cmd_simulate(args) -> int:
    spec = _load(args)
    kind = _noise(args)
    cfg = solver.SolveConfig(dt=args.dt, t_start=args.t0, t_end=args.t1, scheme=args.scheme, n_modes=args.n_modes)
    path = None
    if kind is not None:
        lo, hi = _window(*solver.path_window(kind, spec, args.t0, args.t1))
        path = wiener.sample_path(args.seed, lo, hi, args.dt_grid)
    traj = solver.evolve(spec, path, kind, cfg, _initial(args, args.n_modes), store=True)
    st = traj.states
    grid = grid_for(args.n_modes)
    ell = spec.ell(st)
    rows = (
        [t, np.sqrt(np.sum(u * u)), np.sqrt(np.sum(grid.lam * u * u)), l, spec.a(l), *u]
        for t, u, l in zip(traj.times, st, ell)
    )
    header = ["t", "l2", "h1", "ell", "a"] + [f"c{k}" for k in range(1, args.n_modes + 1)]
    run = Run(args, spec, [args.seed] if path is not None else [])
    target = run.csv(args.out, header, rows)
    print(f"wrote {target}")
    return EXIT_OK


def _converge_job(job):
    spec, seed, variant, d, e, cfg, u0, dt_grid = job
    lo, hi = _window(*solver.path_window(solver.WHITE, spec, cfg.t_start, cfg.t_end))
    lo = min(lo, float(np.floor(cfg.t_start - max(noise.NoiseKind(variant, d).reach()))))
    hi = max(hi, float(np.ceil(cfg.t_end + d)))
    path = wiener.sample_path(seed, lo, hi, dt_grid)
    return solver.converge_solutions(spec, path, [d], [e], cfg, u0, variant=variant)[0]


def cmd_converge(args) -> int:
    spec = _load(args)
    if spec.coupling == "general":
        raise UsageError("converge compares against the white solution, which needs additive or multiplicative coupling")
    if args.paired and len(args.deltas) != len(args.epsilons):
        raise UsageError("--paired needs equally long --deltas and --epsilons")
    pairs = list(zip(args.deltas, args.epsilons)) if args.paired else [(d, e) for d in args.deltas for e in args.epsilons]
    cfg = solver.SolveConfig(dt=args.dt, t_start=args.t0, t_end=args.t1, n_modes=args.n_modes)
    u0 = _initial(args, args.n_modes)
    jobs = [(spec, args.seed, args.noise, d, e, cfg, u0, args.dt_grid) for d, e in pairs]
    rows = fan_out(_converge_job, jobs, args.workers)
    run = Run(args, spec, [args.seed])
    target = run.csv("converge.csv", ["delta", "epsilon", "sup_gap_vs_deterministic", "sup_gap_vs_white"],
                     [(r.delta, r.epsilon, r.sup_gap_vs_deterministic, r.sup_gap_vs_white) for r in rows])
    print(f"wrote {target}")
    return EXIT_OK


def _aux_process(spec, kind, n_modes):
    if spec.coupling == "general":
        raise UsageError("auxiliary processes exist for additive or multiplicative coupling only")
    return conjugate.process_for(spec, None if kind == solver.WHITE else kind, n_modes)


def cmd_aux(args) -> int:
    spec = _load(args)
    kind = _noise(args, allow_none=False)
    proc = _aux_process(spec, kind, args.n_modes)
    back, fwd = conjugate.history_needed(proc)
    path = wiener.sample_path(args.seed, *_window(args.t0 - back, args.t1 + fwd), args.dt_grid)
    lo, hi = path.index(args.t0), path.index(args.t1)
    vals = conjugate.aux_series(proc, path, lo, hi)
    times = path.times[lo : hi + 1]
    name = "x_star_norm" if proc.flavor == "additive" else "y"
    scale = proc.phi_norm if proc.flavor == "additive" else 1.0
    run = Run(args, spec, [args.seed])
    target = run.csv("aux.csv", ["t", name], zip(times, vals * scale))
    print(f"wrote {target}")
    return EXIT_OK


def cmd_aux_limit(args) -> int:
    spec = _load(args)
    if args.noise in ("white", "none"):
        raise UsageError("aux-limit compares a stationary noise with its white limit")
    procs = [_aux_process(spec, noise.NoiseKind(args.noise, d), args.n_modes) for d in args.deltas]
    back = max(conjugate.history_needed(p)[0] for p in procs)
    fwd = max(conjugate.history_needed(p)[1] for p in procs)
    path = wiener.sample_path(args.seed, *_window(-args.T - back, args.T + fwd), args.dt_grid)
    rows = conjugate.limit_check(procs, path, args.T)
    run = Run(args, spec, [args.seed])
    target = run.csv("aux_limit.csv", ["delta", "epsilon", "gap", "sup_white"],
                     [(r.delta, r.epsilon, r.gap, r.sup_white) for r in rows])
    print(f"wrote {target}")
    return EXIT_OK


def cmd_absorb(args) -> int:
    spec = _load(args)
    kind = _noise(args)
    formula = args.formula or attractor.formula_for(spec)
    rkind = kind if isinstance(kind, noise.NoiseKind) else None
    lo, hi = attractor.radius_window(spec, rkind, formula)
    plo, phi_ = _window(*solver.path_window(kind, spec, -args.pullback, 0.0))
    path = wiener.sample_path(args.seed, min(lo, plo), max(hi, phi_), args.dt_grid)
    radius = attractor.absorbing_radius(spec, path, rkind, formula)
    report = attractor.absorbing_check(spec, path, kind, radius, args.ball_radius, args.pullback, args.n_ics,
                                       dt=args.dt, n_modes=args.n_modes, seed=args.seed)
    payload = {
        "formula_id": radius.formula_id,
        "r_squared": radius.r_squared,
        "r_squared_white": radius.r_squared_white,
        "bound": report.bound,
        "max_u0_sq": report.max_u0_sq,
        "slack": report.slack,
        "pass": report.passed,
    }
    print(f"R = {radius.r_squared:.6g}  max |u(0)|^2 = {report.max_u0_sq:.6g}  bound = {report.bound:.6g}")
    Run(args, spec, [args.seed]).json("absorb.json", payload)
    return EXIT_OK if report.passed else EXIT_FAILED


def cmd_attractor(args) -> int:
    spec = _load(args)
    kind = _noise(args)
    tmax = max(args.pullback_times)
    path = None
    if kind is not None:
        path = wiener.sample_path(args.seed, *_window(*solver.path_window(kind, spec, -tmax, 0.0)), args.dt_grid)
    ics = attractor.ic_ensemble(args.n_modes, args.n_ics, args.ic_radius, args.seed)
    try:
        cloud = attractor.pullback_attractor_sample(spec, path, kind, args.pullback_times, ics, args.tol, args.dt)
    except attractor.NonCauchyError as exc:
        print(f"not settled: displacements {exc.displacements}", file=sys.stderr)
        return EXIT_FAILED
    run = Run(args, spec, [args.seed] if path is not None else [])
    header = ["ic_index"] + [f"c{k}" for k in range(1, args.n_modes + 1)]
    target = run.csv("attractor.csv", header, ([i, *row] for i, row in enumerate(cloud.members)))
    print(f"wrote {target} (diameter {cloud.diameter():.3g})")
    return EXIT_OK


def _semi_job(job):
    spec, seed, variant, schedule, times, dt, dt_grid, n_modes, tol = job
    reach = max((max(noise.NoiseKind(variant, d).reach()) for d, _ in schedule if d > 0), default=0.0)
    lo, hi = _window(*solver.path_window(solver.WHITE, spec, -max(times), 0.0))
    path = wiener.sample_path(seed, min(lo, float(np.floor(-max(times) - reach))), max(hi, float(np.ceil(reach))), dt_grid)
    return attractor.semicontinuity_experiment(spec, path, schedule, variant, times, None, tol, dt, n_modes)


def cmd_semidist(args) -> int:
    spec = _load(args)
    if len(args.deltas) != len(args.epsilons):
        raise UsageError("--deltas and --epsilons must have equal length")
    schedule = list(zip(args.deltas, args.epsilons))
    seeds = _seeds(args)
    jobs = [(spec, s, args.noise, schedule, tuple(args.pullback_times), args.dt, args.dt_grid, args.n_modes, args.tol)
            for s in seeds]
    try:
        tables = fan_out(_semi_job, jobs, args.workers)
    except attractor.NonCauchyError as exc:
        print(f"not settled: displacements {exc.displacements}", file=sys.stderr)
        return EXIT_FAILED
    run = Run(args, spec, seeds)
    cols = ["delta", "epsilon", "dist_total", "dist_split1", "dist_split2"]
    for s, rows in zip(seeds, tables):
        name = "semidist.csv" if len(seeds) == 1 else f"semidist_seed{s}.csv"
        run.csv(name, cols, [(r.delta, r.epsilon, r.dist_total, r.dist_split1, r.dist_split2) for r in rows])
    if len(seeds) > 1:
        arr = np.array([[[r.dist_total, r.dist_split1, r.dist_split2] for r in rows] for rows in tables])
        med = np.median(arr, axis=0)
        run.csv("semidist_median.csv", cols, [(d, e, *m) for (d, e), m in zip(schedule, med)])
    print(f"wrote {len(run.outputs)} table(s) to {run.out_dir}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="nlsrd", description="Stochastic nonlocal reaction-diffusion experiments.")
    parser.add_argument("--version", action="version", version=f"nlsrd {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("noise-check", parents=[common], help="certify the convergence hypotheses of the noises")
    p.add_argument("--kind", choices=noise.VARIANTS + ("all",), default="all")
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--deltas", type=_floats, default=[0.1, 0.05, 0.025, 0.0125])
    p.add_argument("--dt-grid", type=float, default=2.5e-4)
    p.add_argument("--n-seeds", type=int, default=1)
    p.set_defaults(func=cmd_noise_check)

    p = sub.add_parser("validate", parents=[common], help="check the standing assumptions of a model")
    p.add_argument("--alpha", type=float, default=0.0, help="a-priori H1 bound for the smallness conditions")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("simulate", parents=[common], help="integrate one trajectory")
    _noise_flags(p)
    _grid_flags(p)
    p.add_argument("--t0", type=float, default=0.0)
    p.add_argument("--t1", type=float, default=1.0)
    p.add_argument("--scheme", choices=solver.SCHEMES, default="imex-euler")
    p.add_argument("--ic-mode", type=int, default=1)
    p.add_argument("--ic-amplitude", type=float, default=1.0)
    p.add_argument("--out", default="simulate.csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("converge", parents=[common], help="gap table against deterministic and white solutions")
    p.add_argument("--noise", choices=noise.VARIANTS, default="ou")
    p.add_argument("--deltas", type=_floats, default=[0.25, 0.125, 0.0625, 0.03125, 0.015625])
    p.add_argument("--epsilons", type=_floats, default=[0.25, 0.125, 0.0625, 0.03125, 0.015625])
    p.add_argument("--paired", action="store_true", help="zip deltas with epsilons instead of the full product")
    _grid_flags(p, dt=2.0**-10)
    p.set_defaults(dt_grid=2.0**-12)
    p.add_argument("--t0", type=float, default=0.0)
    p.add_argument("--t1", type=float, default=1.0)
    p.add_argument("--ic-mode", type=int, default=1)
    p.add_argument("--ic-amplitude", type=float, default=1.0)
    p.set_defaults(func=cmd_converge)

    p = sub.add_parser("aux", parents=[common], help="dump the stationary auxiliary process")
    _noise_flags(p, default="white", choices=("ou", "mollifier", "diffq", "white"))
    _grid_flags(p)
    p.add_argument("--t0", type=float, default=-1.0)
    p.add_argument("--t1", type=float, default=0.0)
    p.set_defaults(func=cmd_aux)

    p = sub.add_parser("aux-limit", parents=[common], help="auxiliary process gaps against the white limit")
    p.add_argument("--noise", choices=noise.VARIANTS, default="ou")
    p.add_argument("--deltas", type=_floats, default=[0.1, 0.05, 0.025])
    p.add_argument("--epsilon", type=float)
    p.add_argument("--T", type=float, default=1.0)
    _grid_flags(p)
    p.set_defaults(func=cmd_aux_limit)

    p = sub.add_parser("absorb", parents=[common], help="absorbing radius and containment check")
    _noise_flags(p)
    _grid_flags(p)
    p.add_argument("--formula", choices=attractor.FORMULAS)
    p.add_argument("--ball-radius", type=float, default=10.0)
    p.add_argument("--pullback", type=float, default=20.0)
    p.add_argument("--n-ics", type=int, default=16)
    p.set_defaults(func=cmd_absorb)

    p = sub.add_parser("attractor", parents=[common], help="sample a pullback attractor")
    _noise_flags(p)
    _grid_flags(p)
    p.add_argument("--pullback-times", type=_floats, default=[2.0, 4.0])
    p.add_argument("--n-ics", type=int, default=32)
    p.add_argument("--ic-radius", type=float, default=2.0)
    p.add_argument("--tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_attractor)

    p = sub.add_parser("semidist", parents=[common], help="semidistance table for upper semicontinuity")
    p.add_argument("--noise", choices=noise.VARIANTS, default="ou")
    p.add_argument("--deltas", type=_floats, default=[0.25, 0.125, 0.0625, 0.03125, 0.015625])
    p.add_argument("--epsilons", type=_floats, default=[0.25, 0.125, 0.0625, 0.03125, 0.015625])
    p.add_argument("--pullback-times", type=_floats, default=[2.0, 4.0])
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--n-seeds", type=int, default=1)
    _grid_flags(p, dt=2.0**-10)
    p.set_defaults(dt_grid=2.0**-12, n_modes=32)
    p.set_defaults(func=cmd_semidist)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (model.ConfigError, wiener.GridError, attractor.RegimeError) as exc:
        print(f"nlsrd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except solver.DivergenceError as exc:
        print(f"nlsrd: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ArithmeticError as exc:
        print(f"nlsrd: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
