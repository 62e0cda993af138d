"""Command-line front end: env, simulate, kernel, semigroup, she, diagnose,
converge.

Configuration may come from a JSON document (--config) with flag
overrides; every run writes a manifest sufficient to reproduce it.  Exit
codes: 0 success, 2 validation error, 3 gate failure under --assert.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import asep, diagnostics, environment as envm, io as iom, kernels, semigroup, she


class ValidationError(Exception):
    pass


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _build_env(args) -> envm.Environment:
    kind = args.kind
    if kind == "homogeneous":
        return envm.gen_homogeneous(args.n)
    if kind == "iid":
        return envm.gen_iid(args.n, sigma=args.sigma, bound=args.bound,
                            seed=args.seed)
    if kind == "fbm":
        if not 0.0 < args.hurst < 1.0:
            raise ValidationError("hurst exponent must lie in (0, 1)")
        return envm.gen_fbm(args.n, hurst=args.hurst, seed=args.seed)
    if kind == "alternating":
        return envm.gen_alternating(args.n, args.delta)
    raise ValidationError(f"unknown environment kind {kind!r}")


def cmd_env(args) -> int:
    out = _out_dir(args)
    env = _build_env(args)
    envm.save_env(env, out / "env.csv")
    iom.write_manifest(out, {"command": "env", "kind": args.kind, "n": args.n,
                             "seed": args.seed, "sigma": args.sigma,
                             "bound": args.bound, "hurst": args.hurst,
                             "delta": args.delta})
    print(f"wrote {out / 'env.csv'}")
    return 0


def cmd_simulate(args) -> int:
    out = _out_dir(args)
    env = _build_env(args)
    sc = asep.ScalingParams(args.n)
    state, report = asep.init_near_stationary(args.n, args.profile,
                                              seed=args.seed)
    obs = np.linspace(0.0, args.t, args.frames + 1)[1:]
    path = asep.run_until(state, env, sc, args.t * args.n ** 2,
                          observer_times=obs)
    iom.write_path_csv(path, out / "path.csv")
    iom.write_path_frames(path, out / "path.bin")
    envm.save_env(env, out / "env.csv")
    iom.write_manifest(out, {"command": "simulate", "kind": args.kind,
                             "n": args.n, "t": args.t, "seed": args.seed,
                             "profile": args.profile, "frames": args.frames},
                       extra={"ic_report": report, "n_events": state.n_events})
    print(f"wrote {out / 'path.csv'} ({state.n_events} events)")
    return 0


def cmd_kernel(args) -> int:
    out = _out_dir(args)
    env = _build_env(args)
    sc = asep.ScalingParams(args.n)
    code = 0
    if args.check_bounds:
        reports = kernels.certify_kernel_bounds(env, u=args.u, v=args.v,
                                                horizon=args.t)
        iom.write_bounds_csv(reports, out / "bounds_report.csv")
        print(f"wrote {out / 'bounds_report.csv'} ({len(reports)} bounds)")
    else:
        t_micro = args.t * args.n ** 2
        ker = kernels.hka_oracle(env, t_micro, sc, normalized=args.normalized)
        iom.write_kernel_csv(t_micro, ker, out / "kernel.csv")
        row_gap = float(np.abs(ker.sum(axis=1) - 1.0).max())
        print(f"wrote {out / 'kernel.csv'} (row-sum gap {row_gap:.2e})")
        if args.do_assert and row_gap > 1e-9:
            code = 3
    iom.write_manifest(out, {"command": "kernel", "kind": args.kind,
                             "n": args.n, "t": args.t, "seed": args.seed,
                             "check_bounds": args.check_bounds})
    return code


def cmd_semigroup(args) -> int:
    out = _out_dir(args)
    env = _build_env(args)
    cenv = envm.couple_to_continuum(env, args.m)
    spect = semigroup.SpectralSemigroup(cenv)
    es = spect.eigensystem(args.modes)
    iom.write_spectrum_csv(es, out / "spectrum.csv")
    ker = spect.kernel(args.t)
    iom.write_kernel_csv(args.t, ker, out / "kernel.csv")
    iom.write_manifest(out, {"command": "semigroup", "kind": args.kind,
                             "n": args.n, "m": args.m, "t": args.t,
                             "seed": args.seed, "modes": args.modes})
    print(f"wrote {out / 'spectrum.csv'} and kernel at t={args.t}")
    return 0


def cmd_she(args) -> int:
    out = _out_dir(args)
    if args.kind == "smooth":
        cenv = envm.smooth_continuum(args.m, amplitude=args.amplitude)
    else:
        cenv = envm.couple_to_continuum(_build_env(args), args.m)
    spect = semigroup.SpectralSemigroup(cenv)
    dt = args.dt or she.CFL_SAFETY / (args.m * args.m)
    n_steps = max(int(math.ceil(args.t / dt)), 4)
    dt = args.t / n_steps
    sol = she.solve_mild(spect, np.ones(args.m), args.t, dt, seed=args.seed,
                         n_trials=args.trials, noise_off=args.noise_off)
    last = asep.FieldPath(t_macro=sol.t_grid, x_macro=sol.x_grid,
                          z=sol.z[:, :, 0], meta=sol.meta)
    iom.write_path_csv(last, out / "field.csv")
    code = 0
    gap = None
    if args.noise_off:
        gap = float(np.abs(sol.z[-1, :, 0] - spect.apply(sol.t_grid[-1],
                                                         np.ones(args.m))).max())
        print(f"noise-off reduction gap: {gap:.2e}")
        if args.do_assert and gap > 1e-8:
            code = 3
    iom.write_manifest(out, {"command": "she", "m": args.m, "t": args.t,
                             "dt": dt, "seed": args.seed,
                             "trials": args.trials,
                             "noise_off": args.noise_off},
                       extra={"noise_off_gap": gap,
                              "negative_fraction": sol.negative_fraction})
    print(f"wrote {out / 'field.csv'}")
    return code


def cmd_diagnose(args) -> int:
    out = _out_dir(args)
    env = _build_env(args)
    results = {}
    code = 0
    if args.martingale:
        reps = diagnostics.linear_martingale_residual(
            env, horizon=args.t, n_trials=args.trials, seed=args.seed)
        results["martingale"] = [
            {"mode": r.mode, "max_abs_z": r.max_abs_z} for r in reps]
        worst = max(r.max_abs_z for r in reps)
        print(f"linear martingale: worst |mean|/se = {worst:.2f}")
        if args.do_assert and worst > 3.0:
            code = 3
    if args.beta:
        val = diagnostics.beta_integral(args.n, args.t)
        stable = diagnostics.beta_line_limit(args.n, args.t)
        results["beta"] = {"torus": val, "line_limit": stable}
        print(f"beta integral: {val:.6f} (line limit {stable:.6f})")
        if args.do_assert and val >= 1.0:
            code = 3
    if args.holder:
        reg = diagnostics.moment_holder_regression(
            env, horizon=args.t, n_trials=args.trials, seed=args.seed)
        results["holder"] = {
            "spatial": reg.spatial_exponent, "temporal": reg.temporal_exponent,
            "spatial_floor": reg.spatial_floor,
            "temporal_floor": reg.temporal_floor}
        print(f"holder exponents: spatial {reg.spatial_exponent:.3f} "
              f"(floor {reg.spatial_floor}), temporal "
              f"{reg.temporal_exponent:.3f} (floor {reg.temporal_floor})")
    with open(out / "diagnose.json", "w") as fh:
        json.dump(results, fh, indent=2)
    iom.write_manifest(out, {"command": "diagnose", "kind": args.kind,
                             "n": args.n, "t": args.t, "seed": args.seed,
                             "trials": args.trials})
    return code


def cmd_converge(args) -> int:
    out = _out_dir(args)
    ladder = tuple(int(x) for x in args.ladder.split(","))
    rep = diagnostics.convergence_experiment(
        args.kind if args.kind != "fbm" else "iid", ladder=ladder,
        horizon=args.t, n_trials=args.trials, seed=args.seed)
    with open(out / "convergence.csv", "w") as fh:
        fh.write("N,mean_gap,cov_gap_sq,cov_gap,cdf_distance\n")
        for e in rep.entries:
            fh.write(f"{e.n},{e.mean_gap:.17g},{e.cov_gap_sq:.17g},"
                     f"{e.cov_gap:.17g},{e.cdf_distance:.17g}\n")
    mono = diagnostics.ladder_monotone(rep)
    iom.write_manifest(out, {"command": "converge", "kind": args.kind,
                             "ladder": list(ladder), "t": args.t,
                             "trials": args.trials, "seed": args.seed},
                       extra={"cov_gap_monotone": mono})
    print(f"wrote {out / 'convergence.csv'}; covariance ladder monotone: {mono}")
    return 0 if (mono or not args.do_assert) else 3


def _add_common(p, n_default=64):
    p.add_argument("--kind", default="homogeneous",
                   choices=["homogeneous", "iid", "fbm", "alternating", "smooth"])
    p.add_argument("--n", type=int, default=n_default)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--bound", type=float, default=1.0)
    p.add_argument("--hurst", type=float, default=0.7)
    p.add_argument("--delta", type=float, default=0.75)
    p.add_argument("--out", default="out")
    p.add_argument("--assert", dest="do_assert", action="store_true")
    p.add_argument("--threads", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="inhomasep",
        description="inhomogeneous ASEP / PAM semigroup / SHE toolkit")
    parser.add_argument("--config", help="JSON file with defaults for the "
                                         "chosen subcommand")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("env", help="generate and serialize an environment")
    _add_common(p)

    p = sub.add_parser("simulate", help="run the particle system")
    _add_common(p)
    p.add_argument("--t", type=float, default=0.05,
                   help="macroscopic horizon (microscopic t N^2)")
    p.add_argument("--profile", default="flat")
    p.add_argument("--frames", type=int, default=8)

    p = sub.add_parser("kernel", help="walk kernels and bound certification")
    _add_common(p)
    p.add_argument("--t", type=float, default=0.02)
    p.add_argument("--check-bounds", action="store_true")
    p.add_argument("--u", type=float, default=0.75)
    p.add_argument("--v", type=float, default=0.3)
    p.add_argument("--normalized", action="store_true", default=True)

    p = sub.add_parser("semigroup", help="spectral semigroup and eigen report")
    _add_common(p)
    p.add_argument("--m", type=int, default=128)
    p.add_argument("--t", type=float, default=0.1)
    p.add_argument("--modes", type=int, default=16)

    p = sub.add_parser("she", help="mild SPDE solver")
    _add_common(p)
    p.add_argument("--m", type=int, default=128)
    p.add_argument("--t", type=float, default=0.25)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--noise-off", action="store_true")
    p.add_argument("--amplitude", type=float, default=0.05)

    p = sub.add_parser("diagnose", help="martingale / beta / Hoelder checks")
    _add_common(p)
    p.add_argument("--t", type=float, default=0.05)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--martingale", action="store_true")
    p.add_argument("--beta", action="store_true")
    p.add_argument("--holder", action="store_true")

    p = sub.add_parser("converge", help="the weak-convergence ladder")
    _add_common(p)
    p.add_argument("--ladder", default="64,128,256")
    p.add_argument("--t", type=float, default=0.05)
    p.add_argument("--trials", type=int, default=500)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        with open(args.config) as fh:
            defaults = json.load(fh)
        cli_flags = {a for a in vars(args) if
                     parser.get_default(a) != getattr(args, a)}
        for key, val in defaults.items():
            if key not in cli_flags and hasattr(args, key):
                setattr(args, key, val)
    handlers = {"env": cmd_env, "simulate": cmd_simulate,
                "kernel": cmd_kernel, "semigroup": cmd_semigroup,
                "she": cmd_she, "diagnose": cmd_diagnose,
                "converge": cmd_converge}
    try:
        return handlers[args.command](args)
    except (ValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
