"""Command line front end.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical
failure, 3 verification failure.
"""
from __future__ import annotations

import argparse
import logging
import math
from pathlib import Path
import sys

import numpy as np

from . import __version__
from .attractor_lab import (
    EnsembleSpec,
    absorbing_report,
    center_displacement,
    correlation_dimension,
    quasistability_fit,
    run_ensemble,
)
from .config import RunConfig, parse_config
from .delay_force import DelayHistory
from .dynamics import PlateState, simulate
from .errors import ConfigError, VKError
from .fields import random_clamped_field
from .serialization import write_rows_csv, write_series_csv, write_snapshot
from .verify import SUITES, run_suite

log = logging.getLogger("vkdelay")

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_VERIFY = 0, 1, 2, 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _claim(out: Path, names, force: bool) -> Path:
    """Create ``out`` and refuse to overwrite existing outputs unless forced."""
    out.mkdir(parents=True, exist_ok=True)
    if not force:
        clash = [n for n in names if (out / n).exists()]
        if clash:
            raise _UsageError(f"refusing to overwrite {', '.join(clash)} in {out} (use --force)")
    return out


def _initial(rc: RunConfig, grid, cfg):
    zero = grid.field()
    u0 = rc.field("run", "u0", grid) or zero
    u1 = rc.field("run", "u1", grid) or zero
    return PlateState(u0, u1, 0.0), DelayHistory.frozen(grid, cfg, u0)


def cmd_simulate(rc: RunConfig, args) -> int:
    grid = rc.grid()
    phys, cfg = rc.physics(grid), rc.delay(grid)
    out = _claim(Path(args.out), ["series.csv", "snapshots"], args.force)
    snapdir = out / "snapshots"
    every = rc.get("run", "snapshot_every")
    if every:
        snapdir.mkdir(exist_ok=True)

    def on_record(i, state):
        if every and i % every == 0:
            write_snapshot(snapdir / f"snap_{i:06d}.vkds", state)

    state, hist = _initial(rc, grid, cfg)
    traj = simulate(state, hist, phys, cfg, rc.n_steps(cfg), tol=rc.get("run", "tol"),
                    stride=rc.get("run", "stride"), store_fields=False, on_record=on_record)
    write_series_csv(out / "series.csv", traj.times, traj.series)
    if every:
        write_snapshot(snapdir / "final.vkds", traj.final_state)
    log.info("wrote %d records to %s", len(traj.times), out)
    return EXIT_OK


def cmd_verify(rc: RunConfig, args) -> int:
    grid = rc.grid()
    out = _claim(Path(args.out), ["verify_report.csv"], args.force)
    checks = run_suite(args.suite, grid, seed=rc.get("run", "seed"), tol=rc.get("run", "tol"),
                       u_flow=rc.get("physics", "U"), n_theta=rc.get("delay", "n_theta"))
    write_rows_csv(out / "verify_report.csv", ["suite", "check", "value", "threshold", "passed"],
                   [[args.suite, c.name, c.value, c.threshold, int(c.passed)] for c in checks])
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {args.suite}.{c.name} value={c.value:.3e} "
              f"threshold={c.threshold:.3e}")
    return EXIT_OK if all(c.passed for c in checks) else EXIT_VERIFY


def cmd_ensemble(rc: RunConfig, args) -> int:
    grid = rc.grid()
    phys, cfg = rc.physics(grid), rc.delay(grid)
    e = rc.values["ensemble"]
    radii = e["radii"]
    names = ["absorbing_report.csv"] + [f"member_r{r:g}_{i:03d}.csv" for r in radii for i in range(e["n_members"])]
    out = _claim(Path(args.out), names, args.force)
    results = {}
    for j, r in enumerate(radii):
        try:
            spec = EnsembleSpec(grid, phys, cfg, e["n_members"], r, rc.get("run", "seed") + j,
                                rc.get("run", "horizon"), stride=rc.get("run", "stride"),
                                tol=rc.get("run", "tol"), n_modes=e["n_modes"])
        except VKError as exc:
            raise _UsageError(f"run.horizon: {exc}") from None
        res = run_ensemble(spec)
        results[r] = res
        for m in res.members:
            if m.ok:
                write_series_csv(out / f"member_r{r:g}_{m.index:03d}.csv", m.times, m.series)
    rep = absorbing_report(results, e["late_fraction"], e["rel_tol"])
    rows = [[r, s, rep.spread, int(rep.absorbing), rep.failures] for r, s in zip(rep.radii, rep.late_sup)]
    write_rows_csv(out / "absorbing_report.csv", ["radius", "late_sup", "spread", "absorbing", "failures"], rows)
    print(f"absorbing={rep.absorbing} spread={rep.spread:.3f} failures={rep.failures}")
    return EXIT_NUMERICAL if rep.failures else EXIT_OK


def cmd_quasistab(rc: RunConfig, args) -> int:
    grid = rc.grid()
    phys, cfg = rc.physics(grid), rc.delay(grid)
    q = rc.values["quasistab"]
    out = _claim(Path(args.out), ["quasifit.csv"], args.force)
    tol = rc.get("run", "tol")
    rng = np.random.default_rng(rc.get("run", "seed"))
    state, hist = _initial(rc, grid, cfg)
    n_trans = int(math.ceil(q["transient"] / cfg.dt - 1e-9))
    if n_trans:
        base = simulate(state, hist, phys, cfg, n_trans, tol=tol, store_fields=False, diagnostics=False)
        state = base.final_state
    n_steps = rc.n_steps(cfg)
    pairs = []
    for _ in range(q["n_pairs"]):
        phi = random_clamped_field(grid, rng)
        phi = phi * (q["gap"] / max(float(np.max(np.abs(phi.values))), 1e-300))
        s2 = PlateState(state.u + phi, state.ut, state.t)
        h1, h2 = hist.copy(), hist.perturbed(phi)
        t1 = simulate(state, h1, phys, cfg, n_steps, tol=tol, diagnostics=False)
        t2 = simulate(s2, h2, phys, cfg, n_steps, tol=tol, diagnostics=False)
        pairs.append((t1, t2))
    fit = quasistability_fit(pairs, q["eta"])
    write_rows_csv(out / "quasifit.csv", ["c1", "omega", "c2", "residual"],
                   [[fit.c1, fit.omega, fit.c2, fit.residual]])
    print(f"success={fit.success} c1={fit.c1:.4g} omega={fit.omega:.4g} c2={fit.c2:.4g}")
    return EXIT_OK if fit.success else EXIT_VERIFY


def cmd_dimension(rc: RunConfig, args) -> int:
    grid = rc.grid()
    phys, cfg = rc.physics(grid), rc.delay(grid)
    d = rc.values["dimension"]
    out = _claim(Path(args.out), ["dimension.csv"], args.force)
    tol = rc.get("run", "tol")
    state, hist = _initial(rc, grid, cfg)
    n_trans = int(math.ceil(d["transient"] / cfg.dt - 1e-9))
    if n_trans:
        state = simulate(state, hist, phys, cfg, n_trans, tol=tol, store_fields=False,
                         diagnostics=False).final_state
    traj = simulate(state, hist, phys, cfg, d["n_samples"] - 1, tol=tol, store_fields=False,
                    diagnostics=False, observe=center_displacement)
    est = correlation_dimension(traj.observable, d["embed_dims"], max_points=d["max_points"])
    rows = [[m, s, est.value if est.plateau else float("nan")] for m, s in zip(est.embed_dims, est.slopes)]
    write_rows_csv(out / "dimension.csv", ["embed_dim", "slope", "plateau"], rows)
    print(f"plateau={est.plateau} estimate={est.value:.4f}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "ensemble": cmd_ensemble,
    "quasistab": cmd_quasistab,
    "dimension": cmd_dimension,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vkdelay", description="Clamped von Karman plate with a retarded aerodynamic load.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="configuration file")
        s.add_argument("--print-config", action="store_true", help="print the effective configuration first")
        s.add_argument("--force", action="store_true", help="overwrite existing outputs")
        if name == "verify":
            s.add_argument("--suite", required=True, choices=sorted(SUITES))
            s.add_argument("--out", default=".", help="output directory (default: current)")
        else:
            s.add_argument("--out", required=True, help="output directory")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        rc = parse_config(args.config)
        if args.print_config:
            print(rc.dump())
        return COMMANDS[args.command](rc, args)
    except (ConfigError, _UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (VKError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
