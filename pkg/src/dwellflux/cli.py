"""Command-line front end: moment tables, distributions and approximation errors as CSV/JSON.

Exit codes: 0 success, 1 configuration error, 2 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import ffcf
from .core import Region, UnitSystem, load_config, make_gauss_cut_packet, region_overlap
from .freemotion import dwell_distribution, dwell_distribution_moments, heuristic_distribution, moment_grid
from .numerics import IntegrationError

OVERLAP_LIMIT = 1e-8
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


class ConfigError(ValueError):
    pass


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    return f"{float(x):.17g}"


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _out_dir(arg: str | None) -> Path:
    path = Path(arg or ".")
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {path}: {exc}") from exc
    probe = path / ".write_probe"
    try:
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {path} is not writable: {exc}") from exc
    return path


def _read_config(path: str | None) -> dict:
    if path is None:
        raise ConfigError("--config is required for this command")
    try:
        return load_config(path)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except (ValueError, OSError) as exc:
        raise ConfigError(str(exc)) from exc


def _packet(cfg: dict, dk: float | None = None):
    units = UnitSystem(cfg["hbar"], cfg["mass"])
    try:
        region = Region(cfg["x1"], cfg["x2"])
        psi = make_gauss_cut_packet(cfg["alpha"], cfg["k0"], cfg["dk"] if dk is None else dk, cfg["x0"], units)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    overlap = region_overlap(psi, region, units)
    if overlap >= OVERLAP_LIMIT:
        raise ConfigError(
            f"packet overlaps the region initially (probability {overlap:.3g} >= {OVERLAP_LIMIT:g}); move x0 further out"
        )
    return psi, region, units, overlap


# --------------------------------------------------------------------------
# commands


def cmd_moments(args) -> int:
    units = UnitSystem(args.hbar, args.mass)
    if not (args.L and args.L > 0):
        raise ConfigError("--L must be positive")
    region = Region.of_width(args.L)
    if args.k:
        k = np.array(args.k, dtype=float)
    else:
        if args.k_min is None or args.k_max is None:
            raise ConfigError("give --k, or both --k-min and --k-max")
        if not (0 < args.k_min < args.k_max):
            raise ConfigError("need 0 < k-min < k-max")
        if args.n_k < 2:
            raise ConfigError("--n-k must be at least 2")
        k = np.linspace(args.k_min, args.k_max, args.n_k)
    if np.any(~(k > 0)):
        raise ConfigError("k must be positive")
    cols = moment_grid(k, region, units)
    names = ["T_kk", "T2_kk", "T3_kk", "pm_third", "Tkk_squared"]
    out = _out_dir(args.out)
    _write_csv(out / "moments.csv", ["k", *names, "degenerate"], zip(cols["k"], *(cols[n] for n in names), cols["degenerate"]))
    report = {
        "L": args.L,
        "hbar": units.hbar,
        "mass": units.mass,
        "rows": [
            {"k": float(cols["k"][i]), **{n: float(cols[n][i]) for n in names}, "degenerate": bool(cols["degenerate"][i])}
            for i in range(k.size)
        ],
        "second_moment_exceeds_square": bool(np.all(cols["T2_kk"] >= cols["Tkk_squared"])),
    }
    _write_json(out / "moments.json", report)
    return EXIT_OK


def cmd_distribution(args) -> int:
    cfg = _read_config(args.config)
    psi, region, units, overlap = _packet(cfg)
    rel = args.tol
    cut = ffcf.default_cutoff(psi, region, units)
    t_bar = units.mass * region.width / (units.hbar * ffcf.mean_momentum(psi))
    tau_min = float(cfg.get("tau_min", cut))
    tau_max = float(cfg.get("tau_max", 16 * t_bar))
    n_tau = int(cfg.get("n_tau", 400))
    if not (0 < tau_min < tau_max) or n_tau < 2:
        raise ConfigError("tau grid needs 0 < tau_min < tau_max and n_tau >= 2")
    tau = np.linspace(tau_min, tau_max, n_tau)

    Pi = np.array([dwell_distribution(psi, region, units, t) for t in tau])
    pi = np.asarray(heuristic_distribution(psi, region, units, tau))
    C = np.full(tau.shape, np.nan)
    ok = tau >= cut
    if np.any(ok):
        C[ok] = ffcf.correlation_function(psi, region, units, tau[ok], tau_min_cutoff=cut)

    pim, pie = dwell_distribution_moments(psi, region, units, (0, 1, 2), rel_tol=min(rel, 1e-6))
    m1 = ffcf.correlation_moment(psi, region, units, 1, rel_tol=rel)
    m2 = ffcf.correlation_moment(psi, region, units, 2, rel_tol=rel)
    hump = ffcf.hump_area(psi, region, units)
    covered = bool(tau[0] <= hump.tau_lo and tau[-1] >= hump.tau_hi)

    out = _out_dir(args.out)
    _write_csv(out / "distribution.csv", ["tau", "Pi", "pi", "C"], zip(tau, Pi, pi, C))
    summary = {
        "hump_area": hump.area,
        "hump_bounds": [hump.tau_lo, hump.tau_hi],
        "hump_covered": covered,
        "moment0_Pi": float(pim[0]),
        "moment1_Pi": float(pim[1]),
        "moment2_Pi": float(pim[2]),
        "moment1_C": m1.value,
        "moment2_C": m2.value,
        "moment1_C_error": m1.est_error,
        "moment2_C_error": m2.est_error,
        "tau_min_cutoff": cut,
        "C_rows_below_cutoff": int(np.count_nonzero(~ok)),
        "initial_overlap": overlap,
    }
    _write_json(out / "summary.json", summary)
    if not covered:
        print(f"warning: tau grid [{tau[0]:.6g}, {tau[-1]:.6g}] does not cover the hump "
              f"[{hump.tau_lo:.6g}, {hump.tau_hi:.6g}]", file=sys.stderr)
    return EXIT_OK


def cmd_approx_error(args) -> int:
    cfg = _read_config(args.config)
    dks = args.dk if args.dk else [cfg["dk"]]
    if any(not d > 0 for d in dks):
        raise ConfigError("every dk must be positive")
    if args.order < 0:
        raise ConfigError("--order must be >= 0")
    rows = []
    for dk in dks:
        psi, region, units, _ = _packet(cfg, dk)
        rep = ffcf.approximation_moments(psi, region, units, args.order)
        rows.append((dk, rep.reference, rep.moments[0], *rep.relative_errors))
    header = ["dk", "tau_D", "moment1_C0", "relative_error"] + [f"relative_error_order{j}" for j in range(1, args.order + 1)]
    out = _out_dir(args.out)
    _write_csv(out / "approx_error.csv", header, rows)
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="flat JSON or TOML config file")
    common.add_argument("--out", metavar="DIR", help="output directory (default: current)")
    common.add_argument("--tol", metavar="REL", type=float, default=1e-9, help="relative quadrature tolerance")

    p = argparse.ArgumentParser(prog="dwellflux", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("moments", parents=[common], help="on-shell moment table (T, T^2, T^3, PM third, T^2 of T)")
    m.add_argument("--k-min", type=float)
    m.add_argument("--k-max", type=float)
    m.add_argument("--n-k", type=int, default=200)
    m.add_argument("--k", type=float, action="append", help="single k (repeatable); overrides the range")
    m.add_argument("--L", type=float, required=True)
    m.add_argument("--hbar", type=float, default=1.0)
    m.add_argument("--mass", type=float, default=1.0)
    m.set_defaults(func=cmd_moments)

    d = sub.add_parser("distribution", parents=[common], help="Pi(tau), pi(tau), C(tau) and moment summary")
    d.set_defaults(func=cmd_distribution)

    a = sub.add_parser("approx-error", parents=[common], help="relative error of the C0 (+C1) first moment vs dk")
    a.add_argument("--dk", type=float, action="append", help="momentum width (repeatable); default: config dk")
    a.add_argument("--order", type=int, default=0, help="Gram-Schmidt order of the C1 correction (0: C0 only)")
    a.set_defaults(func=cmd_approx_error)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.tol is not None and not (0 < args.tol < 1 and math.isfinite(args.tol)):
        print("error: --tol must lie in (0, 1)", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationError, ArithmeticError, RuntimeError) as exc:
        print(f"error: numerical non-convergence: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
