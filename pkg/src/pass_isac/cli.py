"""Command-line entry point: ``pass-isac run ...``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .experiments import (SWEEPS, ExperimentConfig, Scheme, emit_outputs, parse_config_text,
                          run_sweep, system_config_from_pairs)

_EXPERIMENT_KEYS = ("sweep_values", "trials", "grid_step")


def _parse_values(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(",", " ").split())


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pass-isac", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a parameter sweep and write CSV / manifest / plot data")
    run.add_argument("--config", type=Path, help="flat key = value file with system constants")
    run.add_argument("--sweep", required=True, choices=sorted(SWEEPS))
    run.add_argument("--scheme", required=True,
                     help="continuous, uniform or discrete:<Z>; comma-separate to run several")
    run.add_argument("--seeds", required=True, type=int, help="number of seeded scenarios")
    run.add_argument("--out", required=True, type=Path, help="output directory")
    run.add_argument("--validate-crb", action="store_true",
                     help="Monte-Carlo ML check of the CRB on the first seed of every cell")
    run.add_argument("--no-warm-start", action="store_true",
                     help="solve every cell from the uniform layout instead of continuing "
                          "each seed's layout along a power or SINR sweep")
    run.add_argument("--values", help="override the sweep values, e.g. '20,30,40'")
    run.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     help="override a configuration key (repeatable)")
    run.add_argument("-v", "--verbose", action="store_true")
    return p


def experiment_from_args(args) -> ExperimentConfig:
    pairs = {}
    if args.config is not None:
        try:
            pairs.update(parse_config_text(args.config.read_text()))
        except OSError as exc:
            raise SystemExit(f"cannot read config file {args.config}: {exc}")
    for item in args.set:
        if "=" not in item:
            raise SystemExit(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        pairs[k.strip()] = v.strip()
    extra = {k: pairs.pop(k) for k in _EXPERIMENT_KEYS if k in pairs}
    try:
        base = system_config_from_pairs(pairs)
    except (KeyError, ValueError) as exc:
        raise SystemExit(f"invalid configuration: {exc}")
    sweep_var, values = SWEEPS[args.sweep]
    if "sweep_values" in extra:
        values = _parse_values(extra["sweep_values"])
    if args.values:
        values = _parse_values(args.values)
    if sweep_var == "num_waveguides":
        values = tuple(int(v) for v in values)
    schemes = tuple(Scheme.parse(s).label for s in args.scheme.split(","))
    if args.seeds < 1:
        raise SystemExit("--seeds must be >= 1")
    mc = None
    if args.validate_crb:
        mc = {"trials": int(extra.get("trials", 200))}
        if "grid_step" in extra:
            mc["grid_step"] = float(extra["grid_step"])
    return ExperimentConfig(base=base, sweep_var=sweep_var, sweep_values=values, schemes=schemes,
                            seeds=tuple(range(args.seeds)), monte_carlo=mc,
                            warm_start=not args.no_warm_start)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        xcfg = experiment_from_args(args)
    except ValueError as exc:
        print(f"pass-isac: {exc}", file=sys.stderr)
        return 2

    def progress(r):
        if args.verbose:
            print(f"{r.sweep_var}={r.sweep_value} seed={r.seed} {r.scheme}: "
                  f"rcrb={r.rcrb_m:.4g} m feasible={r.feasible} ({r.wall_s:.1f} s)", file=sys.stderr)

    result = run_sweep(xcfg, progress=progress)
    files = emit_outputs(result, args.out)
    for a in result.aggregates:
        print(f"{a.sweep_var}={a.sweep_value} {a.scheme}: mean RCRB {a.rcrb_m:.4g} m "
              f"({a.feasible} feasible)")
    for kind, path in files.items():
        print(f"wrote {kind}: {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
