"""Command-line entry point: ``platoon-dos <command>``.

Exit codes: 0 success, 1 invalid input or config, 2 runtime contract violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import export
from .errors import ConfigError, ContractViolation, PlatoonError
from .resilience import elect_leader, recovery_phases
from .scenario import certificate_for, load_config, run
from .stability import LmiProblem, search_certificate
from .topology import NOMINAL, TopologyPhase

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("platoon_dos")


def _cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out or cfg.output_dir)
    trace = run(cfg)
    files = export.write_all(trace, out)
    s = trace.summary
    print(f"wrote {len(files)} files to {out}")
    print(f"branch={s['branch']} detection_time={s['detection_time']} final_phase={s['final_phase']} "
          f"final_leader={s['final_leader'] + 1}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    cfg = load_config(args.path)
    print(f"{args.path}: ok (n={cfg.n}, steps={cfg.steps}, "
          f"C={cfg.resilience.C:g}, attack={'none' if cfg.attack is None else cfg.attack.kind})")
    return EXIT_OK


def _phase_reports(cfg) -> dict:
    if cfg.attack is None:
        return {}
    out = {NOMINAL: certificate_for(cfg, cfg.nominal, recovered=False)}
    # elect on the steady formation; the run elects on live positions
    leader = elect_leader(cfg.nominal, cfg.formation, cfg.attack.victim)
    phases = {k: TopologyPhase(k, v) for k, v in cfg.phases.items() if k != NOMINAL}
    phases = phases or recovery_phases(cfg.nominal, cfg.attack.victim, leader)
    for k, ph in phases.items():
        out[k] = certificate_for(cfg, ph.topology, recovered=True)
    return out


def _cmd_stability(args) -> int:
    if args.matrices:
        try:
            doc = json.loads(Path(args.matrices).read_text())
            problem = LmiProblem(np.array(doc["Psi_tilde"], dtype=float),
                                 np.array(doc["Psi_tilde1"], dtype=float),
                                 float(doc["U"]), float(doc["d"]))
        except (OSError, KeyError, TypeError, ValueError) as exc:
            print(f"error: {args.matrices}: {exc}", file=sys.stderr)
            return EXIT_INVALID
        res = search_certificate(problem, budget=args.budget, seed=args.seed)
        report = {"matrices": str(args.matrices), "result": res.to_dict()}
    else:
        cfg = load_config(args.config)
        if cfg.attack is None:
            print("error: config has no attack; nothing to certify", file=sys.stderr)
            return EXIT_INVALID
        report = {"config": str(args.config), "U": cfg.attack.U, "d": cfg.attack.d,
                  "phases": {k: v.to_dict() for k, v in _phase_reports(cfg).items()}}
    print(json.dumps(export._jsonable(report), indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_plot(args) -> int:
    try:
        data = export.read_trace_csv(args.trace)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    for p in export.write_plots(data, args.out):
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="platoon-dos", description="Platoon DoS simulator.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a scenario and write trace, events, summary and plots")
    s.add_argument("--config", required=True)
    s.add_argument("--out", help="output directory (default: the config's output_dir)")
    s.set_defaults(func=_cmd_simulate)

    v = sub.add_parser("validate-config", help="parse and cross-validate a config")
    v.add_argument("path")
    v.set_defaults(func=_cmd_validate)

    c = sub.add_parser("stability-check", help="search LMI certificates and print a JSON report")
    g = c.add_mutually_exclusive_group(required=True)
    g.add_argument("--config")
    g.add_argument("--matrices", help='JSON with "Psi_tilde", "Psi_tilde1", "U", "d"')
    c.add_argument("--budget", type=int, default=2000)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=_cmd_stability)

    pl = sub.add_parser("plot", help="render SVG charts from a trace.csv")
    pl.add_argument("--trace", required=True)
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=_cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        where = f"{exc.path}: " if exc.path else ""
        for problem in exc.problems:
            print(f"error: {where}{problem}", file=sys.stderr)
        return EXIT_INVALID
    except ContractViolation as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except PlatoonError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
