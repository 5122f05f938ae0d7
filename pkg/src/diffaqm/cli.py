"""Command-line entry point.

    diffaqm run <config> [--model diffusion|des|both] [--reps R] [--seed S]
                         [--workers W] [--out DIR]
    diffaqm preset list
    diffaqm sweep <config> --param NAME --values v1,v2,...

Exit status: 0 success, 2 configuration error, 3 numerical failure.  On
failure a one-line JSON error record is printed to stderr.
"""
from __future__ import annotations

import argparse
import json
import sys

from .harness import PRESETS, ConfigError, load_config, run_experiment, run_sweep

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="diffaqm", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config")
        p.add_argument("--model", choices=("diffusion", "des", "both"))
        p.add_argument("--reps", type=int, dest="replications")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--out", dest="output")

    common(sub.add_parser("run", help="run one experiment"))
    preset = sub.add_parser("preset", help="inspect built-in presets")
    preset.add_argument("action", choices=("list",))
    sweep = sub.add_parser("sweep", help="repeat an experiment over parameter values")
    common(sweep)
    sweep.add_argument("--param", required=True)
    sweep.add_argument("--values", required=True)
    return ap


def _overrides(args) -> dict:
    return {k: getattr(args, k) for k in ("model", "replications", "seed", "workers", "output")
            if getattr(args, k) is not None}


def _fail(kind: str, message: str, code: int, **extra) -> int:
    print(json.dumps({"error": kind, "reason": message, **extra}, ensure_ascii=False), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "preset":
        for name, tables in PRESETS.items():
            params = {**tables["queue"], **tables["controller"]}
            print(name, " ".join(f"{k}={v}" for k, v in params.items()))
        return EXIT_OK
    try:
        spec = load_config(args.config).with_overrides(**_overrides(args))
        if args.command == "run":
            report = run_experiment(spec)
            for model, s in report.models.items():
                print(f"{model}: mean queue {s.mean_queue:.4f} ± {s.stderr:.4f} "
                      f"(R={s.replications}, losses {s.total_losses})")
        else:
            values = [v.strip() for v in args.values.split(",") if v.strip()]
            sweep = run_sweep(spec, args.param, values)
            for row in sweep["results"]:
                cells = ", ".join(f"{m} {row[m]['mean_queue']:.4f}" for m in spec.models)
                print(f"{sweep['param']}={row['value']}: {cells}")
    except ConfigError as exc:
        return _fail("config", exc.reason, EXIT_CONFIG, field=exc.field)
    except ArithmeticError as exc:
        return _fail("numerical", str(exc), EXIT_NUMERIC, type=type(exc).__name__)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
