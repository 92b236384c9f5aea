"""Command-line entry point: ``rbinvert {generate,fit,invert,oracle}``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical
failure, 4 generation cap reached.
"""

import argparse
import logging
import sys
from dataclasses import replace

import numpy as np

from .config import parse_scenario
from .errors import GenerationCapError, ValidationError
from .pipeline import fit_from_training, generate_synthetic_case, oracle_report, run_inversion

log = logging.getLogger("rbinvert")

EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_CAP = 4


def _parser():
    p = argparse.ArgumentParser(prog="rbinvert", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True)
    for verb, help_ in (
        ("generate", "draw a synthetic truth, training sets and measurements"),
        ("fit", "fit the linear metamodel from training files"),
        ("invert", "run the tempered SMC inversion"),
        ("oracle", "dense-Gaussian reference log-likelihood for a small scenario"),
    ):
        s = sub.add_parser(verb, help=help_)
        s.add_argument("--config", required=True, help="scenario YAML file")
        s.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
        s.add_argument("--out", default=None, help="output directory (overrides the config)")
        s.add_argument("--threads", type=int, default=1, help="worker threads for likelihood evaluation")
        if verb == "oracle":
            s.add_argument("--rho", required=True, help="comma-separated correlation values")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = parse_scenario(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        out = args.out or cfg.output
        if args.threads < 1:
            raise ValidationError("--threads must be at least 1")
        if args.verb == "generate":
            generate_synthetic_case(cfg, out)
        elif args.verb == "fit":
            fit_from_training(cfg, out)
        elif args.verb == "invert":
            res = run_inversion(cfg, out, threads=args.threads)
            log.info("posterior mean rho: %s", np.array2string(res.rho_mean, precision=4))
        else:
            rho = [float(v) for v in args.rho.split(",")]
            for name, value in oracle_report(cfg, out, rho).items():
                print(f"{name}\t{value!r}")
    except (ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GenerationCapError as exc:
        print(f"error: generation cap reached: {exc}", file=sys.stderr)
        return EXIT_CAP
    except (np.linalg.LinAlgError, ArithmeticError, RuntimeError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
