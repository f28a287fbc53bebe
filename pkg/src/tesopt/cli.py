"""Command-line front end: ``tesopt run``, ``tesopt sweep``, ``tesopt toy``."""
from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .config import ConfigError, load_config
from . import pipeline

EXIT_OK, EXIT_CONFIG, EXIT_NOT_CONVERGED = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tesopt", description="Multi-electrode tDCS current optimization on layered phantoms.")
    p.add_argument("--seed", type=int, default=0, help="seed for randomized utilities")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario and write protocol, metrics, field and log")
    run.add_argument("config")
    run.add_argument("--out", help="output directory (overrides [outputs].directory)")

    sw = sub.add_parser("sweep", help="optimize for a ring of targets and tabulate delta, k and ||I||")
    sw.add_argument("config")
    sw.add_argument("--targets", type=int, default=8, help="number of ring targets K")
    sw.add_argument("--orientation", choices=["tangential", "radial"])
    sw.add_argument("--epsilons", help="comma-separated list of state bounds (A/m^2)")
    sw.add_argument("--radius-mm", type=float, help="ring radius (default: distance of the configured target)")
    sw.add_argument("--out", help="output directory")

    toy = sub.add_parser("toy", help="random small instance: ADMM against the reference solver")
    toy.add_argument("--electrodes", type=int, default=4)
    toy.add_argument("--elements", type=int, default=12)
    return p


def _toy(args) -> int:
    from .admm import AdmmParams, block_norms, reference_solve, run_admm

    rng = np.random.default_rng(args.seed)
    n, N, d = args.electrodes - 1, args.elements, 2
    B = rng.normal(size=(d * N, n))
    w = np.ones(N)
    w[0] = 1e-3
    e = np.zeros(d * N)
    e[:d] = rng.normal(size=d)
    e[:d] /= np.linalg.norm(e[:d])
    params = AdmmParams(alpha=0.05, beta=0.05, epsilon=1.0, tol=1e-9, max_iter=100_000)
    res = run_admm(B, params, w, e)
    ref = reference_solve(B, params, w, e)
    feas = block_norms(B @ res.currents, w, d).max()
    print(f"admm objective {res.objective:.10g} ({res.n_iter} iterations, converged={res.converged})")
    print(f"reference objective {ref.objective:.10g}")
    print(f"max weighted block norm {feas:.10g} (epsilon {params.epsilon})")
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "toy":
        return _toy(args)
    try:
        cfg = load_config(args.config, out_dir=args.out)
        if args.command == "run":
            return pipeline.run_scenario(cfg)
        epsilons = None
        if args.epsilons:
            try:
                epsilons = [float(v) for v in args.epsilons.split(",")]
            except ValueError:
                raise ConfigError("--epsilons", f"not a comma-separated list of numbers: {args.epsilons!r}")
            if any(v <= 0 for v in epsilons):
                raise ConfigError("--epsilons", "every epsilon must be positive")
        if args.targets < 1:
            raise ConfigError("--targets", "K must be at least 1")
        radius = None if args.radius_mm is None else args.radius_mm * 1e-3
        return pipeline.sweep(cfg, args.targets, args.orientation, epsilons, radius)
    except ConfigError as exc:
        print(f"tesopt: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (KeyError, ValueError) as exc:
        print(f"tesopt: invalid scenario: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
