#!/usr/bin/env python3
"""Convergence study on the unit circle: P0 densities, reduced
integration, third-order time stepping.

Runs the ladder N = M in {20, 40, 80, 160} by default (about half a
minute), prints the error table, and writes it as CSV.  The errors are
measured at three points interior to the circle at the final time
against the closed-form reference solution; both rates should settle
near 3.

``--extended`` appends the (320, 320) row; note the stored convolution
weights grow as (M + 1) (2N)^2 complex numbers, about 2 GB at 320.
"""

import argparse

from stokesbem import BoundaryCurve, ConstraintMode, ProblemConfig
from stokesbem import manufactured_dirichlet_data
from stokesbem.cli import _converge_table_lines, _write_convergence_csv
from stokesbem.verification import SweepProblem, convergence_sweep

OBSERVATION_POINTS = [(0.0, 0.0), (0.5, 0.5), (-0.6, 0.1)]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--extended", action="store_true",
        help="append the (320, 320) row (minutes of runtime, ~2 GB)",
    )
    parser.add_argument(
        "--output", default="convergence_circle.csv",
        help="CSV output path (default: %(default)s)",
    )
    args = parser.parse_args()

    ladder = [(20, 20), (40, 40), (80, 80), (160, 160)]
    if args.extended:
        ladder.append((320, 320))

    problem = SweepProblem(
        curve=BoundaryCurve.circle(1.0),
        kind="P0",
        constraint=ConstraintMode.none,
        order=3,
        data=manufactured_dirichlet_data(),
        observation_points=OBSERVATION_POINTS,
        cfg=ProblemConfig(),
        assembly="reduced",
    )
    records = convergence_sweep(problem, ladder)
    print("\n".join(_converge_table_lines(records)))
    _write_convergence_csv(args.output, records)
    print(f"wrote {args.output}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
