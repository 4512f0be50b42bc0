#!/usr/bin/env python3
"""How well the relevance regression recovers known coefficients.

Generates mask/utility datasets whose utilities are a planted linear
function of the mask bits plus second-order module interactions, fits
the under-determined regression at several sample budgets, and prints
the Kendall tau between recovered and true coefficients. Also contrasts
complement-paired mask batches with independent ones: interactions that
are symmetric under mask complement cancel inside pairs, so paired
batches recover the ranking from fewer evaluations.

Usage:
  python3 demos/regression_recovery.py [--candidates 36] [--seeds 5]
"""

import argparse
import pathlib
import sys

import numpy as np

from bonsai_forge.regression import fit, kendall_tau

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent / "tests"))
from toys import planted_linear  # noqa: E402  (shared planted construction)


def recover(seed, pairs, paired, n_candidates):
    data, beta = planted_linear(seed, n_candidates=n_candidates, pairs=pairs,
                                paired=paired)
    scores = fit(data, 1e-4, 0.1, data.n_rows, epochs=3000, seed=seed)
    return kendall_tau(scores.beta, beta)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--candidates", type=int, default=36)
    ap.add_argument("--seeds", type=int, default=5)
    args = ap.parse_args()

    print(f"{'rows':>6} {'paired tau':>12} {'unpaired tau':>13}")
    for pairs in (9, 18, 36, 72):
        taus = {True: [], False: []}
        for seed in range(args.seeds):
            for paired in (True, False):
                taus[paired].append(
                    recover(seed, pairs, paired, args.candidates))
        print(f"{2 * pairs:>6} {np.median(taus[True]):>12.3f} "
              f"{np.median(taus[False]):>13.3f}")

    print(f"\n(medians over {args.seeds} seeds, {args.candidates} candidate "
          f"modules; rows = total utility evaluations)")
    print("note how paired batches dominate once rows exceed the candidate")
    print("count: pair differences see the linear signal noise-free")


if __name__ == "__main__":
    main()
