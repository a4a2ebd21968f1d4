"""Freeze the empirical constants used by the statistical tests.

Run once from the repository root::

    python3 scripts/calibrate.py [--out tests/calibration.json]

Calibration uses seeds 1000 and up; the tests use seeds 0..49, so the
frozen constants are never fitted to the runs that check them.
"""

from __future__ import annotations

import argparse
import json
import math
import time

import numpy as np

from treeclust.cluster_tree import estimate_cs, true_split_levels
from treeclust.evaluation import calibrate_constants, rate_experiment
from treeclust.kde import SPHERICAL, build_valid_kernel
from treeclust.synthetic import get_spec, grid

CAL_SEEDS = list(range(1000, 1010))
RATE_SEEDS = list(range(1000, 1050))
N_GRID = [250, 500, 1000, 2000, 4000]


def budget_entry(name: str, order: int | None, alpha: float, n_grid, h_rule=None, step=None) -> dict:
    spec = get_spec(name)
    kernel = SPHERICAL if order is None else build_valid_kernel(order, spec.dim)
    consts = calibrate_constants(
        spec, kernel, n_grid, CAL_SEEDS, alpha=alpha, bandwidth_c=1.0, h_rule=h_rule, step=step
    )
    return {
        "density": name,
        "kernel_order": order,
        "alpha": alpha,
        "bandwidth_c": 1.0,
        "n_grid": list(n_grid),
        "seeds": CAL_SEEDS,
        **consts,
    }


def cs_entry(name: str, alpha: float, step: float) -> dict:
    gd = grid(get_spec(name), step)
    split = true_split_levels(gd)[0]
    top = float(gd.values.max())
    deltas = np.geomspace(1e-3 * (top - split.level), 0.95 * (top - split.level), 60)
    return {
        "density": name,
        "alpha": alpha,
        "grid_step": step,
        "split_level": split.level,
        "c_S": estimate_cs(gd, split, alpha, deltas),
    }


def dbscan_delta_entry() -> dict:
    # delta_n = C log n / n^(1/3); C is the smallest constant that covers every n of the sweep
    res = rate_experiment(get_spec("two_bump"), "dbscan", N_GRID[1:], RATE_SEEDS, alpha=1.0)
    ratios = {r.n: r.delta_min / (math.log(r.n) * r.n ** (-1.0 / 3.0)) for r in res.rows}
    return {
        "density": "two_bump",
        "alpha": 1.0,
        "seeds": RATE_SEEDS,
        "delta_min": {str(r.n): r.delta_min for r in res.rows},
        "ratio": {str(k): v for k, v in ratios.items()},
        "C": max(ratios.values()),
    }


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="tests/calibration.json")
    args = parser.parse_args()
    t0 = time.time()
    gap = get_spec("gap_disk_square")
    eps = gap.facts["eps"]
    out = {
        "budgets": {
            "two_bump": budget_entry("two_bump", None, 1.0, N_GRID),
            "spline_pair_a2": budget_entry("spline_pair_a2", 2, 2.0, N_GRID),
            "gaussian_two_bump": budget_entry("gaussian_two_bump", 2, 2.0, N_GRID),
            "gap_disk_square": {
                **budget_entry(
                    "gap_disk_square", None, 1.0, [1000, 3000, 4000],
                    h_rule=lambda n: (math.log(n) / (n * eps ** 2)) ** 0.5, step=0.02,
                ),
                "bandwidth_rule": "(log n / (n eps^2))^(1/2)",
            },
        },
        "c_S": {
            "spline_pair_a2": cs_entry("spline_pair_a2", 2.0, 0.001),
            "gaussian_two_bump": cs_entry("gaussian_two_bump", 2.0, 0.001),
        },
        "dbscan_delta": dbscan_delta_entry(),
    }
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {args.out} in {time.time() - t0:.0f} s")


if __name__ == "__main__":
    main()
