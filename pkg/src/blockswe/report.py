"""Run outputs: per-level rasters of the output accumulators, timing CSV.

Raster format: one plain-text file per accumulator per level.  The first
line is ``ni nj dx x0 y0`` (level mosaic shape, cell size, origin); the
remaining ``ni`` lines hold the ``nj`` y-values of each x-index, row-major
over the x axis.  Cells not covered by any block are ``nan``.  Identical
runs produce byte-identical files.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .grid import GridLevel, NestedGridSystem

ACCUMULATOR_FIELDS = ("max_eta", "max_speed", "max_inundation")


@dataclass(eq=False)
class RankTiming:
    rank: int
    routines: dict
    total: float


@dataclass(eq=False)
class RunReport:
    """Per-rank, per-routine wall times for one run."""

    steps: int
    n_ranks: int
    ranks: list[RankTiming] = field(default_factory=list)

    def routine_seconds(self, routine: str) -> list[float]:
        return [r.routines.get(routine, 0.0) for r in self.ranks]


def level_mosaic(level: GridLevel, per_block_field) -> tuple[np.ndarray, str]:
    """Assemble block arrays into one level-wide array plus its header line.

    ``per_block_field(block)`` returns the (ni, nj) array to paste.
    """
    starts = {b.block_id: b.cell_start(level.dx) for b in level.blocks}
    imin = min(s[0] for s in starts.values())
    jmin = min(s[1] for s in starts.values())
    imax = max(starts[b.block_id][0] + b.ni for b in level.blocks)
    jmax = max(starts[b.block_id][1] + b.nj for b in level.blocks)
    mosaic = np.full((imax - imin, jmax - jmin), np.nan)
    for b in level.blocks:
        i0, j0 = starts[b.block_id]
        mosaic[i0 - imin:i0 - imin + b.ni, j0 - jmin:j0 - jmin + b.nj] = \
            per_block_field(b)
    header = (f"{imax - imin} {jmax - jmin} {level.dx:.17g} "
              f"{imin * level.dx:.17g} {jmin * level.dx:.17g}")
    return mosaic, header


def write_raster(path: str, mosaic: np.ndarray, header: str):
    with open(path, "w") as f:
        f.write(header + "\n")
        np.savetxt(f, mosaic, fmt="%.17g")


def read_raster(path: str) -> tuple[np.ndarray, tuple]:
    """Load a raster back; returns (array, (ni, nj, dx, x0, y0))."""
    with open(path) as f:
        parts = f.readline().split()
        ni, nj = int(parts[0]), int(parts[1])
        dx, x0, y0 = float(parts[2]), float(parts[3]), float(parts[4])
        values = np.loadtxt(f)
    arr = np.asarray(values, dtype=float).reshape(ni, nj)
    return arr, (ni, nj, dx, x0, y0)


def emit_rasters(system: NestedGridSystem, accumulators: dict,
                 out_dir: str, tag: str = "") -> list[str]:
    """Write one raster per accumulator per level; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for lvl in system.levels:
        for name in ACCUMULATOR_FIELDS:
            mosaic, header = level_mosaic(
                lvl, lambda b, n=name: getattr(accumulators[b.block_id], n))
            path = os.path.join(out_dir, f"{name}_L{lvl.level_index}{tag}.txt")
            write_raster(path, mosaic, header)
            paths.append(path)
    return paths


def write_timing_csv(report: RunReport, path: str):
    """Timing breakdown, one row per rank plus a totals row."""
    from .runner import ROUTINES

    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["rank", "steps", *ROUTINES, "total"])
        for rt in report.ranks:
            w.writerow([rt.rank, report.steps,
                        *[f"{rt.routines.get(r, 0.0):.6f}" for r in ROUTINES],
                        f"{rt.total:.6f}"])
        w.writerow(["all", report.steps,
                    *[f"{sum(report.routine_seconds(r)):.6f}" for r in ROUTINES],
                    f"{sum(rt.total for rt in report.ranks):.6f}"])


def write_rank_cost_csv(path: str, plans: dict, model):
    """Per-rank predicted costs for one or more plans, side by side.

    ``plans`` maps a column label to a DecompositionPlan; all plans must
    share the rank count.
    """
    from .balance import rank_costs

    labels = list(plans)
    costs = {label: rank_costs(plans[label], model) for label in labels}
    n_ranks = len(next(iter(costs.values())))
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["rank", *[f"{lb}_cost_us" for lb in labels],
                    *[f"{lb}_blocks" for lb in labels]])
        for r in range(n_ranks):
            w.writerow([r,
                        *[f"{costs[lb][r]:.3f}" for lb in labels],
                        *[len(plans[lb].blocks_of(r)) for lb in labels]])
        w.writerow(["max", *[f"{costs[lb].max():.3f}" for lb in labels],
                    *["" for _ in labels]])
