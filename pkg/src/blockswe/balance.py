"""Per-block cost modeling and decomposition tuning.

A rank's runtime is modeled as the sum over its blocks of a linear cost,
``slope * cells + intercept``: the per-cell term covers the stencil work,
the per-block intercept the fixed launch/dispatch overhead that makes
many-small-block assignments expensive.  Separator positions in the ordered
block list are tuned by a two-phase hill climb: phase one minimizes the
variance of predicted rank costs (smooth, always responsive), phase two
minimizes the maximum (the actual objective, but flat far from the argmax).
"""

from __future__ import annotations

import bisect
import random
import time
import warnings
from dataclasses import dataclass, field

import numpy as np


class DegenerateFitError(ValueError):
    """Cost samples do not span at least two distinct cell counts."""


class PlanError(ValueError):
    """A decomposition plan is structurally invalid or infeasible."""


@dataclass(frozen=True)
class CostModel:
    """Linear per-block runtime model (microseconds)."""

    slope: float          # microseconds per cell
    intercept: float      # microseconds per block
    r_squared: float = float("nan")

    def block_cost(self, cells) -> np.ndarray:
        return self.slope * np.asarray(cells, dtype=float) + self.intercept


# Reference coefficients from a GPU microbenchmark of the momentum kernel;
# shipped so decomposition experiments can run on intercept-dominated
# regimes without measuring anything locally.
GPU_REFERENCE_MODEL = CostModel(slope=1.09e-4, intercept=46.2, r_squared=0.942)


def fit_cost_model(samples) -> CostModel:
    """Ordinary least squares fit of (cell_count, runtime_us) samples.

    A negative fitted intercept is clamped to zero with a warning (the
    reported R^2 still describes the unclamped line).
    """
    pts = [(float(x), float(y)) for x, y in samples]
    if len({x for x, _ in pts}) < 2:
        raise DegenerateFitError(
            "need samples at at least two distinct cell counts")
    x = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        r2 = 1.0 if ss_res <= 1e-30 else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    if intercept < 0.0:
        warnings.warn(
            f"fitted intercept {intercept:.4g} us is negative; clamping to 0")
        intercept = 0.0
    return CostModel(slope=float(slope), intercept=float(intercept),
                     r_squared=r2)


def save_cost_model(model: CostModel, path: str):
    with open(path, "w") as f:
        f.write(f"slope = {model.slope!r}\n")
        f.write(f"intercept = {model.intercept!r}\n")
        f.write(f"r_squared = {model.r_squared!r}\n")


def load_cost_model(path: str) -> CostModel:
    values = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, val = line.partition("=")
            values[key.strip()] = float(val)
    return CostModel(slope=values["slope"], intercept=values["intercept"],
                     r_squared=values.get("r_squared", float("nan")))


# ---------------------------------------------------------------------------
# Decomposition plans
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DecompositionPlan:
    """Consecutive-block assignment of an ordered block list to ranks.

    ``cells`` is the block sequence (cell counts, levels concatenated);
    ``separators`` are the n_ranks - 1 strictly increasing cut positions in
    ``(0, n_blocks)``: rank r owns blocks ``separators[r-1]`` (0 for the
    first rank) up to ``separators[r]``.
    """

    cells: tuple[int, ...]
    separators: tuple[int, ...]

    def __post_init__(self):
        n = len(self.cells)
        if n == 0:
            raise PlanError("plan needs at least one block")
        last = 0
        for s in self.separators:
            if not (0 < s < n):
                raise PlanError(f"separator {s} outside (0, {n})")
            if s <= last:
                raise PlanError("separators must be strictly increasing")
            last = s

    @property
    def n_blocks(self) -> int:
        return len(self.cells)

    @property
    def n_ranks(self) -> int:
        return len(self.separators) + 1

    def rank_spans(self) -> list[tuple[int, int]]:
        cuts = (0, *self.separators, len(self.cells))
        return [(cuts[r], cuts[r + 1]) for r in range(self.n_ranks)]

    def rank_of(self, block_index: int) -> int:
        return bisect.bisect_right(self.separators, block_index)

    def blocks_of(self, rank: int) -> range:
        lo, hi = self.rank_spans()[rank]
        return range(lo, hi)


def predict_rank_cost(plan: DecompositionPlan, model: CostModel, rank: int) -> float:
    """Predicted runtime of one rank: sum of its blocks' linear costs."""
    lo, hi = plan.rank_spans()[rank]
    return float(sum(model.slope * c + model.intercept
                     for c in plan.cells[lo:hi]))


def rank_costs(plan: DecompositionPlan, model: CostModel) -> np.ndarray:
    return np.array([predict_rank_cost(plan, model, r)
                     for r in range(plan.n_ranks)])


def equal_cell_plan(cells, n_ranks: int) -> DecompositionPlan:
    """Baseline split equalizing per-rank cell totals.

    Greedy prefix cuts: the r-th separator lands where the running cell
    total is closest to r/n_ranks of the grand total, while keeping every
    remaining rank non-empty.
    """
    cells = tuple(int(c) for c in cells)
    n = len(cells)
    if n_ranks > n:
        raise PlanError(f"{n_ranks} ranks infeasible for {n} blocks")
    if n_ranks < 1:
        raise PlanError("need at least one rank")
    prefix = np.concatenate([[0], np.cumsum(cells)])
    total = prefix[-1]
    seps = []
    prev = 0
    for r in range(1, n_ranks):
        target = total * r / n_ranks
        lo = prev + 1
        hi = n - (n_ranks - r)          # leave one block per remaining rank
        pos = min(range(lo, hi + 1), key=lambda p: abs(prefix[p] - target))
        seps.append(pos)
        prev = pos
    return DecompositionPlan(cells=cells, separators=tuple(seps))


@dataclass(eq=False)
class OptimizerTrace:
    """Per-iteration scores of both hill-climbing phases."""

    initial_separators: tuple[int, ...] = ()
    phase1_scores: list[float] = field(default_factory=list)
    phase2_scores: list[float] = field(default_factory=list)
    accepted: int = 0


def _hill_climb(seps, n_blocks, score_fn, iters, rng, scores, trace):
    current = score_fn(seps)
    scores.append(current)
    accepted = 0
    for _ in range(iters):
        k = rng.randrange(len(seps))
        lo = seps[k - 1] if k > 0 else 0
        hi = seps[k + 1] if k + 1 < len(seps) else n_blocks
        old = seps[k]
        seps[k] = rng.randint(lo + 1, hi - 1)
        candidate = score_fn(seps)
        if candidate < current:
            current = candidate
            accepted += 1
        else:
            seps[k] = old
        scores.append(current)
    trace.accepted += accepted
    return seps


def optimize_plan_detailed(cells, n_ranks: int, model: CostModel,
                           iters_phase1: int = 5000, iters_phase2: int = 5000,
                           seed: int = 0):
    """Two-phase hill climb over separator positions; returns (plan, trace).

    Each iteration moves one uniformly chosen separator to a uniformly
    random admissible position strictly between its neighbors and keeps the
    move only on strict score improvement.  Phase one scores by variance of
    predicted rank costs, phase two by their maximum.  Phase two starts
    from whichever of the random initial plan and the phase-one result has
    the lower maximum, so the returned plan never scores worse than the
    initial one.  Deterministic for a given seed.
    """
    cells = tuple(int(c) for c in cells)
    n = len(cells)
    if n_ranks > n:
        raise PlanError(f"{n_ranks} ranks infeasible for {n} blocks")
    if n_ranks < 1:
        raise PlanError("need at least one rank")
    trace = OptimizerTrace()
    if n_ranks == 1:
        plan = DecompositionPlan(cells=cells, separators=())
        trace.phase2_scores.append(_max_cost(cells, (), model))
        return plan, trace

    rng = random.Random(seed)
    prefix = np.concatenate([[0], np.cumsum(cells)])

    def costs(seps) -> np.ndarray:
        cuts = np.array([0, *seps, n])
        spans = np.diff(cuts)
        return model.slope * np.diff(prefix[cuts]) + model.intercept * spans

    def var_score(seps) -> float:
        return float(np.var(costs(seps)))

    def max_score(seps) -> float:
        return float(np.max(costs(seps)))

    init = sorted(rng.sample(range(1, n), n_ranks - 1))
    trace.initial_separators = tuple(init)

    seps = _hill_climb(list(init), n, var_score, iters_phase1,
                       rng, trace.phase1_scores, trace)
    if max_score(init) < max_score(seps):
        seps = list(init)
    seps = _hill_climb(seps, n, max_score, iters_phase2,
                       rng, trace.phase2_scores, trace)
    return DecompositionPlan(cells=cells, separators=tuple(seps)), trace


def _max_cost(cells, seps, model) -> float:
    plan = DecompositionPlan(cells=tuple(cells), separators=tuple(seps))
    return float(np.max(rank_costs(plan, model)))


def optimize_plan(cells, n_ranks: int, model: CostModel,
                  iters_phase1: int = 5000, iters_phase2: int = 5000,
                  seed: int = 0) -> DecompositionPlan:
    plan, _ = optimize_plan_detailed(cells, n_ranks, model,
                                     iters_phase1, iters_phase2, seed)
    return plan


def concat_plans(plans) -> DecompositionPlan:
    """Join per-level plans into one global plan with forced separators at
    level boundaries (one rank never spans two levels)."""
    cells: list[int] = []
    seps: list[int] = []
    offset = 0
    for p in plans:
        cells.extend(p.cells)
        seps.extend(offset + s for s in p.separators)
        offset += p.n_blocks
        seps.append(offset)
    seps.pop()                      # no separator after the last level
    return DecompositionPlan(cells=tuple(cells), separators=tuple(seps))


# ---------------------------------------------------------------------------
# Host microbenchmark
# ---------------------------------------------------------------------------


def measure_momentum_cost(cell_counts, repeats: int = 5, seed: int = 0):
    """Time the momentum kernel per block on this host.

    Returns (cell_count, microseconds) samples suitable for
    :func:`fit_cost_model`.  Square blocks, flat 10 m basin, small random
    initial displacement; the reported time is the median over ``repeats``.
    """
    from .grid import Block
    from .kernels import BlockState, update_mass, update_momentum

    rng = np.random.default_rng(seed)
    samples = []
    for cells in cell_counts:
        ni = max(3, int(round(np.sqrt(cells))))
        nj = max(3, cells // ni)
        block = Block(block_id=0, origin=(0.0, 0.0), ni=ni, nj=nj,
                      h=np.full((ni, nj), 10.0))
        state = BlockState(block)
        eta0 = 0.01 * rng.standard_normal((ni, nj))
        state.set_initial_eta(eta0, 1e-5)
        update_mass(state, 10.0, 0.1, 1e-5)
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter_ns()
            update_momentum(state, 10.0, 0.1, 9.81, 1e-5)
            times.append((time.perf_counter_ns() - t0) / 1e3)
        samples.append((ni * nj, float(np.median(times))))
    return samples
