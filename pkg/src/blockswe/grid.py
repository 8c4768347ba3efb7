"""Nested grid hierarchy: levels, blocks, bathymetry and structural validation.

A system is a list of grid levels with a 3:1 refinement ratio between
consecutive levels.  Each level is a set of rectangular blocks on a common
lattice (cell size ``dx``, origins at integer multiples of ``dx``).  Child
blocks are fully enclosed by the union of the parent level's blocks and
aligned to parent cell boundaries.

Bathymetry convention: ``h > 0`` is still-water depth (water), ``h < 0`` is
land elevation above datum.  Total water depth is ``D = h + eta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

REFINEMENT_RATIO = 3
DEFAULT_GRAVITY = 9.81
DEFAULT_WET_THRESHOLD = 1e-5
DEFAULT_MANNING_N = 0.025

_SIDES = ("west", "east", "south", "north")


class GridStructureError(ValueError):
    """A grid system cannot be constructed as requested."""


class ScaleUnderflowError(GridStructureError):
    """A scaled synthetic system would produce a block below 3x3 cells."""


@dataclass(eq=False)
class Block:
    """One rectangular patch of cells within a grid level.

    ``h`` holds per-cell still-water depth with shape ``(ni, nj)``; axis 0 is
    x, axis 1 is y.  ``manning_n`` may be a scalar or an ``(ni, nj)`` array.
    """

    block_id: int
    origin: tuple[float, float]
    ni: int
    nj: int
    h: np.ndarray
    manning_n: float | np.ndarray = DEFAULT_MANNING_N

    @property
    def cell_count(self) -> int:
        return self.ni * self.nj

    def cell_start(self, dx: float) -> tuple[int, int]:
        """Block origin in lattice (cell) units of its own level."""
        return (int(round(self.origin[0] / dx)), int(round(self.origin[1] / dx)))

    def extent(self) -> tuple[float, float]:
        return (self.origin[0], self.origin[1])


@dataclass(eq=False)
class GridLevel:
    """An ordered set of blocks sharing one cell size."""

    level_index: int
    dx: float
    blocks: list[Block] = field(default_factory=list)

    @property
    def cell_count(self) -> int:
        return sum(b.cell_count for b in self.blocks)


@dataclass(eq=False)
class NestedGridSystem:
    """Hierarchy of grid levels, coarsest first."""

    levels: list[GridLevel] = field(default_factory=list)

    def all_blocks(self) -> list[tuple[GridLevel, Block]]:
        """Blocks in global order: levels ascending, block order within."""
        return [(lvl, b) for lvl in self.levels for b in lvl.blocks]

    @property
    def n_blocks(self) -> int:
        return sum(len(lvl.blocks) for lvl in self.levels)

    @property
    def cell_count(self) -> int:
        return sum(lvl.cell_count for lvl in self.levels)

    def level_of_block(self, block_id: int) -> GridLevel:
        for lvl in self.levels:
            for b in lvl.blocks:
                if b.block_id == block_id:
                    return lvl
        raise KeyError(f"no block with id {block_id}")


@dataclass(eq=False)
class BoundaryConditions:
    """Outer-boundary condition per edge of the coarsest level.

    Each edge is either ``"reflective"`` (closed wall, zero normal flux) or
    ``"radiation"`` (zero-gradient water level, outgoing flux copied).
    """

    west: str = "reflective"
    east: str = "reflective"
    south: str = "reflective"
    north: str = "reflective"

    def __post_init__(self):
        for side in _SIDES:
            kind = getattr(self, side)
            if kind not in ("reflective", "radiation"):
                raise ValueError(f"unknown boundary kind {kind!r} for {side}")


@dataclass(eq=False)
class InitialCondition:
    """Initial water-level displacement.

    ``gaussian``: eta0 = amplitude * exp(-((x-cx)^2+(y-cy)^2) / sigma^2),
    sampled at cell centers on every level.  ``rest`` leaves eta0 = 0.
    """

    kind: str = "rest"
    amplitude: float = 0.0
    sigma: float = 1.0
    center: tuple[float, float] = (0.0, 0.0)

    def eta0(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        if self.kind == "rest":
            return np.zeros(np.broadcast(x, y).shape)
        if self.kind == "gaussian":
            r2 = (x - self.center[0]) ** 2 + (y - self.center[1]) ** 2
            return self.amplitude * np.exp(-r2 / self.sigma**2)
        raise ValueError(f"unknown initial condition kind {self.kind!r}")


@dataclass(eq=False)
class SimulationConfig:
    """Run-level numerical settings shared by all levels."""

    dt: float
    total_duration: float = 0.0
    g: float = DEFAULT_GRAVITY
    wet_threshold: float = DEFAULT_WET_THRESHOLD
    boundary: BoundaryConditions = field(default_factory=BoundaryConditions)
    initial: InitialCondition = field(default_factory=InitialCondition)
    rank_budgets: list[int] | None = None

    @property
    def n_steps(self) -> int:
        return int(round(self.total_duration / self.dt))


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    kind: str
    level_index: int
    block_id: int | None
    message: str

    def __str__(self) -> str:
        where = f"level {self.level_index}"
        if self.block_id is not None:
            where += f" block {self.block_id}"
        return f"[{self.kind}] {where}: {self.message}"


@dataclass(eq=False)
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, kind: str, level_index: int, block_id: int | None, message: str):
        self.violations.append(Violation(kind, level_index, block_id, message))

    def __str__(self) -> str:
        if self.ok:
            return "all checks passed"
        return "\n".join(str(v) for v in self.violations)


def _is_multiple(value: float, unit: float, tol: float = 1e-9) -> bool:
    q = value / unit
    return abs(q - round(q)) <= tol * max(1.0, abs(q))


def _block_rect(block: Block, dx: float) -> tuple[int, int, int, int]:
    """(i0, j0, i1, j1) in lattice units; half-open cell index box."""
    i0, j0 = block.cell_start(dx)
    return (i0, j0, i0 + block.ni, j0 + block.nj)


def _subtract_rect(rects, cut):
    """Remove ``cut`` from every rect in ``rects`` (all half-open int boxes)."""
    out = []
    cx0, cy0, cx1, cy1 = cut
    for (x0, y0, x1, y1) in rects:
        if cx0 >= x1 or cx1 <= x0 or cy0 >= y1 or cy1 <= y0:
            out.append((x0, y0, x1, y1))
            continue
        ix0, ix1 = max(x0, cx0), min(x1, cx1)
        if y0 < cy0:
            out.append((x0, y0, x1, cy0))
        if cy1 < y1:
            out.append((x0, cy1, x1, y1))
        if x0 < ix0:
            out.append((x0, max(y0, cy0), ix0, min(y1, cy1)))
        if ix1 < x1:
            out.append((ix1, max(y0, cy0), x1, min(y1, cy1)))
    return out


def max_water_depth(level: GridLevel) -> float:
    """Largest positive still-water depth on a level (0 if all land)."""
    hmax = 0.0
    for b in level.blocks:
        m = float(np.max(b.h)) if b.h.size else 0.0
        hmax = max(hmax, m)
    return hmax


def cfl_limit(dx: float, dt: float) -> float:
    """Maximum depth allowed by the stability condition dx/dt >= sqrt(2 g hmax)."""
    return (dx / dt) ** 2 / (2.0 * DEFAULT_GRAVITY)


def validate_system(system: NestedGridSystem, config: SimulationConfig) -> ValidationReport:
    """Check refinement ratio, lattice alignment, enclosure, overlap and CFL.

    Violations are collected into the report; nothing raises.  An empty
    report means the system satisfies every structural invariant.
    """
    report = ValidationReport()
    if config.dt <= 0:
        report.add("timestep", 0, None, f"dt must be positive, got {config.dt}")
        return report

    for k, lvl in enumerate(system.levels):
        # refinement ratio between consecutive levels
        if k > 0:
            parent = system.levels[k - 1]
            if abs(parent.dx / lvl.dx - REFINEMENT_RATIO) > 1e-9:
                report.add(
                    "ratio", lvl.level_index, None,
                    f"dx {lvl.dx} is not parent dx {parent.dx} / {REFINEMENT_RATIO}",
                )

        for b in lvl.blocks:
            if b.ni < 1 or b.nj < 1:
                report.add("shape", lvl.level_index, b.block_id,
                           f"block is {b.ni}x{b.nj}, need at least 1x1")
            if b.h.shape != (b.ni, b.nj):
                report.add("bathymetry", lvl.level_index, b.block_id,
                           f"bathymetry shape {b.h.shape} != ({b.ni}, {b.nj})")
            for axis, name in ((0, "x"), (1, "y")):
                if not _is_multiple(b.origin[axis], lvl.dx):
                    report.add("alignment", lvl.level_index, b.block_id,
                               f"{name}-origin {b.origin[axis]} not on the level lattice")

        # non-overlapping blocks within a level
        rects = [_block_rect(b, lvl.dx) for b in lvl.blocks]
        for a in range(len(rects)):
            for c in range(a + 1, len(rects)):
                ax0, ay0, ax1, ay1 = rects[a]
                bx0, by0, bx1, by1 = rects[c]
                if ax0 < bx1 and bx0 < ax1 and ay0 < by1 and by0 < ay1:
                    report.add("overlap", lvl.level_index, lvl.blocks[a].block_id,
                               f"overlaps block {lvl.blocks[c].block_id}")

        # enclosure and parent-cell alignment
        if k > 0:
            parent = system.levels[k - 1]
            parent_rects = [_block_rect(b, parent.dx) for b in parent.blocks]
            for b in lvl.blocks:
                i0, j0 = b.cell_start(lvl.dx)
                aligned = True
                for name, v in (("x-origin", i0), ("y-origin", j0),
                                ("ni", b.ni), ("nj", b.nj)):
                    if v % REFINEMENT_RATIO != 0:
                        report.add("alignment", lvl.level_index, b.block_id,
                                   f"{name} ({v} fine cells) not a whole number of parent cells")
                        aligned = False
                if not aligned:
                    continue
                r = REFINEMENT_RATIO
                child_rect = (i0 // r, j0 // r, (i0 + b.ni) // r, (j0 + b.nj) // r)
                uncovered = [child_rect]
                for pr in parent_rects:
                    uncovered = _subtract_rect(uncovered, pr)
                if uncovered:
                    report.add("enclosure", lvl.level_index, b.block_id,
                               f"{sum((x1-x0)*(y1-y0) for x0,y0,x1,y1 in uncovered)} "
                               "parent cells of the block are outside the parent level")

        # stability bound: dx/dt >= sqrt(2 g hmax)
        hmax = max_water_depth(lvl)
        if hmax > 0.0:
            wave = math.sqrt(2.0 * config.g * hmax)
            if lvl.dx / config.dt < wave:
                report.add("cfl", lvl.level_index, None,
                           f"dx/dt = {lvl.dx / config.dt:.6g} < sqrt(2 g hmax) = {wave:.6g}")

    return report


# ---------------------------------------------------------------------------
# Same-level adjacency
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Abutment:
    """Block ``b`` touches side ``side`` of block ``a`` along ``span``.

    ``span`` is a half-open interval along the shared edge, in lattice units
    of the level (y-cells for west/east contacts, x-cells for south/north).
    """

    a_id: int
    b_id: int
    side: str
    span: tuple[int, int]


def level_abutments(level: GridLevel) -> list[Abutment]:
    """All ordered abutting pairs within a level (each contact listed twice)."""
    out = []
    rects = {b.block_id: _block_rect(b, level.dx) for b in level.blocks}
    opposite = {"east": "west", "west": "east", "north": "south", "south": "north"}
    for a in level.blocks:
        ax0, ay0, ax1, ay1 = rects[a.block_id]
        for b in level.blocks:
            if b.block_id == a.block_id:
                continue
            bx0, by0, bx1, by1 = rects[b.block_id]
            if ax1 == bx0:
                lo, hi = max(ay0, by0), min(ay1, by1)
                if lo < hi:
                    out.append(Abutment(a.block_id, b.block_id, "east", (lo, hi)))
            if ay1 == by0:
                lo, hi = max(ax0, bx0), min(ax1, bx1)
                if lo < hi:
                    out.append(Abutment(a.block_id, b.block_id, "north", (lo, hi)))
    # mirror entries so every block lists all four sides
    mirrored = [Abutment(ab.b_id, ab.a_id, opposite[ab.side], ab.span) for ab in out]
    return out + mirrored


def uncovered_side_intervals(level: GridLevel, block: Block, side: str) -> list[tuple[int, int]]:
    """Parts of a block edge not shared with any sibling, in local cell units.

    These are the block's physical boundary intervals on that side: the outer
    domain boundary on the coarsest level, or the nesting interface on finer
    levels.
    """
    i0, j0 = block.cell_start(level.dx)
    if side in ("west", "east"):
        full = (j0, j0 + block.nj)
        local0 = j0
    else:
        full = (i0, i0 + block.ni)
        local0 = i0
    covered = [ab.span for ab in level_abutments(level)
               if ab.a_id == block.block_id and ab.side == side]
    pieces = [full]
    for lo, hi in covered:
        nxt = []
        for (p0, p1) in pieces:
            if hi <= p0 or lo >= p1:
                nxt.append((p0, p1))
                continue
            if p0 < lo:
                nxt.append((p0, lo))
            if hi < p1:
                nxt.append((hi, p1))
        pieces = nxt
    return [(p0 - local0, p1 - local0) for (p0, p1) in pieces]


# ---------------------------------------------------------------------------
# Scaled synthetic system mirroring the Kochi model's grid inventory
# ---------------------------------------------------------------------------

# (dx meters, block count, total cells) per level, coarsest first.
KOCHI_GRID_INVENTORY = (
    (810.0, 1, 2_012_940),
    (270.0, 3, 1_703_484),
    (90.0, 9, 2_230_056),
    (30.0, 11, 9_863_424),
    (10.0, 60, 31_401_540),
)

# Level strip heights (cells) and total widths (cells) that factor the
# inventory's cell totals exactly at scale 1.
_KOCHI_BASE_HEIGHTS = (90, 36, 24, 48, 60)
_KOCHI_BASE_WIDTHS = (22366, 47319, 92919, 205488, 523359)

_KOCHI_DEPTH_MIN = 4.0
_KOCHI_DEPTH_MAX = 4000.0


def _round_multiple(value: float, unit: int) -> int:
    return unit * int(round(value / unit))


def _quadratic_widths(total: int, n_blocks: int, unit: int) -> list[int]:
    """Split ``total`` into ``n_blocks`` widths (multiples of ``unit``, >= unit)
    with a strongly skewed size distribution."""
    if n_blocks == 1:
        return [total]
    weights = [(b + 1) ** 2 for b in range(n_blocks)]
    wsum = sum(weights)
    widths = [max(unit, _round_multiple(total * w / wsum, unit)) for w in weights]
    widths[-1] += total - sum(widths)
    return widths


def kochi_block_inventory(scale: float) -> list[tuple[float, int, list[tuple[int, int]]]]:
    """Per-level block shapes for a scaled synthetic system.

    Returns ``[(dx, height_cells, [(width, height), ...]), ...]``.  Cell
    totals track ``scale`` times the reference inventory; at ``scale == 1``
    they match it exactly.  Raises :class:`ScaleUnderflowError` when a block
    would drop below 3x3 cells.
    """
    if scale <= 0:
        raise ScaleUnderflowError("scale must be positive")
    root = math.sqrt(scale)
    out = []
    prev_nj = prev_w = None
    for k, (dx, n_blocks, cells) in enumerate(KOCHI_GRID_INVENTORY):
        target = cells * scale
        unit = 1 if k == 0 else REFINEMENT_RATIO
        nj = max(3, _round_multiple(_KOCHI_BASE_HEIGHTS[k] * root, unit))
        if k > 0:
            nj = min(nj, REFINEMENT_RATIO * prev_nj)
        width = max(unit * n_blocks, _round_multiple(target / nj, unit))
        if k > 0 and width > REFINEMENT_RATIO * prev_w:
            width_cap = REFINEMENT_RATIO * prev_w
            nj = _round_multiple(math.ceil(target / width_cap / unit) * unit, unit)
            nj = min(max(nj, unit), REFINEMENT_RATIO * prev_nj)
            width = min(width_cap, max(unit * n_blocks, _round_multiple(target / nj, unit)))
        if nj < 3 or width < 3 * n_blocks:
            raise ScaleUnderflowError(
                f"scale {scale} underflows level {k + 1} block {n_blocks}: "
                f"cannot fit {n_blocks} blocks of at least 3x3 cells")
        widths = _quadratic_widths(width, n_blocks, unit)
        for idx, w in enumerate(widths):
            if w < 3:
                raise ScaleUnderflowError(
                    f"scale {scale} underflows level {k + 1} block {idx + 1}: "
                    f"width {w} < 3 cells")
        out.append((dx, nj, [(w, nj) for w in widths]))
        prev_nj, prev_w = nj, width
    return out


def _kochi_depth_profile(y: np.ndarray, y_center: float, half_extent: float) -> np.ndarray:
    """Synthetic coastal slope: shallow shelf at the center of the domain,
    deepening toward the outer edges.  Cubic ramp keeps the fine levels in
    shallow water so the shared time step satisfies the stability bound."""
    r = np.minimum(1.0, np.abs(y - y_center) / half_extent)
    return _KOCHI_DEPTH_MIN + (_KOCHI_DEPTH_MAX - _KOCHI_DEPTH_MIN) * r**3


def build_kochi_scaled_config(scale: float) -> NestedGridSystem:
    """Build a synthetic 5-level system with the Kochi model's block counts.

    Block counts per level are 1/3/9/11/60 and per-level cell totals are
    proportional to the reference inventory (exact at ``scale == 1``).  Each
    level is a centered east-west chain of abutting blocks with a sloping
    bathymetry.  Bathymetry arrays are read-only broadcast views, so large
    scales stay cheap to build.
    """
    shapes = kochi_block_inventory(scale)
    system = NestedGridSystem()
    origins = []
    block_id = 0
    for k, (dx, nj, blocks) in enumerate(shapes):
        width = sum(w for w, _ in blocks)
        if k == 0:
            x0 = y0 = 0.0
        else:
            px0, py0 = origins[k - 1]
            pdx = shapes[k - 1][0]
            pw = sum(w for w, _ in shapes[k - 1][2])
            pnj = shapes[k - 1][1]
            r = REFINEMENT_RATIO
            x0 = px0 + pdx * ((pw - width // r) // 2)
            y0 = py0 + pdx * ((pnj - nj // r) // 2)
        origins.append((x0, y0))
        level = GridLevel(level_index=k + 1, dx=dx)
        cursor = x0
        for (w, h) in blocks:
            block_id += 1
            level.blocks.append(Block(block_id=block_id, origin=(cursor, y0),
                                      ni=w, nj=h, h=np.empty(0)))
            cursor += w * dx
        system.levels.append(level)

    # bathymetry depends on y only; share one read-only column per block
    l1 = shapes[0]
    y_center = origins[0][1] + 0.5 * l1[1] * l1[0]
    half_extent = 0.5 * l1[1] * l1[0]
    for lvl in system.levels:
        for b in lvl.blocks:
            yc = b.origin[1] + (np.arange(b.nj) + 0.5) * lvl.dx
            col = _kochi_depth_profile(yc, y_center, half_extent)
            b.h = np.broadcast_to(col, (b.ni, b.nj))
    return system
