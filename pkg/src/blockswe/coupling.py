"""Inter-grid transfer: child-to-parent water-level restriction and
parent-to-child flux prolongation through precomputed offset tables.

Every child block edge not shared with a sibling is a nesting interface.
After the mass update, the water level in a one-parent-cell-deep ring just
inside the child perimeter is averaged 3x3 onto the overlapped parent cells.
After the momentum update, the normal discharge flux on each child perimeter
face is copied from the parent face spanning it (per-unit-width, so each
parent face value lands on its three child faces unchanged and the interface
mass flux is preserved exactly).

Buffers between rank pairs are flat float64 arrays; each segment's offset
and length are fixed at table-build time, so packing needs no running
counter and can proceed in any order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import (
    GridStructureError,
    NestedGridSystem,
    REFINEMENT_RATIO,
    uncovered_side_intervals,
)
from .kernels import BlockState

_SIDE_ORDER = {"south": 0, "north": 1, "west": 2, "east": 3}

R = REFINEMENT_RATIO


@dataclass(frozen=True)
class EtaSegment:
    """One run of restricted parent cells along a nesting side."""

    side: str
    child_span: tuple[int, int]    # local child cells along the side (mult of 3)
    ring_start: int                # local child cell index of the 3-deep ring
    parent_line: int               # local parent cell index of the ring row/col
    parent_span: tuple[int, int]   # local parent cells along the side
    offset: int                    # element offset in the rank-pair buffer
    length: int


@dataclass(frozen=True)
class FluxSegment:
    """One run of parent faces feeding child perimeter faces."""

    side: str
    child_span: tuple[int, int]    # local child cells along the side (mult of 3)
    child_face_line: int           # local child face index (0 or ni/nj)
    parent_face_line: int          # local parent face index
    parent_span: tuple[int, int]   # local parent cells along the side
    offset: int
    length: int


@dataclass(eq=False)
class InterGridLink:
    """All transfer segments between one parent block and one child block."""

    parent_block: int
    child_block: int
    eta_segments: list[EtaSegment] = field(default_factory=list)
    flux_segments: list[FluxSegment] = field(default_factory=list)


@dataclass(eq=False)
class IntergridTables:
    """Offset tables covering every parent/child interface of a system.

    ``pair_links`` maps ``(sender_rank, receiver_rank, phase)`` to the links
    whose segments write that buffer, in offset order; ``buffer_len`` gives
    each buffer's total element count.
    """

    links: list[InterGridLink] = field(default_factory=list)
    pair_links: dict = field(default_factory=dict)
    buffer_len: dict = field(default_factory=dict)

    def link_for(self, parent_block: int, child_block: int) -> InterGridLink:
        for ln in self.links:
            if ln.parent_block == parent_block and ln.child_block == child_block:
                return ln
        raise KeyError((parent_block, child_block))


def _segments_for_child(system: NestedGridSystem, level_idx: int, child):
    """Raw (side, ring/face geometry) runs for one child block, split by
    parent block, before offsets are assigned."""
    level = system.levels[level_idx]
    parent_level = system.levels[level_idx - 1]
    dx = level.dx
    ci0, cj0 = child.cell_start(dx)
    ni, nj = child.ni, child.nj

    parent_rects = []
    for pb in parent_level.blocks:
        pi0, pj0 = pb.cell_start(parent_level.dx)
        parent_rects.append((pb, pi0, pj0, pi0 + pb.ni, pj0 + pb.nj))

    eta_out, flux_out = [], []
    for side in ("south", "north", "west", "east"):
        for (a, b) in uncovered_side_intervals(level, child, side):
            if (a % R) or (b % R):
                raise GridStructureError(
                    f"nesting interface of block {child.block_id} side {side} "
                    f"spans cells [{a}, {b}), not a multiple of {R}")
            horizontal = side in ("south", "north")
            # restriction ring: corners belong to the south/north rows
            ra, rb = (a, b) if horizontal else (max(a, R), min(b, nj - R))
            if side == "south":
                ring_start, line_g = 0, cj0 // R
            elif side == "north":
                ring_start, line_g = nj - R, (cj0 + nj) // R - 1
            elif side == "west":
                ring_start, line_g = 0, ci0 // R
            else:
                ring_start, line_g = ni - R, (ci0 + ni) // R - 1
            base_g = (ci0 if horizontal else cj0)
            pa_g, pb_g = (base_g + ra) // R, (base_g + rb) // R
            if pa_g < pb_g:
                covered = _split_by_parents(parent_rects, horizontal,
                                            line_g, pa_g, pb_g)
                for (pb_blk, lo, hi, pline_local) in covered:
                    pi0, pj0 = pb_blk.cell_start(parent_level.dx)
                    off0 = pi0 if horizontal else pj0
                    eta_out.append((pb_blk.block_id, EtaSegment(
                        side=side,
                        child_span=(lo * R - base_g, hi * R - base_g),
                        ring_start=ring_start,
                        parent_line=pline_local,
                        parent_span=(lo - off0, hi - off0),
                        offset=-1, length=hi - lo)))

            # prolongation: every perimeter face, including corners
            if side == "south":
                face_c, face_g = 0, cj0 // R
            elif side == "north":
                face_c, face_g = nj, (cj0 + nj) // R
            elif side == "west":
                face_c, face_g = 0, ci0 // R
            else:
                face_c, face_g = ni, (ci0 + ni) // R
            fa_g, fb_g = (base_g + a) // R, (base_g + b) // R
            covered = _split_by_parents(parent_rects, horizontal,
                                        face_g, fa_g, fb_g, faces=True)
            for (pb_blk, lo, hi, fline_local) in covered:
                pi0, pj0 = pb_blk.cell_start(parent_level.dx)
                off0 = pi0 if horizontal else pj0
                flux_out.append((pb_blk.block_id, FluxSegment(
                    side=side,
                    child_span=(lo * R - base_g, hi * R - base_g),
                    child_face_line=face_c,
                    parent_face_line=fline_local,
                    parent_span=(lo - off0, hi - off0),
                    offset=-1, length=hi - lo)))
    return eta_out, flux_out


def _split_by_parents(parent_rects, horizontal, line_g, lo_g, hi_g, faces=False):
    """Clip a global run of parent cells against parent block rectangles.

    ``line_g`` is the normal coordinate (cell index, or face index when
    ``faces``); the run spans ``[lo_g, hi_g)`` along the side.  Returns
    ``(parent_block, lo, hi, local_line)`` pieces and requires full cover.
    """
    pieces = []
    remaining = [(lo_g, hi_g)]
    for (pb, pi0, pj0, pi1, pj1) in parent_rects:
        if horizontal:
            run0, run1 = pi0, pi1
            n0, n1 = pj0, pj1
            local_line = line_g - pj0
        else:
            run0, run1 = pj0, pj1
            n0, n1 = pi0, pi1
            local_line = line_g - pi0
        if faces:
            inside = n0 <= line_g <= n1
        else:
            inside = n0 <= line_g < n1
        if not inside:
            continue
        nxt = []
        for (a, b) in remaining:
            ca, cb = max(a, run0), min(b, run1)
            if ca >= cb:
                nxt.append((a, b))
                continue
            pieces.append((pb, ca, cb, local_line))
            if a < ca:
                nxt.append((a, ca))
            if cb < b:
                nxt.append((cb, b))
        remaining = nxt
        if not remaining:
            break
    if remaining:
        raise GridStructureError(
            f"nesting run {remaining} at line {line_g} is not covered by the "
            "parent level")
    pieces.sort(key=lambda p: p[1])
    return pieces


def build_offset_tables(system: NestedGridSystem, rank_of=None) -> IntergridTables:
    """Precompute every parent/child transfer segment and its buffer offset.

    ``rank_of`` maps block id to rank (all zero when omitted); segments are
    grouped into one flat buffer per (sender, receiver, phase), offsets
    assigned contiguously in a fixed deterministic order.
    """
    if rank_of is None:
        rank_of = {b.block_id: 0 for _, b in system.all_blocks()}
    links: dict[tuple[int, int], InterGridLink] = {}
    for k in range(1, len(system.levels)):
        for child in system.levels[k].blocks:
            eta_raw, flux_raw = _segments_for_child(system, k, child)
            for parent_id, seg in eta_raw:
                link = links.setdefault(
                    (parent_id, child.block_id),
                    InterGridLink(parent_id, child.block_id))
                link.eta_segments.append(seg)
            for parent_id, seg in flux_raw:
                link = links.setdefault(
                    (parent_id, child.block_id),
                    InterGridLink(parent_id, child.block_id))
                link.flux_segments.append(seg)

    tables = IntergridTables()
    tables.links = [links[key] for key in sorted(links)]

    def seg_key(seg):
        return (_SIDE_ORDER[seg.side], seg.child_span[0], seg.parent_span[0])

    offsets: dict[tuple[int, int, str], int] = {}
    for link in tables.links:
        link.eta_segments.sort(key=seg_key)
        link.flux_segments.sort(key=seg_key)
        pr, cr = rank_of[link.parent_block], rank_of[link.child_block]
        ekey = (cr, pr, "intergrid-eta")
        fkey = (pr, cr, "intergrid-flux")
        new_eta = []
        for seg in link.eta_segments:
            off = offsets.get(ekey, 0)
            new_eta.append(EtaSegment(seg.side, seg.child_span, seg.ring_start,
                                      seg.parent_line, seg.parent_span,
                                      off, seg.length))
            offsets[ekey] = off + seg.length
        link.eta_segments = new_eta
        new_flux = []
        for seg in link.flux_segments:
            off = offsets.get(fkey, 0)
            new_flux.append(FluxSegment(seg.side, seg.child_span,
                                        seg.child_face_line,
                                        seg.parent_face_line, seg.parent_span,
                                        off, seg.length))
            offsets[fkey] = off + seg.length
        link.flux_segments = new_flux
        if link.eta_segments:
            tables.pair_links.setdefault(ekey, []).append(link)
        if link.flux_segments:
            tables.pair_links.setdefault(fkey, []).append(link)
    tables.buffer_len = dict(offsets)
    return tables


# ---------------------------------------------------------------------------
# Packing and applying
# ---------------------------------------------------------------------------


def _ring_patch_means(state: BlockState, seg: EtaSegment) -> np.ndarray:
    """3x3 averages over one ring segment, summed row-major within each
    patch (y outer, x inner) for bitwise reproducibility."""
    g = state.halo
    a, b = seg.child_span
    count = seg.length
    if seg.side in ("south", "north"):
        view = state.eta_new[g + a:g + b, g + seg.ring_start:g + seg.ring_start + R]
        patches = view.reshape(count, R, R)          # [patch, dx, dy]
    else:
        view = state.eta_new[g + seg.ring_start:g + seg.ring_start + R, g + a:g + b]
        patches = view.reshape(R, count, R).transpose(1, 0, 2)
    acc = np.zeros(count)
    for dy in range(R):
        for dx in range(R):
            acc += patches[:, dx, dy]
    return acc * (1.0 / 9.0)


def restrict_eta(child: BlockState, link: InterGridLink, buffer: np.ndarray):
    """Fill a rank-pair buffer with the child's restricted water levels."""
    for seg in link.eta_segments:
        buffer[seg.offset:seg.offset + seg.length] = _ring_patch_means(child, seg)


def apply_restricted_eta(parent: BlockState, link: InterGridLink,
                         buffer: np.ndarray, wet_threshold: float):
    """Overwrite parent ring cells with the child's averaged water level."""
    g = parent.halo
    for seg in link.eta_segments:
        vals = buffer[seg.offset:seg.offset + seg.length]
        pa, pb = seg.parent_span
        if seg.side in ("south", "north"):
            sl = (slice(g + pa, g + pb), g + seg.parent_line)
        else:
            sl = (g + seg.parent_line, slice(g + pa, g + pb))
        parent.eta_new[sl] = vals
        parent.wet[sl] = parent.h_ext[sl] + vals >= wet_threshold


def prolong_flux(parent: BlockState, link: InterGridLink, buffer: np.ndarray):
    """Fill a rank-pair buffer with parent face fluxes on the interface."""
    g = parent.halo
    for seg in link.flux_segments:
        pa, pb = seg.parent_span
        if seg.side in ("south", "north"):
            vals = parent.n_new[g + pa:g + pb, g + seg.parent_face_line]
        else:
            vals = parent.m_new[g + seg.parent_face_line, g + pa:g + pb]
        buffer[seg.offset:seg.offset + seg.length] = vals


def apply_prolonged_flux(child: BlockState, link: InterGridLink,
                         buffer: np.ndarray):
    """Copy each parent face flux onto its three child perimeter faces."""
    g = child.halo
    for seg in link.flux_segments:
        vals = np.repeat(buffer[seg.offset:seg.offset + seg.length], R)
        a, b = seg.child_span
        if seg.side in ("south", "north"):
            child.n_new[g + a:g + b, g + seg.child_face_line] = vals
        else:
            child.m_new[g + seg.child_face_line, g + a:g + b] = vals
