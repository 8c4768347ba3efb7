"""Intra-level halo exchange and the multi-worker message-passing harness.

Ranks are concurrent workers in one process.  All cross-worker data flows
through typed messages posted to per-rank FIFO queues; sends are buffered
and non-blocking, receives block until every expected message for the
current (phase, step) has arrived.  Phase barriers keep computation and
communication strictly separated, so any valid schedule is deadlock-free.

Halo strips are two cells deep.  Buffer offsets are fixed closed-form
functions of the strip ranges (1-based within an entry, matching the
packing convention of the reference Fortran loops), so entries can be
packed independently and in parallel.
"""

from __future__ import annotations

import queue
import struct
import threading
from dataclasses import dataclass, field

import numpy as np

from .grid import NestedGridSystem, level_abutments
from .kernels import BlockState, HALO_WIDTH

PHASE_ETA = "eta"
PHASE_FLUX = "flux"
PHASE_IG_ETA = "intergrid-eta"
PHASE_IG_FLUX = "intergrid-flux"

PHASE_CODES = {PHASE_ETA: 0, PHASE_FLUX: 1, PHASE_IG_ETA: 2, PHASE_IG_FLUX: 3}

# one trace record per message: step, phase code, sender, receiver, length
TRACE_RECORD = struct.Struct("<IBHHI")

_SIDE_ORDER = {"west": 0, "east": 1, "south": 2, "north": 3}


class ExchangeProtocolError(RuntimeError):
    """A message did not match the schedule (wrong length, phase or step)."""


class UndeliveredMessageError(RuntimeError):
    """Expected messages never arrived; lists (sender, receiver, phase)."""

    def __init__(self, missing):
        self.missing = list(missing)
        parts = ", ".join(f"{s}->{r} [{p}]" for (s, r, p) in self.missing)
        super().__init__(f"undelivered messages: {parts}")


@dataclass(frozen=True)
class RankMessage:
    sender: int
    receiver: int
    phase: str
    step: int
    payload: np.ndarray


@dataclass(frozen=True)
class HaloEntry:
    """One block edge strip within a rank-pair payload.

    ``span`` intervals are half-open cell ranges along the shared edge, in
    each block's local coordinates.  ``eta_offset``/``flux_offset`` are the
    entry's base element offsets within the rank-pair payload for the two
    exchange phases.
    """

    block_id: int          # sender-side block
    peer_id: int           # receiver-side block
    side: str              # sender's side facing the peer
    send_span: tuple[int, int]
    recv_span: tuple[int, int]
    eta_offset: int
    flux_offset: int

    @property
    def span_cells(self) -> int:
        return self.send_span[1] - self.send_span[0]

    @property
    def eta_length(self) -> int:
        return 2 * self.span_cells

    @property
    def flux_length(self) -> int:
        # two normal-flux face strips plus two tangential strips (one extra
        # face row each along the edge)
        return 2 * self.span_cells + 2 * (self.span_cells + 1)

    def element_offset(self, fast: int, slow: int) -> int:
        """1-based offset of element (fast, slow) within one field strip.

        ``fast`` runs along the edge, ``slow`` across the two strip layers:
        offset = (fast + 1) + slow * span, mirroring the closed-form index
        that replaces a running buffer counter.
        """
        return (fast + 1) + slow * self.span_cells


@dataclass(eq=False)
class HaloSchedule:
    """Per (sender, receiver) halo entries and total payload lengths."""

    entries: dict = field(default_factory=dict)     # (s, r) -> [HaloEntry]
    lengths: dict = field(default_factory=dict)     # (s, r, phase) -> int

    def expected_senders(self, rank: int, phase: str):
        return sorted(s for (s, r, p) in self.lengths
                      if r == rank and p == phase and s != rank)

    def receivers(self, rank: int, phase: str):
        return sorted(r for (s, r, p) in self.lengths
                      if s == rank and p == phase and r != rank)


def build_halo_schedule(system: NestedGridSystem, rank_of=None) -> HaloSchedule:
    """Precompute every same-level neighbor strip from the system geometry.

    Entries exist for every ordered abutting block pair, including pairs on
    the same rank (applied locally by the runner through the same pack and
    unpack path).
    """
    if rank_of is None:
        rank_of = {b.block_id: 0 for _, b in system.all_blocks()}
    sched = HaloSchedule()
    raw: dict[tuple[int, int], list[HaloEntry]] = {}
    for lvl in system.levels:
        starts = {b.block_id: b.cell_start(lvl.dx) for b in lvl.blocks}
        for ab in level_abutments(lvl):
            s0 = starts[ab.a_id]
            r0 = starts[ab.b_id]
            if ab.side in ("west", "east"):
                send_span = (ab.span[0] - s0[1], ab.span[1] - s0[1])
                recv_span = (ab.span[0] - r0[1], ab.span[1] - r0[1])
            else:
                send_span = (ab.span[0] - s0[0], ab.span[1] - s0[0])
                recv_span = (ab.span[0] - r0[0], ab.span[1] - r0[0])
            pair = (rank_of[ab.a_id], rank_of[ab.b_id])
            raw.setdefault(pair, []).append(HaloEntry(
                ab.a_id, ab.b_id, ab.side, send_span, recv_span, -1, -1))
    for pair, entries in raw.items():
        entries.sort(key=lambda e: (e.block_id, _SIDE_ORDER[e.side],
                                    e.send_span[0]))
        eta_off = flux_off = 0
        final = []
        for e in entries:
            final.append(HaloEntry(e.block_id, e.peer_id, e.side,
                                   e.send_span, e.recv_span,
                                   eta_off, flux_off))
            eta_off += e.eta_length
            flux_off += e.flux_length
        sched.entries[pair] = final
        sched.lengths[(pair[0], pair[1], PHASE_ETA)] = eta_off
        sched.lengths[(pair[0], pair[1], PHASE_FLUX)] = flux_off
    return sched


def _strip_slices(state: BlockState, side: str, span, sending: bool):
    """Array slices of the two eta strip layers on a block side.

    Senders read their outermost interior layers; receivers write their
    ghost layers.  Layers are ordered by increasing global coordinate.
    """
    g, ni, nj = state.halo, state.ni, state.nj
    lo, hi = span
    if side in ("west", "east"):
        rows = slice(g + lo, g + hi)
        if side == "west":
            cols = slice(g, g + 2) if sending else slice(g - 2, g)
        else:
            cols = slice(g + ni - 2, g + ni) if sending else slice(g + ni, g + ni + 2)
        return cols, rows, True
    cols = slice(g + lo, g + hi)
    if side == "south":
        rows = slice(g, g + 2) if sending else slice(g - 2, g)
    else:
        rows = slice(g + nj - 2, g + nj) if sending else slice(g + nj, g + nj + 2)
    return cols, rows, False


def _face_strip(state, side, span, sending, which):
    """Slices for flux strips: ``which`` is 'normal' (the flux crossing the
    edge, face-indexed across) or 'tangential' (the other flux component,
    cell-indexed across with one extra face row along the edge).

    The shared face itself is never exchanged; both neighbors compute it
    from identical stencil inputs.  Senders supply the first interior faces
    past the shared line, receivers write the matching ghost layers.
    """
    g, ni, nj = state.halo, state.ni, state.nj
    lo, hi = span
    x_side = side in ("west", "east")
    n_edge = ni if x_side else nj
    low_side = side in ("west", "south")
    if which == "normal":
        along = slice(g + lo, g + hi)
        if sending:
            across = slice(g + 1, g + 3) if low_side \
                else slice(g + n_edge - 2, g + n_edge)
        else:
            across = slice(g - 2, g) if low_side \
                else slice(g + n_edge + 1, g + n_edge + 3)
    else:
        along = slice(g + lo, g + hi + 1)
        if sending:
            across = slice(g, g + 2) if low_side \
                else slice(g + n_edge - 2, g + n_edge)
        else:
            across = slice(g - 2, g) if low_side \
                else slice(g + n_edge, g + n_edge + 2)
    return (across, along) if x_side else (along, across)


def pack_halo(state: BlockState, entry: HaloEntry, phase: str) -> np.ndarray:
    """Pack one entry's strips into a flat segment (field-major layout)."""
    if phase == PHASE_ETA:
        cols, rows, x_side = _strip_slices(state, entry.side, entry.send_span, True)
        strip = state.eta_new[cols, rows] if x_side else state.eta_new[cols, rows].T
        return strip.reshape(-1).copy()
    if phase == PHASE_FLUX:
        nsl = _face_strip(state, entry.side, entry.send_span, True, "normal")
        tsl = _face_strip(state, entry.side, entry.send_span, True, "tangential")
        x_side = entry.side in ("west", "east")
        narr = state.m_new if x_side else state.n_new
        tarr = state.n_new if x_side else state.m_new
        nstrip = narr[nsl] if x_side else narr[nsl].T
        tstrip = tarr[tsl] if x_side else tarr[tsl].T
        return np.concatenate([nstrip.reshape(-1), tstrip.reshape(-1)])
    raise ValueError(f"phase {phase!r} carries no halo strips")


def unpack_halo(state: BlockState, entry: HaloEntry, segment: np.ndarray,
                phase: str, wet_threshold: float | None = None):
    """Write one entry's strips into the receiver's ghost layers.

    Interior cells are never touched.  For the eta phase the ghost wet
    flags are refreshed from the received water level.
    """
    side = _OPPOSITE[entry.side]
    span = entry.recv_span
    if phase == PHASE_ETA:
        if segment.size != entry.eta_length:
            raise ExchangeProtocolError(
                f"eta segment for block {entry.peer_id} has {segment.size} "
                f"elements, schedule says {entry.eta_length}")
        cols, rows, x_side = _strip_slices(state, side, span, False)
        n_along = span[1] - span[0]
        vals = segment.reshape(2, n_along)
        state.eta_new[cols, rows] = vals if x_side else vals.T
        if wet_threshold is not None:
            state.wet[cols, rows] = (
                state.h_ext[cols, rows] + state.eta_new[cols, rows]
                >= wet_threshold)
        return
    if phase == PHASE_FLUX:
        if segment.size != entry.flux_length:
            raise ExchangeProtocolError(
                f"flux segment for block {entry.peer_id} has {segment.size} "
                f"elements, schedule says {entry.flux_length}")
        n_along = span[1] - span[0]
        x_side = side in ("west", "east")
        narr = state.m_new if x_side else state.n_new
        tarr = state.n_new if x_side else state.m_new
        nsl = _face_strip(state, side, span, False, "normal")
        tsl = _face_strip(state, side, span, False, "tangential")
        nvals = segment[:2 * n_along].reshape(2, n_along)
        tvals = segment[2 * n_along:].reshape(2, n_along + 1)
        narr[nsl] = nvals if x_side else nvals.T
        tarr[tsl] = tvals if x_side else tvals.T
        return
    raise ValueError(f"phase {phase!r} carries no halo strips")


_OPPOSITE = {"west": "east", "east": "west", "south": "north", "north": "south"}


def fill_bathymetry_halos(system: NestedGridSystem, states: dict):
    """Copy neighbor bathymetry (and gridded roughness) into ghost strips.

    Static, done once at setup; physical edges keep their replicated
    values."""
    for lvl in system.levels:
        starts = {b.block_id: b.cell_start(lvl.dx) for b in lvl.blocks}
        for ab in level_abutments(lvl):
            src, dst = states[ab.a_id], states[ab.b_id]
            if ab.side in ("west", "east"):
                span_s = (ab.span[0] - starts[ab.a_id][1], ab.span[1] - starts[ab.a_id][1])
                span_r = (ab.span[0] - starts[ab.b_id][1], ab.span[1] - starts[ab.b_id][1])
            else:
                span_s = (ab.span[0] - starts[ab.a_id][0], ab.span[1] - starts[ab.a_id][0])
                span_r = (ab.span[0] - starts[ab.b_id][0], ab.span[1] - starts[ab.b_id][0])
            scols, srows, _ = _strip_slices(src, ab.side, span_s, True)
            dcols, drows, _ = _strip_slices(dst, _OPPOSITE[ab.side], span_r, False)
            dst.h_ext[dcols, drows] = src.h_ext[scols, srows]
            if not np.isscalar(dst.n_ext) and not np.isscalar(src.n_ext):
                dst.n_ext[dcols, drows] = src.n_ext[scols, srows]


# ---------------------------------------------------------------------------
# Message board
# ---------------------------------------------------------------------------


class MessageBoard:
    """Buffered FIFO channels between ranks with an optional binary trace.

    ``post`` never blocks; ``collect`` blocks until every expected sender's
    message for (phase, step) arrived, or raises
    :class:`UndeliveredMessageError` after the timeout.
    """

    def __init__(self, n_ranks: int, timeout: float = 30.0):
        self.n_ranks = n_ranks
        self.timeout = timeout
        self.queues = [queue.Queue() for _ in range(n_ranks)]
        self.barrier = threading.Barrier(n_ranks) if n_ranks > 1 else None
        self._trace: list[tuple] = []
        self._trace_lock = threading.Lock()
        self.tracing = False

    def post(self, msg: RankMessage):
        if self.tracing:
            with self._trace_lock:
                self._trace.append((msg.step, PHASE_CODES[msg.phase],
                                    msg.sender, msg.receiver, msg.payload.size))
        self.queues[msg.receiver].put(msg)

    def collect(self, rank: int, phase: str, step: int, expected) -> dict:
        """Gather one message from each expected sender for (phase, step)."""
        got: dict[int, np.ndarray] = {}
        pending = set(expected)
        while pending:
            try:
                msg = self.queues[rank].get(timeout=self.timeout)
            except queue.Empty:
                raise UndeliveredMessageError(
                    (s, rank, phase) for s in sorted(pending)) from None
            if msg is None:         # poison pill from an aborting peer
                raise threading.BrokenBarrierError
            if msg.phase != phase or msg.step != step or msg.sender not in pending:
                raise ExchangeProtocolError(
                    f"rank {rank} expected ({phase}, step {step}) from "
                    f"{sorted(pending)}, got ({msg.phase}, step {msg.step}) "
                    f"from {msg.sender}")
            got[msg.sender] = msg.payload
            pending.discard(msg.sender)
        return got

    def phase_barrier(self):
        if self.barrier is not None:
            self.barrier.wait()

    def abort(self):
        """Unblock every rank: break the barrier and poison the queues."""
        if self.barrier is not None:
            self.barrier.abort()
        for q in self.queues:
            q.put(None)

    def write_trace(self, path: str):
        """Dump the message trace, sorted for reproducibility."""
        with self._trace_lock:
            records = sorted(self._trace)
        with open(path, "wb") as f:
            for rec in records:
                f.write(TRACE_RECORD.pack(*rec))


def read_trace(path: str) -> list[tuple]:
    """Parse a binary message trace back into record tuples."""
    out = []
    with open(path, "rb") as f:
        data = f.read()
    for off in range(0, len(data), TRACE_RECORD.size):
        out.append(TRACE_RECORD.unpack_from(data, off))
    return out
