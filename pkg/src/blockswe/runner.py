"""Time-integration loop over a decomposed nested-grid system.

Each step executes, in order: mass update on all levels, child-to-parent
water-level restriction, same-level water-level halo exchange, momentum
update (with outer-boundary rules), parent-to-child flux prolongation,
same-level flux halo exchange, output accumulation, buffer swap.

Ranks run either as threads exchanging messages through a
:class:`~blockswe.exchange.MessageBoard` (the default) or on a synchronous
single-threaded scheduler that executes the identical schedule for
debugging.  Both paths move every byte through the same pack/unpack code,
so results are bitwise independent of the worker count.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field

import numpy as np

from . import coupling, exchange
from .balance import DecompositionPlan
from .grid import NestedGridSystem, SimulationConfig, uncovered_side_intervals
from .kernels import (
    BlockState,
    OutputAccumulators,
    accumulate_outputs,
    apply_edge_flux,
    update_mass,
    update_momentum,
)
from .report import RankTiming, RunReport

ROUTINES = ("mass", "momentum", "restrict", "prolong",
            "halo-eta", "halo-flux", "output")

PHASE_SEQUENCE = ("mass", "restrict", "halo-eta", "momentum",
                  "prolong", "halo-flux", "output", "swap")


class SimulationAborted(RuntimeError):
    """A worker failed; the run stopped and outputs are not valid."""


@dataclass(eq=False)
class _RankContext:
    rank: int
    block_ids: list[int] = field(default_factory=list)
    timers: dict = field(default_factory=lambda: {r: 0.0 for r in ROUTINES})
    phase_log: list[str] = field(default_factory=list)
    wall: float = 0.0


class Simulation:
    """A configured system bound to a decomposition plan, ready to run."""

    def __init__(self, system: NestedGridSystem, settings: SimulationConfig,
                 plan: DecompositionPlan):
        if plan.n_blocks != system.n_blocks:
            raise ValueError(
                f"plan covers {plan.n_blocks} blocks, system has {system.n_blocks}")
        self.system = system
        self.settings = settings
        self.plan = plan
        ordered = system.all_blocks()
        self.rank_of = {b.block_id: plan.rank_of(idx)
                        for idx, (_, b) in enumerate(ordered)}
        self.n_ranks = plan.n_ranks

        self.states: dict[int, BlockState] = {}
        self.accumulators: dict[int, OutputAccumulators] = {}
        self.dx_of: dict[int, float] = {}
        for lvl, b in ordered:
            st = BlockState(b)
            x = b.origin[0] + (np.arange(b.ni) + 0.5) * lvl.dx
            y = b.origin[1] + (np.arange(b.nj) + 0.5) * lvl.dx
            st.set_initial_eta(settings.initial.eta0(x[:, None], y[None, :]),
                               settings.wet_threshold)
            self.states[b.block_id] = st
            self.accumulators[b.block_id] = OutputAccumulators(b.ni, b.nj)
            self.dx_of[b.block_id] = lvl.dx
        exchange.fill_bathymetry_halos(system, self.states)

        self.halo = exchange.build_halo_schedule(system, self.rank_of)
        self.tables = coupling.build_offset_tables(system, self.rank_of)

        # outer-boundary prescriptions apply to the coarsest level only;
        # finer-level physical edges are nesting interfaces fed by the parent
        self.domain_edges: dict[int, list] = {r: [] for r in range(self.n_ranks)}
        l1 = system.levels[0]
        for b in l1.blocks:
            for side in ("west", "east", "south", "north"):
                kind = getattr(settings.boundary, side)
                for interval in uncovered_side_intervals(l1, b, side):
                    self.domain_edges[self.rank_of[b.block_id]].append(
                        (b.block_id, side, interval, kind))

        self.contexts = [_RankContext(rank=r) for r in range(self.n_ranks)]
        for idx, (_, b) in enumerate(ordered):
            self.contexts[plan.rank_of(idx)].block_ids.append(b.block_id)

    # -- per-phase work, shared by both execution modes -----------------

    def _mass(self, ctx):
        s = self.settings
        for bid in ctx.block_ids:
            update_mass(self.states[bid], self.dx_of[bid], s.dt, s.wet_threshold)

    def _momentum(self, ctx):
        s = self.settings
        for bid in ctx.block_ids:
            update_momentum(self.states[bid], self.dx_of[bid], s.dt, s.g,
                            s.wet_threshold)
        for (bid, side, interval, kind) in self.domain_edges[ctx.rank]:
            apply_edge_flux(self.states[bid], side, kind, interval)

    def _outputs(self, ctx):
        for bid in ctx.block_ids:
            accumulate_outputs(self.states[bid], self.accumulators[bid],
                               self.settings.wet_threshold)

    def _swap(self, ctx):
        for bid in ctx.block_ids:
            self.states[bid].swap()

    # intergrid send/recv -------------------------------------------------

    def _intergrid_pack(self, rank, phase):
        """Payloads for every (rank -> receiver) intergrid buffer."""
        packer = coupling.restrict_eta if phase == exchange.PHASE_IG_ETA \
            else coupling.prolong_flux
        out = {}
        for (s, r, p), links in self.tables.pair_links.items():
            if p != phase or s != rank:
                continue
            buf = np.empty(self.tables.buffer_len[(s, r, p)])
            for link in links:
                src = link.child_block if phase == exchange.PHASE_IG_ETA \
                    else link.parent_block
                packer(self.states[src], link, buf)
            out[r] = buf
        return out

    def _intergrid_apply(self, rank, phase, payloads):
        thr = self.settings.wet_threshold
        for sender in sorted(payloads):
            buf = payloads[sender]
            links = self.tables.pair_links[(sender, rank, phase)]
            for link in links:
                if phase == exchange.PHASE_IG_ETA:
                    coupling.apply_restricted_eta(self.states[link.parent_block],
                                                  link, buf, thr)
                else:
                    coupling.apply_prolonged_flux(self.states[link.child_block],
                                                  link, buf)

    def _intergrid_senders(self, rank, phase):
        return sorted(s for (s, r, p) in self.tables.pair_links
                      if r == rank and p == phase and s != rank)

    # halo send/recv -------------------------------------------------------

    def _halo_pack(self, rank, phase):
        out = {}
        for (s, r), entries in self.halo.entries.items():
            if s != rank:
                continue
            buf = np.empty(self.halo.lengths[(s, r, phase)])
            for e in entries:
                base = e.eta_offset if phase == exchange.PHASE_ETA else e.flux_offset
                seg = exchange.pack_halo(self.states[e.block_id], e, phase)
                buf[base:base + seg.size] = seg
            out[r] = buf
        return out

    def _halo_apply(self, rank, phase, payloads):
        thr = self.settings.wet_threshold if phase == exchange.PHASE_ETA else None
        for sender in sorted(payloads):
            buf = payloads[sender]
            for e in self.halo.entries[(sender, rank)]:
                base = e.eta_offset if phase == exchange.PHASE_ETA else e.flux_offset
                length = e.eta_length if phase == exchange.PHASE_ETA else e.flux_length
                exchange.unpack_halo(self.states[e.peer_id], e,
                                     buf[base:base + length], phase, thr)

    def _halo_senders(self, rank, phase):
        return self.halo.expected_senders(rank, phase)

    # -- execution ---------------------------------------------------------

    def run(self, n_steps: int, threaded: bool = True,
            timeout: float = 60.0, trace_path: str | None = None,
            record_phases: bool = False, on_step=None) -> RunReport:
        """Advance the whole system ``n_steps`` steps and report timings.

        ``on_step(sim, step)`` fires after each completed step (serial mode
        only).  With ``record_phases`` every rank logs its phase sequence
        into its context for instrumentation tests.
        """
        if threaded and on_step is not None:
            raise ValueError("on_step hooks require the serial scheduler")
        board = exchange.MessageBoard(self.n_ranks, timeout=timeout)
        board.tracing = trace_path is not None
        if threaded and self.n_ranks > 1:
            self._run_threaded(n_steps, board, record_phases)
        else:
            self._run_serial(n_steps, board, record_phases, on_step)
        if trace_path is not None:
            board.write_trace(trace_path)
        return RunReport(
            steps=n_steps,
            n_ranks=self.n_ranks,
            ranks=[RankTiming(rank=c.rank, routines=dict(c.timers),
                              total=c.wall) for c in self.contexts],
        )

    # serial scheduler: same phases, ranks interleaved synchronously
    def _run_serial(self, n_steps, board, record_phases, on_step):
        ctxs = self.contexts
        t_start = [time.perf_counter() for _ in ctxs]

        def timed(name, ctx, fn, *args):
            t0 = time.perf_counter()
            result = fn(*args)
            ctx.timers[name] += time.perf_counter() - t0
            return result

        for step in range(n_steps):
            for ctx in ctxs:
                if record_phases:
                    ctx.phase_log.append("mass")
                timed("mass", ctx, self._mass, ctx)
            self._serial_exchange(board, step, "restrict",
                                  exchange.PHASE_IG_ETA, record_phases,
                                  self._intergrid_pack, self._intergrid_apply,
                                  self._intergrid_senders)
            self._serial_exchange(board, step, "halo-eta",
                                  exchange.PHASE_ETA, record_phases,
                                  self._halo_pack, self._halo_apply,
                                  self._halo_senders)
            for ctx in ctxs:
                if record_phases:
                    ctx.phase_log.append("momentum")
                timed("momentum", ctx, self._momentum, ctx)
            self._serial_exchange(board, step, "prolong",
                                  exchange.PHASE_IG_FLUX, record_phases,
                                  self._intergrid_pack, self._intergrid_apply,
                                  self._intergrid_senders)
            self._serial_exchange(board, step, "halo-flux",
                                  exchange.PHASE_FLUX, record_phases,
                                  self._halo_pack, self._halo_apply,
                                  self._halo_senders)
            for ctx in ctxs:
                if record_phases:
                    ctx.phase_log.append("output")
                timed("output", ctx, self._outputs, ctx)
            for ctx in ctxs:
                if record_phases:
                    ctx.phase_log.append("swap")
                self._swap(ctx)
            if on_step is not None:
                on_step(self, step)
        for ctx, t0 in zip(ctxs, t_start):
            ctx.wall += time.perf_counter() - t0

    def _serial_exchange(self, board, step, timer, phase, record_phases,
                         pack, apply, senders):
        for ctx in self.contexts:
            if record_phases:
                ctx.phase_log.append(timer)
            t0 = time.perf_counter()
            payloads = pack(ctx.rank, phase)
            local = {}
            for receiver, buf in payloads.items():
                if receiver == ctx.rank:
                    local[receiver] = buf
                else:
                    board.post(exchange.RankMessage(ctx.rank, receiver, phase,
                                                    step, buf))
            ctx._local = local      # applied in the receive pass below
            ctx.timers[timer] += time.perf_counter() - t0
        for ctx in self.contexts:
            t0 = time.perf_counter()
            got = board.collect(ctx.rank, phase, step, senders(ctx.rank, phase))
            if ctx.rank in getattr(ctx, "_local", {}):
                got[ctx.rank] = ctx._local[ctx.rank]
            apply(ctx.rank, phase, got)
            ctx._local = {}
            ctx.timers[timer] += time.perf_counter() - t0

    # threaded workers with phase barriers
    def _run_threaded(self, n_steps, board, record_phases):
        errors: list[tuple[int, BaseException]] = []
        err_lock = threading.Lock()

        def worker(ctx):
            try:
                t_start = time.perf_counter()
                for step in range(n_steps):
                    self._worker_step(ctx, board, step, record_phases)
                ctx.wall += time.perf_counter() - t_start
            except BaseException as exc:   # propagate to the main thread
                with err_lock:
                    errors.append((ctx.rank, exc))
                board.abort()

        threads = [threading.Thread(target=worker, args=(ctx,),
                                    name=f"rank-{ctx.rank}")
                   for ctx in self.contexts]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        if errors:
            rank, exc = min(errors, key=lambda e: e[0])
            if isinstance(exc, threading.BrokenBarrierError):
                others = [r for r, _ in errors if r != rank]
                raise SimulationAborted(
                    f"rank {rank} aborted with peers {others}") from exc
            raise SimulationAborted(f"rank {rank} failed: {exc}") from exc

    def _worker_step(self, ctx, board, step, record_phases):
        def timed(name, fn, *args):
            if record_phases:
                ctx.phase_log.append(name)
            t0 = time.perf_counter()
            result = fn(*args)
            ctx.timers[name] += time.perf_counter() - t0
            return result

        def comm(timer, phase, pack, apply, senders):
            if record_phases:
                ctx.phase_log.append(timer)
            t0 = time.perf_counter()
            payloads = pack(ctx.rank, phase)
            local = None
            for receiver, buf in payloads.items():
                if receiver == ctx.rank:
                    local = buf
                else:
                    board.post(exchange.RankMessage(ctx.rank, receiver, phase,
                                                    step, buf))
            got = board.collect(ctx.rank, phase, step, senders(ctx.rank, phase))
            if local is not None:
                got[ctx.rank] = local
            apply(ctx.rank, phase, got)
            ctx.timers[timer] += time.perf_counter() - t0
            board.phase_barrier()

        timed("mass", self._mass, ctx)
        comm("restrict", exchange.PHASE_IG_ETA, self._intergrid_pack,
             self._intergrid_apply, self._intergrid_senders)
        comm("halo-eta", exchange.PHASE_ETA, self._halo_pack,
             self._halo_apply, self._halo_senders)
        timed("momentum", self._momentum, ctx)
        comm("prolong", exchange.PHASE_IG_FLUX, self._intergrid_pack,
             self._intergrid_apply, self._intergrid_senders)
        comm("halo-flux", exchange.PHASE_FLUX, self._halo_pack,
             self._halo_apply, self._halo_senders)
        timed("output", self._outputs, ctx)
        if record_phases:
            ctx.phase_log.append("swap")
        self._swap(ctx)


def run_simulation(system: NestedGridSystem, settings: SimulationConfig,
                   plan: DecompositionPlan, n_steps: int, *,
                   threaded: bool = True, timeout: float = 60.0,
                   trace_path: str | None = None,
                   record_phases: bool = False, on_step=None):
    """Build a :class:`Simulation`, run it, and return (sim, report)."""
    sim = Simulation(system, settings, plan)
    report = sim.run(n_steps, threaded=threaded, timeout=timeout,
                     trace_path=trace_path, record_phases=record_phases,
                     on_step=on_step)
    return sim, report
