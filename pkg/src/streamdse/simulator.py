"""Deterministic discrete-event simulator of the streaming pipeline.

Words flow through bounded FIFOs between vertex engines. Each engine follows
the same streaming profile the analytical model uses (sigma, latency, rho):

  * it may emit its first output once its fill content (rho input words) has
    arrived,
  * on the fill frame its emissions pace out the producer's busy window
    (latency + rho cycles for sigma_out words), afterwards it sustains one
    frame per `latency` cycles,
  * emission of output j requires a kind-specific cumulative number of input
    words per slot, and is blocked while any downstream FIFO is full.

Timestamps are exact rationals so that fill measurements compose without
rounding noise; reported cycle totals are ceilings. Event ties are broken by
a deterministic (time, sequence) order, so identical configs give identical
reports. Evicted edges route through a DMA model with burst transfers, a
round-trip latency, per-port bandwidth and round-robin port sharing.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from fractions import Fraction

from .graph import Edge, ModelGraph, volume
from .layers import VertexPerf


@dataclass
class DmaParams:
    burst_words: int
    latency_cycles: int
    ratio_trace: list[float]          # actual compression ratio per frame
    port: int = 0


@dataclass
class SimConfig:
    graph: ModelGraph
    perf: dict[str, VertexPerf]
    members: set[str] | None = None
    frames: int = 1
    fifo_depths: dict[tuple, int] = field(default_factory=dict)
    default_fifo_depth: int = 1 << 40
    evictions: dict[tuple, DmaParams] = field(default_factory=dict)
    port_words_per_cycle: Fraction = Fraction(1 << 20)
    n_ports: int = 1
    static_port_load_words_per_cycle: Fraction = Fraction(0)
    block_words: int = 1
    max_events: int = 50_000_000
    capture_waveform: bool = False

    def __post_init__(self):
        if self.frames < 1:
            raise ValueError("frames must be >= 1")
        if self.block_words < 1:
            raise ValueError("block_words must be >= 1")
        for key, depth in self.fifo_depths.items():
            if depth < 1:
                raise ValueError(f"fifo depth for {key} must be >= 1")


class DeadlockError(RuntimeError):
    def __init__(self, cycle, blocked: dict):
        super().__init__(f"deadlock at cycle {cycle}: {blocked}")
        self.cycle = cycle
        self.blocked = blocked


@dataclass
class SimReport:
    frames: int
    total_cycles: int
    first_input_time: Fraction
    first_output: dict[str, Fraction]              # first emission per vertex
    frame_last_emission: dict[str, list[Fraction]]
    stall_cycles: dict[str, Fraction]
    max_occupancy: dict[tuple, int]
    delivered_words: dict[tuple, int]
    consumed_words: dict[tuple, int]
    deadlock: dict | None = None
    waveform: list[tuple] = field(default_factory=list)
    work_done: int = 0

    def steady_interval(self, vid: str) -> Fraction:
        times = self.frame_last_emission[vid]
        if len(times) < 2:
            raise ValueError("need at least two frames to measure a steady interval")
        return times[-1] - times[-2]

    def total_stalls(self) -> Fraction:
        return sum(self.stall_cycles.values(), Fraction(0))


def measure_pipeline_depth(report: SimReport, vid: str) -> Fraction:
    """First-output cycle of a vertex minus the graph's first-input cycle."""
    if vid not in report.first_output:
        raise ValueError(f"vertex {vid} produced no output (deadlock or not simulated)")
    return report.first_output[vid] - report.first_input_time


def _slot_need(kind: str, sigma_s: int, sigma_out: int, rho: int, j: int) -> int:
    """Cumulative words required from one input slot before emitting word j."""
    if sigma_out <= 1:
        return sigma_s
    if kind == "Concat":
        return min(sigma_s, -(-((j + 1) * sigma_s) // sigma_out))
    if kind == "Add":
        return min(sigma_s, j + 1)
    base = min(rho, sigma_s - 1) + 1
    if j <= 0:
        return base
    return min(sigma_s, base + (j * (sigma_s - base)) // (sigma_out - 1))


# -- internal state ----------------------------------------------------------


class _Fifo:
    __slots__ = ("key", "depth", "delivered", "popped", "committed", "max_occ", "arrivals")

    def __init__(self, key, depth):
        self.key = key
        self.depth = depth
        self.delivered = 0
        self.popped = 0
        self.committed = 0  # in-flight words already promised to this FIFO
        self.max_occ = 0
        self.arrivals: list[tuple[int, Fraction]] = []  # (cumulative words, time)

    @property
    def occupancy(self) -> int:
        return self.delivered - self.popped

    def space_for(self, words: int) -> bool:
        """Admission check, at token granularity.

        A FIFO always admits one in-flight token, so a token coarser than
        the configured depth serialises through it instead of deadlocking.
        """
        pending = self.occupancy + self.committed
        return pending == 0 or pending + words <= self.depth

    def deliver(self, words: int, t: Fraction) -> None:
        self.delivered += words
        self.arrivals.append((self.delivered, t))
        if self.occupancy > self.max_occ:
            self.max_occ = self.occupancy

    def arrival_time_of(self, count: int):
        """Time when cumulative deliveries first reached `count` words."""
        if count <= 0:
            return Fraction(0)
        if self.delivered < count:
            return None
        lo, hi = 0, len(self.arrivals) - 1
        while lo < hi:
            mid = (lo + hi) // 2
            if self.arrivals[mid][0] >= count:
                hi = mid
            else:
                lo = mid + 1
        return self.arrivals[lo][1]

    def pop_to(self, target: int) -> int:
        take = max(0, min(target, self.delivered) - self.popped)
        self.popped += take
        return take


class _Port:
    __slots__ = ("free_at",)

    def __init__(self):
        self.free_at = Fraction(0)


class _Dma:
    """Spill/refill path of one evicted edge: write FIFO -> DRAM -> read FIFO."""

    __slots__ = ("edge", "params", "wfifo", "rfifo", "frame_words",
                 "written", "read_issued", "port")

    def __init__(self, edge: Edge, params: DmaParams, half_depth: int, port: _Port):
        self.edge = edge
        self.params = params
        self.wfifo = _Fifo(("dma_w",) + edge.key, half_depth)
        # The refill side prefetches continuously; data not yet needed is,
        # physically, still sitting in DRAM behind the head pointer, so the
        # model leaves the read FIFO unbounded and reports its peak.
        self.rfifo = _Fifo(("dma_r",) + edge.key, 1 << 60)
        self.frame_words = edge.words
        self.written = 0        # words landed in DRAM
        self.read_issued = 0
        self.port = port

    def ratio(self, word_index: int) -> Fraction:
        trace = self.params.ratio_trace
        frame = min(word_index // self.frame_words, len(trace) - 1)
        return Fraction(trace[frame])


class _VertexRt:
    __slots__ = ("vid", "kind", "perf", "in_edges", "out_keys", "sigma_out",
                 "delta_fill", "delta_steady", "pos", "emit_prev_t", "activation",
                 "first_out", "frame_last", "stall", "done_pos")

    def __init__(self, vid, kind, perf: VertexPerf, in_edges, out_keys, frames):
        self.vid = vid
        self.kind = kind
        self.perf = perf
        self.in_edges = in_edges            # [(slot, fifo key, sigma_s)]
        self.out_keys = out_keys
        self.sigma_out = perf.sigma_out
        self.delta_fill = Fraction(perf.latency + perf.rho, perf.sigma_out)
        self.delta_steady = Fraction(perf.steady, perf.sigma_out)
        self.pos = 0                        # next output word, global across frames
        self.emit_prev_t = None
        self.activation = None              # fill-frame activation time
        self.first_out = None
        self.frame_last = [None] * frames
        self.stall = Fraction(0)
        self.done_pos = frames * perf.sigma_out


def simulate(cfg: SimConfig) -> SimReport:
    """Run the (sub)graph for cfg.frames frames; deterministic for a fixed config."""
    g = cfg.graph
    members = sorted(set(g.vertices) if cfg.members is None else set(cfg.members))
    member_set = set(members)
    perf = cfg.perf
    frames = cfg.frames
    block = cfg.block_words

    ports = [_Port() for _ in range(max(1, cfg.n_ports))]
    eff_port_rate = cfg.port_words_per_cycle - cfg.static_port_load_words_per_cycle
    if eff_port_rate <= 0:
        raise ValueError("static port load exceeds the port bandwidth")

    fifos: dict[tuple, _Fifo] = {}
    dmas: dict[tuple, _Dma] = {}
    internal_edges = sorted((e for e in g.edges if e.src in member_set and e.dst in member_set),
                            key=lambda e: e.key)
    evicted = [e for e in internal_edges if e.key in cfg.evictions]
    for i, e in enumerate(evicted):
        params = cfg.evictions[e.key]
        port = ports[i % len(ports)]
        half = max(params.burst_words, 1)
        if block > 1:
            half = max(half, 2 * block)
        dmas[e.key] = _Dma(e, params, half, port)
    # Block-quantised runs coarsen each FIFO bound to a couple of tokens so
    # that the quantisation itself cannot introduce synthetic backpressure;
    # word-exact runs (block_words=1) keep the configured depths untouched.
    def _bound(depth: int) -> int:
        return max(depth, 2 * block) if block > 1 else depth

    for e in internal_edges:
        if e.key not in dmas:
            fifos[e.key] = _Fifo(e.key, _bound(cfg.fifo_depths.get(e.key, cfg.default_fifo_depth)))

    # entry feeds: off-chip sources for the subgraph's cut inputs
    rt: dict[str, _VertexRt] = {}
    feed_state: dict[tuple, dict] = {}
    for vid in members:
        v = g.vertices[vid]
        slot_edges: dict[int, tuple] = {}
        slot_sigma: dict[int, int] = {}
        for e in g.in_edges(vid):
            if e.src in member_set:
                slot_edges[e.dst_slot] = e.key
                slot_sigma[e.dst_slot] = e.words
            else:
                key = ("src",) + e.key
                fifos[key] = _Fifo(key, cfg.fifo_depths.get(key, cfg.default_fifo_depth))
                slot_edges[e.dst_slot] = key
                slot_sigma[e.dst_slot] = e.words
                feed_state[key] = {"vid": vid, "words": e.words, "pos": 0, "prev_t": None}
        if vid == g.input_id and not g.in_edges(vid):
            key = ("src", vid, 0)
            fifos[key] = _Fifo(key, cfg.fifo_depths.get(key, cfg.default_fifo_depth))
            words = volume(g.input_shape)
            slot_edges[0] = key
            slot_sigma[0] = words
            feed_state[key] = {"vid": vid, "words": words, "pos": 0, "prev_t": None}
        outs = [e.key for e in g.out_edges(vid) if e.dst in member_set]
        in_list = [(slot, slot_edges[slot], slot_sigma[slot]) for slot in sorted(slot_edges)]
        rt[vid] = _VertexRt(vid, v.kind, perf[vid], in_list, outs, frames)
    for key, st in feed_state.items():
        st["rate"] = Fraction(st["words"], perf[st["vid"]].latency)

    waveform: list[tuple] = []
    heap: list = []
    seq = 0
    # earliest pending wake per target; duplicates in the heap are skipped
    pending: dict = {}

    def push(t: Fraction, kind: str, payload) -> None:
        nonlocal seq
        if kind in ("wake", "feed"):
            cur = pending.get(payload)
            if cur is not None and cur <= t:
                return
            pending[payload] = t
        heapq.heappush(heap, (t, seq, kind, payload))
        seq += 1

    def in_fifo(key: tuple) -> _Fifo:
        return dmas[key].rfifo if key in dmas else fifos[key]

    def wake_feeder(key: tuple, t: Fraction) -> None:
        """After popping from an input FIFO, let its producer move again."""
        if key in dmas:
            pump_dma(dmas[key], t)
        elif key[0] == "src":
            push(t, "feed", key)
        else:
            push(t, "wake", key[0])

    # -- DMA pumping ---------------------------------------------------------

    def pump_dma(d: _Dma, t: Fraction) -> None:
        burst = d.params.burst_words
        total_words = frames * d.frame_words
        # write side: full bursts, or a finished frame's partial tail
        while True:
            avail = d.wfifo.occupancy
            if avail >= burst:
                take = burst
            else:
                frame_end = ((d.wfifo.popped // d.frame_words) + 1) * d.frame_words
                if avail > 0 and d.wfifo.delivered >= min(frame_end, total_words):
                    take = min(frame_end, total_words) - d.wfifo.popped
                else:
                    break
            grant = max(t, d.port.free_at)
            dur = Fraction(take) * d.ratio(d.wfifo.popped) / eff_port_rate
            d.port.free_at = grant + dur
            d.wfifo.popped += take
            push(grant + dur, "dma_wdone", (d.edge.key, take))
        # read side: prefetch into the read FIFO as early as space allows
        while True:
            avail = d.written - d.read_issued
            if avail >= burst:
                take = burst
            else:
                frame_end = ((d.read_issued // d.frame_words) + 1) * d.frame_words
                if avail > 0 and d.written >= min(frame_end, total_words):
                    take = min(frame_end, total_words) - d.read_issued
                else:
                    break
            if not d.rfifo.space_for(take):
                break
            grant = max(t, d.port.free_at)
            dur = Fraction(take) * d.ratio(d.read_issued) / eff_port_rate
            d.port.free_at = grant + dur
            d.read_issued += take
            d.rfifo.committed += take
            push(grant + dur + d.params.latency_cycles, "dma_arrive", (d.edge.key, take))

    # -- emission ----------------------------------------------------------------

    def try_emit(vid: str, t: Fraction) -> None:
        s = rt[vid]
        while s.pos < s.done_pos:
            frame, j0 = divmod(s.pos, s.sigma_out)
            j1 = min(j0 + block - 1, s.sigma_out - 1)
            words = j1 - j0 + 1

            # ingestion requirement and its arrival time
            ready = Fraction(0)
            needs = []
            starved = False
            for slot, key, sigma_s in s.in_edges:
                need = frame * sigma_s + _slot_need(s.kind, sigma_s, s.sigma_out, s.perf.rho, j1)
                needs.append((key, need))
                at = in_fifo(key).arrival_time_of(need)
                if at is None:
                    starved = True
                elif at > ready:
                    ready = at
            if starved:
                # absorb what has already arrived towards this emission's
                # need plus one window depth (the sliding line buffer keeps
                # ingesting across frame boundaries); words beyond that
                # lookahead stay queued - that is what branch buffers hold.
                for key, need in needs:
                    fifo = in_fifo(key)
                    if fifo.pop_to(min(need + s.perf.rho + block, fifo.delivered)):
                        wake_feeder(key, t)
                return  # a future delivery will wake us

            # fill-frame activation: arrival of the rho-th input word
            if s.activation is None:
                act = Fraction(0)
                for slot, key, sigma_s in s.in_edges:
                    idx = min(s.perf.rho, sigma_s - 1)
                    at = in_fifo(key).arrival_time_of(idx + 1)
                    if at is None:
                        return
                    if at > act:
                        act = at
                s.activation = act

            # schedule floors: fill pacing on frame 0, engine rate afterwards
            floor = s.activation + j1 * s.delta_fill if frame == 0 else Fraction(0)
            if s.emit_prev_t is not None:
                cap = s.emit_prev_t + words * s.delta_steady
                if cap > floor:
                    floor = cap

            for key in s.out_keys:
                dst = dmas[key].wfifo if key in dmas else fifos[key]
                if not dst.space_for(words):
                    return  # a pop on the full FIFO will wake us

            base = floor if floor > ready else ready
            emit_t = base if base > t else t
            if emit_t > t:
                push(emit_t, "wake", vid)
                return

            # any remaining lag is time spent blocked on a full output FIFO
            if emit_t > base:
                s.stall += emit_t - base
            for key, need in needs:
                fifo = in_fifo(key)
                if fifo.pop_to(min(need + s.perf.rho + block, fifo.delivered)):
                    wake_feeder(key, emit_t)
            if s.first_out is None:
                s.first_out = emit_t
            s.emit_prev_t = emit_t
            s.pos += words
            if j1 == s.sigma_out - 1:
                s.frame_last[frame] = emit_t
            if cfg.capture_waveform:
                waveform.append((float(emit_t), vid, f"emit[{frame}:{j0}-{j1}]"))
            for key in s.out_keys:
                if key in dmas:
                    d = dmas[key]
                    d.wfifo.deliver(words, emit_t)
                    pump_dma(d, emit_t)
                else:
                    fifos[key].deliver(words, emit_t)
                    push(emit_t, "wake", key[1])

    # -- sources -------------------------------------------------------------------

    def try_feed(key: tuple, t: Fraction) -> None:
        st = feed_state[key]
        fifo = fifos[key]
        vid, rate = st["vid"], st["rate"]
        total = frames * st["words"]
        while st["pos"] < total:
            w1 = min(st["pos"] + block - 1, total - 1)
            words = w1 - st["pos"] + 1
            sched = Fraction(w1) / rate
            if st["prev_t"] is not None:
                cap = st["prev_t"] + Fraction(words) / rate
                if cap > sched:
                    sched = cap
            if not fifo.space_for(words):
                return  # consumer pops will push a new feed event
            if sched > t:
                push(sched, "feed", key)
                return
            fifo.deliver(words, t if t > sched else sched)
            st["pos"] += words
            st["prev_t"] = t if t > sched else sched
            push(t, "wake", vid)

    # -- main loop -------------------------------------------------------------------

    for key in sorted(feed_state):
        push(Fraction(0), "feed", key)
    for vid in members:
        push(Fraction(0), "wake", vid)

    events = 0
    while heap:
        t, _, kind, payload = heapq.heappop(heap)
        events += 1
        if events > cfg.max_events:
            raise RuntimeError(f"event budget exceeded ({cfg.max_events}); "
                               f"possible livelock at cycle {float(t)}")
        if kind == "wake":
            if pending.get(payload) != t:
                continue  # superseded by an earlier wake
            del pending[payload]
            try_emit(payload, t)
        elif kind == "feed":
            if pending.get(payload) != t:
                continue
            del pending[payload]
            try_feed(payload, t)
        elif kind == "dma_wdone":
            key, words = payload
            d = dmas[key]
            d.written += words
            pump_dma(d, t)
            push(t, "wake", key[0])   # producer may have been space-blocked
        elif kind == "dma_arrive":
            key, words = payload
            d = dmas[key]
            d.rfifo.committed -= words
            d.rfifo.deliver(words, t)
            push(t, "wake", key[1])

    unfinished = {vid: f"emitted {rt[vid].pos} of {rt[vid].done_pos} words"
                  for vid in members if rt[vid].pos < rt[vid].done_pos}

    end = Fraction(0)
    for vid in members:
        for ft in rt[vid].frame_last:
            if ft is not None and ft > end:
                end = ft

    occ, delivered, consumed = {}, {}, {}
    for key, fifo in sorted(fifos.items()):
        occ[key] = fifo.max_occ
        delivered[key] = fifo.delivered
        consumed[key] = fifo.popped
    for key, d in sorted(dmas.items()):
        occ[("dma_w",) + key] = d.wfifo.max_occ
        occ[("dma_r",) + key] = d.rfifo.max_occ
        delivered[key] = d.wfifo.delivered
        consumed[key] = d.rfifo.popped

    work = sum(perf[vid].work for vid in members if g.vertices[vid].kind == "Conv")

    return SimReport(
        frames=frames,
        total_cycles=math.ceil(end),
        first_input_time=Fraction(0),
        first_output={vid: rt[vid].first_out for vid in members if rt[vid].first_out is not None},
        frame_last_emission={vid: [x for x in rt[vid].frame_last if x is not None] for vid in members},
        stall_cycles={vid: rt[vid].stall for vid in members},
        max_occupancy=occ,
        delivered_words=delivered,
        consumed_words=consumed,
        deadlock=unfinished or None,
        waveform=waveform,
        work_done=work * frames,
    )


def auto_block_words(g: ModelGraph, members: set[str] | None, perf: dict[str, VertexPerf],
                     frames: int, budget_tokens: int = 300_000) -> int:
    """Pick a token size that keeps the event count near a fixed budget."""
    member_set = set(g.vertices) if members is None else set(members)
    total = sum(perf[vid].sigma_out for vid in member_set) * frames
    return max(1, -(-total // budget_tokens))


def sweep_ratio_variability(cfg: SimConfig, multipliers: list[float], freq_hz) -> list[tuple[float, float]]:
    """Scale the actual per-frame compression ratios and measure MACs/sec."""
    if not cfg.evictions:
        raise ValueError("config has no evicted edge to sweep")
    out = []
    for mult in multipliers:
        evs = {key: DmaParams(p.burst_words, p.latency_cycles,
                              [r * mult for r in p.ratio_trace], p.port)
               for key, p in cfg.evictions.items()}
        run = SimConfig(
            graph=cfg.graph, perf=cfg.perf, members=cfg.members, frames=cfg.frames,
            fifo_depths=dict(cfg.fifo_depths), default_fifo_depth=cfg.default_fifo_depth,
            evictions=evs, port_words_per_cycle=cfg.port_words_per_cycle,
            n_ports=cfg.n_ports,
            static_port_load_words_per_cycle=cfg.static_port_load_words_per_cycle,
            block_words=cfg.block_words, max_events=cfg.max_events,
        )
        report = simulate(run)
        if report.deadlock:
            raise DeadlockError(report.total_cycles, report.deadlock)
        secs = report.total_cycles / float(freq_hz)
        out.append((mult, report.work_done / secs if secs > 0 else 0.0))
    return out


def dump_waveform(report: SimReport, path: str) -> None:
    """CSV of (cycle, vertex, event) rows for offline inspection."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("cycle,vertex,event\n")
        for cycle, vid, event in report.waveform:
            fh.write(f"{cycle},{vid},{event}\n")
