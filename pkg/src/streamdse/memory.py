"""On-chip/off-chip memory transforms and the on-chip packing allocator.

Three mechanisms trade on-chip storage for off-chip bandwidth:

  * skip/branch buffers sized from inter-branch fill skew,
  * activation eviction: replace a deep edge buffer with two burst FIFOs
    plus a DMA spill/refill path,
  * weight fragmentation: keep a static fraction of a layer's weights
    on-chip and stream the dynamic remainder per frame.

The allocator packs every store into BRAM18K / URAM / LUTRAM primitives
with fixed geometries, balancing the utilisation ratios across types.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

from .devices import DeviceSpec
from .estimator import fill_delays
from .graph import Edge, ModelGraph, Vertex
from .layers import VertexPerf, weight_volume

BRAM18K_GEOMETRIES = ((36, 512), (18, 1024), (9, 2048), (4, 4096), (2, 8192), (1, 16384))
URAM_GEOMETRY = (72, 4096)
LUTRAM_BITS_PER_LUT = 64
DEFAULT_SLACK_WORDS = 32
DEFAULT_FIFO_DEPTH = 64
FRAGMENT_STEPS = 16


class IllegalEviction(ValueError):
    """Eviction would stall the pipeline (buffer shallower than the DMA delay)."""


class Infeasible(ValueError):
    def __init__(self, msg: str, binding: str):
        super().__init__(msg)
        self.binding = binding


@dataclass(frozen=True)
class BufferSpec:
    depth: int          # required on-chip depth of the edge buffer, words
    evicted_depth: int  # total depth of the two residual FIFOs, words
    dma_delay: int      # DMA round-trip, cycles


@dataclass(frozen=True)
class EvictionResult:
    delta_d: int            # on-chip words saved
    delta_bw: Fraction      # extra off-chip traffic, words/cycle
    rate: Fraction          # average data rate on the edge, words/cycle
    c_bar: float            # average compression ratio
    alpha: float            # read penalty factor >= 1
    buffer: BufferSpec


@dataclass(frozen=True)
class FragmentationResult:
    m: Fraction             # dynamic fraction, quantised
    depth: int              # original weight store depth, words
    delta_d: Fraction       # on-chip words saved = m * depth
    delta_bw: Fraction      # off-chip words/cycle = m * rate * c
    rate: Fraction          # weight consumption rate, words/cycle
    c: float                # compile-time compression ratio
    static_depth: int       # remaining on-chip words (excl. the burst buffer)


# -- branch buffer sizing ----------------------------------------------------


def buffer_depths(g: ModelGraph, perf: dict[str, VertexPerf],
                  within: set[str] | None = None,
                  slack: int = DEFAULT_SLACK_WORDS,
                  default_fifo_depth: int = DEFAULT_FIFO_DEPTH) -> dict[tuple, int]:
    """Required buffer depth for every edge internal to the (sub)graph.

    At a merge point the early branch must hold data while the longest
    sibling branch fills: depth = rate * (fill-skew + frame-window
    mismatch), capped by the tensor volume (holding the whole frame always
    suffices), plus slack. The window-mismatch term covers the drain-rate
    gap over the fill frame: the merge paces at its own frame window, the
    early producer at a shorter one, so words keep accruing after the
    merge activates. Edges whose consumer has a single input keep a
    default FIFO.
    """
    members = set(g.vertices) if within is None else set(within)
    delays = fill_delays(g, perf, within)
    out: dict[tuple, int] = {}
    for e in g.edges:
        if e.src not in members or e.dst not in members:
            continue
        siblings = [x for x in g.in_edges(e.dst) if x.src in members]
        if len(siblings) < 2 or e.src not in delays:
            out[e.key] = min(e.words, default_fifo_depth)
            continue
        longest = max(delays[x.src] for x in siblings if x.src in delays)
        skew = abs(longest - delays[e.src])
        window = lambda vid: perf[vid].latency + perf[vid].rho
        mismatch = max(0, window(e.dst) - window(e.src))
        rate = perf[e.src].r_out
        out[e.key] = min(e.words, math.ceil(rate * (skew + mismatch)) + slack)
    return out


def branch_buffer_depth(g: ModelGraph, perf: dict[str, VertexPerf], e: Edge,
                        within: set[str] | None = None,
                        slack: int = DEFAULT_SLACK_WORDS,
                        default_fifo_depth: int = DEFAULT_FIFO_DEPTH) -> int:
    members = set(g.vertices) if within is None else set(within)
    if e.src not in members or e.dst not in members:
        raise ValueError(f"edge {e.key} does not lie inside the evaluated subgraph")
    return buffer_depths(g, perf, within, slack, default_fifo_depth)[e.key]


# -- activation eviction -----------------------------------------------------


def evicted_buffer_depth(device: DeviceSpec) -> int:
    """Two burst-sized FIFOs: one filling towards DMA, one refilling from it."""
    return 2 * device.dma_burst_words


def evict_activation(e: Edge, depth: int, perf: dict[str, VertexPerf], device: DeviceSpec,
                     c_bar: float = 1.0, in_order: bool = True) -> EvictionResult:
    """Push an edge's buffered activations off-chip.

    Legal only while the replaced buffer is deeper than both the residual
    FIFOs and the DMA round-trip delay; otherwise the spill adds stalls.
    """
    d_prime = evicted_buffer_depth(device)
    t_db = device.dma_latency_cycles
    if depth <= max(d_prime, t_db):
        raise IllegalEviction(
            f"edge {e.key}: buffer depth {depth} <= max(residual {d_prime}, dma delay {t_db})")
    rate = perf[e.src].r_out
    alpha = 1.0 if in_order else device.alpha_random
    delta_bw = rate * Fraction(c_bar) * (1 + Fraction(alpha))
    return EvictionResult(
        delta_d=depth - d_prime,
        delta_bw=delta_bw,
        rate=rate,
        c_bar=c_bar,
        alpha=alpha,
        buffer=BufferSpec(depth=depth, evicted_depth=d_prime, dma_delay=t_db),
    )


# -- weight fragmentation ----------------------------------------------------


def quantise_fraction(m, steps: int = FRAGMENT_STEPS) -> Fraction:
    m = Fraction(m).limit_denominator(10**9)
    if not 0 <= m <= 1:
        raise ValueError(f"dynamic fraction must lie in [0,1], got {m}")
    return Fraction(round(m * steps), steps)


def fragment_weights(v: Vertex, m, p: int, c: float = 1.0,
                     steps: int = FRAGMENT_STEPS) -> FragmentationResult:
    """Split a layer's weight store into static (on-chip) and dynamic regions.

    The pipeline reads weights at p words/cycle; the dynamic fraction m is
    re-streamed from off-chip at that rate, scaled by the compile-time
    compression ratio c.
    """
    depth = weight_volume(v)
    m = quantise_fraction(m, steps)
    rate = Fraction(p)
    delta_d = m * depth
    static_depth = depth - math.ceil(delta_d)
    return FragmentationResult(
        m=m,
        depth=depth,
        delta_d=delta_d,
        delta_bw=m * rate * Fraction(c),
        rate=rate,
        c=c,
        static_depth=static_depth,
    )


# -- heuristic score ---------------------------------------------------------


def eviction_benefit(delta_d, delta_bw, word_length: int) -> float:
    """Rank off-chip candidates: on-chip bits saved per unit of bandwidth."""
    if delta_bw == 0:
        return math.inf
    return float(word_length * Fraction(delta_d) / Fraction(delta_bw))


# -- on-chip packing ---------------------------------------------------------


@dataclass(frozen=True)
class Store:
    name: str
    width_bits: int
    depth: int
    foldable: bool = False  # sequential-access stores may be reshaped

    @property
    def bits(self) -> int:
        return self.width_bits * self.depth


@dataclass
class MemoryAllocation:
    assignment: dict[str, tuple[str, int]] = field(default_factory=dict)  # store -> (type, count)
    bram18k: int = 0
    uram: int = 0
    lutram_luts: int = 0

    def utilisation(self, device: DeviceSpec, logic_luts: int = 0) -> dict[str, float]:
        out = {}
        if device.bram18k:
            out["bram18k"] = self.bram18k / device.bram18k
        if device.uram:
            out["uram"] = self.uram / device.uram
        if device.lut:
            out["lutram"] = (self.lutram_luts + logic_luts) / device.lut
        return out


def _primitive_count(store: Store, geom_list) -> int:
    best = None
    for gw, gd in geom_list:
        n = math.ceil(store.width_bits / gw) * math.ceil(store.depth / gd)
        if best is None or n < best:
            best = n
    return best


def _folded_count(store: Store, gw: int, gd: int) -> int:
    rows = math.ceil(store.bits / gw)
    return math.ceil(rows / gd)


def count_primitives(store: Store, kind: str) -> int:
    """Primitives of one type needed for a store, honouring foldability."""
    if kind == "bram18k":
        if store.foldable:
            return min(_folded_count(store, 18, 1024), _primitive_count(store, BRAM18K_GEOMETRIES))
        return _primitive_count(store, BRAM18K_GEOMETRIES)
    if kind == "uram":
        if store.foldable:
            return _folded_count(store, *URAM_GEOMETRY)
        gw, gd = URAM_GEOMETRY
        return math.ceil(store.width_bits / gw) * math.ceil(store.depth / gd)
    if kind == "lutram":
        return math.ceil(store.bits / LUTRAM_BITS_PER_LUT)
    raise ValueError(f"unknown primitive kind {kind}")


LUTRAM_MAX_BITS = 2048  # larger stores belong in block memories


def allocate_on_chip(stores: list[Store], device: DeviceSpec,
                     lut_budget_for_ram: int | None = None) -> MemoryAllocation:
    """Greedy first-fit-decreasing packing with a utilisation-balancing sweep.

    Objective: make the design fit; among fitting assignments prefer the one
    with the smallest maximum utilisation ratio across the primitive types.
    Raises Infeasible naming the binding resource when it cannot fit.
    """
    alloc = MemoryAllocation()
    caps = {
        "bram18k": device.bram18k,
        "uram": device.uram,
        "lutram": lut_budget_for_ram if lut_budget_for_ram is not None else device.lut,
    }
    usage = {"bram18k": 0, "uram": 0, "lutram": 0}
    kinds = [k for k, cap in caps.items() if cap > 0]
    if not kinds:
        raise Infeasible("device has no on-chip memory", "bram18k")

    def util_after(kind: str, count: int) -> float:
        return (usage[kind] + count) / caps[kind]

    for store in sorted(stores, key=lambda s: (-s.bits, s.name)):
        options = []
        for kind in kinds:
            if kind == "lutram" and store.bits > LUTRAM_MAX_BITS:
                continue
            n = count_primitives(store, kind)
            if usage[kind] + n <= caps[kind]:
                # prefer the choice that keeps the worst utilisation lowest,
                # then the one wasting fewest bits
                worst = max(util_after(k, n if k == kind else 0) for k in kinds)
                options.append((worst, n * _prim_bits(kind) - store.bits, kind, n))
        if not options:
            demands = {k: count_primitives(store, k) for k in kinds
                       if not (k == "lutram" and store.bits > LUTRAM_BITS_PER_LUT * 32
                               and store.bits > LUTRAM_MAX_BITS)}
            if not demands:
                raise Infeasible(
                    f"store {store.name} ({store.bits} bits) has no block memory to live in",
                    "bram18k")
            binding = min(demands, key=lambda k: (caps[k] - usage[k] - demands[k]))
            raise Infeasible(
                f"store {store.name} ({store.bits} bits) does not fit: "
                + ", ".join(f"{k} {usage[k]}+{n}>{caps[k]}" for k, n in demands.items()),
                binding)
        options.sort()
        _, _, kind, n = options[0]
        usage[kind] += n
        alloc.assignment[store.name] = (kind, n)

    _rebalance(alloc, stores, usage, caps)
    alloc.bram18k = usage["bram18k"]
    alloc.uram = usage["uram"]
    alloc.lutram_luts = usage["lutram"]
    return alloc


def _prim_bits(kind: str) -> int:
    if kind == "bram18k":
        return 18 * 1024
    if kind == "uram":
        return 72 * 4096
    return LUTRAM_BITS_PER_LUT


def _rebalance(alloc: MemoryAllocation, stores: list[Store], usage: dict, caps: dict) -> None:
    """Move stores between block-memory types while it narrows the spread."""
    by_name = {s.name: s for s in stores}
    movable = [k for k in ("bram18k", "uram") if caps[k] > 0]
    if len(movable) < 2:
        return
    for _ in range(200):
        ratios = {k: usage[k] / caps[k] for k in movable}
        hi = max(movable, key=lambda k: ratios[k])
        lo = min(movable, key=lambda k: ratios[k])
        if ratios[hi] - ratios[lo] < 1e-9:
            return
        best = None
        for name, (kind, n) in alloc.assignment.items():
            if kind != hi:
                continue
            n_new = count_primitives(by_name[name], lo)
            if usage[lo] + n_new > caps[lo]:
                continue
            new_hi = (usage[hi] - n) / caps[hi]
            new_lo = (usage[lo] + n_new) / caps[lo]
            new_spread = abs(max(new_hi, new_lo) - min(new_hi, new_lo))
            if new_spread < (ratios[hi] - ratios[lo]) - 1e-12:
                cand = (new_spread, name, kind, n, n_new)
                if best is None or cand < best:
                    best = cand
        if best is None:
            return
        _, name, kind, n, n_new = best
        usage[hi] -= n
        usage[lo] += n_new
        alloc.assignment[name] = (lo, n_new)
