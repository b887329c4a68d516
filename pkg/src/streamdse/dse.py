"""Greedy iterative design-space exploration.

The flow starts from the finest legal partitioning at minimal parallelism,
then per subgraph (1) raises the parallelism of the slowest engine while the
device fits, (2) packs on-chip memory, (3) spills buffers and weight regions
off-chip in descending bits-saved-per-bandwidth order until the memory fits,
and finally (4) merges adjacent subgraphs whenever that improves throughput
at the requested batch size. Every off-chip decision lands in an audit log
so a plan can be re-derived and re-checked from its artifacts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction

from .codec import estimate_ratio, measure_ratio, synthetic_activations, synthetic_weights
from .devices import DeviceSpec
from .estimator import (PerformanceReport, SubgraphPlan, batch_latency,
                        graph_pipeline_depth)
from .graph import ModelGraph
from .layers import (ResourceVector, codec_overhead, effective_perf, graph_perf,
                     parallelism_options, vertex_perf, vertex_resources, weight_volume)
from .memory import (FRAGMENT_STEPS, Infeasible, MemoryAllocation, Store,
                     allocate_on_chip, buffer_depths, evicted_buffer_depth,
                     eviction_benefit)

MERGE_ROUND_CAP = 100
IO_FIFO_DEPTH = 64


class InfeasibleDesign(ValueError):
    def __init__(self, msg: str, binding: str = ""):
        super().__init__(msg)
        self.binding = binding


@dataclass
class DesignVector:
    """Per-vertex design choices."""
    s_i: bool = False            # subgraph input flag
    s_o: bool = False            # subgraph output flag
    p: int = 1                   # operation parallelism
    a_i: bool = False            # input activations evicted
    a_o: bool = False            # output activations evicted
    m_frag: Fraction = Fraction(0)   # dynamic weight fraction

    def as_dict(self) -> dict:
        return {"s_i": self.s_i, "s_o": self.s_o, "p": self.p, "a_i": self.a_i,
                "a_o": self.a_o, "m_frag": [self.m_frag.numerator, self.m_frag.denominator]}


@dataclass
class SubgraphState:
    index: int
    members: list[str]                       # topological order
    pmap: dict[str, int]
    frag: dict[str, Fraction]                # conv id -> dynamic fraction
    evictions: list[tuple]                   # edge keys
    fifo_depths: dict[tuple, int]
    ii: int
    depth: Fraction
    compute: ResourceVector
    alloc: MemoryAllocation
    bandwidth_wpc: Fraction                  # total off-chip words/cycle
    audit: list[dict] = field(default_factory=list)

    def resources(self) -> dict:
        return {"dsp": self.compute.dsp, "lut": self.compute.lut + self.alloc.lutram_luts,
                "ff": self.compute.ff, "bram18k": self.alloc.bram18k, "uram": self.alloc.uram}


@dataclass
class DesignPlan:
    model: str
    device: str
    batch: int
    scheme: str
    act_ratio: float
    weight_ratios: dict[str, float]
    subgraphs: list[SubgraphState]
    report: PerformanceReport
    audit: list[dict]
    boundary_kinds: tuple | None = None

    def design_vectors(self, g: ModelGraph) -> dict[str, DesignVector]:
        out: dict[str, DesignVector] = {}
        for s in self.subgraphs:
            entry = {vid for vid in s.members
                     if all(e.src not in set(s.members) for e in g.in_edges(vid))}
            exits = {vid for vid in s.members
                     if all(e.dst not in set(s.members) for e in g.out_edges(vid))}
            ev = set(s.evictions)
            for vid in s.members:
                out[vid] = DesignVector(
                    s_i=vid in entry,
                    s_o=vid in exits,
                    p=s.pmap[vid],
                    a_i=any(k[1] == vid for k in ev),
                    a_o=any(k[0] == vid for k in ev),
                    m_frag=s.frag.get(vid, Fraction(0)),
                )
        return out


# -- ratio preparation -------------------------------------------------------


def prepare_ratios(g: ModelGraph, scheme: str, seed: int = 0,
                   calibration: list | None = None) -> tuple[float, dict[str, float]]:
    """Compression ratios the bandwidth model will use.

    Activations: average measured ratio over a calibration set (synthetic
    unless real samples are supplied). Weights: exact per-layer measured
    ratio on the (synthesised) weight words, known at compile time.
    """
    if scheme == "none":
        return 1.0, {vid: 1.0 for vid, v in g.vertices.items() if v.kind == "Conv"}
    samples = calibration or synthetic_activations(
        8, 4096, g.word_length, zero_fraction=0.6, seed=seed)
    act = estimate_ratio(samples, scheme).c_bar
    weights: dict[str, float] = {}
    convs = sorted(vid for vid, v in g.vertices.items() if v.kind == "Conv")
    for i, vid in enumerate(convs):
        n = min(weight_volume(g.vertices[vid]), 8192)
        stream = synthetic_weights(n, g.word_length, seed + 1000 + i)
        weights[vid] = float(measure_ratio(stream, scheme))
    return act, weights


# -- subgraph evaluation -----------------------------------------------------


class _Evaluator:
    """Shared machinery for passes 2-4 on one subgraph."""

    def __init__(self, g: ModelGraph, device: DeviceSpec, scheme: str,
                 act_ratio: float, weight_ratios: dict[str, float],
                 cost_table: dict | None):
        self.g = g
        self.device = device
        self.scheme = scheme
        self.act_ratio = act_ratio
        self.weight_ratios = weight_ratios
        self.table = cost_table
        self.L = g.word_length

    def perf(self, members: list[str], pmap: dict[str, int]):
        raw = {vid: vertex_perf(self.g, self.g.vertices[vid], pmap[vid]) for vid in members}
        return effective_perf(self.g, raw, set(members))

    def cut_edges(self, member_set: set[str]):
        ins = [e for e in self.g.edges if e.dst in member_set and e.src not in member_set]
        outs = [e for e in self.g.edges if e.src in member_set and e.dst not in member_set]
        if self.g.input_id in member_set:
            ins.append(None)  # the graph input stream
        return ins, outs

    def compute_resources(self, members, pmap, frag, evictions) -> ResourceVector:
        total = ResourceVector()
        for vid in members:
            total = total + vertex_resources(self.g.vertices[vid], pmap[vid], self.L, self.table)
        if self.scheme != "none":
            for _ in evictions:
                total = total + codec_overhead(self.scheme, 2, self.table)
            for vid, m in sorted(frag.items()):
                if m > 0:
                    total = total + codec_overhead(self.scheme, pmap[vid], self.table)
        return total

    def stores(self, members, pmap, frag, evictions, depths) -> list[Store]:
        out: list[Store] = []
        member_set = set(members)
        burst = self.device.dma_burst_words
        for vid in members:
            v = self.g.vertices[vid]
            if v.kind != "Conv":
                continue
            d = weight_volume(v)
            m = frag.get(vid, Fraction(0))
            static_words = d - int(m * d)
            p = pmap[vid]
            if static_words > 0:
                out.append(Store(f"w:{vid}", self.L * p, -(-static_words // p), foldable=True))
            if m > 0:
                out.append(Store(f"wdyn:{vid}", self.L * p, burst, foldable=True))
        ev = set(evictions)
        for e in self.g.edges:
            if e.src not in member_set or e.dst not in member_set:
                continue
            if e.key in ev:
                half = evicted_buffer_depth(self.device) // 2
                out.append(Store(f"evw:{e.src}->{e.dst}.{e.dst_slot}", self.L, half))
                out.append(Store(f"evr:{e.src}->{e.dst}.{e.dst_slot}", self.L, half))
            else:
                out.append(Store(f"fifo:{e.src}->{e.dst}.{e.dst_slot}", self.L, depths[e.key]))
        ins, outs = self.cut_edges(member_set)
        for i, e in enumerate(ins):
            out.append(Store(f"io_in:{i}", self.L, IO_FIFO_DEPTH))
        for i, e in enumerate(outs):
            out.append(Store(f"io_out:{i}", self.L, IO_FIFO_DEPTH))
        return out

    def bandwidth(self, members, pmap, frag, evictions, perf, ii) -> Fraction:
        member_set = set(members)
        ins, outs = self.cut_edges(member_set)
        total = Fraction(0)
        for e in ins:
            if e is None:
                from .graph import volume
                total += Fraction(volume(self.g.input_shape), ii)
            else:
                total += Fraction(e.words, ii)
        for e in outs:
            total += Fraction(e.words, ii)
        for key in evictions:
            src = key[0]
            total += perf[src].r_out * Fraction(self.act_ratio) * 2  # write + in-order read
        for vid, m in sorted(frag.items()):
            if m > 0:
                c = Fraction(self.weight_ratios.get(vid, 1.0))
                total += m * pmap[vid] * c
        return total

    def try_fit(self, members, pmap, audit=None, subgraph_index=0):
        """Passes 3-4: pack memory, spilling off-chip by descending benefit."""
        device = self.device
        perf = self.perf(members, pmap)
        ii = max(perf[vid].steady for vid in members)
        depths = buffer_depths(self.g, perf, set(members))
        frag: dict[str, Fraction] = {}
        evictions: list[tuple] = []
        bw_cap = device.bandwidth_words_per_cycle(self.L)

        compute = self.compute_resources(members, pmap, frag, evictions)
        if compute.dsp > device.dsp or compute.ff > device.ff or compute.lut > device.lut:
            return None

        d_prime = evicted_buffer_depth(device)
        t_db = device.dma_latency_cycles
        member_set = set(members)

        def alloc_now():
            stores = self.stores(members, pmap, frag, evictions, depths)
            comp = self.compute_resources(members, pmap, frag, evictions)
            if comp.dsp > device.dsp or comp.ff > device.ff or comp.lut > device.lut:
                return None, None, None
            try:
                alloc = allocate_on_chip(stores, device, device.lut - comp.lut)
            except Infeasible:
                return comp, None, stores
            if comp.lut + alloc.lutram_luts > device.lut:
                return comp, None, stores
            return comp, alloc, stores

        compute, alloc, _ = alloc_now()
        if compute is None:
            return None

        # off-chip pass: take candidates in descending L*saved/bandwidth order
        while alloc is None:
            bw_now = self.bandwidth(members, pmap, frag, evictions, perf, ii)
            candidates = []
            for e in self.g.edges:
                if e.src not in member_set or e.dst not in member_set or e.key in evictions:
                    continue
                d_b = depths[e.key]
                if d_b <= max(d_prime, t_db):
                    continue
                delta_d = d_b - d_prime
                delta_bw = perf[e.src].r_out * Fraction(self.act_ratio) * 2
                score = eviction_benefit(delta_d, delta_bw, self.L)
                candidates.append((-score, 0, e.key, delta_d, delta_bw))
            for vid in members:
                v = self.g.vertices[vid]
                if v.kind != "Conv":
                    continue
                m = frag.get(vid, Fraction(0))
                if m >= 1:
                    continue
                d = weight_volume(v)
                step = Fraction(1, FRAGMENT_STEPS)
                delta_d = step * d
                c = Fraction(self.weight_ratios.get(vid, 1.0))
                delta_bw = step * pmap[vid] * c
                score = eviction_benefit(delta_d, delta_bw, self.L)
                candidates.append((-score, 1, vid, delta_d, delta_bw))
            candidates.sort(key=lambda c: (c[0], c[1], str(c[2])))
            taken = False
            for neg_score, kind, key, delta_d, delta_bw in candidates:
                if bw_now + delta_bw > bw_cap:
                    continue
                if kind == 0:
                    evictions.append(key)
                    action = {"action": "evict", "edge": list(key)}
                else:
                    frag[key] = frag.get(key, Fraction(0)) + Fraction(1, FRAGMENT_STEPS)
                    action = {"action": "fragment", "vertex": key,
                              "m": [frag[key].numerator, frag[key].denominator]}
                if audit is not None:
                    audit.append({"pass": "off_chip", "subgraph": subgraph_index,
                                  "score": -neg_score,
                                  "delta_d_words": float(delta_d),
                                  "delta_bw_words_per_cycle": float(delta_bw),
                                  **action})
                taken = True
                break
            if not taken:
                return None
            compute, alloc, _ = alloc_now()
            if compute is None:
                return None

        bw_total = self.bandwidth(members, pmap, frag, evictions, perf, ii)
        if bw_total > bw_cap:
            return None
        depth = graph_pipeline_depth(self.g, perf, set(members))
        fifo = {k: (d_prime // 2 if k in evictions else v) for k, v in depths.items()}
        return SubgraphState(
            index=subgraph_index, members=list(members), pmap=dict(pmap),
            frag=dict(frag), evictions=sorted(evictions), fifo_depths=fifo,
            ii=ii, depth=depth, compute=compute, alloc=alloc,
            bandwidth_wpc=bw_total,
        )

    # -- pass 2 ---------------------------------------------------------------

    def optimise(self, members: list[str], subgraph_index: int = 0):
        """Raise parallelism of the slowest engine, then chase fill depth."""
        g = self.g
        pmap = {vid: 1 for vid in members}
        state = self.try_fit(members, pmap, subgraph_index=subgraph_index)
        if state is None:
            raise InfeasibleDesign(
                f"subgraph {subgraph_index} ({members[0]}..{members[-1]}) does not fit "
                f"the device even at minimal parallelism")
        options = {vid: parallelism_options(g, g.vertices[vid]) for vid in members}
        audit: list[dict] = []

        def raw_latency(vid, p):
            return vertex_perf(g, g.vertices[vid], p).latency

        def saturated(vid):
            pf = vertex_perf(g, g.vertices[vid], pmap[vid])
            return pf.work // pmap[vid] + (1 if pf.work % pmap[vid] else 0) <= max(pf.sigma_in, pf.sigma_out)

        def next_p(vid):
            opts = options[vid]
            i = opts.index(pmap[vid])
            return opts[i + 1] if i + 1 < len(opts) else None

        # phase 1: initiation interval
        blocked: set[str] = set()
        for _ in range(10_000):
            lats = sorted(((raw_latency(vid, pmap[vid]), vid) for vid in members),
                          key=lambda x: (-x[0], x[1]))
            bottleneck = None
            for lat, vid in lats:
                if vid not in blocked and not saturated(vid) and next_p(vid) is not None:
                    bottleneck = vid
                    break
                if lat < lats[0][0]:
                    break
            if bottleneck is None:
                break
            p_new = next_p(bottleneck)
            cand = self.try_fit(members, {**pmap, bottleneck: p_new}, subgraph_index=subgraph_index)
            if cand is None:
                blocked.add(bottleneck)
                continue
            pmap[bottleneck] = p_new
            state = cand
            audit.append({"pass": "parallelism", "subgraph": subgraph_index,
                          "vertex": bottleneck, "p": p_new, "ii": state.ii})

        # phase 2: spend leftovers on pipeline-depth reduction
        for _ in range(10_000):
            best = None
            for vid in members:
                if vid in blocked or saturated(vid):
                    continue
                p_new = next_p(vid)
                if p_new is None:
                    continue
                cand = self.try_fit(members, {**pmap, vid: p_new}, subgraph_index=subgraph_index)
                if cand is None:
                    continue
                if cand.depth < state.depth and (best is None or cand.depth < best[0].depth
                                                 or (cand.depth == best[0].depth and vid < best[1])):
                    best = (cand, vid, p_new)
            if best is None:
                break
            state, vid, p_new = best
            pmap[vid] = p_new
            audit.append({"pass": "depth", "subgraph": subgraph_index,
                          "vertex": vid, "p": p_new, "depth": float(state.depth)})

        # definitive off-chip pass, with audit records
        final = self.try_fit(members, pmap, audit=audit, subgraph_index=subgraph_index)
        assert final is not None
        final.audit = audit
        return final


# -- public passes -------------------------------------------------------------


def partition_groups(g: ModelGraph, boundary_kinds: set[str] | None = None) -> list[list[str]]:
    """Finest legal partitioning: a cut before every allowed boundary vertex.

    Cuts follow the deterministic topological order, so every producer lands
    in the same or an earlier subgraph by construction.
    """
    order = g.topological_order()
    groups: list[list[str]] = []
    for vid in order:
        kind = g.vertices[vid].kind
        if not groups:
            groups.append([vid])
        elif boundary_kinds is None or kind in boundary_kinds:
            groups.append([vid])
        else:
            groups[-1].append(vid)
    return groups


def initialize_min(g: ModelGraph, device: DeviceSpec, boundary_kinds: set[str] | None = None,
                   scheme: str = "none", act_ratio: float = 1.0,
                   weight_ratios: dict[str, float] | None = None,
                   cost_table: dict | None = None) -> list[SubgraphState]:
    """Maximal partitioning at minimal parallelism (p=1 everywhere).

    Each subgraph is feasibility-checked on the device; memory that cannot
    fit even with maximal off-chip spilling raises InfeasibleDesign.
    """
    weight_ratios = weight_ratios or {vid: 1.0 for vid, v in g.vertices.items()
                                      if v.kind == "Conv"}
    ev = _Evaluator(g, device, scheme, act_ratio, weight_ratios, cost_table)
    states = []
    for i, members in enumerate(partition_groups(g, boundary_kinds)):
        st = ev.try_fit(members, {vid: 1 for vid in members}, subgraph_index=i)
        if st is None:
            raise InfeasibleDesign(
                f"subgraph {i} ({members[0]}..{members[-1]}) exceeds device resources "
                f"even at minimal parallelism", binding="resources")
        st.index = i
        states.append(st)
    return states


def alloc_parallelism(g: ModelGraph, device: DeviceSpec, members: list[str],
                      scheme: str = "none", act_ratio: float = 1.0,
                      weight_ratios: dict[str, float] | None = None,
                      cost_table: dict | None = None, subgraph_index: int = 0) -> SubgraphState:
    """Passes 2-4 on one subgraph: balance the pipeline, then fit memory."""
    weight_ratios = weight_ratios or {vid: 1.0 for vid, v in g.vertices.items()
                                      if v.kind == "Conv"}
    ev = _Evaluator(g, device, scheme, act_ratio, weight_ratios, cost_table)
    return ev.optimise(members, subgraph_index=subgraph_index)


def alloc_off_chip(g: ModelGraph, device: DeviceSpec, members: list[str],
                   pmap: dict[str, int], scheme: str = "none", act_ratio: float = 1.0,
                   weight_ratios: dict[str, float] | None = None,
                   cost_table: dict | None = None) -> SubgraphState | None:
    """Pass 3-4 alone at a fixed parallelism; None if it cannot fit."""
    weight_ratios = weight_ratios or {vid: 1.0 for vid, v in g.vertices.items()
                                      if v.kind == "Conv"}
    ev = _Evaluator(g, device, scheme, act_ratio, weight_ratios, cost_table)
    audit: list[dict] = []
    st = ev.try_fit(members, pmap, audit=audit)
    if st is not None:
        st.audit = audit
    return st


def check_constraints(plan: DesignPlan, g: ModelGraph, device: DeviceSpec,
                      cost_table: dict | None = None) -> list[str]:
    """Recompute the three constraint families from scratch."""
    if not plan.subgraphs:
        return []
    violations: list[str] = []
    ev = _Evaluator(g, device, plan.scheme, plan.act_ratio, plan.weight_ratios, cost_table)
    position: dict[str, int] = {}
    for s in plan.subgraphs:
        for vid in s.members:
            position[vid] = s.index
    missing = sorted(set(g.vertices) - set(position))
    if missing:
        violations.append(f"vertices not scheduled: {missing[:6]}")
    for e in g.edges:
        if e.src in position and e.dst in position and position[e.src] > position[e.dst]:
            violations.append(
                f"dependency: edge {e.src}->{e.dst} runs from subgraph {position[e.src]} "
                f"to earlier subgraph {position[e.dst]}")
    cap = device.resources
    bw_cap = device.bandwidth_words_per_cycle(g.word_length)
    for s in plan.subgraphs:
        perf = ev.perf(s.members, s.pmap)
        comp = ev.compute_resources(s.members, s.pmap, s.frag, s.evictions)
        try:
            stores = ev.stores(s.members, s.pmap, s.frag, s.evictions,
                               {k: v for k, v in s.fifo_depths.items()})
            alloc = allocate_on_chip(stores, device, device.lut - comp.lut)
        except Infeasible as exc:
            violations.append(f"subgraph {s.index}: on-chip memory infeasible ({exc.binding})")
            continue
        usage = {"dsp": comp.dsp, "lut": comp.lut + alloc.lutram_luts, "ff": comp.ff,
                 "bram18k": alloc.bram18k, "uram": alloc.uram}
        limits = {"dsp": cap.dsp, "lut": cap.lut, "ff": cap.ff,
                  "bram18k": cap.bram18k, "uram": cap.uram}
        for key, used in usage.items():
            if used > limits[key]:
                violations.append(
                    f"subgraph {s.index}: {key} {used} exceeds device {limits[key]} "
                    f"by {used - limits[key]}")
        bw = ev.bandwidth(s.members, s.pmap, s.frag, s.evictions, perf, s.ii)
        if bw > bw_cap:
            over = device.gbps(bw - bw_cap, g.word_length)
            violations.append(
                f"subgraph {s.index}: bandwidth {device.gbps(bw, g.word_length):.3f} Gbps "
                f"exceeds device {device.bandwidth_gbps} Gbps by {over:.3f} Gbps")
    return violations


def _report(states: list[SubgraphState], batch: int, device: DeviceSpec) -> PerformanceReport:
    plans = [SubgraphPlan(index=s.index, vertices=s.members, ii=Fraction(s.ii),
                          depth=s.depth, resources=s.resources(),
                          bandwidth_words_per_cycle=s.bandwidth_wpc)
             for s in states]
    return batch_latency(plans, batch, device.freq_hz, device.reconfig_time_s)


def merge_subgraphs(states: list[SubgraphState], ev: _Evaluator, batch: int,
                    device: DeviceSpec, audit: list[dict],
                    memo: dict | None = None) -> list[SubgraphState]:
    """Accept the adjacent merge with the best throughput gain, repeatedly."""
    memo = {} if memo is None else memo

    def eval_union(members: tuple[str, ...]):
        if members in memo:
            return memo[members]
        try:
            st = ev.optimise(list(members), subgraph_index=0)
        except InfeasibleDesign:
            st = None
        memo[members] = st
        return st

    for _ in range(MERGE_ROUND_CAP):
        base = _report(states, batch, device)
        best = None
        for i in range(len(states) - 1):
            union = tuple(states[i].members + states[i + 1].members)
            cand = eval_union(union)
            if cand is None:
                continue
            trial = states[:i] + [cand] + states[i + 2:]
            rep = _report(trial, batch, device)
            if rep.throughput_fps > base.throughput_fps:
                key = (rep.throughput_fps, -i)
                if best is None or key > best[0]:
                    best = (key, i, cand, rep)
        if best is None:
            return states
        _, i, cand, rep = best
        audit.append({"pass": "merge", "left": states[i].index, "right": states[i + 1].index,
                      "throughput_fps": float(rep.throughput_fps)})
        states = states[:i] + [cand] + states[i + 2:]
        for idx, s in enumerate(states):
            s.index = idx
    return states


def run_dse(g: ModelGraph, device: DeviceSpec, batch: int,
            scheme: str = "none", boundary_kinds: set[str] | None = None,
            seed: int = 0, cost_table: dict | None = None,
            calibration: list | None = None) -> DesignPlan:
    """End-to-end exploration; deterministic for fixed inputs."""
    if batch < 1:
        raise InfeasibleDesign("batch must be >= 1")
    act_ratio, weight_ratios = prepare_ratios(g, scheme, seed, calibration)
    ev = _Evaluator(g, device, scheme, act_ratio, weight_ratios, cost_table)
    groups = partition_groups(g, boundary_kinds)
    audit: list[dict] = [{"pass": "initialize", "subgraphs": len(groups)}]
    states: list[SubgraphState] = []
    for i, members in enumerate(groups):
        st = ev.optimise(members, subgraph_index=i)
        st.index = i
        states.append(st)
    memo = {tuple(s.members): s for s in states}
    states = merge_subgraphs(states, ev, batch, device, audit, memo)
    for idx, s in enumerate(states):
        s.index = idx
        for rec in s.audit:
            rec["subgraph"] = idx
        audit.extend(s.audit)
    report = _report(states, batch, device)
    plan = DesignPlan(
        model=g.name, device=device.name, batch=batch, scheme=scheme,
        act_ratio=act_ratio, weight_ratios=weight_ratios,
        subgraphs=states, report=report, audit=audit,
        boundary_kinds=tuple(sorted(boundary_kinds)) if boundary_kinds else None,
    )
    leftovers = check_constraints(plan, g, device, cost_table)
    if leftovers:
        raise InfeasibleDesign("internal error: plan violates constraints: " + "; ".join(leftovers))
    return plan


# -- serialization -------------------------------------------------------------


def _key_str(key: tuple) -> str:
    return f"{key[0]}|{key[1]}|{key[2]}"


def _key_parse(s: str) -> tuple:
    src, dst, slot = s.split("|")
    return (src, dst, int(slot))


def plan_to_dict(plan: DesignPlan) -> dict:
    return {
        "model": plan.model,
        "device": plan.device,
        "batch": plan.batch,
        "scheme": plan.scheme,
        "act_ratio": plan.act_ratio,
        "weight_ratios": dict(sorted(plan.weight_ratios.items())),
        "boundary_kinds": list(plan.boundary_kinds) if plan.boundary_kinds else None,
        "subgraphs": [{
            "index": s.index,
            "vertices": s.members,
            "parallelism": {vid: s.pmap[vid] for vid in s.members},
            "fragmentation": {vid: [m.numerator, m.denominator]
                              for vid, m in sorted(s.frag.items()) if m > 0},
            "evictions": [list(k) for k in s.evictions],
            "fifo_depths": {_key_str(k): d for k, d in sorted(s.fifo_depths.items())},
            "ii_cycles": s.ii,
            "depth_cycles": [s.depth.numerator, s.depth.denominator],
            "resources": s.resources(),
            "bandwidth_words_per_cycle": [s.bandwidth_wpc.numerator, s.bandwidth_wpc.denominator],
        } for s in plan.subgraphs],
        "report": plan.report.as_dict(),
    }


def plan_from_dict(doc: dict, g: ModelGraph, device: DeviceSpec) -> DesignPlan:
    states = []
    for rec in doc["subgraphs"]:
        states.append(SubgraphState(
            index=rec["index"],
            members=list(rec["vertices"]),
            pmap={vid: int(p) for vid, p in rec["parallelism"].items()},
            frag={vid: Fraction(n, d) for vid, (n, d) in rec.get("fragmentation", {}).items()},
            evictions=[tuple(k) for k in rec.get("evictions", [])],
            fifo_depths={_key_parse(k): int(v) for k, v in rec["fifo_depths"].items()},
            ii=int(rec["ii_cycles"]),
            depth=Fraction(*rec["depth_cycles"]),
            compute=ResourceVector(),        # recomputed on demand
            alloc=MemoryAllocation(),
            bandwidth_wpc=Fraction(*rec["bandwidth_words_per_cycle"]),
        ))
    plans = [SubgraphPlan(index=s.index, vertices=s.members, ii=Fraction(s.ii), depth=s.depth,
                          resources=rec.get("resources", {}),
                          bandwidth_words_per_cycle=s.bandwidth_wpc)
             for s, rec in zip(states, doc["subgraphs"])]
    report = batch_latency(plans, doc["batch"], device.freq_hz, device.reconfig_time_s)
    return DesignPlan(
        model=doc["model"], device=doc["device"], batch=doc["batch"], scheme=doc["scheme"],
        act_ratio=doc["act_ratio"], weight_ratios=dict(doc["weight_ratios"]),
        subgraphs=states, report=report, audit=[],
        boundary_kinds=tuple(doc["boundary_kinds"]) if doc.get("boundary_kinds") else None,
    )


def plan_json(plan: DesignPlan) -> str:
    return json.dumps(plan_to_dict(plan), indent=2, sort_keys=True)
