"""Analytical performance model for pipelined subgraphs.

The fill (pipeline-depth) model composes per-vertex profiles: each vertex
receives its input feature map spread over the producer's busy window, so
its fill contribution is its line-buffer content divided by that effective
initiation rate. All arithmetic is exact (fractions), which lets tests
compare against the discrete-event simulator without float noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .graph import ModelGraph
from .layers import VertexPerf


def _members(g: ModelGraph, within: set[str] | None) -> set[str]:
    return set(g.vertices) if within is None else set(within)


def _local_ancestors(g: ModelGraph, vid: str, members: set[str]) -> list[str]:
    return sorted(e.src for e in g.in_edges(vid) if e.src in members)


def interval_prev(g: ModelGraph, vid: str, perf: dict[str, VertexPerf],
                  within: set[str] | None = None) -> Fraction:
    """Busy window of the slowest direct predecessor: max(latency + fill)."""
    members = _members(g, within)
    anc = _local_ancestors(g, vid, members)
    if not anc:
        raise ValueError(f"vertex {vid} has no ancestors; its initiation rate is its own input rate")
    return Fraction(max(perf[a].latency + perf[a].rho for a in anc))


def initiation_rate(g: ModelGraph, vid: str, perf: dict[str, VertexPerf],
                    within: set[str] | None = None) -> Fraction:
    """Effective input rate during the vertex's fill region (words/cycle)."""
    members = _members(g, within)
    if not _local_ancestors(g, vid, members):
        return perf[vid].r_in
    return Fraction(perf[vid].sigma_in) / interval_prev(g, vid, perf, within)


def fill_delays(g: ModelGraph, perf: dict[str, VertexPerf],
                within: set[str] | None = None) -> dict[str, Fraction]:
    """Fill delay up to and including each reachable vertex.

    Each delay equals the maximum, over entry-to-vertex paths, of the summed
    per-vertex fill terms rho/r_st. Computed as a longest-path DP over the
    DAG, which is equivalent to enumerating all simple paths because the
    per-vertex terms are non-negative and path-independent.
    """
    members = _members(g, within)
    order = g.topological_order(within=members)
    delay: dict[str, Fraction] = {}
    for u in order:
        anc = _local_ancestors(g, u, members)
        term = Fraction(perf[u].rho) / initiation_rate(g, u, perf, within)
        if not anc:
            delay[u] = term
        else:
            feeds = [delay[a] for a in anc if a in delay]
            if feeds:
                delay[u] = max(feeds) + term
    return delay


def vertex_delay(g: ModelGraph, vid: str, perf: dict[str, VertexPerf],
                 within: set[str] | None = None) -> Fraction:
    members = _members(g, within)
    if vid not in members:
        raise ValueError(f"vertex {vid} is outside the evaluated subgraph")
    delays = fill_delays(g, perf, within)
    if vid not in delays:
        raise ValueError(f"vertex {vid} is unreachable from the subgraph entry")
    return delays[vid]


def graph_pipeline_depth(g: ModelGraph, perf: dict[str, VertexPerf],
                         within: set[str] | None = None) -> Fraction:
    """Overall fill: the largest per-vertex delay in the (sub)graph."""
    delays = fill_delays(g, perf, within)
    return max(delays.values(), default=Fraction(0))


def initiation_interval(perf: dict[str, VertexPerf], within: set[str] | None = None) -> int:
    """Steady-state frame cadence: the busiest vertex's cycles per frame."""
    vids = perf.keys() if within is None else within
    return max(perf[v].steady for v in vids)


# -- system-level latency/throughput ----------------------------------------


@dataclass
class SubgraphPlan:
    """One sequentially-executed hardware configuration."""
    index: int
    vertices: list[str]
    ii: Fraction
    depth: Fraction
    resources: dict = field(default_factory=dict)
    bandwidth_words_per_cycle: Fraction = Fraction(0)

    def as_dict(self) -> dict:
        return {
            "index": self.index,
            "vertices": list(self.vertices),
            "ii": [self.ii.numerator, self.ii.denominator],
            "depth": [self.depth.numerator, self.depth.denominator],
            "resources": dict(self.resources),
            "bandwidth_words_per_cycle": [self.bandwidth_words_per_cycle.numerator,
                                          self.bandwidth_words_per_cycle.denominator],
        }


@dataclass(frozen=True)
class PerformanceReport:
    batch: int
    latency_s: Fraction
    compute_s: Fraction
    reconfig_s: Fraction
    n_subgraphs: int
    per_subgraph: tuple[dict, ...] = ()

    @property
    def throughput_fps(self) -> Fraction:
        return Fraction(self.batch) / self.latency_s

    @property
    def reconfig_share(self) -> Fraction:
        return self.reconfig_s / self.latency_s

    def as_dict(self) -> dict:
        return {
            "batch": self.batch,
            "latency_s": [self.latency_s.numerator, self.latency_s.denominator],
            "latency_s_float": float(self.latency_s),
            "throughput_fps": float(self.throughput_fps),
            "compute_s_float": float(self.compute_s),
            "reconfig_s_float": float(self.reconfig_s),
            "reconfig_share_pct": float(100 * self.reconfig_share),
            "n_subgraphs": self.n_subgraphs,
            "per_subgraph": list(self.per_subgraph),
        }


def batch_latency(plans: list[SubgraphPlan], batch: int, freq_hz, reconfig_time_s) -> PerformanceReport:
    """Whole-batch wall time: per-subgraph (b*II + depth)/f plus N reloads."""
    if not plans:
        raise ValueError("empty plan")
    if batch < 1:
        raise ValueError("batch must be >= 1")
    f = Fraction(freq_hz)
    if f <= 0:
        raise ValueError("frequency must be positive")
    t_ri = Fraction(reconfig_time_s)
    compute = sum((batch * p.ii + p.depth) / f for p in plans)
    reconfig = len(plans) * t_ri
    total = compute + reconfig
    per = tuple({
        "index": p.index,
        "ii_cycles": float(p.ii),
        "depth_cycles": float(p.depth),
        "time_s": float((batch * p.ii + p.depth) / f),
    } for p in plans)
    return PerformanceReport(batch=batch, latency_s=total, compute_s=compute,
                             reconfig_s=reconfig, n_subgraphs=len(plans), per_subgraph=per)


def throughput(plans: list[SubgraphPlan], batch: int, freq_hz, reconfig_time_s) -> Fraction:
    return batch_latency(plans, batch, freq_hz, reconfig_time_s).throughput_fps
