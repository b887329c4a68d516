import json
import os
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streamdse.graph import parse_model
from streamdse.layers import (InvalidParallelism, graph_perf, effective_perf,
                              parallelism_options, vertex_perf, vertex_resources,
                              weight_volume, codec_overhead, ResourceVector)
from streamdse.simulator import SimConfig, simulate

from conftest import build_graph

GOLDEN = os.path.join(os.path.dirname(__file__), "golden", "resource_table.json")


def single_vertex_graph(kind, attrs, shape=(4, 8, 8)):
    return build_graph({
        "name": "one",
        "input": {"id": "v", "shape": list(shape), "word_length": 8},
        "vertices": [{"id": "v", "kind": kind, "attrs": attrs}],
        "edges": [],
    })


def test_relu_rate_one():
    g = single_vertex_graph("Relu", {})
    p = vertex_perf(g, g.vertices["v"], 1)
    assert p.r_in == 1
    assert p.rho == 1
    assert p.latency == p.sigma_in == 256


def test_conv_latency_matches_simulator_exactly():
    # Conv 3x3, C_in=4, C_out=4, 8x8 input, pad 1, p=1: the simulator's
    # steady per-frame interval is the latency, to the cycle.
    g = single_vertex_graph("Conv", {"kernel": 3, "padding": 1, "filters": 4})
    perf = vertex_perf(g, g.vertices["v"], 1)
    assert perf.latency == 9 * 4 * 4 * 8 * 8  # MACs at p=1
    rep = simulate(SimConfig(graph=g, perf={"v": perf}, frames=3))
    assert rep.deadlock is None
    assert rep.steady_interval("v") == perf.latency


def test_doubling_p_halves_latency_before_saturation():
    g = single_vertex_graph("Conv", {"kernel": 3, "padding": 1, "filters": 4})
    v = g.vertices["v"]
    lat1 = vertex_perf(g, v, 1).latency
    lat2 = vertex_perf(g, v, 2).latency
    assert lat2 * 2 == lat1
    # cross-check the halved point against the simulator as well
    rep = simulate(SimConfig(graph=g, perf={"v": vertex_perf(g, v, 2)}, frames=3))
    assert rep.steady_interval("v") == lat2


def test_latency_saturates_at_stream_rate():
    g = single_vertex_graph("Conv", {"kernel": 3, "padding": 1, "filters": 4})
    v = g.vertices["v"]
    opts = parallelism_options(g, v)
    lats = [vertex_perf(g, v, p).latency for p in opts]
    floor = max(vertex_perf(g, v, 1).sigma_in, vertex_perf(g, v, 1).sigma_out)
    assert lats[-1] == floor
    # strictly decreasing until the floor, then flat
    hit = False
    for a, b in zip(lats, lats[1:]):
        if a == floor:
            hit = True
        assert (b < a) or (a == b == floor)
    assert hit or lats[-1] == floor


def test_invalid_parallelism_raises():
    g = single_vertex_graph("Conv", {"kernel": 3, "padding": 1, "filters": 4})
    with pytest.raises(InvalidParallelism):
        vertex_perf(g, g.vertices["v"], 5)  # 5 does not divide 9*4*4


def test_relu_has_no_dsp():
    g = single_vertex_graph("Relu", {})
    assert vertex_resources(g.vertices["v"], 1, 8).dsp == 0


def test_conv_dsp_linear_in_p():
    g = single_vertex_graph("Conv", {"kernel": 3, "padding": 1, "filters": 4})
    v = g.vertices["v"]
    r1 = vertex_resources(v, 1, 8)
    r2 = vertex_resources(v, 2, 8)
    assert r1.dsp == 1 and r2.dsp == 2


def test_resources_against_golden_table():
    with open(GOLDEN, "r", encoding="utf-8") as fh:
        golden = json.load(fh)
    for rec in golden:
        g = single_vertex_graph(rec["kind"], rec.get("attrs", {}))
        got = vertex_resources(g.vertices["v"], rec["p"], rec["word_length"])
        assert got.dsp == rec["dsp"], rec
        assert got.lut == rec["lut"], rec
        assert got.ff == rec["ff"], rec


def test_resource_monotonicity_in_p():
    g = single_vertex_graph("Conv", {"kernel": 3, "padding": 1, "filters": 4})
    v = g.vertices["v"]
    opts = parallelism_options(g, v)
    prev = None
    for p in opts:
        cur = vertex_resources(v, p, 8)
        if prev is not None:
            assert prev <= cur
        prev = cur


def test_weight_volume_values(models):
    g = build_graph({
        "name": "w",
        "input": {"id": "c", "shape": [4, 8, 8], "word_length": 8},
        "vertices": [{"id": "c", "kind": "Conv", "attrs": {"kernel": 3, "padding": 1, "filters": 4}}],
        "edges": [],
    })
    assert weight_volume(g.vertices["c"]) == 144
    g2 = build_graph({
        "name": "w2",
        "input": {"id": "c", "shape": [64, 8, 8], "word_length": 8},
        "vertices": [{"id": "c", "kind": "Conv", "attrs": {"kernel": 1, "filters": 128}}],
        "edges": [],
    })
    assert weight_volume(g2.vertices["c"]) == 8192
    total = sum(weight_volume(v) for v in models["unet"].vertices.values() if v.kind == "Conv")
    assert round(total / 1e6, 2) == 28.96


def test_weight_volume_rejects_weightless_kinds(models):
    with pytest.raises(ValueError):
        weight_volume(models["linear"].vertices["r1"])


def test_latency_rate_product_bounds_sigma(models):
    for name in ("linear", "diamond", "long_skip", "unet"):
        g = models[name]
        for vid, v in g.vertices.items():
            pf = vertex_perf(g, v, 1)
            assert pf.latency * pf.r_in >= pf.sigma_in
            assert pf.rho >= 1
            assert 0 < pf.r_in <= 1


def test_single_vertex_throughput_within_1pct():
    # modeled r_out vs simulated steady output rate, for every kind
    kinds = [
        ("Conv", {"kernel": 3, "padding": 1, "filters": 4}, (4, 8, 8)),
        ("Pool", {"kernel": 2}, (4, 8, 8)),
        ("Relu", {}, (4, 8, 8)),
        ("Upsample", {"scale": 2}, (4, 8, 8)),
        ("GlobalPool", {}, (4, 8, 8)),
        ("Split", {}, (4, 8, 8)),
    ]
    for kind, attrs, shape in kinds:
        g = single_vertex_graph(kind, attrs, shape)
        perf = vertex_perf(g, g.vertices["v"], 1)
        rep = simulate(SimConfig(graph=g, perf={"v": perf}, frames=3))
        measured = Fraction(perf.sigma_out) / rep.steady_interval("v")
        assert abs(measured - perf.r_out) <= perf.r_out / 100, kind


@settings(max_examples=30, deadline=None)
@given(kind_i=st.integers(0, 2), pi=st.integers(0, 5), pj=st.integers(0, 5))
def test_monotone_resources_property(kind_i, pi, pj):
    kind, attrs = [("Conv", {"kernel": 3, "padding": 1, "filters": 8}),
                   ("Pool", {"kernel": 2}),
                   ("Relu", {})][kind_i]
    g = single_vertex_graph(kind, attrs, (8, 8, 8))
    v = g.vertices["v"]
    opts = parallelism_options(g, v)
    p1, p2 = sorted((opts[pi % len(opts)], opts[pj % len(opts)]))
    assert vertex_resources(v, p1, 8) <= vertex_resources(v, p2, 8)


def test_effective_perf_windows_and_spans(models):
    g = models["linear"]
    raw = graph_perf(g)
    eff = effective_perf(g, raw)
    # frame windows (latency + fill) are monotone non-decreasing along the flow
    for e in g.edges:
        assert (eff[e.src].latency + eff[e.src].rho
                <= eff[e.dst].latency + eff[e.dst].rho)
    # steady spans are the running maximum of the raw latencies
    assert eff["r1"].steady == max(raw["c0"].latency, raw["r1"].latency)
    assert eff["r3"].steady == max(p.latency for p in raw.values())
    assert max(p.steady for p in eff.values()) == max(p.latency for p in raw.values())
    # the graph entry keeps its raw profile
    assert eff["c0"] == raw["c0"]


def test_codec_overhead_linearity():
    assert codec_overhead("rle", 0) == ResourceVector()
    one = codec_overhead("rle", 1)
    two = codec_overhead("rle", 2)
    assert two.lut == 2 * one.lut and two.ff == 2 * one.ff
    assert codec_overhead("none", 7) == ResourceVector()
