"""Surrogate per-vertex performance and resource models.

Each vertex is characterised by four streaming quantities:

  sigma_in   words on its widest input slot
  latency    busy cycles per frame at the chosen parallelism
  rho        input words needed before the first output word (fill)
  r_in/r_out average slot rates over one frame, as exact fractions

The compute-rate knob is a single integer parallelism p: the engine retires
p work units per cycle, so latency = ceil(work / p), floored by the
1 word/cycle/stream bound on each input and output stream.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction

from .graph import ModelGraph, Vertex, volume

# Affine LUT/FF/DSP coefficients per vertex kind, at 8-bit words. LUT/FF
# scale linearly with word length; Conv DSP count scales with ceil(L/8).
DEFAULT_COST_TABLE = {
    "Conv":       {"dsp_per_p": 1, "lut_base": 500, "lut_per_p": 160, "ff_base": 800, "ff_per_p": 120},
    "Pool":       {"dsp_per_p": 0, "lut_base": 200, "lut_per_p": 40,  "ff_base": 300, "ff_per_p": 30},
    "Relu":       {"dsp_per_p": 0, "lut_base": 50,  "lut_per_p": 10,  "ff_base": 60,  "ff_per_p": 8},
    "Add":        {"dsp_per_p": 0, "lut_base": 60,  "lut_per_p": 15,  "ff_base": 70,  "ff_per_p": 10},
    "Concat":     {"dsp_per_p": 0, "lut_base": 80,  "lut_per_p": 10,  "ff_base": 90,  "ff_per_p": 8},
    "Upsample":   {"dsp_per_p": 0, "lut_base": 60,  "lut_per_p": 10,  "ff_base": 70,  "ff_per_p": 8},
    "GlobalPool": {"dsp_per_p": 0, "lut_base": 150, "lut_per_p": 30,  "ff_base": 160, "ff_per_p": 20},
    "Split":      {"dsp_per_p": 0, "lut_base": 40,  "lut_per_p": 5,   "ff_base": 50,  "ff_per_p": 5},
    "codec": {
        "none":    {"lut": 0,   "ff": 0},
        "rle":     {"lut": 120, "ff": 80},
        "huffman": {"lut": 400, "ff": 250},
    },
}


class InvalidParallelism(ValueError):
    pass


@dataclass(frozen=True)
class ResourceVector:
    dsp: int = 0
    lut: int = 0
    ff: int = 0
    bram18k: int = 0
    uram: int = 0

    def __add__(self, other: "ResourceVector") -> "ResourceVector":
        return ResourceVector(self.dsp + other.dsp, self.lut + other.lut, self.ff + other.ff,
                              self.bram18k + other.bram18k, self.uram + other.uram)

    def __le__(self, other: "ResourceVector") -> bool:
        return (self.dsp <= other.dsp and self.lut <= other.lut and self.ff <= other.ff
                and self.bram18k <= other.bram18k and self.uram <= other.uram)

    def as_dict(self) -> dict:
        return {"dsp": self.dsp, "lut": self.lut, "ff": self.ff,
                "bram18k": self.bram18k, "uram": self.uram}


@dataclass(frozen=True)
class VertexPerf:
    r_in: Fraction          # average rate on the widest input slot, words/cycle
    sigma_in: int           # words on the widest input slot
    rho: int                # fill: input words needed before the first output
    latency: int            # fill-frame busy cycles (latency + rho = frame window)
    r_out: Fraction         # average output rate, words/cycle
    sigma_out: int          # output words per frame (per branch, for Split)
    work: int               # total work units per frame
    steady_latency: int = 0  # steady-state cycles per frame; 0 means == latency

    @property
    def steady(self) -> int:
        return self.steady_latency or self.latency


def load_cost_table(path: str | None) -> dict:
    if path is None:
        return DEFAULT_COST_TABLE
    with open(path, "r", encoding="utf-8") as fh:
        table = json.load(fh)
    merged = {k: dict(v) for k, v in DEFAULT_COST_TABLE.items() if k != "codec"}
    merged["codec"] = {k: dict(v) for k, v in DEFAULT_COST_TABLE["codec"].items()}
    for kind, rec in table.items():
        if kind == "codec":
            for scheme, cost in rec.items():
                merged["codec"].setdefault(scheme, {}).update(cost)
        else:
            merged.setdefault(kind, {}).update(rec)
    return merged


# -- parallelism -----------------------------------------------------------


def _divisors(n: int) -> list[int]:
    out = []
    d = 1
    while d * d <= n:
        if n % d == 0:
            out.append(d)
            if d != n // d:
                out.append(n // d)
        d += 1
    return sorted(out)


def _fold_count(g: ModelGraph, v: Vertex) -> int:
    """Total fold product that p must divide.

    Conv folds over kernel positions, input channels and filters; Pool over
    kernel positions and channels; everything else over channels. p must be
    able to reach the 1 word/cycle/stream saturation point, which for a
    channel-expanding Conv lies beyond its filter count alone.
    """
    s_in = g.input_shape_of(v.id, 0)
    rank = len(s_in) - 1
    if v.kind == "Conv":
        from .graph import _as_dims
        k = _as_dims(v.attrs.get("kernel", 1), rank, "kernel", v.id)
        return volume(k) * s_in[0] * v.attrs["filters"]
    if v.kind == "Pool":
        from .graph import _as_dims
        k = _as_dims(v.attrs.get("kernel", 2), rank, "kernel", v.id)
        return volume(k) * s_in[0]
    return v.output_shape[0] if v.output_shape else s_in[0]


def parallelism_options(g: ModelGraph, v: Vertex) -> list[int]:
    return _divisors(_fold_count(g, v))


def validate_parallelism(g: ModelGraph, v: Vertex, p: int) -> None:
    if not isinstance(p, int) or p < 1:
        raise InvalidParallelism(f"vertex {v.id}: p must be a positive integer, got {p!r}")
    fold = _fold_count(g, v)
    if fold % p != 0:
        raise InvalidParallelism(f"vertex {v.id}: p={p} does not divide the fold count {fold}")


# -- performance -----------------------------------------------------------


def _work(g: ModelGraph, v: Vertex) -> int:
    s_in = g.input_shape_of(v.id, 0)
    rank = len(s_in) - 1
    out = v.output_shape
    if v.kind == "Conv":
        from .graph import _as_dims
        k = _as_dims(v.attrs.get("kernel", 1), rank, "kernel", v.id)
        return volume(k) * s_in[0] * volume(out)          # MACs
    if v.kind == "Pool":
        from .graph import _as_dims
        k = _as_dims(v.attrs.get("kernel", 2), rank, "kernel", v.id)
        return volume(k) * volume(out)                    # window reads
    if v.kind in ("Relu", "Split", "GlobalPool"):
        return volume(s_in)
    if v.kind in ("Add", "Concat", "Upsample"):
        return volume(out)
    raise InvalidParallelism(f"unknown kind {v.kind}")


def _rho(g: ModelGraph, v: Vertex) -> int:
    """Fill in input words: the line-buffer content needed for output #1.

    For a K_h x K_w window over a (C,H,W) stream this is the classic
    (K_h-1) rows plus K_w pixels: (K_h-1)*W*C + K_w*C, with one extra
    (K_d-1)*H*W*C plane term in 3D.
    """
    s_in = g.input_shape_of(v.id, 0)
    c = s_in[0]
    spatial = s_in[1:]
    rank = len(spatial)
    if v.kind in ("Conv", "Pool"):
        from .graph import _as_dims
        default_k = 1 if v.kind == "Conv" else 2
        k = _as_dims(v.attrs.get("kernel", default_k), rank, "kernel", v.id)
        # words_per[0]=one pixel (C), words_per[1]=one row (W*C), ...
        words_per = [c]
        for x in reversed(spatial):
            words_per.append(words_per[-1] * x)
        fill = k[-1] * c
        for j, kk in enumerate(reversed(k[:-1]), start=1):
            fill += (kk - 1) * words_per[j]
        return max(1, min(fill, volume(s_in)))
    if v.kind == "GlobalPool":
        return volume(s_in)
    return 1


def weight_volume(v: Vertex) -> int:
    """Weight words of a weight-bearing vertex: prod(kernel) * C_in * C_out."""
    if v.kind != "Conv":
        raise ValueError(f"vertex {v.id} ({v.kind}) has no weights")
    kernel = v.attrs["kernel"]
    kvol = volume(kernel) if isinstance(kernel, (list, tuple)) else int(kernel) ** 2
    return kvol * v.attrs["channels"] * v.attrs["filters"]


def vertex_perf(g: ModelGraph, v: Vertex, p: int = 1) -> VertexPerf:
    """Deterministic streaming profile of a vertex at parallelism p."""
    validate_parallelism(g, v, p)
    shapes = g.input_shapes(v.id)
    sigma_in = max(volume(s) for s in shapes)
    sigma_out = volume(v.output_shape)
    work = _work(g, v)
    latency = max(-(-work // p), sigma_in, sigma_out)
    rho = _rho(g, v)
    return VertexPerf(
        r_in=Fraction(sigma_in, latency),
        sigma_in=sigma_in,
        rho=rho,
        latency=latency,
        r_out=Fraction(sigma_out, latency),
        sigma_out=sigma_out,
        work=work,
    )


def graph_perf(g: ModelGraph, pmap: dict[str, int] | None = None) -> dict[str, VertexPerf]:
    pmap = pmap or {}
    return {vid: vertex_perf(g, v, pmap.get(vid, 1)) for vid, v in g.vertices.items()}


def effective_perf(g: ModelGraph, perf: dict[str, VertexPerf],
                   within: set[str] | None = None) -> dict[str, VertexPerf]:
    """Design-point profiles: stretch each stage to its slowest feed.

    Two windows propagate forward along the dataflow:

      * frame window W = latency + rho, the span of a stage's first frame.
        A stage's last output waits for its last input, so W is the running
        maximum of the raw windows; the effective (fill) latency is W - rho.
      * steady span S, the cycles per frame once the pipeline is primed:
        the running maximum of the raw latencies (fills overlap frames).
    """
    members = set(g.vertices) if within is None else set(within)
    windows: dict[str, int] = {}
    spans: dict[str, int] = {}
    out: dict[str, VertexPerf] = {}
    for vid in g.topological_order(within=members):
        raw = perf[vid]
        window = raw.latency + raw.rho
        span = raw.latency
        for e in g.in_edges(vid):
            if e.src in members:
                window = max(window, windows[e.src])
                span = max(span, spans[e.src])
        windows[vid] = window
        spans[vid] = span
        lat = window - raw.rho
        if lat == raw.latency and span == raw.latency:
            out[vid] = raw
        else:
            out[vid] = VertexPerf(
                r_in=Fraction(raw.sigma_in, lat),
                sigma_in=raw.sigma_in,
                rho=raw.rho,
                latency=lat,
                r_out=Fraction(raw.sigma_out, lat),
                sigma_out=raw.sigma_out,
                work=raw.work,
                steady_latency=span,
            )
    return out


# -- resources -------------------------------------------------------------


def vertex_resources(v: Vertex, p: int, word_length: int, table: dict | None = None) -> ResourceVector:
    """Compute-side resource cost (memory is allocated separately)."""
    table = table or DEFAULT_COST_TABLE
    rec = table[v.kind]
    scale = word_length / 8.0
    dsp_scale = -(-word_length // 8)
    return ResourceVector(
        dsp=rec.get("dsp_per_p", 0) * p * dsp_scale,
        lut=int(rec["lut_base"] * scale) + int(rec["lut_per_p"] * scale) * p,
        ff=int(rec["ff_base"] * scale) + int(rec["ff_per_p"] * scale) * p,
    )


def codec_overhead(scheme: str, streams: int, table: dict | None = None) -> ResourceVector:
    """Encoder/decoder logic: a fixed LUT/FF cost per parallel data stream."""
    if streams < 0:
        raise ValueError("streams must be >= 0")
    table = table or DEFAULT_COST_TABLE
    rec = table["codec"][scheme]
    return ResourceVector(lut=rec["lut"] * streams, ff=rec["ff"] * streams)
