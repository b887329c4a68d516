"""CNN compute graph: parsing, validation, shape propagation and queries.

The model is a DAG of typed layer vertices connected by word-stream edges.
Every edge has exactly one producer and one consumer; tensors consumed by
more than one vertex go through an explicit Split vertex (inserted at parse
time when the document wires one output to several consumers).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

KINDS = ("Conv", "Pool", "Relu", "Add", "Concat", "Upsample", "GlobalPool", "Split")
WORD_LENGTHS = (8, 16, 32)


class GraphError(ValueError):
    """Base class for model-document problems."""


class SchemaError(GraphError):
    """Document does not match the expected JSON layout."""


class CycleError(GraphError):
    """The vertex/edge set is not acyclic."""


class ShapeError(GraphError):
    """A vertex's attributes and its input shapes are inconsistent."""


@dataclass(frozen=True)
class Vertex:
    id: str
    kind: str
    attrs: dict
    output_shape: tuple[int, ...] = ()

    def with_shape(self, shape: tuple[int, ...]) -> "Vertex":
        return Vertex(self.id, self.kind, self.attrs, shape)


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    dst_slot: int
    words: int = 0
    word_length: int = 8

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.src, self.dst, self.dst_slot)


def volume(shape: Iterable[int]) -> int:
    n = 1
    for d in shape:
        n *= d
    return n


def _as_dims(value, rank: int, name: str, vid: str) -> tuple[int, ...]:
    """Normalise an int-or-list attribute to one int per spatial dim."""
    if isinstance(value, int):
        return (value,) * rank
    if isinstance(value, (list, tuple)) and len(value) == rank and all(isinstance(x, int) for x in value):
        return tuple(value)
    raise ShapeError(f"vertex {vid}: attribute '{name}' must be an int or a {rank}-long int list, got {value!r}")


class ModelGraph:
    """Immutable after construction; safe to share across readers."""

    def __init__(self, name: str, vertices: list[Vertex], edges: list[Edge],
                 input_id: str, input_shape: tuple[int, ...], word_length: int):
        self.name = name
        self.vertices = {v.id: v for v in vertices}
        self.edges = list(edges)
        self.input_id = input_id
        self.input_shape = tuple(input_shape)
        self.word_length = word_length
        self._in: dict[str, list[Edge]] = {v.id: [] for v in vertices}
        self._out: dict[str, list[Edge]] = {v.id: [] for v in vertices}
        for e in self.edges:
            self._in[e.dst].append(e)
            self._out[e.src].append(e)
        for vid in self._in:
            self._in[vid].sort(key=lambda e: e.dst_slot)
            self._out[vid].sort(key=lambda e: (e.dst, e.dst_slot))

    # -- queries -----------------------------------------------------------

    def vertex(self, vid: str) -> Vertex:
        try:
            return self.vertices[vid]
        except KeyError:
            raise GraphError(f"vertex {vid} not in graph {self.name}") from None

    def in_edges(self, vid: str) -> list[Edge]:
        self.vertex(vid)
        return self._in[vid]

    def out_edges(self, vid: str) -> list[Edge]:
        self.vertex(vid)
        return self._out[vid]

    def ancestors(self, vid: str) -> set[str]:
        """Direct predecessors of a vertex (empty for the graph input)."""
        return {e.src for e in self.in_edges(vid)}

    def successors(self, vid: str) -> set[str]:
        return {e.dst for e in self.out_edges(vid)}

    def input_shape_of(self, vid: str, slot: int = 0) -> tuple[int, ...]:
        if vid == self.input_id:
            return self.input_shape
        for e in self._in[vid]:
            if e.dst_slot == slot:
                return self.vertices[e.src].output_shape
        raise GraphError(f"vertex {vid} has no input slot {slot}")

    def input_shapes(self, vid: str) -> list[tuple[int, ...]]:
        if vid == self.input_id:
            return [self.input_shape]
        return [self.vertices[e.src].output_shape for e in self._in[vid]]

    def outputs(self) -> list[str]:
        return sorted(vid for vid in self.vertices if not self._out[vid])

    def topological_order(self, within: set[str] | None = None) -> list[str]:
        """Kahn's algorithm; ties broken by vertex id for determinism."""
        members = set(self.vertices) if within is None else set(within)
        indeg = {vid: 0 for vid in members}
        for e in self.edges:
            if e.src in members and e.dst in members:
                indeg[e.dst] += 1
        ready = sorted(vid for vid, d in indeg.items() if d == 0)
        order: list[str] = []
        while ready:
            vid = ready.pop(0)
            order.append(vid)
            changed = False
            for e in self._out[vid]:
                if e.dst in members:
                    indeg[e.dst] -= 1
                    if indeg[e.dst] == 0:
                        ready.append(e.dst)
                        changed = True
            if changed:
                ready.sort()
        if len(order) != len(members):
            stuck = sorted(set(members) - set(order))
            raise CycleError(f"cycle detected involving vertices {stuck[:8]}")
        return order

    def paths(self, src: str, trg: str, within: set[str] | None = None) -> list[list[str]]:
        """All simple directed paths from src to trg, as ordered id lists."""
        self.vertex(src)
        self.vertex(trg)
        members = set(self.vertices) if within is None else set(within)
        out: list[list[str]] = []
        stack = [src]
        on_path = {src}

        def walk(vid: str) -> None:
            if vid == trg:
                out.append(list(stack))
                return
            for e in self._out[vid]:
                nxt = e.dst
                if nxt in members and nxt not in on_path:
                    stack.append(nxt)
                    on_path.add(nxt)
                    walk(nxt)
                    on_path.discard(nxt)
                    stack.pop()

        if src in members:
            walk(src)
        return out


# -- shape rules -----------------------------------------------------------


def _conv_like_spatial(spatial, kernel, stride, padding, vid):
    out = []
    for x, k, s, p in zip(spatial, kernel, stride, padding):
        o = (x + 2 * p - k) // s + 1
        if o <= 0:
            raise ShapeError(f"vertex {vid}: kernel {k} stride {s} pad {p} does not fit input extent {x}")
        out.append(o)
    return tuple(out)


def infer_output_shape(v: Vertex, input_shapes: list[tuple[int, ...]]) -> tuple[int, ...]:
    """Per-kind shape rule. Shapes are (C, H, W) or (C, D, H, W)."""
    if not input_shapes:
        raise ShapeError(f"vertex {v.id}: no input shape available")
    s0 = input_shapes[0]
    rank = len(s0) - 1
    if rank not in (2, 3):
        raise ShapeError(f"vertex {v.id}: unsupported tensor rank {len(s0)}")
    kind = v.kind
    if kind == "Conv":
        k = _as_dims(v.attrs.get("kernel", 1), rank, "kernel", v.id)
        st = _as_dims(v.attrs.get("stride", 1), rank, "stride", v.id)
        pd = _as_dims(v.attrs.get("padding", 0), rank, "padding", v.id)
        filters = v.attrs.get("filters")
        if not isinstance(filters, int) or filters <= 0:
            raise ShapeError(f"vertex {v.id}: Conv needs a positive 'filters' attribute")
        channels = v.attrs.get("channels")
        if channels is not None and channels != s0[0]:
            raise ShapeError(f"vertex {v.id}: declared channels {channels} != incoming {s0[0]}")
        return (filters,) + _conv_like_spatial(s0[1:], k, st, pd, v.id)
    if kind == "Pool":
        k = _as_dims(v.attrs.get("kernel", 2), rank, "kernel", v.id)
        st = _as_dims(v.attrs.get("stride", v.attrs.get("kernel", 2)), rank, "stride", v.id)
        pd = _as_dims(v.attrs.get("padding", 0), rank, "padding", v.id)
        return (s0[0],) + _conv_like_spatial(s0[1:], k, st, pd, v.id)
    if kind in ("Relu", "Split"):
        return s0
    if kind == "Add":
        for s in input_shapes[1:]:
            if s != s0:
                raise ShapeError(f"vertex {v.id}: Add input shapes differ: {s0} vs {s}")
        if len(input_shapes) < 2:
            raise ShapeError(f"vertex {v.id}: Add needs at least two inputs")
        return s0
    if kind == "Concat":
        if len(input_shapes) < 2:
            raise ShapeError(f"vertex {v.id}: Concat needs at least two inputs")
        for s in input_shapes[1:]:
            if s[1:] != s0[1:]:
                raise ShapeError(f"vertex {v.id}: Concat spatial dims differ: {s0} vs {s}")
        return (sum(s[0] for s in input_shapes),) + s0[1:]
    if kind == "Upsample":
        if "size" in v.attrs:
            size = tuple(v.attrs["size"])
            if len(size) != rank or any(x < y for x, y in zip(size, s0[1:])):
                raise ShapeError(f"vertex {v.id}: Upsample size {size} incompatible with input {s0}")
            return (s0[0],) + size
        sc = _as_dims(v.attrs.get("scale", 2), rank, "scale", v.id)
        return (s0[0],) + tuple(x * s for x, s in zip(s0[1:], sc))
    if kind == "GlobalPool":
        return (s0[0],) + (1,) * rank
    raise SchemaError(f"vertex {v.id}: unknown kind {kind!r}")


# -- parsing ---------------------------------------------------------------


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise SchemaError(msg)


def parse_model(text: str) -> ModelGraph:
    """Parse and validate a serialized graph document.

    Raises SchemaError / CycleError / ShapeError, each naming the offending
    vertex or edge.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"not valid JSON: {exc}") from None
    _require(isinstance(doc, dict), "top-level document must be an object")
    for key in ("name", "input", "vertices", "edges"):
        _require(key in doc, f"missing top-level field '{key}'")
    name = doc["name"]
    _require(isinstance(name, str) and name != "", "'name' must be a non-empty string")

    inp = doc["input"]
    _require(isinstance(inp, dict), "'input' must be an object")
    for key in ("id", "shape", "word_length"):
        _require(key in inp, f"input is missing field '{key}'")
    input_id = inp["id"]
    input_shape = tuple(inp["shape"])
    word_length = inp["word_length"]
    _require(word_length in WORD_LENGTHS, f"word_length must be one of {WORD_LENGTHS}, got {word_length}")
    _require(len(input_shape) in (3, 4) and all(isinstance(d, int) and d > 0 for d in input_shape),
             f"input shape must be (C,H,W) or (C,D,H,W) of positive ints, got {input_shape}")

    _require(isinstance(doc["vertices"], list) and doc["vertices"], "'vertices' must be a non-empty list")
    vertices: list[Vertex] = []
    seen: set[str] = set()
    for i, rec in enumerate(doc["vertices"]):
        _require(isinstance(rec, dict), f"vertices[{i}] must be an object")
        for key in ("id", "kind"):
            _require(key in rec, f"vertices[{i}] is missing field '{key}'")
        vid, kind = rec["id"], rec["kind"]
        _require(isinstance(vid, str) and vid != "", f"vertices[{i}]: id must be a non-empty string")
        _require(vid not in seen, f"duplicate vertex id {vid}")
        _require(kind in KINDS, f"vertex {vid}: unknown kind {kind!r} (supported: {', '.join(KINDS)})")
        attrs = rec.get("attrs", {})
        _require(isinstance(attrs, dict), f"vertex {vid}: attrs must be an object")
        seen.add(vid)
        vertices.append(Vertex(vid, kind, attrs))
    _require(input_id in seen, f"input vertex {input_id} not among the vertices")

    raw_edges: list[tuple[str, str, int]] = []
    for i, rec in enumerate(doc["edges"]):
        _require(isinstance(rec, dict), f"edges[{i}] must be an object")
        for key in ("src", "dst", "dst_slot"):
            _require(key in rec, f"edges[{i}] is missing field '{key}'")
        src, dst, slot = rec["src"], rec["dst"], rec["dst_slot"]
        _require(src in seen, f"edge ({src}->{dst}): unknown src vertex {src}")
        _require(dst in seen, f"edge ({src}->{dst}): unknown dst vertex {dst}")
        _require(isinstance(slot, int) and slot >= 0, f"edge ({src}->{dst}): dst_slot must be a non-negative int")
        _require((src, dst, slot) not in raw_edges, f"duplicate edge ({src}->{dst} slot {slot})")
        raw_edges.append((src, dst, slot))

    # Insert explicit Split vertices where a non-Split output fans out.
    kinds = {v.id: v.kind for v in vertices}
    fanout: dict[str, list[tuple[str, str, int]]] = {}
    for e in raw_edges:
        fanout.setdefault(e[0], []).append(e)
    final_edges: list[tuple[str, str, int]] = []
    for vid in sorted(fanout):
        out = sorted(fanout[vid], key=lambda e: (e[1], e[2]))
        if len(out) > 1 and kinds[vid] != "Split":
            split_id = f"{vid}__split"
            _require(split_id not in seen, f"vertex id {split_id} collides with generated split name")
            seen.add(split_id)
            vertices.append(Vertex(split_id, "Split", {}))
            kinds[split_id] = "Split"
            final_edges.append((vid, split_id, 0))
            final_edges.extend((split_id, dst, slot) for _, dst, slot in out)
        else:
            final_edges.extend(out)

    g = ModelGraph(name, vertices, [Edge(s, d, sl, 0, word_length) for s, d, sl in final_edges],
                   input_id, input_shape, word_length)

    # Structural checks: single designated input, dense slots, acyclicity.
    if g.in_edges(input_id):
        raise SchemaError(f"input vertex {input_id} must not have incoming edges")
    for vid in sorted(g.vertices):
        ins = g.in_edges(vid)
        if vid != input_id and not ins:
            raise SchemaError(f"vertex {vid} has no incoming edge and is not the designated input")
        slots = sorted(e.dst_slot for e in ins)
        if slots != list(range(len(slots))):
            raise SchemaError(f"vertex {vid}: input slots {slots} are not dense from 0")
    order = g.topological_order()  # raises CycleError on cycles
    if not g.outputs():
        raise SchemaError("graph has no output vertex")

    # Shape propagation in topological order. Conv attrs are normalised so a
    # vertex carries everything its weight volume and fold counts need.
    for vid in order:
        v = g.vertices[vid]
        shape = infer_output_shape(v, g.input_shapes(vid))
        if v.kind == "Conv":
            s_in = g.input_shapes(vid)[0]
            rank = len(s_in) - 1
            attrs = dict(v.attrs)
            attrs["kernel"] = list(_as_dims(attrs.get("kernel", 1), rank, "kernel", vid))
            attrs["channels"] = s_in[0]
            v = Vertex(v.id, v.kind, attrs)
        g.vertices[vid] = v.with_shape(shape)

    # Edge volumes follow the producer's (now known) output shape.
    g2_edges = [Edge(e.src, e.dst, e.dst_slot, volume(g.vertices[e.src].output_shape), word_length)
                for e in g.edges]
    out = ModelGraph(name, list(g.vertices.values()), g2_edges, input_id, input_shape, word_length)
    for e in out.edges:
        if e.words <= 0:
            raise ShapeError(f"edge ({e.src}->{e.dst}): zero-volume tensor")
    return out


def load_model(path: str) -> ModelGraph:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_model(fh.read())
