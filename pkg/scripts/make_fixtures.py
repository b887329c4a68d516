#!/usr/bin/env python3
"""Generate the benchmark graph fixtures.

The four network fixtures mirror the public layer/conv counts of their
namesakes (and, for the 2D and 3D segmentation networks, the parameter
counts); small synthetic fixtures exercise specific topologies. Regenerate
with `python scripts/make_fixtures.py` from the repository root.
"""

from __future__ import annotations

import json
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from streamdse.graph import parse_model  # noqa: E402
from streamdse.layers import weight_volume  # noqa: E402

OUT_DIR = os.path.join(os.path.dirname(__file__), "..", "fixtures")


class Builder:
    def __init__(self, name, input_id, shape, word_length=8):
        self.doc = {"name": name,
                    "input": {"id": input_id, "shape": list(shape), "word_length": word_length},
                    "vertices": [], "edges": []}

    def vertex(self, vid, kind, **attrs):
        rec = {"id": vid, "kind": kind}
        if attrs:
            rec["attrs"] = attrs
        self.doc["vertices"].append(rec)
        return vid

    def edge(self, src, dst, slot=0):
        self.doc["edges"].append({"src": src, "dst": dst, "dst_slot": slot})

    def chain(self, src, vid, kind, **attrs):
        self.vertex(vid, kind, **attrs)
        if src is not None:
            self.edge(src, vid)
        return vid

    def write(self, path):
        text = json.dumps(self.doc, indent=1)
        g = parse_model(text)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        return g


def conv(b, src, vid, filters, kernel=3, stride=1, padding=1, relu=None):
    b.chain(src, vid, "Conv", kernel=kernel, stride=stride, padding=padding, filters=filters)
    if relu:
        b.chain(vid, relu, "Relu")
        return relu
    return vid


# -- small synthetic fixtures --------------------------------------------------


def make_linear():
    b = Builder("linear", "c0", (3, 8, 8))
    t = conv(b, None, "c0", 4, relu="r1")
    t = conv(b, t, "c2", 4, relu="r3")
    return b.write(os.path.join(OUT_DIR, "linear.json"))


def make_diamond():
    b = Builder("diamond", "a", (3, 8, 8))
    conv(b, None, "a", 4)
    b.chain("a", "s", "Split")
    b.chain("s", "b", "Relu")
    conv(b, "s", "c", 4)
    b.vertex("d", "Add")
    b.edge("b", "d", 0)
    b.edge("c", "d", 1)
    b.chain("d", "e", "Relu")
    return b.write(os.path.join(OUT_DIR, "diamond.json"))


def make_long_skip():
    b = Builder("long_skip", "c0", (3, 8, 8))
    t = conv(b, None, "c0", 8, relu="r1")
    b.chain(t, "s2", "Split")
    b.chain("s2", "p3", "Pool", kernel=2)
    t = conv(b, "p3", "c4", 16, relu="r5")
    b.chain(t, "u6", "Upsample", scale=2)
    t = conv(b, "u6", "c7", 8, kernel=1, padding=0)
    b.vertex("cat8", "Concat")
    b.edge("s2", "cat8", 0)
    b.edge("c7", "cat8", 1)
    t = conv(b, "cat8", "c9", 8, relu="r10")
    return b.write(os.path.join(OUT_DIR, "long_skip.json"))


# -- UNet (2D): 53 layers, 23 convs, 28.96M weight words ------------------------


def make_unet():
    b = Builder("unet", "Conv_0", (3, 368, 480))
    # encoder
    t = conv(b, None, "Conv_0", 64, kernel=5, padding=2, relu="Relu_1")
    t = conv(b, t, "Conv_2", 64, relu="Relu_3")
    b.chain(t, "Split_4", "Split")
    skips = {1: ("Split_4", 64)}
    t = "Split_4"
    widths = {2: 128, 3: 256, 4: 512}
    idx = 5
    for level in (2, 3, 4):
        w = widths[level]
        t = b.chain(t, f"Pool_{idx}", "Pool", kernel=2)
        t = conv(b, t, f"Conv_{idx + 1}", w, relu=f"Relu_{idx + 2}")
        t = conv(b, t, f"Conv_{idx + 3}", w)
        t = b.chain(t, f"Split_{idx + 4}", "Split")
        skips[level] = (t, w)
        idx += 5
    # bottleneck: Pool_20 Conv_21 Conv_22 Relu_23
    t = b.chain(t, "Pool_20", "Pool", kernel=2)
    t = conv(b, t, "Conv_21", 1024)
    t = conv(b, t, "Conv_22", 1024, relu="Relu_23")
    # decoder
    idx = 24
    for level in (4, 3, 2, 1):
        skip_src, w = skips[level]
        t = b.chain(t, f"Upsample_{idx}", "Upsample", scale=2)
        t = conv(b, t, f"Conv_{idx + 1}", w, kernel=1, padding=0)
        cat = f"Concat_{idx + 2}"
        b.vertex(cat, "Concat")
        b.edge(skip_src, cat, 0)
        b.edge(t, cat, 1)
        t = conv(b, cat, f"Conv_{idx + 3}", w, relu=f"Relu_{idx + 4}")
        t = conv(b, t, f"Conv_{idx + 5}", w, relu=f"Relu_{idx + 6}")
        idx += 7
    conv(b, t, "Conv_52", 32)
    return b.write(os.path.join(OUT_DIR, "unet.json"))


# -- UNet3D: 52 layers, 19 convs, 5.65M weight words -----------------------------


def make_unet3d():
    b = Builder("unet3d", "Conv_0", (4, 155, 240, 240))
    k3, k1 = [3, 3, 3], [1, 1, 1]
    p1, p0 = [1, 1, 1], [0, 0, 0]
    t = conv(b, None, "Conv_0", 16, kernel=k3, padding=p1, relu="Relu_1")
    t = conv(b, t, "Conv_2", 16, kernel=k3, padding=p1, relu="Relu_3")
    b.chain(t, "Split_4", "Split")
    t = "Split_4"
    skips = {1: ("Split_4", 16, (155, 240, 240))}
    widths = {2: 32, 3: 64, 4: 128}
    dims = {2: (77, 120, 120), 3: (38, 60, 60), 4: (19, 30, 30)}
    idx = 5
    for level in (2, 3, 4):
        w = widths[level]
        t = b.chain(t, f"Pool_{idx}", "Pool", kernel=[2, 2, 2])
        t = conv(b, t, f"Conv_{idx + 1}", w, kernel=k3, padding=p1, relu=f"Relu_{idx + 2}")
        if level < 4:
            t = conv(b, t, f"Conv_{idx + 3}", w, kernel=k3, padding=p1, relu=f"Relu_{idx + 4}")
            t = b.chain(t, f"Split_{idx + 5}", "Split")
            skips[level] = (t, w, dims[level])
            idx += 6
        else:
            t = conv(b, t, f"Conv_{idx + 3}", w, kernel=k3, padding=p1)
            t = b.chain(t, f"Split_{idx + 4}", "Split")
            skips[level] = (t, w, dims[level])
            idx += 5
    # bottleneck
    t = b.chain(t, "Pool_22", "Pool", kernel=[2, 2, 2])
    t = conv(b, t, "Conv_23", 304, kernel=k3, padding=p1, relu="Relu_24")
    t = conv(b, t, "Conv_25", 304, kernel=k3, padding=p1, relu="Relu_26")
    idx = 27
    for level in (4, 3, 2, 1):
        skip_src, w, size = skips[level]
        t = b.chain(t, f"Upsample_{idx}", "Upsample", size=list(size))
        t = conv(b, t, f"Conv_{idx + 1}", w, kernel=k1, padding=p0, relu=f"Relu_{idx + 2}")
        cat = f"Concat_{idx + 3}"
        b.vertex(cat, "Concat")
        b.edge(skip_src, cat, 0)
        b.edge(t, cat, 1)
        t = conv(b, cat, f"Conv_{idx + 4}", w, kernel=k3, padding=p1, relu=f"Relu_{idx + 5}")
        idx += 6
    conv(b, t, "Conv_51", 4, kernel=k1, padding=p0)
    return b.write(os.path.join(OUT_DIR, "unet3d.json"))


# -- YOLOv8n-style: 115 layers, 63 convs ----------------------------------------


def make_yolov8n():
    b = Builder("yolov8n", "Conv_0", (3, 640, 640))
    n = [0]

    def nid(kind):
        vid = f"{kind}_{n[0]}"
        n[0] += 1
        return vid

    counts = {"Conv": 0, "Relu": 0, "Pool": 0, "Upsample": 0, "Concat": 0, "Split": 0}

    def add(kind, src=None, slot=0, **attrs):
        vid = nid(kind)
        b.vertex(vid, kind, **attrs)
        if src is not None:
            b.edge(src, vid, slot)
        counts[kind] += 1
        return vid

    def cr(src, filters, kernel=3, stride=1, padding=1, relu=True):
        t = add("Conv", src, kernel=kernel, stride=stride, padding=padding, filters=filters)
        if relu:
            t = add("Relu", t)
        return t

    def unit(src, w):
        """Split -> 1x1 conv (relu) -> 3x3 conv -> Concat with the bypass."""
        s = add("Split", src)
        t = cr(s, w // 2, kernel=1, padding=0)
        t = cr(t, w, relu=False)
        c = add("Concat", s, slot=0)
        b.edge(t, c, 1)
        return c

    t = cr(None, 16, stride=2)                     # stem: 640 -> 320
    stage_w = {160: 32, 80: 64, 40: 96, 20: 128}
    skips = {}
    for size, w in stage_w.items():
        t = cr(t, w, stride=2)                     # downsample conv
        t = unit(t, 2 * w)                         # bypass unit (width doubles via concat)
        t = cr(t, w, kernel=1, padding=0, relu=False)
        if size in (80, 40):
            s = add("Split", t)
            skips[size] = s
            t = s
    t = cr(t, 128, stride=1, relu=False)           # 5th downsample-stage conv (stride 1)
    t = add("Pool", t, kernel=2)                   # SPPF-style pool: 20 -> 10
    t = cr(t, 128, kernel=1, padding=0)
    t = add("Upsample", t, scale=2)                # back to 20
    t = cr(t, 96, kernel=1, padding=0, relu=False)
    t = add("Upsample", t, scale=2)                # 40
    c = add("Concat", skips[40], slot=0)
    b.edge(t, c, 1)
    t = cr(c, 96, kernel=1, padding=0)
    t = add("Upsample", t, scale=2)                # 80
    c = add("Concat", skips[80], slot=0)
    b.edge(t, c, 1)
    t = cr(c, 64, kernel=1, padding=0)
    t = unit(t, 128)
    t = cr(t, 64, kernel=1, padding=0, relu=False)
    # head chains: alternate conv+relu pairs and bare convs to the needed counts
    while counts["Conv"] < 63:
        remaining_convs = 63 - counts["Conv"]
        structural = sum(counts.values()) - counts["Conv"] - counts["Relu"]
        remaining_relus = 115 - 63 - structural - counts["Relu"]
        t = cr(t, 64, kernel=1, padding=0, relu=remaining_relus > remaining_convs - 1)
    return b.write(os.path.join(OUT_DIR, "yolov8n.json"))


# -- X3D-M-style: 396 layers, 115 convs (3D) -------------------------------------


def make_x3dm():
    b = Builder("x3dm", "Conv_0", (3, 16, 256, 256))
    n = [0]
    counts = {"Conv": 0, "Relu": 0, "Pool": 0, "Upsample": 0, "Concat": 0,
              "Split": 0, "Add": 0, "GlobalPool": 0}

    def add(kind, src=None, slot=0, **attrs):
        vid = f"{kind}_{n[0]}"
        n[0] += 1
        b.vertex(vid, kind, **attrs)
        if src is not None:
            b.edge(src, vid, slot)
        counts[kind] += 1
        return vid

    k3, k1 = [3, 3, 3], [1, 1, 1]
    p1, p0 = [1, 1, 1], [0, 0, 0]

    def cr(src, filters, kernel, padding, stride=1, relu=True):
        t = add("Conv", src, kernel=kernel, stride=stride, padding=padding, filters=filters)
        if relu:
            t = add("Relu", t)
        return t

    def res_unit(src, w, extra_relus):
        s = add("Split", src)
        t = cr(s, w * 2, kernel=k1, padding=p0)
        t = cr(t, w * 2, kernel=k3, padding=p1)
        t = cr(t, w, kernel=k1, padding=p0, relu=False)
        a = add("Add", s, slot=0)
        b.edge(t, a, 1)
        t = add("Relu", a)
        for _ in range(extra_relus):
            t = add("Relu", t)
        return t

    t = cr(None, 24, kernel=k3, padding=p1, stride=[1, 2, 2])   # 256 -> 128
    t = cr(t, 24, kernel=k1, padding=p0)
    stages = [(24, 3), (48, 5), (96, 11), (96, 7)]               # (width, units)
    total_units = sum(u for _, u in stages)                      # 26 units
    # budget: convs 115 = stem 2 + 3*26 units + transitions 4*... + head
    per_stage_trans = 1
    for wi, (w, units) in enumerate(stages):
        t = add("Pool", t, kernel=[1, 2, 2])
        t = cr(t, w, kernel=k1, padding=p0, relu=False)          # transition conv
        for u in range(units):
            extra = 2 if (wi + u) % 2 == 0 else 1
            t = res_unit(t, w, extra)
    t = add("GlobalPool", t)
    t = cr(t, 192, kernel=k1, padding=p0)
    t = cr(t, 400, kernel=k1, padding=p0, relu=False)
    # pad relu chains to the exact vertex count
    while sum(counts.values()) < 396 - 115 + counts["Conv"]:
        t = add("Relu", t)
    while counts["Conv"] < 115:
        relu = (396 - sum(counts.values())) > (115 - counts["Conv"])
        t = cr(t, 400, kernel=k1, padding=p0, relu=relu)
    return b.write(os.path.join(OUT_DIR, "x3dm.json"))


def main():
    os.makedirs(OUT_DIR, exist_ok=True)
    specs = {
        "linear": (make_linear, None, None, None),
        "diamond": (make_diamond, None, None, None),
        "long_skip": (make_long_skip, None, None, None),
        "unet": (make_unet, 53, 23, 28.96),
        "unet3d": (make_unet3d, 52, 19, 5.65),
        "yolov8n": (make_yolov8n, 115, 63, None),
        "x3dm": (make_x3dm, 396, 115, None),
    }
    for name, (fn, layers, convs, params_m) in specs.items():
        g = fn()
        n_conv = sum(1 for v in g.vertices.values() if v.kind == "Conv")
        words = sum(weight_volume(v) for v in g.vertices.values() if v.kind == "Conv")
        print(f"{name:10s} vertices={len(g.vertices):4d} convs={n_conv:4d} "
              f"weights={words / 1e6:.6f}M")
        if layers is not None:
            assert len(g.vertices) == layers, (name, len(g.vertices), layers)
            assert n_conv == convs, (name, n_conv, convs)
        if params_m is not None:
            assert round(words / 1e6, 2) == params_m, (name, words)
    print("all fixtures written to", os.path.abspath(OUT_DIR))


if __name__ == "__main__":
    main()
