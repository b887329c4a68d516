import json
import os

import pytest

from streamdse.devices import load_device
from streamdse.dse import run_dse
from streamdse.graph import load_model

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
FIXTURES = os.path.join(ROOT, "fixtures")
DEVICES = os.path.join(ROOT, "devices")


def fixture_path(name: str) -> str:
    return os.path.join(FIXTURES, f"{name}.json")


def device_path(name: str) -> str:
    return os.path.join(DEVICES, f"{name}.json")


@pytest.fixture(scope="session")
def models():
    return {name: load_model(fixture_path(name))
            for name in ("linear", "diamond", "long_skip", "unet", "unet3d", "yolov8n", "x3dm")}


@pytest.fixture(scope="session")
def devices():
    return {name: load_device(device_path(name))
            for name in ("zcu102", "u200", "vcu1525", "vcu118")}


@pytest.fixture(scope="session")
def unet_zcu102_plan(models, devices):
    """The workhorse plan shared by memory/dse/acceptance tests."""
    return run_dse(models["unet"], devices["zcu102"], 1)


@pytest.fixture(scope="session")
def unet_vcu1525_plan(models, devices):
    return run_dse(models["unet"], devices["vcu1525"], 1, scheme="rle")


def tiny_device(**overrides) -> dict:
    base = {
        "name": "testdev", "freq_mhz": 200, "dsp": 4096, "lut": 500000, "ff": 1000000,
        "bram18k": 2000, "uram": 200, "bandwidth_gbps": 100.0, "reconfig_time_s": 0.01,
        "dma_burst_words": 16, "dma_latency_cycles": 100, "alpha_random": 2.0,
        "max_dma_ports": 2,
    }
    base.update(overrides)
    return base


@pytest.fixture
def make_device():
    from streamdse.devices import device_from_dict

    def _make(**overrides):
        return device_from_dict(tiny_device(**overrides))
    return _make


def build_graph(doc: dict) -> "ModelGraph":
    from streamdse.graph import parse_model
    return parse_model(json.dumps(doc))


def linear_doc(shape=(3, 8, 8), filters=4):
    return {
        "name": "lin",
        "input": {"id": "c0", "shape": list(shape), "word_length": 8},
        "vertices": [
            {"id": "c0", "kind": "Conv", "attrs": {"kernel": 3, "padding": 1, "filters": filters}},
            {"id": "r1", "kind": "Relu"},
            {"id": "c2", "kind": "Conv", "attrs": {"kernel": 3, "padding": 1, "filters": filters}},
            {"id": "r3", "kind": "Relu"},
        ],
        "edges": [
            {"src": "c0", "dst": "r1", "dst_slot": 0},
            {"src": "r1", "dst": "c2", "dst_slot": 0},
            {"src": "c2", "dst": "r3", "dst_slot": 0},
        ],
    }
