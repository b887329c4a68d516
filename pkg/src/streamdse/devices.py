"""FPGA device descriptions loaded from JSON files."""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction

from .layers import ResourceVector

REQUIRED_FIELDS = (
    "name", "freq_mhz", "dsp", "lut", "ff", "bram18k", "uram",
    "bandwidth_gbps", "reconfig_time_s", "dma_burst_words",
    "dma_latency_cycles", "alpha_random", "max_dma_ports",
)


class DeviceError(ValueError):
    pass


@dataclass(frozen=True)
class DeviceSpec:
    name: str
    freq_mhz: float
    dsp: int
    lut: int
    ff: int
    bram18k: int
    uram: int
    bandwidth_gbps: float
    reconfig_time_s: float
    dma_burst_words: int
    dma_latency_cycles: int
    alpha_random: float
    max_dma_ports: int

    @property
    def freq_hz(self) -> Fraction:
        return Fraction(self.freq_mhz) * 1_000_000

    @property
    def resources(self) -> ResourceVector:
        return ResourceVector(dsp=self.dsp, lut=self.lut, ff=self.ff,
                              bram18k=self.bram18k, uram=self.uram)

    def bandwidth_words_per_cycle(self, word_length: int) -> Fraction:
        """Total off-chip budget expressed in data words per clock cycle."""
        return Fraction(self.bandwidth_gbps) * 1_000_000_000 / (word_length * self.freq_hz)

    def gbps(self, words_per_cycle: Fraction, word_length: int) -> float:
        return float(words_per_cycle * word_length * self.freq_hz / 1_000_000_000)


def device_from_dict(doc: dict) -> DeviceSpec:
    missing = [k for k in REQUIRED_FIELDS if k not in doc]
    if missing:
        raise DeviceError(f"device file is missing fields: {', '.join(missing)}")
    try:
        spec = DeviceSpec(**{k: doc[k] for k in REQUIRED_FIELDS})
    except TypeError as exc:
        raise DeviceError(f"bad device file: {exc}") from None
    if spec.freq_mhz <= 0 or spec.bandwidth_gbps <= 0:
        raise DeviceError("frequency and bandwidth must be positive")
    if spec.alpha_random < 1.0:
        raise DeviceError("alpha_random must be >= 1")
    return spec


def load_device(path: str) -> DeviceSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return device_from_dict(json.load(fh))
