"""Hardware design space: parameter validation, resource/peak models, pruning.

A design point fixes the GEMM intrinsic shape, operand precisions, on-chip
buffer sizes, ALU lane count and clock. Candidate spaces are cartesian
products over per-knob value lists; a linear FPGA resource proxy prunes
points that do not fit a device budget.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import astuple, dataclass, field, fields
from typing import Iterable, Iterator, Sequence

UOP_ENTRY_BYTES = 4

# LUT proxy defaults: lut = LUT_C0 + LUT_C1 * dsp. Overridable per device.
LUT_C0 = 5000
LUT_C1 = 40


class ConfigError(ValueError):
    """A hardware parameterization violates its structural invariants."""


def _is_pow2(v: int) -> bool:
    return v > 0 and (v & (v - 1)) == 0


@dataclass(frozen=True, order=True)
class HardwareParams:
    """One accelerator design point.

    batch/block_in/block_out give the GEMM intrinsic: an input tile of
    [batch, block_in] multiplied against a weight tile of [block_out,
    block_in], accumulated into [batch, block_out].
    """

    batch: int
    block_in: int
    block_out: int
    inp_bits: int = 8
    wgt_bits: int = 8
    acc_bits: int = 32
    uop_buf_bytes: int = 32768
    inp_buf_bytes: int = 32768
    wgt_buf_bytes: int = 262144
    acc_buf_bytes: int = 131072
    alu_lanes: int = 16
    freq_mhz: float = 100.0

    # --- derived tile geometry -------------------------------------------

    def _tile_bytes(self, n_elems: int, bits: int, what: str) -> int:
        total_bits = n_elems * bits
        if total_bits % 8:
            raise ConfigError(f"{what} tile is {total_bits} bits, not a whole byte count")
        return total_bits // 8

    @property
    def inp_tile_bytes(self) -> int:
        return self._tile_bytes(self.batch * self.block_in, self.inp_bits, "inp")

    @property
    def wgt_tile_bytes(self) -> int:
        return self._tile_bytes(self.block_out * self.block_in, self.wgt_bits, "wgt")

    @property
    def acc_tile_bytes(self) -> int:
        return self._tile_bytes(self.batch * self.block_out, self.acc_bits, "acc")

    @property
    def out_tile_bytes(self) -> int:
        # Results are narrowed back to the input precision on store.
        return self._tile_bytes(self.batch * self.block_out, self.inp_bits, "out")

    @property
    def uop_tiles(self) -> int:
        return self.uop_buf_bytes // UOP_ENTRY_BYTES

    @property
    def inp_tiles(self) -> int:
        return self.inp_buf_bytes // self.inp_tile_bytes

    @property
    def wgt_tiles(self) -> int:
        return self.wgt_buf_bytes // self.wgt_tile_bytes

    @property
    def acc_tiles(self) -> int:
        return self.acc_buf_bytes // self.acc_tile_bytes

    # Output staging mirrors the accumulator tile-for-tile (results are
    # written through on every GEMM/ALU), so it is not sized independently.
    @property
    def out_tiles(self) -> int:
        return self.acc_tiles

    @property
    def intrinsic_macs(self) -> int:
        """Multiply-accumulates retired per GEMM tile operation."""
        return self.batch * self.block_in * self.block_out

    def validate(self) -> None:
        for name in ("batch", "block_in", "block_out"):
            v = getattr(self, name)
            if not _is_pow2(v):
                raise ConfigError(f"{name}={v} must be a power of two")
        if self.inp_bits not in (1, 2, 4, 8):
            raise ConfigError(f"inp_bits={self.inp_bits} not in {{1,2,4,8}}")
        if self.wgt_bits not in (1, 2, 4, 8):
            raise ConfigError(f"wgt_bits={self.wgt_bits} not in {{1,2,4,8}}")
        if self.acc_bits not in (8, 16, 32):
            raise ConfigError(f"acc_bits={self.acc_bits} not in {{8,16,32}}")
        if self.alu_lanes < 1 or self.alu_lanes > self.batch * self.block_out:
            raise ConfigError(
                f"alu_lanes={self.alu_lanes} must be in [1, batch*block_out={self.batch * self.block_out}]"
            )
        if self.freq_mhz <= 0:
            raise ConfigError(f"freq_mhz={self.freq_mhz} must be positive")
        for name, tile in (
            ("uop_buf_bytes", UOP_ENTRY_BYTES),
            ("inp_buf_bytes", self.inp_tile_bytes),
            ("wgt_buf_bytes", self.wgt_tile_bytes),
            ("acc_buf_bytes", self.acc_tile_bytes),
        ):
            size = getattr(self, name)
            if size <= 0 or size % tile:
                raise ConfigError(f"{name}={size} is not a positive multiple of its {tile}-byte tile")

    def is_valid(self) -> bool:
        try:
            self.validate()
            return True
        except ConfigError:
            return False

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "HardwareParams":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown HardwareParams fields: {sorted(extra)}")
        p = cls(**d)
        p.validate()
        return p


@dataclass(frozen=True)
class DeviceProfile:
    """Resource budget of one target device; numbers are configuration inputs."""

    name: str
    dsp_total: int
    bram_kbits_total: int
    lut_total: int
    max_freq_mhz: float
    util_cap: float = 0.9
    lut_c0: int = LUT_C0
    lut_c1: int = LUT_C1

    def validate(self) -> None:
        if min(self.dsp_total, self.bram_kbits_total, self.lut_total) <= 0:
            raise ConfigError("device resource totals must be positive")
        if self.max_freq_mhz <= 0:
            raise ConfigError("max_freq_mhz must be positive")
        if not (0 < self.util_cap <= 1):
            raise ConfigError(f"util_cap={self.util_cap} must be in (0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "DeviceProfile":
        dev = cls(**d)
        dev.validate()
        return dev


@dataclass(frozen=True)
class ResourceEstimate:
    dsp: int
    bram_kbits: float
    lut: int


_SPACE_KNOBS = (
    "batch", "block_in", "block_out",
    "inp_bits", "wgt_bits", "acc_bits",
    "uop_buf_bytes", "inp_buf_bytes", "wgt_buf_bytes", "acc_buf_bytes",
    "alu_lanes", "freq_mhz",
)


@dataclass(frozen=True)
class CandidateSpace:
    """Allowed values per hardware knob; candidates are the cartesian product."""

    batch: tuple = (1,)
    block_in: tuple = (16,)
    block_out: tuple = (16,)
    inp_bits: tuple = (8,)
    wgt_bits: tuple = (8,)
    acc_bits: tuple = (32,)
    uop_buf_bytes: tuple = (32768,)
    inp_buf_bytes: tuple = (32768,)
    wgt_buf_bytes: tuple = (262144,)
    acc_buf_bytes: tuple = (131072,)
    alu_lanes: tuple = (16,)
    freq_mhz: tuple = (100.0,)

    @classmethod
    def from_dict(cls, d: dict) -> "CandidateSpace":
        extra = set(d) - set(_SPACE_KNOBS)
        if extra:
            raise ConfigError(f"unknown CandidateSpace knobs: {sorted(extra)}")
        vals = {}
        for knob, v in d.items():
            seq = v if isinstance(v, (list, tuple)) else [v]
            if not seq:
                raise ConfigError(f"knob {knob} has no allowed values")
            vals[knob] = tuple(seq)
        return cls(**vals)


def enumerate_candidates(space: CandidateSpace) -> list[HardwareParams]:
    """Cartesian product over knobs, filtered by HardwareParams invariants.

    Order is lexicographic over the knob tuple (values sorted ascending
    within each knob), so identical spaces always enumerate identically.
    """
    axes = [sorted(set(getattr(space, k))) for k in _SPACE_KNOBS]
    out = []
    for combo in itertools.product(*axes):
        p = HardwareParams(**dict(zip(_SPACE_KNOBS, combo)))
        if p.is_valid():
            out.append(p)
    return out


def estimate_resources(p: HardwareParams, lut_c0: int = LUT_C0, lut_c1: int = LUT_C1) -> ResourceEstimate:
    """Linear proxy for FPGA resource usage; constants are calibration data."""
    mults = p.batch * p.block_in * p.block_out
    dsp = mults * (1 if max(p.inp_bits, p.wgt_bits) <= 8 else 2)
    buf_bytes = p.uop_buf_bytes + p.inp_buf_bytes + p.wgt_buf_bytes + p.acc_buf_bytes
    bram_kbits = 8 * buf_bytes / 1024
    lut = lut_c0 + lut_c1 * dsp
    return ResourceEstimate(dsp=dsp, bram_kbits=bram_kbits, lut=lut)


def is_feasible(p: HardwareParams, d: DeviceProfile) -> bool:
    """Inclusive at the utilization cap: estimate == cap * total still fits."""
    est = estimate_resources(p, d.lut_c0, d.lut_c1)
    return (
        est.dsp <= d.util_cap * d.dsp_total
        and est.bram_kbits <= d.util_cap * d.bram_kbits_total
        and est.lut <= d.util_cap * d.lut_total
        and p.freq_mhz <= d.max_freq_mhz
    )


def peak_gops(p: HardwareParams) -> float:
    """Analytical peak throughput at 100% compute utilization (MAC = 2 ops)."""
    return 2 * p.batch * p.block_in * p.block_out * p.freq_mhz / 1000


def prune_candidates(
    cands: Iterable[HardwareParams], d: DeviceProfile, top_k: int
) -> list[HardwareParams]:
    """Keep the top_k feasible candidates by peak throughput.

    Ties break toward fewer BRAM kbits, then lexicographic knob order.
    """
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    feasible = [p for p in cands if is_feasible(p, d)]
    feasible.sort(
        key=lambda p: (-peak_gops(p), estimate_resources(p, d.lut_c0, d.lut_c1).bram_kbits, astuple(p))
    )
    return feasible[:top_k]


# --- JSON file loading (CLI-facing) ---------------------------------------

def load_params(path: str) -> HardwareParams:
    with open(path) as f:
        return HardwareParams.from_dict(json.load(f))


def load_device(path: str) -> DeviceProfile:
    with open(path) as f:
        return DeviceProfile.from_dict(json.load(f))


def load_space(path: str) -> CandidateSpace:
    with open(path) as f:
        return CandidateSpace.from_dict(json.load(f))
