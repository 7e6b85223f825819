"""Accelerator-level power, area, energy and cycle-count models.

The accelerator is R tiles of C cores, each core a k1 x k2 crossbar.  One
input module (k2 DAC+modulator channels plus a rerouter) feeds ``r`` cores
in different tiles; the ``c`` cores inside a tile share one readout array
of k1 TIA+ADC channels by summing photocurrents.  A weight chunk of
(r*k1) x (c*k2) therefore occupies r*c cores and maps in a single cycle.

Power is evaluated bottom-up from the device models; area follows the
fixed floorplan formula (crossbar footprint plus per-channel converter and
readout blocks).  Energy walks a schedule of (chunk power, cycles) entries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .devices import (
    DeviceModelError,
    DeviceParams,
    GammaFit,
    adc_power,
    edac_power,
    eodac_power,
    mzi_power,
    weight_to_phase,
)
from .core import ExecutionMode, rerouter_configure
from .layout import LayoutParams

# Expected |phase| of a weight MZI when weights are uniform on [-1, 1]:
# E|arcsin(w)| = pi/2 - 1.  Used for analytic power estimates when no
# concrete weights are supplied.
UNIFORM_MEAN_PHASE_RAD = math.pi / 2 - 1.0


@dataclass(frozen=True)
class ArchConfig:
    """Accelerator shape and signal chain configuration."""

    R: int = 4          # tiles
    C: int = 4          # cores per tile
    k1: int = 16        # output channels per core
    k2: int = 16        # input channels per core
    r: int = 4          # cores (across tiles) sharing one input module
    c: int = 4          # cores (within a tile) sharing one readout array
    f_ghz: float = 5.0
    b_in: int = 6       # input DAC resolution
    b_w: int = 8        # weight resolution
    b_o: int = 8        # output ADC resolution
    dac_kind: str = "edac"               # "edac" | "eodac"
    eodac_segments: tuple[int, ...] = (3, 3)

    def __post_init__(self) -> None:
        for name in ("R", "C", "k1", "k2", "r", "c"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise DeviceModelError(f"arch.{name} must be a positive integer")
        if self.R % self.r != 0:
            raise DeviceModelError(
                f"input sharing r={self.r} must divide the tile count R={self.R}")
        if self.C % self.c != 0:
            raise DeviceModelError(
                f"readout sharing c={self.c} must divide the cores per tile C={self.C}")
        if not self.f_ghz > 0:
            raise DeviceModelError("arch.f_ghz must be positive")
        for name in ("b_in", "b_w", "b_o"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise DeviceModelError(f"arch.{name} must be a positive integer")
        if self.dac_kind not in ("edac", "eodac"):
            raise DeviceModelError("arch.dac_kind must be 'edac' or 'eodac'")
        if self.dac_kind == "eodac" and sum(self.eodac_segments) != self.b_in:
            raise DeviceModelError(
                f"eoDAC segments {self.eodac_segments} must sum to b_in={self.b_in}")

    @property
    def n_cores(self) -> int:
        return self.R * self.C

    @property
    def n_chunk_slots(self) -> int:
        """Weight chunks resident simultaneously."""
        return (self.R // self.r) * (self.C // self.c)

    @property
    def chunk_rows(self) -> int:
        return self.r * self.k1

    @property
    def chunk_cols(self) -> int:
        return self.c * self.k2

    def input_dac_power_mw(self, params: DeviceParams) -> float:
        if self.dac_kind == "eodac":
            return eodac_power(self.b_in, self.eodac_segments, self.f_ghz, params)
        return edac_power(self.b_in, self.f_ghz, params)

    def input_dac_area_um2(self, params: DeviceParams) -> float:
        # A segmented eoDAC duplicates the driver/IO stack per segment.
        if self.dac_kind == "eodac":
            return params.a_dac_um2 * len(self.eodac_segments)
        return params.a_dac_um2


@dataclass(frozen=True)
class PowerBreakdown:
    input_mw: float
    weight_mw: float
    readout_mw: float
    rerouter_mw: float

    @property
    def total_mw(self) -> float:
        return self.input_mw + self.weight_mw + self.readout_mw + self.rerouter_mw

    def to_dict(self) -> dict:
        return {
            "input_mw": self.input_mw,
            "weight_mw": self.weight_mw,
            "readout_mw": self.readout_mw,
            "rerouter_mw": self.rerouter_mw,
            "total_mw": self.total_mw,
        }

    def scaled(self, factor: float) -> "PowerBreakdown":
        return PowerBreakdown(self.input_mw * factor, self.weight_mw * factor,
                              self.readout_mw * factor, self.rerouter_mw * factor)


@dataclass(frozen=True)
class AreaBreakdown:
    ptc_weight_mm2: float
    splitter_mm2: float
    pd_mm2: float
    dac_mzm_rerouter_mm2: float
    adc_tia_mm2: float

    @property
    def total_mm2(self) -> float:
        return (self.ptc_weight_mm2 + self.splitter_mm2 + self.pd_mm2
                + self.dac_mzm_rerouter_mm2 + self.adc_tia_mm2)

    def to_dict(self) -> dict:
        return {
            "ptc_weight_mm2": self.ptc_weight_mm2,
            "splitter_mm2": self.splitter_mm2,
            "pd_mm2": self.pd_mm2,
            "dac_mzm_rerouter_mm2": self.dac_mzm_rerouter_mm2,
            "adc_tia_mm2": self.adc_tia_mm2,
            "total_mm2": self.total_mm2,
        }


def _normalize_chunk_masks(arch: ArchConfig, row_mask, col_mask):
    """Masks as (r, k1) and (c, k2) booleans; dense when None.

    A column mask may be given with an explicit r axis (r, c, k2), but the
    sharing group must then agree exactly: the r cores fed by one input
    module cannot gate the same physical channel differently.
    """
    if row_mask is None:
        row = np.ones((arch.r, arch.k1), dtype=bool)
    else:
        row = np.asarray(row_mask, dtype=bool).reshape(arch.r, arch.k1)
    if col_mask is None:
        col = np.ones((arch.c, arch.k2), dtype=bool)
    else:
        col = np.asarray(col_mask, dtype=bool)
        if col.ndim == 3:
            if not (col == col[0]).all():
                raise DeviceModelError(
                    "column masks differ across the r cores of one input-sharing "
                    "group; shared channels cannot be gated inconsistently")
            col = col[0]
        col = col.reshape(arch.c, arch.k2)
    return row, col


def chunk_power(arch: ArchConfig, device: DeviceParams, layout: LayoutParams,
                fit: GammaFit = GammaFit(), weights=None,
                row_mask=None, col_mask=None,
                mode: ExecutionMode = ExecutionMode.PRUNE_ONLY,
                output_gating: bool = True) -> PowerBreakdown:
    """Power of the hardware slice serving one (r*k1) x (c*k2) weight chunk.

    The slice is r*c cores, c input modules and r readout arrays.
    ``weights`` is an (r, c, k1, k2) array; pass None for the analytic
    uniform-weight estimate (mean |phase| = pi/2 - 1).  Gating follows the
    execution mode: input channels power off only under input gating,
    photodiodes only under light redistribution (no light means no
    photocurrent), readout channels whenever output gating is on.
    """
    row, col = _normalize_chunk_masks(arch, row_mask, col_mask)
    gated_input = mode in (ExecutionMode.INPUT_GATING, ExecutionMode.INPUT_GATING_LR)

    # --- input modules: c modules of k2 modulator+DAC channels ----------
    p_channel = (device.p_mod_static_mw + device.e_mod_pj * arch.f_ghz
                 + arch.input_dac_power_mw(device))
    n_in = int(col.sum()) if gated_input else arch.c * arch.k2
    input_mw = n_in * p_channel

    # --- weight array: r*c cores of k1*k2 nodes --------------------------
    alive = row[:, None, :, None] & col[None, :, None, :]   # (r, c, k1, k2)
    n_alive = int(alive.sum())
    if weights is None:
        mean_mw = mzi_power(UNIFORM_MEAN_PHASE_RAD, layout.l_s_um, device, fit)
        mzi_mw = n_alive * mean_mw
    else:
        w = np.asarray(weights, dtype=float).reshape(arch.r, arch.c, arch.k1, arch.k2)
        phases = weight_to_phase(np.where(alive, w, 0.0))
        mzi_mw = float(np.sum(mzi_power(np.abs(phases), layout.l_s_um, device, fit)))
    if mode is ExecutionMode.INPUT_GATING_LR:
        # Dark columns receive no light at all, so their detectors idle.
        n_pd_nodes = arch.r * arch.k1 * int(col.sum())
    else:
        n_pd_nodes = arch.r * arch.c * arch.k1 * arch.k2
    weight_mw = mzi_mw + 2 * device.p_pd_mw * n_pd_nodes

    # --- readout: r arrays of k1 TIA+ADC channels ------------------------
    p_read = device.p_tia_mw + adc_power(arch.b_o, arch.f_ghz, device)
    n_out = int(row.sum()) if output_gating else arch.r * arch.k1
    readout_mw = n_out * p_read

    # --- rerouter: one per input module, driven only under redistribution
    rerouter_mw = 0.0
    if mode is ExecutionMode.INPUT_GATING_LR:
        for ci in range(arch.c):
            rerouter_mw += rerouter_configure(col[ci], layout.l_s_um, device, fit).total_power_mw

    return PowerBreakdown(input_mw, weight_mw, readout_mw, rerouter_mw)


def power(arch: ArchConfig, device: DeviceParams, layout: LayoutParams,
          fit: GammaFit = GammaFit(), weights=None, row_mask=None, col_mask=None,
          mode: ExecutionMode = ExecutionMode.PRUNE_ONLY,
          output_gating: bool = True) -> PowerBreakdown:
    """Whole-accelerator power with every chunk slot running the given chunk.

    With dense masks and no weights this reproduces the closed forms
    P_in = (R*C*k2/r)(P_mod + P_DAC), P_wgt = R*C*k1*k2*(P_MZI + 2*P_PD),
    P_out = (R*C*k1/c)(P_TIA + P_ADC).
    """
    one = chunk_power(arch, device, layout, fit, weights, row_mask, col_mask,
                      mode, output_gating)
    return one.scaled(arch.n_chunk_slots)


def area(arch: ArchConfig, device: DeviceParams, layout: LayoutParams) -> AreaBreakdown:
    """Chip area (mm^2) from the floorplan formula.

    The crossbar block is (k2-1) row pitches plus one node length tall and
    (k1-1) column pitches plus one node width wide; converter and readout
    blocks are per-channel unit areas, divided by their sharing factors.
    """
    node_w = layout.l_s_um + layout.ps_width_um
    ptc = (((arch.k2 - 1) * layout.l_v_um + device.node_length_um)
           * ((arch.k1 - 1) * layout.l_h_um + node_w))
    n = arch.n_cores
    um2 = {
        "ptc": n * ptc,
        "splitter": n * arch.k2 * device.a_mmi_um2,
        "pd": n * 2 * arch.k1 * arch.k2 * device.a_pd_um2,
        "dac_mzm_rr": (n // arch.r) * (arch.k2 * (arch.input_dac_area_um2(device)
                                                  + device.a_mzm_um2)
                                       + device.a_rerouter_um2),
        "adc_tia": (n // arch.c) * arch.k1 * (device.a_adc_um2 + device.a_tia_um2),
    }
    return AreaBreakdown(
        ptc_weight_mm2=um2["ptc"] / 1e6,
        splitter_mm2=um2["splitter"] / 1e6,
        pd_mm2=um2["pd"] / 1e6,
        dac_mzm_rerouter_mm2=um2["dac_mzm_rr"] / 1e6,
        adc_tia_mm2=um2["adc_tia"] / 1e6,
    )


def cycles_for_layer(c_out: int, fan_in: int, n_vectors: int,
                     arch: ArchConfig) -> int:
    """Cycles to push ``n_vectors`` activation vectors through one layer.

    The weight matrix tiles into p = ceil(c_out / (r*k1)) by
    q = ceil(fan_in / (c*k2)) chunks; each chunk consumes one cycle per
    vector regardless of sparsity (pruned devices idle but the slot is
    still scheduled).  For a conv layer, fan_in = C_in * K^2 and
    ``n_vectors`` is the number of output positions.
    """
    if c_out < 1 or fan_in < 1 or n_vectors < 1:
        raise DeviceModelError("layer dimensions must be positive")
    p = -(-c_out // arch.chunk_rows)
    q = -(-fan_in // arch.chunk_cols)
    return p * q * n_vectors


def energy(f_ghz: float, schedule) -> tuple[float, float]:
    """Total energy (mJ) and average power (W) over a chunk schedule.

    ``schedule`` is an iterable whose entries end in (power, cycles), where
    power is a PowerBreakdown or a plain mW figure (leading fields such as
    layer/chunk labels are ignored).  Average power is total energy over
    total wallclock (sequential chunks).
    """
    total_pj = 0.0
    total_cycles = 0
    for entry in schedule:
        p, cycles = entry[-2], entry[-1]
        p_mw = p.total_mw if isinstance(p, PowerBreakdown) else float(p)
        if cycles < 0:
            raise DeviceModelError("schedule cycle counts must be non-negative")
        total_pj += p_mw * cycles / f_ghz   # mW * ns = pJ
        total_cycles += cycles
    if total_cycles == 0:
        raise DeviceModelError("cannot average power over an empty schedule")
    e_mj = total_pj * 1e-9
    p_avg_w = (e_mj * 1e-3) / (total_cycles / f_ghz * 1e-9)
    return e_mj, p_avg_w


def pap(p_avg_w: float, area_mm2: float) -> float:
    """Power-area product (W * mm^2), the sweep figure of merit."""
    return p_avg_w * area_mm2
