"""Study runners behind the CLI: report, sweep, progressive walk, noise study.

Every runner is a pure function of (config, seed) returning a JSON-ready
dict with a ``schema`` tag and flat ``rows`` suitable for CSV, so repeated
invocations are byte-identical.  The progressive walk replays the design
evolution from a foundry-grade dense accelerator to the final sparse,
gated, segmented-DAC design, one change per stage, on a fixed synthetic
workload.
"""

from __future__ import annotations

import dataclasses
import json
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .arch import (
    ArchConfig,
    PowerBreakdown,
    area,
    chunk_power,
    pap,
    power,
)
from .config import Config, ConfigError, apply_overrides
from .core import ExecutionMode, derive_rng, ideal_mvm, nmae, simulate_mvm, simulate_mvm_batch
from .devices import DeviceParams, GammaFit, mzi_power, weight_to_phase
from .layout import LayoutParams
from .sparsity import combinations_capped, interleaved_ones, partition, round_half_up

REPORT_SCHEMA = "ptcsim-report-1"
SWEEP_SCHEMA = "ptcsim-sweep-1"
PROGRESSIVE_SCHEMA = "ptcsim-progressive-1"
NMAE_SCHEMA = "ptcsim-nmae-1"
SIMULATE_SCHEMA = "ptcsim-simulate-1"

# Column order of the summary table rows (accuracy stays empty for
# analytic evaluations that never run a network).
TABLE_COLUMNS = ("l_s_um", "l_g_um", "accuracy", "p_avg_w", "area_mm2",
                 "pap_w_mm2")

# Typical foundry MZI switching power; the low-power device in
# DeviceParams brings this down to p_pi_mw.
FOUNDRY_P_PI_MW = 30.0
# Vertical (row) pitch follows the device length plus a fixed routing gap.
ROW_PITCH_GAP_UM = 5.0
# Density target of the progressive walk's sparsity stages.
PROGRESSIVE_DENSITY = 0.3


# --------------------------------------------------------------------------
# report / sweep


def run_report(cfg: Config) -> dict:
    """Analytic dense power/area/PAP snapshot of one configuration."""
    fit = GammaFit()
    pb = power(cfg.arch, cfg.device, cfg.layout, fit)
    ab = area(cfg.arch, cfg.device, cfg.layout)
    p_avg_w = pb.total_mw / 1e3
    row = {
        "l_s_um": cfg.layout.l_s_um,
        "l_g_um": cfg.layout.l_g_um,
        "accuracy": None,
        "p_avg_w": p_avg_w,
        "area_mm2": ab.total_mm2,
        "pap_w_mm2": pap(p_avg_w, ab.total_mm2),
    }
    return {
        "schema": REPORT_SCHEMA,
        "row": row,
        "power_breakdown_mw": pb.to_dict(),
        "area_breakdown_mm2": ab.to_dict(),
    }


def _sweep_point(cfg: Config, point: dict) -> dict:
    row = {path: value for path, value in point.items()}
    try:
        rep = run_report(apply_overrides(cfg, point))
    except Exception as exc:  # recorded per point; the sweep continues
        row.update({col: None for col in TABLE_COLUMNS})
        row["error"] = f"{type(exc).__name__}: {exc}"
        return row
    row.update(rep["row"])
    row["error"] = None
    return row


def run_sweep(cfg: Config, threads: int = 1) -> dict:
    """Dense-model grid sweep over the configured axes.

    Points that fail validation (e.g. a negative spacing) are kept as rows
    carrying an ``error`` string; the minimum-PAP flag considers only the
    points that evaluated.
    """
    points = cfg.sweep.grid()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda pt: _sweep_point(cfg, pt), points))
    else:
        rows = [_sweep_point(cfg, pt) for pt in points]

    best = None
    for i, row in enumerate(rows):
        if row["error"] is None and (
                best is None or row["pap_w_mm2"] < rows[best]["pap_w_mm2"]):
            best = i
    for i, row in enumerate(rows):
        row["pap_is_min"] = (i == best)
    return {
        "schema": SWEEP_SCHEMA,
        "axes": [[path, list(values)] for path, values in cfg.sweep.axes],
        "columns": [*(path for path, _ in cfg.sweep.axes), *TABLE_COLUMNS,
                    "pap_is_min", "error"],
        "rows": rows,
        "min_pap_index": best,
    }


# --------------------------------------------------------------------------
# progressive design walk


def _sum_breakdowns(parts: list[PowerBreakdown]) -> PowerBreakdown:
    return PowerBreakdown(
        sum(p.input_mw for p in parts),
        sum(p.weight_mw for p in parts),
        sum(p.readout_mw for p in parts),
        sum(p.rerouter_mw for p in parts),
    )


def _workload_power(arch: ArchConfig, device: DeviceParams,
                    layout: LayoutParams, fit: GammaFit, w6: np.ndarray,
                    row: np.ndarray, col6: np.ndarray, mode: ExecutionMode,
                    output_gating: bool) -> PowerBreakdown:
    """Average accelerator power while streaming the chunked workload.

    Chunks get equal cycle counts, so the average is the chunk-mean slice
    power scaled by the number of simultaneously resident chunks.
    """
    p, q = w6.shape[:2]
    parts = [chunk_power(arch, device, layout, fit, weights=w6[pi, qi],
                         row_mask=row, col_mask=col6[pi, qi], mode=mode,
                         output_gating=output_gating)
             for pi in range(p) for qi in range(q)]
    return _sum_breakdowns(parts).scaled(arch.n_chunk_slots / (p * q))


def _magnitude_columns(w6: np.ndarray, row6: np.ndarray, n_keep: int) -> np.ndarray:
    """Keep the ``n_keep`` largest-norm columns (norms over unpruned rows)."""
    p, q = w6.shape[:2]
    c, k2 = w6.shape[3], w6.shape[5]
    norms = np.sqrt((w6 ** 2 * row6).sum(axis=(2, 4))).reshape(-1)
    order = np.argsort(-norms, kind="stable")
    col = np.zeros(norms.size, dtype=bool)
    col[order[:n_keep]] = True
    return col.reshape(p, q, c, k2)


def _power_aware_columns(w6: np.ndarray, row6: np.ndarray, col6: np.ndarray,
                         device: DeviceParams, layout: LayoutParams,
                         fit: GammaFit, margin: int = 2,
                         cap: int = 10000) -> np.ndarray:
    """Re-pick the kept columns to minimize modeled power, never worse.

    Candidate pool = the incumbent choice widened by ``margin`` columns of
    the magnitude ranking; the incumbent itself is always evaluated, so
    the returned selection cannot draw more power than it.  Under
    prune-only accounting only the weight MZIs depend on the column
    choice, so each candidate combination scores as a sum of per-column
    heater powers.
    """
    shape = col6.shape
    phases = np.abs(weight_to_phase(w6))
    col_mzi = (mzi_power(phases, layout.l_s_um, device, fit) * row6).sum(axis=(2, 4))
    col_mzi = col_mzi.reshape(-1)
    norms = np.sqrt((w6 ** 2 * row6).sum(axis=(2, 4))).reshape(-1)

    n_keep = int(col6.sum())
    order = np.argsort(-norms, kind="stable")
    pool = order[:min(n_keep + margin, norms.size)]
    incumbent_flat = np.flatnonzero(col6.reshape(-1))
    pool_index = {int(j): i for i, j in enumerate(pool)}
    incumbent = tuple(sorted(pool_index[int(j)] for j in incumbent_flat))

    best_combo, best_power = incumbent, float(col_mzi[pool[list(incumbent)]].sum())
    for combo in combinations_capped(len(pool), n_keep, cap):
        p_mw = float(col_mzi[pool[list(combo)]].sum())
        if p_mw < best_power:
            best_combo, best_power = combo, p_mw
    col = np.zeros(norms.size, dtype=bool)
    col[pool[list(best_combo)]] = True
    return col.reshape(shape)


def run_progressive(cfg: Config, seed: int) -> dict:
    """Stage-by-stage power/area walk from a dense foundry design.

    Each stage changes one thing and re-evaluates average power, area and
    their product on a fixed synthetic 64x576 layer (uniform weights).
    Dense stages use the analytic uniform-phase power; sparse stages
    evaluate the mapped workload chunk by chunk.
    """
    fit = GammaFit()
    dev_cfg, lay_cfg, arch_cfg = cfg.device, cfg.layout, cfg.arch

    foundry_l_s = dev_cfg.foundry_mzi_width_um - dev_cfg.ps_width_um
    device = dataclasses.replace(dev_cfg, p_pi_mw=FOUNDRY_P_PI_MW,
                                 node_length_um=dev_cfg.foundry_mzi_length_um)
    layout = dataclasses.replace(
        lay_cfg, l_s_um=foundry_l_s, l_g_um=20.0,
        l_v_um=dev_cfg.foundry_mzi_length_um + ROW_PITCH_GAP_UM)
    arch = dataclasses.replace(arch_cfg, r=1, c=1, dac_kind="edac")

    mode = ExecutionMode.PRUNE_ONLY
    output_gating = False
    w6 = row = col6 = row6 = None   # dense until the sparsity stage

    rows: list[dict] = []

    def emit(name: str) -> None:
        if w6 is None:
            pb = power(arch, device, layout, fit)
            density = 1.0
            mode_label = "dense"
        else:
            pb = _workload_power(arch, device, layout, fit, w6, row, col6,
                                 mode, output_gating)
            density = float((row.sum() * col6.sum())
                            / (row.size * col6[0, 0].size * col6.shape[0] * col6.shape[1]))
            mode_label = mode.value
        ab = area(arch, device, layout)
        p_avg_w = pb.total_mw / 1e3
        rows.append({
            "stage": len(rows),
            "name": name,
            "p_pi_mw": device.p_pi_mw,
            "l_s_um": layout.l_s_um,
            "l_g_um": layout.l_g_um,
            "r": arch.r,
            "c": arch.c,
            "density": density,
            "mode": mode_label,
            "output_gating": output_gating,
            "dac": arch.dac_kind,
            "device_area_um2": device.node_length_um
                               * (layout.l_s_um + layout.ps_width_um),
            "p_avg_w": p_avg_w,
            "area_mm2": ab.total_mm2,
            "pap_w_mm2": pap(p_avg_w, ab.total_mm2),
            "power_breakdown_mw": pb.to_dict(),
        })

    emit("foundry-baseline")

    device = dataclasses.replace(device, p_pi_mw=dev_cfg.p_pi_mw,
                                 node_length_um=dev_cfg.node_length_um)
    layout = dataclasses.replace(layout, l_s_um=lay_cfg.l_s_um,
                                 l_v_um=dev_cfg.node_length_um + ROW_PITCH_GAP_UM)
    emit("low-power-mzi")

    layout = dataclasses.replace(layout, l_g_um=lay_cfg.l_g_um)
    emit("compact-spacing")

    arch = dataclasses.replace(arch, r=arch_cfg.r, c=arch_cfg.c)
    emit("core-sharing")

    # Map the synthetic workload and prune to the target density: rows
    # interleaved at half density, columns kept by magnitude.
    w2d = derive_rng(seed, 7).uniform(-1.0, 1.0, size=(arch.chunk_rows,
                                                       9 * arch.chunk_cols))
    w6 = partition(w2d, arch)
    rk1 = arch.r * arch.k1
    row = interleaved_ones(rk1, round_half_up(max(PROGRESSIVE_DENSITY, 0.5)
                                              * rk1)).astype(bool).reshape(arch.r, arch.k1)
    row6 = row[None, None, :, None, :, None]
    row_ones = int(row.sum())
    n_keep = round_half_up(PROGRESSIVE_DENSITY * w6.size / row_ones)
    col6 = _magnitude_columns(w6, row6, n_keep)
    output_gating = True
    emit("structured-sparsity")

    col6 = _power_aware_columns(w6, row6, col6, device, layout, fit)
    emit("power-aware-masks")

    mode = ExecutionMode.INPUT_GATING_LR
    layout = dataclasses.replace(layout, l_g_um=1.0)
    emit("gating-redistribution")

    arch = dataclasses.replace(arch, dac_kind="eodac")
    emit("segmented-eodac")

    return {
        "schema": PROGRESSIVE_SCHEMA,
        "workload": {"rows": int(w2d.shape[0]), "cols": int(w2d.shape[1]),
                     "density": PROGRESSIVE_DENSITY},
        "columns": ["stage", "name", "p_pi_mw", "l_s_um", "l_g_um", "r", "c",
                    "density", "mode", "output_gating", "dac",
                    "device_area_um2", "p_avg_w", "area_mm2", "pap_w_mm2"],
        "rows": rows,
    }


# --------------------------------------------------------------------------
# noise / fidelity study


def _nmae_block(w6: np.ndarray, x: np.ndarray, row: np.ndarray,
                col, mode: ExecutionMode, output_gating: bool,
                device: DeviceParams, layout: LayoutParams, fit: GammaFit,
                rng: np.random.Generator) -> np.ndarray:
    """Layer-level N-MAE for a block of seeds, one value per seed.

    ``x`` is (S, q, c, k2, m); ``col`` is (S, q, c, k2) or None for dense.
    The layer output accumulates over input chunks (q) and photocurrent-
    summed cores (c); the reference is the exact masked product.
    """
    s_n, q = x.shape[0], x.shape[1]
    p = w6.shape[0]
    r, c, k1, k2 = w6.shape[2:]
    m = x.shape[-1]

    x_arg = x[:, None, :, None]                    # (S,1,q,1,c,k2,m)
    col_b = (np.ones((s_n, q, c, k2), dtype=bool) if col is None
             else np.asarray(col, dtype=bool))
    # Align the (r, k1) row mask explicitly: (r, 1, k1) broadcasts onto the
    # (..., r, c, k1) axes; a bare (r, k1) would land on (c, k1).
    y = simulate_mvm_batch(
        x_arg, w6[None], row_mask=row[:, None, :],
        col_mask=col_b[:, None, :, None],
        mode=mode, layout=layout, params=device, fit=fit, rng=rng,
        output_gating=output_gating)
    y_layer = y.sum(axis=(2, 4)).reshape(s_n, p * r * k1, m)

    w_eff = (w6[None]
             * row[None, None, None, :, None, :, None]
             * col_b[:, None, :, None, :, None, :])
    y_ref = (w_eff @ x_arg).sum(axis=(2, 4)).reshape(s_n, p * r * k1, m)
    num = np.abs(y_layer - y_ref).mean(axis=(1, 2))
    den = np.abs(y_ref).mean(axis=(1, 2))
    return num / den


def _one_sided_z(diffs: np.ndarray) -> dict:
    """z statistic for 'mean(diffs) > 0' (paired one-sided test)."""
    d = np.asarray(diffs, dtype=float)
    mean = float(d.mean())
    se = float(d.std(ddof=1) / math.sqrt(d.size)) if d.size > 1 else 0.0
    z = mean / se if se > 0 else (math.inf if mean > 0 else 0.0)
    return {"mean_diff": mean, "se": se, "z": float(z), "n": int(d.size)}


def run_nmae_study(cfg: Config, seed: int, n_seeds: int = 1000,
                   n_vectors: int = 8, l_g_values=(1.0, 3.0, 5.0),
                   col_densities=(0.25,), block_size: int = 50) -> dict:
    """Computational-fidelity study on a 64-channel 3x3 conv layer.

    Part one varies the row-mask pattern (dense / blocked / interleaved at
    half density) with and without output gating, columns dense.  Part two
    varies the column density and execution mode (prune-only, input
    gating, input gating + light redistribution) with dense rows and
    output gating on.  All variants of a seed share the same activations
    and noise draws, so differences are paired; ``comparisons`` holds
    one-sided z statistics for the headline orderings.
    """
    arch, device = cfg.arch, cfg.device
    fit = GammaFit()
    w2d = derive_rng(seed, 8).uniform(-1.0, 1.0, size=(arch.chunk_rows,
                                                       9 * arch.chunk_cols))
    w6 = partition(w2d, arch)
    q = w6.shape[1]
    r, c, k1, k2 = w6.shape[2:]
    rk1 = r * k1

    half = interleaved_ones(rk1, rk1 // 2).astype(bool)
    blocked = np.zeros(rk1, dtype=bool)
    blocked[:rk1 // 2] = True
    patterns = {
        "dense": np.ones(rk1, dtype=bool),
        "blocked": blocked,
        "interleaved": half,
    }
    modes = (ExecutionMode.PRUNE_ONLY, ExecutionMode.INPUT_GATING,
             ExecutionMode.INPUT_GATING_LR)

    n_blocks = -(-n_seeds // block_size)
    sizes = [min(block_size, n_seeds - b * block_size) for b in range(n_blocks)]

    rows: list[dict] = []
    comparisons: list[dict] = []
    for ilg, l_g in enumerate(l_g_values):
        layout = dataclasses.replace(cfg.layout, l_g_um=float(l_g))

        # -- row patterns, dense columns --------------------------------
        per_variant: dict[tuple, list] = {}
        for ib, s_n in enumerate(sizes):
            x = derive_rng(seed, 41, ib).uniform(
                0.0, 1.0, size=(s_n, q, c, k2, n_vectors))
            for pname, flat in patterns.items():
                for og in (False, True):
                    nm = _nmae_block(
                        w6, x, flat.reshape(r, k1), None,
                        ExecutionMode.PRUNE_ONLY, og, device, layout, fit,
                        rng=derive_rng(seed, 40, ilg, ib))
                    per_variant.setdefault((pname, og), []).append(nm)
        variant_nmae = {key: np.concatenate(v) for key, v in per_variant.items()}
        for (pname, og), vals in variant_nmae.items():
            rows.append({
                "study": "row_pattern", "l_g_um": float(l_g),
                "pattern": pname, "output_gating": og, "mode": "prune_only",
                "col_density": 1.0, "mean_nmae": float(vals.mean()),
                "std_nmae": float(vals.std(ddof=1)), "n_seeds": int(vals.size),
            })
        comparisons.append({
            "l_g_um": float(l_g),
            "claim": "interleaved rows + output gating beat dense",
            **_one_sided_z(variant_nmae[("dense", True)]
                           - variant_nmae[("interleaved", True)]),
        })

        # -- column densities x execution modes --------------------------
        for di, dens in enumerate(col_densities):
            n_keep = round_half_up(float(dens) * k2)
            per_mode: dict[str, list] = {}
            for ib, s_n in enumerate(sizes):
                x = derive_rng(seed, 43, ib).uniform(
                    0.0, 1.0, size=(s_n, q, c, k2, n_vectors))
                u = derive_rng(seed, 42, di, ib).uniform(size=(s_n, q, c, k2))
                order = np.argsort(u, axis=-1)
                col = np.zeros(u.shape, dtype=bool)
                np.put_along_axis(col, order[..., :n_keep], True, axis=-1)
                for mode in modes:
                    nm = _nmae_block(
                        w6, x, np.ones((r, k1), dtype=bool), col, mode, True,
                        device, layout, fit,
                        rng=derive_rng(seed, 44, ilg, di, ib))
                    per_mode.setdefault(mode.value, []).append(nm)
            mode_nmae = {key: np.concatenate(v) for key, v in per_mode.items()}
            for mode in modes:
                vals = mode_nmae[mode.value]
                rows.append({
                    "study": "col_mode", "l_g_um": float(l_g),
                    "pattern": "dense", "output_gating": True,
                    "mode": mode.value, "col_density": float(dens),
                    "mean_nmae": float(vals.mean()),
                    "std_nmae": float(vals.std(ddof=1)),
                    "n_seeds": int(vals.size),
                })
            comparisons.append({
                "l_g_um": float(l_g), "col_density": float(dens),
                "claim": "input gating beats prune-only",
                **_one_sided_z(mode_nmae["prune_only"]
                               - mode_nmae["input_gating"]),
            })
            comparisons.append({
                "l_g_um": float(l_g), "col_density": float(dens),
                "claim": "light redistribution beats input gating",
                **_one_sided_z(mode_nmae["input_gating"]
                               - mode_nmae["input_gating_lr"]),
            })

    return {
        "schema": NMAE_SCHEMA,
        "n_seeds": int(n_seeds),
        "n_vectors": int(n_vectors),
        "columns": ["study", "l_g_um", "pattern", "output_gating", "mode",
                    "col_density", "mean_nmae", "std_nmae", "n_seeds"],
        "rows": rows,
        "comparisons": comparisons,
    }


# --------------------------------------------------------------------------
# single-product demo


def run_simulate(cfg: Config, seed: int, n_vectors: int = 4) -> dict:
    """One random crossbar product through every execution mode."""
    arch, device = cfg.arch, cfg.device
    fit = GammaFit()
    rng = derive_rng(seed, 5)
    w = rng.uniform(-1.0, 1.0, size=(arch.k1, arch.k2))
    x = rng.uniform(0.0, 1.0, size=(arch.k2, n_vectors))
    row = np.ones(arch.k1, dtype=bool)
    col = interleaved_ones(arch.k2, arch.k2 // 2).astype(bool)
    reference = ideal_mvm(x, w, row, col)

    results = {}
    for i, mode in enumerate(ExecutionMode):
        y = simulate_mvm(x, w, row, col, mode=mode, layout=cfg.layout,
                         params=device, fit=fit,
                         rng_seed=derive_rng(seed, 6, i))
        results[mode.value] = {"nmae": float(nmae(y, reference)),
                               "y": y.tolist()}
    y_free = simulate_mvm(x, w, row, col, mode=ExecutionMode.PRUNE_ONLY,
                          layout=cfg.layout, params=device, fit=fit,
                          rng_seed=derive_rng(seed, 6, 99), coupling_free=True)
    results["coupling_free"] = {"nmae": float(nmae(y_free, reference)),
                                "y": y_free.tolist()}
    return {
        "schema": SIMULATE_SCHEMA,
        "k1": arch.k1, "k2": arch.k2, "n_vectors": int(n_vectors),
        "col_density": 0.5,
        "modes": results,
    }


# --------------------------------------------------------------------------
# deterministic serialization


def format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: str | Path, columns, rows) -> None:
    lines = [",".join(columns)]
    lines += [",".join(format_cell(row.get(col)) for col in columns)
              for row in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def write_json(path: str | Path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")
