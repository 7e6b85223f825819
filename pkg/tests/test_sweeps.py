"""Study runners: report, spacing sweep, progressive walk, fidelity study."""

import dataclasses

import numpy as np
import pytest

from ptcsim.config import SweepSpec, load_config
from ptcsim.devices import DeviceParams
from ptcsim.sweeps import (
    format_cell,
    run_nmae_study,
    run_progressive,
    run_report,
    run_simulate,
    run_sweep,
    write_csv,
    write_json,
)

CFG = load_config(None)


def test_report_default_design_point():
    rep = run_report(CFG)
    assert rep["schema"] == "ptcsim-report-1"
    row = rep["row"]
    assert row["accuracy"] is None
    assert row["p_avg_w"] == pytest.approx(20.58, abs=5e-3)
    assert row["area_mm2"] == pytest.approx(18.30, abs=5e-3)
    assert row["pap_w_mm2"] == pytest.approx(376.614, abs=5e-3)
    pb = rep["power_breakdown_mw"]
    assert pb["total_mw"] == pytest.approx(row["p_avg_w"] * 1e3)
    assert rep["area_breakdown_mm2"]["total_mm2"] == pytest.approx(row["area_mm2"])


def test_sweep_arm_spacing_minimum_sits_at_nine_microns():
    out = run_sweep(CFG)
    assert out["schema"] == "ptcsim-sweep-1"
    assert out["columns"][0] == "layout.l_s_um"
    assert [row["l_s_um"] for row in out["rows"]] == [7.0, 8.0, 9.0, 10.0, 11.0]
    paps = [row["pap_w_mm2"] for row in out["rows"]]
    expected = [381.568, 377.153, 376.614, 378.850, 383.121]
    for got, want in zip(paps, expected):
        assert got == pytest.approx(want, abs=5e-3)
    assert out["min_pap_index"] == 2
    assert [row["pap_is_min"] for row in out["rows"]] == [
        False, False, True, False, False]
    assert all(row["error"] is None for row in out["rows"])


def test_sweep_threads_do_not_change_results():
    assert run_sweep(CFG, threads=3) == run_sweep(CFG, threads=1)


def test_sweep_keeps_failed_points_as_error_rows():
    cfg = dataclasses.replace(
        CFG, sweep=SweepSpec(axes={"layout.l_s_um": [9.0, -1.0]}))
    out = run_sweep(cfg)
    good, bad = out["rows"]
    assert good["error"] is None and good["pap_is_min"]
    assert bad["error"].startswith("ConfigError")
    assert bad["p_avg_w"] is None and bad["pap_w_mm2"] is None
    assert not bad["pap_is_min"]
    assert out["min_pap_index"] == 0


# ---------------------------------------------------------------------------
# progressive design walk
# ---------------------------------------------------------------------------

def test_progressive_walk_stages():
    out = run_progressive(CFG, seed=0)
    assert out["schema"] == "ptcsim-progressive-1"
    assert out["workload"] == {"rows": 64, "cols": 576, "density": 0.3}
    rows = out["rows"]
    assert [r["name"] for r in rows] == [
        "foundry-baseline", "low-power-mzi", "compact-spacing",
        "core-sharing", "structured-sparsity", "power-aware-masks",
        "gating-redistribution", "segmented-eodac"]
    assert [r["stage"] for r in rows] == list(range(8))

    assert [r["p_pi_mw"] for r in rows] == [30.0] + [15.0] * 7
    assert [r["l_s_um"] for r in rows] == [150.25] + [9.0] * 7
    assert [r["l_g_um"] for r in rows] == [20.0, 20.0, 5.0, 5.0, 5.0, 5.0, 1.0, 1.0]
    assert [r["dac"] for r in rows] == ["edac"] * 7 + ["eodac"]
    assert [r["mode"] for r in rows] == (
        ["dense"] * 4 + ["prune_only"] * 2 + ["input_gating_lr"] * 2)
    assert [r["output_gating"] for r in rows] == [False] * 4 + [True] * 4
    assert rows[0]["device_area_um2"] == 85937.5
    assert rows[-1]["device_area_um2"] == 1725.0

    for r in rows[:4]:
        assert r["density"] == 1.0
    for r in rows[4:]:
        assert r["density"] == pytest.approx(0.3003472222222222, rel=1e-12)

    p_avg = [r["p_avg_w"] for r in rows]
    expected_p = [50.837, 41.349, 41.349, 20.580, 11.553, 11.545, 8.913, 6.842]
    for got, want in zip(p_avg, expected_p):
        assert got == pytest.approx(want, abs=2e-3)
    areas = [r["area_mm2"] for r in rows]
    expected_a = [413.096, 32.042, 25.148, 18.300, 18.300, 18.300, 16.462, 17.166]
    for got, want in zip(areas, expected_a):
        assert got == pytest.approx(want, abs=2e-3)
    # area never grows until the segmented DAC trades area for power
    assert all(a >= b - 1e-12 for a, b in zip(areas[:-1], areas[1:-1]))
    assert areas[-1] > areas[-2]

    paps = [r["pap_w_mm2"] for r in rows]
    expected_pap = [21000.587, 1324.902, 1039.843, 376.614, 211.418,
                    211.264, 146.730, 117.454]
    for got, want in zip(paps, expected_pap):
        assert got == pytest.approx(want, rel=1e-4)
    assert all(a > b for a, b in zip(paps, paps[1:]))


def test_progressive_walk_is_deterministic():
    assert run_progressive(CFG, seed=0) == run_progressive(CFG, seed=0)
    other = run_progressive(CFG, seed=1)
    # dense stages carry no workload randomness; sparse stages may differ
    assert other["rows"][0]["p_avg_w"] == pytest.approx(
        run_progressive(CFG, seed=0)["rows"][0]["p_avg_w"])


# ---------------------------------------------------------------------------
# fidelity study
# ---------------------------------------------------------------------------

def test_nmae_study_structure_and_determinism():
    out = run_nmae_study(CFG, seed=0, n_seeds=6, n_vectors=4,
                         l_g_values=(5.0,), col_densities=(0.25,),
                         block_size=4)
    assert out["schema"] == "ptcsim-nmae-1"
    assert out["n_seeds"] == 6
    # 3 patterns x 2 gating states, then 3 modes at one column density
    assert len(out["rows"]) == 9
    for row in out["rows"]:
        assert set(row) == {"study", "l_g_um", "pattern", "output_gating",
                            "mode", "col_density", "mean_nmae", "std_nmae",
                            "n_seeds"}
        assert row["n_seeds"] == 6
        assert row["mean_nmae"] > 0.0
    claims = [c["claim"] for c in out["comparisons"]]
    assert claims == [
        "interleaved rows + output gating beat dense",
        "input gating beats prune-only",
        "light redistribution beats input gating",
    ]
    for comp in out["comparisons"]:
        assert comp["n"] == 6
        assert np.isfinite(comp["mean_diff"]) and np.isfinite(comp["z"])
    assert out == run_nmae_study(CFG, seed=0, n_seeds=6, n_vectors=4,
                                 l_g_values=(5.0,), col_densities=(0.25,),
                                 block_size=4)


def test_nmae_vanishes_for_quiet_well_separated_dense_design():
    quiet = DeviceParams(pd_noise_sigma=0.0, phase_noise_sigma_rad=0.0)
    cfg = dataclasses.replace(CFG, device=quiet)
    out = run_nmae_study(cfg, seed=0, n_seeds=3, n_vectors=4,
                         l_g_values=(50.0,), col_densities=(0.25,),
                         block_size=3)
    dense_rows = [r for r in out["rows"]
                  if r["study"] == "row_pattern" and r["pattern"] == "dense"
                  and not r["output_gating"]]
    assert len(dense_rows) == 1
    assert dense_rows[0]["mean_nmae"] < 1e-3


# ---------------------------------------------------------------------------
# single-product demo
# ---------------------------------------------------------------------------

def test_simulate_demo_mode_ordering():
    out = run_simulate(CFG, seed=0)
    assert out["schema"] == "ptcsim-simulate-1"
    assert out["k1"] == 16 and out["k2"] == 16 and out["col_density"] == 0.5
    modes = out["modes"]
    assert set(modes) == {"prune_only", "input_gating", "input_gating_lr",
                          "coupling_free"}
    assert modes["prune_only"]["nmae"] == pytest.approx(0.06920, abs=1e-4)
    assert modes["input_gating"]["nmae"] == pytest.approx(0.05998, abs=1e-4)
    assert modes["input_gating_lr"]["nmae"] == pytest.approx(0.05236, abs=1e-4)
    assert modes["coupling_free"]["nmae"] == pytest.approx(0.03684, abs=1e-4)
    assert (modes["coupling_free"]["nmae"] < modes["input_gating_lr"]["nmae"]
            < modes["input_gating"]["nmae"] < modes["prune_only"]["nmae"])
    y = modes["prune_only"]["y"]
    assert len(y) == 16 and len(y[0]) == 4
    assert out == run_simulate(CFG, seed=0)


# ---------------------------------------------------------------------------
# serialization helpers
# ---------------------------------------------------------------------------

def test_format_cell():
    assert format_cell(None) == ""
    assert format_cell(True) == "true"
    assert format_cell(False) == "false"
    assert format_cell(1.5) == "1.5"
    assert format_cell(0.1) == "0.1"
    assert format_cell(3) == "3"
    assert format_cell("label") == "label"


def test_write_csv_golden(tmp_path):
    path = tmp_path / "t.csv"
    write_csv(path, ["a", "b"], [{"a": 1.0, "b": None}, {"a": "s", "b": True}])
    assert path.read_text() == "a,b\n1.0,\ns,true\n"
    write_csv(tmp_path / "t2.csv", ["a", "b"],
              [{"a": 1.0, "b": None}, {"a": "s", "b": True}])
    assert path.read_bytes() == (tmp_path / "t2.csv").read_bytes()


def test_write_json_sorted_and_newline_terminated(tmp_path):
    path = tmp_path / "t.json"
    write_json(path, {"b": 1, "a": [1, 2]})
    text = path.read_text()
    assert text.startswith('{\n  "a"')
    assert text.index('"a"') < text.index('"b"')
    assert text.endswith("}\n")
