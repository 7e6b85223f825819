"""End-to-end sparse training, hardware-backed evaluation, checkpoints."""

import numpy as np
import pytest

from ptcsim.core import ExecutionMode, derive_rng
from ptcsim.data import load_dataset, synthetic_separable
from ptcsim.devices import DeviceModelError, DeviceParams
from ptcsim.layout import LayoutParams
from ptcsim.nn import build_toy_mlp
from ptcsim.sparsity import DstSchedule, init_masks
from ptcsim.training import (
    DESK_ARCH,
    PhotonicBackend,
    TrainResult,
    apply_masks,
    evaluate_accuracy,
    evaluate_with_variation,
    load_checkpoint,
    model_power_w,
    save_checkpoint,
    train,
)
from ptcsim.devices import GammaFit

LAY = LayoutParams()
QUIET = DeviceParams(pd_noise_sigma=0.0, phase_noise_sigma_rad=0.0)


def _toy_data():
    x, y = synthetic_separable(n=240, dim=12, classes=3, seed=0)
    return x[:180], y[:180], x[180:], y[180:]


def _toy_model():
    return build_toy_mlp(derive_rng(0, 10), 12, 16, 3)


def test_photonic_backend_is_transparent_when_quiet():
    """Light redistribution with no noise and no crosstalk must reproduce
    the exact product, including the chunk partitioning and rescaling."""
    rng = np.random.default_rng(0)
    w = rng.uniform(-1.0, 1.0, size=(4, 16))
    x = rng.uniform(0.0, 1.0, size=(16, 9))
    mask = init_masks(1.0, 4, 16, DESK_ARCH, w, QUIET, LAY)
    backend = PhotonicBackend(mask, DESK_ARCH, QUIET, LAY, GammaFit(),
                              ExecutionMode.INPUT_GATING_LR, derive_rng(0),
                              coupling_free=True)
    y = backend(w, x)
    assert np.allclose(y, w @ x, rtol=1e-9, atol=1e-12)
    assert len(backend.nmae_log) == 1
    assert backend.nmae_log[0] < 1e-9


def test_photonic_backend_rejects_foreign_mask():
    rng = np.random.default_rng(1)
    w = rng.uniform(-1, 1, size=(4, 16))
    mask = init_masks(1.0, 4, 24, DESK_ARCH, np.zeros((4, 24)), QUIET, LAY)
    backend = PhotonicBackend(mask, DESK_ARCH, QUIET, LAY, GammaFit(),
                              ExecutionMode.PRUNE_ONLY, derive_rng(0))
    with pytest.raises(DeviceModelError, match="does not fit"):
        backend(w, np.zeros((16, 2)))


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def _run_toy(s: float, epochs: int = 4) -> TrainResult:
    model, sparse = _toy_model()
    return train(model, sparse, _toy_data(), s,
                 DstSchedule.for_epochs(epochs), DESK_ARCH, QUIET, LAY,
                 epochs=epochs, lr=2e-3, batch_size=32, seed=0,
                 meta={"model_kind": "toy_mlp",
                       "model_args": {"d_in": 12, "hidden": 16, "classes": 3},
                       "quant": [8, 6]})


def test_train_history_and_mask_invariants():
    result = _run_toy(0.4)
    assert len(result.history) == 4
    for row in result.history:
        assert set(row) == {"epoch", "loss", "accuracy", "density", "power_w"}
        assert np.isfinite(row["loss"]) and 0.0 <= row["accuracy"] <= 1.0
    # density stays within one column granule of the target every epoch
    mask = result.masks[2]
    granule = mask.row.sum() / mask.effective6().size
    for row in result.history:
        assert abs(row["density"] - 0.4) <= granule / 2 + 1e-12
    # masked weights are exactly zero in the stored model
    layer = result.model.layers[2]
    dense = mask.to_dense(*layer.w.shape)
    assert np.all(layer.w[~dense] == 0.0)
    assert result.meta["density_target"] == 0.4
    assert result.meta["epochs"] == 4


def test_train_dense_target_never_explores():
    result = _run_toy(1.0, epochs=2)
    assert all(row["density"] == 1.0 for row in result.history)
    assert result.masks[2].col.all()


def test_train_is_deterministic():
    a = _run_toy(0.4, epochs=2)
    b = _run_toy(0.4, epochs=2)
    assert a.history == b.history
    assert np.array_equal(a.model.layers[2].w, b.model.layers[2].w)
    assert np.array_equal(a.masks[2].col, b.masks[2].col)


def test_train_aborts_on_divergence():
    model, sparse = _toy_model()
    model.layers[0].w[:] = 1e308
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(RuntimeError, match="diverged"):
            train(model, sparse, _toy_data(), 0.5, DstSchedule.for_epochs(2),
                  DESK_ARCH, QUIET, LAY, epochs=2, batch_size=32, seed=0)


def test_sparser_masks_draw_less_power():
    model, _ = _toy_model()
    x_probe = _toy_data()[0][:4]
    lean = init_masks(0.4, 16, 16, DESK_ARCH, model.layers[2].w, QUIET, LAY)
    full = init_masks(1.0, 16, 16, DESK_ARCH, model.layers[2].w, QUIET, LAY)
    p_lean = model_power_w(model, {2: lean}, DESK_ARCH, QUIET, LAY,
                           GammaFit(), x_probe)
    p_full = model_power_w(model, {2: full}, DESK_ARCH, QUIET, LAY,
                           GammaFit(), x_probe)
    assert p_lean < p_full


def test_apply_masks_zeroes_dead_weights():
    model, _ = _toy_model()
    mask = init_masks(0.5, 16, 16, DESK_ARCH, model.layers[2].w, QUIET, LAY)
    apply_masks(model, {2: mask})
    dense = mask.to_dense(16, 16)
    assert np.all(model.layers[2].w[~dense] == 0.0)
    assert np.any(model.layers[2].w[dense] != 0.0)


# ---------------------------------------------------------------------------
# noisy evaluation
# ---------------------------------------------------------------------------

def test_evaluate_with_variation_contract():
    result = _run_toy(0.5, epochs=2)
    x_test, y_test = _toy_data()[2][:40], _toy_data()[3][:40]
    out = evaluate_with_variation(result.model, result.masks, DESK_ARCH,
                                  DeviceParams(), LAY, GammaFit(),
                                  "prune_only", n_trials=2, seed=0,
                                  x=x_test, y=y_test)
    assert out["mode"] == "prune_only"
    assert len(out["trial_accuracies"]) == 2
    assert out["clean_accuracy"] == evaluate_accuracy(result.model, x_test, y_test)
    assert set(out["layer_nmae"]) == {"fc1", "fc2", "fc3"}
    assert all(v is not None and v >= 0 for v in out["layer_nmae"].values())
    # the photonic hooks are detached afterwards
    assert all(l.photonic is None for l in result.model.matmul_layers())
    # identical seeds replay identical noise
    again = evaluate_with_variation(result.model, result.masks, DESK_ARCH,
                                    DeviceParams(), LAY, GammaFit(),
                                    ExecutionMode.PRUNE_ONLY, n_trials=2,
                                    seed=0, x=x_test, y=y_test)
    assert again == out
    with pytest.raises(DeviceModelError, match="n_trials"):
        evaluate_with_variation(result.model, result.masks, DESK_ARCH,
                                DeviceParams(), LAY, GammaFit(),
                                "prune_only", n_trials=0, seed=0,
                                x=x_test, y=y_test)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def test_checkpoint_roundtrip_and_stability(tmp_path):
    result = _run_toy(0.5, epochs=2)
    path = tmp_path / "ckpt.json"
    schedule = DstSchedule.for_epochs(2)
    save_checkpoint(path, result, DESK_ARCH, schedule)

    model, sparse, masks, arch, obj = load_checkpoint(path)
    assert sparse == [2]
    assert arch == DESK_ARCH
    assert obj["history"] == result.history
    for mine, theirs in zip(result.model.matmul_layers(),
                            model.matmul_layers()):
        assert np.array_equal(mine.w, theirs.w)
        assert np.array_equal(mine.b, theirs.b)
    assert np.array_equal(masks[2].col, result.masks[2].col)
    assert np.array_equal(masks[2].row, result.masks[2].row)

    # loading and re-saving reproduces the file byte for byte
    path2 = tmp_path / "ckpt2.json"
    save_checkpoint(path2, TrainResult(model, sparse, masks, obj["history"],
                                       obj["meta"]), arch, schedule)
    assert path.read_bytes() == path2.read_bytes()


def test_checkpoint_rejects_unknown_format(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"format": "something-else"}')
    with pytest.raises(DeviceModelError, match="unsupported checkpoint"):
        load_checkpoint(path)


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

def test_blobs_dataset_shape_and_determinism():
    xa, ya, xta, yta = load_dataset("blobs", seed=0)
    xb, yb, _, _ = load_dataset("blobs", seed=0)
    assert xa.shape == (960, 1, 8, 8) and xta.shape == (240, 1, 8, 8)
    assert np.array_equal(xa, xb) and np.array_equal(ya, yb)
    assert xa.min() >= 0.0 and xa.max() <= 1.0
    assert set(np.unique(yta)) <= set(range(10))
    del xta, yta


def test_digits_dataset_split():
    x_train, y_train, x_test, y_test = load_dataset("digits", seed=0)
    assert x_train.shape == (1500, 1, 8, 8) and x_test.shape == (297, 1, 8, 8)
    assert 0.0 <= x_train.min() and x_train.max() <= 1.0
    assert set(np.unique(y_train)) == set(range(10))
    del y_test


def test_unknown_dataset_name():
    with pytest.raises(ValueError, match="unknown dataset"):
        load_dataset("mnist")
