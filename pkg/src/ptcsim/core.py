"""Noisy matrix-vector products on one photonic core, plus the light rerouter.

The core computes y = W x with the length-k2 input encoded as light
intensity, weights as MZI phases, and per-node balanced detectors summed
along each of the k1 output columns.  Three execution modes differ in what
happens to pruned input columns:

* ``PRUNE_ONLY``   - weight MZIs on pruned entries are powered off, but the
  full input still reaches them; extinction-ratio leakage, crosstalk and
  phase noise make the pruned weights slightly non-zero.
* ``INPUT_GATING`` - pruned columns' modulators are powered off too, so only
  the leakage fraction of the input reaches the dead weights.
* ``INPUT_GATING_LR`` - a binary-tree rerouter steers all light into the
  surviving columns (boost k2/k2'), and the readout gain is scaled back by
  k2'/k2, which rescales detector noise by the same factor.

Output gating (``output_gating=True``) forces rows whose row-mask bit is 0
to exactly zero, removing their leakage and noise from the readout.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .devices import (
    DeviceModelError,
    DeviceParams,
    GammaFit,
    leakage_transmission,
    mzi_power,
    phase_to_weight,
    weight_to_phase,
)
from .layout import LayoutParams, perturbed_phases_gated


class ExecutionMode(enum.Enum):
    PRUNE_ONLY = "prune_only"
    INPUT_GATING = "input_gating"
    INPUT_GATING_LR = "input_gating_lr"

    @classmethod
    def parse(cls, name: str) -> "ExecutionMode":
        try:
            return cls(name)
        except ValueError:
            valid = ", ".join(m.value for m in cls)
            raise DeviceModelError(f"unknown execution mode {name!r}; expected one of {valid}")


def derive_rng(root_seed: int, *path: int) -> np.random.Generator:
    """Deterministic per-task RNG: (root, scenario, point, trial, ...).

    Every concurrent unit of work derives its own generator from the root
    seed and an integer path, so results are independent of scheduling.
    """
    return np.random.default_rng(np.random.SeedSequence([int(root_seed), *map(int, path)]))


# ---------------------------------------------------------------------------
# light rerouter
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RerouterState:
    """Configured binary-tree rerouter for one k2-port input module.

    ``node_phases_rad`` is heap-ordered (root first, then level by level);
    node i's children are 2i+1 and 2i+2.  ``leaf_intensities`` is the
    normalized intensity landing on each input port for unit input power.
    """

    col_mask: tuple[int, ...]
    node_phases_rad: tuple[float, ...]
    node_ratios: tuple[tuple[int, int], ...]
    leaf_intensities: tuple[float, ...]
    total_power_mw: float


def rerouter_configure(col_mask, arm_spacing_um: float = 9.0,
                       params: DeviceParams = DeviceParams(),
                       fit: GammaFit = GammaFit()) -> RerouterState:
    """Set the tree splitters so active ports share the light evenly.

    Each internal node splits its intensity in the ratio of unpruned leaves
    under its upper vs. lower subtree; the phase that realizes a ratio
    u:(u+l) is 2*arccos(sqrt(u/(u+l))) - pi/2, and a dead subtree (u+l = 0)
    leaves the splitter at its zero-power balanced point.  Non-power-of-two
    port counts are padded with permanently pruned dummy leaves.
    """
    mask = [1 if m else 0 for m in np.asarray(col_mask).ravel().tolist()]
    if len(mask) == 0:
        raise DeviceModelError("column mask must be non-empty")
    n = 1 << (len(mask) - 1).bit_length()  # next power of two
    padded = mask + [0] * (n - len(mask))

    # Leaf counts percolate up the heap: counts[i] = unpruned leaves below.
    counts = [0] * (n - 1) + padded
    for i in range(n - 2, -1, -1):
        counts[i] = counts[2 * i + 1] + counts[2 * i + 2]

    phases, ratios = [], []
    for i in range(n - 1):
        up, lo = counts[2 * i + 1], counts[2 * i + 2]
        ratios.append((up, lo))
        if up + lo == 0:
            phases.append(0.0)
        else:
            phases.append(2.0 * math.acos(math.sqrt(up / (up + lo))) - math.pi / 2)

    # Intensity propagation from the root (unit input).
    intens = [0.0] * (2 * n - 1)
    intens[0] = 1.0
    for i in range(n - 1):
        up, lo = ratios[i]
        total = up + lo
        frac_up = 0.5 if total == 0 else up / total
        intens[2 * i + 1] = intens[i] * frac_up
        intens[2 * i + 2] = intens[i] * (1.0 - frac_up)

    power = float(np.sum(mzi_power(np.abs(np.asarray(phases)), arm_spacing_um, params, fit))) if phases else 0.0
    return RerouterState(
        col_mask=tuple(mask),
        node_phases_rad=tuple(phases),
        node_ratios=tuple(ratios),
        leaf_intensities=tuple(intens[n - 1:n - 1 + len(mask)]),
        total_power_mw=power,
    )


# ---------------------------------------------------------------------------
# noisy MVM
# ---------------------------------------------------------------------------

def _validate_mvm_args(x, w, row_mask, col_mask):
    if w.ndim < 2:
        raise DeviceModelError("weight array must be at least 2-D (k1, k2)")
    k1, k2 = w.shape[-2], w.shape[-1]
    if np.any(np.abs(w) > 1.0):
        raise DeviceModelError("weights must lie in [-1, 1]")
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise DeviceModelError("inputs must lie in [0, 1]")
    if row_mask.shape[-1] != k1:
        raise DeviceModelError(f"row mask must have {k1} entries")
    if col_mask.shape[-1] != k2:
        raise DeviceModelError(f"column mask must have {k2} entries")


def simulate_mvm_batch(x, w, row_mask, col_mask, mode: ExecutionMode,
                       layout: LayoutParams,
                       params: DeviceParams = DeviceParams(),
                       fit: GammaFit = GammaFit(),
                       rng: np.random.Generator | int | None = 0,
                       output_gating: bool = True,
                       coupling_free: bool = False) -> np.ndarray:
    """Vectorized engine behind :func:`simulate_mvm`.

    ``w`` has shape (..., k1, k2) and ``x`` (..., k2, n); leading dimensions
    batch independent cores that share one RNG stream.  Phase noise is drawn
    once per core mapping, detector noise once per node and input vector.
    ``coupling_free=True`` skips thermal crosstalk (used for layers mapped
    on deliberately isolated columns).
    """
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    row = np.asarray(row_mask, dtype=bool)
    col = np.asarray(col_mask, dtype=bool)
    _validate_mvm_args(x, w, row_mask=row, col_mask=col)
    if not isinstance(mode, ExecutionMode):
        mode = ExecutionMode.parse(str(mode))
    if not isinstance(rng, np.random.Generator):
        rng = derive_rng(0 if rng is None else rng)
    k1, k2 = w.shape[-2], w.shape[-1]

    phases = weight_to_phase(np.where(row[..., :, None] & col[..., None, :], w, 0.0))
    if coupling_free:
        realized = phases
    else:
        realized = perturbed_phases_gated(phases, row, col, layout, fit)
    if params.phase_noise_sigma_rad > 0:
        realized = realized + rng.normal(0.0, params.phase_noise_sigma_rad, size=realized.shape)
    w_eff = phase_to_weight(realized)

    # Extinction-ratio floor: a powered-off weight cannot sit closer to zero
    # than the leakage transmission.
    tau = leakage_transmission(params)
    dead = ~(row[..., :, None] & col[..., None, :])
    floored = np.where(w_eff >= 0, np.maximum(w_eff, tau), np.minimum(w_eff, -tau))
    w_eff = np.where(dead & (np.abs(w_eff) < tau), floored, w_eff)

    k2_alive = col.sum(axis=-1)
    if mode is ExecutionMode.PRUNE_ONLY:
        x_eff = x
    elif mode is ExecutionMode.INPUT_GATING:
        x_eff = np.where(col[..., :, None], x, tau * x)
    else:  # INPUT_GATING_LR: all light into surviving columns
        boost = np.divide(k2, k2_alive, out=np.zeros(np.shape(k2_alive), dtype=float),
                          where=k2_alive > 0)
        x_eff = np.where(col[..., :, None], x, 0.0) * np.asarray(boost)[..., None, None]

    y = w_eff @ x_eff
    if params.pd_noise_sigma > 0:
        n_vec = x_eff.shape[-1]
        noise = rng.normal(0.0, params.pd_noise_sigma,
                           size=y.shape[:-2] + (k1, k2, n_vec))
        y = y + noise.sum(axis=-2)
    if mode is ExecutionMode.INPUT_GATING_LR:
        y = y * (np.asarray(k2_alive, dtype=float) / k2)[..., None, None]
    if output_gating:
        y = np.where(row[..., :, None], y, 0.0)
    return y


def simulate_mvm(x, w, row_mask=None, col_mask=None,
                 mode: ExecutionMode = ExecutionMode.PRUNE_ONLY,
                 layout: LayoutParams = LayoutParams(),
                 params: DeviceParams = DeviceParams(),
                 fit: GammaFit = GammaFit(),
                 rng_seed: np.random.Generator | int | None = 0,
                 output_gating: bool = True,
                 coupling_free: bool = False) -> np.ndarray:
    """One noisy MVM on a single k1 x k2 core.

    ``x`` is a length-k2 vector in [0, 1] (or a (k2, n) batch sharing one
    weight mapping), ``w`` a (k1, k2) weight matrix in [-1, 1]; masks
    default to all-ones.  Identical arguments and seed reproduce the result
    bit for bit.
    """
    w = np.asarray(w, dtype=float)
    k1, k2 = w.shape
    row = np.ones(k1, dtype=bool) if row_mask is None else np.asarray(row_mask, dtype=bool)
    col = np.ones(k2, dtype=bool) if col_mask is None else np.asarray(col_mask, dtype=bool)
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    y = simulate_mvm_batch(x[:, None] if squeeze else x, w, row, col, mode,
                           layout, params, fit, rng_seed, output_gating,
                           coupling_free=coupling_free)
    return y[:, 0] if squeeze else y


def ideal_mvm(x, w, row_mask=None, col_mask=None) -> np.ndarray:
    """Noise-free masked product, the reference for error metrics."""
    w = np.asarray(w, dtype=float)
    k1, k2 = w.shape[-2], w.shape[-1]
    row = np.ones(k1, dtype=bool) if row_mask is None else np.asarray(row_mask, dtype=bool)
    col = np.ones(k2, dtype=bool) if col_mask is None else np.asarray(col_mask, dtype=bool)
    masked = np.where(row[..., :, None] & col[..., None, :], w, 0.0)
    return masked @ np.asarray(x, dtype=float)


def nmae(y_actual, y_reference) -> float:
    """Normalized mean absolute error: mean|y - ref| / mean|ref|.

    Raises when the reference is identically zero (the metric is undefined).
    """
    actual = np.asarray(y_actual, dtype=float)
    ref = np.asarray(y_reference, dtype=float)
    if actual.shape != ref.shape:
        raise DeviceModelError("N-MAE operands must have identical shapes")
    denom = np.mean(np.abs(ref))
    if denom == 0.0:
        raise DeviceModelError("N-MAE is undefined for an all-zero reference")
    return float(np.mean(np.abs(actual - ref)) / denom)
