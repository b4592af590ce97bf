"""Baseline denoisers: moving average, exponential moving average, Butterworth.

All three act on one decay (or a batch of decays) and preserve length and
constant sequences. ``tune`` grid-searches each filter's hyperparameter per
decay against a reference curve, breaking ties toward less smoothing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import IpDecay

MA_GRID = (1, 3, 5, 7, 9, 11)
EMA_GRID = np.linspace(1.0, 0.0, 21)  # preference order: identity first
CUTOFF_GRID = np.linspace(0.98, 0.02, 49)

FILTER_KINDS = ("MA", "EMA", "Butterworth")


@dataclass
class FilterSpec:
    """A filter kind plus the hyperparameter relevant to it."""

    kind: str
    ma_order: int | None = None
    ema_alpha: float | None = None
    cutoff: float | None = None

    def __post_init__(self):
        if self.kind not in FILTER_KINDS:
            raise ValueError(f"unknown filter kind {self.kind!r}")
        if self.ma_order is not None and (self.ma_order < 1 or self.ma_order % 2 == 0):
            raise ValueError(f"MA order must be odd and >= 1, got {self.ma_order}")
        if self.ema_alpha is not None and not (0.0 <= self.ema_alpha <= 1.0):
            raise ValueError(f"EMA alpha must lie in [0, 1], got {self.ema_alpha}")
        if self.cutoff is not None and not (0.0 < self.cutoff < 1.0):
            raise ValueError(f"cutoff must lie in (0, 1), got {self.cutoff}")


def _as_rows(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    return np.atleast_2d(x), single


def moving_average(x, order: int) -> np.ndarray:
    """Centered M-point mean with edge-replication padding."""
    rows, single = _as_rows(x)
    d = rows.shape[1]
    if order % 2 == 0 or not (1 <= order <= 2 * d - 1):
        raise ValueError(f"MA order must be odd and within [1, {2 * d - 1}], got {order}")
    if order == 1:
        out = rows.copy()
        return out[0] if single else out
    s = order // 2
    padded = np.pad(rows, ((0, 0), (s, s)), mode="edge")
    csum = np.cumsum(padded, axis=1)
    totals = np.empty_like(rows)
    totals[:, 0] = csum[:, order - 1]
    totals[:, 1:] = csum[:, order:] - csum[:, : d - 1]
    out = totals / order
    return out[0] if single else out


def exponential_moving_average(x, alpha: float) -> np.ndarray:
    """First-order recursive smoother; alpha=1 is the identity, alpha=0
    holds the first value."""
    if not (0.0 <= alpha <= 1.0):
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    rows, single = _as_rows(x)
    out = np.empty_like(rows)
    out[:, 0] = rows[:, 0]
    for j in range(1, rows.shape[1]):
        out[:, j] = alpha * rows[:, j] + (1.0 - alpha) * out[:, j - 1]
    return out[0] if single else out


def butterworth_coeffs(cutoff: float) -> tuple[float, float, float]:
    """Bilinear-transform coefficients (b0, b1, a1) of the first-order
    low-pass prototype, prewarped so the half-power point lands exactly at
    the normalized cutoff (1 = Nyquist)."""
    if not (0.0 < cutoff < 1.0):
        raise ValueError(f"cutoff must lie strictly inside (0, 1), got {cutoff}")
    k = np.tan(np.pi * cutoff / 2.0)
    b0 = k / (k + 1.0)
    a1 = (k - 1.0) / (k + 1.0)
    return b0, b0, a1


def butterworth_lowpass(x, cutoff: float) -> np.ndarray:
    """Single causal pass of the first-order low-pass Butterworth filter.

    The filter state is seeded with the first sample (as if the input had
    been constant), so constants pass through unchanged and no start-up
    transient corrupts the short sequence.
    """
    b0, b1, a1 = butterworth_coeffs(cutoff)
    rows, single = _as_rows(x)
    out = np.empty_like(rows)
    out[:, 0] = rows[:, 0]
    for j in range(1, rows.shape[1]):
        out[:, j] = b0 * rows[:, j] + b1 * rows[:, j - 1] - a1 * out[:, j - 1]
    return out[0] if single else out


def apply_filter(spec: FilterSpec, x) -> np.ndarray:
    if spec.kind == "MA":
        return moving_average(x, spec.ma_order)
    if spec.kind == "EMA":
        return exponential_moving_average(x, spec.ema_alpha)
    return butterworth_lowpass(x, spec.cutoff)


def _grid_outputs(kind: str, rows: np.ndarray) -> tuple[list, np.ndarray]:
    """Filter outputs for every grid candidate, candidates in preference
    order (least smoothing first)."""
    if kind == "MA":
        candidates = list(MA_GRID)
        outputs = np.stack([moving_average(rows, m) for m in candidates])
    elif kind == "EMA":
        candidates = [float(a) for a in EMA_GRID]
        outputs = np.stack(
            [exponential_moving_average(rows, a) for a in candidates]
        )
    elif kind == "Butterworth":
        candidates = [float(w) for w in CUTOFF_GRID]
        outputs = np.stack([butterworth_lowpass(rows, w) for w in candidates])
    else:
        raise ValueError(f"unknown filter kind {kind!r}")
    return candidates, outputs


def tune_batch(
    kind: str, noisy: np.ndarray, reference: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-decay grid search of one filter family.

    Returns (best hyperparameter per decay, filtered output per decay,
    RMSE per decay against the reference). Ties go to the candidate with
    the least smoothing because candidates are evaluated in that order.
    """
    noisy = np.atleast_2d(np.asarray(noisy, dtype=np.float64))
    reference = np.atleast_2d(np.asarray(reference, dtype=np.float64))
    if noisy.shape != reference.shape:
        raise ValueError("noisy and reference must share shape")
    candidates, outputs = _grid_outputs(kind, noisy)
    errors = np.sqrt(np.mean((outputs - reference[None, :, :]) ** 2, axis=2))
    best = np.argmin(errors, axis=0)  # first minimum = preferred candidate
    rows = np.arange(noisy.shape[0])
    params = np.asarray(candidates)[best]
    return params, outputs[best, rows], errors[best, rows]


def tune(kind: str, noisy: IpDecay, reference: IpDecay) -> FilterSpec:
    """Best hyperparameter for one decay, minimizing RMSE to the reference."""
    if noisy.scheme != reference.scheme:
        raise ValueError("noisy and reference decays must share a window scheme")
    params, _, _ = tune_batch(
        kind, noisy.windows[None, :], reference.windows[None, :]
    )
    if kind == "MA":
        return FilterSpec(kind="MA", ma_order=int(params[0]))
    if kind == "EMA":
        return FilterSpec(kind="EMA", ema_alpha=float(params[0]))
    return FilterSpec(kind="Butterworth", cutoff=float(params[0]))
