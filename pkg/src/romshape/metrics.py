"""Relative error metrics for estimation and tracking runs.

Every metric is a Frobenius-norm ratio against the reference signal; a
zero-norm reference makes the ratio meaningless and is reported as NaN
rather than raised, so sweep tables stay rectangular. This module only
computes numbers. Rendering lives with the report writer.
"""

from dataclasses import dataclass, field

import numpy as np


def rel_estimation_error(Y, Y_pred):
    """|| Y - Y_pred ||_F / || Y ||_F over the full record."""
    Y = np.asarray(Y, dtype=float)
    Y_pred = np.asarray(Y_pred, dtype=float)
    if Y.shape != Y_pred.shape:
        raise ValueError("output records differ in shape")
    denom = np.linalg.norm(Y)
    if denom == 0.0:
        return float("nan")
    return float(np.linalg.norm(Y - Y_pred) / denom)


def _windowed(Y, ref, mask, window):
    Y = np.asarray(Y, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if Y.shape != ref.shape:
        raise ValueError("trajectory and reference differ in shape")
    K = Y.shape[1]
    if window is None:
        lo, hi = 0, K
    else:
        lo, hi = window
        lo = max(int(lo), 0)
        hi = min(int(hi), K)
    if hi <= lo:
        raise ValueError("empty metric window")
    if mask is None:
        mask = np.ones(Y.shape[0], dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
    return Y[mask, lo:hi], ref[mask, lo:hi], (lo, hi)


def rel_tracking_error(Y, ref, mask=None, window=None):
    """Frobenius ratio of masked tracking error over a column window."""
    Yw, Rw, _ = _windowed(Y, ref, mask, window)
    denom = np.linalg.norm(Rw)
    if denom == 0.0:
        return float("nan")
    return float(np.linalg.norm(Yw - Rw) / denom)


def pointwise_errors(Y, ref, mask=None, window=None):
    """Per-point relative and RMS errors.

    Point j owns output rows 2j (axial) and 2j+1 (lateral); rows excluded
    by the mask drop out of the point's block. Returns (e_rel, e_rms),
    each of length p/2, NaN where the point has no masked rows or a
    zero-norm reference block. The RMS normalizer is sqrt(K-1) with K the
    window width.
    """
    Y = np.asarray(Y, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if Y.shape != ref.shape:
        raise ValueError("trajectory and reference differ in shape")
    p, K_full = Y.shape
    if mask is None:
        mask = np.ones(p, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
    if window is None:
        lo, hi = 0, K_full
    else:
        lo = max(int(window[0]), 0)
        hi = min(int(window[1]), K_full)
    if hi <= lo:
        raise ValueError("empty metric window")
    K = hi - lo
    n_points = p // 2
    e_rel = np.full(n_points, np.nan)
    e_rms = np.full(n_points, np.nan)
    for j in range(n_points):
        rows = [row for row in (2 * j, 2 * j + 1) if mask[row]]
        if not rows:
            continue
        diff = Y[rows, lo:hi] - ref[rows, lo:hi]
        e_rms[j] = np.linalg.norm(diff) / np.sqrt(K - 1) if K > 1 else np.nan
        denom = np.linalg.norm(ref[rows, lo:hi])
        if denom > 0.0:
            e_rel[j] = np.linalg.norm(diff) / denom
    return e_rel, e_rms


@dataclass
class MetricRecord:
    e_r: float
    e_rel_point: np.ndarray
    e_rms_point: np.ndarray
    window: tuple
    zero_reference: bool = False
    notes: str = ""

    def to_json(self):
        def scrub(x):
            x = float(x)
            return None if not np.isfinite(x) else x

        return {
            "e_r": scrub(self.e_r),
            "e_rel_point": [scrub(x) for x in self.e_rel_point],
            "e_rms_point": [scrub(x) for x in self.e_rms_point],
            "window": [int(self.window[0]), int(self.window[1])],
            "zero_reference": bool(self.zero_reference),
            "notes": self.notes,
        }


def tracking_record(Y, ref, mask=None, window=None, notes=""):
    """Bundle the scalar and per-point tracking metrics for one run."""
    e_r = rel_tracking_error(Y, ref, mask=mask, window=window)
    e_rel, e_rms = pointwise_errors(Y, ref, mask=mask, window=window)
    _, _, clipped = _windowed(Y, ref, mask, window)
    return MetricRecord(
        e_r=e_r,
        e_rel_point=e_rel,
        e_rms_point=e_rms,
        window=clipped,
        zero_reference=not np.isfinite(e_r),
        notes=notes,
    )
