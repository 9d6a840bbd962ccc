"""Evaluation metrics: MSE, MAE, RMSE, SSIM, PSNR.

The error metrics support two reduction conventions because published
results mix them without saying so: ``"mean"`` averages the per-pixel error
over every element, ``"frame_sum"`` sums the error inside each frame and
averages the per-frame sums.  Every report labels the convention of its
headline numbers and carries both.

All computation is double precision regardless of input dtype.  Inputs are
expected in [0, 1]; SSIM and PSNR fix the dynamic range at 1.
"""

from __future__ import annotations

import json
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_WINDOW = 11
_SIGMA = 1.5
_K1 = 0.01
_K2 = 0.03

REDUCTIONS = ("mean", "frame_sum")


def _paired(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    return pred, truth


def _reduce(err: np.ndarray, reduction: str) -> float:
    if reduction == "mean":
        return float(err.mean())
    if reduction == "frame_sum":
        if err.ndim < 3:
            raise ValueError("frame_sum reduction needs [..., C, H, W] inputs")
        per_frame = err.reshape(-1, math.prod(err.shape[-3:])).sum(axis=1)
        return float(per_frame.mean())
    raise ValueError(f"unknown reduction {reduction!r}; expected one of {REDUCTIONS}")


def mse(pred, truth, reduction: str = "mean") -> float:
    a, b = _paired(pred, truth)
    d = a - b
    return _reduce(d * d, reduction)


def mae(pred, truth, reduction: str = "mean") -> float:
    a, b = _paired(pred, truth)
    return _reduce(np.abs(a - b), reduction)


def rmse(pred, truth, reduction: str = "mean") -> float:
    return math.sqrt(mse(pred, truth, reduction))


def psnr_from_mse(value: float) -> float:
    """-10 * log10(mse) dB at unit dynamic range; 0 error maps to +inf."""
    if value < 0.0:
        raise ValueError(f"mse must be non-negative, got {value}")
    if value == 0.0:
        return math.inf
    return -10.0 * math.log10(value)


def psnr(pred, truth) -> float:
    return psnr_from_mse(mse(pred, truth, "mean"))


def _gaussian_window(n: int = _WINDOW, sigma: float = _SIGMA) -> np.ndarray:
    x = np.arange(n, dtype=np.float64) - (n - 1) / 2.0
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _filt(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Separable valid-mode windowed mean, rows then columns."""
    v = sliding_window_view(img, k.size, axis=0) @ k
    return sliding_window_view(v, k.size, axis=1) @ k


def ssim(pred, truth) -> float:
    """Structural similarity of two single-channel frames in [0, 1].

    The classic windowed form: an 11 x 11 Gaussian window (sigma 1.5),
    K1 = 0.01, K2 = 0.03, dynamic range 1, averaged over all valid window
    positions.  Identical frames score exactly 1.0 because numerator and
    denominator are then the same floating-point expression.
    """
    a, b = _paired(pred, truth)
    if a.ndim != 2:
        raise ValueError(f"ssim expects 2-d single-channel frames, got shape {a.shape}")
    if min(a.shape) < _WINDOW:
        raise ValueError(f"frame {a.shape} is smaller than the "
                         f"{_WINDOW}x{_WINDOW} window")
    k = _gaussian_window()
    c1 = _K1 * _K1
    c2 = _K2 * _K2
    mu_a = _filt(a, k)
    mu_b = _filt(b, k)
    var_a = _filt(a * a, k) - mu_a * mu_a
    var_b = _filt(b * b, k) - mu_b * mu_b
    cov = _filt(a * b, k) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float((num / den).mean())


def _as_videos(pred, truth):
    a, b = _paired(pred, truth)
    if a.ndim == 4:
        a, b = a[None], b[None]
    if a.ndim != 5:
        raise ValueError(f"expected [S, T, C, H, W] or [T, C, H, W] videos, "
                         f"got shape {a.shape}")
    return a, b


def evaluate(pred, truth) -> dict:
    """Full metric report over videos.

    Scalars are means over every sequence and frame; ``per_frame`` breaks
    each metric down by prediction-horizon index.  PSNR means skip frames
    with zero error and report how many were skipped (``psnr_inf_count``);
    an all-perfect horizon slot appears as inf in the per-frame list.
    SSIM is computed per channel and averaged.
    """
    a, b = _as_videos(pred, truth)
    ns, nt, nc = a.shape[:3]

    d = a - b
    sq = d * d
    ab = np.abs(d)
    per_mse = sq.mean(axis=(0, 2, 3, 4))
    per_mae = ab.mean(axis=(0, 2, 3, 4))

    frame_mse = sq.mean(axis=(2, 3, 4))  # [S, T]
    frame_psnr = np.where(frame_mse > 0.0,
                          -10.0 * np.log10(np.where(frame_mse > 0.0, frame_mse, 1.0)),
                          math.inf)
    finite = np.isfinite(frame_psnr)
    inf_count = int((~finite).sum())

    ssim_vals = np.empty((ns, nt, nc))
    for i in range(ns):
        for t in range(nt):
            for c in range(nc):
                ssim_vals[i, t, c] = ssim(a[i, t, c], b[i, t, c])

    def _psnr_mean(mask_slice, values):
        vals = values[mask_slice]
        return float(vals.mean()) if vals.size else math.inf

    report = {
        "sequences": ns,
        "frames": nt,
        "reduction": "mean",
        "mse": float(sq.mean()),
        "mae": float(ab.mean()),
        "rmse": math.sqrt(float(sq.mean())),
        "mse_frame_sum": _reduce(sq, "frame_sum"),
        "mae_frame_sum": _reduce(ab, "frame_sum"),
        "rmse_frame_sum": math.sqrt(_reduce(sq, "frame_sum")),
        "ssim": float(ssim_vals.mean()),
        "psnr": _psnr_mean(finite, frame_psnr),
        "psnr_inf_count": inf_count,
        "per_frame": {
            "mse": [float(v) for v in per_mse],
            "mae": [float(v) for v in per_mae],
            "rmse": [math.sqrt(float(v)) for v in per_mse],
            "ssim": [float(v) for v in ssim_vals.mean(axis=(0, 2))],
            "psnr": [_psnr_mean(finite[:, t], frame_psnr[:, t])
                     for t in range(nt)],
        },
    }
    return report


def _jsonable(value):
    if isinstance(value, float) and math.isinf(value):
        return "inf"
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_jsonable(v) for v in value]
    return value


def report_json(report: dict) -> bytes:
    """Canonical JSON: sorted keys, no whitespace, inf spelled "inf"."""
    return json.dumps(_jsonable(report), sort_keys=True,
                      separators=(",", ":")).encode("utf-8")


def report_lines(report: dict) -> list:
    """Line-oriented rendering: one ``name=value`` per line, scalars first,
    then the per-frame breakdown."""
    lines = []
    for key in sorted(report):
        if key == "per_frame":
            continue
        value = report[key]
        lines.append(f"{key}={value:.8e}" if isinstance(value, float)
                     else f"{key}={value}")
    for name, values in sorted(report.get("per_frame", {}).items()):
        joined = " ".join(f"{v:.8e}" for v in values)
        lines.append(f"per_frame_{name}={joined}")
    return lines
