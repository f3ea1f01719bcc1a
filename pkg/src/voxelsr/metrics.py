"""Volume quality metrics (SSIM, PSNR, NRMSE) and Table-style summaries.

SSIM follows the classic Gaussian-weighted formulation extended
separably to 3D (11-wide window, sigma 1.5, k1 = 0.01, k2 = 0.03) and is
averaged over fully interior windows only, so no boundary convention is
involved. PSNR returns +inf on zero error. NRMSE is normalized by the
Euclidean norm of the reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

METRIC_NAMES = ("ssim", "psnr", "nrmse")
SUMMARY_LABELS = ("mean", "std", "min", "median", "max")


@dataclass(frozen=True)
class SsimParams:
    """SSIM window and stabilization constants.

    window_radius 5 gives the standard 11^3 window. data_range may be a
    positive number or "auto" (max - min of the reference volume).
    """

    window_radius: int = 5
    gaussian_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: object = "auto"

    def __post_init__(self):
        if self.window_radius < 1:
            raise ValueError("window_radius must be >= 1")
        if self.gaussian_sigma <= 0:
            raise ValueError("gaussian_sigma must be positive")
        if self.k1 <= 0 or self.k2 <= 0:
            raise ValueError("k1 and k2 must be positive")
        if self.data_range != "auto" and float(self.data_range) <= 0:
            raise ValueError("data_range must be positive or 'auto'")


def gaussian_window(radius: int, sigma: float) -> np.ndarray:
    """1D Gaussian taps of length 2*radius + 1, normalized to unit sum."""
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return w / w.sum()


def _resolve_range(ref: np.ndarray, data_range) -> float:
    if data_range == "auto":
        rng = float(ref.max() - ref.min())
        if rng == 0.0:
            raise ValueError("data_range 'auto' on a constant reference volume")
        return rng
    return float(data_range)


def _as_values(x) -> np.ndarray:
    return np.asarray(getattr(x, "values", x), dtype=np.float64)


def _check_same_dims(x: np.ndarray, y: np.ndarray):
    if x.shape != y.shape:
        raise ValueError(f"volume dims differ: {x.shape} vs {y.shape}")


def _local_mean(arr: np.ndarray, taps: np.ndarray, radius: int) -> np.ndarray:
    """Separable Gaussian-weighted local mean, valid (interior) part only."""
    out = arr
    for axis in range(arr.ndim):
        out = correlate1d(out, taps, axis=axis, mode="constant")
    sl = tuple(slice(radius, n - radius) for n in arr.shape)
    return out[sl]


def ssim3d(x, y, params: SsimParams = SsimParams()) -> float:
    """Mean structural similarity between two volumes of equal dims.

    x is the reference when data_range is "auto". Windows are Gaussian
    weighted; only windows fully inside the volume contribute.
    """
    xv, yv = _as_values(x), _as_values(y)
    _check_same_dims(xv, yv)
    r = params.window_radius
    win = 2 * r + 1
    if min(xv.shape) < win:
        raise ValueError(f"every axis must be >= window size {win}, got dims {xv.shape}")
    data_range = _resolve_range(xv, params.data_range)
    c1 = (params.k1 * data_range) ** 2
    c2 = (params.k2 * data_range) ** 2
    taps = gaussian_window(r, params.gaussian_sigma)

    mu_x = _local_mean(xv, taps, r)
    mu_y = _local_mean(yv, taps, r)
    xx = _local_mean(xv * xv, taps, r)
    yy = _local_mean(yv * yv, taps, r)
    xy = _local_mean(xv * yv, taps, r)
    var_x = xx - mu_x * mu_x
    var_y = yy - mu_y * mu_y
    cov = xy - mu_x * mu_y

    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def psnr(x, y, data_range="auto") -> float:
    """Peak signal-to-noise ratio in dB; +inf when the volumes coincide."""
    xv, yv = _as_values(x), _as_values(y)
    _check_same_dims(xv, yv)
    rng = _resolve_range(xv, data_range)
    if rng <= 0:
        raise ValueError("data_range must be positive")
    mse = float(np.mean((xv - yv) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(rng * rng / mse)


def nrmse(x_ref, y) -> float:
    """||y - x_ref||_2 / ||x_ref||_2 over all voxels."""
    xv, yv = _as_values(x_ref), _as_values(y)
    _check_same_dims(xv, yv)
    ref_norm = float(np.linalg.norm(xv))
    if ref_norm == 0.0:
        raise ValueError("reference volume has zero norm")
    return float(np.linalg.norm(yv - xv) / ref_norm)


@dataclass
class MetricsReport:
    """Per-volume metric rows plus mean/std/min/median/max summaries."""

    per_volume: list           # rows of (id, ssim, psnr, nrmse)
    summary: dict = field(default_factory=dict)  # metric -> {label: value}

    def __post_init__(self):
        for row in self.per_volume:
            _, s, _, n = row
            if not -1.0 - 1e-9 <= s <= 1.0 + 1e-9:
                raise ValueError(f"ssim {s} outside [-1, 1] in row {row}")
            if n < 0:
                raise ValueError(f"negative nrmse in row {row}")
        if not self.summary:
            self.summary = {
                name: _summary_stats([row[i + 1] for row in self.per_volume])
                for i, name in enumerate(METRIC_NAMES)
            }


def _summary_stats(values) -> dict:
    vals = sorted(float(v) for v in values)
    n = len(vals)
    if all(v == vals[0] for v in vals):
        # avoids inf - inf when a metric saturates (e.g. PSNR = inf)
        mean, std = vals[0], 0.0
    else:
        mean = float(np.mean(vals))
        std = float(np.std(vals))  # population std
    return {
        "mean": mean,
        "std": std,
        "min": vals[0],
        "median": vals[(n - 1) // 2],  # lower-middle element for even n
        "max": vals[-1],
    }


def summarize(rows) -> MetricsReport:
    """Build a MetricsReport from (id, ssim, psnr, nrmse) rows."""
    rows = list(rows)
    if not rows:
        raise ValueError("cannot summarize an empty row list")
    return MetricsReport(per_volume=rows)


def format_report(report: MetricsReport) -> str:
    """CSV text: per-volume rows, then a Table-style summary block."""
    lines = ["id,ssim,psnr,nrmse"]
    for vid, s, p, n in report.per_volume:
        lines.append(f"{vid},{s:.6g},{p:.6g},{n:.6g}")
    lines.append("summary,ssim,psnr,nrmse")
    for label in SUMMARY_LABELS:
        cells = ",".join(f"{report.summary[m][label]:.6g}" for m in METRIC_NAMES)
        lines.append(f"{label},{cells}")
    return "\n".join(lines) + "\n"


def write_report(report: MetricsReport, path) -> None:
    Path(path).write_text(format_report(report), encoding="utf-8")
