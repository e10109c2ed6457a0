"""Laser line extraction from RGB images and from the ground-truth mask pass.

RGB path (discrete stage, in order): channel difference isolating the laser
color, clip negatives, Gaussian smoothing, subtract the global mean, clamp,
normalize to unit intensity, threshold at 0.1, then the row-wise maximum.
Sub-pixel refinement fits a 3-parameter Gaussian to the *smoothed* channel
difference (pre-threshold) around each discrete peak.

The stripe is assumed roughly vertical (one crossing per row); set
transpose=True for horizontal stripes.

Mask path: the laser mask pass is noise-free, so the Gaussian fit runs on the
raw mask row; per-row depth comes from inverse-distance-weighted 3x3
interpolation of the depth pass at the sub-pixel stripe location.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .calib.lm import LMOptions, lm_solve

REASON_OK = "ok"
REASON_NO_LASER = "no_laser"
REASON_FIT_FAILED = "fit_failed"
REASON_MULTI_PEAK = "multi_peak"  # informational: row stays valid
REASON_THIN_MASK = "thin_mask"
REASON_NO_DEPTH = "no_depth"


@dataclass(frozen=True)
class ExtractParams:
    laser_color: str = "blue"  # red | green | blue
    smooth_sigma: float = 1.0
    threshold: float = 0.1
    sigma_bounds: tuple = (0.3, 20.0)
    init_sigma: float = 2.0
    multi_peak_ratio: float = 0.5
    transpose: bool = False

    @property
    def fit_half_window(self) -> int:
        # +-max(4, ceil(3 * sigma_s * 3)) px around the discrete peak
        return max(4, int(np.ceil(9.0 * self.smooth_sigma)))


@dataclass
class LaserProfile:
    """Per-row sub-pixel stripe location with validity flags."""

    col: np.ndarray  # float, NaN where invalid
    amplitude: np.ndarray
    width_sigma: np.ndarray
    valid: np.ndarray  # bool
    reason: np.ndarray  # <U12 strings

    @property
    def rows(self) -> np.ndarray:
        return np.arange(len(self.col))

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())

    @staticmethod
    def empty(height: int) -> "LaserProfile":
        return LaserProfile(
            col=np.full(height, np.nan),
            amplitude=np.zeros(height),
            width_sigma=np.zeros(height),
            valid=np.zeros(height, dtype=bool),
            reason=np.full(height, REASON_NO_LASER, dtype="<U12"),
        )


def channel_difference(rgb: np.ndarray, laser_color: str = "green") -> np.ndarray:
    """Laser channel minus the mean of the other two; may be negative."""
    idx = {"red": 0, "green": 1, "blue": 2}
    if laser_color not in idx:
        raise ValueError(f"laser_color must be red/green/blue, got {laser_color!r}")
    k = idx[laser_color]
    others = [i for i in range(3) if i != k]
    return rgb[:, :, k] - 0.5 * (rgb[:, :, others[0]] + rgb[:, :, others[1]])


@dataclass
class DiscreteStage:
    """Intermediate buffers of the discrete-peak pipeline."""

    smoothed: np.ndarray  # fit input: smooth(clip(diff, 0))
    normalized: np.ndarray  # after mean-subtract, clamp, unit normalization
    thresholded: np.ndarray
    peak_col: np.ndarray  # int, -1 where invalid
    valid: np.ndarray


def discrete_peaks(diff: np.ndarray, params: ExtractParams = ExtractParams()) -> DiscreteStage:
    """Row-wise integer peak of the processed channel-difference image.

    Ties at equal maxima resolve to the leftmost column.
    """
    clipped = np.maximum(diff, 0.0)
    smoothed = gaussian_filter(
        clipped, params.smooth_sigma, mode="reflect", truncate=3.0
    )
    m = smoothed - smoothed.mean()
    np.clip(m, 0.0, None, out=m)
    peak = m.max()
    normalized = m / peak if peak > 0 else m
    thresholded = np.where(normalized < params.threshold, 0.0, normalized)
    row_max = thresholded.max(axis=1)
    valid = row_max > 0.0
    peak_col = np.where(valid, np.argmax(thresholded, axis=1), -1)
    return DiscreteStage(
        smoothed=smoothed,
        normalized=normalized,
        thresholded=thresholded,
        peak_col=peak_col,
        valid=valid,
    )


def _gauss_residual(p, x, y):
    a, c, s = p
    return a * np.exp(-((x - c) ** 2) / (2.0 * s * s)) - y


def _gauss_jacobian(p, x, y):
    a, c, s = p
    dx = x - c
    e = np.exp(-(dx * dx) / (2.0 * s * s))
    J = np.empty((len(x), 3))
    J[:, 0] = e
    J[:, 1] = a * e * dx / (s * s)
    J[:, 2] = a * e * dx * dx / (s**3)
    return J


_FIT_OPTS = LMOptions(max_iter=60, gradient_tol=1e-12, step_tol=1e-14)


def fit_gaussian_1d(x: np.ndarray, y: np.ndarray, c0: float, a0: float,
                    s0: float):
    """Least-squares Gaussian a exp(-(x - c)^2 / (2 s^2)); returns (a, c, s)."""
    p, report = lm_solve(
        lambda p: _gauss_residual(p, x, y),
        np.array([a0, c0, s0]),
        jacobian=lambda p: _gauss_jacobian(p, x, y),
        opts=_FIT_OPTS,
    )
    return p, report


def subpixel_refine(smoothed: np.ndarray, stage: DiscreteStage,
                    params: ExtractParams = ExtractParams()) -> LaserProfile:
    """Per-row Gaussian fit around the discrete peak on the smoothed image.

    Rows are marked invalid(fit_failed) when the fit diverges, the center
    leaves the window, or sigma leaves the configured bounds. Rows with a
    secondary in-window maximum above multi_peak_ratio of the primary stay
    valid but carry the multi_peak reason.
    """
    H, W = smoothed.shape
    profile = LaserProfile.empty(H)
    half = params.fit_half_window
    lo_s, hi_s = params.sigma_bounds
    for r in range(H):
        if not stage.valid[r]:
            continue
        pk = int(stage.peak_col[r])
        x0 = max(0, pk - half)
        x1 = min(W, pk + half + 1)
        x = np.arange(x0, x1, dtype=np.float64)
        y = smoothed[r, x0:x1]
        a0 = float(y[pk - x0])
        if a0 <= 0:
            profile.reason[r] = REASON_FIT_FAILED
            continue
        p, report = fit_gaussian_1d(x, y, float(pk), a0, params.init_sigma)
        a, c, s = p
        s = abs(s)
        if (not np.isfinite(c)) or c < x0 or c > x1 - 1 or not lo_s <= s <= hi_s or a <= 0:
            profile.reason[r] = REASON_FIT_FAILED
            continue
        profile.col[r] = c
        profile.amplitude[r] = a
        profile.width_sigma[r] = s
        profile.valid[r] = True
        profile.reason[r] = REASON_OK
        # secondary local maxima inside the window -> multi_peak flag
        if len(y) >= 5:
            interior = y[1:-1]
            is_max = (interior >= y[:-2]) & (interior >= y[2:])
            pos = x[1:-1]
            secondary = is_max & (np.abs(pos - pk) >= 2)
            if np.any(secondary & (interior > params.multi_peak_ratio * a0)):
                profile.reason[r] = REASON_MULTI_PEAK
    return profile


def extract_profile(rgb: np.ndarray, params: ExtractParams = ExtractParams()) -> LaserProfile:
    """Full RGB extraction pipeline: channel difference -> peaks -> sub-pixel."""
    img = rgb.transpose(1, 0, 2) if params.transpose else rgb
    diff = channel_difference(img, params.laser_color)
    stage = discrete_peaks(diff, params)
    return subpixel_refine(stage.smoothed, stage, params)


def interpolate_depth(depth: np.ndarray, row: int, col: float,
                      eps: float = 1e-6) -> float:
    """Inverse-distance-weighted mean of finite depths in the 3x3 window
    around the pixel nearest to (row, col)."""
    H, W = depth.shape
    rc = int(np.clip(round(row), 0, H - 1))
    cc = int(np.clip(round(col), 0, W - 1))
    acc = 0.0
    wsum = 0.0
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            r, c = rc + dr, cc + dc
            if not (0 <= r < H and 0 <= c < W):
                continue
            d = depth[r, c]
            if not np.isfinite(d):
                continue
            dist = np.hypot(r - row, c - col)
            w = 1.0 / (eps + dist)
            acc += w * d
            wsum += w
    return acc / wsum if wsum > 0 else np.nan


def ground_truth_profile(mask: np.ndarray, depth: np.ndarray,
                         params: ExtractParams = ExtractParams()):
    """Sub-pixel stripe location from the laser-mask pass + per-row depth.

    Returns (LaserProfile, depths) where depths[r] is the interpolated
    ground-truth depth at (r, col[r]). Rows with mask support < 3 px are
    invalid(thin_mask).
    """
    if mask.shape != depth.shape:
        raise ValueError("mask and depth passes must be aligned")
    H, W = mask.shape
    profile = LaserProfile.empty(H)
    depths = np.full(H, np.nan)
    half = params.fit_half_window
    lo_s, hi_s = params.sigma_bounds
    for r in range(H):
        row = mask[r]
        support = np.count_nonzero(row > 0.0)
        if support < 3:
            profile.reason[r] = REASON_THIN_MASK
            continue
        pk = int(np.argmax(row))
        x0 = max(0, pk - half)
        x1 = min(W, pk + half + 1)
        x = np.arange(x0, x1, dtype=np.float64)
        y = row[x0:x1]
        p, _ = fit_gaussian_1d(x, y, float(pk), float(row[pk]), params.init_sigma)
        a, c, s = p
        s = abs(s)
        if (not np.isfinite(c)) or c < x0 or c > x1 - 1 or not lo_s <= s <= hi_s or a <= 0:
            profile.reason[r] = REASON_FIT_FAILED
            continue
        d = interpolate_depth(depth, r, c)
        if not np.isfinite(d):
            profile.reason[r] = REASON_NO_DEPTH
            continue
        profile.col[r] = c
        profile.amplitude[r] = a
        profile.width_sigma[r] = s
        profile.valid[r] = True
        profile.reason[r] = REASON_OK
        depths[r] = d
    return profile, depths
