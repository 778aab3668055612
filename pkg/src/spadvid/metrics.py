"""Restoration quality metrics and hot-pixel preprocessing.

PSNR uses peak 1.0 over the full voxel volume.  SSIM follows the standard
reference parameterization (11x11 Gaussian window, sigma 1.5, K1=0.01,
K2=0.03, dynamic range 1.0), computed per frame over the region where the
window fits entirely inside the frame, then averaged over frames.

Hot pixels are repaired by the median of the 3x3 neighborhood, excluding
the damaged pixels themselves from the calculation; the replacement values
are taken from the original undamaged pixels only, which makes the fix
idempotent for a fixed mask.
"""

import math
import warnings

import numpy as np
from scipy.ndimage import correlate1d

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(a, b, peak: float = 1.0) -> float:
    """10 * log10(peak^2 / MSE) in dB; +inf for identical inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_kernel(window: int, sigma: float) -> np.ndarray:
    radius = (window - 1) // 2
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _local_mean(img, kernel):
    # boundary mode is irrelevant: callers crop to the interior where the
    # window never touches the edge
    tmp = correlate1d(img, kernel, axis=0, mode="constant")
    return correlate1d(tmp, kernel, axis=1, mode="constant")


def ssim_frame(a, b, window: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA, data_range: float = 1.0):
    """Mean SSIM of one frame over the interior valid region."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if min(a.shape) < window:
        raise ValueError(f"frame {a.shape} is smaller than the {window}x{window} window")
    kernel = _gaussian_kernel(window, sigma)
    ux = _local_mean(a, kernel)
    uy = _local_mean(b, kernel)
    uxx = _local_mean(a * a, kernel)
    uyy = _local_mean(b * b, kernel)
    uxy = _local_mean(a * b, kernel)
    vx = uxx - ux * ux
    vy = uyy - uy * uy
    vxy = uxy - ux * uy
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    s = ((2 * ux * uy + c1) * (2 * vxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
    pad = (window - 1) // 2
    return float(s[pad:-pad, pad:-pad].mean())


def ssim(a, b, window: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA, data_range: float = 1.0):
    """Per-frame mean SSIM averaged over a (T, H, W) sequence (2-D inputs ok)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        return ssim_frame(a, b, window, sigma, data_range)
    if a.ndim != 3:
        raise ValueError(f"expected (T, H, W) or (H, W), got shape {a.shape}")
    return float(np.mean([ssim_frame(fa, fb, window, sigma, data_range) for fa, fb in zip(a, b)]))


def median_hot_pixel_fix(frame, hot_mask) -> np.ndarray:
    """Replace masked pixels with the median of unmasked 3x3 neighbors.

    Border neighborhoods clip to the frame.  A pixel whose whole
    neighborhood is masked is left unchanged and reported via a warning.
    Even-count medians are the mean of the two middle values.
    """
    frame = np.asarray(frame, dtype=np.float64)
    hot_mask = np.asarray(hot_mask, dtype=bool)
    if frame.ndim != 2:
        raise ValueError(f"expected a 2-D frame, got shape {frame.shape}")
    if frame.shape != hot_mask.shape:
        raise ValueError(f"mask shape {hot_mask.shape} does not match frame {frame.shape}")
    out = frame.copy()
    h, w = frame.shape
    unfixable = []
    for y, x in np.argwhere(hot_mask):
        y0, y1 = max(0, y - 1), min(h, y + 2)
        x0, x1 = max(0, x - 1), min(w, x + 2)
        hood = frame[y0:y1, x0:x1]
        good = ~hot_mask[y0:y1, x0:x1]
        if good.any():
            out[y, x] = float(np.median(hood[good]))
        else:
            unfixable.append((int(y), int(x)))
    if unfixable:
        warnings.warn(f"{len(unfixable)} hot pixels had fully masked neighborhoods: {unfixable[:8]}")
    return out


def estimate_hot_mask(frames, threshold: float = 0.98) -> np.ndarray:
    """Hot-pixel mask from temporal-mean saturation.

    Intended for sequences of at least ~100 frames; shorter inputs warn
    because a bright moving object can then masquerade as a defect.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 3:
        raise ValueError(f"expected (T, H, W) frames, got shape {frames.shape}")
    if frames.shape[0] < 100:
        warnings.warn(f"only {frames.shape[0]} frames; hot-pixel estimate may be unreliable")
    return frames.mean(axis=0) > threshold


def sequence_report(reference, test) -> dict:
    """PSNR/SSIM summary of a restored sequence against its reference."""
    reference = np.asarray(reference, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    value = psnr(reference, test)
    return {
        "psnr_db": None if math.isinf(value) else value,
        "psnr_is_infinite": math.isinf(value),
        "ssim": ssim(reference, test),
        "num_frames": int(reference.shape[0]) if reference.ndim == 3 else 1,
    }
