"""Photon statistics and binary image formation for gated SPAD arrays.

Model summary:
  * Photon + dark counts per gate follow a Poisson law with expected count
    chi; a gated 1-bit pixel records a detection with probability
    1 - exp(-chi), so scene radiance is sensed non-linearly.
  * A binary frame is therefore a field of independent Bernoulli samples
    whose per-pixel probability tracks the normalized scene intensity.
  * Averaging N_b = 2**b - 1 consecutive binary frames yields a b-bit
    sequence with N_b + 1 intensity levels at 1/N_b the frame rate.
  * Defective "hot" pixels are dominated by dark counts and appear as
    persistently saturated sites.

Representation: a binary sequence is a (T, H, W) uint8 array of {0, 1};
a quantized sequence is a (T, H, W) float64 array whose values sit on the
grid {k / N_b}.  All operations are pure functions of their inputs plus an
explicit numpy Generator, so callers may parallelize freely as long as each
worker owns its own RNG stream.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

SUPPORTED_BITS = (1, 2, 3, 4)

# SwissSPAD-style timing, for documentation and demo defaults only: a 3.8 ns
# minimum gate and a 6.4 us full-array readout give the oft-quoted 156 kfps.
SWISSSPAD_GATE_TIME_S = 3.8e-9
SWISSSPAD_READOUT_S = 6.4e-6
SWISSSPAD_FRAME_RATE_FPS = 156_000.0


class UnsupportedBitDepthError(ValueError):
    """Pixel values fit none of the supported bit depths."""


@dataclass(frozen=True)
class SensorConfig:
    """Photon-budget parameters defining the expected counts per gate."""

    impinging_rate: float       # photons/s at full scene radiance
    dark_count_rate: float      # thermally generated counts/s
    pde: float                  # photon detection efficiency, 0..1
    gate_time: float            # seconds the pixel is active per frame

    def __post_init__(self):
        if self.impinging_rate < 0:
            raise ValueError(f"impinging_rate must be >= 0, got {self.impinging_rate}")
        if self.dark_count_rate < 0:
            raise ValueError(f"dark_count_rate must be >= 0, got {self.dark_count_rate}")
        if not 0.0 <= self.pde <= 1.0:
            raise ValueError(f"pde must be in [0, 1], got {self.pde}")
        if self.gate_time <= 0:
            raise ValueError(f"gate_time must be > 0, got {self.gate_time}")


@dataclass(frozen=True)
class BitLevel:
    """Bit depth b; averaging N_b = 2**b - 1 binary frames gives one b-bit frame."""

    b: int

    def __post_init__(self):
        if self.b not in SUPPORTED_BITS:
            raise ValueError(f"bit depth must be one of {SUPPORTED_BITS}, got {self.b}")

    @property
    def n_frames(self) -> int:
        return 2 ** self.b - 1

    @property
    def levels(self) -> np.ndarray:
        """The N_b + 1 permitted intensity values k / N_b."""
        return np.arange(self.n_frames + 1) / self.n_frames


@dataclass
class BinarySequence:
    """Time-ordered stack of 1-bit frames, shape (T, H, W), values {0, 1}."""

    frames: np.ndarray
    frame_period: float = 1.0 / SWISSSPAD_FRAME_RATE_FPS

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 3:
            raise ValueError(f"frames must be (T, H, W), got shape {self.frames.shape}")
        if self.frames.dtype != np.uint8:
            bad = (self.frames != 0) & (self.frames != 1)
            if bad.any():
                raise ValueError("binary frames may contain only 0 and 1")
            self.frames = self.frames.astype(np.uint8)
        elif self.frames.max(initial=0) > 1:
            raise ValueError("binary frames may contain only 0 and 1")
        if self.frame_period <= 0:
            raise ValueError(f"frame_period must be > 0, got {self.frame_period}")

    def __len__(self):
        return self.frames.shape[0]


@dataclass
class QuantizedSequence:
    """b-bit sequence, shape (T, H, W) float64, values on the grid {k / N_b}."""

    frames: np.ndarray
    bit_level: BitLevel

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3:
            raise ValueError(f"frames must be (T, H, W), got shape {self.frames.shape}")
        n = self.bit_level.n_frames
        codes = self.frames * n
        if not np.allclose(codes, np.round(codes), rtol=0.0, atol=n * LEVEL_TOLERANCE):
            raise ValueError(f"values must lie on the k/{n} grid for b={self.bit_level.b}")

    def __len__(self):
        return self.frames.shape[0]


@dataclass(frozen=True)
class HotPixelSpec:
    """Saturated-defect injection: a `density` fraction of sites forced to 1.0."""

    density: float = 0.002
    seed: int = 0
    mode: str = "fixed"      # "fixed": one site set for all frames; "per-frame": redrawn

    def __post_init__(self):
        if not 0.0 <= self.density <= 0.05:
            raise ValueError(f"density must be in [0, 0.05], got {self.density}")
        if self.mode not in ("fixed", "per-frame"):
            raise ValueError(f"mode must be 'fixed' or 'per-frame', got {self.mode!r}")


# Accumulated values are exact dyadic-rational sums divided by N_b, so doubles
# hold them to within 1 ulp; 1e-9 leaves many orders of magnitude of slack.
LEVEL_TOLERANCE = 1e-9


def poisson_pmf(chi: float, k: int) -> float:
    """Probability of exactly k counts in one gate with expected count chi.

    Evaluates chi**k * exp(-chi) / k!, switching to a log-space evaluation
    for k > 20 so large counts neither overflow nor underflow prematurely.
    """
    if chi < 0:
        raise ValueError(f"chi must be >= 0, got {chi}")
    if k != int(k) or k < 0:
        raise ValueError(f"k must be a nonnegative integer, got {k}")
    k = int(k)
    if chi == 0.0:
        return 1.0 if k == 0 else 0.0
    if k <= 20:
        return chi ** k * math.exp(-chi) / math.factorial(k)
    return math.exp(k * math.log(chi) - chi - math.lgamma(k + 1))


def detection_probability(chi: float) -> float:
    """Probability a gated 1-bit pixel fires: P(count > 0) = 1 - exp(-chi)."""
    if chi < 0:
        raise ValueError(f"chi must be >= 0, got {chi}")
    return -math.expm1(-chi)


def expected_counts(config: SensorConfig, radiance: float) -> float:
    """Expected counts per gate for a pixel at relative scene radiance.

    The linear photon-budget model: signal photons arrive at
    radiance * impinging_rate and are detected with probability pde, dark
    counts add independently, and the gate integrates both, giving
    chi = (radiance * impinging_rate * pde + dark_count_rate) * gate_time.
    """
    if radiance < 0:
        raise ValueError(f"radiance must be >= 0, got {radiance}")
    return (radiance * config.impinging_rate * config.pde + config.dark_count_rate) * config.gate_time


def sample_binary_frame(intensity: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One Bernoulli binary frame: pixel fires iff uniform(0,1) < intensity.

    Draws are independent across pixels; identical generator state gives an
    identical frame.
    """
    intensity = np.asarray(intensity, dtype=np.float64)
    if intensity.size == 0:
        raise ValueError("intensity grid is empty")
    if not np.isfinite(intensity).all():
        raise ValueError("intensity contains non-finite values")
    if intensity.min() < 0.0 or intensity.max() > 1.0:
        raise ValueError("intensity values must lie in [0, 1]")
    return (rng.random(intensity.shape) < intensity).astype(np.uint8)


def accumulate_bits(seq: BinarySequence, b: BitLevel) -> QuantizedSequence:
    """Average consecutive groups of N_b binary frames into one b-bit frame.

    Output frame tau is the mean of input frames [tau*N_b, (tau+1)*N_b).
    Trailing frames that do not fill a group are dropped (with a warning)
    rather than zero-padded, which would bias the final frame dark.
    """
    if len(seq) == 0:
        raise ValueError("cannot accumulate an empty sequence")
    n = b.n_frames
    groups, rem = divmod(len(seq), n)
    if groups == 0:
        raise ValueError(f"sequence of {len(seq)} frames is shorter than N_b={n}")
    if rem:
        warnings.warn(f"dropping {rem} trailing frames not filling a group of {n}")
    stack = seq.frames[: groups * n].reshape(groups, n, *seq.frames.shape[1:])
    # Integer sum then one divide keeps every value an exact multiple of 1/N_b.
    frames = stack.sum(axis=1, dtype=np.int64) / n
    return QuantizedSequence(frames=frames, bit_level=b)


def inject_hot_pixels(seq: QuantizedSequence, spec: HotPixelSpec) -> QuantizedSequence:
    """Force round(density * H * W) pixel sites to the saturated value 1.0.

    In "fixed" mode the same site set (drawn from spec.seed) is used for
    every frame, mimicking persistent dark-count-dominated defects; in
    "per-frame" mode the sites are redrawn independently per frame.
    """
    t, h, w = seq.frames.shape
    count = int(round(spec.density * h * w))
    if count == 0:
        return QuantizedSequence(frames=seq.frames.copy(), bit_level=seq.bit_level)
    rng = np.random.Generator(np.random.Philox(key=spec.seed))
    out = seq.frames.copy()
    if spec.mode == "fixed":
        sites = rng.choice(h * w, size=count, replace=False)
        out.reshape(t, h * w)[:, sites] = 1.0
    else:
        flat = out.reshape(t, h * w)
        for i in range(t):
            flat[i, rng.choice(h * w, size=count, replace=False)] = 1.0
    return QuantizedSequence(frames=out, bit_level=seq.bit_level)


def detect_bit_level(frames: np.ndarray, tolerance: float = LEVEL_TOLERANCE) -> BitLevel:
    """Infer the bit depth of a sequence from its set of unique pixel values.

    Returns the smallest supported b such that every observed value matches
    some k / N_b within `tolerance`.  Saturated hot pixels (value 1.0) are
    consistent with every level, so they never disturb the answer.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.size == 0:
        raise ValueError("cannot detect bit level of an empty sequence")
    values = np.unique(frames)
    if values[0] < -tolerance or values[-1] > 1.0 + tolerance:
        raise UnsupportedBitDepthError("values outside [0, 1] fit no supported bit depth")
    for b in SUPPORTED_BITS:
        n = 2 ** b - 1
        codes = values * n
        if np.abs(codes - np.round(codes)).max() <= n * tolerance:
            return BitLevel(b)
    worst = values[np.argmax(np.abs(values * 15 - np.round(values * 15)))]
    raise UnsupportedBitDepthError(
        f"values fit no supported bit depth {SUPPORTED_BITS}; offending value {worst:.6g}"
    )
