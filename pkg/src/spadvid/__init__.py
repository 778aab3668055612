"""spadvid: single-photon (SPAD) video simulation and 3-D CNN restoration.

The toolkit simulates 1-4 bit photon-counting video acquisition (Poisson
counts, Bernoulli binary frames, bit accumulation, hot pixels) and restores
high-bit-depth video from those sparse counts with a residual 3-D
convolutional network trained from scratch on synthesized pairs.
"""

from .sensor import (
    BinarySequence,
    BitLevel,
    HotPixelSpec,
    QuantizedSequence,
    SensorConfig,
    UnsupportedBitDepthError,
    accumulate_bits,
    detect_bit_level,
    detection_probability,
    expected_counts,
    inject_hot_pixels,
    poisson_pmf,
    sample_binary_frame,
)
from .ops import (
    ConvKernel3,
    LossConfig,
    SgdConfig,
    charbonnier,
    conv3d_backward,
    conv3d_forward,
    elementwise_add,
    leaky_relu,
    leaky_relu_backward,
    sgd_step,
)

__version__ = "0.1.0"

__all__ = [
    "BinarySequence",
    "BitLevel",
    "HotPixelSpec",
    "QuantizedSequence",
    "SensorConfig",
    "UnsupportedBitDepthError",
    "accumulate_bits",
    "detect_bit_level",
    "detection_probability",
    "expected_counts",
    "inject_hot_pixels",
    "poisson_pmf",
    "sample_binary_frame",
    "ConvKernel3",
    "LossConfig",
    "SgdConfig",
    "charbonnier",
    "conv3d_backward",
    "conv3d_forward",
    "elementwise_add",
    "leaky_relu",
    "leaky_relu_backward",
    "sgd_step",
]
