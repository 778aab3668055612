"""Reproducible random-number streams.

Every stochastic step in the toolkit (Bernoulli frame sampling, hot-pixel
placement, crop/augment choices, weight init) draws from a counter-based
Philox generator so that a dataset or training run can be regenerated
bit-exactly from the seeds recorded in its manifest.  Streams are keyed by
(seed, stream index), which makes parallel per-sequence generation safe:
distinct keys give statistically independent streams.
"""

import numpy as np

# Recorded in manifests; readers should refuse streams they cannot reproduce.
RNG_ALGORITHM = "philox4x64"


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Generator for `stream` derived from `seed`; identical args, identical draws."""
    if seed < 0 or stream < 0:
        raise ValueError(f"seed and stream must be nonnegative, got {seed}, {stream}")
    return np.random.Generator(np.random.Philox(key=(seed & _MASK64) + ((stream & _MASK64) << 64)))


_MASK64 = (1 << 64) - 1
