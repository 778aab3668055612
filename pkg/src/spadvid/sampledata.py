"""Procedurally rendered sample clips.

The real training corpora (high-fps footage) are not redistributable, so
tests and demos use small synthetic clips generated here: smooth moving
blobs over gentle gradients, with the high temporal coherence expected of
sequences captured at very high frame rates.  Everything is a pure function
of its seed.
"""

import numpy as np

from .dataset import CleanSequence
from .rng import make_rng
from . import video_io


def moving_blobs_clip(num_frames=72, height=72, width=72, num_blobs=3, seed=0):
    """(T, H, W) float64 clip in [0, 1]: Gaussian blobs drifting over a ramp."""
    rng = make_rng(seed, stream=7)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    ramp_dir = rng.uniform(-1.0, 1.0, size=2)
    ramp = (ramp_dir[0] * yy / height + ramp_dir[1] * xx / width) * 0.2 + 0.35
    pos = rng.uniform(0.2, 0.8, size=(num_blobs, 2)) * [height, width]
    vel = rng.uniform(-0.7, 0.7, size=(num_blobs, 2))
    sigma = rng.uniform(height / 12, height / 6, size=num_blobs)
    amp = rng.uniform(0.25, 0.5, size=num_blobs)
    frames = np.empty((num_frames, height, width))
    for t in range(num_frames):
        img = ramp.copy()
        for b in range(num_blobs):
            cy, cx = pos[b] + vel[b] * t
            img += amp[b] * np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma[b] ** 2)))
        frames[t] = img
    lo, hi = frames.min(), frames.max()
    return (frames - lo) / (hi - lo) if hi > lo else np.full_like(frames, 0.5)


def write_sample_clip(directory, num_frames=72, height=72, width=72, seed=0, depth=8):
    """Render a clip and store it as a frame directory; returns the array."""
    frames = moving_blobs_clip(num_frames, height, width, seed=seed)
    # snap to the storage grid so reading the clip back is lossless
    frames = np.round(frames * (2 ** depth - 1)) / (2 ** depth - 1)
    video_io.write_frames(directory, frames, depth=depth)
    return frames


def slow_field_sequences(count, dims=(24, 24, 16), seed=0):
    """Clean sequences for the micro task: constants and slow gradients.

    dims is (height, width, depth).  Half of the sequences are constant
    fields, half are gentle spatio-temporal ramps; both are exactly
    predictable from local temporal averaging, which makes the task's
    attainable loss easy to reason about.
    """
    height, width, depth = dims
    rng = make_rng(seed, stream=13)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    out = []
    for i in range(count):
        if i % 2 == 0:
            level = rng.uniform(0.35, 0.65)
            frames = np.full((depth, height, width), level)
        else:
            gy, gx, gt = rng.uniform(-0.15, 0.15, size=3)
            base = rng.uniform(0.4, 0.6)
            spatial = base + gy * (yy / height - 0.5) + gx * (xx / width - 0.5)
            tt = np.arange(depth, dtype=np.float64)[:, None, None]
            frames = spatial[None] + gt * (tt / depth - 0.5)
        out.append(CleanSequence(frames=np.clip(frames, 0.0, 1.0), provenance={"micro": i}))
    return out
