"""Overlapped 3-D patch tiling for full-sequence restoration.

Long sequences do not fit through the network in one piece, so they are cut
into overlapping (T, H, W) tiles, each tile is restored independently, and
the outputs are blended back together with a separable weight profile that
ramps linearly across the overlap region and is flat in the tile interior.
Blending normalises by the accumulated weight, so any coverage pattern that
touches every voxel at least once reproduces constants (and, with an
identity network, the input itself) exactly.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .network import NetworkConfig, NetworkWeights, forward
from .sensor import QuantizedSequence, UnsupportedBitDepthError, detect_bit_level

DEFAULT_PATCH = (38, 60, 60)        # (T, H, W)
DEFAULT_OVERLAP = (8, 10, 10)


@dataclass
class TilePlan:
    seq_dims: tuple     # (T, H, W)
    patch: tuple        # effective tile extents after clamping
    overlap: tuple
    origins: list       # [(t0, h0, w0), ...], every voxel covered at least once

    def axis_weights(self, axis: int) -> np.ndarray:
        """Blend profile along one axis: linear ramp over the overlap, flat inside."""
        length = self.patch[axis]
        ov = self.overlap[axis]
        i = np.arange(length, dtype=np.float64)
        ramp_in = (i + 1.0) / (ov + 1.0)
        ramp_out = (length - i) / (ov + 1.0)
        return np.minimum(1.0, np.minimum(ramp_in, ramp_out))

    def tile_weights(self) -> np.ndarray:
        wt, wh, ww = (self.axis_weights(a) for a in range(3))
        return wt[:, None, None] * wh[None, :, None] * ww[None, None, :]


def _axis_origins(length: int, patch: int, overlap: int):
    """Origins at multiples of (patch - overlap), last snapped to the boundary."""
    if patch >= length:
        return [0], length
    stride = patch - overlap
    origins = []
    pos = 0
    while pos + patch < length:
        origins.append(pos)
        pos += stride
    last = length - patch
    if not origins or origins[-1] != last:
        origins.append(last)
    return origins, patch


def plan_tiles(seq_dims, patch_dims=DEFAULT_PATCH, overlap=DEFAULT_OVERLAP) -> TilePlan:
    """Tile origins covering seq_dims; patches clamp to short axes."""
    seq_dims = tuple(int(d) for d in seq_dims)
    patch_dims = tuple(int(d) for d in patch_dims)
    overlap = tuple(int(v) for v in overlap)
    if min(seq_dims) < 1:
        raise ValueError(f"sequence dims must be positive, got {seq_dims}")
    if min(patch_dims) < 1:
        raise ValueError(f"patch dims must be positive, got {patch_dims}")
    if any(v < 0 for v in overlap):
        raise ValueError(f"overlap must be nonnegative, got {overlap}")
    if any(o >= p for o, p in zip(overlap, patch_dims)):
        raise ValueError(f"overlap {overlap} must be smaller than patch {patch_dims}")
    per_axis = [_axis_origins(s, p, o) for s, p, o in zip(seq_dims, patch_dims, overlap)]
    eff_patch = tuple(p for _, p in per_axis)
    origins = [
        (t0, h0, w0)
        for t0 in per_axis[0][0]
        for h0 in per_axis[1][0]
        for w0 in per_axis[2][0]
    ]
    return TilePlan(seq_dims=seq_dims, patch=eff_patch, overlap=overlap, origins=origins)


def extract_tiles(frames: np.ndarray, plan: TilePlan):
    """Tile views in plan order."""
    pt, ph, pw = plan.patch
    return [
        frames[t0 : t0 + pt, h0 : h0 + ph, w0 : w0 + pw] for t0, h0, w0 in plan.origins
    ]


def merge_tiles(tiles, plan: TilePlan) -> np.ndarray:
    """Weighted blend: output voxel = sum(w_i * tile_i) / sum(w_i).

    Tiles accumulate in plan order, so the merge is deterministic.
    """
    if len(tiles) != len(plan.origins):
        raise ValueError(f"{len(tiles)} tiles for {len(plan.origins)} planned origins")
    pt, ph, pw = plan.patch
    weights = plan.tile_weights()
    num = np.zeros(plan.seq_dims, dtype=np.float64)
    den = np.zeros(plan.seq_dims, dtype=np.float64)
    for (t0, h0, w0), tile in zip(plan.origins, tiles):
        tile = np.asarray(tile, dtype=np.float64)
        if tile.shape != plan.patch:
            raise ValueError(f"tile shape {tile.shape} does not match plan patch {plan.patch}")
        sl = (slice(t0, t0 + pt), slice(h0, h0 + ph), slice(w0, w0 + pw))
        num[sl] += weights * tile
        den[sl] += weights
    if (den == 0.0).any():
        raise RuntimeError("tile plan left voxels uncovered; this is a planner bug")
    return num / den


def restore(
    seq,
    weights: NetworkWeights,
    cfg: NetworkConfig,
    patch_dims=DEFAULT_PATCH,
    overlap=DEFAULT_OVERLAP,
    trained_bits: "int | None" = None,
) -> np.ndarray:
    """Restore a full sequence: tile, run the network, blend, clamp to [0, 1].

    Only the final block's estimate is used at inference; the intermediate
    estimates exist for the training loss.  Output dimensions and frame rate
    equal the input's.  If trained_bits is given, the sequence's detected
    bit level is compared against it and a mismatch warns (the model will
    still run, just outside its training regime).
    """
    frames = seq.frames if isinstance(seq, QuantizedSequence) else np.asarray(seq, dtype=np.float64)
    if frames.ndim != 3:
        raise ValueError(f"expected (T, H, W) frames, got shape {frames.shape}")
    if trained_bits is not None:
        try:
            detected = detect_bit_level(frames).b
            if detected != trained_bits:
                warnings.warn(
                    f"sequence looks like {detected}-bit data but the model was "
                    f"trained on {trained_bits}-bit sequences"
                )
        except UnsupportedBitDepthError:
            warnings.warn(
                f"could not detect a supported bit level; the model was trained "
                f"on {trained_bits}-bit sequences"
            )
    plan = plan_tiles(frames.shape, patch_dims, overlap)
    outputs = []
    for tile in extract_tiles(frames, plan):
        x = tile[None, None]
        estimates = forward(weights, cfg, x)
        outputs.append(estimates[-1][0, 0])
    merged = merge_tiles(outputs, plan)
    return np.clip(merged, 0.0, 1.0)
