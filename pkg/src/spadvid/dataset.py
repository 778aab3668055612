"""Clean/degraded training pairs.

Pipeline: source frame directories are box-downsampled, randomly cropped
into fixed-size clean sequences (values in [0, 1], treated as noise-free
high-bit-depth ground truth), and degraded by averaging N_b Bernoulli
binary instances per frame plus hot-pixel injection.  Patches are cropped
and augmented jointly from input and target during training.

Every random choice (source pick, crop window, Bernoulli draws, hot-pixel
sites) is either recorded in, or reproducible from, the dataset manifest,
so a dataset regenerates byte-identically from its manifest alone.
"""

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import zoom as _ndzoom

from . import video_io
from .rng import RNG_ALGORITHM, make_rng
from .sensor import (
    BitLevel,
    HotPixelSpec,
    QuantizedSequence,
    inject_hot_pixels,
    sample_binary_frame,
)

MANIFEST_SCHEMA_VERSION = 1

RESIZE_FACTORS = (0.8, 0.9, 1.0, 1.1, 1.25)


class ManifestError(ValueError):
    pass


class ManifestVersionError(ManifestError):
    pass


@dataclass
class CleanSequence:
    """Noise-free reference sequence, (T, H, W) float64 in [0, 1]."""

    frames: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3:
            raise ValueError(f"frames must be (T, H, W), got shape {self.frames.shape}")
        if self.frames.min(initial=0.0) < 0.0 or self.frames.max(initial=0.0) > 1.0:
            raise ValueError("clean values must lie in [0, 1]")


@dataclass
class TrainingPair:
    input: QuantizedSequence
    target: CleanSequence
    bit_level: BitLevel

    def __post_init__(self):
        if self.input.frames.shape != self.target.frames.shape:
            raise ValueError(
                f"input {self.input.frames.shape} and target {self.target.frames.shape} "
                "must have identical dimensions"
            )


@dataclass(frozen=True)
class PatchSpec:
    height: int = 60
    width: int = 60
    depth: int = 38     # frames

    def __post_init__(self):
        if min(self.height, self.width, self.depth) < 1:
            raise ValueError(f"patch extents must be >= 1, got {self}")


@dataclass
class SequenceRecord:
    """Everything needed to regenerate one sequence bit-exactly."""

    index: int
    source: str
    crop: tuple     # (t0, y0, x0) in downsampled coordinates
    bernoulli_seed: int
    hot_seed: int


@dataclass
class DatasetManifest:
    base_seed: int
    sources: list
    downsample_factor: int
    sequence_dims: tuple        # (height, width, depth)
    bit_depth: "int | None" = None
    hot_density: float = 0.0
    hot_mode: str = "fixed"
    split: "dict | None" = None     # {"train": n, "test": m}
    records: list = field(default_factory=list)
    rng_algorithm: str = RNG_ALGORITHM
    schema_version: int = MANIFEST_SCHEMA_VERSION

    def to_dict(self):
        return {
            "schema_version": self.schema_version,
            "rng_algorithm": self.rng_algorithm,
            "base_seed": self.base_seed,
            "sources": list(self.sources),
            "downsample_factor": self.downsample_factor,
            "sequence_dims": list(self.sequence_dims),
            "bit_depth": self.bit_depth,
            "hot_density": self.hot_density,
            "hot_mode": self.hot_mode,
            "split": self.split,
            "sequences": [
                {
                    "index": r.index,
                    "source": r.source,
                    "crop": list(r.crop),
                    "bernoulli_seed": r.bernoulli_seed,
                    "hot_seed": r.hot_seed,
                }
                for r in self.records
            ],
        }

    @classmethod
    def from_dict(cls, d):
        version = d.get("schema_version")
        if version != MANIFEST_SCHEMA_VERSION:
            raise ManifestVersionError(
                f"manifest schema version {version!r} is not supported "
                f"(expected {MANIFEST_SCHEMA_VERSION})"
            )
        try:
            records = [
                SequenceRecord(
                    index=r["index"],
                    source=r["source"],
                    crop=tuple(r["crop"]),
                    bernoulli_seed=r["bernoulli_seed"],
                    hot_seed=r["hot_seed"],
                )
                for r in d["sequences"]
            ]
            return cls(
                base_seed=d["base_seed"],
                sources=list(d["sources"]),
                downsample_factor=d["downsample_factor"],
                sequence_dims=tuple(d["sequence_dims"]),
                bit_depth=d["bit_depth"],
                hot_density=d["hot_density"],
                hot_mode=d["hot_mode"],
                split=d["split"],
                records=records,
                rng_algorithm=d["rng_algorithm"],
            )
        except KeyError as exc:
            raise ManifestError(f"manifest is missing required field {exc}") from exc


def write_manifest(path, manifest: DatasetManifest):
    with open(path, "w") as fh:
        json.dump(manifest.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path) -> DatasetManifest:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ManifestError(
                f"{path}: malformed manifest at line {exc.lineno}, column {exc.colno}: {exc.msg}"
            ) from exc
    return DatasetManifest.from_dict(data)


def box_downsample(frames, factor: int):
    """Non-overlapping factor x factor spatial box average (trailing rows cropped).

    Box averaging integrates radiance the way a larger pixel would, so it
    preserves constant fields exactly and keeps values in [0, 1].
    """
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    if factor == 1:
        return np.asarray(frames, dtype=np.float64)
    frames = np.asarray(frames, dtype=np.float64)
    t, h, w = frames.shape
    hd, wd = h // factor, w // factor
    if hd < 1 or wd < 1:
        raise ValueError(f"frames of {h}x{w} are smaller than one {factor}x{factor} box")
    cropped = frames[:, : hd * factor, : wd * factor]
    return cropped.reshape(t, hd, factor, wd, factor).mean(axis=(2, 4))


def _load_source(source, factor, dims):
    """Downsampled volume for one source directory, or None if unusable."""
    height, width, depth = dims
    try:
        frames, _ = video_io.read_frames(source)
    except video_io.FormatError as exc:
        warnings.warn(f"skipping source {source}: {exc}")
        return None
    vol = box_downsample(frames, factor)
    t, h, w = vol.shape
    if t < depth or h < height or w < width:
        warnings.warn(
            f"skipping source {source}: downsampled extent {t}x{h}x{w} "
            f"is smaller than requested {depth}x{height}x{width}"
        )
        return None
    return vol


def build_clean_sequences(sources, factor: int, count: int, dims=(100, 100, 64), seed: int = 0):
    """Random clean crops from downsampled sources, plus the manifest to redo it.

    dims is (height, width, depth).  Sources too small or unreadable are
    skipped with a warning; having no usable source is an error.
    """
    height, width, depth = dims
    volumes = {}
    for source in sources:
        vol = _load_source(str(source), factor, dims)
        if vol is not None:
            volumes[str(source)] = vol
    if not volumes:
        raise ValueError("no usable sources: all were missing, unreadable, or too small")
    usable = sorted(volumes)
    rng = make_rng(seed, stream=0)
    sequences = []
    records = []
    for index in range(count):
        source = usable[int(rng.integers(len(usable)))]
        vol = volumes[source]
        t0 = int(rng.integers(vol.shape[0] - depth + 1))
        y0 = int(rng.integers(vol.shape[1] - height + 1))
        x0 = int(rng.integers(vol.shape[2] - width + 1))
        bern_seed = int(rng.integers(2 ** 62))
        hot_seed = int(rng.integers(2 ** 62))
        frames = vol[t0 : t0 + depth, y0 : y0 + height, x0 : x0 + width].copy()
        sequences.append(
            CleanSequence(frames=frames, provenance={"source": source, "crop": (t0, y0, x0)})
        )
        records.append(
            SequenceRecord(
                index=index,
                source=source,
                crop=(t0, y0, x0),
                bernoulli_seed=bern_seed,
                hot_seed=hot_seed,
            )
        )
    manifest = DatasetManifest(
        base_seed=seed,
        sources=[str(s) for s in sources],
        downsample_factor=factor,
        sequence_dims=tuple(dims),
        records=records,
    )
    return sequences, manifest


def synthesize_pair(clean: CleanSequence, b: BitLevel, hot: HotPixelSpec, rng) -> TrainingPair:
    """Degrade a clean sequence: average N_b Bernoulli binary instances per
    frame, then inject hot pixels.  The target is the clean sequence itself."""
    n = b.n_frames
    acc = np.zeros_like(clean.frames, dtype=np.int64)
    for i, frame in enumerate(clean.frames):
        for _ in range(n):
            acc[i] += sample_binary_frame(frame, rng)
    quant = QuantizedSequence(frames=acc / n, bit_level=b)
    quant = inject_hot_pixels(quant, hot)
    return TrainingPair(input=quant, target=clean, bit_level=b)


def sample_patch(pair: TrainingPair, spec: PatchSpec, rng) -> TrainingPair:
    """Cut the same random spatio-temporal window from input and target."""
    t, h, w = pair.input.frames.shape
    if spec.depth > t or spec.height > h or spec.width > w:
        raise ValueError(f"patch {spec} exceeds pair dimensions {(t, h, w)}")
    t0 = int(rng.integers(t - spec.depth + 1))
    y0 = int(rng.integers(h - spec.height + 1))
    x0 = int(rng.integers(w - spec.width + 1))
    sl = (
        slice(t0, t0 + spec.depth),
        slice(y0, y0 + spec.height),
        slice(x0, x0 + spec.width),
    )
    return TrainingPair(
        input=QuantizedSequence(frames=pair.input.frames[sl].copy(), bit_level=pair.bit_level),
        target=CleanSequence(
            frames=pair.target.frames[sl].copy(),
            provenance={**pair.target.provenance, "patch": (t0, y0, x0)},
        ),
        bit_level=pair.bit_level,
    )


def _rescale_spatial(frames, factor):
    """Bilinear spatial rescale then center-crop or zero-pad back to size."""
    t, h, w = frames.shape
    scaled = _ndzoom(frames, (1.0, factor, factor), order=1)
    out = np.zeros_like(frames)
    hs, ws = scaled.shape[1:]
    if hs >= h:
        y0, x0 = (hs - h) // 2, (ws - w) // 2
        out[:] = scaled[:, y0 : y0 + h, x0 : x0 + w]
    else:
        y0, x0 = (h - hs) // 2, (w - ws) // 2
        out[:, y0 : y0 + hs, x0 : x0 + ws] = scaled
    return out


def augment(pair: TrainingPair, rng) -> TrainingPair:
    """Random rescale / flips / 90-degree rotations, identical on input and target.

    Draw order is fixed: resize factor, horizontal flip, vertical flip,
    rotation count.  Rescaled inputs are re-quantized to the nearest k/N_b
    so the quantized-value invariant survives interpolation.  Non-square
    patches only rotate by multiples of 180 degrees.
    """
    x = pair.input.frames
    y = pair.target.frames
    n = pair.bit_level.n_frames

    factor = RESIZE_FACTORS[int(rng.integers(len(RESIZE_FACTORS)))]
    hflip = bool(rng.integers(2))
    vflip = bool(rng.integers(2))
    if x.shape[1] == x.shape[2]:
        k_rot = int(rng.integers(4))
    else:
        k_rot = 2 * int(rng.integers(2))

    if factor != 1.0:
        x = _rescale_spatial(x, factor)
        x = np.clip(np.round(x * n) / n, 0.0, 1.0)
        y = np.clip(_rescale_spatial(y, factor), 0.0, 1.0)
    else:
        x = x.copy()
        y = y.copy()
    if hflip:
        x = x[:, :, ::-1]
        y = y[:, :, ::-1]
    if vflip:
        x = x[:, ::-1, :]
        y = y[:, ::-1, :]
    if k_rot:
        x = np.rot90(x, k_rot, axes=(1, 2))
        y = np.rot90(y, k_rot, axes=(1, 2))
    return TrainingPair(
        input=QuantizedSequence(frames=np.ascontiguousarray(x), bit_level=pair.bit_level),
        target=CleanSequence(
            frames=np.ascontiguousarray(y), provenance=dict(pair.target.provenance)
        ),
        bit_level=pair.bit_level,
    )


def synthesize_from_manifest(cleans, manifest: DatasetManifest):
    """Degrade clean sequences using the seeds recorded in the manifest."""
    if manifest.bit_depth is None:
        raise ManifestError("manifest has no bit_depth; it describes only clean sequences")
    b = BitLevel(manifest.bit_depth)
    pairs = []
    for clean, record in zip(cleans, manifest.records):
        hot = HotPixelSpec(
            density=manifest.hot_density, seed=record.hot_seed, mode=manifest.hot_mode
        )
        pairs.append(synthesize_pair(clean, b, hot, make_rng(record.bernoulli_seed)))
    return pairs


def build_training_set(
    sources,
    factor: int,
    count: int,
    bit_depth: int,
    dims=(100, 100, 64),
    hot_density: float = 0.002,
    hot_mode: str = "fixed",
    seed: int = 0,
    split=(None, None),
):
    """End-to-end dataset build: clean crops, degradation, manifest.

    split is (train_count, test_count); (None, None) puts everything in train.
    Returns (pairs, manifest).
    """
    cleans, manifest = build_clean_sequences(sources, factor, count, dims, seed)
    manifest.bit_depth = bit_depth
    manifest.hot_density = hot_density
    manifest.hot_mode = hot_mode
    train_n, test_n = split
    if train_n is not None:
        if test_n is None:
            test_n = count - train_n
        if train_n + test_n != count:
            raise ValueError(f"split {train_n}+{test_n} does not cover {count} sequences")
        manifest.split = {"train": train_n, "test": test_n}
    pairs = synthesize_from_manifest(cleans, manifest)
    return pairs, manifest


def rebuild_from_manifest(manifest: DatasetManifest):
    """Regenerate the full dataset byte-identically from its manifest."""
    volumes = {}
    cleans = []
    height, width, depth = manifest.sequence_dims
    for record in manifest.records:
        if record.source not in volumes:
            vol = _load_source(record.source, manifest.downsample_factor, manifest.sequence_dims)
            if vol is None:
                raise ManifestError(f"manifest source {record.source} is no longer usable")
            volumes[record.source] = vol
        t0, y0, x0 = record.crop
        frames = volumes[record.source][
            t0 : t0 + depth, y0 : y0 + height, x0 : x0 + width
        ].copy()
        cleans.append(
            CleanSequence(
                frames=frames, provenance={"source": record.source, "crop": record.crop}
            )
        )
    if manifest.bit_depth is None:
        return cleans
    return synthesize_from_manifest(cleans, manifest)


def split_pairs(pairs, manifest: DatasetManifest):
    """(train, test) partition in manifest order; everything is train if unsplit."""
    if manifest.split is None:
        return list(pairs), []
    n_train = manifest.split["train"]
    return list(pairs[:n_train]), list(pairs[n_train:])
