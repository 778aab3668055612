"""Residual 3-D ConvNet for sparse-photon video restoration.

The model is K cascaded residual blocks.  Each block runs its input through
an input conv (1 -> channels), a stack of intermediate convs
(channels -> channels), and an output conv (channels -> 1); every conv but
the output one is followed by a Leaky ReLU, and the block's input is added
to the output-conv result to form that block's estimate of the clean patch.
Block k consumes the previous block's estimate ("cascade", the default);
a "shared" variant in which every block sees the raw patch is provided for
comparison.  Training minimises the sum over blocks of the mean Charbonnier
penalty between each estimate and the clean target, with plain SGD and no
normalisation layers.

Weights are stored as float32 (the checkpoint precision); all forward and
gradient arithmetic runs in float64.
"""

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from . import dataset as _dataset
from .ops import (
    ConvKernel3,
    LossConfig,
    SgdConfig,
    charbonnier,
    check_tensor5,
    conv3d_backward,
    conv3d_forward,
    leaky_relu,
    leaky_relu_backward,
    sgd_step,
)
from .rng import make_rng

BLOCK_INPUT_MODES = ("cascade", "shared")


class CheckpointError(ValueError):
    """Base class for checkpoint file problems."""


class CheckpointMagicError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointConfigError(CheckpointError):
    """Checkpoint was trained with a different architecture than requested."""


@dataclass(frozen=True)
class NetworkConfig:
    num_blocks: int = 3
    channels: int = 60
    kernel: tuple = (3, 3, 3)
    leaky_slope: float = 0.1
    convs_per_block: int = 5    # input conv + intermediates + output conv
    block_input: str = "cascade"

    def __post_init__(self):
        if self.num_blocks < 1:
            raise ValueError(f"num_blocks must be >= 1, got {self.num_blocks}")
        if self.channels < 1:
            raise ValueError(f"channels must be >= 1, got {self.channels}")
        if len(self.kernel) != 3 or any(k < 1 or k % 2 == 0 for k in self.kernel):
            raise ValueError(f"kernel must be three odd extents, got {self.kernel}")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ValueError(f"leaky_slope must be in (0, 1), got {self.leaky_slope}")
        if self.convs_per_block < 2:
            raise ValueError(f"convs_per_block must be >= 2, got {self.convs_per_block}")
        if self.block_input not in BLOCK_INPUT_MODES:
            raise ValueError(f"block_input must be one of {BLOCK_INPUT_MODES}")

    def layer_shapes(self):
        """Per-block list of (C_out, C_in, kt, kh, kw) conv shapes."""
        kt, kh, kw = self.kernel
        c = self.channels
        mids = self.convs_per_block - 2
        return [(c, 1, kt, kh, kw)] + [(c, c, kt, kh, kw)] * mids + [(1, c, kt, kh, kw)]


@dataclass
class NetworkWeights:
    """Parameters: blocks[k][layer] is a ConvKernel3 (float32 storage)."""

    blocks: list

    def flat(self):
        """Weight and bias arrays in serialisation order."""
        out = []
        for block in self.blocks:
            for kernel in block:
                out.append(kernel.weights)
                out.append(kernel.bias)
        return out

    def replace_flat(self, arrays):
        """New NetworkWeights with the same structure and the given arrays."""
        arrays = list(arrays)
        if len(arrays) != 2 * sum(len(b) for b in self.blocks):
            raise ValueError("wrong number of arrays for this architecture")
        it = iter(arrays)
        blocks = [
            [ConvKernel3(weights=next(it), bias=next(it)) for _ in block]
            for block in self.blocks
        ]
        return NetworkWeights(blocks=blocks)

    def num_parameters(self):
        return int(sum(a.size for a in self.flat()))


def init_weights(cfg: NetworkConfig, seed: int) -> NetworkWeights:
    """Fan-in Gaussian kernels (variance 2 / (C_in * kt * kh * kw)), zero biases."""
    rng = make_rng(seed)
    blocks = []
    for _ in range(cfg.num_blocks):
        block = []
        for c_out, c_in, kt, kh, kw in cfg.layer_shapes():
            std = np.sqrt(2.0 / (c_in * kt * kh * kw))
            w = rng.normal(0.0, std, size=(c_out, c_in, kt, kh, kw)).astype(np.float32)
            block.append(ConvKernel3(weights=w, bias=np.zeros(c_out, dtype=np.float32)))
        blocks.append(block)
    return NetworkWeights(blocks=blocks)


def zero_weights(cfg: NetworkConfig) -> NetworkWeights:
    blocks = [
        [
            ConvKernel3(
                weights=np.zeros(shape, dtype=np.float32),
                bias=np.zeros(shape[0], dtype=np.float32),
            )
            for shape in cfg.layer_shapes()
        ]
        for _ in range(cfg.num_blocks)
    ]
    return NetworkWeights(blocks=blocks)


def _block_forward(block, x, slope, cache):
    """One residual block; returns the estimate and records layer inputs/masks."""
    a = x
    layer_inputs = []
    masks = []
    h = a
    for kernel in block[:-1]:
        layer_inputs.append(h)
        z = conv3d_forward(h, kernel, "same")
        masks.append(z >= 0.0)
        h = leaky_relu(z, slope)
    layer_inputs.append(h)
    r = conv3d_forward(h, block[-1], "same")
    est = a + r
    if cache is not None:
        cache.append((layer_inputs, masks))
    return est


def _block_backward(block, slope, layer_inputs, masks, grad_est):
    """Gradients of one block given d(loss)/d(estimate).

    Returns (grad_into_block_input, [(gw, gb) per layer]).
    """
    grads = [None] * len(block)
    g = grad_est
    gx, gw, gb = conv3d_backward(layer_inputs[-1], block[-1], g, "same")
    grads[-1] = (gw, gb)
    g = gx
    for idx in range(len(block) - 2, -1, -1):
        g = np.where(masks[idx], g, slope * g)
        gx, gw, gb = conv3d_backward(layer_inputs[idx], block[idx], g, "same")
        grads[idx] = (gw, gb)
        g = gx
    # skip connection: the block input feeds the estimate directly
    return g + grad_est, grads


def forward(weights: NetworkWeights, cfg: NetworkConfig, x, cache=None):
    """All K per-block estimates of the clean patch for a single-channel input.

    With every weight and bias zero, each estimate equals the input exactly:
    the convolution branch contributes nothing and only the skip path remains.
    """
    x = check_tensor5(x, "input")
    if x.shape[1] != 1:
        raise ValueError(f"network input must be single-channel, got {x.shape[1]}")
    if len(weights.blocks) != cfg.num_blocks:
        raise ValueError(
            f"weights have {len(weights.blocks)} blocks but config asks for {cfg.num_blocks}"
        )
    estimates = []
    block_in = x
    for block in weights.blocks:
        est = _block_forward(block, block_in, cfg.leaky_slope, cache)
        estimates.append(est)
        if cfg.block_input == "cascade":
            block_in = est
    return estimates


def backward(weights: NetworkWeights, cfg: NetworkConfig, cache, grad_estimates):
    """Flat gradient list (aligned with weights.flat()) for given per-estimate grads."""
    per_block = [None] * cfg.num_blocks
    if cfg.block_input == "cascade":
        g_carry = None
        for k in range(cfg.num_blocks - 1, -1, -1):
            g = grad_estimates[k] if g_carry is None else grad_estimates[k] + g_carry
            layer_inputs, masks = cache[k]
            g_carry, per_block[k] = _block_backward(
                weights.blocks[k], cfg.leaky_slope, layer_inputs, masks, g
            )
    else:
        for k in range(cfg.num_blocks):
            layer_inputs, masks = cache[k]
            _, per_block[k] = _block_backward(
                weights.blocks[k], cfg.leaky_slope, layer_inputs, masks, grad_estimates[k]
            )
    flat = []
    for grads in per_block:
        for gw, gb in grads:
            flat.append(gw)
            flat.append(gb)
    return flat


def multi_block_loss(estimates, target, cfg: LossConfig = LossConfig()):
    """Sum over blocks of the mean Charbonnier penalty against the target."""
    return multi_block_loss_and_grads(estimates, target, cfg)[0]


def multi_block_loss_and_grads(estimates, target, cfg: LossConfig = LossConfig()):
    target = np.asarray(target, dtype=np.float64)
    loss = 0.0
    grads = []
    for est in estimates:
        l, g = charbonnier(est, target, cfg)
        loss += l
        grads.append(g)
    return loss, grads


@dataclass(frozen=True)
class TrainConfig:
    steps: int
    batch_size: int = 8
    sgd: SgdConfig = field(default_factory=lambda: SgdConfig(learning_rate=0.01, momentum=0.9))
    loss: LossConfig = field(default_factory=LossConfig)
    seed: int = 0
    patch: "_dataset.PatchSpec | None" = None   # None: use full pair extents
    augment: bool = True
    checkpoint_every: int = 0                   # 0 disables periodic checkpoints
    checkpoint_dir: "str | None" = None
    start_step: int = 0                         # nonzero when resuming

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")


def assemble_batch(pairs, patch, batch_size, rng, augment=True):
    """Stack batch_size random (augmented) patches into (N, 1, T, H, W) tensors.

    Draw order per sample is fixed (pair index, patch window, augmentation),
    so batch content is deterministic for a given generator state.
    """
    xs, ys = [], []
    for _ in range(batch_size):
        pair = pairs[int(rng.integers(len(pairs)))]
        if patch is not None:
            pair = _dataset.sample_patch(pair, patch, rng)
        if augment:
            pair = _dataset.augment(pair, rng)
        xs.append(pair.input.frames[None])
        ys.append(pair.target.frames[None])
    return np.stack(xs), np.stack(ys)


def train(pairs, net_cfg: NetworkConfig, train_cfg: TrainConfig, weights=None, momentum_state=None):
    """SGD training loop over random augmented patches.

    Returns (weights, loss_history).  Fully deterministic for a given seed:
    step s always draws its batch from the stream (seed, s), so resumed runs
    see the same batches as uninterrupted ones.
    """
    if not pairs:
        raise ValueError("training requires a nonempty dataset")
    if weights is None:
        weights = init_weights(net_cfg, train_cfg.seed)
    params = weights.flat()
    state = momentum_state
    history = []
    for step in range(train_cfg.start_step, train_cfg.start_step + train_cfg.steps):
        rng = make_rng(train_cfg.seed, stream=1 + step)
        x, y = assemble_batch(pairs, train_cfg.patch, train_cfg.batch_size, rng, train_cfg.augment)
        cache = []
        estimates = forward(weights, net_cfg, x, cache)
        loss, grad_ests = multi_block_loss_and_grads(estimates, y, train_cfg.loss)
        if not np.isfinite(loss):
            raise RuntimeError(
                f"non-finite loss {loss} at step {step} "
                f"(learning_rate={train_cfg.sgd.learning_rate})"
            )
        history.append(loss)
        grads = backward(weights, net_cfg, cache, grad_ests)
        params, state = sgd_step(params, grads, train_cfg.sgd, state)
        weights = weights.replace_flat(params)
        if (
            train_cfg.checkpoint_every
            and train_cfg.checkpoint_dir
            and (step + 1) % train_cfg.checkpoint_every == 0
        ):
            path = f"{train_cfg.checkpoint_dir}/step_{step + 1:08d}.ckpt"
            save_checkpoint(path, weights, net_cfg, step + 1)
    return weights, history


# Checkpoint file layout (little-endian throughout):
#   8s  magic "SPADVNET"
#   I   format version (1)
#   I   num_blocks
#   I   channels
#   3I  kernel extents (kt, kh, kw)
#   I   convs_per_block
#   d   leaky_slope
#   B   block_input (0 cascade, 1 shared)
#   B   trained bit depth (0 if unspecified)
#   H   reserved (0)
#   Q   training step
# then every block's layers in order, each as weights then bias, raw
# float32 little-endian in C order.
CHECKPOINT_MAGIC = b"SPADVNET"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<8sIIIIIIIdBBHQ")


@dataclass
class Checkpoint:
    weights: NetworkWeights
    config: NetworkConfig
    step: int
    trained_bits: int = 0


def save_checkpoint(path, weights: NetworkWeights, cfg: NetworkConfig, step: int, trained_bits: int = 0):
    buf = io.BytesIO()
    kt, kh, kw = cfg.kernel
    buf.write(
        _HEADER.pack(
            CHECKPOINT_MAGIC,
            CHECKPOINT_VERSION,
            cfg.num_blocks,
            cfg.channels,
            kt,
            kh,
            kw,
            cfg.convs_per_block,
            cfg.leaky_slope,
            BLOCK_INPUT_MODES.index(cfg.block_input),
            trained_bits,
            0,
            step,
        )
    )
    for arr in weights.flat():
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path, expect_config: "NetworkConfig | None" = None) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise CheckpointTruncatedError(f"file is {len(data)} bytes, header needs {_HEADER.size}")
    (
        magic,
        version,
        num_blocks,
        channels,
        kt,
        kh,
        kw,
        convs_per_block,
        leaky_slope,
        block_input_code,
        trained_bits,
        _reserved,
        step,
    ) = _HEADER.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointMagicError(f"bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version}")
    if block_input_code >= len(BLOCK_INPUT_MODES):
        raise CheckpointError(f"unknown block_input code {block_input_code}")
    cfg = NetworkConfig(
        num_blocks=num_blocks,
        channels=channels,
        kernel=(kt, kh, kw),
        leaky_slope=leaky_slope,
        convs_per_block=convs_per_block,
        block_input=BLOCK_INPUT_MODES[block_input_code],
    )
    if expect_config is not None and _arch_fields(cfg) != _arch_fields(expect_config):
        raise CheckpointConfigError(
            f"checkpoint architecture {_arch_fields(cfg)} does not match "
            f"requested {_arch_fields(expect_config)}"
        )
    offset = _HEADER.size
    blocks = []
    for _ in range(cfg.num_blocks):
        block = []
        for shape in cfg.layer_shapes():
            n_w = int(np.prod(shape))
            w, offset = _take_f32(data, offset, n_w, path)
            b, offset = _take_f32(data, offset, shape[0], path)
            block.append(ConvKernel3(weights=w.reshape(shape), bias=b))
        blocks.append(block)
    if offset != len(data):
        raise CheckpointError(f"{len(data) - offset} unexpected trailing bytes")
    return Checkpoint(
        weights=NetworkWeights(blocks=blocks), config=cfg, step=step, trained_bits=trained_bits
    )


def _arch_fields(cfg: NetworkConfig):
    return (cfg.num_blocks, cfg.channels, tuple(cfg.kernel), cfg.convs_per_block, cfg.block_input)


def _take_f32(data, offset, count, path):
    end = offset + 4 * count
    if end > len(data):
        raise CheckpointTruncatedError(f"{path}: ran out of data reading {count} float32 values")
    arr = np.frombuffer(data[offset:end], dtype="<f4").astype(np.float32)
    return arr, end
