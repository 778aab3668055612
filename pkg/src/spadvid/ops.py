"""Dense 5-axis tensor math: 3-D convolution with exact gradients, Leaky
ReLU, the Charbonnier penalty, and plain SGD.

Tensors are numpy arrays of shape (batch, channels, time, height, width),
C-contiguous conventions throughout.  Convolution is cross-correlation (no
kernel flip), the usual deep-learning convention; the test suite pins the
semantics against an independent naive-loop oracle at 1e-10 relative.

Performance notes: this machine class is a single CPU core, so the
convolution is organised as a chunked im2col whose matmuls all have a large
inner dimension (C*kt*kh*kw or the voxel count), where BLAS is an order of
magnitude faster than the skinny per-tap alternative.  Inner sums accumulate
in float64 regardless of input dtype.  Chunks are processed in a fixed order,
so results are bitwise reproducible within one process configuration.
"""

from dataclasses import dataclass

import numpy as np

# Upper bound on the im2col scratch buffer; keeps peak memory well under
# control for the full-architecture 60-channel layers.
_COL_BUDGET_BYTES = 256 * 1024 * 1024


def check_tensor5(x, name: str = "tensor") -> np.ndarray:
    """Validate and return a float64 (N, C, T, H, W) tensor."""
    x = np.asarray(x)
    if x.ndim != 5:
        raise ValueError(f"{name} must have 5 axes (N, C, T, H, W), got shape {x.shape}")
    if min(x.shape) < 1:
        raise ValueError(f"{name} has an empty axis: shape {x.shape}")
    x = x.astype(np.float64, copy=False)
    if not np.isfinite(x).all():
        raise ValueError(f"{name} contains NaN or Inf")
    return x


@dataclass
class ConvKernel3:
    """3-D convolution parameters: weights (C_out, C_in, kt, kh, kw), bias (C_out,)."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights)
        self.bias = np.asarray(self.bias)
        if self.weights.ndim != 5:
            raise ValueError(f"weights must be 5-D, got shape {self.weights.shape}")
        kt, kh, kw = self.weights.shape[2:]
        if kt % 2 == 0 or kh % 2 == 0 or kw % 2 == 0:
            raise ValueError(f"kernel extents must be odd, got {(kt, kh, kw)}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ValueError(
                f"bias shape {self.bias.shape} does not match {self.weights.shape[0]} output channels"
            )
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise ValueError("kernel parameters contain NaN or Inf")

    @property
    def shape(self):
        return self.weights.shape


@dataclass(frozen=True)
class LossConfig:
    """Charbonnier penalty rho(x) = sqrt(x**2 + eta**2)."""

    eta: float = 1e-3

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float
    momentum: float = 0.0
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")


def _out_dims(in_dims, k_dims, padding):
    if padding == "same":
        return tuple(in_dims)
    if padding == "valid":
        out = tuple(i - k + 1 for i, k in zip(in_dims, k_dims))
        if min(out) < 1:
            raise ValueError(f"valid convolution of {in_dims} with kernel {k_dims} is empty")
        return out
    raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")


def _pad_input(x, k_dims, padding):
    if padding == "valid":
        return x
    pt, ph, pw = ((k - 1) // 2 for k in k_dims)
    return np.pad(x, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))


def _iter_col_chunks(xp_n, k_dims, out_dims):
    """Yield (t0, t1, cols) im2col slabs of the padded single-sample input.

    cols has shape (C*kt*kh*kw, (t1-t0)*Ho*Wo) with rows ordered to match
    kernel.weights.reshape(C_out, -1); columns run over (t, h, w) in C order.
    """
    c = xp_n.shape[0]
    kt, kh, kw = k_dims
    to, ho, wo = out_dims
    per_frame = c * kt * kh * kw * ho * wo * 8
    chunk = max(1, min(to, _COL_BUDGET_BYTES // max(per_frame, 1)))
    for t0 in range(0, to, chunk):
        t1 = min(t0 + chunk, to)
        buf = np.empty((c, kt, kh, kw, t1 - t0, ho, wo), dtype=np.float64)
        for dt in range(kt):
            for dh in range(kh):
                for dw in range(kw):
                    buf[:, dt, dh, dw] = xp_n[:, t0 + dt : t1 + dt, dh : dh + ho, dw : dw + wo]
        yield t0, t1, buf.reshape(c * kt * kh * kw, (t1 - t0) * ho * wo)


def conv3d_forward(x, kernel: ConvKernel3, padding: str = "same") -> np.ndarray:
    """Cross-correlate x with the kernel taps and add the per-channel bias.

    `same` zero-pads by (k-1)//2 per spatial-temporal axis, preserving
    (T, H, W); `valid` shrinks each axis by k-1.
    """
    x = check_tensor5(x, "input")
    n, c, t, h, w = x.shape
    c_out, c_in, kt, kh, kw = kernel.shape
    if c != c_in:
        raise ValueError(f"input has {c} channels but kernel expects {c_in}")
    out_dims = _out_dims((t, h, w), (kt, kh, kw), padding)
    xp = _pad_input(x, (kt, kh, kw), padding)
    w2 = kernel.weights.reshape(c_out, -1).astype(np.float64, copy=False)
    out = np.empty((n, c_out) + out_dims, dtype=np.float64)
    to, ho, wo = out_dims
    for i in range(n):
        flat = out[i].reshape(c_out, to * ho * wo)
        for t0, t1, cols in _iter_col_chunks(xp[i], (kt, kh, kw), out_dims):
            flat[:, t0 * ho * wo : t1 * ho * wo] = w2 @ cols
    out += kernel.bias.astype(np.float64, copy=False).reshape(1, c_out, 1, 1, 1)
    return out


def conv3d_backward(x, kernel: ConvKernel3, grad_output, padding: str = "same"):
    """Exact gradients of conv3d_forward: (grad_input, grad_weights, grad_bias).

    grad_input is itself a convolution of grad_output with the
    transposed, tap-reversed kernel, so it reuses the fast forward path.
    """
    x = check_tensor5(x, "input")
    grad_output = check_tensor5(grad_output, "grad_output")
    n, c, t, h, w = x.shape
    c_out, c_in, kt, kh, kw = kernel.shape
    if c != c_in:
        raise ValueError(f"input has {c} channels but kernel expects {c_in}")
    out_dims = _out_dims((t, h, w), (kt, kh, kw), padding)
    if grad_output.shape != (n, c_out) + out_dims:
        raise ValueError(
            f"grad_output shape {grad_output.shape} does not match forward output "
            f"{(n, c_out) + out_dims} for padding={padding!r}"
        )
    to, ho, wo = out_dims

    grad_bias = grad_output.sum(axis=(0, 2, 3, 4))

    # d/dW: accumulate go_chunk @ cols_chunk^T over the same im2col slabs
    # the forward pass saw; the inner dimension is the (large) voxel count.
    xp = _pad_input(x, (kt, kh, kw), padding)
    gw2 = np.zeros((c_out, c_in * kt * kh * kw), dtype=np.float64)
    for i in range(n):
        go_flat = grad_output[i].reshape(c_out, to * ho * wo)
        for t0, t1, cols in _iter_col_chunks(xp[i], (kt, kh, kw), out_dims):
            gw2 += go_flat[:, t0 * ho * wo : t1 * ho * wo] @ cols.T
    grad_weights = gw2.reshape(kernel.weights.shape)

    # d/dx: correlate grad_output with weights transposed over channels and
    # reversed over taps.  `same` forward maps to a `same` backward; `valid`
    # forward needs grad_output fully padded by k-1 first.
    w_t = kernel.weights[:, :, ::-1, ::-1, ::-1].transpose(1, 0, 2, 3, 4)
    back_kernel = ConvKernel3(weights=np.ascontiguousarray(w_t), bias=np.zeros(c_in))
    if padding == "same":
        grad_input = conv3d_forward(grad_output, back_kernel, padding="same")
    else:
        go_full = np.pad(
            grad_output,
            ((0, 0), (0, 0), (kt - 1, kt - 1), (kh - 1, kh - 1), (kw - 1, kw - 1)),
        )
        grad_input = conv3d_forward(go_full, back_kernel, padding="valid")
    return grad_input, grad_weights, grad_bias


def leaky_relu(x, slope: float) -> np.ndarray:
    """y = x for x >= 0, slope * x otherwise."""
    if not 0.0 < slope < 1.0:
        raise ValueError(f"slope must be in (0, 1), got {slope}")
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0.0, x, slope * x)


def leaky_relu_backward(x, grad_output, slope: float) -> np.ndarray:
    """Multiply grad_output by 1 where x >= 0, else by slope (x=0 uses the 1 branch)."""
    if not 0.0 < slope < 1.0:
        raise ValueError(f"slope must be in (0, 1), got {slope}")
    x = np.asarray(x, dtype=np.float64)
    grad_output = np.asarray(grad_output, dtype=np.float64)
    if x.shape != grad_output.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {grad_output.shape}")
    return np.where(x >= 0.0, grad_output, slope * grad_output)


def charbonnier(pred, target, cfg: LossConfig = LossConfig()):
    """Mean Charbonnier penalty and its gradient with respect to pred.

    loss = mean(sqrt((pred - target)**2 + eta**2)); the per-element mean
    (rather than a per-batch sum) makes the learning rate independent of
    patch size, a monotone rescaling of the summed form.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    rho = np.sqrt(diff * diff + cfg.eta * cfg.eta)
    loss = float(rho.mean())
    grad = diff / rho / diff.size
    return loss, grad


def elementwise_add(a, b) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a + b


def sgd_step(params, grads, cfg: SgdConfig, state=None):
    """One SGD-with-momentum update over aligned lists of arrays.

    v <- momentum * v + grad + weight_decay * param
    param <- param - learning_rate * v

    Returns (new_params, new_state); inputs are not mutated.  Updates are
    computed in float64 and cast back to each parameter's dtype.
    """
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} params but {len(grads)} grads")
    if state is None:
        state = [np.zeros(p.shape, dtype=np.float64) for p in params]
    if len(state) != len(params):
        raise ValueError(f"{len(params)} params but {len(state)} momentum buffers")
    new_params, new_state = [], []
    for p, g, v in zip(params, grads, state):
        if p.shape != g.shape or p.shape != v.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}, state {v.shape}")
        p64 = p.astype(np.float64, copy=False)
        v2 = cfg.momentum * v + g + cfg.weight_decay * p64
        new_params.append((p64 - cfg.learning_rate * v2).astype(p.dtype))
        new_state.append(v2)
    return new_params, new_state
