"""Dense NCHW inference kernels.

Minimal deterministic numpy kernels used by both the real-valued reference
path and the unrolled spiking path: cross-correlation convolution,
fully-connected product, fused batch-norm affine, average pooling and
threshold (Heaviside) activation.

All kernels are pure functions over immutable inputs; they allocate fresh
output arrays and never mutate their arguments, so they are safe to call
concurrently across batch elements or layers.

Accumulation order: convolutions are lowered to a single matrix product
over patches flattened in (channel, kernel-row, kernel-col) order, so the
reduction order is fixed by the BLAS dot kernel and is identical on every
call with the same shapes.
"""

from dataclasses import dataclass

import numpy as np


class KernelError(ValueError):
    """Raised when a kernel receives structurally invalid inputs."""


def _check(cond, msg):
    if not cond:
        raise KernelError(msg)


def _check_finite(arr, what):
    if not np.isfinite(arr).all():
        raise KernelError(f"{what} contains non-finite values")


@dataclass(frozen=True)
class ConvParams:
    """Convolution weights plus geometry.

    weights has shape (C_out, C_in, K_h, K_w); stride and padding are
    (height, width) pairs. Padding is zero-padding, so in spiking mode a
    padded element simply contributes no spikes.
    """

    weights: np.ndarray
    stride: tuple = (1, 1)
    padding: tuple = (0, 0)

    def __post_init__(self):
        _check(self.weights.ndim == 4, "conv weights must be 4-D (C_out, C_in, K_h, K_w)")
        _check(all(s >= 1 for s in self.stride), "stride entries must be positive")
        _check(all(p >= 0 for p in self.padding), "padding entries must be non-negative")

    @property
    def out_channels(self):
        return self.weights.shape[0]

    @property
    def in_channels(self):
        return self.weights.shape[1]

    @property
    def kernel(self):
        return self.weights.shape[2], self.weights.shape[3]


@dataclass(frozen=True)
class BnAffine:
    """Per-output-channel affine: out = gamma*(y + b - mu)/sqrt(var + eps) + beta.

    Represents a batch-norm stage fused with the preceding layer's bias.
    A plain bias and the identity are expressible through the same record
    (see ``bias_only`` / ``identity``), which keeps the unrolled constant
    scaling in one place.
    """

    gamma: np.ndarray
    beta: np.ndarray
    mu: np.ndarray
    sigma_sq: np.ndarray
    bias: np.ndarray
    epsilon: float = 1e-5

    def __post_init__(self):
        _check(self.epsilon > 0, "batch-norm epsilon must be positive")
        _check(np.all(self.sigma_sq >= 0), "batch-norm variance must be non-negative")
        n = self.gamma.shape[0]
        for name in ("beta", "mu", "sigma_sq", "bias"):
            _check(getattr(self, name).shape == (n,), f"affine field {name} must have length {n}")

    @classmethod
    def identity(cls, channels, epsilon=1e-5):
        # sigma_sq = 1 - eps makes the denominator exactly 1.0
        return cls(
            gamma=np.ones(channels),
            beta=np.zeros(channels),
            mu=np.zeros(channels),
            sigma_sq=np.full(channels, 1.0 - epsilon),
            bias=np.zeros(channels),
            epsilon=epsilon,
        )

    @classmethod
    def bias_only(cls, bias, epsilon=1e-5):
        out = cls.identity(bias.shape[0], epsilon)
        return cls(out.gamma, out.beta, out.mu, out.sigma_sq, np.asarray(bias, dtype=float), epsilon)

    def scaled(self, l_scale):
        """Return a copy with the additive constants divided down.

        Splitting a tensor over L unrolled pieces requires b' = b/L,
        mu' = mu/L and beta' = beta/L so the pieces still sum to the
        single-shot result; gamma and the variance are untouched.
        """
        return BnAffine(
            gamma=self.gamma,
            beta=self.beta * l_scale,
            mu=self.mu * l_scale,
            sigma_sq=self.sigma_sq,
            bias=self.bias * l_scale,
            epsilon=self.epsilon,
        )


def conv_output_hw(h, w, kernel, stride, padding):
    """Output spatial dims; raises unless they are exact positive integers."""
    k_h, k_w = kernel
    s_h, s_w = stride
    p_h, p_w = padding
    num_h = h + 2 * p_h - k_h
    num_w = w + 2 * p_w - k_w
    _check(num_h >= 0 and num_w >= 0, f"kernel {kernel} larger than padded input {h}x{w}")
    _check(num_h % s_h == 0 and num_w % s_w == 0,
           f"conv geometry does not tile: input {h}x{w}, kernel {kernel}, "
           f"stride {stride}, padding {padding}")
    return num_h // s_h + 1, num_w // s_w + 1


def conv2d(x, params):
    """2-D cross-correlation of an (N, C, H, W) batch with ConvParams."""
    _check(x.ndim == 4, f"conv input must be 4-D, got shape {x.shape}")
    n, c, h, w = x.shape
    _check(c == params.in_channels,
           f"conv channel mismatch: input has {c}, weights expect {params.in_channels}")
    k_h, k_w = params.kernel
    s_h, s_w = params.stride
    p_h, p_w = params.padding
    h_o, w_o = conv_output_hw(h, w, params.kernel, params.stride, params.padding)

    if p_h or p_w:
        x = np.pad(x, ((0, 0), (0, 0), (p_h, p_h), (p_w, p_w)))
    windows = np.lib.stride_tricks.sliding_window_view(x, (k_h, k_w), axis=(2, 3))
    windows = windows[:, :, ::s_h, ::s_w]            # (N, C, H_o, W_o, K_h, K_w)
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * h_o * w_o, c * k_h * k_w)
    flat_w = params.weights.reshape(params.out_channels, c * k_h * k_w)
    out = cols @ flat_w.T
    out = out.reshape(n, h_o, w_o, params.out_channels).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)
    _check_finite(out, "conv output")
    return out


def fully_connected(x, weights):
    """Batched y = W @ x for x of shape (N, C_in) and weights (C_out, C_in)."""
    _check(x.ndim == 2, f"fully-connected input must be 2-D, got shape {x.shape}")
    _check(weights.ndim == 2, "fully-connected weights must be 2-D (C_out, C_in)")
    _check(x.shape[1] == weights.shape[1],
           f"fully-connected width mismatch: input {x.shape[1]}, weights expect {weights.shape[1]}")
    out = x @ weights.T
    _check_finite(out, "fully-connected output")
    return out


def fused_bn_affine(y, affine, l_scale=1.0):
    """Apply a BnAffine per output channel.

    l_scale divides the additive constants (bias, mu, beta): pass 1 for a
    single-shot pass and 1/L when the layer is unrolled over L timesteps,
    so that the L unrolled outputs sum to the single-shot output.
    """
    _check(y.ndim in (2, 4), f"affine input must be 2-D or 4-D, got shape {y.shape}")
    channels = y.shape[1]
    _check(affine.gamma.shape[0] == channels,
           f"affine expects {affine.gamma.shape[0]} channels, input has {channels}")
    shape = (1, channels) + (1,) * (y.ndim - 2)
    denom = np.sqrt(affine.sigma_sq + affine.epsilon).reshape(shape)
    shift = (l_scale * (affine.bias - affine.mu)).reshape(shape)
    out = affine.gamma.reshape(shape) * (y + shift) / denom + (l_scale * affine.beta).reshape(shape)
    _check_finite(out, "affine output")
    return out


def avg_pool2d(x, window, stride=None):
    """Non-overlapping k x k mean pooling; H and W must tile exactly."""
    _check(x.ndim == 4, f"pool input must be 4-D, got shape {x.shape}")
    k = window[0] if isinstance(window, (tuple, list)) else int(window)
    if stride is not None:
        s = stride[0] if isinstance(stride, (tuple, list)) else int(stride)
        _check(s == k, "avg-pool stride must equal its window")
    n, c, h, w = x.shape
    _check(h % k == 0 and w % k == 0,
           f"pool window {k} does not divide input {h}x{w}")
    out = x.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5))
    _check_finite(out, "pool output")
    return out


def max_pool2d(x, window):
    """Non-overlapping k x k max pooling.

    Only valid on the real-valued reference path; max does not commute
    with the timestep sum, so converted spiking models reject it.
    """
    _check(x.ndim == 4, f"pool input must be 4-D, got shape {x.shape}")
    k = window[0] if isinstance(window, (tuple, list)) else int(window)
    n, c, h, w = x.shape
    _check(h % k == 0 and w % k == 0,
           f"pool window {k} does not divide input {h}x{w}")
    return x.reshape(n, c, h // k, k, w // k, k).max(axis=(3, 5))


def heaviside(x, theta_star):
    """Elementwise 1.0 where x >= theta_star else 0.0 (inclusive at threshold)."""
    _check(theta_star > 0, "threshold must be positive")
    return (x >= theta_star).astype(np.float64)
