"""Forward-only dense kernels for the HiLo pipeline.

Tensors are plain float64 numpy arrays: images and feature maps are
``(H, W, D)``, token sequences are ``(N, D)``.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from sehilo.rng import make_rng


def matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return a @ b


def softmax(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def softmax_rows(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"softmax_rows expects a rank-2 tensor, got shape {x.shape}")
    return softmax(x, axis=1)


def layernorm(x, scale, bias, eps=1e-9):
    x = np.asarray(x, dtype=np.float64)
    scale = np.asarray(scale, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if scale.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise ValueError(
            f"layernorm: scale {scale.shape} / bias {bias.shape} do not match last dim of {x.shape}"
        )
    if x.shape[-1] == 0:
        return x.copy()
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    return xc / np.sqrt(var + eps) * scale + bias


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def _check_grid(x, k, what):
    if x.ndim != 3:
        raise ValueError(f"{what} expects an H x W x D tensor, got shape {x.shape}")
    h, w, _ = x.shape
    if k < 1 or h % k or w % k:
        raise ValueError(f"{what}: {k} does not divide spatial dims {h}x{w}")


def avgpool2d(x, stride):
    x = np.asarray(x, dtype=np.float64)
    _check_grid(x, stride, "avgpool2d")
    h, w, d = x.shape
    return x.reshape(h // stride, stride, w // stride, stride, d).mean(axis=(1, 3))


def window_partition(x, window):
    """Split ``H x W x D`` into ``(H W / window^2, window^2, D)`` windows, row-major over windows."""
    x = np.asarray(x, dtype=np.float64)
    _check_grid(x, window, "window_partition")
    h, w, d = x.shape
    t = x.reshape(h // window, window, w // window, window, d).transpose(0, 2, 1, 3, 4)
    return t.reshape(-1, window * window, d)


def window_merge(windows, height, width):
    windows = np.asarray(windows, dtype=np.float64)
    n, ww, d = windows.shape
    window = math.isqrt(ww)
    if window * window != ww or height % window or width % window:
        raise ValueError(f"cannot merge {windows.shape} windows into {height}x{width}")
    if n != (height // window) * (width // window):
        raise ValueError(f"expected {(height // window) * (width // window)} windows, got {n}")
    t = windows.reshape(height // window, width // window, window, window, d)
    return t.transpose(0, 2, 1, 3, 4).reshape(height, width, d)


def attention(q_in, kv_in, params, n_heads, return_weights=False):
    """Multi-head scaled dot-product attention with output projection.

    ``q_in`` is ``(..., Nq, d)``, ``kv_in`` is ``(..., Nk, d)``; leading axes
    (e.g. windows) are batched. ``params`` holds ``wq, bq, wk, bk, wv, bv, wo,
    bo``. With ``return_weights`` the attention probabilities
    ``(..., heads, Nq, Nk)`` are returned as well.
    """
    d = q_in.shape[-1]
    if d % n_heads:
        raise ValueError(f"width {d} is not divisible by {n_heads} heads")
    dh = d // n_heads

    def heads(t):
        t = t.reshape(t.shape[:-1] + (n_heads, dh))
        return np.swapaxes(t, -2, -3)

    q = heads(q_in @ params["wq"] + params["bq"])
    k = heads(kv_in @ params["wk"] + params["bk"])
    v = heads(kv_in @ params["wv"] + params["bv"])
    probs = softmax(q @ np.swapaxes(k, -1, -2) / math.sqrt(dh), axis=-1)
    ctx = np.swapaxes(probs @ v, -2, -3)
    out = ctx.reshape(ctx.shape[:-2] + (d,)) @ params["wo"] + params["bo"]
    return (out, probs) if return_weights else out


@dataclass(frozen=True)
class ParamSpec:
    shape: tuple
    fan_in: int = 0
    init: str = "uniform"  # uniform | ones | zeros


@dataclass
class WeightSet:
    tensors: dict
    init_seed: int = None
    names: list = field(default=None)

    def __post_init__(self):
        if self.names is None:
            self.names = list(self.tensors)

    def __getitem__(self, name):
        return self.tensors[name]

    def __setitem__(self, name, value):
        if name not in self.tensors:
            self.names.append(name)
        self.tensors[name] = value

    def __contains__(self, name):
        return name in self.tensors

    def group(self, prefix):
        """View of the tensors under ``prefix.`` with the prefix stripped."""
        cut = len(prefix) + 1
        return {k[cut:]: v for k, v in self.tensors.items() if k.startswith(prefix + ".")}

    def copy(self):
        return WeightSet({k: v.copy() for k, v in self.tensors.items()}, self.init_seed)

    def equals(self, other):
        return self.names == other.names and all(
            np.array_equal(self.tensors[k], other.tensors[k]) for k in self.names
        )


def init_weights(layout, seed):
    """Draw every ``uniform`` parameter from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).

    ``layout`` maps names to :class:`ParamSpec`; draws follow its iteration
    order from a single stream, so the result is a pure function of
    ``(layout, seed)``. Zero fan-in parameters (degenerate zero-width
    branches) are zeros.
    """
    rng = make_rng(seed)
    tensors = {}
    for name, spec in layout.items():
        if spec.init == "ones":
            tensors[name] = np.ones(spec.shape)
        elif spec.init == "zeros" or spec.fan_in == 0:
            tensors[name] = np.zeros(spec.shape)
        else:
            lim = 1.0 / math.sqrt(spec.fan_in)
            tensors[name] = rng.uniform(-lim, lim, size=spec.shape)
    return WeightSet(tensors, init_seed=seed)
