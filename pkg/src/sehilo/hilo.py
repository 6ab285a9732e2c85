"""High/low-frequency transformer codec with dual FSQ streams.

A HiLo block splits its channels in two. The first ``d_hi`` channels run
windowed self-attention (local detail); the remaining ``d_lo`` channels run
attention whose queries are the full-resolution tokens and whose keys and
values are average-pooled tokens (global context). Branch outputs are
concatenated and added back to the residual stream, followed by an MLP:

    x = x + concat(hi_branch(LN(x)[:d_hi]), lo_branch(LN(x)[d_hi:]))
    x = x + MLP(LN(x))

The encoder embeds image patches, runs ``n_blocks`` HiLo blocks, projects the
two channel groups to ``d_fsq`` dims each and quantizes them into two token
streams. The decoder requantizes received streams, projects back, runs its
own blocks and unembeds patches to an image.

Weights are seeded random draws; nothing here trains.
"""

from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from sehilo import nn
from sehilo._validation import check_finite_array
from sehilo.channel import transmit
from sehilo.fsq import QuantizerConfig, fsq_forward, is_interior, requantize
from sehilo.nn import ParamSpec
from sehilo.theory import predicted_rate

_ATTN = ("q", "k", "v", "o")


@dataclass(frozen=True)
class HiLoConfig:
    d_model: int = 32
    d_hi: int = 16
    d_lo: int = 16
    pool_stride: int = 2
    window_size: int = 2
    n_heads: int = 4
    n_blocks: int = 8
    patch_size: int = 4
    d_fsq: int = 5
    mlp_ratio: int = 4
    in_channels: int = 3

    def __post_init__(self):
        if self.d_hi < 0 or self.d_lo < 0 or self.d_hi + self.d_lo != self.d_model:
            raise ValueError(
                f"d_hi + d_lo must equal d_model ({self.d_hi} + {self.d_lo} != {self.d_model})"
            )
        for name in ("pool_stride", "window_size", "n_heads", "patch_size", "d_fsq",
                     "mlp_ratio", "in_channels", "d_model"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_blocks < 0:
            raise ValueError("n_blocks must be >= 0")
        for name in ("d_hi", "d_lo"):
            if getattr(self, name) % self.n_heads:
                raise ValueError(f"{name}={getattr(self, name)} not divisible by n_heads")

    @classmethod
    def large(cls, **overrides):
        """256 + 256 channels and 8 blocks per side."""
        kw = dict(d_model=512, d_hi=256, d_lo=256, n_blocks=8, n_heads=8)
        kw.update(overrides)
        return cls(**kw)

    def check_grid(self, gh, gw):
        for k, name in ((self.window_size, "window_size"), (self.pool_stride, "pool_stride")):
            if gh % k or gw % k:
                raise ValueError(f"{name}={k} does not divide the {gh}x{gw} token grid")

    def check_image_shape(self, shape):
        if len(shape) != 3 or shape[2] != self.in_channels:
            raise ValueError(f"expected an H x W x {self.in_channels} image, got shape {shape}")
        p = self.patch_size
        if shape[0] % p or shape[1] % p:
            raise ValueError(f"patch_size={p} does not divide image dims {shape[:2]}")
        self.check_grid(shape[0] // p, shape[1] // p)
        return shape[0] // p, shape[1] // p

    def weight_layout(self):
        d, patch = self.d_model, self.patch_size ** 2 * self.in_channels
        layout = {}

        def linear(name, fan_in, fan_out):
            layout[f"{name}.w"] = ParamSpec((fan_in, fan_out), fan_in)
            layout[f"{name}.b"] = ParamSpec((fan_out,), fan_in)

        def norm(name, width):
            layout[f"{name}.scale"] = ParamSpec((width,), init="ones")
            layout[f"{name}.bias"] = ParamSpec((width,), init="zeros")

        def block(prefix):
            norm(f"{prefix}.ln1", d)
            for branch, width in (("hi", self.d_hi), ("lo", self.d_lo)):
                for p in _ATTN:
                    linear(f"{prefix}.{branch}.{p}", width, width)
            norm(f"{prefix}.ln2", d)
            linear(f"{prefix}.mlp.fc1", d, self.mlp_ratio * d)
            linear(f"{prefix}.mlp.fc2", self.mlp_ratio * d, d)

        linear("embed", patch, d)
        for i in range(self.n_blocks):
            block(f"enc.{i}")
        norm("enc.norm", d)
        linear("head_hi", self.d_hi, self.d_fsq)
        linear("head_lo", self.d_lo, self.d_fsq)
        linear("dec.proj_hi", self.d_fsq, self.d_hi)
        linear("dec.proj_lo", self.d_fsq, self.d_lo)
        for i in range(self.n_blocks):
            block(f"dec.{i}")
        norm("dec.norm", d)
        linear("unembed", d, patch)
        return layout


def init_weights(cfg, seed):
    return nn.init_weights(cfg.weight_layout(), seed)


def _sub(params, prefix):
    cut = len(prefix) + 1
    return {k[cut:]: v for k, v in params.items() if k.startswith(prefix + ".")}


def _attn_params(params):
    out = {}
    for p in _ATTN:
        out[f"w{p}"] = params[f"{p}.w"]
        out[f"b{p}"] = params[f"{p}.b"]
    return out


def _linear(x, params, name):
    return x @ params[f"{name}.w"] + params[f"{name}.b"]


def split_channels(x, cfg):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != cfg.d_model:
        raise ValueError(f"expected {cfg.d_model} channels, got {x.shape[-1]}")
    return x[..., : cfg.d_hi], x[..., cfg.d_hi:]


def hi_branch(x_hi, params, cfg, return_weights=False):
    """Self-attention inside each ``window_size x window_size`` window."""
    x_hi = np.asarray(x_hi, dtype=np.float64)
    h, w, d = x_hi.shape
    if d == 0:
        return (x_hi.copy(), None) if return_weights else x_hi.copy()
    windows = nn.window_partition(x_hi, cfg.window_size)
    out, probs = nn.attention(windows, windows, _attn_params(params), cfg.n_heads, True)
    out = nn.window_merge(out, h, w)
    return (out, probs) if return_weights else out


def lo_branch(x_lo, params, cfg, return_weights=False):
    """Full-resolution queries attend to ``pool_stride``-pooled keys/values."""
    x_lo = np.asarray(x_lo, dtype=np.float64)
    h, w, d = x_lo.shape
    if d == 0:
        return (x_lo.copy(), None) if return_weights else x_lo.copy()
    queries = x_lo.reshape(h * w, d)
    pooled = nn.avgpool2d(x_lo, cfg.pool_stride).reshape(-1, d)
    out, probs = nn.attention(queries, pooled, _attn_params(params), cfg.n_heads, True)
    out = out.reshape(h, w, d)
    return (out, probs) if return_weights else out


def hilo_block(x, params, cfg):
    """One pre-norm HiLo block on an ``H x W x d_model`` map; ``params`` is the block's sub-dict."""
    x = check_finite_array(x, "x", ndim=3)
    y = nn.layernorm(x, params["ln1.scale"], params["ln1.bias"])
    y_hi, y_lo = split_channels(y, cfg)
    mixed = np.concatenate(
        [hi_branch(y_hi, _sub(params, "hi"), cfg), lo_branch(y_lo, _sub(params, "lo"), cfg)],
        axis=-1,
    )
    x = x + mixed
    y = nn.layernorm(x, params["ln2.scale"], params["ln2.bias"])
    return x + _linear(nn.gelu(_linear(y, params, "mlp.fc1")), params, "mlp.fc2")


def _run_blocks(x, weights, cfg, side):
    for i in range(cfg.n_blocks):
        x = hilo_block(x, weights.group(f"{side}.{i}"), cfg)
    return nn.layernorm(x, weights[f"{side}.norm.scale"], weights[f"{side}.norm.bias"])


def patchify(image, p):
    h, w, c = image.shape
    t = image.reshape(h // p, p, w // p, p, c).transpose(0, 2, 1, 3, 4)
    return t.reshape(h // p, w // p, p * p * c)


def unpatchify(grid, p, c):
    gh, gw, _ = grid.shape
    t = grid.reshape(gh, gw, p, p, c).transpose(0, 2, 1, 3, 4)
    return t.reshape(gh * p, gw * p, c)


@dataclass(frozen=True)
class DualStream:
    """Scaled-domain Hi and Lo token streams (``N x d_fsq`` each) for one image."""

    hi: np.ndarray
    lo: np.ndarray
    grid: tuple

    def __post_init__(self):
        if self.hi.shape != self.lo.shape:
            raise ValueError(f"stream shapes differ: {self.hi.shape} vs {self.lo.shape}")
        if self.hi.shape[0] != self.grid[0] * self.grid[1]:
            raise ValueError(f"{self.hi.shape[0]} tokens do not fill a {self.grid} grid")

    @property
    def n_tokens(self):
        return self.hi.shape[0]

    def indices(self, qcfg):
        return requantize(self.hi, qcfg).indices, requantize(self.lo, qcfg).indices


def encode(image, weights, cfg, qcfg):
    image = check_finite_array(image, "image", ndim=3)
    gh, gw = cfg.check_image_shape(image.shape)
    if qcfg.dim != cfg.d_fsq:
        raise ValueError(f"quantizer has {qcfg.dim} dims, model expects d_fsq={cfg.d_fsq}")
    x = _linear(patchify(image, cfg.patch_size), weights, "embed")
    x = _run_blocks(x, weights, cfg, "enc").reshape(gh * gw, cfg.d_model)
    x_hi, x_lo = split_channels(x, cfg)
    t_hi = fsq_forward(_linear(x_hi, weights, "head_hi"), qcfg)
    t_lo = fsq_forward(_linear(x_lo, weights, "head_lo"), qcfg)
    return DualStream(t_hi.scaled_values, t_lo.scaled_values, (gh, gw))


def decode(received, weights, cfg, qcfg, return_codes=False):
    gh, gw = received.grid
    cfg.check_grid(gh, gw)
    code_hi = requantize(received.hi, qcfg)
    code_lo = requantize(received.lo, qcfg)
    z = np.concatenate(
        [
            _linear(code_hi.normalized_values, weights, "dec.proj_hi"),
            _linear(code_lo.normalized_values, weights, "dec.proj_lo"),
        ],
        axis=-1,
    )
    x = _run_blocks(z.reshape(gh, gw, cfg.d_model), weights, cfg, "dec")
    image = unpatchify(_linear(x, weights, "unembed"), cfg.patch_size, cfg.in_channels)
    return (image, (code_hi, code_lo)) if return_codes else image


def _stream_stats(sent_idx, recv_idx, qcfg, tx):
    ok = np.all(sent_idx == recv_idx, axis=-1)
    interior = is_interior(sent_idx, qcfg)
    n_int = int(interior.sum())
    sigma = 0.0 if tx is None else tx.sigma
    return {
        "symbol_accuracy": float(ok.mean()) if ok.size else 1.0,
        "n_tokens": int(ok.size),
        "n_interior": n_int,
        "interior_accuracy": float(ok[interior].mean()) if n_int else None,
        "sigma": sigma,
        "measured_snr_db": None if tx is None else _finite_or_none(tx.measured_snr_db),
        "theory_accuracy": predicted_rate(qcfg, sigma),
    }


def _finite_or_none(v):
    return float(v) if np.isfinite(v) else None


def pipeline(image, weights, cfg, qcfg, channel_hi=None, channel_lo=None):
    """Encode, pass each stream through its channel (``None`` = noiseless), decode.

    Returns ``(reconstruction, stats)`` where ``stats`` has a ``hi`` and ``lo``
    entry with symbol accuracy, interior-codeword accuracy, the channel sigma
    and measured SNR, and the closed-form prediction for that sigma.
    """
    sent = encode(image, weights, cfg, qcfg)
    rx_hi, tx_hi = (sent.hi, None) if channel_hi is None else transmit(
        sent.hi, channel_hi, return_stats=True)
    rx_lo, tx_lo = (sent.lo, None) if channel_lo is None else transmit(
        sent.lo, channel_lo, return_stats=True)
    received = DualStream(rx_hi, rx_lo, sent.grid)
    recon, (code_hi, code_lo) = decode(received, weights, cfg, qcfg, return_codes=True)
    sent_hi, sent_lo = sent.indices(qcfg)
    stats = {
        "image_shape": list(np.shape(image)),
        "grid": list(sent.grid),
        "n_tokens": sent.n_tokens,
        "hi": _stream_stats(sent_hi, code_hi.indices, qcfg, tx_hi),
        "lo": _stream_stats(sent_lo, code_lo.indices, qcfg, tx_lo),
    }
    return recon, stats


class SeHiLoCodec(BaseEstimator):
    """Image codec estimator: ``transform`` encodes, ``inverse_transform`` decodes.

    ``fit`` draws the seeded weights and records the image shape; there is no
    training. ``transform``/``inverse_transform``/``predict`` accept a single
    ``H x W x C`` image or a batch ``B x H x W x C`` (a batch returns a list of
    streams).
    """

    def __init__(
        self,
        levels=(5, 5, 5, 5, 5),
        alpha=2.0,
        epsilon=1e-3,
        d_model=32,
        d_hi=16,
        pool_stride=2,
        window_size=2,
        n_heads=4,
        n_blocks=8,
        patch_size=4,
        mlp_ratio=4,
        seed=0,
    ):
        self.levels = levels
        self.alpha = alpha
        self.epsilon = epsilon
        self.d_model = d_model
        self.d_hi = d_hi
        self.pool_stride = pool_stride
        self.window_size = window_size
        self.n_heads = n_heads
        self.n_blocks = n_blocks
        self.patch_size = patch_size
        self.mlp_ratio = mlp_ratio
        self.seed = seed

    def _images(self, X):
        X = check_finite_array(X, "X", ndim=(3, 4))
        return X[None] if X.ndim == 3 else X, X.ndim == 3

    def fit(self, X, y=None):
        images, _ = self._images(X)
        self.quantizer_config_ = QuantizerConfig(tuple(self.levels), self.alpha, self.epsilon)
        self.config_ = HiLoConfig(
            d_model=self.d_model,
            d_hi=self.d_hi,
            d_lo=self.d_model - self.d_hi,
            pool_stride=self.pool_stride,
            window_size=self.window_size,
            n_heads=self.n_heads,
            n_blocks=self.n_blocks,
            patch_size=self.patch_size,
            d_fsq=len(self.levels),
            mlp_ratio=self.mlp_ratio,
            in_channels=images.shape[-1],
        )
        self.config_.check_image_shape(images.shape[1:])
        self.image_shape_ = images.shape[1:]
        self.weights_ = init_weights(self.config_, self.seed)
        return self

    def transform(self, X):
        check_is_fitted(self, "weights_")
        images, single = self._images(X)
        out = [encode(im, self.weights_, self.config_, self.quantizer_config_) for im in images]
        return out[0] if single else out

    def fit_transform(self, X, y=None):
        return self.fit(X).transform(X)

    def inverse_transform(self, streams):
        check_is_fitted(self, "weights_")
        if isinstance(streams, DualStream):
            return decode(streams, self.weights_, self.config_, self.quantizer_config_)
        return np.stack(
            [decode(s, self.weights_, self.config_, self.quantizer_config_) for s in streams]
        )

    def predict(self, X, channel_hi=None, channel_lo=None):
        """Reconstruct through the full pipeline; stats of the last image land in ``stats_``."""
        check_is_fitted(self, "weights_")
        images, single = self._images(X)
        recons = []
        for im in images:
            recon, self.stats_ = pipeline(
                im, self.weights_, self.config_, self.quantizer_config_, channel_hi, channel_lo
            )
            recons.append(recon)
        return recons[0] if single else np.stack(recons)

    def get_config_dict(self):
        check_is_fitted(self, "config_")
        return {"model": asdict(self.config_), "quantizer": asdict(self.quantizer_config_)}
