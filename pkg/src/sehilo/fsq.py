"""Finite scalar quantization.

Each latent dimension ``i`` with ``m_i`` levels is processed independently:

    h_i = (m_i - 1)(1 + eps) / 2
    o_i = 0.5 if m_i is even else 0
    s_i = atanh(o_i / h_i)
    bounded = alpha * (tanh(z + s_i) * h_i - o_i)
    scaled  = round(bounded / alpha) * alpha
    normalized = scaled / (alpha * (h_i + o_i))

``round`` is round-half-away-from-zero. The integer ``level = scaled / alpha``
lies in ``{-(m//2), ..., (m-1)//2}`` and maps to an index in ``[0, m-1]`` via
``index = level + m // 2``. For odd ``m`` that is the symmetric grid
``{-k..k}``; for even ``m`` the offset leaves one extra level on the negative
side (e.g. ``m=4`` gives levels ``{-2, -1, 0, 1}``).

All functions broadcast over leading axes; the last axis indexes dimensions.
"""

import itertools
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from sehilo._validation import (
    check_finite_array,
    check_last_dim,
    check_levels,
    check_positive,
)

DEFAULT_EPSILON = 1e-3


def round_half_away(x):
    """Round to nearest integer, ties away from zero (``np.round`` ties to even)."""
    x = np.asarray(x, dtype=np.float64)
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


@dataclass(frozen=True)
class QuantizerConfig:
    levels: tuple
    alpha: float = 2.0
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        object.__setattr__(self, "levels", check_levels(self.levels))
        object.__setattr__(self, "alpha", check_positive(self.alpha, "alpha"))
        object.__setattr__(self, "epsilon", check_positive(self.epsilon, "epsilon"))
        for m in self.levels:
            # larger margins let the span edge round past the extreme level
            if (m - 1) * self.epsilon / 2 >= 0.5:
                raise ValueError(
                    f"epsilon={self.epsilon} too large for {m} levels; "
                    f"need epsilon < {1 / (m - 1)}"
                )

    @property
    def dim(self):
        return len(self.levels)

    @property
    def m(self):
        return np.asarray(self.levels, dtype=np.int64)

    @property
    def h(self):
        return (self.m - 1) * (1.0 + self.epsilon) / 2.0

    @property
    def offset(self):
        return np.where(self.m % 2 == 0, 0.5, 0.0)

    @property
    def shift(self):
        return np.arctanh(self.offset / self.h)

    @property
    def span_low(self):
        """Lower edge of the scaled span, ``-alpha (h + o)``."""
        return -self.alpha * (self.h + self.offset)

    @property
    def span_high(self):
        return self.alpha * (self.h - self.offset)

    @property
    def level_low(self):
        return -(self.m // 2)

    @property
    def level_high(self):
        return (self.m - 1) // 2

    @property
    def codebook_size(self):
        return math.prod(self.levels)

    def _pick(self, values, dim):
        return values if dim is None else values[dim]


@dataclass(frozen=True)
class TokenCode:
    """Quantized token(s): level indices plus scaled and normalized representatives."""

    indices: np.ndarray
    scaled_values: np.ndarray
    normalized_values: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, TokenCode):
            return NotImplemented
        return bool(
            np.array_equal(self.indices, other.indices)
            and np.array_equal(self.scaled_values, other.scaled_values)
            and np.array_equal(self.normalized_values, other.normalized_values)
        )

    __hash__ = None


def bound(z, dim, cfg):
    """Squash ``z`` into dimension ``dim``'s scaled span. ``dim=None`` broadcasts over the last axis."""
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("bound() requires finite input")
    h = cfg._pick(cfg.h, dim)
    o = cfg._pick(cfg.offset, dim)
    s = cfg._pick(cfg.shift, dim)
    return cfg.alpha * (np.tanh(z + s) * h - o)


def quantize(b, dim, cfg):
    """Round a bounded value to its level. Returns ``(index, scaled_value)``."""
    b = np.asarray(b, dtype=np.float64)
    level = round_half_away(b / cfg.alpha)
    half = cfg._pick(cfg.m // 2, dim)
    index = level.astype(np.int64) + half
    return index, level * cfg.alpha


def normalize(scaled_value, dim, cfg):
    # alpha * (h + o) is the span edge; for odd m this is exactly alpha * h
    denom = cfg.alpha * (cfg._pick(cfg.h, dim) + cfg._pick(cfg.offset, dim))
    return np.asarray(scaled_value, dtype=np.float64) / denom


def _token_code(index, scaled, cfg):
    return TokenCode(
        indices=index,
        scaled_values=scaled,
        normalized_values=normalize(scaled, None, cfg),
    )


def fsq_forward(z, cfg):
    """Full chain bound -> quantize -> normalize over the last axis of ``z``."""
    z = check_finite_array(z, "z")
    check_last_dim(z, cfg.dim, "z")
    index, scaled = quantize(bound(z, None, cfg), None, cfg)
    return _token_code(index, scaled, cfg)


def requantize(received, cfg):
    """Snap received scaled-domain values back onto the codebook.

    Values outside the span are clamped to it first, so any finite input maps
    to a valid index.
    """
    y = check_finite_array(received, "received")
    check_last_dim(y, cfg.dim, "received")
    y = np.clip(y, cfg.span_low, cfg.span_high)
    index, scaled = quantize(y, None, cfg)
    return _token_code(index, scaled, cfg)


def indices_to_scaled(indices, cfg):
    indices = np.asarray(indices, dtype=np.int64)
    check_last_dim(indices, cfg.dim, "indices")
    if np.any(indices < 0) or np.any(indices >= cfg.m):
        raise ValueError("index out of range for levels")
    return (indices - cfg.m // 2).astype(np.float64) * cfg.alpha


def from_indices(indices, cfg):
    indices = np.asarray(indices, dtype=np.int64)
    return _token_code(indices, indices_to_scaled(indices, cfg), cfg)


def enumerate_codewords(cfg):
    """All ``prod(m_i)`` index tuples, dimension 0 varying fastest."""
    grids = [range(m) for m in reversed(cfg.levels)]
    rows = [tuple(reversed(t)) for t in itertools.product(*grids)]
    return np.asarray(rows, dtype=np.int64).reshape(-1, cfg.dim)


def is_interior(indices, cfg):
    """True where every dimension sits on a non-extreme level."""
    indices = np.asarray(indices)
    return np.all((indices > 0) & (indices < cfg.m - 1), axis=-1)


def is_edge(indices, cfg):
    """True where every dimension sits on an extreme level."""
    indices = np.asarray(indices)
    return np.all((indices == 0) | (indices == cfg.m - 1), axis=-1)


class FSQuantizer(TransformerMixin, BaseEstimator):
    """Estimator wrapper around the FSQ chain.

    ``transform`` maps latents to scaled-domain representatives (the values a
    transmitter puts on the channel), ``predict`` returns level indices, and
    ``inverse_transform`` maps indices back to scaled representatives.
    Fitting learns nothing; it validates the feature count and freezes the
    config.

    Parameters
    ----------
    levels : sequence of int, default=(5, 5, 5, 5, 5)
    alpha : float, default=2.0
        Scale of the quantization span; the level spacing in the scaled
        domain equals ``alpha``.
    epsilon : float, default=1e-3
        Stability margin in the bounding range.
    """

    def __init__(self, levels=(5, 5, 5, 5, 5), alpha=2.0, epsilon=DEFAULT_EPSILON):
        self.levels = levels
        self.alpha = alpha
        self.epsilon = epsilon

    def fit(self, X=None, y=None):
        self.config_ = QuantizerConfig(tuple(self.levels), self.alpha, self.epsilon)
        self.n_features_in_ = self.config_.dim
        if X is not None:
            X = check_finite_array(X, "X", ndim=2)
            check_last_dim(X, self.n_features_in_, "X")
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        return fsq_forward(X, self.config_).scaled_values

    def predict(self, X):
        check_is_fitted(self, "config_")
        return fsq_forward(X, self.config_).indices

    def requantize(self, Y):
        check_is_fitted(self, "config_")
        return requantize(Y, self.config_)

    def inverse_transform(self, indices):
        check_is_fitted(self, "config_")
        return indices_to_scaled(indices, self.config_)
