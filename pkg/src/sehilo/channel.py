"""Additive white Gaussian noise channel.

Noise is specified either as a target SNR in dB, relative to the empirical
mean-square power of the payload passed to a single :func:`transmit` call, or
as a fixed standard deviation.
"""

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from sehilo._validation import check_finite_array
from sehilo.rng import make_rng


@dataclass(frozen=True)
class ChannelConfig:
    snr_db: float = None
    fixed_sigma: float = None
    seed: int = 0

    def __post_init__(self):
        if (self.snr_db is None) == (self.fixed_sigma is None):
            raise ValueError("exactly one of snr_db / fixed_sigma must be set")
        if self.fixed_sigma is not None and not self.fixed_sigma > 0:
            raise ValueError(f"fixed_sigma must be positive, got {self.fixed_sigma}")
        if self.snr_db is not None and math.isnan(self.snr_db):
            raise ValueError("snr_db is NaN")

    @property
    def mode(self):
        return "snr_db" if self.snr_db is not None else "fixed_sigma"


def sigma_from_snr(signal_power, snr_db):
    if not signal_power > 0:
        raise ValueError(f"signal power must be positive, got {signal_power}")
    return math.sqrt(signal_power * 10.0 ** (-snr_db / 10.0))


def signal_power(x):
    x = np.asarray(x, dtype=np.float64)
    return float(np.mean(np.square(x))) if x.size else 0.0


@dataclass(frozen=True)
class TransmitStats:
    sigma: float
    signal_power: float
    noise_power: float
    n_elements: int

    @property
    def measured_snr_db(self):
        if self.noise_power == 0 or self.signal_power == 0:
            return math.inf if self.noise_power == 0 else -math.inf
        return 10.0 * math.log10(self.signal_power / self.noise_power)


def transmit(payload, cfg, rng=None, return_stats=False):
    """Add i.i.d. N(0, sigma^2) noise to every element of ``payload``.

    ``rng`` defaults to a fresh generator seeded from ``cfg.seed``, which makes
    the call a pure function of ``(payload, cfg)``.
    """
    x = check_finite_array(payload, "payload")
    if cfg.snr_db is not None:
        if x.size == 0:
            raise ValueError("empty payload: signal power undefined in snr_db mode")
        power = signal_power(x)
        sigma = sigma_from_snr(power, cfg.snr_db)
    else:
        power = signal_power(x)
        sigma = cfg.fixed_sigma
    if rng is None:
        rng = make_rng(cfg.seed)
    noise = rng.standard_normal(x.shape) * sigma
    y = x + noise
    if not return_stats:
        return y
    return y, TransmitStats(sigma, power, signal_power(noise), int(x.size))


class AWGNChannel(TransformerMixin, BaseEstimator):
    """Channel as a transformer: ``transform`` returns the noisy payload.

    Set exactly one of ``snr_db`` and ``sigma``. Each ``transform`` call uses
    a fresh stream seeded from ``seed``; statistics of the latest call are
    stored in ``sigma_``, ``measured_snr_db_`` and ``stats_``.
    """

    def __init__(self, snr_db=None, sigma=None, seed=0):
        self.snr_db = snr_db
        self.sigma = sigma
        self.seed = seed

    def fit(self, X=None, y=None):
        self.config_ = ChannelConfig(snr_db=self.snr_db, fixed_sigma=self.sigma, seed=self.seed)
        return self

    def transform(self, X):
        if not hasattr(self, "config_"):
            self.fit()
        out, self.stats_ = transmit(X, self.config_, return_stats=True)
        self.sigma_ = self.stats_.sigma
        self.measured_snr_db_ = self.stats_.measured_snr_db
        return out
