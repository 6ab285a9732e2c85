"""Image quality metrics, symbol accuracy and the codec's loss terms."""

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from sehilo._validation import check_same_shape

PSNR_CAP_DB = 99.0
SSIM_WINDOW = 8
PROB_CLAMP = 1e-12


def mse(x_hat, x):
    x_hat, x = check_same_shape(x_hat, x)
    return float(np.mean(np.square(x_hat - x)))


def recon_loss(x_hat, x):
    """Per-element mean squared error."""
    return mse(x_hat, x)


def adv_loss(d_real, d_fake):
    """``-mean(log D(real)) - mean(log(1 - D(fake)))`` on discriminator probabilities."""
    d_real = np.asarray(d_real, dtype=np.float64)
    d_fake = np.asarray(d_fake, dtype=np.float64)
    for name, d in (("d_real", d_real), ("d_fake", d_fake)):
        if d.size == 0 or np.any(~np.isfinite(d)) or np.any(d < 0) or np.any(d > 1):
            raise ValueError(f"{name} must be non-empty probabilities in [0, 1]")
    d_real = np.clip(d_real, PROB_CLAMP, 1 - PROB_CLAMP)
    d_fake = np.clip(d_fake, PROB_CLAMP, 1 - PROB_CLAMP)
    return float(-np.mean(np.log(d_real)) - np.mean(np.log1p(-d_fake)))


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 1.0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be nonnegative")


def total_loss(recon, perceptual, adv, weights):
    return recon + weights.lambda1 * perceptual + weights.lambda2 * adv


def psnr(x_hat, x, peak=1.0):
    """PSNR in dB; identical inputs report :data:`PSNR_CAP_DB` instead of infinity."""
    if not peak > 0:
        raise ValueError("peak must be positive")
    err = mse(x_hat, x)
    if err == 0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(peak * peak / err))


def ssim(x_hat, x, peak=1.0, window=SSIM_WINDOW, k1=0.01, k2=0.03):
    """Mean SSIM over all fully-contained ``window x window`` uniform windows.

    Local statistics use population (1/n) moments. A trailing channel axis is
    handled by averaging the per-channel scores.
    """
    x_hat, x = check_same_shape(x_hat, x)
    if x.ndim == 3:
        return float(np.mean([ssim(x_hat[..., c], x[..., c], peak, window, k1, k2)
                              for c in range(x.shape[-1])]))
    if x.ndim != 2:
        raise ValueError(f"ssim expects H x W or H x W x C images, got shape {x.shape}")
    if x.shape[0] < window or x.shape[1] < window:
        raise ValueError(f"image {x.shape} smaller than the {window}x{window} window")
    if np.array_equal(x_hat, x):
        return 1.0
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2

    def local_mean(img):
        return sliding_window_view(img, (window, window)).mean(axis=(-2, -1))

    mu_a, mu_b = local_mean(x_hat), local_mean(x)
    var_a = local_mean(x_hat * x_hat) - mu_a ** 2
    var_b = local_mean(x * x) - mu_b ** 2
    cov = local_mean(x_hat * x) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass(frozen=True)
class SymbolAccuracy:
    overall: float
    per_stream: dict
    per_token: dict


def symbol_accuracy(sent, recovered):
    """Fraction of tokens whose whole index tuple survived.

    ``sent`` and ``recovered`` map stream names (e.g. ``"hi"``, ``"lo"``) to
    ``(N, D)`` index arrays.
    """
    if set(sent) != set(recovered):
        raise ValueError("sent and recovered carry different streams")
    per_token, per_stream = {}, {}
    for name in sent:
        a = np.asarray(sent[name])
        b = np.asarray(recovered[name])
        if a.shape != b.shape:
            raise ValueError(f"stream {name!r}: shape {a.shape} vs {b.shape}")
        ok = np.all(a == b, axis=-1)
        per_token[name] = ok
        per_stream[name] = float(ok.mean()) if ok.size else 1.0
    total = sum(v.size for v in per_token.values())
    hits = sum(int(v.sum()) for v in per_token.values())
    return SymbolAccuracy(hits / total if total else 1.0, per_stream, per_token)
