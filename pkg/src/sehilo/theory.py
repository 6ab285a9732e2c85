"""Correct-quantization probability of a uniform quantizer under AWGN.

A uniform quantizer with step ``delta`` recovers an interior point exactly
when the noise stays inside half a step, so

    P_single = erf(delta / (2 sqrt(2) sigma))
    P_multi  = prod_i P_single,i

The Monte Carlo estimator below checks this against the FSQ codec itself by
perturbing codeword representatives in the scaled domain, where the level
spacing is ``alpha``.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from sehilo.fsq import indices_to_scaled, requantize
from sehilo.rng import derive_seed, make_rng

CODEWORD_SETS = ("all", "interior", "edge")
DEFAULT_CHUNK = 1 << 17


@dataclass(frozen=True)
class UniformQuantizerSpec:
    lower: float
    upper: float
    levels: int

    def __post_init__(self):
        if int(self.levels) < 2:
            raise ValueError("levels must be >= 2")
        if not self.upper > self.lower:
            raise ValueError("upper must exceed lower")

    @property
    def step(self):
        return (self.upper - self.lower) / (self.levels - 1)

    @property
    def points(self):
        return self.lower + np.arange(self.levels) * self.step


def fsq_specs(cfg):
    """Per-dimension uniform-quantizer view of an FSQ config in the scaled domain."""
    return [
        UniformQuantizerSpec(float(lo) * cfg.alpha, float(hi) * cfg.alpha, int(m))
        for lo, hi, m in zip(cfg.level_low, cfg.level_high, cfg.levels)
    ]


def p_correct_step(delta, sigma):
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma!r}")
    return float(erf(delta / (2.0 * math.sqrt(2.0) * sigma)))


def p_correct_single(spec, sigma):
    return p_correct_step(spec.step, sigma)


def p_correct_multi(specs, sigma, n_dims=None):
    """Joint recovery probability over independent dimensions.

    ``specs`` may be a list (one spec per dimension) or a single spec repeated
    ``n_dims`` times.
    """
    if isinstance(specs, UniformQuantizerSpec):
        if n_dims is None or n_dims < 1:
            raise ValueError("n_dims >= 1 required with a single spec")
        return p_correct_single(specs, sigma) ** n_dims
    specs = list(specs)
    if not specs:
        raise ValueError("empty spec list")
    if n_dims is not None and n_dims != len(specs):
        raise ValueError(f"n_dims={n_dims} disagrees with {len(specs)} specs")
    return math.prod(p_correct_single(s, sigma) for s in specs)


def predicted_rate(cfg, sigma):
    """Interior-codeword recovery probability for ``cfg``; 1.0 in the noiseless limit."""
    if sigma == 0:
        return 1.0
    return p_correct_multi(fsq_specs(cfg), sigma)


@dataclass(frozen=True)
class MCResult:
    n_trials: int
    n_correct: int
    dim_correct: tuple
    codewords: str
    seed: int

    @property
    def rate(self):
        return self.n_correct / self.n_trials

    @property
    def stderr(self):
        p = self.rate
        return math.sqrt(p * (1.0 - p) / self.n_trials)

    @property
    def dim_rates(self):
        return tuple(c / self.n_trials for c in self.dim_correct)

    @property
    def pooled_dim_rate(self):
        """Per-dimension success rate pooled over all dimensions."""
        return sum(self.dim_correct) / (self.n_trials * len(self.dim_correct))

    @property
    def pooled_dim_stderr(self):
        p = self.pooled_dim_rate
        return math.sqrt(p * (1.0 - p) / (self.n_trials * len(self.dim_correct)))


def sample_codewords(cfg, n, rng, codewords="all"):
    m = cfg.m
    if codewords == "all":
        return rng.integers(0, m, size=(n, cfg.dim))
    if codewords == "interior":
        if np.any(m < 3):
            raise ValueError("interior codewords need every level count >= 3")
        return rng.integers(1, m - 1, size=(n, cfg.dim))
    if codewords == "edge":
        top = rng.integers(0, 2, size=(n, cfg.dim)).astype(bool)
        return np.where(top, m - 1, 0)
    raise ValueError(f"codewords must be one of {CODEWORD_SETS}, got {codewords!r}")


def _mc_chunk(cfg, sigma, n, seed, codewords):
    rng = make_rng(seed)
    idx = sample_codewords(cfg, n, rng, codewords)
    sent = indices_to_scaled(idx, cfg)
    noise = rng.standard_normal(sent.shape) * sigma
    ok = requantize(sent + noise, cfg).indices == idx
    return int(np.count_nonzero(ok.all(axis=1))), ok.sum(axis=0)


def mc_correct_rate(
    cfg, sigma, n_trials, seed=0, codewords="all", chunk_size=DEFAULT_CHUNK, n_workers=1
):
    """Monte Carlo recovery rate of FSQ codewords under scaled-domain AWGN.

    Trials are split into fixed-size chunks; chunk ``j`` draws from seed
    ``seed ^ j``, so the result does not depend on ``n_workers``.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    sizes = [chunk_size] * (n_trials // chunk_size)
    if n_trials % chunk_size:
        sizes.append(n_trials % chunk_size)
    jobs = [(cfg, sigma, n, derive_seed(seed, j), codewords) for j, n in enumerate(sizes)]
    if n_workers > 1:
        with ThreadPoolExecutor(n_workers) as pool:
            parts = list(pool.map(lambda a: _mc_chunk(*a), jobs))
    else:
        parts = [_mc_chunk(*a) for a in jobs]
    n_correct = sum(p[0] for p in parts)
    dim_correct = np.sum([p[1] for p in parts], axis=0)
    return MCResult(
        n_trials=n_trials,
        n_correct=n_correct,
        dim_correct=tuple(int(c) for c in dim_correct),
        codewords=codewords,
        seed=seed,
    )


@dataclass(frozen=True)
class ReportRow:
    sigma: float
    p_single: float
    p_multi: float
    mc_rate: float
    mc_stderr: float
    mc_rate_all: float
    mc_stderr_all: float


def robustness_report(cfg, sigma_grid, n_trials=100_000, seed=0):
    """Theory vs Monte Carlo over a sigma grid.

    ``mc_rate`` is conditioned on interior codewords (where the closed form is
    exact); ``mc_rate_all`` draws codewords uniformly from the whole codebook.
    """
    sigma_grid = list(sigma_grid)
    if not sigma_grid:
        raise ValueError("sigma grid is empty")
    interior_ok = all(m >= 3 for m in cfg.levels)
    rows = []
    for i, sigma in enumerate(sigma_grid):
        row_seed = derive_seed(seed, i)
        single = 1.0 if sigma == 0 else p_correct_step(cfg.alpha, sigma)
        full = mc_correct_rate(cfg, sigma, n_trials, row_seed, "all")
        inner = (
            mc_correct_rate(cfg, sigma, n_trials, row_seed, "interior") if interior_ok else full
        )
        rows.append(
            ReportRow(
                sigma=float(sigma),
                p_single=single,
                p_multi=predicted_rate(cfg, sigma),
                mc_rate=inner.rate,
                mc_stderr=inner.stderr,
                mc_rate_all=full.rate,
                mc_stderr_all=full.stderr,
            )
        )
    return rows

