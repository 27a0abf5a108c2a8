"""Batch-means error bars, ratio estimators and weighted log-log fits."""

from __future__ import annotations

import math

import numpy as np

from .errors import DomainError

MIN_BLOCKS = 8


def _blocks(values: np.ndarray, block_size: int) -> np.ndarray:
    n_blocks = values.shape[-1] // block_size
    total = n_blocks * int(np.prod(values.shape[:-1]))
    if total < MIN_BLOCKS:
        raise DomainError(
            f"{values.size} samples in blocks of {block_size} give {total} "
            f"blocks; at least {MIN_BLOCKS} are required"
        )
    # trailing remainder is dropped so every block has equal weight
    used = values[..., : n_blocks * block_size]
    return used.reshape(*values.shape[:-1], n_blocks, block_size).mean(axis=-1)


def batch_means(values, block_size: int) -> tuple[float, float]:
    """Mean and standard error from means of consecutive blocks.

    ``values`` may be 2-D (independent chains x time); blocks never straddle
    two chains, and all chains contribute their blocks to one pool.
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    means = _blocks(values, block_size).ravel()
    n = means.size
    if np.all(means == means[0]):
        return float(means[0]), 0.0
    return float(means.mean()), float(means.std(ddof=1) / math.sqrt(n))


def ratio_batch_means(numerator, denominator, block_size: int) -> tuple[float, float]:
    """Ratio sum(num)/sum(den) with a delta-method standard error over blocks.

    With block means A_b, W_b and r = mean(A)/mean(W), the variance of r is
    estimated by var(A_b - r W_b) / (B * mean(W)^2).
    """
    num = np.asarray(numerator, dtype=float)
    den = np.asarray(denominator, dtype=float)
    a = _blocks(num, block_size)
    w = _blocks(den, block_size)
    w_bar = w.mean()
    if w_bar <= 0:
        raise DomainError("ratio estimator has zero total weight")
    r = a.mean() / w_bar
    resid = a - r * w
    b = resid.size
    se = math.sqrt(resid.var(ddof=1) / b) / w_bar if np.any(resid != resid[0]) else 0.0
    return float(r), float(se)


def effective_sample_size(weights) -> float:
    w = np.asarray(weights, dtype=float)
    s2 = float(np.sum(w * w))
    if s2 == 0:
        return 0.0
    return float(np.sum(w)) ** 2 / s2


def weighted_line_fit(x, y, sigma) -> dict:
    """Weighted least squares y = intercept + slope * x with known sigmas.

    Standard errors come from (X^T W X)^-1 with W = 1/sigma^2, i.e. the input
    uncertainties are taken as absolute.  Zero sigmas fall back to an
    unweighted fit.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        w = np.ones_like(x)
        absolute = False
    else:
        w = 1.0 / sigma**2
        absolute = True
    sw = w.sum()
    xm = (w * x).sum() / sw
    ym = (w * y).sum() / sw
    sxx = (w * (x - xm) ** 2).sum()
    if sxx == 0:
        raise DomainError("fit needs at least two distinct abscissae")
    slope = (w * (x - xm) * (y - ym)).sum() / sxx
    intercept = ym - slope * xm
    resid = y - (intercept + slope * x)
    chi2 = float((w * resid**2).sum())
    dof = x.size - 2
    if absolute:
        slope_var = 1.0 / sxx
        intercept_var = 1.0 / sw + xm**2 / sxx
    else:
        s2 = chi2 / dof if dof > 0 else 0.0
        slope_var = s2 / sxx
        intercept_var = s2 * (1.0 / sw + xm**2 / sxx)
    ss_tot = float((w * (y - ym) ** 2).sum())
    r_squared = 1.0 - chi2 / ss_tot if ss_tot > 0 else 1.0
    return {
        "slope": float(slope),
        "intercept": float(intercept),
        "slope_std_error": math.sqrt(slope_var),
        "intercept_std_error": math.sqrt(intercept_var),
        "r_squared": float(r_squared),
        "chi2": chi2,
        "dof": dof,
        "residuals": resid,
    }


def split_rhat(traces) -> float:
    """Split-chain potential scale reduction factor for traces (chains x steps).

    Each chain is cut in half, so a drift that every chain shares (slow burn-in
    from similar starts) inflates the value as well as disagreement between chains.
    """
    traces = np.atleast_2d(np.asarray(traces, dtype=float))
    half = traces.shape[1] // 2
    if half < 2:
        return float("nan")
    parts = np.concatenate([traces[:, :half], traces[:, half:2 * half]])
    within = parts.var(axis=1, ddof=1).mean()
    between = half * parts.mean(axis=1).var(ddof=1)
    if within == 0:
        return 1.0 if between == 0 else float("inf")
    pooled = (half - 1) / half * within + between / half
    return float(math.sqrt(pooled / within))
