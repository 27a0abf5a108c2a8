"""Exact sampling of d-dimensional fractional Brownian motion on a uniform grid.

Paths are built in increment (fractional Gaussian noise) space and summed,
either through a Cholesky factor of the Toeplitz increment covariance or
through circulant embedding with FFTs.  Coordinates are independent copies.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.linalg import lapack

from .errors import DomainError, EmbeddingError, FactorizationError

__all__ = [
    "check_hurst",
    "TimeGrid",
    "RngStream",
    "PathBundle",
    "FgnAutocovariance",
    "fbm_covariance",
    "fbm_covariance_matrix",
    "fgn_autocovariance",
    "cholesky_factor",
    "path_operator",
    "circulant_eigenvalues",
    "embedding_error_bound",
    "sample_paths_cholesky",
    "sample_paths_circulant",
    "sample_path_cholesky",
    "sample_path_circulant",
    "ScalingLawReport",
    "rescale_in_law_check",
]

CHOLESKY_SIZE_GUIDELINE = 4096
JITTER_SCALE = 1e-12


def check_hurst(h: float) -> float:
    h = float(h)
    if not (0.0 < h < 1.0) or not math.isfinite(h):
        raise DomainError(f"Hurst parameter must lie in (0, 1), got {h!r}")
    return h


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_k = k * dt, k = 0..n_steps, with dt = horizon / n_steps."""

    n_steps: int
    horizon: float

    def __post_init__(self):
        if int(self.n_steps) != self.n_steps or self.n_steps < 2:
            raise DomainError(f"n_steps must be an integer >= 2, got {self.n_steps!r}")
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise DomainError(f"horizon must be positive and finite, got {self.horizon!r}")
        object.__setattr__(self, "n_steps", int(self.n_steps))
        object.__setattr__(self, "horizon", float(self.horizon))

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def rescaled(self, a: float) -> "TimeGrid":
        """Same number of steps, horizon (and dt) multiplied by ``a``."""
        return TimeGrid(self.n_steps, a * self.horizon)


StreamId = Union[int, tuple]


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream keyed by a master seed and a stream id.

    Streams are derived with ``numpy.random.SeedSequence`` spawn keys, so
    distinct ids give independent PCG64 generators by construction.
    """

    seed: int
    stream_id: StreamId = 0

    def __post_init__(self):
        if not (0 <= int(self.seed) < 2**64):
            raise DomainError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")

    @property
    def key(self) -> tuple:
        sid = self.stream_id
        return tuple(int(s) for s in sid) if isinstance(sid, tuple) else (int(sid),)

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=self.key)
        return np.random.Generator(np.random.PCG64(ss))

    def substream(self, k: int) -> "RngStream":
        return RngStream(self.seed, self.key + (int(k),))


@dataclass(frozen=True)
class FgnAutocovariance:
    hurst: float
    dt: float
    values: np.ndarray


@dataclass(frozen=True, eq=False)
class PathBundle:
    """One discretized path; ``positions`` has shape (n_steps + 1, dimension)."""

    hurst: float
    grid: TimeGrid
    dimension: int
    positions: np.ndarray = field(repr=False)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.shape != (self.grid.n_steps + 1, self.dimension):
            raise DomainError(
                f"positions shape {pos.shape} does not match grid/dimension "
                f"({self.grid.n_steps + 1}, {self.dimension})"
            )
        if not np.all(np.isfinite(pos)):
            raise DomainError("positions must be finite")
        object.__setattr__(self, "positions", pos)

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @property
    def end_to_end_squared(self) -> float:
        r = self.positions[-1] - self.positions[0]
        return float(r @ r)

    def with_positions(self, positions: np.ndarray) -> "PathBundle":
        return PathBundle(self.hurst, self.grid, self.dimension, positions)

    def to_rows(self) -> list[list[float]]:
        """Rows ``[t, x_1, ..., x_d]`` for CSV export."""
        return [[float(t), *map(float, x)] for t, x in zip(self.times, self.positions)]


def fbm_covariance(h: float, s, t):
    """Per-coordinate covariance 0.5 * (t^2H + s^2H - |t - s|^2H).

    Accepts scalars or broadcastable arrays of nonnegative times.
    """
    h = check_hurst(h)
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(s < 0) or np.any(t < 0):
        raise DomainError("fBm covariance is defined for nonnegative times only")
    two_h = 2.0 * h
    out = 0.5 * (t**two_h + s**two_h - np.abs(t - s) ** two_h)
    return float(out) if out.ndim == 0 else out


def fbm_covariance_matrix(h: float, grid: TimeGrid) -> np.ndarray:
    """Covariance of (B(t_1), ..., B(t_n)) for one coordinate (t_0 = 0 dropped)."""
    t = grid.times[1:]
    return fbm_covariance(h, t[:, None], t[None, :])


def _fgn_gamma(h: float, dt: float, k) -> np.ndarray:
    k = np.abs(np.asarray(k, dtype=float))
    two_h = 2.0 * h
    return 0.5 * dt**two_h * ((k + 1.0) ** two_h - 2.0 * k**two_h + np.abs(k - 1.0) ** two_h)


def fgn_autocovariance(h: float, grid: TimeGrid) -> FgnAutocovariance:
    """Autocovariance of the increments B(t_{k+1}) - B(t_k), lags 0..n_steps-1."""
    h = check_hurst(h)
    values = _fgn_gamma(h, grid.dt, np.arange(grid.n_steps))
    # H = 1/2 gives exact zeros for k >= 1 analytically; kill rounding residue.
    if h == 0.5:
        values[1:] = 0.0
    values.setflags(write=False)
    return FgnAutocovariance(h, grid.dt, values)


def _toeplitz(gamma: np.ndarray) -> np.ndarray:
    n = gamma.size
    idx = np.abs(np.arange(n)[:, None] - np.arange(n)[None, :])
    return gamma[idx]


@functools.lru_cache(maxsize=64)
def _cholesky_cached(h: float, n_steps: int, horizon: float, jitter: bool) -> np.ndarray:
    grid = TimeGrid(n_steps, horizon)
    gamma = fgn_autocovariance(h, grid).values
    cov = _toeplitz(gamma)
    if jitter:
        cov = cov + JITTER_SCALE * gamma[0] * np.eye(n_steps)
    factor, info = lapack.dpotrf(cov, lower=1, clean=1, overwrite_a=0)
    if info > 0:
        raise FactorizationError(
            int(info),
            f"increment covariance is not positive definite: leading minor of order "
            f"{info} failed (H={h}, n_steps={n_steps}, jitter={jitter})",
        )
    if info < 0:
        raise FactorizationError(0, f"dpotrf rejected argument {-info}")
    factor = np.ascontiguousarray(factor)
    factor.setflags(write=False)
    return factor


def cholesky_factor(h: float, grid: TimeGrid, jitter: bool = False) -> np.ndarray:
    """Lower Cholesky factor of the Toeplitz increment covariance.

    Raises ``FactorizationError`` naming the failing leading minor.  With
    ``jitter=True`` a single ridge of 1e-12 * gamma(0) is added beforehand.
    """
    h = check_hurst(h)
    if grid.n_steps > CHOLESKY_SIZE_GUIDELINE:
        raise DomainError(
            f"n_steps={grid.n_steps} exceeds the Cholesky size guideline "
            f"({CHOLESKY_SIZE_GUIDELINE}); use the circulant sampler"
        )
    return _cholesky_cached(h, grid.n_steps, grid.horizon, bool(jitter))


def path_operator(h: float, grid: TimeGrid, jitter: bool = False) -> np.ndarray:
    """Matrix S with positions[1:] = S @ z for standard normal z (one coordinate)."""
    s = np.cumsum(cholesky_factor(h, grid, jitter), axis=0)
    s.setflags(write=False)
    return s


def circulant_eigenvalues(h: float, grid: TimeGrid) -> np.ndarray:
    """Eigenvalues of the size-2n circulant embedding of the increment covariance."""
    h = check_hurst(h)
    n = grid.n_steps
    gamma = fgn_autocovariance(h, grid).values
    row = np.empty(2 * n)
    row[:n] = gamma
    row[n] = 0.0 if h == 0.5 else _fgn_gamma(h, grid.dt, n)
    row[n + 1:] = gamma[1:][::-1]
    return np.fft.fft(row).real


def embedding_error_bound(eigenvalues: np.ndarray) -> float:
    """Max entrywise covariance error caused by clamping negative eigenvalues to 0."""
    neg = eigenvalues[eigenvalues < 0]
    return float(-neg.sum() / eigenvalues.size) if neg.size else 0.0


def _checked_eigenvalues(h: float, grid: TimeGrid, clamp_eigenvalues: bool):
    lam = circulant_eigenvalues(h, grid)
    # rounding-level negatives are treated as zeros
    tol = 1e-10 * max(float(lam.max()), 0.0)
    lam_min = float(lam.min())
    if lam_min < -tol and not clamp_eigenvalues:
        raise EmbeddingError(
            lam_min,
            f"circulant embedding has negative eigenvalue {lam_min:.3e} "
            f"(H={h}, n_steps={grid.n_steps}); enable clamp-eigenvalues to truncate",
        )
    bound = embedding_error_bound(lam) if lam_min < -tol else 0.0
    return np.maximum(lam, 0.0), bound


def sample_paths_cholesky(h, grid: TimeGrid, d: int, rng: RngStream, size: int,
                          jitter: bool = False) -> np.ndarray:
    """Array of ``size`` paths, shape (size, n_steps + 1, d)."""
    d = _check_dimension(d)
    s = path_operator(h, grid, jitter)
    z = rng.generator().standard_normal((size, grid.n_steps, d))
    out = np.zeros((size, grid.n_steps + 1, d))
    out[:, 1:, :] = np.matmul(s, z)
    return out


def sample_paths_circulant(h, grid: TimeGrid, d: int, rng: RngStream, size: int,
                           clamp_eigenvalues: bool = False) -> np.ndarray:
    """Array of ``size`` paths via circulant embedding, shape (size, n_steps + 1, d).

    Each complex FFT yields two independent coordinates (real and imaginary part).
    """
    d = _check_dimension(d)
    lam, _ = _checked_eigenvalues(check_hurst(h), grid, clamp_eigenvalues)
    n = grid.n_steps
    m = 2 * n
    pairs = (d + 1) // 2
    w = rng.generator().standard_normal((size, pairs, 2, m))
    y = np.fft.fft(np.sqrt(lam) * (w[:, :, 0, :] + 1j * w[:, :, 1, :]), axis=-1) / math.sqrt(m)
    # interleave so coordinates 2p and 2p+1 come from the same FFT
    inc = np.stack([y.real[..., :n], y.imag[..., :n]], axis=2).reshape(size, 2 * pairs, n)
    inc = inc[:, :d, :].transpose(0, 2, 1)
    out = np.zeros((size, n + 1, d))
    np.cumsum(inc, axis=1, out=out[:, 1:, :])
    return out


def sample_path_cholesky(h, grid: TimeGrid, d: int, rng: RngStream,
                         jitter: bool = False) -> PathBundle:
    pos = sample_paths_cholesky(h, grid, d, rng, 1, jitter)[0]
    return PathBundle(check_hurst(h), grid, d, pos)


def sample_path_circulant(h, grid: TimeGrid, d: int, rng: RngStream,
                          clamp_eigenvalues: bool = False) -> PathBundle:
    pos = sample_paths_circulant(h, grid, d, rng, 1, clamp_eigenvalues)[0]
    return PathBundle(check_hurst(h), grid, d, pos)


def _check_dimension(d) -> int:
    if int(d) != d or d < 1:
        raise DomainError(f"dimension must be a positive integer, got {d!r}")
    return int(d)


@dataclass
class ScalingLawReport:
    """Per-gridpoint comparison of B(t_k) against a^-H B(a t_k)."""

    a: float
    times: np.ndarray
    mean_lhs: np.ndarray
    mean_rhs: np.ndarray
    var_lhs: np.ndarray
    var_rhs: np.ndarray
    var_se_lhs: np.ndarray
    var_se_rhs: np.ndarray
    mean_z: np.ndarray
    var_z: np.ndarray

    @property
    def max_abs_z(self) -> float:
        return float(max(np.max(np.abs(self.mean_z)), np.max(np.abs(self.var_z))))


def _moments(samples: np.ndarray):
    # samples: (count, n_points); columns are gridpoints
    count = samples.shape[0]
    mean = samples.mean(axis=0)
    centred = samples - mean
    var = (centred**2).mean(axis=0) * count / (count - 1)
    m4 = (centred**4).mean(axis=0)
    var_se = np.sqrt(np.maximum(m4 - var**2, 0.0) / count)
    mean_se = np.sqrt(var / count)
    return mean, mean_se, var, var_se


def _safe_z(diff, se):
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, diff / np.where(se > 0, se, 1.0), 0.0)
    return np.where(diff == 0, 0.0, z)


def rescale_in_law_check(h, grid: TimeGrid, d: int, a: float, n_replicas: int,
                         rng: RngStream, same_stream: bool = False) -> ScalingLawReport:
    """Compare ensembles of B(t_k) and a^-H B(a t_k) gridpoint by gridpoint.

    Coordinates are pooled as independent samples.  The right arm samples on the
    grid rescaled by ``a`` (same n_steps).  Discrepancies are in standard-error
    units.  With ``same_stream`` both arms share one random stream.
    """
    h = check_hurst(h)
    if not a > 0:
        raise DomainError(f"scale factor a must be positive, got {a!r}")
    lhs = sample_paths_cholesky(h, grid, d, rng.substream(0), n_replicas)
    rhs_rng = rng.substream(0) if same_stream else rng.substream(1)
    rhs = a ** (-h) * sample_paths_cholesky(h, grid.rescaled(a), d, rhs_rng, n_replicas)
    flat_l = lhs.transpose(0, 2, 1).reshape(-1, grid.n_steps + 1)
    flat_r = rhs.transpose(0, 2, 1).reshape(-1, grid.n_steps + 1)
    ml, mse_l, vl, vse_l = _moments(flat_l)
    mr, mse_r, vr, vse_r = _moments(flat_r)
    mean_z = _safe_z(ml - mr, np.hypot(mse_l, mse_r))
    var_z = _safe_z(vl - vr, np.hypot(vse_l, vse_r))
    return ScalingLawReport(a, grid.times, ml, mr, vl, vr, vse_l, vse_r, mean_z, var_z)
