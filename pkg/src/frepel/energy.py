"""Mollified self-intersection local time and Edwards energy of discrete paths.

The double time integral of delta(B(s) - B(t)) is replaced by a Riemann sum
over grid pairs of the Gaussian mollifier of variance epsilon:

    L_eps = dt^2 * sum_{i, j} delta_eps(x_i - x_j)

By default the i == j terms are left out.  They add the path-independent
constant (n_steps + 1) * dt^2 * delta_eps(0), which cancels in every
normalized Gibbs average.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import DomainError
from .fbm import PathBundle, TimeGrid, check_hurst

__all__ = [
    "check_epsilon",
    "check_coupling",
    "default_epsilon",
    "EnergyReport",
    "mollified_delta",
    "local_time",
    "local_times",
    "local_time_delta",
    "energy",
]

COMPENSATED_THRESHOLD = 1024
_CHUNK_ELEMENTS = 2_000_000


def check_epsilon(epsilon: float) -> float:
    epsilon = float(epsilon)
    if not (epsilon > 0 and math.isfinite(epsilon)):
        raise DomainError(f"mollifier width epsilon must be > 0, got {epsilon!r}")
    return epsilon


def check_coupling(g: float) -> float:
    g = float(g)
    if not (g >= 0 and math.isfinite(g)):
        raise DomainError(f"coupling g must be >= 0 (repulsive model), got {g!r}")
    return g


def default_epsilon(h: float, grid: TimeGrid, c: float = 1.0) -> float:
    """Grid-matched width c * dt^(2H): the variance of one increment when c = 1."""
    return check_epsilon(c * grid.dt ** (2.0 * check_hurst(h)))


@dataclass(frozen=True)
class EnergyReport:
    local_time: float
    epsilon: float
    diagonal_included: bool
    g: float = 0.0

    @property
    def energy(self) -> float:
        return self.g * self.local_time

    def with_coupling(self, g: float) -> "EnergyReport":
        return replace(self, g=check_coupling(g))


def _norm(epsilon: float, d: int) -> float:
    return (2.0 * math.pi * epsilon) ** (-0.5 * d)


def mollified_delta(x, epsilon: float, d: int | None = None):
    """Gaussian mollifier (2 pi eps)^(-d/2) exp(-|x|^2 / (2 eps)).

    ``x`` may be a d-vector or an array of d-vectors along the last axis.
    """
    epsilon = check_epsilon(epsilon)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if d is None:
        d = x.shape[-1]
    elif x.shape[-1] != d:
        raise DomainError(f"vector length {x.shape[-1]} does not match d={d}")
    out = _norm(epsilon, d) * np.exp(-np.sum(x * x, axis=-1) / (2.0 * epsilon))
    return float(out) if out.ndim == 0 else out


def local_times(positions: np.ndarray, dt: float, epsilon: float,
                diagonal_included: bool = False) -> np.ndarray:
    """Vectorized L_eps for a batch of paths of shape (m, n_points, d)."""
    epsilon = check_epsilon(epsilon)
    positions = np.asarray(positions, dtype=float)
    m, n_points, d = positions.shape
    iu, ju = np.triu_indices(n_points, k=1)
    out = np.empty(m)
    chunk = max(1, _CHUNK_ELEMENTS // max(1, iu.size * d))
    scale = -0.5 / epsilon
    for start in range(0, m, chunk):
        block = positions[start:start + chunk]
        diff = block[:, iu, :] - block[:, ju, :]
        sq = np.einsum("mpd,mpd->mp", diff, diff)
        out[start:start + chunk] = np.exp(scale * sq).sum(axis=1)
    # ordered pairs: each unordered off-diagonal pair counts twice
    out *= 2.0
    if diagonal_included:
        out += n_points
    return out * (dt * dt * _norm(epsilon, d))


def _local_time_compensated(positions: np.ndarray, epsilon: float,
                            diagonal_included: bool) -> float:
    scale = -0.5 / epsilon
    terms = []
    for i in range(positions.shape[0]):
        diff = positions[i] - positions
        row = np.exp(scale * np.einsum("pd,pd->p", diff, diff))
        if not diagonal_included:
            row[i] = 0.0
        terms.append(math.fsum(row))
    return math.fsum(terms)


def local_time(path: PathBundle, epsilon: float,
               diagonal_included: bool = False) -> EnergyReport:
    """Mollified self-intersection local time of one path (g = 0 in the report).

    Paths longer than 1024 steps are summed row by row with ``math.fsum``.
    """
    epsilon = check_epsilon(epsilon)
    dt = path.grid.dt
    if path.grid.n_steps > COMPENSATED_THRESHOLD:
        raw = _local_time_compensated(path.positions, epsilon, diagonal_included)
        value = raw * dt * dt * _norm(epsilon, path.dimension)
    else:
        value = float(local_times(path.positions[None], dt, epsilon, diagonal_included)[0])
    return EnergyReport(value, epsilon, bool(diagonal_included))


def local_time_delta(path: PathBundle, epsilon: float, k: int, new_point,
                     diagonal_included: bool = False) -> float:
    """Change of L_eps when position ``k`` is replaced by ``new_point``.

    Only the 2 * n_steps ordered pairs involving ``k`` are summed, O(n).  The
    diagonal term does not depend on the path, so the flag has no effect.
    """
    epsilon = check_epsilon(epsilon)
    n_points = path.grid.n_steps + 1
    if not (0 <= k < n_points):
        raise IndexError(f"index {k} out of range for a path with {n_points} points")
    new_point = np.asarray(new_point, dtype=float).reshape(path.dimension)
    others = np.delete(path.positions, k, axis=0)
    old = mollified_delta(path.positions[k] - others, epsilon)
    new = mollified_delta(new_point - others, epsilon)
    dt = path.grid.dt
    return 2.0 * dt * dt * float(np.sum(new - old))


def energy(g: float, local_time_value: float) -> float:
    g = check_coupling(g)
    if local_time_value < 0:
        raise DomainError(f"local time must be >= 0, got {local_time_value!r}")
    return g * local_time_value
