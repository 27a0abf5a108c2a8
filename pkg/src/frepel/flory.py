"""Closed-form Flory-index layer for self-repelling fBm.

Exponent ansatz nu_H(d) = (2H + 2) / (d + 2), critical dimension d_c = 2/H,
regime labels over the (H, d) plane, the Gaussian end-point density and the
dimension-reduction recursion

    nu_H(d) = (2 - H) nu_H(1) / ((d - 1) nu_H(1) + 2 - d H).

Dimensions are integers in the public contract, but every formula accepts
real ``d`` so the regime map can be drawn over a continuous axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DomainError
from .fbm import check_hurst

__all__ = [
    "EDWARDS_WELL_DEFINED",
    "EDWARDS_CRITICAL",
    "NO_DOUBLE_POINTS",
    "FLORY_UNPHYSICAL_NU",
    "ABOVE_CRITICAL_DIMENSION",
    "DOUBLE_POINTS_PRESENT",
    "FloryPrediction",
    "RecursionDiagnostics",
    "flory_nu",
    "alt_flory_nu",
    "flory_index",
    "critical_dimension",
    "classify_regime",
    "gaussian_end_density",
    "brownian_end_density",
    "recursion_extrapolate",
    "recursion_invariant",
    "kosmas_freed_residual",
    "critical_regime_fixed_point_check",
    "interpolation_constraints_check",
    "slab_exponent",
    "recursion_diagnostics",
    "regime_map",
    "boundary_curves",
]

EDWARDS_WELL_DEFINED = "edwards-well-defined"
EDWARDS_CRITICAL = "edwards-critical"
NO_DOUBLE_POINTS = "no-double-points"
FLORY_UNPHYSICAL_NU = "flory-unphysical-nu"
ABOVE_CRITICAL_DIMENSION = "above-critical-dimension"
DOUBLE_POINTS_PRESENT = "double-points-present"

# relative tolerance for deciding H*d == 1 or H*d == 2 on floating inputs
_BOUNDARY_RTOL = 1e-12


def _check_dim(d) -> float:
    d = float(d)
    if not (d > 0 and math.isfinite(d)):
        raise DomainError(f"dimension must be positive, got {d!r}")
    return d


def flory_nu(h, d):
    """Raw ansatz (2H + 2) / (d + 2); no domain checks, array friendly."""
    return (2.0 * np.asarray(h, dtype=float) + 2.0) / (np.asarray(d, dtype=float) + 2.0)


def alt_flory_nu(h, d):
    """(2 - H) / (d + 1 - d H): the recursion seeded with nu_H(1) = 1."""
    h = np.asarray(h, dtype=float)
    d = np.asarray(d, dtype=float)
    return (2.0 - h) / (d + 1.0 - d * h)


@dataclass(frozen=True)
class FloryPrediction:
    h: float
    d: float
    nu: float
    nu_clipped: float
    physical: bool
    regime: frozenset
    nu_d1_piecewise: float | None = None

    def to_dict(self) -> dict:
        out = {
            "hurst": self.h,
            "dim": self.d,
            "nu": self.nu,
            "nu_clipped": self.nu_clipped,
            "physical": self.physical,
            "regime": sorted(self.regime),
            "critical_dimension": critical_dimension(self.h),
        }
        if self.nu_d1_piecewise is not None:
            out["nu_d1_piecewise"] = self.nu_d1_piecewise
        return out


def critical_dimension(h: float) -> float:
    return 2.0 / check_hurst(h)


def _close(a: float, b: float) -> bool:
    return math.isclose(a, b, rel_tol=_BOUNDARY_RTOL, abs_tol=0.0)


def classify_regime(h: float, d) -> frozenset:
    """All labels that apply at (H, d); labels may coexist.

    ``double-points-present`` is the fallback for H > 1/d with Hd < 2, where
    double points exist but well-definedness of the epsilon -> 0 model is not
    covered.  ``above-critical-dimension`` marks d strictly above 2/H.
    """
    h = check_hurst(h)
    d = _check_dim(d)
    hd = h * d
    labels = set()
    if _close(hd, 1.0):
        labels.add(EDWARDS_CRITICAL)
    elif hd < 1.0:
        labels.add(EDWARDS_WELL_DEFINED)
    if hd >= 2.0 or _close(hd, 2.0):
        labels.add(NO_DOUBLE_POINTS)
        if not _close(hd, 2.0):
            labels.add(ABOVE_CRITICAL_DIMENSION)
    if float(flory_nu(h, d)) > 1.0:
        labels.add(FLORY_UNPHYSICAL_NU)
    if 1.0 < hd < 2.0 and not (_close(hd, 1.0) or _close(hd, 2.0)):
        labels.add(DOUBLE_POINTS_PRESENT)
    return frozenset(labels)


def flory_index(h: float, d) -> FloryPrediction:
    """Flory exponent with physicality flags.

    ``nu`` is the raw formula; ``nu_clipped = min(nu, 1)``.  For d = 1 the
    piecewise value ((2H + 2)/3 for H <= 1/2, else 1) is reported as well.
    """
    h = check_hurst(h)
    d = _check_dim(d)
    nu = float(flory_nu(h, d))
    physical = nu <= 1.0 and h * d < 2.0 and not _close(h * d, 2.0)
    piecewise = None
    if d == 1.0:
        piecewise = (2.0 * h + 2.0) / 3.0 if h <= 0.5 else 1.0
    return FloryPrediction(h, d, nu, min(nu, 1.0), physical, classify_regime(h, d), piecewise)


def gaussian_end_density(r: float, n: float, h: float, d) -> float:
    """Density of B^H(N) at a point of norm R: (2 pi N^2H)^(-d/2) exp(-R^2 / 2N^2H)."""
    h = check_hurst(h)
    d = _check_dim(d)
    if not n > 0:
        raise DomainError(f"N must be positive, got {n!r}")
    var = n ** (2.0 * h)
    return (2.0 * math.pi * var) ** (-0.5 * d) * math.exp(-r * r / (2.0 * var))


def brownian_end_density(r: float, n: float, d) -> float:
    """Brownian special case (2 pi N)^(-d/2) exp(-R^2 / 2N)."""
    d = _check_dim(d)
    if not n > 0:
        raise DomainError(f"N must be positive, got {n!r}")
    return (2.0 * math.pi * n) ** (-0.5 * d) * math.exp(-r * r / (2.0 * n))


def recursion_extrapolate(nu1: float, h: float, d) -> float:
    """nu_H(d) from nu_H(1) through the dimension-reduction recursion."""
    h = check_hurst(h)
    d = _check_dim(d)
    denom = (d - 1.0) * nu1 + 2.0 - d * h
    if denom == 0:
        raise DomainError(f"recursion denominator vanishes at nu1={nu1}, H={h}, d={d}")
    return (2.0 - h) * nu1 / denom


def recursion_invariant(nu: float, h: float, d) -> float:
    """(1/nu) (nu - H) / (2 - H d), the same for every d along a solution."""
    h = check_hurst(h)
    d = _check_dim(d)
    if nu == 0:
        raise DomainError("recursion invariant undefined for nu = 0")
    denom = 2.0 - h * d
    if denom == 0 or _close(h * d, 2.0):
        raise DomainError(f"recursion invariant undefined at H*d = 2 (H={h}, d={d})")
    return (nu - h) / (nu * denom)


def kosmas_freed_residual(nu1: float, nud: float, d) -> float:
    """LHS - RHS of 2 - 1/nu(d) = ((4 - d)/3)(2 - 1/nu(1)); Brownian case only."""
    if nu1 == 0 or nud == 0:
        raise DomainError("Kosmas-Freed relation undefined for a zero exponent")
    d = _check_dim(d)
    return (2.0 - 1.0 / nud) - (4.0 - d) / 3.0 * (2.0 - 1.0 / nu1)


def critical_regime_fixed_point_check(nu1: float, h: float) -> float:
    if not nu1 > 0:
        raise DomainError(f"nu1 must be positive, got {nu1!r}")
    h = check_hurst(h)
    return recursion_extrapolate(nu1, h, 2.0 / h) - h


def interpolation_constraints_check(candidate: Callable[[float], float], d) -> tuple[float, float]:
    """Residuals of F(1/2) = 3/(d+2) and F(2/d) = 2/d for an exponent function F(H)."""
    d = _check_dim(d)
    ff = float(candidate(0.5)) - 3.0 / (d + 2.0)
    cp = float(candidate(2.0 / d)) - 2.0 / d
    return ff, cp


def slab_exponent(h: float, d) -> float:
    """y from 1 + y/2 = nu_H(d-1) / nu_H(d) under the Flory ansatz (d >= 2)."""
    h = check_hurst(h)
    d = _check_dim(d)
    if d < 2:
        raise DomainError("the slab exponent needs d >= 2")
    return 2.0 * (float(flory_nu(h, d - 1)) / float(flory_nu(h, d)) - 1.0)


@dataclass(frozen=True)
class RecursionDiagnostics:
    h: float
    d: float
    nu: float
    invariant_value: float
    expected: float
    extrapolated_nu: float
    slab_exponent_y: float | None
    x_exponent: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def recursion_diagnostics(h: float, d, nu: float | None = None) -> RecursionDiagnostics:
    """Recursion quantities at (H, d) for an exponent (the Flory value by default).

    ``x_exponent`` solves 2 nu = 2H + x (2 - H d) for the power-law exponent x.
    """
    h = check_hurst(h)
    d = _check_dim(d)
    if nu is None:
        nu = float(flory_nu(h, d))
    y = slab_exponent(h, d) if d >= 2 else None
    return RecursionDiagnostics(
        h=h,
        d=d,
        nu=nu,
        invariant_value=recursion_invariant(nu, h, d),
        expected=1.0 / (2.0 * h + 2.0),
        extrapolated_nu=recursion_extrapolate((2.0 * h + 2.0) / 3.0, h, d),
        slab_exponent_y=y,
        x_exponent=(2.0 * nu - 2.0 * h) / (2.0 - h * d),
    )


def regime_map(hurst_values, dim_values) -> list[dict]:
    """Rows (hurst, dim, nu, nu_clipped, labels) over a grid, H varying fastest."""
    rows = []
    for d in dim_values:
        for h in hurst_values:
            pred = flory_index(h, d)
            rows.append({
                "hurst": pred.h,
                "dim": pred.d,
                "nu": pred.nu,
                "nu_clipped": pred.nu_clipped,
                "labels": sorted(pred.regime),
            })
    return rows


def boundary_curves(hurst_values) -> dict[str, np.ndarray]:
    """d as a function of H along the three boundaries of the domain plot.

    nu = 1 at d = 2H, the critical dimension d = 2/H, and the existence
    boundary of the epsilon -> 0 model d = 1/H.
    """
    h = np.asarray(hurst_values, dtype=float)
    return {"nu_equals_one": 2.0 * h, "critical": 2.0 / h, "existence": 1.0 / h}
