"""Sweeps and statistical experiments on top of the Gibbs estimators.

Every experiment derives the random stream of each independent arm (ladder
point, side of an identity, slab rung) from the sampler config's stream with
``RngStream.substream``, so a plan plus its seed reproduces bit-exactly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import flory
from .energy import local_times
from .errors import DomainError, ZeroSurvivorError
from .fbm import RngStream, TimeGrid, check_hurst, sample_paths_cholesky
from .gibbs import (PRIOR_IMPORTANCE, EstimatorResult, SamplerConfig, SlabConstraint,
                    WeightedEnsemble, _ratio_from_ensemble, draw_prior_paths,
                    estimate_partition, estimate_r2, estimate_r2_slab)
from .stats import weighted_line_fit

log = logging.getLogger(__name__)

__all__ = [
    "ExperimentPlan",
    "SweepResult",
    "FitResult",
    "InvarianceTestReport",
    "EndDensityReport",
    "EpsScanPoint",
    "SlabRung",
    "SlabExperimentResult",
    "run_r2_sweep",
    "fit_exponent",
    "test_scale_invariance",
    "verify_end_density",
    "epsilon_stability_scan",
    "slab_reduction_experiment",
]

MIN_LADDER = 4
FIT_MIN_HORIZON = 16.0


def _substream_config(config: SamplerConfig, k: int) -> SamplerConfig:
    key = RngStream(config.seed, config.stream_id).substream(k).key
    return replace(config, stream_id=key)


@dataclass(frozen=True)
class ExperimentPlan:
    """An N-ladder experiment.

    ``n_steps_policy`` is ``fixed-count`` (same n_steps at every N, dt grows
    with N) or ``fixed-dt`` (dt of the first rung kept).  The epsilon policy
    lives in ``config``: ``epsilon=None`` means eps_scale * dt^(2H) per rung.
    """

    h: float
    d: int
    ladder: tuple
    config: SamplerConfig
    n_steps: int = 32
    n_steps_policy: str = "fixed-count"
    fit_min_horizon: float | None = FIT_MIN_HORIZON

    def __post_init__(self):
        check_hurst(self.h)
        if int(self.d) != self.d or self.d < 1:
            raise DomainError(f"dimension must be a positive integer, got {self.d!r}")
        ladder = tuple(float(n) for n in self.ladder)
        object.__setattr__(self, "ladder", ladder)
        if len(ladder) < MIN_LADDER:
            raise DomainError(f"ladder needs at least {MIN_LADDER} horizons, got {len(ladder)}")
        if any(n <= 0 for n in ladder) or any(b <= a for a, b in zip(ladder, ladder[1:])):
            raise DomainError(f"ladder must be positive and strictly ascending: {ladder}")
        if self.n_steps_policy not in ("fixed-count", "fixed-dt"):
            raise DomainError(f"unknown n_steps policy {self.n_steps_policy!r}")

    def grid_for(self, horizon: float) -> TimeGrid:
        if self.n_steps_policy == "fixed-count":
            return TimeGrid(self.n_steps, horizon)
        dt0 = self.ladder[0] / self.n_steps
        return TimeGrid(max(2, int(round(horizon / dt0))), horizon)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["ladder"] = list(self.ladder)
        return out


@dataclass
class SweepResult:
    plan: ExperimentPlan
    points: list  # (N, EstimatorResult, epsilon, n_steps)

    @property
    def partial(self) -> bool:
        return any(not est.reliable for _, est, _, _ in self.points)

    @property
    def horizons(self) -> np.ndarray:
        return np.array([p[0] for p in self.points])

    @property
    def estimates(self) -> list[EstimatorResult]:
        return [p[1] for p in self.points]


def run_r2_sweep(plan: ExperimentPlan) -> SweepResult:
    points = []
    for i, horizon in enumerate(plan.ladder):
        grid = plan.grid_for(horizon)
        cfg = _substream_config(plan.config, i)
        est = estimate_r2(plan.h, grid, plan.d, cfg)
        eps = cfg.resolve_epsilon(plan.h, grid)
        log.info("N=%g r2=%.6g +- %.3g (%s)", horizon, est.value, est.std_error, est.quality)
        points.append((horizon, est, eps, grid.n_steps))
    return SweepResult(plan, points)


@dataclass
class FitResult:
    slope: float
    intercept: float
    slope_std_error: float
    r_squared: float
    horizons_used: list = field(default_factory=list)
    chi2: float = 0.0
    dof: int = 0

    @property
    def nu(self) -> float:
        return self.slope / 2.0

    @property
    def nu_std_error(self) -> float:
        return self.slope_std_error / 2.0

    def to_dict(self) -> dict:
        return {
            "nu": self.nu,
            "nu_std_error": self.nu_std_error,
            "slope": self.slope,
            "intercept": self.intercept,
            "slope_std_error": self.slope_std_error,
            "r_squared": self.r_squared,
            "chi2": self.chi2,
            "dof": self.dof,
            "horizons_used": list(self.horizons_used),
        }


def fit_exponent(sweep, min_horizon: float | None = None) -> FitResult:
    """Weighted least squares of log <R^2> on log N; nu = slope / 2.

    ``sweep`` is a ``SweepResult`` or a sequence of (N, value, std_error).
    Weights are 1/var(log <R^2>) = (value / std_error)^2.  Points below
    ``min_horizon`` are dropped only if at least four points remain.
    """
    if isinstance(sweep, SweepResult):
        rows = [(n, e.value, e.std_error) for n, e, _, _ in sweep.points]
        if min_horizon is None:
            min_horizon = sweep.plan.fit_min_horizon
    else:
        rows = [tuple(map(float, r)) for r in sweep]
    if len(rows) < MIN_LADDER:
        raise DomainError(f"fit needs at least {MIN_LADDER} ladder points, got {len(rows)}")
    if any(not (v > 0 and math.isfinite(v)) for _, v, _ in rows):
        raise DomainError("every sweep estimate must be finite and positive to fit a power law")
    if min_horizon is not None:
        kept = [r for r in rows if r[0] >= min_horizon]
        if len(kept) >= MIN_LADDER:
            rows = kept
    n = np.array([r[0] for r in rows])
    v = np.array([r[1] for r in rows])
    se = np.array([r[2] for r in rows])
    fit = weighted_line_fit(np.log(n), np.log(v), se / v)
    return FitResult(fit["slope"], fit["intercept"], fit["slope_std_error"], fit["r_squared"],
                     [float(x) for x in n], fit["chi2"], fit["dof"])


@dataclass
class InvarianceTestReport:
    lhs: EstimatorResult
    rhs: EstimatorResult
    combined_std_error: float
    z_score: float
    lhs_params: dict
    rhs_params: dict

    def to_dict(self) -> dict:
        return {
            "lhs": self.lhs.value,
            "lhs_std_error": self.lhs.std_error,
            "rhs": self.rhs.value,
            "rhs_std_error": self.rhs.std_error,
            "combined_std_error": self.combined_std_error,
            "z_score": self.z_score,
            "quality": "ok" if self.lhs.reliable and self.rhs.reliable else "flagged",
            "lhs_params": self.lhs_params,
            "rhs_params": self.rhs_params,
        }


def _z(diff: float, se: float) -> float:
    if diff == 0:
        return 0.0
    return abs(diff) / se if se > 0 else math.inf


def test_scale_invariance(h, d: int, g: float, horizon: float, a: float,
                          config: SamplerConfig, n_steps: int = 32,
                          same_stream: bool = False) -> InvarianceTestReport:
    """Compare Z(g, N) with Z(a^(Hd-2) g, aN) by independent Monte Carlo.

    Both sides use ``n_steps``; the right side's dt is a times larger and its
    mollifier width is a^(2H) times the left one, matching the continuum
    substitution on the grid.
    """
    h = check_hurst(h)
    if not a > 0:
        raise DomainError(f"scale factor a must be positive, got {a!r}")
    grid_l = TimeGrid(n_steps, horizon)
    grid_r = grid_l.rescaled(a)
    eps_l = config.resolve_epsilon(h, grid_l)
    eps_r = a ** (2.0 * h) * eps_l
    g_r = a ** (h * d - 2.0) * g
    cfg_l = replace(_substream_config(config, 0), g=g, epsilon=eps_l, method=PRIOR_IMPORTANCE)
    cfg_r = replace(_substream_config(config, 0 if same_stream else 1), g=g_r, epsilon=eps_r,
                    method=PRIOR_IMPORTANCE)
    lhs = estimate_partition(h, grid_l, d, cfg_l)
    rhs = estimate_partition(h, grid_r, d, cfg_r)
    se = math.hypot(lhs.std_error, rhs.std_error)
    params_l = {"g": g, "N": horizon, "epsilon": eps_l, "dt": grid_l.dt, "n_steps": n_steps}
    params_r = {"g": g_r, "N": a * horizon, "epsilon": eps_r, "dt": grid_r.dt, "n_steps": n_steps}
    return InvarianceTestReport(lhs, rhs, se, _z(lhs.value - rhs.value, se), params_l, params_r)


test_scale_invariance.__test__ = False  # not a pytest test despite the name


@dataclass
class EndDensityReport:
    """Free endpoint moments against the Gaussian law with variance N^2H per coordinate."""

    expected_variance: float
    variance: float
    variance_se: float
    kurtosis: float
    kurtosis_se: float
    mean_r2: float
    mean_r2_se: float
    mean: np.ndarray
    mean_se: np.ndarray

    @property
    def variance_z(self) -> float:
        return _z(self.variance - self.expected_variance, self.variance_se)

    @property
    def kurtosis_z(self) -> float:
        return _z(self.kurtosis - 3.0, self.kurtosis_se)

    def mean_r2_z(self, d: int) -> float:
        return _z(self.mean_r2 - d * self.expected_variance, self.mean_r2_se)

    @property
    def mean_z(self) -> np.ndarray:
        return np.abs(self.mean) / self.mean_se


def verify_end_density(h, d: int, horizon: float, n_replicas: int, rng: RngStream,
                       n_steps: int = 16) -> EndDensityReport:
    h = check_hurst(h)
    paths = sample_paths_cholesky(h, TimeGrid(n_steps, horizon), d, rng, n_replicas)
    end = paths[:, -1, :]
    pooled = end.ravel()
    m = pooled.size
    var = float(pooled.var(ddof=1))
    c = pooled - pooled.mean()
    m4 = float(np.mean(c**4))
    var_se = math.sqrt(max(m4 - var**2, 0.0) / m)
    kurt = m4 / var**2
    r2 = np.einsum("md,md->m", end, end)
    return EndDensityReport(
        expected_variance=horizon ** (2.0 * h),
        variance=var,
        variance_se=var_se,
        kurtosis=kurt,
        kurtosis_se=math.sqrt(24.0 / m),
        mean_r2=float(r2.mean()),
        mean_r2_se=float(r2.std(ddof=1) / math.sqrt(n_replicas)),
        mean=end.mean(axis=0),
        mean_se=end.std(axis=0, ddof=1) / math.sqrt(n_replicas),
    )


@dataclass
class EpsScanPoint:
    epsilon: float
    partition: EstimatorResult
    r2: EstimatorResult


def epsilon_stability_scan(h, d: int, g: float, grid: TimeGrid, eps_ladder,
                           config: SamplerConfig) -> list[EpsScanPoint]:
    """Z_eps and <R^2>_eps along a descending epsilon ladder.

    One prior ensemble is drawn and re-weighted at every rung (common random
    numbers), so rung-to-rung differences are not swamped by sampling noise.
    """
    h = check_hurst(h)
    eps_ladder = [float(e) for e in eps_ladder]
    if any(e <= 0 for e in eps_ladder) or any(b >= a for a, b in zip(eps_ladder, eps_ladder[1:])):
        raise DomainError("epsilon ladder must be positive and strictly descending")
    cfg = replace(config, g=g, method=PRIOR_IMPORTANCE)
    paths = draw_prior_paths(h, grid, d, cfg)
    end = paths[:, -1, :]
    r2 = np.einsum("md,md->m", end, end)
    out = []
    for eps in eps_ladder:
        rung_cfg = replace(cfg, epsilon=eps)
        if g > 0:
            lt = local_times(paths, grid.dt, eps, cfg.diagonal_included)
            log_w = -g * lt
        else:
            lt = np.full(r2.size, np.nan)
            log_w = np.zeros(r2.size)
        ens = WeightedEnsemble(r2, lt, log_w, 1, eps)
        out.append(EpsScanPoint(eps, estimate_partition(h, grid, d, rung_cfg, ens),
                                _ratio_from_ensemble(ens, rung_cfg)))
    return out


@dataclass
class SlabRung:
    width: float
    estimate: EstimatorResult | None
    survivor_fraction: float | None
    ratio: float | None = None
    ratio_std_error: float | None = None
    dropped: bool = False


@dataclass
class SlabExperimentResult:
    unconstrained: EstimatorResult
    rungs: list
    fitted_y: float | None
    fitted_y_std_error: float | None
    predicted_y: float
    predicted_ratio: float
    params: dict

    def to_dict(self) -> dict:
        return {
            "unconstrained_r2": self.unconstrained.value,
            "unconstrained_r2_std_error": self.unconstrained.std_error,
            "fitted_y": self.fitted_y,
            "fitted_y_std_error": self.fitted_y_std_error,
            "predicted_y": self.predicted_y,
            "predicted_one_plus_y_over_2": self.predicted_ratio,
            "dropped_widths": [r.width for r in self.rungs if r.dropped],
            "params": self.params,
        }


# rungs whose survivor fraction is at least this are treated as unconstrained
# and left out of the y fit
UNCONSTRAINED_FRACTION = 0.999


def slab_reduction_experiment(h, d: int, g: float, horizon: float, widths,
                              config: SamplerConfig, n_steps: int = 32) -> SlabExperimentResult:
    """<R^2>_D over a descending ladder of slab widths, plus a fit of y.

    y is the negative slope of log(<R^2>_D / <R^2>) against
    log(D / sqrt(<R^2>)) over rungs where the slab is active.  The Flory
    prediction 1 + y/2 = nu_H(d-1) / nu_H(d) is reported next to it.
    """
    h = check_hurst(h)
    if d < 2:
        raise DomainError("the slab experiment needs d >= 2")
    widths = [float(w) for w in widths]
    if any(b >= a for a, b in zip(widths, widths[1:])):
        raise DomainError("slab width ladder must be strictly descending")
    grid = TimeGrid(n_steps, horizon)
    cfg = replace(config, g=g)
    free = estimate_r2(h, grid, d, _substream_config(cfg, 0))
    rungs = []
    for i, width in enumerate(widths):
        slab = SlabConstraint(1, width)
        try:
            est = estimate_r2_slab(h, grid, d, slab, _substream_config(cfg, i + 1))
        except ZeroSurvivorError:
            log.warning("slab rung D=%g has no survivors; dropped from the fit", width)
            rungs.append(SlabRung(width, None, 0.0, dropped=True))
            continue
        ratio = est.value / free.value
        ratio_se = ratio * math.hypot(est.std_error / est.value, free.std_error / free.value)
        rungs.append(SlabRung(width, est, est.diagnostics.get("survivor_fraction"), ratio, ratio_se))
    active = [r for r in rungs if not r.dropped
              and (r.survivor_fraction is None or r.survivor_fraction < UNCONSTRAINED_FRACTION)
              and r.width < 1e3 * math.sqrt(free.value)]
    y = y_se = None
    if len(active) >= 2:
        x = np.log([r.width / math.sqrt(free.value) for r in active])
        yy = np.log([r.ratio for r in active])
        sig = np.array([r.ratio_std_error / r.ratio for r in active])
        fit = weighted_line_fit(x, yy, sig)
        y, y_se = -fit["slope"], fit["slope_std_error"]
    pred_y = flory.slab_exponent(h, d)
    params = {"hurst": h, "dim": d, "g": g, "N": horizon, "n_steps": n_steps,
              "slab_coordinate": 1, "slab_start": "D/2",
              "epsilon": cfg.resolve_epsilon(h, grid)}
    return SlabExperimentResult(free, rungs, y, y_se, pred_y, 1.0 + pred_y / 2.0, params)
