"""Gibbs-weighted Monte Carlo for the fBm Edwards model at fixed mollifier width.

Two estimators are provided:

* ``prior-importance``: draw free fBm paths and weight each by exp(-g L_eps).
  Unbiased and simple; the effective sample size collapses as the effective
  coupling grows.
* ``metropolis-noise``: Metropolis chains on the standard normal vector z
  driving the path (positions = S z).  Proposals redraw k coordinates of z
  from the prior, so only the energy difference enters the acceptance ratio.

Every chain and replica block draws from its own ``RngStream`` substream, so
results are a deterministic function of the configuration.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .energy import check_coupling, check_epsilon, default_epsilon, local_times
from .errors import DomainError, ZeroSurvivorError
from .fbm import (RngStream, TimeGrid, check_hurst, path_operator,
                  sample_paths_cholesky, sample_paths_circulant)
from .stats import (MIN_BLOCKS, batch_means, effective_sample_size, split_rhat,
                    ratio_batch_means)

log = logging.getLogger(__name__)

__all__ = [
    "PRIOR_IMPORTANCE",
    "METROPOLIS_NOISE",
    "SamplerConfig",
    "SlabConstraint",
    "WeightedEnsemble",
    "EstimatorResult",
    "slab_indicator",
    "draw_prior_paths",
    "sample_prior_ensemble",
    "run_metropolis",
    "estimate_partition",
    "estimate_r2",
    "estimate_r2_slab",
]

PRIOR_IMPORTANCE = "prior-importance"
METROPOLIS_NOISE = "metropolis-noise"
METHODS = (PRIOR_IMPORTANCE, METROPOLIS_NOISE)

# replicas are drawn in fixed-size chunks, one substream each
REPLICA_CHUNK = 4096
ACCEPTANCE_BAND = (0.05, 0.95)
RHAT_LIMIT = 1.1


@dataclass(frozen=True)
class SamplerConfig:
    """Sampler settings.

    ``epsilon=None`` selects the grid-matched width ``eps_scale * dt^(2H)``.
    ``block_size=None`` picks 32 blocks for importance sampling and one block
    per chain for Metropolis.
    """

    method: str = PRIOR_IMPORTANCE
    g: float = 0.0
    epsilon: float | None = None
    eps_scale: float = 1.0
    diagonal_included: bool = False
    n_replicas: int = 20000
    n_chains: int = 32
    n_mcmc_steps: int = 12000
    burn_in: int = 4000
    block_size: int | None = None
    proposal_size: int = 1
    proposal_rho: float = 0.0
    seed: int = 0
    stream_id: int | tuple = 0
    sampler: str = "cholesky"
    jitter: bool = False
    clamp_eigenvalues: bool = False
    ess_floor: float = 50.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise DomainError(f"unknown method {self.method!r}; expected one of {METHODS}")
        check_coupling(self.g)
        if self.epsilon is not None:
            check_epsilon(self.epsilon)
        if not self.eps_scale > 0:
            raise DomainError("eps_scale must be positive")
        if self.sampler not in ("cholesky", "circulant"):
            raise DomainError(f"unknown path sampler {self.sampler!r}")
        if self.method == PRIOR_IMPORTANCE:
            if self.n_replicas < 1:
                raise DomainError("n_replicas must be positive")
            if self.n_replicas // self.effective_block_size < MIN_BLOCKS:
                raise DomainError(f"need at least {MIN_BLOCKS} blocks of replicas")
        else:
            if self.n_mcmc_steps < 1 or self.n_chains < 1:
                raise DomainError("n_mcmc_steps and n_chains must be positive")
            if not 0 <= self.burn_in < self.n_mcmc_steps:
                raise DomainError("burn_in must satisfy 0 <= burn_in < n_mcmc_steps")
            kept = self.n_mcmc_steps - self.burn_in
            if self.n_chains * (kept // self.effective_block_size) < MIN_BLOCKS:
                raise DomainError(f"need at least {MIN_BLOCKS} blocks across chains")
            if self.proposal_size < 1:
                raise DomainError("proposal_size must be >= 1")
            if not 0 <= self.proposal_rho < 1:
                raise DomainError("proposal_rho must lie in [0, 1)")

    @property
    def effective_block_size(self) -> int:
        if self.block_size is not None:
            if self.block_size < 1:
                raise DomainError("block_size must be positive")
            return int(self.block_size)
        if self.method == PRIOR_IMPORTANCE:
            return max(1, self.n_replicas // 32)
        return self.n_mcmc_steps - self.burn_in

    @property
    def rng(self) -> RngStream:
        return RngStream(self.seed, self.stream_id)

    def resolve_epsilon(self, h: float, grid: TimeGrid) -> float:
        if self.epsilon is not None:
            return self.epsilon
        return default_epsilon(h, grid, self.eps_scale)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SlabConstraint:
    """Coordinate ``coordinate_index`` (1-based) kept inside a slab of width D.

    The path is shifted so that coordinate starts at D/2; the constraint is
    then |x_i(t_k)| <= D/2 for every grid point.  ``d0`` is metadata only.
    """

    coordinate_index: int
    width: float
    d0: float | None = None

    def __post_init__(self):
        if self.coordinate_index < 1:
            raise DomainError("coordinate_index is 1-based and must be >= 1")
        if not (self.width > 0):
            raise DomainError(f"slab width D must be positive, got {self.width!r}")


def slab_indicator(positions: np.ndarray, slab: SlabConstraint) -> np.ndarray:
    """Boolean per path (leading axes kept): constrained coordinate stays in the slab."""
    i = slab.coordinate_index - 1
    if i >= positions.shape[-1]:
        raise DomainError(f"coordinate {slab.coordinate_index} exceeds dimension {positions.shape[-1]}")
    shifted = positions[..., i] + 0.5 * slab.width
    return np.all((shifted >= 0.0) & (shifted <= slab.width), axis=-1)


@dataclass
class WeightedEnsemble:
    """Per-sample records.  MCMC ensembles are stored chain after chain."""

    r2: np.ndarray
    local_time: np.ndarray
    log_weights: np.ndarray
    n_chains: int = 1
    epsilon: float = float("nan")
    diagnostics: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return int(self.r2.size)

    @property
    def weights(self) -> np.ndarray:
        """exp(log_weights); may underflow to 0 for very large energies."""
        return np.exp(self.log_weights)

    @property
    def ess(self) -> float:
        finite = np.isfinite(self.log_weights)
        if not finite.any():
            return 0.0
        w = np.exp(self.log_weights - self.log_weights[finite].max())
        return effective_sample_size(w)


@dataclass
class EstimatorResult:
    value: float
    std_error: float
    ess: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def reliable(self) -> bool:
        return not self.diagnostics.get("unreliable", False)

    @property
    def quality(self) -> str:
        return "ok" if self.reliable else "flagged"

    def to_dict(self) -> dict:
        out = {"value": self.value, "std_error": self.std_error, "ess": self.ess,
               "quality": self.quality}
        out["diagnostics"] = {k: v for k, v in self.diagnostics.items()}
        return out


def _draw_paths(h, grid, d, config: SamplerConfig, rng: RngStream, size: int) -> np.ndarray:
    if config.sampler == "circulant":
        return sample_paths_circulant(h, grid, d, rng, size, config.clamp_eigenvalues)
    return sample_paths_cholesky(h, grid, d, rng, size, config.jitter)


def draw_prior_paths(h, grid: TimeGrid, d: int, config: SamplerConfig) -> np.ndarray:
    """All ``config.n_replicas`` prior paths at once, same streams as the ensemble sampler."""
    parts = []
    remaining, k = config.n_replicas, 0
    while remaining > 0:
        size = min(REPLICA_CHUNK, remaining)
        parts.append(_draw_paths(h, grid, d, config, config.rng.substream(k), size))
        remaining -= size
        k += 1
    return np.concatenate(parts)


def sample_prior_ensemble(h, grid: TimeGrid, d: int, config: SamplerConfig,
                          slab: SlabConstraint | None = None) -> WeightedEnsemble:
    """Free fBm replicas with log weights -g L_eps (and -inf outside a slab)."""
    h = check_hurst(h)
    eps = config.resolve_epsilon(h, grid)
    r2_parts, lt_parts, inside_parts = [], [], []
    remaining = config.n_replicas
    chunk_index = 0
    while remaining > 0:
        size = min(REPLICA_CHUNK, remaining)
        paths = _draw_paths(h, grid, d, config, config.rng.substream(chunk_index), size)
        end = paths[:, -1, :]
        r2_parts.append(np.einsum("md,md->m", end, end))
        if config.g > 0:
            lt_parts.append(local_times(paths, grid.dt, eps, config.diagonal_included))
        else:
            lt_parts.append(np.full(size, np.nan))
        if slab is not None:
            inside_parts.append(slab_indicator(paths, slab))
        remaining -= size
        chunk_index += 1
    r2 = np.concatenate(r2_parts)
    lt = np.concatenate(lt_parts)
    log_w = -config.g * lt if config.g > 0 else np.zeros_like(r2)
    diagnostics = {}
    if slab is not None:
        inside = np.concatenate(inside_parts)
        log_w = np.where(inside, log_w, -np.inf)
        diagnostics["survivor_fraction"] = float(inside.mean())
        diagnostics["survivors"] = int(inside.sum())
    return WeightedEnsemble(r2, lt, log_w, 1, eps, diagnostics)


def _flag(result: EstimatorResult, floor: float) -> EstimatorResult:
    if result.ess < floor:
        result.diagnostics["unreliable"] = True
        log.warning("effective sample size %.1f below floor %.1f", result.ess, floor)
    return result


def estimate_partition(h, grid: TimeGrid, d: int, config: SamplerConfig,
                       ensemble: WeightedEnsemble | None = None) -> EstimatorResult:
    """Z_eps = E[exp(-g L_eps)] under the free fBm law, by prior sampling."""
    if config.method != PRIOR_IMPORTANCE:
        raise DomainError("the partition function is estimated by prior-importance sampling only")
    ens = ensemble if ensemble is not None else sample_prior_ensemble(h, grid, d, config)
    if config.g == 0:
        return EstimatorResult(1.0, 0.0, float(ens.size), {"epsilon": ens.epsilon})
    shift = float(np.min(-ens.log_weights))
    scaled = np.exp(ens.log_weights + shift)
    mean, se = batch_means(scaled, config.effective_block_size)
    factor = math.exp(-shift)
    result = EstimatorResult(mean * factor, se * factor, ens.ess,
                             {"epsilon": ens.epsilon, "log_shift": shift})
    return _flag(result, config.ess_floor)


def _ratio_from_ensemble(ens: WeightedEnsemble, config: SamplerConfig) -> EstimatorResult:
    finite = np.isfinite(ens.log_weights)
    if not finite.any():
        raise ZeroSurvivorError(
            "no sample survived the constraint; increase the slab width D or the replica count"
        )
    w = np.exp(ens.log_weights - ens.log_weights[finite].max())
    value, se = ratio_batch_means(ens.r2 * w, w, config.effective_block_size)
    result = EstimatorResult(value, se, ens.ess, {"epsilon": ens.epsilon, **ens.diagnostics})
    return _flag(result, config.ess_floor)


def _chain_estimate(ens: WeightedEnsemble, config: SamplerConfig) -> EstimatorResult:
    traces = ens.r2.reshape(ens.n_chains, -1)
    value, se = batch_means(traces, config.effective_block_size)
    var = float(ens.r2.var())
    ess = var / se**2 if se > 0 else float(ens.size)
    rhat = split_rhat(traces)
    result = EstimatorResult(value, se, ess, {"epsilon": ens.epsilon, "split_rhat": rhat,
                                              **ens.diagnostics})
    if rhat > RHAT_LIMIT:
        result.diagnostics["unreliable"] = True
        log.warning("split R-hat %.3f above %.2f; chains have not converged", rhat, RHAT_LIMIT)
    return _flag(result, config.ess_floor)


def run_metropolis(h, grid: TimeGrid, d: int, config: SamplerConfig,
                   slab: SlabConstraint | None = None) -> WeightedEnsemble:
    """Noise-space Metropolis chains, vectorized over ``config.n_chains``.

    State: z of shape (n_steps, d), positions[1:] = S z.  A proposal picks
    ``proposal_size`` distinct entries of z and replaces each by
    rho * z + sqrt(1 - rho^2) * xi with xi standard normal (rho = 0 is a full
    redraw), which leaves the Gaussian prior invariant.  Acceptance is
    min(1, exp(-g dL)); a slab acts as a hard wall.  Chains start from a prior
    draw, or from z = 0 when a slab is present (the only state guaranteed
    admissible).  Returns post-burn-in samples with unit weights.
    """
    h = check_hurst(h)
    if config.method != METROPOLIS_NOISE:
        raise DomainError("run_metropolis requires method='metropolis-noise'")
    eps = config.resolve_epsilon(h, grid)
    n, c = grid.n_steps, config.n_chains
    k = config.proposal_size
    if k > n * d:
        raise DomainError(f"proposal_size {k} exceeds the {n * d} noise coordinates")
    s_op = path_operator(h, grid, config.jitter)
    s_cols = np.ascontiguousarray(s_op.T)  # s_cols[j] = column j of S
    rng = config.rng.generator()
    if slab is None:
        z = rng.standard_normal((c, n, d))
    else:
        z = np.zeros((c, n, d))
    pos = np.zeros((c, n + 1, d))
    pos[:, 1:, :] = np.matmul(s_op, z)
    g = config.g
    lt = local_times(pos, grid.dt, eps, config.diagonal_included) if g > 0 else np.zeros(c)
    rho = config.proposal_rho
    kick = math.sqrt(1.0 - rho * rho)
    kept = config.n_mcmc_steps - config.burn_in
    r2_trace = np.empty((c, kept))
    lt_trace = np.empty((c, kept))
    accepted = 0
    chains = np.arange(c)
    for step in range(config.n_mcmc_steps):
        if k == 1:
            flat = rng.integers(0, n * d, size=(c, 1))
        else:
            flat = np.argpartition(rng.random((c, n * d)), k - 1, axis=1)[:, :k]
        j, coord = np.divmod(flat, d)
        xi = rng.standard_normal((c, k))
        u = rng.random(c)
        old = z[chains[:, None], j, coord]
        new = rho * old + kick * xi
        delta = new - old
        proposal = pos.copy()
        for m in range(k):
            proposal[chains, 1:, coord[:, m]] += s_cols[j[:, m]] * delta[:, m, None]
        ok = np.ones(c, dtype=bool) if slab is None else slab_indicator(proposal, slab)
        if g > 0:
            lt_new = local_times(proposal, grid.dt, eps, config.diagonal_included)
            with np.errstate(over="ignore"):
                ok &= np.log(u) < -g * (lt_new - lt)
        else:
            lt_new = lt
        if ok.any():
            z[chains[ok, None], j[ok], coord[ok]] = new[ok]
            pos[ok] = proposal[ok]
            lt = np.where(ok, lt_new, lt)
        if step >= config.burn_in:
            i = step - config.burn_in
            accepted += int(ok.sum())
            end = pos[:, -1, :]
            r2_trace[:, i] = np.einsum("cd,cd->c", end, end)
            lt_trace[:, i] = lt
    rate = accepted / (c * kept)
    diagnostics = {"acceptance_rate": rate}
    lo, hi = ACCEPTANCE_BAND
    if g > 0 and not lo <= rate <= hi:
        diagnostics["acceptance_warning"] = True
        log.warning("Metropolis acceptance rate %.3f outside [%.2f, %.2f]", rate, lo, hi)
    return WeightedEnsemble(r2_trace.ravel(), lt_trace.ravel(), np.zeros(c * kept), c, eps,
                            diagnostics)


def estimate_r2(h, grid: TimeGrid, d: int, config: SamplerConfig) -> EstimatorResult:
    """Gibbs-weighted mean-square end-to-end distance <|B(N)|^2>."""
    if config.method == PRIOR_IMPORTANCE:
        return _ratio_from_ensemble(sample_prior_ensemble(h, grid, d, config), config)
    return _chain_estimate(run_metropolis(h, grid, d, config), config)


def estimate_r2_slab(h, grid: TimeGrid, d: int, slab: SlabConstraint,
                     config: SamplerConfig) -> EstimatorResult:
    """<|B(N)|^2>_D with one coordinate confined to a slab of width D.

    Prior sampling weights by indicator * exp(-g L_eps) and reports the
    indicator survivor fraction; Metropolis treats the slab as a hard wall.
    """
    if slab.coordinate_index > d:
        raise DomainError(f"slab coordinate {slab.coordinate_index} exceeds dimension {d}")
    if config.method == PRIOR_IMPORTANCE:
        ens = sample_prior_ensemble(h, grid, d, config, slab)
        if ens.diagnostics["survivors"] == 0:
            raise ZeroSurvivorError(
                f"no replica stayed inside the slab of width D={slab.width}; "
                "increase D or the number of replicas"
            )
        return _ratio_from_ensemble(ens, config)
    return _chain_estimate(run_metropolis(h, grid, d, config, slab), config)


def with_overrides(config: SamplerConfig, **changes) -> SamplerConfig:
    return replace(config, **changes)
