"""frepel: self-repelling fractional Brownian motion in the Edwards model.

Submodules:

* ``fbm``     exact fBm path sampling (Cholesky and circulant embedding)
* ``energy``  mollified self-intersection local time and energy
* ``gibbs``   Monte Carlo estimators under the Gibbs measure exp(-g L)
* ``flory``   closed-form Flory exponents, regimes and recursion checks
* ``lab``     scaling experiments built on the estimators
* ``cli``     the ``frepel`` command-line workbench
"""

__version__ = "0.1.0"

from .errors import (DomainError, EmbeddingError, FactorizationError,  # noqa: E402
                     NumericalError, ZeroSurvivorError)
from .fbm import PathBundle, RngStream, TimeGrid  # noqa: E402
from .energy import EnergyReport, local_time  # noqa: E402
from .gibbs import EstimatorResult, SamplerConfig, SlabConstraint  # noqa: E402
from .flory import FloryPrediction, flory_index  # noqa: E402

__all__ = [
    "__version__",
    "DomainError",
    "NumericalError",
    "FactorizationError",
    "EmbeddingError",
    "ZeroSurvivorError",
    "TimeGrid",
    "RngStream",
    "PathBundle",
    "EnergyReport",
    "local_time",
    "SamplerConfig",
    "SlabConstraint",
    "EstimatorResult",
    "FloryPrediction",
    "flory_index",
]
