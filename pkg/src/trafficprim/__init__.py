"""trafficprim: unify multichannel sensor logs into indexed driving primitives.

Batch pipeline: ingest heterogeneous per-topic logs onto a uniform grid,
segment trips into recurring primitives with a sticky hierarchical-Dirichlet
HMM Gibbs sampler, consolidate the primitives, and index the results in a
scenario-oriented relational catalog. Served over HTTP with a thin CLI client.
"""

from .core import (
    GaussianEmission,
    HyperParams,
    ModelState,
    NiwPrior,
    TimeSeriesBag,
)
from .inference import GibbsConfig, PosteriorSummary, fit

__version__ = "0.1.0"

__all__ = [
    "GaussianEmission",
    "GibbsConfig",
    "HyperParams",
    "ModelState",
    "NiwPrior",
    "PosteriorSummary",
    "TimeSeriesBag",
    "fit",
    "__version__",
]
