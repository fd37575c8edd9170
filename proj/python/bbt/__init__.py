"""Black-box prompt tuning: CMA-ES in a random subspace of prompt space."""

import json as _json

from ._core import (  # noqa: F401
    CmaEs,
    OptimizerStateError,
    batch_loss,
    cross_entropy,
    default_popsize,
    hinge,
    payload_sizes,
    rosenbrock,
    sphere,
)
from . import _core


def default_config():
    """Resolved default tuning configuration as a dict."""
    return _json.loads(_core.default_config_json())


def toy_tune(seed=0, budget=8000, parallel=False, loss="ce", sub_dim=500, popsize=20):
    """Plant a toy task, tune in-process, return the summary dict."""
    return _json.loads(_core.toy_tune(seed, budget, parallel, loss, sub_dim, popsize))
