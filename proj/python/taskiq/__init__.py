"""Detection-estimation observers, EROC analysis and the experiment pipeline."""

from ._core import (
    ConfigError,
    Task,
    UnsupportedUtility,
    Utility,
    __version__,
    aeroc,
    aeroc_value,
    analytic_io,
    eroc_curve,
    git_blob_sha1,
    mcmc_io,
    resolve_config,
    run_experiment,
)

__all__ = [
    "ConfigError",
    "Task",
    "UnsupportedUtility",
    "Utility",
    "__version__",
    "aeroc",
    "aeroc_value",
    "analytic_io",
    "eroc_curve",
    "git_blob_sha1",
    "mcmc_io",
    "resolve_config",
    "run_experiment",
]
