"""Robust gamma-weighted Stein methods: estimators, KSD tests and SVGD."""

from ._gstein import (
    Error,
    ModelSpec,
    __version__,
    evaluate,
    experiment_names,
    fit,
    gamma_svgd_velocity,
    gof_test,
    identity_suite,
    ksd_ustat,
    make_fisher_bingham,
    make_gaussian,
    make_mixture,
    make_poisson_regression,
    make_quartic,
    make_vmf,
    median_bandwidth,
    run_experiment,
    sample,
    svgd_velocity,
)

__all__ = [
    "Error",
    "ModelSpec",
    "__version__",
    "evaluate",
    "experiment_names",
    "fit",
    "gamma_svgd_velocity",
    "gof_test",
    "identity_suite",
    "ksd_ustat",
    "make_fisher_bingham",
    "make_gaussian",
    "make_mixture",
    "make_poisson_regression",
    "make_quartic",
    "make_vmf",
    "median_bandwidth",
    "run_experiment",
    "sample",
    "svgd_velocity",
]
