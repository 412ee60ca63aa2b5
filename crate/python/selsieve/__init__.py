"""Two-step sieve estimation of multilayered sample-selection models.

Thin Python layer over the Rust core: dataset simulation, Monte Carlo
studies, two-step fits on CSV data, pairs bootstrap, and the category-level
gap decomposition.
"""

from ._native import (
    bootstrap,
    decompose,
    fit,
    run_bootstrap_validation,
    run_monte_carlo,
    simulate,
)

__all__ = [
    "bootstrap",
    "decompose",
    "fit",
    "run_bootstrap_validation",
    "run_monte_carlo",
    "simulate",
]
