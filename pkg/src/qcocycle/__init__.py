"""Quenched limit theorems for random piecewise expanding interval maps.

Modules: base_driver (driving systems), map_family (fiber maps, observables),
ulam_core (Ulam transfer operators), twisted_cocycle (twisted transfer cocycle
and its leading eigenvalues), limit_lab (analytic predictors), quenched_mc
(Monte Carlo), config / pipelines / cli_harness (experiment runner).
"""
__version__ = "0.1.0"
