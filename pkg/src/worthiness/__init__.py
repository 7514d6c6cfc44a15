"""Toolkit that closes the loop between quality predictors and dataset construction.

Falsifies fixed predictors via group maximum-differentiation competition and
Perron rank aggregation, trains a failure predictor by ranking prediction
errors, selects difficult-and-diverse candidates under a labeling budget, and
runs 2AFC studies whose forced choices aggregate into a global ranking.
"""

__version__ = "0.1.0"
