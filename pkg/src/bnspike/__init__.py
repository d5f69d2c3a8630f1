"""Numerical laboratory for loss spikes in batch-normalized linear models.

The package is organised bottom-up:

- :mod:`bnspike.data` -- datasets, sign-adjusted geometry, whitening, generators
- :mod:`bnspike.model` -- the normalized predictor, losses, risk, gradients
- :mod:`bnspike.dynamics` -- gradient-descent loops, directional statistics,
  edge classification, sharpness probes
- :mod:`bnspike.linear_theory` -- onset/stabilization predictions for the
  whitened square loss
- :mod:`bnspike.logistic_theory` -- max-margin references, constants, bound
  ledgers, and the small-ratio campaign for the logistic loss
- :mod:`bnspike.config` / :mod:`bnspike.runner` / :mod:`bnspike.cli` -- the
  experiment harness
"""

__version__ = "0.1.0"
