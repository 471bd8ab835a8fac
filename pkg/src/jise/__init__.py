"""Joint input-state estimation for linear structural systems.

The package covers the full desk-scale workflow: build a shear-frame
model and its discrete state space (``model``), synthesise excitation
scenarios and noisy measurements (``sim``), run the universal filter /
smoothing recursions or the augmented-state baseline (``estimators``,
``pipeline``), tune the process-noise covariance online with a filter
array (``tuner``), and score the results (``evaluate``). ``cli`` ties
everything into reproducible file-based runs.
"""

__version__ = "0.1.0"

from . import cli, errors, estimators, evaluate, linalg, model, pipeline, sim, tuner

__all__ = [
    "__version__",
    "cli",
    "errors",
    "estimators",
    "evaluate",
    "linalg",
    "model",
    "pipeline",
    "sim",
    "tuner",
]
