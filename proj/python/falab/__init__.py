"""Python access to the falab core library."""

import json

from ._core import (
    AssumptionViolated,
    ConfigError,
    Diverged,
    FalabError,
    InvalidInput,
    ParseError,
    PathError,
    ResolutionError,
    UnsupportedVersion,
    boundedness_sweep,
    check_clean_dominant,
    class_weights,
    grad_check,
    loss,
    risk_gap,
    sign_test_p,
    softmax,
    theorem1_bound,
)
from . import _core

__all__ = [
    "AssumptionViolated", "ConfigError", "Diverged", "FalabError", "InvalidInput",
    "ParseError", "PathError", "ResolutionError", "UnsupportedVersion",
    "boundedness_sweep", "check_clean_dominant", "class_weights", "default_config",
    "generate_pair", "grad_check", "loss", "resolve_config", "risk_gap", "run",
    "sign_test_p", "softmax", "theorem1_bound",
]


def default_config():
    """The built-in experiment config as a dict."""
    return json.loads(_core._default_config())


def resolve_config(config=None):
    """Validate a (partial) config dict and fill in defaults."""
    return json.loads(_core._resolve_config(_dump(config)))


def generate_pair(config=None, seed=0):
    """Source and target datasets for one seed, features as numpy arrays."""
    return _core._generate_pair(_dump(config), seed)


def run(command, out, config=None, seed=None, jobs=1, emit_plots=False):
    """Run a pipeline command ("gen", "train-source", "adapt", "compare",
    "ablate", "verify"). Returns False only when verify finds a row out of bound."""
    return _core._run(command, _dump(config), str(out), seed, jobs, emit_plots)


def _dump(config):
    return "" if config is None else json.dumps(config)
