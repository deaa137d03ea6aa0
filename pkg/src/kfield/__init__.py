"""Symbolic derivation, intrinsic residuals and solvers for first-order field theories."""
from importlib import resources

__version__ = "0.1.0"


def data_path(name):
    """Path of a bundled reference problem file such as ``navier.prob``."""
    return resources.files(__name__) / "data" / name
