"""Discrete-velocity laboratory for coupled forward-backward Boltzmann systems
and their Hamilton-Jacobi functional."""

import warnings

# numba reports a missing optional TBB threading layer on import; harmless
warnings.filterwarnings("ignore", message=".*TBB.*")

__version__ = "0.1.0"
