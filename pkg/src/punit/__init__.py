"""Periodic implicit porous units from voxel samples.

Submodules load on first attribute access, so the command-line entry point
can set thread limits before numpy and numba are imported.
"""

from importlib import import_module

__version__ = "0.1.0"

_EXPORTS = {
    "ScalarGrid": "dtm",
    "dtm_field": "dtm",
    "PunitError": "errors",
    "ValidationError": "errors",
    "FitConfig": "fit",
    "con_lspia": "fit",
    "LatticeSpec": "lattice",
    "marching_cubes": "lattice",
    "threshold_for_density": "lattice",
    "ConnectivityConfig": "persist",
    "optimize_connectivity": "persist",
    "persistence_0d": "persist",
    "KnotVector": "spline",
    "PeriodicBSpline": "spline",
    "VoxelGrid": "voxelgrid",
}

__all__ = sorted(_EXPORTS)


def __getattr__(name):
    if name in _EXPORTS:
        return getattr(import_module(f".{_EXPORTS[name]}", __name__), name)
    raise AttributeError(f"module 'punit' has no attribute {name!r}")
