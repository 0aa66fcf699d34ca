"""Discrete distance fields of voxel samples.

``dtm_field`` is the distance-to-measure field: for each cell center x the
solid voxels are ranked by Euclidean distance and

    d_m(x)^2 = (1/m) * (sum_{i<k} |x - p_i|^2 + (m - (k - 1)) |x - p_k|^2)

with k the smallest rank at which the cumulative solid count reaches m.  Only
solid voxels carry weight, so this is the weighted mean squared distance to
the m nearest solid voxels.  Distances are in voxel lengths.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import FormatError, InfeasibleError, ShapeError, ValidationError
from .voxelgrid import VoxelGrid, _check_dims

SGRID_MAGIC = b"SGRID\x00\x00\x01"

__all__ = ["ScalarGrid", "dtm_field", "manhattan_field", "read_sgrid", "write_sgrid"]


@dataclass(frozen=True, eq=False)
class ScalarGrid:
    """Real samples at grid-cell centers, same layout as :class:`VoxelGrid`."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=float)
        if arr.ndim != 3:
            raise ShapeError(f"scalar grid must be 3D, got shape {arr.shape}")
        _check_dims(arr.shape)
        if not np.all(np.isfinite(arr)):
            raise ValidationError("scalar grid contains non-finite values")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.values.shape)

    def params(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Parametric coordinates of cell centers along each axis."""
        return tuple((np.arange(n) + 0.5) / n for n in self.dims)

    def __eq__(self, other):
        if not isinstance(other, ScalarGrid):
            return NotImplemented
        return self.dims == other.dims and bool(np.array_equal(self.values, other.values))


def _combine(sq: np.ndarray, m: float) -> np.ndarray:
    """Apply the DTM weighting to squared distances sorted ascending along the last axis."""
    k = math.ceil(m)
    head = sq[..., : k - 1].sum(axis=-1) if k > 1 else 0.0
    d2 = (head + (m - (k - 1)) * sq[..., k - 1]) / m
    return np.sqrt(d2)


def dtm_field(grid: VoxelGrid, m: float = 5.0) -> ScalarGrid:
    m = float(m)
    if not m > 0:
        raise ValidationError(f"mass parameter must be positive, got {m}")
    solid = np.argwhere(grid.data)
    if len(solid) < math.ceil(m):
        raise InfeasibleError(f"grid has {len(solid)} solid voxels, mass m={m} needs {math.ceil(m)}")
    k = math.ceil(m)
    queries = np.indices(grid.dims).reshape(3, -1).T
    tree = cKDTree(solid)
    _, idx = tree.query(queries, k=k)
    idx = idx.reshape(len(queries), k)
    # integer offsets keep squared distances exact
    diff = solid[idx] - queries[:, None, :]
    sq = np.sort((diff * diff).sum(axis=-1), axis=-1).astype(float)
    return ScalarGrid(_combine(sq, m).reshape(grid.dims))


def manhattan_field(grid: VoxelGrid) -> ScalarGrid:
    """L1 grid distance to the nearest solid voxel by multi-source BFS."""
    if not grid.data.any():
        raise InfeasibleError("grid has no solid voxel")
    dist = np.full(grid.dims, -1, dtype=np.int64)
    frontier = grid.data.copy()
    dist[frontier] = 0
    step = 0
    while frontier.any():
        step += 1
        grown = np.zeros_like(frontier)
        for axis in range(3):
            lo = [slice(None)] * 3
            hi = [slice(None)] * 3
            lo[axis], hi[axis] = slice(0, -1), slice(1, None)
            grown[tuple(hi)] |= frontier[tuple(lo)]
            grown[tuple(lo)] |= frontier[tuple(hi)]
        frontier = grown & (dist < 0)
        dist[frontier] = step
    return ScalarGrid(dist.astype(float))


def write_sgrid(field: ScalarGrid) -> bytes:
    header = SGRID_MAGIC + struct.pack("<3I", *field.dims)
    return header + field.values.ravel(order="F").astype("<f8").tobytes()


def read_sgrid(blob: bytes) -> ScalarGrid:
    if len(blob) < 20 or blob[:8] != SGRID_MAGIC:
        raise FormatError("not a .sgrid file (bad magic)")
    dims = struct.unpack("<3I", blob[8:20])
    if min(dims) < 1:
        raise FormatError(f"bad dims {dims}")
    n = dims[0] * dims[1] * dims[2]
    if len(blob) - 20 != 8 * n:
        raise FormatError(f"payload has {len(blob) - 20} bytes, expected {8 * n}")
    values = np.frombuffer(blob[20:], dtype="<f8").reshape(dims, order="F")
    try:
        return ScalarGrid(values)
    except ValidationError as exc:
        raise FormatError(str(exc)) from None


def load(path) -> ScalarGrid:
    with open(path, "rb") as fh:
        return read_sgrid(fh.read())
