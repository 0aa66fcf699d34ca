"""Binary voxel grids, primitive rasterization and CSG.

Layout convention (shared by every module): a grid with dims ``(nx, ny, nz)``
is held as a numpy array of shape ``(nx, ny, nz)`` indexed ``[i, j, k]``.
The linear index used on disk and for tie-breaking is x-fastest,
``i + nx * (j + ny * k)``, i.e. ``array.ravel(order="F")``.
Cell ``(i, j, k)`` has its center at ``((i + .5) / nx, (j + .5) / ny, (k + .5) / nz)``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError, ShapeError, SizeError, ValidationError

VGRID_MAGIC = b"VGRID\x00\x00\x01"
MAX_VOXELS = 2**31 - 1

__all__ = [
    "VoxelGrid",
    "Box",
    "CylinderBar",
    "Sphere",
    "bar",
    "create",
    "boolean",
    "rasterize",
    "read_vgrid",
    "write_vgrid",
    "read_text",
    "write_text",
    "primitive_from_dict",
    "run_csg",
]


def _check_dims(dims) -> tuple[int, int, int]:
    if len(dims) != 3:
        raise SizeError(f"expected three dimensions, got {dims!r}")
    out = tuple(int(d) for d in dims)
    if any(d < 1 for d in out):
        raise SizeError(f"every dimension must be >= 1, got {out}")
    if out[0] * out[1] * out[2] > MAX_VOXELS:
        raise SizeError(f"grid of {out} exceeds {MAX_VOXELS} voxels")
    return out


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """Binary occupancy grid; 1 = solid, 0 = void."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise ShapeError(f"voxel data must be 3D, got shape {arr.shape}")
        _check_dims(arr.shape)
        if arr.dtype != np.bool_:
            if not np.isin(arr, (0, 1)).all():
                raise ValidationError("voxel values must be 0 or 1")
            arr = arr.astype(bool)
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)

    @property
    def size(self) -> int:
        return self.data.size

    def count(self) -> int:
        return int(self.data.sum())

    def solid_fraction(self) -> float:
        return self.count() / self.size

    def flat(self) -> np.ndarray:
        """Bits in file order (x-fastest)."""
        return self.data.ravel(order="F")

    @classmethod
    def from_flat(cls, dims, bits) -> "VoxelGrid":
        dims = _check_dims(dims)
        bits = np.asarray(bits)
        if bits.size != dims[0] * dims[1] * dims[2]:
            raise SizeError(f"{bits.size} values do not fill a {dims} grid")
        return cls(bits.reshape(dims, order="F"))

    def __eq__(self, other):
        if not isinstance(other, VoxelGrid):
            return NotImplemented
        return self.dims == other.dims and bool(np.array_equal(self.data, other.data))

    def __hash__(self):
        return hash((self.dims, self.data.tobytes()))

    def __repr__(self):
        return f"VoxelGrid(dims={self.dims}, solid={self.count()})"


def create(dims: Sequence[int], fill: int = 0) -> VoxelGrid:
    dims = _check_dims(dims)
    if fill not in (0, 1, True, False):
        raise ValidationError("fill must be 0 or 1")
    return VoxelGrid(np.full(dims, bool(fill)))


def boolean(a: VoxelGrid, b: VoxelGrid, op: str) -> VoxelGrid:
    if a.dims != b.dims:
        raise ShapeError(f"dimension mismatch {a.dims} vs {b.dims}")
    if op == "union":
        out = a.data | b.data
    elif op == "intersect":
        out = a.data & b.data
    elif op == "subtract":
        out = a.data & ~b.data
    else:
        raise ValidationError(f"unknown boolean op {op!r}")
    return VoxelGrid(out)


# -- primitives ---------------------------------------------------------------

_AXES = {"x": 0, "y": 1, "z": 2}


def _unit(name, values):
    arr = np.asarray(values, dtype=float)
    if np.any(arr < 0) or np.any(arr > 1):
        raise ValidationError(f"{name} must lie in [0, 1], got {values}")
    return arr


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    kind: str = field(default="box", init=False)

    def __post_init__(self):
        lo, hi = _unit("lo", self.lo), _unit("hi", self.hi)
        if lo.shape != (3,) or hi.shape != (3,) or np.any(hi <= lo):
            raise ValidationError(f"box extents must be positive, got lo={self.lo} hi={self.hi}")

    def contains(self, x, y, z):
        lo, hi = self.lo, self.hi
        return (
            (x >= lo[0]) & (x <= hi[0]) & (y >= lo[1]) & (y <= hi[1]) & (z >= lo[2]) & (z <= hi[2])
        )

    def to_dict(self):
        return {"kind": "box", "lo": list(self.lo), "hi": list(self.hi)}


@dataclass(frozen=True)
class CylinderBar:
    """Circular bar along a coordinate axis."""

    axis: str
    center: tuple[float, float]
    radius: float
    span: tuple[float, float] = (0.0, 1.0)
    kind: str = field(default="cylinder-bar", init=False)

    def __post_init__(self):
        if self.axis not in _AXES:
            raise ValidationError(f"axis must be one of x, y, z, got {self.axis!r}")
        _unit("center", self.center)
        lo, hi = _unit("span", self.span)
        if not 0 < self.radius <= 1 or hi <= lo:
            raise ValidationError("cylinder radius and span must be positive")

    def contains(self, x, y, z):
        pts = (x, y, z)
        a = _AXES[self.axis]
        p, q = (pts[i] for i in range(3) if i != a)
        along = pts[a]
        r2 = (p - self.center[0]) ** 2 + (q - self.center[1]) ** 2
        return (r2 <= self.radius**2) & (along >= self.span[0]) & (along <= self.span[1])

    def to_dict(self):
        return {
            "kind": "cylinder-bar",
            "axis": self.axis,
            "center": list(self.center),
            "radius": self.radius,
            "span": list(self.span),
        }


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float
    kind: str = field(default="sphere", init=False)

    def __post_init__(self):
        _unit("center", self.center)
        if not 0 < self.radius <= 1:
            raise ValidationError("sphere radius must lie in (0, 1]")

    def contains(self, x, y, z):
        c = self.center
        return (x - c[0]) ** 2 + (y - c[1]) ** 2 + (z - c[2]) ** 2 <= self.radius**2

    def to_dict(self):
        return {"kind": "sphere", "center": list(self.center), "radius": self.radius}


def bar(axis: str, center=(0.5, 0.5), width: float = 0.25) -> Box:
    """Square-section bar running the full length of ``axis``."""
    a = _AXES[axis]
    lo, hi = [0.0, 0.0, 0.0], [1.0, 1.0, 1.0]
    others = [i for i in range(3) if i != a]
    for c, i in zip(center, others):
        lo[i], hi[i] = c - width / 2, c + width / 2
    return Box(tuple(lo), tuple(hi))


def primitive_from_dict(d: dict):
    kind = d.get("kind")
    try:
        if kind == "box":
            return Box(tuple(d["lo"]), tuple(d["hi"]))
        if kind == "bar":
            return bar(d["axis"], tuple(d.get("center", (0.5, 0.5))), d.get("width", 0.25))
        if kind == "cylinder-bar":
            return CylinderBar(d["axis"], tuple(d["center"]), d["radius"], tuple(d.get("span", (0, 1))))
        if kind == "sphere":
            return Sphere(tuple(d["center"]), d["radius"])
    except KeyError as exc:
        raise ValidationError(f"primitive {kind!r} is missing field {exc}") from None
    raise ValidationError(f"unknown primitive kind {kind!r}")


def cell_centers(dims):
    nx, ny, nz = dims
    return (
        (np.arange(nx) + 0.5) / nx,
        (np.arange(ny) + 0.5) / ny,
        (np.arange(nz) + 0.5) / nz,
    )


def rasterize(prim, dims: Sequence[int]) -> VoxelGrid:
    """Solid iff the cell center lies inside the primitive (boundary inclusive)."""
    dims = _check_dims(dims)
    x, y, z = np.meshgrid(*cell_centers(dims), indexing="ij")
    return VoxelGrid(prim.contains(x, y, z))


def run_csg(script: Iterable[dict], dims: Sequence[int]) -> VoxelGrid:
    """Apply ``[{"primitive": {...}, "op": "union"}, ...]`` left to right on an empty grid."""
    grid = create(dims, 0)
    for n, entry in enumerate(script):
        if "primitive" not in entry:
            raise ValidationError(f"CSG entry {n} has no primitive")
        prim = primitive_from_dict(entry["primitive"])
        grid = boolean(grid, rasterize(prim, dims), entry.get("op", "union"))
    return grid


def load_csg(path) -> list[dict]:
    with open(path) as fh:
        script = json.load(fh)
    if not isinstance(script, list):
        raise ValidationError("CSG script must be a JSON list")
    return script


# -- file formats -------------------------------------------------------------


def write_vgrid(grid: VoxelGrid) -> bytes:
    header = VGRID_MAGIC + struct.pack("<3I", *grid.dims)
    payload = np.packbits(grid.flat().astype(np.uint8), bitorder="little")
    return header + payload.tobytes()


def read_vgrid(blob: bytes) -> VoxelGrid:
    if len(blob) < 20 or blob[:8] != VGRID_MAGIC:
        raise FormatError("not a .vgrid file (bad magic)")
    dims = struct.unpack("<3I", blob[8:20])
    try:
        dims = _check_dims(dims)
    except SizeError as exc:
        raise FormatError(str(exc)) from None
    n = dims[0] * dims[1] * dims[2]
    nbytes = (n + 7) // 8
    payload = blob[20:]
    if len(payload) != nbytes:
        raise FormatError(f"payload has {len(payload)} bytes, expected {nbytes}")
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), bitorder="little")
    return VoxelGrid.from_flat(dims, bits[:n])


def write_text(grid: VoxelGrid) -> str:
    lines = [" ".join(str(d) for d in grid.dims)]
    nx = grid.dims[0]
    bits = grid.flat().astype(np.uint8)
    for row in bits.reshape(-1, nx):
        lines.append(" ".join(map(str, row)))
    return "\n".join(lines) + "\n"


def read_text(text: str) -> VoxelGrid:
    tokens = text.split()
    if len(tokens) < 3:
        raise FormatError("missing dims line")
    try:
        dims = _check_dims([int(t) for t in tokens[:3]])
        bits = np.array([int(t) for t in tokens[3:]], dtype=np.int64)
    except (ValueError, SizeError) as exc:
        raise FormatError(str(exc)) from None
    if bits.size != dims[0] * dims[1] * dims[2]:
        raise FormatError(f"{bits.size} values do not fill a {dims} grid")
    if not np.isin(bits, (0, 1)).all():
        raise FormatError("voxel values must be 0 or 1")
    return VoxelGrid.from_flat(dims, bits)


def load(path) -> VoxelGrid:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] == VGRID_MAGIC:
        return read_vgrid(blob)
    try:
        return read_text(blob.decode("ascii"))
    except UnicodeDecodeError:
        raise FormatError(f"{path}: neither .vgrid nor text voxel format") from None
