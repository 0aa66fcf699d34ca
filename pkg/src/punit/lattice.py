"""Splicing units into lattices, density/threshold relations and mesh output.

A structure of ``E_u x E_v x E_w`` units inside the unit cube is evaluated as
``phi(psi(u), psi(v), psi(w))`` with the wrap map ``psi(E, u) = uE - floor(uE)``,
and is solid where that value is ``<= c(u, v, w)``.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from skimage.measure import marching_cubes as _skimage_mc

from .dtm import ScalarGrid
from .errors import DomainError, ValidationError
from .fit import FitConfig, con_lspia
from .spline import PeriodicBSpline, basis_matrix, tensor_apply

log = logging.getLogger(__name__)

DENSITY_CLAMP = (1e-3, 1.0 - 1e-3)

__all__ = [
    "LatticeSpec",
    "TriMesh",
    "psi",
    "eval_structure",
    "structure_grid",
    "relative_density",
    "threshold_for_density",
    "threshold_field_from_density",
    "marching_cubes",
    "export_stl",
    "export_obj",
    "read_stl_count",
    "parse_obj",
]


def psi(E: int, u):
    """Wrap map ``uE - floor(uE)``; maps [0, 1] into [0, 1)."""
    uE = np.asarray(u, dtype=float) * E
    return uE - np.floor(uE)


def _unit_param(E: int, u: np.ndarray) -> np.ndarray:
    # closed far face: u == 1 maps to the unit's far face, not back to 0
    out = psi(E, u)
    return np.where(u >= 1.0, 1.0, out)


@dataclass(frozen=True)
class LatticeSpec:
    cells: tuple[int, int, int]
    unit: PeriodicBSpline
    threshold: float | PeriodicBSpline = 0.0

    def __post_init__(self):
        cells = tuple(int(e) for e in self.cells)
        if len(cells) != 3 or min(cells) < 1:
            raise ValidationError(f"cell counts must be >= 1, got {self.cells}")
        object.__setattr__(self, "cells", cells)

    def threshold_at(self, pts: np.ndarray) -> np.ndarray:
        if isinstance(self.threshold, PeriodicBSpline):
            return self.threshold.eval_points(pts)
        return np.full(pts.shape[:-1], float(self.threshold))


def eval_structure(spec: LatticeSpec, u, v, w) -> np.ndarray:
    pts = np.stack(np.broadcast_arrays(u, v, w), axis=-1).astype(float)
    if np.any(~np.isfinite(pts)) or np.any(pts < 0) or np.any(pts > 1):
        raise DomainError("structure evaluated outside [0, 1]^3")
    local = np.stack([_unit_param(E, pts[..., a]) for a, E in enumerate(spec.cells)], axis=-1)
    return spec.unit.eval_points(local)


def structure_grid(spec: LatticeSpec, xs, ys, zs) -> np.ndarray:
    """``structure - threshold`` on a tensor grid (solid where <= 0)."""
    axes = (xs, ys, zs)
    mats = [basis_matrix(kv, _unit_param(E, np.asarray(x, float))) for kv, E, x in zip(spec.unit.knots, spec.cells, axes)]
    vals = tensor_apply(spec.unit.coeffs, *mats)
    if isinstance(spec.threshold, PeriodicBSpline):
        vals = vals - spec.threshold.eval_grid(*axes)
    else:
        vals = vals - float(spec.threshold)
    return vals


def _centers(res: int) -> np.ndarray:
    return (np.arange(res) + 0.5) / res


def _sorted_samples(phi: PeriodicBSpline, res: int) -> np.ndarray:
    x = _centers(res)
    return np.sort(phi.eval_grid(x, x, x), axis=None)


def relative_density(phi: PeriodicBSpline, c: float, res: int = 64) -> float:
    """Midpoint-rule volume fraction of ``{phi <= c}``."""
    if res < 32:
        raise ValidationError("density sampling needs at least 32 samples per axis")
    x = _centers(res)
    return float(np.mean(phi.eval_grid(x, x, x) <= c))


def _quantile(sorted_vals: np.ndarray, rho) -> np.ndarray:
    n = len(sorted_vals)
    idx = np.clip(np.ceil(np.asarray(rho) * n).astype(int) - 1, 0, n - 1)
    return sorted_vals[idx]


def threshold_for_density(phi: PeriodicBSpline, rho: float, res: int = 64) -> float:
    """Smallest sampled value ``c`` with at least a ``rho`` fraction of samples ``<= c``."""
    if not 0 < rho < 1:
        raise ValidationError(f"target density must lie in (0, 1), got {rho}")
    if res < 32:
        raise ValidationError("density sampling needs at least 32 samples per axis")
    return float(_quantile(_sorted_samples(phi, res), rho))


def _cell_mean_density(rho_field, cells, sub: int) -> np.ndarray:
    if callable(rho_field) and not isinstance(rho_field, PeriodicBSpline):
        f = rho_field
    elif isinstance(rho_field, PeriodicBSpline):
        f = None
    else:
        return np.full(cells, float(rho_field))
    axes = []
    for E in cells:
        off = (np.arange(sub) + 0.5) / (sub * E)
        axes.append((np.arange(E)[:, None] / E + off[None, :]).ravel())
    if f is None:
        vals = rho_field.eval_grid(*axes)
    else:
        g = np.meshgrid(*axes, indexing="ij")
        vals = np.asarray(f(*g), dtype=float)
    Eu, Ev, Ew = cells
    return vals.reshape(Eu, sub, Ev, sub, Ew, sub).mean(axis=(1, 3, 5))


def _cell_densities(phi_local: np.ndarray, field: PeriodicBSpline, cells, m: int) -> np.ndarray:
    """Per-cell solid fraction of the lattice with threshold ``field``, ``m^3`` midpoints per cell."""
    local = _centers(m)
    axes = [(np.arange(E)[:, None] + local[None, :]).ravel() / E for E in cells]
    c = field.eval_grid(*axes)
    Eu, Ev, Ew = cells
    solid = phi_local[None, :, None, :, None, :] <= c.reshape(Eu, m, Ev, m, Ew, m)
    return solid.mean(axis=(1, 3, 5))


def threshold_field_from_density(
    phi: PeriodicBSpline,
    rho_field,
    cells: Sequence[int],
    res: int = 64,
    fit: FitConfig | None = None,
    sub: int = 4,
    corrections: int = 4,
    probe: int = 16,
) -> tuple[PeriodicBSpline, np.ndarray]:
    """Threshold spline whose per-cell density follows ``rho_field``.

    ``rho_field`` is a density spline on [0, 1]^3, a callable ``f(u, v, w)``
    or a constant.  Each cell's mean target density is inverted through the
    unit's sampled value distribution, and a spline is fitted through the
    per-cell thresholds at the cell centers (unconstrained LSPIA).  A smooth
    field varies inside each cell, so up to ``corrections`` passes re-measure
    the per-cell density on ``probe^3`` points and shift each cell's
    effective target by the remaining error before refitting.  Returns the
    threshold spline and the per-cell thresholds.
    """
    cells = tuple(int(e) for e in cells)
    targets = _cell_mean_density(rho_field, cells, sub)
    lo, hi = DENSITY_CLAMP
    if targets.min() < lo or targets.max() > hi:
        log.warning("target densities outside [%g, %g] clamped", lo, hi)
        targets = np.clip(targets, lo, hi)
    srt = _sorted_samples(phi, res)
    if fit is None:
        fit = FitConfig(
            n=cells,
            p=tuple(min(3, E - 1) for E in cells),
            r=(0, 0, 0),
            max_iters=5000,
            tol=1e-12,
            accel="cg",
        )
    local = _centers(probe)
    phi_local = phi.eval_grid(local, local, local)
    # what a constant per-cell threshold gives at the probe resolution
    probe_sorted = np.sort(phi_local, axis=None)
    reference = np.searchsorted(probe_sorted, _quantile(srt, targets), side="right") / probe_sorted.size
    effective = targets.copy()
    best = None
    for attempt in range(corrections + 1):
        thresholds = _quantile(srt, effective)
        fit.init = float(np.mean(thresholds))
        spline, report = con_lspia(ScalarGrid(thresholds), fit)
        measured = _cell_densities(phi_local, spline, cells, probe)
        err = float(np.max(np.abs(measured - reference)))
        if best is None or err < best[0]:
            best = (err, spline, thresholds)
        if err < 0.5 / probe**3 or attempt == corrections:
            break
        effective = np.clip(effective + (reference - measured), lo, hi)
    err, spline, thresholds = best
    log.info("threshold field fitted: worst per-cell density error %.3g", err)
    return spline, thresholds


# -- meshing ------------------------------------------------------------------------------


@dataclass
class TriMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValidationError("face index out of range")

    def face_normals(self, normalize: bool = True) -> np.ndarray:
        v = self.vertices
        n = np.cross(v[self.faces[:, 1]] - v[self.faces[:, 0]], v[self.faces[:, 2]] - v[self.faces[:, 0]])
        if normalize:
            n = n / np.linalg.norm(n, axis=1, keepdims=True)
        return n

    def area(self) -> float:
        return float(0.5 * np.linalg.norm(self.face_normals(False), axis=1).sum())

    def volume(self) -> float:
        """Signed enclosed volume; positive for outward-oriented closed meshes."""
        v = self.vertices[self.faces]
        return float(np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2])).sum() / 6.0)

    def scaled(self, size: Sequence[float]) -> "TriMesh":
        return TriMesh(self.vertices * np.asarray(size, dtype=float), self.faces.copy())


def marching_cubes(field: Callable | np.ndarray, iso: float = 0.0, resolution: int = 64) -> TriMesh:
    """Closed isosurface of ``{field <= iso}`` over [0, 1]^3.

    ``field`` is either a callable ``f(xs, ys, zs) -> (len(xs), len(ys), len(zs))``
    evaluated on the tensor grid ``linspace(0, 1, resolution + 1)`` per axis,
    or a pre-sampled array on such a grid.  Solid regions that touch the cube
    faces are capped by a layer of void samples outside the domain.
    """
    if isinstance(field, np.ndarray):
        vals = np.asarray(field, dtype=float)
        if vals.ndim != 3 or min(vals.shape) < 9:
            raise ValidationError("sampled field must be 3D with at least 9 samples per axis")
    else:
        if resolution < 8:
            raise ValidationError("resolution must be at least 8")
        x = np.linspace(0.0, 1.0, resolution + 1)
        vals = np.asarray(field(x, x, x), dtype=float)
    shape = vals.shape
    inside = vals <= iso
    if not inside.any():
        log.warning("field has no solid region; empty mesh")
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    span = float(np.max(vals) - np.min(vals))
    pad = iso + max(1.0, span)
    padded = np.pad(vals, 1, mode="constant", constant_values=pad)
    verts, faces, _, _ = _skimage_mc(
        padded, level=iso, gradient_direction="descent", allow_degenerate=False, method="lewiner"
    )
    # index space -> [0, 1]; pad layer sits just outside, clipped onto the faces
    verts = (verts - 1.0) / (np.asarray(shape, dtype=float) - 1.0)
    verts = np.clip(verts, 0.0, 1.0)
    mesh = _weld(verts, faces)
    if len(mesh.faces) == 0:
        log.warning("isosurface is empty")
    return mesh


def _weld(verts: np.ndarray, faces: np.ndarray) -> TriMesh:
    uniq, inverse = np.unique(verts, axis=0, return_inverse=True)
    f = inverse.reshape(-1)[faces]
    keep = (f[:, 0] != f[:, 1]) & (f[:, 1] != f[:, 2]) & (f[:, 0] != f[:, 2])
    f = f[keep]
    v = uniq
    area2 = np.linalg.norm(np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]]), axis=1)
    f = f[area2 > 0.0]
    used, remap = np.unique(f, return_inverse=True)
    return TriMesh(v[used], remap.reshape(-1, 3))


def export_stl(mesh: TriMesh, header: bytes = b"punit binary STL") -> bytes:
    if len(mesh.faces) == 0:
        raise ValidationError("cannot export an empty mesh")
    normals = mesh.face_normals().astype("<f4")
    tri = mesh.vertices[mesh.faces].astype("<f4").reshape(-1, 9)
    rec = np.zeros(len(tri), dtype=[("n", "<f4", 3), ("v", "<f4", 9), ("attr", "<u2")])
    rec["n"] = normals
    rec["v"] = tri
    return header[:80].ljust(80, b"\0") + struct.pack("<I", len(tri)) + rec.tobytes()


def read_stl_count(blob: bytes) -> int:
    if len(blob) < 84:
        raise ValidationError("STL too short")
    (count,) = struct.unpack("<I", blob[80:84])
    if len(blob) != 84 + 50 * count:
        raise ValidationError("STL size does not match its triangle count")
    return count


def export_obj(mesh: TriMesh) -> str:
    if len(mesh.faces) == 0:
        raise ValidationError("cannot export an empty mesh")
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    return "\n".join(lines) + "\n"


def parse_obj(text: str) -> TriMesh:
    verts, faces = [], []
    for line in text.splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            faces.append([int(x.split("/")[0]) - 1 for x in parts[1:4]])
    return TriMesh(np.array(verts).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))


def splice_mesh(spec: LatticeSpec, resolution: int = 128, size: Sequence[float] = (1.0, 1.0, 1.0)) -> TriMesh:
    """Mesh of the lattice ``{structure <= threshold}`` scaled to ``size``."""
    mesh = marching_cubes(lambda x, y, z: structure_grid(spec, x, y, z), 0.0, resolution)
    return mesh.scaled(size)


def edge_incidence(mesh: TriMesh) -> np.ndarray:
    """Number of triangles sharing each undirected edge."""
    f = mesh.faces
    e = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    return counts


def seam_jump(spec: LatticeSpec, eps: float = 1e-9, samples: int = 16, seed: int = 0) -> float:
    """Largest ``|value(k/E - eps) - value(k/E + eps)|`` over internal cell faces."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for axis, E in enumerate(spec.cells):
        for k in range(1, E):
            pts = rng.random((samples, 3))
            lo, hi = pts.copy(), pts.copy()
            lo[:, axis] = k / E - eps
            hi[:, axis] = k / E + eps
            a = eval_structure(spec, *lo.T)
            b = eval_structure(spec, *hi.T)
            worst = max(worst, float(np.max(np.abs(a - b))))
    return worst
