"""Energy-based periodic homogenization of a voxelized unit cell."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg

from ..errors import InfeasibleError, SolverError, ValidationError
from ..voxelgrid import VoxelGrid
from .fem import HEX_CORNERS, BaseMaterial, element_stiffness, element_strain_load

log = logging.getLogger(__name__)

VOID_STIFFNESS = 1e-3


@dataclass(frozen=True, eq=False)
class HomogenizedTensor:
    C: np.ndarray

    def __post_init__(self):
        C = np.asarray(self.C, dtype=float)
        if C.shape != (6, 6):
            raise ValidationError("homogenized tensor must be 6x6")
        C = 0.5 * (C + C.T)
        C.setflags(write=False)
        object.__setattr__(self, "C", C)

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.C).min())

    def symmetry_class(self, rtol: float = 1e-3) -> str:
        """Coarse classification from the nonzero pattern and diagonal equalities."""
        C = self.C
        scale = np.abs(C).max()
        off = np.abs(C[:3, 3:]).max() + np.abs(C[3:, 3:] - np.diag(np.diag(C[3:, 3:]))).max()
        if off > rtol * scale:
            return "anisotropic"
        d = np.diag(C)
        close = lambda a, b: abs(a - b) <= rtol * scale  # noqa: E731
        if close(d[0], d[1]) and close(d[1], d[2]) and close(d[3], d[4]) and close(d[4], d[5]):
            if close(C[0, 1], C[0, 2]) and close(C[0, 1], C[1, 2]):
                if close(d[3], 0.5 * (d[0] - C[0, 1])):
                    return "isotropic"
                return "cubic"
        return "orthotropic"


def _periodic_edof(n: tuple[int, int, int]) -> np.ndarray:
    nx, ny, nz = n
    i, j, k = (a.ravel(order="F") for a in np.meshgrid(*(np.arange(e) for e in n), indexing="ij"))
    nodes = np.empty((len(i), 8), dtype=np.int64)
    for a, (di, dj, dk) in enumerate(HEX_CORNERS):
        nodes[:, a] = (i + di) % nx + nx * (((j + dj) % ny) + ny * ((k + dk) % nz))
    return (3 * nodes[:, :, None] + np.arange(3)).reshape(-1, 24)


def homogenize(unit, mat: BaseMaterial, void: float = VOID_STIFFNESS, rtol: float = 1e-10) -> HomogenizedTensor:
    """Effective 6x6 stiffness of a periodic cell.

    ``unit`` is a :class:`VoxelGrid` (solid -> base material, void ->
    ``void * C*``) or an array of per-voxel stiffness factors in ``(0, 1]``.
    The cell is the unit cube; six unit macroscopic strains are applied with
    periodic boundary conditions on trilinear hexahedra.
    """
    if isinstance(unit, VoxelGrid):
        if unit.count() == 0:
            raise InfeasibleError("unit cell has no solid voxel")
        scale = np.where(unit.data, 1.0, void)
    else:
        scale = np.asarray(unit, dtype=float)
        if scale.ndim != 3 or np.any(scale <= 0):
            raise InfeasibleError("stiffness factors must form a positive 3D array")
    n = scale.shape
    if min(n) < 2:
        raise ValidationError("homogenization needs at least 2 voxels per axis")
    h = tuple(1.0 / e for e in n)
    C0 = mat.C
    K0 = element_stiffness(C0, h)
    F0 = element_strain_load(C0, h)
    s = scale.ravel(order="F")
    edof = _periodic_edof(n)
    ndof = 3 * n[0] * n[1] * n[2]

    rows = np.repeat(edof, 24, axis=1).ravel()
    cols = np.tile(edof, (1, 24)).ravel()
    K = sp.coo_matrix((np.outer(s, K0.ravel()).ravel(), (rows, cols)), shape=(ndof, ndof)).tocsc()
    F = np.zeros((ndof, 6))
    np.add.at(F, edof.ravel(), (s[:, None, None] * F0[None]).reshape(-1, 6))

    # pin node 0 to remove rigid translations
    free = np.arange(3, ndof)
    chi = np.zeros((ndof, 6))
    Kf = K[free][:, free].tocsr()
    diag = Kf.diagonal()
    M = LinearOperator(Kf.shape, matvec=lambda x: x / diag, dtype=float)
    for q in range(6):
        rhs = F[free, q]
        if not np.any(rhs):
            continue
        x, info = cg(Kf, rhs, rtol=rtol, atol=0.0, M=M, maxiter=50 * len(free))
        if info != 0:
            raise SolverError(f"homogenization load case {q} did not converge")
        chi[free, q] = x

    chi_e = chi[edof]  # (ne, 24, 6)
    vol = h[0] * h[1] * h[2]
    CH = s.sum() * C0 * vol
    CH = CH - np.einsum("e,ap,eaq->pq", s, F0, chi_e)
    CH = CH - np.einsum("e,eap,aq->pq", s, chi_e, F0)
    CH = CH + np.einsum("e,eap,ab,ebq->pq", s, chi_e, K0, chi_e, optimize=True)
    return HomogenizedTensor(CH)


def build_density_curves(unit, mat: BaseMaterial, rhos, res: int = 16, void: float = VOID_STIFFNESS):
    """Homogenize a spline unit over a density ladder and fit the exponential laws.

    Each target density is turned into a threshold by quantile inversion on
    the ``res^3`` cell-center samples of the unit, so the voxelized cell hits
    the target up to one voxel.  The measured voxel densities are used for
    the fit; every tensor is kept in the returned ladder.
    """
    from ..lattice import _quantile
    from .gibson import fit_curves

    if res < 8:
        raise ValidationError("voxel resolution must be at least 8")
    rhos = np.asarray(rhos, dtype=float)
    if np.any(rhos <= 0) or np.any(rhos >= 1):
        raise ValidationError("ladder densities must lie in (0, 1)")
    x = (np.arange(res) + 0.5) / res
    vals = unit.eval_grid(x, x, x)
    srt = np.sort(vals, axis=None)
    measured, tensors, ladder = [], [], []
    for rho in rhos:
        c = float(_quantile(srt, rho))
        vox = VoxelGrid(vals <= c)
        H = homogenize(vox, mat, void=void)
        actual = vox.solid_fraction()
        if H.min_eigenvalue() < -1e-8 * np.abs(H.C).max():
            log.warning("homogenized tensor at rho=%.3f is not positive semidefinite", actual)
        measured.append(actual)
        tensors.append(H.C)
        ladder.append({"target": float(rho), "rho": actual, "threshold": c, "C": H.C.tolist(), "class": H.symmetry_class()})
    curves = fit_curves(measured, tensors, mat.C)
    curves.ladder = ladder
    return curves
