"""Trilinear hexahedral elements on structured grids and a PCG solver."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg

from ..errors import SolverError, ValidationError

log = logging.getLogger(__name__)

# local node order: bottom face counter-clockwise, then top face
HEX_CORNERS = np.array(
    [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]]
)


def isotropic_stiffness(E: float, nu: float) -> np.ndarray:
    """6x6 Voigt elasticity (xx, yy, zz, yz, xz, xy; engineering shears)."""
    lam = E * nu / ((1 + nu) * (1 - 2 * nu))
    mu = E / (2 * (1 + nu))
    C = np.zeros((6, 6))
    C[:3, :3] = lam
    C[np.arange(3), np.arange(3)] = lam + 2 * mu
    C[np.arange(3, 6), np.arange(3, 6)] = mu
    return C


@dataclass(frozen=True)
class BaseMaterial:
    E: float = 2e9
    nu: float = 0.35

    def __post_init__(self):
        if not self.E > 0:
            raise ValidationError("Young's modulus must be positive")
        if not -1 < self.nu < 0.5:
            raise ValidationError("Poisson ratio must lie in (-1, 0.5)")

    @property
    def C(self) -> np.ndarray:
        return isotropic_stiffness(self.E, self.nu)


@lru_cache(maxsize=16)
def _gauss_B(h: tuple[float, float, float]) -> tuple[np.ndarray, float]:
    """Strain-displacement matrices at the 2x2x2 Gauss points and the point weight."""
    g = 1 / np.sqrt(3)
    signs = 2 * HEX_CORNERS - 1
    Bs = []
    for gp in signs * g:
        dN = np.empty((8, 3))
        for a, s in enumerate(signs):
            f = 1 + s * gp
            dN[a] = 0.125 * np.array([s[0] * f[1] * f[2], f[0] * s[1] * f[2], f[0] * f[1] * s[2]])
        dN = dN * (2 / np.asarray(h))
        B = np.zeros((6, 24))
        for a in range(8):
            dx, dy, dz = dN[a]
            c = 3 * a
            B[0, c] = dx
            B[1, c + 1] = dy
            B[2, c + 2] = dz
            B[3, c + 1], B[3, c + 2] = dz, dy
            B[4, c], B[4, c + 2] = dz, dx
            B[5, c], B[5, c + 1] = dy, dx
        Bs.append(B)
    weight = h[0] * h[1] * h[2] / 8
    out = np.array(Bs)
    out.setflags(write=False)
    return out, weight


def element_stiffness(C: np.ndarray, h=(1.0, 1.0, 1.0)) -> np.ndarray:
    B, w = _gauss_B(tuple(float(x) for x in h))
    return w * np.einsum("gia,ij,gjb->ab", B, C, B)


def element_strain_load(C: np.ndarray, h=(1.0, 1.0, 1.0)) -> np.ndarray:
    """``int B^T C dV`` (24 x 6): nodal forces of unit macroscopic strains."""
    B, w = _gauss_B(tuple(float(x) for x in h))
    return w * np.einsum("gia,ij->aj", B, C)


class StructuredHexMesh:
    """Box of ``ex x ey x ez`` hexahedra; node and dof numbering is x-fastest."""

    def __init__(self, ex: int, ey: int, ez: int, size=None):
        self.shape = (int(ex), int(ey), int(ez))
        if min(self.shape) < 1:
            raise ValidationError("element counts must be >= 1")
        self.size = tuple(float(s) for s in (size if size is not None else self.shape))
        self.h = tuple(s / e for s, e in zip(self.size, self.shape))
        nx, ny, nz = (e + 1 for e in self.shape)
        self.node_shape = (nx, ny, nz)
        self.n_nodes = nx * ny * nz
        self.n_dofs = 3 * self.n_nodes
        i, j, k = np.meshgrid(*(np.arange(e) for e in self.shape), indexing="ij")
        i, j, k = (a.ravel(order="F") for a in (i, j, k))
        nodes = np.empty((len(i), 8), dtype=np.int64)
        for a, (di, dj, dk) in enumerate(HEX_CORNERS):
            nodes[:, a] = (i + di) + nx * ((j + dj) + ny * (k + dk))
        self.elem_nodes = nodes
        self.edof = (3 * nodes[:, :, None] + np.arange(3)).reshape(-1, 24)
        self.n_elems = len(nodes)

    def node_coords(self) -> np.ndarray:
        nx, ny, nz = self.node_shape
        idx = np.indices(self.node_shape).reshape(3, -1, order="F").T
        return idx * np.asarray(self.h)

    def elem_centers(self) -> np.ndarray:
        """Element centers in normalized [0, 1]^3 coordinates."""
        idx = np.indices(self.shape).reshape(3, -1, order="F").T
        return (idx + 0.5) / np.asarray(self.shape)

    def node_index(self, i, j, k):
        nx, ny, _ = self.node_shape
        return i + nx * (j + ny * k)

    def assemble(self, Ke: np.ndarray) -> sp.csr_matrix:
        Ke = np.broadcast_to(Ke, (self.n_elems, 24, 24))
        rows = np.repeat(self.edof, 24, axis=1).ravel()
        cols = np.tile(self.edof, (1, 24)).ravel()
        K = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(self.n_dofs, self.n_dofs)).tocsr()
        return K


def fe_solve(
    mesh: StructuredHexMesh,
    Ke: np.ndarray,
    fixed: np.ndarray,
    F: np.ndarray,
    rtol: float = 1e-8,
    maxiter: int | None = None,
    return_matrix: bool = False,
):
    """Solve ``K U = F`` with the dofs in boolean mask ``fixed`` held at zero.

    Jacobi-preconditioned conjugate gradients to relative residual ``rtol``.
    """
    fixed = np.asarray(fixed, dtype=bool)
    F = np.asarray(F, dtype=float)
    if fixed.shape != (mesh.n_dofs,) or F.shape != (mesh.n_dofs,):
        raise ValidationError("fixed mask and load vector must have one entry per dof")
    if not fixed.any():
        raise SolverError("no fixed dofs: stiffness matrix is singular")
    if not np.all(np.isfinite(F)):
        raise ValidationError("loads must be finite")
    K = mesh.assemble(Ke)
    U = np.zeros(mesh.n_dofs)
    free = np.flatnonzero(~fixed)
    f = F[free]
    if not np.any(f):
        return (U, K) if return_matrix else U
    Kf = K[free][:, free].tocsr()
    diag = Kf.diagonal()
    if np.any(diag <= 0):
        raise SolverError("stiffness matrix has a nonpositive diagonal")
    M = LinearOperator(Kf.shape, matvec=lambda x: x / diag, dtype=float)
    x, info = cg(Kf, f, rtol=rtol, atol=0.0, M=M, maxiter=maxiter or 20 * len(f))
    res = np.linalg.norm(Kf @ x - f) / np.linalg.norm(f)
    if info != 0 or not np.isfinite(res) or res > 10 * rtol:
        raise SolverError(f"PCG did not converge (info={info}, relative residual {res:.3g}); check constraints")
    U[free] = x
    return (U, K) if return_matrix else U
