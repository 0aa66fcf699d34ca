"""Minimum-compliance optimization of a B-spline density field by Optimality Criteria.

The density ``rho(u, v, w) = sum R_ijk rho_ijk`` is sampled at element
centers; each element's stiffness follows the fitted density laws, and the
control values are updated multiplicatively under a volume constraint.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from ..spline import PeriodicBSpline, basis_matrix, make_symmetric_knots
from .fem import BaseMaterial, StructuredHexMesh, element_stiffness, fe_solve
from .gibson import GibsonAshbyCurve

log = logging.getLogger(__name__)

CASES = ("three-point-bending", "compression")


@dataclass
class TopOptConfig:
    elements: tuple[int, int, int] = (24, 8, 8)
    spline_shape: tuple[int, int, int] = (12, 4, 4)
    degrees: tuple[int, int, int] = (2, 2, 2)
    volfrac: float = 0.4
    rho_min: float = 0.05
    rho_max: float = 0.95
    move: float = 0.2
    damping: float = 0.5
    max_iters: int = 60
    tol: float = 1e-3
    case: str = "three-point-bending"
    size: tuple[float, float, float] | None = None
    solver_rtol: float = 1e-8

    def __post_init__(self):
        self.elements = tuple(int(e) for e in self.elements)
        self.spline_shape = tuple(int(n) for n in self.spline_shape)
        self.degrees = tuple(int(p) for p in self.degrees)
        if not 0 < self.rho_min < self.rho_max <= 1:
            raise ConfigError("need 0 < rho_min < rho_max <= 1")
        if not self.rho_min < self.volfrac < self.rho_max:
            raise ConfigError(f"volume fraction {self.volfrac} outside ({self.rho_min}, {self.rho_max})")
        if self.case not in CASES:
            raise ConfigError(f"unknown load case {self.case!r}; choose from {CASES}")
        for n, p in zip(self.spline_shape, self.degrees):
            if n <= p:
                raise ConfigError("density spline needs more control values than its degree")


def standard_cases(name: str, mesh: StructuredHexMesh) -> tuple[np.ndarray, np.ndarray]:
    """Boundary-condition presets: ``(fixed dof mask, load vector)``.

    ``three-point-bending``: the two bottom edges at the x-extremes are
    pinned; a unit downward load is spread over the top nodes of the middle
    cross-section.  ``compression``: bottom face clamped, unit downward load
    spread uniformly over the top face.
    """
    ex, ey, ez = mesh.shape
    i, j, k = (a.ravel(order="F") for a in np.indices(mesh.node_shape))
    fixed_nodes = np.zeros(mesh.n_nodes, bool)
    if name == "three-point-bending":
        fixed_nodes = (k == 0) & ((i == 0) | (i == ex))
        mid = (ex // 2,) if ex % 2 == 0 else (ex // 2, ex // 2 + 1)
        loaded = (k == ez) & np.isin(i, mid)
    elif name == "compression":
        fixed_nodes = k == 0
        loaded = k == ez
    else:
        raise ConfigError(f"unknown load case {name!r}")
    fixed = np.repeat(fixed_nodes, 3)
    F = np.zeros(mesh.n_dofs)
    F[3 * np.flatnonzero(loaded) + 2] = -1.0 / loaded.sum()
    return fixed, F


@dataclass
class TopOptResult:
    density: PeriodicBSpline
    trace: list[dict] = field(default_factory=list)
    converged: bool = False

    @property
    def compliance(self) -> list[float]:
        return [t["compliance"] for t in self.trace]


class ComplianceProblem:
    """Compliance and its gradient w.r.t. the density control values."""

    def __init__(self, cfg: TopOptConfig, curves: GibsonAshbyCurve, mat: BaseMaterial):
        self.cfg = cfg
        self.mesh = StructuredHexMesh(*cfg.elements, size=cfg.size)
        self.knots = [make_symmetric_knots(n, p) for n, p in zip(cfg.spline_shape, cfg.degrees)]
        centers = [(np.arange(e) + 0.5) / e for e in cfg.elements]
        mats = [basis_matrix(kv, c) for kv, c in zip(self.knots, centers)]
        # element order is x-fastest, so the x factor is the innermost Kronecker factor
        self.P = np.kron(np.kron(mats[2], mats[1]), mats[0])
        w = [kv.basis_integrals() for kv in self.knots]
        self.vol_weights = np.kron(np.kron(w[2], w[1]), w[0])
        C_star = mat.C
        self.entries = list(curves.entries.items())
        basis = []
        for (i, j), _ in self.entries:
            E = np.zeros((6, 6))
            E[i, j] = E[j, i] = C_star[i, j]
            basis.append(element_stiffness(E, self.mesh.h))
        self.Kb = np.array(basis)  # (n_entries, 24, 24)
        self.curves = curves
        self.fixed, self.F = standard_cases(cfg.case, self.mesh)

    def spline(self, x: np.ndarray) -> PeriodicBSpline:
        return PeriodicBSpline(self.knots, self.to_grid(x))

    def to_grid(self, x: np.ndarray) -> np.ndarray:
        return x.reshape(self.cfg.spline_shape, order="F")

    def volume(self, x: np.ndarray) -> float:
        return float(self.vol_weights @ x)

    def evaluate(self, x: np.ndarray, rtol: float | None = None):
        rho_e = self.P @ x
        vals, ders = self.curves.factors(rho_e)
        Ke = np.tensordot(vals, self.Kb, axes=(1, 0))
        U = fe_solve(self.mesh, Ke, self.fixed, self.F, rtol=rtol or self.cfg.solver_rtol)
        c = float(self.F @ U)
        ue = U[self.mesh.edof]
        q = np.einsum("ea,mab,eb->em", ue, self.Kb, ue)
        dc_e = -(ders * q).sum(axis=1)
        return c, self.P.T @ dc_e, rho_e


def _oc_update(x, dc, dv, target, cfg: TopOptConfig):
    lo = np.maximum(cfg.rho_min, x - cfg.move)
    hi = np.minimum(cfg.rho_max, x + cfg.move)
    if dv @ lo > target or dv @ hi < target:
        raise ConfigError(f"volume fraction {target} cannot be bracketed within bounds and move limits")
    scale = np.max(np.abs(dc))
    sens = np.maximum(-dc / scale, 0.0) if scale > 0 else np.zeros_like(dc)

    def trial(lam):
        return np.clip(x * (sens / (lam * dv)) ** cfg.damping, lo, hi)

    l1, l2 = 1e-20, 1e20
    for _ in range(400):
        lmid = np.sqrt(l1 * l2)
        if dv @ trial(lmid) > target:
            l1 = lmid
        else:
            l2 = lmid
        if l2 / l1 - 1 < 1e-14:
            break
    new = trial(l2)
    # close the remaining gap along the free (unclipped) entries
    gap = target - dv @ new
    free = (new > lo) & (new < hi)
    if free.any() and abs(gap) > 0:
        shift = gap / dv[free].sum()
        new[free] = np.clip(new[free] + shift, lo[free], hi[free])
    return new


def topopt(cfg: TopOptConfig, curves: GibsonAshbyCurve, mat: BaseMaterial | None = None) -> TopOptResult:
    mat = mat or BaseMaterial()
    prob = ComplianceProblem(cfg, curves, mat)
    x = np.full(prob.P.shape[1], cfg.volfrac)
    target = cfg.volfrac * prob.vol_weights.sum()
    trace = []
    converged = False
    for it in range(cfg.max_iters + 1):
        c, dc, _ = prob.evaluate(x)
        vol = prob.volume(x)
        trace.append({"iter": it, "compliance": c, "volume": vol, "change": 0.0})
        if it > 1 and c > trace[-2]["compliance"] * 1.01:
            log.warning("compliance rose by more than 1%% at iteration %d", it)
        if it == cfg.max_iters:
            break
        new = _oc_update(x, dc, prob.vol_weights, target, cfg)
        change = float(np.max(np.abs(new - x)))
        trace[-1]["change"] = change
        x = new
        if change < cfg.tol:
            c, _, _ = prob.evaluate(x)
            trace.append({"iter": it + 1, "compliance": c, "volume": prob.volume(x), "change": 0.0})
            converged = True
            break
    log.info("topopt: compliance %.6g -> %.6g in %d iterations", trace[0]["compliance"], trace[-1]["compliance"], len(trace) - 1)
    return TopOptResult(prob.spline(x), trace, converged)
