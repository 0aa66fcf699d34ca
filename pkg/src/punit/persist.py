"""0-dimensional persistence of sampled sublevel sets and connectivity optimization.

The filtration is the lower-star filtration of the 6-connected grid of
cell-center samples: vertices enter in increasing value (ties by linear
index) and an edge enters with its later endpoint.  Components are tracked
with union-find; when components meet, the younger one (later birth vertex)
dies at the value of the vertex that joined them, which is also its merge
vertex.  The merge vertex of the second most persistent pair locates the
saddle whose value, ``d_1``, is the connectivity loss.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .errors import ValidationError
from .spline import PeriodicBSpline

log = logging.getLogger(__name__)

TIE_TOL = 1e-12

__all__ = [
    "SampledFiltration",
    "PersistencePair",
    "ConnectivityConfig",
    "ConnectivityResult",
    "persistence_0d",
    "loss_and_grad",
    "optimize_connectivity",
    "sample_filtration",
]


@dataclass(frozen=True, eq=False)
class SampledFiltration:
    """Vertex values on a ``(gx, gy, gz)`` grid; vertex ``(i,j,k)`` sits at the cell center."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3:
            raise ValidationError("filtration values must be a 3D array")
        if not np.all(np.isfinite(v)):
            raise ValidationError("filtration values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.values.shape)

    def coords(self, index: int) -> tuple[float, float, float]:
        """Parametric coordinates of a linear (x-fastest) vertex index."""
        gx, gy, gz = self.dims
        i, rest = index % gx, index // gx
        j, k = rest % gy, rest // gy
        return ((i + 0.5) / gx, (j + 0.5) / gy, (k + 0.5) / gz)


@dataclass(frozen=True)
class PersistencePair:
    birth: float
    death: float
    birth_vertex: int
    merge_vertex: int  # -1 for the essential pair
    birth_coords: tuple[float, float, float]
    merge_coords: tuple[float, float, float] | None

    @property
    def persistence(self) -> float:
        return self.death - self.birth


@nb.njit(cache=True)
def _find(parent, x):
    while parent[x] != x:
        parent[x] = parent[parent[x]]
        x = parent[x]
    return x


@nb.njit(cache=True)
def _pairs(flat, order, gx, gy, gz):
    n = flat.size
    rank = np.empty(n, np.int64)
    for pos in range(n):
        rank[order[pos]] = pos
    parent = np.full(n, -1, np.int64)
    # birth vertex of each root
    oldest = np.full(n, -1, np.int64)
    births = np.empty(n, np.int64)
    merges = np.empty(n, np.int64)
    npairs = 0
    nbr = np.empty(6, np.int64)
    roots = np.empty(6, np.int64)
    sxy = gx * gy
    for pos in range(n):
        v = order[pos]
        i = v % gx
        j = (v // gx) % gy
        k = v // sxy
        cnt = 0
        if i > 0:
            nbr[cnt] = v - 1
            cnt += 1
        if i < gx - 1:
            nbr[cnt] = v + 1
            cnt += 1
        if j > 0:
            nbr[cnt] = v - gx
            cnt += 1
        if j < gy - 1:
            nbr[cnt] = v + gx
            cnt += 1
        if k > 0:
            nbr[cnt] = v - sxy
            cnt += 1
        if k < gz - 1:
            nbr[cnt] = v + sxy
            cnt += 1
        nroots = 0
        for a in range(cnt):
            q = nbr[a]
            if parent[q] < 0:
                continue
            rq = _find(parent, q)
            dup = False
            for b in range(nroots):
                if roots[b] == rq:
                    dup = True
                    break
            if not dup:
                roots[nroots] = rq
                nroots += 1
        if nroots == 0:
            parent[v] = v
            oldest[v] = v
            continue
        # elder rule: the root whose birth vertex entered first survives
        keep = roots[0]
        for b in range(1, nroots):
            if rank[oldest[roots[b]]] < rank[oldest[keep]]:
                keep = roots[b]
        parent[v] = keep
        # kill younger roots in order of their birth
        for _ in range(nroots - 1):
            best = -1
            for b in range(nroots):
                r = roots[b]
                if r == keep or r < 0:
                    continue
                if best < 0 or rank[oldest[r]] < rank[oldest[roots[best]]]:
                    best = b
            r = roots[best]
            births[npairs] = oldest[r]
            merges[npairs] = v
            npairs += 1
            parent[r] = keep
            roots[best] = -1
    root = _find(parent, order[0])
    return births[:npairs], merges[:npairs], oldest[root]


def persistence_0d(f: SampledFiltration | np.ndarray) -> list[PersistencePair]:
    """All 0-dimensional pairs, sorted by death descending; pair 0 is essential."""
    if not isinstance(f, SampledFiltration):
        f = SampledFiltration(f)
    flat = np.ascontiguousarray(f.values.ravel(order="F"))
    order = np.argsort(flat, kind="stable")
    births, merges, root_birth = _pairs(flat, order, *f.dims)
    deaths = flat[merges]
    # death descending, then birth order ascending
    rank = np.empty(len(flat), np.int64)
    rank[order] = np.arange(len(flat))
    srt = np.lexsort((rank[births], -deaths))
    pairs = [
        PersistencePair(
            float(flat[root_birth]), math.inf, int(root_birth), -1, f.coords(int(root_birth)), None
        )
    ]
    for t in srt:
        b, m = int(births[t]), int(merges[t])
        pairs.append(PersistencePair(float(flat[b]), float(flat[m]), b, m, f.coords(b), f.coords(m)))
    return pairs


def component_counts(pairs: list[PersistencePair], thresholds) -> np.ndarray:
    """Number of sublevel components at each threshold: pairs with ``b <= t < d``."""
    b = np.array([p.birth for p in pairs])
    d = np.array([p.death for p in pairs])
    t = np.asarray(thresholds, dtype=float)[:, None]
    return ((b[None, :] <= t) & (t < d[None, :])).sum(axis=1)


# -- connectivity optimization ---------------------------------------------------------


@dataclass
class ConnectivityConfig:
    grid: int = 64
    step: float = 0.05
    max_iters: int = 500
    target: float = 0.0

    def __post_init__(self):
        if self.grid < 8:
            raise ValidationError("filtration grid must be at least 8 per axis")
        if not self.step > 0:
            raise ValidationError("step size must be positive")


def sample_filtration(s: PeriodicBSpline, grid: int) -> SampledFiltration:
    x = (np.arange(grid) + 0.5) / grid
    return SampledFiltration(s.eval_grid(x, x, x))


@dataclass
class LossResult:
    loss: float
    grad: np.ndarray
    pair: PersistencePair | None
    tie: bool = False
    density: float = 0.0
    n_pairs: int = 1


def loss_and_grad(s: PeriodicBSpline, cfg: ConnectivityConfig) -> LossResult:
    """``L = d_1`` and its gradient w.r.t. the reduced coefficients.

    ``L`` is ``-inf`` when the sampled field has a single component at every
    threshold.
    """
    filt = sample_filtration(s, cfg.grid)
    density = float(np.mean(filt.values <= cfg.target))
    pairs = persistence_0d(filt)
    if len(pairs) < 2:
        return LossResult(-math.inf, np.zeros(s.reduced_shape), None, density=density)
    d1 = pairs[1]
    tie = len(pairs) > 2 and abs(d1.death - pairs[2].death) < TIE_TOL
    if tie and d1.death >= cfg.target:
        log.warning("two largest finite deaths tie at %.6g; using the first merge vertex", d1.death)
    grad = s.alpha(*d1.merge_coords)
    return LossResult(d1.death, grad, d1, tie=tie, density=density, n_pairs=len(pairs))


@dataclass
class ConnectivityResult:
    spline: PeriodicBSpline
    trace: list[dict] = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return max(len(self.trace) - 1, 0)


def optimize_connectivity(s: PeriodicBSpline, cfg: ConnectivityConfig | None = None) -> ConnectivityResult:
    """Gradient descent on ``d_1`` over the reduced coefficients until ``d_1 < target``.

    The step size halves whenever the loss increases.
    """
    cfg = cfg or ConnectivityConfig()
    reduced = s.reduced()
    current = s
    step = cfg.step
    trace = []
    prev = math.inf
    for it in range(cfg.max_iters + 1):
        res = loss_and_grad(current, cfg)
        trace.append({"iter": it, "L": res.loss, "density": res.density})
        if res.loss < cfg.target:
            return ConnectivityResult(current, trace, True)
        if it == cfg.max_iters:
            break
        if res.loss > prev:
            step *= 0.5
        prev = res.loss
        reduced = reduced - step * res.grad
        current = s.with_reduced(reduced)
    log.warning("connectivity optimization stopped after %d iterations with L=%.6g", cfg.max_iters, trace[-1]["L"])
    return ConnectivityResult(current, trace, False)
