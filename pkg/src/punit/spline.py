"""Trivariate tensor-product B-splines with per-axis mirror symmetry.

A spline has a *symmetric degree* ``r`` on an axis when its first ``r``
coefficients mirror its last ``r`` (``C[i] == C[n-1-i]`` for ``i < r``) and
the first ``r + p`` knot intervals mirror the last ones.  Such a spline
satisfies ``C(u) == C(1 - u)`` near the boundary, so it tiles seamlessly;
with ``r == n // 2`` it is mirror symmetric on the whole axis.

Symmetric coefficients are stored in two forms: the full ``(n_u, n_v, n_w)``
array and the reduced ``(n_u - r_u, n_v - r_v, n_w - r_w)`` array of free
values.  ``expand``/``reduce`` convert between them, and the merged bases
(``N_i + N_{n-1-i}`` for ``i < r``) act on the reduced form.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError, ShapeError, ValidationError

KNOT_TOL = 1e-12

__all__ = [
    "KnotVector",
    "PeriodicBSpline",
    "basis_eval",
    "basis_funs",
    "basis_matrix",
    "merged_basis_eval",
    "merged_basis_matrix",
    "make_symmetric_knots",
    "knot_symmetry_ok",
    "expand",
    "reduce",
    "is_symmetric",
    "check_symmetry",
    "symmetric_region",
    "serialize",
    "deserialize",
]


@dataclass(frozen=True, eq=False)
class KnotVector:
    degree: int
    knots: np.ndarray

    def __post_init__(self):
        p = int(self.degree)
        t = np.asarray(self.knots, dtype=float).copy()
        if p < 0:
            raise ValidationError(f"degree must be nonnegative, got {p}")
        if t.ndim != 1 or len(t) < 2 * (p + 1):
            raise ValidationError(f"knot vector too short for degree {p}")
        if not np.all(np.isfinite(t)) or np.any(np.diff(t) < 0):
            raise ValidationError("knots must be finite and nondecreasing")
        if np.any(t[: p + 1] != 0.0) or np.any(t[-(p + 1) :] != 1.0):
            raise ValidationError("knot vector must be clamped on [0, 1]")
        interior = t[p + 1 : len(t) - p - 1]
        if len(interior):
            _, counts = np.unique(interior, return_counts=True)
            if counts.max() > max(p, 1):
                raise ValidationError("interior knot multiplicity exceeds the degree")
            if interior.min() <= 0.0 or interior.max() >= 1.0:
                raise ValidationError("interior knots must lie strictly inside (0, 1)")
        t.setflags(write=False)
        object.__setattr__(self, "degree", p)
        object.__setattr__(self, "knots", t)

    @property
    def n(self) -> int:
        """Number of basis functions."""
        return len(self.knots) - self.degree - 1

    def __eq__(self, other):
        if not isinstance(other, KnotVector):
            return NotImplemented
        return self.degree == other.degree and np.array_equal(self.knots, other.knots)

    def basis_integrals(self) -> np.ndarray:
        """Exact integral of every basis function over [0, 1]."""
        p, t = self.degree, self.knots
        return (t[p + 1 :] - t[: self.n]) / (p + 1)


def make_symmetric_knots(n: int, p: int, r: int = 0) -> KnotVector:
    """Uniform clamped knots; symmetric for every admissible ``r``."""
    if n <= p:
        raise ValidationError(f"need more basis functions than the degree (n={n}, p={p})")
    if not 0 <= r <= n // 2:
        raise ValidationError(f"symmetric degree {r} outside [0, {n // 2}]")
    inner = np.arange(1, n - p) / (n - p)
    return KnotVector(p, np.concatenate([np.zeros(p + 1), inner, np.ones(p + 1)]))


def knot_symmetry_ok(kv: KnotVector, r: int, tol: float = KNOT_TOL) -> bool:
    t = kv.knots
    m = len(t)
    for i in range(min(r + kv.degree, m - 1)):
        if abs((t[i + 1] - t[i]) - (t[m - i - 1] - t[m - i - 2])) > tol:
            return False
    return True


# -- univariate bases ---------------------------------------------------------


def _check_param(u, name="u"):
    u = np.asarray(u, dtype=float)
    if np.any(~np.isfinite(u)) or np.any(u < 0.0) or np.any(u > 1.0):
        raise DomainError(f"{name} outside [0, 1]")
    return u


def basis_eval(kv: KnotVector, i: int, u: float) -> float:
    """Cox-de Boor recursion for a single basis function."""
    n, p, t = kv.n, kv.degree, kv.knots
    if not 0 <= i < n:
        raise IndexError(f"basis index {i} out of range [0, {n})")
    u = float(_check_param(u))
    last = n - 1

    def rec(i, p):
        if p == 0:
            if t[i] <= u < t[i + 1]:
                return 1.0
            # closed right end: the last nonempty span owns u == 1
            return 1.0 if (u == 1.0 and i == last) else 0.0
        val = 0.0
        d1 = t[i + p] - t[i]
        if d1 > 0:
            val += (u - t[i]) / d1 * rec(i, p - 1)
        d2 = t[i + p + 1] - t[i + 1]
        if d2 > 0:
            val += (t[i + p + 1] - u) / d2 * rec(i + 1, p - 1)
        return val

    return rec(i, p)


def find_span(kv: KnotVector, u: np.ndarray) -> np.ndarray:
    span = np.searchsorted(kv.knots, u, side="right") - 1
    return np.clip(span, kv.degree, kv.n - 1)


def basis_funs(kv: KnotVector, u) -> tuple[np.ndarray, np.ndarray]:
    """Nonzero bases at each parameter.

    Returns ``(span, vals)`` where ``vals[s, a]`` is ``N_{span[s]-p+a}(u[s])``.
    """
    u = np.atleast_1d(_check_param(u))
    p, t = kv.degree, kv.knots
    span = find_span(kv, u)
    vals = np.zeros((len(u), p + 1))
    vals[:, 0] = 1.0
    left = np.zeros((len(u), p + 1))
    right = np.zeros((len(u), p + 1))
    for j in range(1, p + 1):
        left[:, j] = u - t[span + 1 - j]
        right[:, j] = t[span + j] - u
        saved = np.zeros(len(u))
        for r in range(j):
            temp = vals[:, r] / (right[:, r + 1] + left[:, j - r])
            vals[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        vals[:, j] = saved
    return span, vals


def basis_matrix(kv: KnotVector, u) -> np.ndarray:
    """Dense ``(len(u), n)`` collocation matrix."""
    span, vals = basis_funs(kv, u)
    p = kv.degree
    out = np.zeros((len(span), kv.n))
    rows = np.arange(len(span))[:, None]
    cols = span[:, None] - p + np.arange(p + 1)[None, :]
    out[rows, cols] = vals
    return out


def merge_columns(full: np.ndarray, r: int) -> np.ndarray:
    """Fold columns ``n-1-i`` onto ``i`` for ``i < r``; keeps the first ``n - r`` columns."""
    n = full.shape[-1]
    out = full[..., : n - r].copy()
    for i in range(r):
        out[..., i] += full[..., n - 1 - i]
    return out


def merged_basis_matrix(kv: KnotVector, r: int, u) -> np.ndarray:
    return merge_columns(basis_matrix(kv, u), r)


def merged_basis_eval(kv: KnotVector, r: int, i: int, u: float) -> float:
    n = kv.n
    if not 0 <= i < n - r:
        raise IndexError(f"merged basis index {i} out of range [0, {n - r})")
    val = basis_eval(kv, i, u)
    if i < r:
        val += basis_eval(kv, n - 1 - i, u)
    return val


# -- coefficient symmetry -------------------------------------------------------


def _expand_axis(a: np.ndarray, n: int, r: int, axis: int) -> np.ndarray:
    l = n - r
    if a.shape[axis] != l:
        raise ShapeError(f"axis {axis}: reduced length {a.shape[axis]} != n - r = {l}")
    mirrored = np.flip(np.take(a, np.arange(r), axis=axis), axis=axis)
    return np.concatenate([a, mirrored], axis=axis)


def expand(reduced: np.ndarray, n: Sequence[int], r: Sequence[int]) -> np.ndarray:
    """Write mirrored copies at paired indices, axis by axis (u, then v, then w)."""
    out = np.asarray(reduced, dtype=float)
    if out.ndim != len(n) or len(n) != len(r):
        raise ShapeError("reduced array rank does not match n and r")
    for axis, (na, ra) in enumerate(zip(n, r)):
        out = _expand_axis(out, na, ra, axis)
    return out


def reduce(full: np.ndarray, r: Sequence[int]) -> np.ndarray:
    full = np.asarray(full, dtype=float)
    idx = tuple(slice(0, na - ra) for na, ra in zip(full.shape, r))
    return full[idx].copy()


def asymmetry_index(full: np.ndarray, r: Sequence[int]):
    """First ``(axis, index)`` violating mirror symmetry, or ``None``."""
    for axis, ra in enumerate(r):
        n = full.shape[axis]
        for i in range(ra):
            a = np.take(full, i, axis=axis)
            b = np.take(full, n - 1 - i, axis=axis)
            if not np.array_equal(a, b):
                return axis, i
    return None


def is_symmetric(full: np.ndarray, r: Sequence[int]) -> bool:
    return asymmetry_index(full, r) is None


# -- the spline -----------------------------------------------------------------


class PeriodicBSpline:
    """Scalar trivariate B-spline ``sum_ijk N_i(u) N_j(v) N_k(w) C_ijk``.

    Immutable after construction.  Construction validates the knot and
    coefficient symmetry implied by ``sym_degree``.
    """

    def __init__(self, knots: Sequence[KnotVector], coeffs, sym_degree=(0, 0, 0)):
        knots = tuple(knots)
        if len(knots) != 3:
            raise ValidationError("need one knot vector per axis")
        coeffs = np.array(coeffs, dtype=float)
        shape = tuple(kv.n for kv in knots)
        if coeffs.shape != shape:
            raise ShapeError(f"coefficient shape {coeffs.shape} != basis counts {shape}")
        if not np.all(np.isfinite(coeffs)):
            raise ValidationError("coefficients must be finite")
        r = tuple(int(x) for x in sym_degree)
        for axis, (kv, ra) in enumerate(zip(knots, r)):
            if not 0 <= ra <= kv.n // 2:
                raise ValidationError(f"axis {axis}: symmetric degree {ra} outside [0, {kv.n // 2}]")
            if not knot_symmetry_ok(kv, ra):
                raise ValidationError(f"axis {axis}: knot intervals are not mirror symmetric for r={ra}")
        bad = asymmetry_index(coeffs, r)
        if bad is not None:
            axis, i = bad
            raise ValidationError(
                f"axis {axis}: coefficient slice {i} differs from its mirror {shape[axis] - 1 - i}"
            )
        coeffs.setflags(write=False)
        self.knots = knots
        self.coeffs = coeffs
        self.sym_degree = r

    @classmethod
    def uniform(cls, n, p=(3, 3, 3), r=(0, 0, 0), coeffs=None, reduced=None):
        knots = [make_symmetric_knots(na, pa, ra) for na, pa, ra in zip(n, p, r)]
        if reduced is not None:
            coeffs = expand(reduced, n, r)
        elif coeffs is None:
            coeffs = np.zeros(tuple(n))
        return cls(knots, coeffs, r)

    @property
    def degrees(self) -> tuple[int, int, int]:
        return tuple(kv.degree for kv in self.knots)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.coeffs.shape

    @property
    def reduced_shape(self) -> tuple[int, int, int]:
        return tuple(n - r for n, r in zip(self.shape, self.sym_degree))

    def reduced(self) -> np.ndarray:
        return reduce(self.coeffs, self.sym_degree)

    def with_reduced(self, reduced) -> "PeriodicBSpline":
        return PeriodicBSpline(self.knots, expand(reduced, self.shape, self.sym_degree), self.sym_degree)

    def with_coeffs(self, coeffs) -> "PeriodicBSpline":
        return PeriodicBSpline(self.knots, coeffs, self.sym_degree)

    def __call__(self, u, v, w):
        return self.eval_points(np.stack(np.broadcast_arrays(u, v, w), axis=-1))

    def eval(self, u: float, v: float, w: float) -> float:
        return float(self.eval_points(np.array([[u, v, w]]))[0])

    def eval_points(self, pts) -> np.ndarray:
        """Evaluate at an ``(..., 3)`` array of points using local support."""
        pts = np.asarray(pts, dtype=float)
        lead = pts.shape[:-1]
        pts = pts.reshape(-1, 3)
        spans, vals = [], []
        for axis, kv in enumerate(self.knots):
            s, b = basis_funs(kv, pts[:, axis])
            spans.append(s - kv.degree)
            vals.append(b)
        pu, pv, pw = (kv.degree + 1 for kv in self.knots)
        iu = spans[0][:, None] + np.arange(pu)
        iv = spans[1][:, None] + np.arange(pv)
        iw = spans[2][:, None] + np.arange(pw)
        local = self.coeffs[iu[:, :, None, None], iv[:, None, :, None], iw[:, None, None, :]]
        out = np.einsum("sa,sb,sc,sabc->s", vals[0], vals[1], vals[2], local)
        return out.reshape(lead)

    def eval_grid(self, us, vs, ws) -> np.ndarray:
        """Tensor-grid evaluation, result shape ``(len(us), len(vs), len(ws))``."""
        bu, bv, bw = (basis_matrix(kv, x) for kv, x in zip(self.knots, (us, vs, ws)))
        return tensor_apply(self.coeffs, bu, bv, bw)

    def merged_matrices(self, us, vs, ws):
        return tuple(
            merged_basis_matrix(kv, r, x) for kv, r, x in zip(self.knots, self.sym_degree, (us, vs, ws))
        )

    def alpha(self, u: float, v: float, w: float) -> np.ndarray:
        """Merged tensor bases at one point, shaped like the reduced coefficients."""
        a, b, c = (m[0] for m in self.merged_matrices([u], [v], [w]))
        return np.einsum("i,j,k->ijk", a, b, c)

    def __repr__(self):
        return f"PeriodicBSpline(shape={self.shape}, degrees={self.degrees}, sym_degree={self.sym_degree})"


def tensor_apply(coeffs, bu, bv, bw) -> np.ndarray:
    """``sum_ijk bu[a,i] bv[b,j] bw[c,k] coeffs[i,j,k]`` contracted one axis at a time."""
    t = np.tensordot(bu, coeffs, axes=(1, 0))
    t = np.tensordot(bv, t, axes=(1, 1)).transpose(1, 0, 2)
    return np.tensordot(t, bw, axes=(2, 1))


def tensor_apply_t(values, bu, bv, bw) -> np.ndarray:
    """Adjoint of :func:`tensor_apply`."""
    return tensor_apply(values, bu.T, bv.T, bw.T)


# -- symmetry verification --------------------------------------------------------


def symmetric_region(kv: KnotVector, r: int) -> float:
    """Upper end of the interval ``[0, t_r)`` on which ``C(u) == C(1-u)`` holds.

    Returns 1.0 when ``r == n // 2`` (whole axis); ``t_r`` may be 0 for small
    ``r``, in which case only ``u == 0`` is covered.
    """
    if r == 0:
        return -1.0
    if r == kv.n // 2:
        return 1.0
    return float(kv.knots[r])


def check_symmetry(s: PeriodicBSpline, samples: int = 1000, seed: int = 0) -> np.ndarray:
    """Max ``|s(x) - s(mirror_a(x))|`` per axis over the axis' symmetric region.

    Along the mirrored axis ``samples`` parameters are spread over
    ``[0, t_r)`` (always including ``u = 0``); the other two coordinates are
    drawn uniformly from [0, 1] with a fixed seed.  Axes with ``r == 0``
    report 0.
    """
    if samples < 1:
        raise ValidationError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    out = np.zeros(3)
    for axis, (kv, r) in enumerate(zip(s.knots, s.sym_degree)):
        hi = symmetric_region(kv, r)
        if hi < 0:
            continue
        if hi == 1.0:
            along = np.linspace(0.0, 1.0, samples)
        elif hi > 0:
            along = np.linspace(0.0, hi, samples, endpoint=False)
        else:
            along = np.zeros(1)
        pts = rng.random((len(along), 3))
        pts[:, axis] = along
        mirror = pts.copy()
        mirror[:, axis] = 1.0 - along
        out[axis] = np.max(np.abs(s.eval_points(pts) - s.eval_points(mirror)))
    return out


# -- serialization ---------------------------------------------------------------------


def to_dict(s: PeriodicBSpline) -> dict:
    return {
        "degrees": list(s.degrees),
        "knots_u": s.knots[0].knots.tolist(),
        "knots_v": s.knots[1].knots.tolist(),
        "knots_w": s.knots[2].knots.tolist(),
        "sym_degree": list(s.sym_degree),
        "shape": list(s.shape),
        "coeffs": s.coeffs.ravel(order="F").tolist(),
    }


def from_dict(doc: dict) -> PeriodicBSpline:
    try:
        degrees = [int(d) for d in doc["degrees"]]
        knots = [KnotVector(p, doc[f"knots_{a}"]) for p, a in zip(degrees, "uvw")]
        shape = tuple(kv.n for kv in knots)
        flat = np.asarray(doc["coeffs"], dtype=float)
        r = doc.get("sym_degree", [0, 0, 0])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed spline document: {exc}") from None
    if len(degrees) != 3:
        raise ValidationError("malformed spline document: need three degrees")
    if flat.size != np.prod(shape):
        raise ValidationError(f"{flat.size} coefficients do not match basis counts {shape}")
    return PeriodicBSpline(knots, flat.reshape(shape, order="F"), r)


def serialize(s: PeriodicBSpline) -> str:
    return json.dumps(to_dict(s))


def deserialize(text: str) -> PeriodicBSpline:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed spline document: {exc}") from None
    if not isinstance(doc, dict):
        raise ValidationError("malformed spline document: expected an object")
    return from_dict(doc)


def load(path) -> PeriodicBSpline:
    with open(path) as fh:
        return deserialize(fh.read())
