"""Exponential Gibson-Ashby law ``c_ij(rho) / c*_ij = a1 * exp(a2 * rho) - a1``."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError

log = logging.getLogger(__name__)

A2_RANGE = (0.1, 20.0)
GOLDEN = (math.sqrt(5) - 1) / 2

# entries of an orthotropic tensor that are nonzero for an isotropic base material
ORTHO_ENTRIES = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2), (3, 3), (4, 4), (5, 5))


@dataclass
class EntryFit:
    a1: float
    a2: float
    sign: float = 1.0
    residual: float = 0.0
    degenerate: bool = False
    sign_changes: bool = False

    def __call__(self, rho):
        rho = np.asarray(rho, dtype=float)
        return self.sign * self.a1 * np.expm1(self.a2 * rho)

    def derivative(self, rho):
        rho = np.asarray(rho, dtype=float)
        return self.sign * self.a1 * self.a2 * np.exp(self.a2 * rho)


def _a1_for(a2, rho, y):
    g = np.expm1(a2 * rho)
    gg = float(g @ g)
    return float(g @ y) / gg if gg > 0 else 0.0


def _sse(a2, rho, y):
    a1 = _a1_for(a2, rho, y)
    r = a1 * np.expm1(a2 * rho) - y
    return float(r @ r)


def gibson_ashby_fit(rho, y, a2_range=A2_RANGE, tol=1e-12) -> EntryFit:
    """Least-squares fit of one normalized entry.

    ``a1`` is solved in closed form for each ``a2``; ``a2`` is located by a
    coarse scan followed by golden-section search on the bracketing interval.
    """
    rho = np.asarray(rho, dtype=float)
    y = np.asarray(y, dtype=float)
    if rho.shape != y.shape or rho.ndim != 1:
        raise ValidationError("densities and responses must be 1D arrays of equal length")
    if len(np.unique(rho)) < 3:
        raise ValidationError("need at least three distinct densities")
    if np.any(rho <= 0) or np.any(rho > 1):
        raise ValidationError("densities must lie in (0, 1]")
    if not np.all(np.isfinite(y)):
        raise ValidationError("responses must be finite")
    if not np.any(y):
        log.warning("all responses are zero; degenerate fit")
        return EntryFit(0.0, a2_range[0], degenerate=True)

    total = float(y.sum())
    sign = 1.0 if total >= 0 else -1.0
    changes = bool(np.any(y > 0) and np.any(y < 0))
    if changes:
        log.warning("responses change sign; fitting magnitudes with the dominant sign")
    target = np.abs(y) if changes else sign * y

    lo, hi = a2_range
    scan = np.linspace(lo, hi, 400)
    costs = np.array([_sse(a, rho, target) for a in scan])
    m = int(np.argmin(costs))
    a, b = scan[max(m - 1, 0)], scan[min(m + 1, len(scan) - 1)]
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = _sse(c, rho, target), _sse(d, rho, target)
    while b - a > tol * max(1.0, abs(b)):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = _sse(c, rho, target)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = _sse(d, rho, target)
    a2 = 0.5 * (a + b)
    a1 = _a1_for(a2, rho, target)
    resid = math.sqrt(_sse(a2, rho, target) / len(rho))
    return EntryFit(a1, a2, sign, resid, False, changes)


@dataclass
class GibsonAshbyCurve:
    """Per-entry exponential density laws for a normalized homogenized tensor."""

    entries: dict[tuple[int, int], EntryFit]
    ladder: list[dict] = field(default_factory=list)

    def normalized(self, rho) -> np.ndarray:
        """``C^H(rho) / C*`` entrywise, shape ``rho.shape + (6, 6)``."""
        rho = np.asarray(rho, dtype=float)
        out = np.zeros(rho.shape + (6, 6))
        for (i, j), fit in self.entries.items():
            out[..., i, j] = out[..., j, i] = fit(rho)
        return out

    def tensor(self, rho, C_star: np.ndarray) -> np.ndarray:
        return self.normalized(rho) * C_star

    def factors(self, rho):
        """Values and derivatives of every entry law, each shaped ``rho.shape + (n_entries,)``."""
        rho = np.asarray(rho, dtype=float)
        vals = np.stack([f(rho) for f in self.entries.values()], axis=-1)
        ders = np.stack([f.derivative(rho) for f in self.entries.values()], axis=-1)
        return vals, ders

    def to_dict(self) -> dict:
        return {
            "model": "c_ij(rho)/c*_ij = a1*exp(a2*rho) - a1",
            "entries": [
                {
                    "i": i,
                    "j": j,
                    "a1": f.a1,
                    "a2": f.a2,
                    "sign": f.sign,
                    "residual": f.residual,
                    "degenerate": f.degenerate,
                    "sign_changes": f.sign_changes,
                }
                for (i, j), f in self.entries.items()
            ],
            "ladder": self.ladder,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GibsonAshbyCurve":
        try:
            entries = {
                (int(e["i"]), int(e["j"])): EntryFit(
                    float(e["a1"]),
                    float(e["a2"]),
                    float(e.get("sign", 1.0)),
                    float(e.get("residual", 0.0)),
                    bool(e.get("degenerate", False)),
                    bool(e.get("sign_changes", False)),
                )
                for e in doc["entries"]
            }
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed curves document: {exc}") from None
        return cls(entries, doc.get("ladder", []))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def fit_curves(rhos, tensors, C_star, entries=ORTHO_ENTRIES) -> GibsonAshbyCurve:
    """Fit every entry of a ladder of homogenized tensors normalized by ``C_star``."""
    rhos = np.asarray(rhos, dtype=float)
    T = np.asarray(tensors, dtype=float)
    fits = {}
    for i, j in entries:
        if C_star[i, j] == 0:
            continue
        fits[(i, j)] = gibson_ashby_fit(rhos, T[:, i, j] / C_star[i, j])
    return GibsonAshbyCurve(fits)


def load(path) -> GibsonAshbyCurve:
    with open(path) as fh:
        return GibsonAshbyCurve.from_dict(json.load(fh))
