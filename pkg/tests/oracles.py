"""Independent reference implementations used by the test suite."""

import math

import numpy as np
from scipy import ndimage
from scipy.interpolate import BSpline


def brute_dtm(bits: np.ndarray, m: float) -> np.ndarray:
    """Sort every solid-voxel distance per query and apply the mass weighting."""
    solid = np.argwhere(bits).astype(float) + 0.5
    out = np.empty(bits.shape)
    k = math.ceil(m)
    for idx in np.ndindex(bits.shape):
        x = np.array(idx, dtype=float) + 0.5
        d2 = np.sort(((solid - x) ** 2).sum(axis=1))
        acc = 0.0
        for i in range(k - 1):
            acc += d2[i]
        out[idx] = math.sqrt((acc + (m - (k - 1)) * d2[k - 1]) / m)
    return out


def brute_manhattan(bits: np.ndarray) -> np.ndarray:
    solid = np.argwhere(bits)
    out = np.empty(bits.shape)
    for idx in np.ndindex(bits.shape):
        out[idx] = np.abs(solid - np.array(idx)).sum(axis=1).min()
    return out


def exact_edt(bits: np.ndarray) -> np.ndarray:
    return ndimage.distance_transform_edt(~bits)


def count_components(mask: np.ndarray) -> int:
    """6-connected components by scipy's labelling."""
    _, n = ndimage.label(mask)
    return n


def design_matrix(knots, p, u) -> np.ndarray:
    """Dense basis matrix from scipy, right end closed."""
    knots = np.asarray(knots, float)
    n = len(knots) - p - 1
    u = np.asarray(u, float)
    out = np.zeros((len(u), n))
    for i in range(n):
        b = BSpline.basis_element(knots[i : i + p + 2], extrapolate=False)
        vals = np.nan_to_num(b(u))
        out[:, i] = vals
    # basis_element is right-open; close the last basis at u = 1
    out[u == knots[-1], :] = 0.0
    out[u == knots[-1], n - 1] = 1.0
    return out


def merged_dense(knots, p, r, u) -> np.ndarray:
    A = design_matrix(knots, p, u)
    n = A.shape[1]
    M = A[:, : n - r].copy()
    for i in range(r):
        M[:, i] += A[:, n - 1 - i]
    return M


def kron3(Au, Av, Aw) -> np.ndarray:
    """Rows and columns in x-fastest order."""
    return np.kron(np.kron(Aw, Av), Au)


def brute_dtm_sorted(bits: np.ndarray, ms) -> dict:
    """Full sort of all squared query-to-solid distances, one pass for several masses."""
    solid = np.argwhere(bits).astype(float) + 0.5
    queries = np.indices(bits.shape).reshape(3, -1, order="F").T.astype(float) + 0.5
    kmax = math.ceil(max(ms))
    d2 = np.sort(((queries[:, None, :] - solid[None, :, :]) ** 2).sum(axis=-1), axis=1)[:, :kmax]
    out = {}
    for m in ms:
        k = math.ceil(m)
        acc = np.zeros(len(queries))
        for i in range(k - 1):
            acc = acc + d2[:, i]
        out[m] = np.sqrt((acc + (m - (k - 1)) * d2[:, k - 1]) / m).reshape(bits.shape, order="F")
    return out
