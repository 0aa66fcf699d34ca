import math

import numpy as np
import pytest

from oracles import count_components
from punit.errors import ValidationError
from punit.persist import (
    ConnectivityConfig,
    SampledFiltration,
    component_counts,
    loss_and_grad,
    optimize_connectivity,
    persistence_0d,
    sample_filtration,
)
from punit.spline import PeriodicBSpline


def two_blob(n=8, p=3, r=(4, 4, 4), at=(1, 3, 3), depth=-1.0):
    red = np.ones(tuple(a - b for a, b in zip((n,) * 3, r)))
    red[at] = depth
    return PeriodicBSpline.uniform((n,) * 3, (p,) * 3, r, reduced=red)


def random_two_blob(rng, n=7):
    c = 1.0 + 0.2 * rng.random((n, n, n))
    c[1, int(rng.integers(1, n - 1)), int(rng.integers(1, n - 1))] = -1.0 - rng.random()
    c[n - 2, int(rng.integers(1, n - 1)), int(rng.integers(1, n - 1))] = -1.0 - rng.random()
    return PeriodicBSpline.uniform((n,) * 3, coeffs=c)


def test_constant_field():
    pairs = persistence_0d(np.full((4, 3, 2), 2.5))
    assert len(pairs) == 1
    assert pairs[0].birth == 2.5 and pairs[0].death == math.inf and pairs[0].merge_vertex == -1


def test_hand_example():
    pairs = persistence_0d(np.array([3.0, 1.0, 2.0, 0.0, 4.0]).reshape(5, 1, 1))
    assert {(p.birth, p.death) for p in pairs} == {(0.0, math.inf), (1.0, 2.0)}
    assert pairs[1].birth_vertex == 1 and pairs[1].merge_vertex == 2
    assert pairs[1].merge_coords == pytest.approx((0.5, 0.5, 0.5))


def test_sorted_and_ordered():
    pairs = persistence_0d(np.random.default_rng(0).random((6, 6, 6)))
    deaths = [p.death for p in pairs]
    assert deaths == sorted(deaths, reverse=True)
    assert all(p.birth <= p.death for p in pairs)
    assert sum(math.isinf(d) for d in deaths) == 1


def test_tie_break_by_index():
    pairs = persistence_0d(np.array([0.0, 1.0, 0.0]).reshape(3, 1, 1))
    # equal minima: the lower linear index is older
    assert pairs[0].birth_vertex == 0 and pairs[1].birth_vertex == 2


def test_flood_fill_oracle():
    rng = np.random.default_rng(1)
    for _ in range(25):
        f = rng.random((8, 8, 8))
        if rng.random() < 0.5:
            f = np.round(f * 6) / 6  # plenty of ties
        pairs = persistence_0d(f)
        levels = np.unique(f)
        counts = component_counts(pairs, levels)
        for t, c in zip(levels, counts):
            assert c == count_components(f <= t)


def test_stability():
    rng = np.random.default_rng(2)
    eps = 1e-3
    for _ in range(10):
        f = rng.random((6, 6, 6))
        g = f + rng.uniform(-eps, eps, f.shape)
        a = sorted((p.birth, p.death) for p in persistence_0d(f)[1:])
        b = sorted((p.birth, p.death) for p in persistence_0d(g)[1:])
        # births and deaths of the whole diagram move by at most eps
        assert abs(persistence_0d(f)[0].birth - persistence_0d(g)[0].birth) <= eps
        fb = np.sort([x for p in a for x in p])
        gb = np.sort([x for p in b for x in p])
        if len(fb) == len(gb):
            assert np.max(np.abs(fb - gb)) <= 2 * eps + 1e-12


def test_filtration_validation():
    with pytest.raises(ValidationError):
        SampledFiltration(np.zeros((3, 3)))
    with pytest.raises(ValidationError):
        SampledFiltration(np.array([[[np.inf]]]))
    with pytest.raises(ValidationError):
        ConnectivityConfig(grid=4)
    with pytest.raises(ValidationError):
        ConnectivityConfig(step=0)


def test_single_blob_sentinel():
    s = PeriodicBSpline.uniform((4, 4, 4), coeffs=np.full((4, 4, 4), -1.0))
    res = loss_and_grad(s, ConnectivityConfig(grid=16))
    assert res.loss == -math.inf and not res.grad.any()


def test_gradient_is_alpha_and_local():
    s = two_blob()
    res = loss_and_grad(s, ConnectivityConfig(grid=32))
    assert res.grad.shape == s.reduced_shape
    assert res.grad.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.count_nonzero(res.grad) <= 4**3
    assert np.allclose(res.grad, s.alpha(*res.pair.merge_coords))


def test_gradient_finite_difference():
    rng = np.random.default_rng(3)
    cfg = ConnectivityConfig(grid=24)
    checked = 0
    while checked < 3:
        s = random_two_blob(rng)
        base = loss_and_grad(s, cfg)
        if base.n_pairs < 2 or base.tie:
            continue
        red = s.reduced()
        h = 1e-5
        fd = np.zeros_like(red)
        for idx in zip(*np.nonzero(base.grad)):
            up, dn = red.copy(), red.copy()
            up[idx] += h
            dn[idx] -= h
            fd[idx] = (loss_and_grad(s.with_reduced(up), cfg).loss - loss_and_grad(s.with_reduced(dn), cfg).loss) / (2 * h)
        assert np.max(np.abs(fd - base.grad)) <= 1e-4 * np.max(np.abs(base.grad))
        checked += 1


def test_connected_returns_unchanged():
    s = PeriodicBSpline.uniform((4, 4, 4), coeffs=np.full((4, 4, 4), -1.0))
    res = optimize_connectivity(s, ConnectivityConfig(grid=16))
    assert res.iterations == 0 and res.converged and res.spline is s


def test_two_blobs_get_connected():
    s = two_blob()
    assert count_components(sample_filtration(s, 32).values <= 0) == 2
    res = optimize_connectivity(s, ConnectivityConfig(grid=32))
    assert res.converged and res.trace[-1]["L"] < 0
    assert count_components(sample_filtration(res.spline, 32).values <= 0) == 1
    out = res.spline
    assert out.sym_degree == s.sym_degree
    assert all(a == b for a, b in zip(out.knots, s.knots))
    assert np.array_equal(out.coeffs, np.flip(out.coeffs, axis=0))
    assert list(res.trace[0]) == ["iter", "L", "density"]


def test_nonconverged_flagged():
    res = optimize_connectivity(two_blob(), ConnectivityConfig(grid=16, step=1e-6, max_iters=3))
    assert not res.converged and res.iterations == 3
