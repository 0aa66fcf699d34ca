import json

import numpy as np
import pytest

from punit.errors import ConfigError, InfeasibleError, SolverError, ValidationError
from punit.mech import (
    BaseMaterial,
    GibsonAshbyCurve,
    HomogenizedTensor,
    StructuredHexMesh,
    TopOptConfig,
    build_density_curves,
    element_stiffness,
    fe_solve,
    fit_curves,
    gibson_ashby_fit,
    homogenize,
    isotropic_stiffness,
    standard_cases,
    topopt,
)
from punit.mech.gibson import ORTHO_ENTRIES, EntryFit
from punit.mech.topopt import ComplianceProblem, _oc_update
from punit.spline import PeriodicBSpline
from punit.voxelgrid import VoxelGrid, create

MAT = BaseMaterial()


def synthetic_curves(a1=0.2, a2=2.5):
    return GibsonAshbyCurve({e: EntryFit(a1, a2) for e in ORTHO_ENTRIES})


def test_material_validation():
    with pytest.raises(ValidationError):
        BaseMaterial(E=-1)
    with pytest.raises(ValidationError):
        BaseMaterial(nu=0.5)
    C = isotropic_stiffness(1.0, 0.25)
    assert C[0, 0] == pytest.approx(1.2) and C[3, 3] == pytest.approx(0.4)


def test_element_stiffness_properties():
    Ke = element_stiffness(MAT.C, (0.5, 0.25, 1.0))
    assert np.allclose(Ke, Ke.T, atol=1e-6 * np.abs(Ke).max())
    w = np.linalg.eigvalsh(Ke)
    # six rigid-body modes, everything else positive
    assert np.sum(np.abs(w) < 1e-9 * w.max()) == 6 and w.min() > -1e-9 * w.max()
    translation = np.tile([1.0, 0.0, 0.0], 8)
    assert np.allclose(Ke @ translation, 0, atol=1e-9 * np.abs(Ke).max())


def roller_bar(E=1.0, nu=0.3, shape=(8, 2, 2), size=(4.0, 1.0, 1.0), load=1.0):
    mesh = StructuredHexMesh(*shape, size=size)
    i, j, k = (a.ravel(order="F") for a in np.indices(mesh.node_shape))
    fixed = np.zeros((mesh.n_nodes, 3), bool)
    fixed[:, 0] = i == 0
    fixed[:, 1] = j == 0
    fixed[:, 2] = k == 0
    # consistent nodal loads for a uniform traction on the end face
    wy = np.where((j == 0) | (j == shape[1]), 0.5, 1.0) / shape[1]
    wz = np.where((k == 0) | (k == shape[2]), 0.5, 1.0) / shape[2]
    F = np.zeros((mesh.n_nodes, 3))
    F[:, 0] = np.where(i == shape[0], load * wy * wz, 0.0)
    Ke = element_stiffness(isotropic_stiffness(E, nu), mesh.h)
    return mesh, Ke, fixed.ravel(), F.ravel(), (i, j, k)


def test_patch_test_tip_displacement():
    mesh, Ke, fixed, F, (i, j, k) = roller_bar()
    U = fe_solve(mesh, Ke, fixed, F).reshape(-1, 3)
    tip = U[i == 8, 0]
    exact = 1.0 * 4.0 / (1.0 * 1.0)  # F L / (E A)
    assert np.allclose(tip, exact, rtol=1e-2)


def test_zero_load_and_linearity():
    mesh, Ke, fixed, F, _ = roller_bar()
    assert not fe_solve(mesh, Ke, fixed, np.zeros_like(F)).any()
    U1 = fe_solve(mesh, Ke, fixed, F, rtol=1e-12)
    U2 = fe_solve(mesh, 2 * Ke, fixed, F, rtol=1e-12)
    assert np.allclose(U2, U1 / 2, rtol=1e-9, atol=1e-14)


def test_rigid_body_modes_fail():
    mesh, Ke, _, F, _ = roller_bar()
    with pytest.raises(SolverError):
        fe_solve(mesh, Ke, np.zeros(mesh.n_dofs, bool), F)
    one = np.zeros(mesh.n_dofs, bool)
    one[0] = True
    load = np.zeros(mesh.n_dofs)
    load[-1] = 1.0
    with pytest.raises(SolverError):
        fe_solve(mesh, Ke, one, load, maxiter=500)


@pytest.mark.parametrize("case", ["three-point-bending", "compression"])
def test_standard_cases_solvable(case):
    mesh = StructuredHexMesh(12, 4, 4)
    fixed, F = standard_cases(case, mesh)
    assert F.sum() == pytest.approx(-1.0) and np.all(F[fixed] == 0)
    U = fe_solve(mesh, element_stiffness(MAT.C, mesh.h), fixed, F)
    assert np.all(np.isfinite(U)) and F @ U > 0


def test_three_point_bending_layout():
    mesh = StructuredHexMesh(24, 8, 8)
    fixed, F = standard_cases("three-point-bending", mesh)
    i, j, k = (a.ravel(order="F") for a in np.indices(mesh.node_shape))
    nodes = fixed.reshape(-1, 3).all(axis=1)
    assert np.array_equal(nodes, (k == 0) & ((i == 0) | (i == 24)))
    loaded = F.reshape(-1, 3)[:, 2] < 0
    assert np.array_equal(loaded, (k == 8) & (i == 12))
    with pytest.raises(ConfigError):
        standard_cases("torsion", mesh)


def test_homogenize_all_solid():
    H = homogenize(create((6, 6, 6), 1), MAT)
    assert np.allclose(H.C, MAT.C, rtol=1e-2, atol=1e-2 * MAT.C.max())
    assert H.symmetry_class() == "isotropic"


def test_homogenize_uniform_void():
    H = homogenize(np.full((6, 6, 6), 1e-3), MAT)
    assert np.allclose(H.C, 1e-3 * MAT.C, rtol=1e-2, atol=1e-5 * MAT.C.max())
    with pytest.raises(InfeasibleError):
        homogenize(create((6, 6, 6), 0), MAT)


def test_homogenize_laminate():
    E, nu = 1.0, 0.3
    mat = BaseMaterial(E, nu)
    bits = np.zeros((16, 16, 16), bool)
    bits[:, :, :8] = True
    H = homogenize(VoxelGrid(bits), mat).C
    C = mat.C
    soft = 1e-3
    arith = 0.5 * (1 + soft)
    harm = 2 / (1 + 1 / soft)
    # in-plane shear: arithmetic; out-of-plane normal and shears: harmonic
    assert H[5, 5] == pytest.approx(arith * C[5, 5], rel=0.1)
    assert H[2, 2] == pytest.approx(harm * C[2, 2], rel=0.1)
    assert H[3, 3] == pytest.approx(harm * C[3, 3], rel=0.1)
    assert H[4, 4] == pytest.approx(harm * C[4, 4], rel=0.1)
    assert np.array_equal(H, H.T)
    assert HomogenizedTensor(H).min_eigenvalue() >= -1e-8 * np.abs(H).max()


def test_homogenize_symmetric_and_psd():
    rng = np.random.default_rng(0)
    H = homogenize(VoxelGrid(rng.random((8, 8, 8)) < 0.6), MAT)
    assert np.array_equal(H.C, H.C.T)
    assert H.min_eigenvalue() >= -1e-8 * np.abs(H.C).max()
    with pytest.raises(ValidationError):
        HomogenizedTensor(np.zeros((5, 5)))


def test_gibson_recovery():
    rho = np.linspace(0.1, 0.9, 9)
    fit = gibson_ashby_fit(rho, 0.2 * np.expm1(2.5 * rho))
    assert fit.a1 == pytest.approx(0.2, abs=1e-6)
    assert fit.a2 == pytest.approx(2.5, abs=1e-6)
    assert fit.residual < 1e-10
    assert fit(0.0) == 0.0


def test_gibson_degenerate_and_errors():
    fit = gibson_ashby_fit([0.2, 0.5, 0.8], [0.0, 0.0, 0.0])
    assert fit.degenerate and fit.a1 == 0.0
    with pytest.raises(ValidationError):
        gibson_ashby_fit([0.2, 0.2, 0.5], [1, 2, 3])
    with pytest.raises(ValidationError):
        gibson_ashby_fit([0.0, 0.2, 0.5], [1, 2, 3])


def test_gibson_sign_change():
    rho = np.linspace(0.1, 0.9, 9)
    y = -0.05 * np.expm1(3.0 * rho)
    y[0] = 1e-4
    fit = gibson_ashby_fit(rho, y)
    assert fit.sign_changes and fit.sign == -1.0
    assert fit(0.9) < 0


def test_curves_roundtrip():
    rho = np.linspace(0.2, 0.8, 5)
    T = np.array([MAT.C * 0.3 * np.expm1(2 * r) for r in rho])
    curves = fit_curves(rho, T, MAT.C)
    assert len(curves.entries) == 9
    back = GibsonAshbyCurve.from_dict(json.loads(curves.dumps()))
    assert np.allclose(back.tensor(0.5, MAT.C), curves.tensor(0.5, MAT.C))
    assert np.all(curves.normalized(0.0) == 0.0)
    with pytest.raises(ValidationError):
        GibsonAshbyCurve.from_dict({"entries": [{"i": 0}]})


def bar_unit():
    """A cubic-bar unit, distance-like and mirror symmetric."""
    d = np.abs(np.arange(3) - 2.5)
    X, Y, Z = np.meshgrid(d, d, d, indexing="ij")
    c = np.minimum(np.minimum(np.maximum(Y, Z), np.maximum(X, Z)), np.maximum(X, Y))
    return PeriodicBSpline.uniform((6, 6, 6), (3, 3, 3), (3, 3, 3), reduced=c)


def test_density_curves_monotone():
    curves = build_density_curves(bar_unit(), MAT, [0.2, 0.35, 0.5, 0.65, 0.8], res=12)
    diag = np.array([[entry["C"][q][q] for q in range(6)] for entry in curves.ladder])
    assert np.all(np.diff(diag, axis=0) > 0)
    assert all(abs(e["rho"] - e["target"]) < 2 / 12 for e in curves.ladder)
    assert curves.normalized(0.0).max() == 0.0
    for q in range(3):
        assert curves.entries[(q, q)](1.0) == pytest.approx(1.0, abs=0.3)


def test_density_curves_solid_limit():
    top = build_density_curves(bar_unit(), MAT, [0.3, 0.6, 0.99], res=12).ladder[-1]
    diag = np.diag(np.array(top["C"]))[:3] / np.diag(MAT.C)[:3]
    assert np.all(np.abs(diag - 1) <= 0.05)


def test_topopt_config_validation():
    with pytest.raises(ConfigError):
        TopOptConfig(volfrac=0.99)
    with pytest.raises(ConfigError):
        TopOptConfig(rho_min=0.0)
    with pytest.raises(ConfigError):
        TopOptConfig(case="shear")
    with pytest.raises(ConfigError):
        TopOptConfig(spline_shape=(2, 4, 4))


def small_problem(**kw):
    cfg = TopOptConfig(elements=(12, 4, 4), spline_shape=(6, 3, 3), **kw)
    return cfg, ComplianceProblem(cfg, synthetic_curves(), MAT)


def test_sensitivities_finite_difference():
    cfg, prob = small_problem()
    rng = np.random.default_rng(1)
    x = rng.uniform(0.3, 0.6, prob.P.shape[1])
    _, dc, _ = prob.evaluate(x, rtol=1e-12)
    h = 1e-4
    for idx in rng.choice(len(x), 5, replace=False):
        up, dn = x.copy(), x.copy()
        up[idx] += h
        dn[idx] -= h
        fd = (prob.evaluate(up, rtol=1e-12)[0] - prob.evaluate(dn, rtol=1e-12)[0]) / (2 * h)
        assert fd == pytest.approx(dc[idx], rel=1e-3)


def test_oc_volume_and_bracketing():
    cfg, prob = small_problem()
    x = np.full(prob.P.shape[1], 0.4)
    _, dc, _ = prob.evaluate(x)
    target = 0.4 * prob.vol_weights.sum()
    new = _oc_update(x, dc, prob.vol_weights, target, cfg)
    assert abs(prob.volume(new) - target) <= 1e-3 * prob.vol_weights.sum()
    assert new.min() >= cfg.rho_min and new.max() <= cfg.rho_max
    assert np.max(np.abs(new - x)) <= cfg.move + 1e-12
    with pytest.raises(ConfigError):
        _oc_update(np.full_like(x, 0.9), dc, prob.vol_weights, target, cfg)


def test_topopt_small_case():
    cfg = TopOptConfig(elements=(12, 4, 4), spline_shape=(6, 3, 3), max_iters=20)
    res = topopt(cfg, synthetic_curves(), MAT)
    c = res.compliance
    assert c[-1] < c[0]
    vol = [t["volume"] for t in res.trace]
    assert np.max(np.abs(np.array(vol[1:]) - 0.4)) <= 1e-3
    assert res.density.shape == (6, 3, 3)


def test_topopt_scale_invariance():
    cfg = TopOptConfig(elements=(8, 4, 4), spline_shape=(4, 3, 3), max_iters=8)
    a = topopt(cfg, synthetic_curves(), BaseMaterial(E=2e9))
    b = topopt(cfg, synthetic_curves(), BaseMaterial(E=4e9))
    assert np.max(np.abs(a.density.coeffs - b.density.coeffs)) <= 1e-10
    assert np.allclose(np.array(b.compliance) * 2, a.compliance, rtol=1e-10)
