import re
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fbsurf.ballprod import (TraceGrid, _energy_change, _retraction_step, assemble_product_surface,
                             conformal_max_energy, curvature_escape, default_grid,
                             minimize_constrained,
                             newton_polish, normalized_sigma, random_samples,
                             random_symmetric_metric, riemannian_descent, seed_samples,
                             stability_check)
from fbsurf.errors import NotMaximal, RankCollapse, ValidationError
from fbsurf.moduli import ModuliPoint, build_planar_model
from fbsurf.prism import PrismConfig, odd_data
from fbsurf.steklov import dtn_matrix

P = ModuliPoint(0.39, 0.39, 0.39)


@pytest.fixture(scope="module")
def model():
    return build_planar_model(P)


@pytest.fixture(scope="module")
def cmap(model):
    return minimize_constrained(P, 1, starts=3, model=model)


def test_grid_needs_even_modes(model):
    with pytest.raises(ValidationError):
        TraceGrid(model, 1, 23)


def test_grid_reflections_are_involutions(model):
    g = TraceGrid(model, 2, 12)
    for axis in (1, 2, 3):
        assert np.array_equal(g.perms[axis][g.perms[axis]], np.arange(g.n))


def test_symmetrize_is_projection(model):
    g = TraceGrid(model, 1, 12)
    V = np.random.default_rng(0).normal(size=(g.n, 3))
    S = g.symmetrize(V)
    assert np.allclose(g.symmetrize(S), S, atol=1e-15)
    assert g.equivariance_defect(S) < 1e-14
    assert np.allclose(g.symmetrizer() @ V.ravel(), S.ravel(), atol=1e-14)


def test_seed_feasible_and_equivariant(model):
    g = TraceGrid(model, 1, 12)
    V = seed_samples(g)
    assert np.allclose(np.linalg.norm(V, axis=1), 1)
    assert g.equivariance_defect(V) < 1e-14


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-8, 10.0), st.integers(0, 1000))
def test_retraction_energy_change_exact(t, seed):
    rng = np.random.default_rng(seed)
    n = 8
    A = rng.normal(size=(n, n))
    Q = A @ A.T
    V = rng.normal(size=(n, 3))
    V /= np.linalg.norm(V, axis=1)[:, None]
    G = 2 * Q @ V
    c = np.sum(G * V, axis=1)
    g = G - c[:, None] * V
    D, a, b = _retraction_step(V, g, t)
    Vn = V + D
    assert np.allclose(np.linalg.norm(Vn, axis=1), 1, atol=1e-14)
    direct = np.sum(Vn * (Q @ Vn)) - np.sum(V * (Q @ V))
    dE = _energy_change(Q, D, a, b, c, np.sum(g * g, axis=1))
    assert abs(dE - direct) < 1e-9 * max(1.0, np.sum(np.abs(Q)))


def test_descent_decreases_energy(model):
    g = TraceGrid(model, 1, 24)
    D = dtn_matrix(model, 1, "full", 24)
    Q = g.W.T @ D.full_matrix @ g.W
    Q = (Q + Q.T) / 2
    V0 = random_samples(g, np.random.default_rng(2))
    res = riemannian_descent(Q, V0, g)
    assert res.grad_norm < 1e-8
    assert np.all(np.diff(res.history[:-1]) <= 1e-10 * abs(res.history[0]))
    assert newton_polish(Q, res.V, g) is not None


def test_descent_through_flat_valley():
    # group 3 minimizer here is rank 2 and reached along a nearly flat valley
    m = build_planar_model(ModuliPoint(0.2682149549104019, 0.28864612175904736, 0.6189108974222519))
    g = TraceGrid(m, 3, 24)
    D = dtn_matrix(m, 3, "full", 24)
    Q = g.W.T @ D.full_matrix @ g.W
    Q = (Q + Q.T) / 2
    rng = np.random.default_rng(0)
    runs = [riemannian_descent(Q, random_samples(g, rng), g) for _ in range(3)]
    assert all(r.grad_norm < 1e-8 for r in runs)
    assert np.ptp([r.energy for r in runs]) < 1e-10
    # the odd seed is a saddle: stationary, but an escape step lowers the energy
    V0 = seed_samples(g)
    assert riemannian_descent(Q, V0, g).energy > runs[0].energy + 1e-3
    V1 = curvature_escape(Q, V0, g)
    assert V1 is not None and np.sum(V1 * (Q @ V1)) < np.sum(V0 * (Q @ V0))
    assert g.equivariance_defect(V1) < 1e-12


def test_minimizer_constraints(cmap):
    assert cmap.constraint < 1e-8
    assert cmap.equivariance < 1e-8
    assert cmap.stationarity < 1e-6
    assert cmap.lam.min() > 0


def test_seed_energy_bounds_minimum(cmap):
    assert cmap.seed_energy >= cmap.energy - 1e-10


def test_seed_energy_is_odd_value(model, cmap):
    d = odd_data(P, PrismConfig(), model=model)
    assert cmap.seed_energy == pytest.approx(d.L[1], rel=1e-6)


def test_components_are_eigenfunctions(cmap):
    assert cmap.eigen_check["residual"] < 1e-5


def test_lambda_length_is_energy(cmap):
    assert cmap.lambda_length == pytest.approx(cmap.energy, rel=1e-8)


def test_stability(cmap):
    assert stability_check(cmap, n=5) > -1e-8


def test_certificate_and_equality_case(model, cmap):
    rng = np.random.default_rng(3)
    for _ in range(3):
        g = random_symmetric_metric(cmap.grid, rng)
        assert normalized_sigma(model, 1, g, cmap.dtn, 24) <= cmap.lambda_length + 1e-7
    lam = cmap.metric()
    assert normalized_sigma(model, 1, lam.scaled(3.0), cmap.dtn, 24) == pytest.approx(
        cmap.lambda_length, rel=1e-6)


def test_conformal_max_dominates_odd_value():
    cm = conformal_max_energy(P, PrismConfig(), n_metrics=2, starts=2)
    assert cm.min_slack >= -1e-7
    d = odd_data(P)
    # the odd map is a feasible candidate, so each term is at most a_i L_i
    for i in (1, 2, 3):
        assert cm.maps[i].energy <= d.L[i] + 1e-9
    assert set(cm.to_dict()["terms"]) == {1, 2, 3}


def test_rank_collapse_warning():
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        minimize_constrained(P, 2, starts=1)
    assert any(issubclass(w.category, RankCollapse) for w in rec)


def test_default_grid_inside_moduli():
    for r in default_grid():
        assert ModuliPoint(*r).boundary_margin() > 0.02


def test_product_surface_at_non_maximal_point():
    with pytest.raises(NotMaximal):
        assemble_product_surface(ModuliPoint(0.3, 0.4, 0.5), h=0.1)


def test_product_surface_residuals(tmp_path):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankCollapse)
        ps = assemble_product_surface(P, PrismConfig(1.0, 1.0, 1.0), h=0.1, gate=False)
    assert ps.sample.points.shape[1] == 9
    assert ps.residuals["sphere_constraint"] < 1e-6
    assert ps.residuals["genus"] == 0 and ps.residuals["boundary_loops"] == 6
    assert ps.residuals["g_symmetry"] < 1e-9
    ps.to_ply(tmp_path / "p.ply")
    head = (tmp_path / "p.ply").read_text().split("end_header")[0]
    assert len(re.findall(r"property double c\d\n", head)) == 9
    assert isinstance(ps.factors_through_r3, bool)
