import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fbsurf.harmonic import (BasisSpec, BoundaryCondition, Dirichlet, Neumann, area_energy,
                             boundary_values, dirichlet_energy, evaluate, evaluate_gradient,
                             normal_derivative, solve_mixed, tangential_derivative)
from fbsurf.moduli import (ModuliPoint, ReflectionAction, annulus_domain, build_planar_model,
                           disk_domain, sphere_weight)


def annulus_cos(eps, basis=BasisSpec(24)):
    dom = annulus_domain(eps)
    bc = BoundaryCondition([Dirichlet(np.cos), Neumann()])
    return dom, solve_mixed(dom, bc, basis)


def annulus_oracle(eps, z):
    r, th = np.abs(z), np.angle(z)
    return (r + eps ** 2 / r) / (1 + eps ** 2) * np.cos(th)


@pytest.mark.parametrize("eps", [0.1, 0.3, 0.5])
def test_annulus_series_solution(eps):
    dom, sol = annulus_cos(eps)
    rng = np.random.default_rng(0)
    r = rng.uniform(eps, 1, 200)
    z = r * np.exp(1j * rng.uniform(0, 2 * np.pi, 200))
    assert np.max(np.abs(evaluate(sol, z) - annulus_oracle(eps, z))) < 1e-10
    assert sol.residual <= sol.tol


def test_annulus_gradient_on_axis():
    eps = 0.3
    _, sol = annulus_cos(eps)
    r = np.linspace(0.35, 0.95, 7)
    g = evaluate_gradient(sol, r + 0j)
    dr = (1 - eps ** 2 / r ** 2) / (1 + eps ** 2)
    assert np.max(np.abs(g[:, 0] - dr)) < 1e-9
    assert np.max(np.abs(g[:, 1])) < 1e-9


def test_constant_solution():
    m = build_planar_model(ModuliPoint(0.3, 0.4, 0.5))
    sol = solve_mixed(m, BoundaryCondition([Dirichlet(1.0)] * len(m)))
    z = np.array([0.5 + 0.5j, 2.0j, -0.6 + 0.1j])
    assert np.allclose(evaluate(sol, z), 1.0, atol=1e-10)
    assert np.max(np.abs(evaluate_gradient(sol, z))) < 1e-9
    assert abs(dirichlet_energy(sol)) < 1e-9
    assert np.max(np.abs(tangential_derivative(sol).coeffs)) < 1e-9


def test_odd_data_gives_odd_solution():
    m = build_planar_model(ModuliPoint(0.3, 0.4, 0.5))
    # data +1 on the group 1 circle with Re z > 0, -1 on its mirror, Neumann elsewhere
    k1, k2 = m.index_of(1, 1), m.index_of(1, 2)
    bc = BoundaryCondition.from_map(m, {k1: Dirichlet(1.0), k2: Dirichlet(-1.0)})
    sol = solve_mixed(m, bc, BasisSpec(48), tol=1e-8)
    rng = np.random.default_rng(3)
    z = rng.uniform(-2, 2, 400) + 1j * rng.uniform(-2, 2, 400)
    z = z[m.contains(z)]
    rho = ReflectionAction(1)
    assert np.max(np.abs(sol.value(rho(z)) + sol.value(z))) < 1e-10


def test_dirichlet_collocation_reproduces_datum():
    dom, sol = annulus_cos(0.3)
    phi = np.linspace(0, 2 * np.pi, 13)
    z = dom.circles[0].point(phi)
    assert np.max(np.abs(evaluate(sol, z) - np.cos(phi))) <= max(sol.residual, 1e-12) * 10


def test_neumann_trace_vanishes():
    _, sol = annulus_cos(0.3)
    tr = normal_derivative(sol, 1)
    assert np.max(np.abs(tr.samples(64))) < 1e-9


def test_log_radial_normal_derivative():
    eps = 0.3
    dom = annulus_domain(eps)
    bc = BoundaryCondition([Dirichlet(0.0), Dirichlet(math.log(eps))])
    sol = solve_mixed(dom, bc)
    tr = normal_derivative(sol, 1)
    assert np.allclose(tr.samples(32), -1 / eps, atol=1e-9)


def test_sphere_trace_is_plane_trace_divided_by_mu():
    m = build_planar_model(ModuliPoint(0.3, 0.4, 0.5))
    k1, k2 = m.index_of(1, 1), m.index_of(1, 2)
    sol = solve_mixed(m, BoundaryCondition.from_map(m, {k1: Dirichlet(1.0), k2: Dirichlet(-1.0)}),
                      BasisSpec(48), tol=1e-8)
    phi = np.linspace(0, 2 * np.pi, 11)
    for k in range(len(m)):
        z = m.circles[k].point(phi)
        plane = sol.trace_samples(k, phi, "normal", "plane")
        sphere = sol.trace_samples(k, phi, "normal", "sphere")
        assert np.allclose(sphere, plane * (1 + np.abs(z) ** 2) / 2, rtol=1e-12, atol=1e-14)
        assert np.allclose(sphere * sphere_weight(z), plane, rtol=1e-12, atol=1e-14)


def test_tangential_derivative_of_cos():
    s = 0.5
    dom = disk_domain(s)
    sol = solve_mixed(dom, BoundaryCondition([Dirichlet(np.cos)]))
    phi = np.linspace(0, 2 * np.pi, 17)
    assert np.allclose(sol.trace_samples(0, phi, "tangential"), -np.sin(phi) / s, atol=1e-10)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 5), st.floats(0.1, 0.5))
def test_u_times_tangential_derivative_integrates_to_zero(k, r3):
    m = build_planar_model(ModuliPoint(0.3, 0.2, r3))
    rng = np.random.default_rng(k)
    a = rng.normal(size=len(m))
    sol = solve_mixed(m, BoundaryCondition([Dirichlet(float(x)) if j % 2 else Neumann(float(x))
                                            for j, x in enumerate(a)]), BasisSpec(48), tol=1e-6)
    phi = np.arange(256) * 2 * np.pi / 256
    u = sol.trace_samples(k, phi, "value")
    du = sol.trace_samples(k, phi, "dphi")
    assert abs(np.mean(u * du) * 2 * np.pi) < 1e-10 * max(1.0, np.max(np.abs(u)) ** 2)


def test_annulus_log_energy():
    # u = 1 + 2 log|z| / |log eps| has energy 2 pi * 2^2 / |log eps|
    eps = 0.3
    dom = annulus_domain(eps)
    sol = solve_mixed(dom, BoundaryCondition([Dirichlet(1.0), Dirichlet(-1.0)]))
    assert dirichlet_energy(sol) == pytest.approx(8 * math.pi / abs(math.log(eps)), rel=1e-10)


def test_energy_invariant_under_scaling():
    dom = annulus_domain(0.3)
    big = annulus_domain(0.6, 2.0)
    bc = BoundaryCondition([Dirichlet(np.cos), Neumann()])
    e1 = dirichlet_energy(solve_mixed(dom, bc, BasisSpec(24)))
    e2 = dirichlet_energy(solve_mixed(big, bc, BasisSpec(24)))
    assert abs(e1 - e2) < 1e-9


def test_symmetry_equivariance():
    m = build_planar_model(ModuliPoint(0.3, 0.4, 0.5))
    k1, k2 = m.index_of(2, 1), m.index_of(2, 2)
    f = lambda phi: 1 + 0.3 * np.cos(phi) + 0.2 * np.sin(2 * phi)
    bc = BoundaryCondition.from_map(m, {k1: Dirichlet(f), k2: Dirichlet(0.0)})
    # rho_2 (conjugation) swaps the two group-2 circles
    s2 = m.reflection_map(2)
    assert s2[k1][0] == k2
    _, c1, c2 = s2[k2]
    moved = Dirichlet(lambda phi: f(np.arctan2(c2 * np.sin(phi), c1 * np.cos(phi))))
    bcr = BoundaryCondition.from_map(m, {k2: moved, k1: Dirichlet(0.0)})
    u = solve_mixed(m, bc, BasisSpec(48), tol=1e-8)
    v = solve_mixed(m, bcr, BasisSpec(48), tol=1e-8)
    rng = np.random.default_rng(5)
    z = rng.uniform(-2, 2, 300) + 1j * rng.uniform(-2, 2, 300)
    z = z[m.contains(z)]
    assert np.max(np.abs(v.value(z) - u.value(np.conj(z)))) < 1e-10


def test_residual_decays_with_order():
    m = build_planar_model(ModuliPoint(0.3, 0.4, 0.5))
    k1, k2 = m.index_of(1, 1), m.index_of(1, 2)
    bc = BoundaryCondition.from_map(m, {k1: Dirichlet(1.0), k2: Dirichlet(-1.0)})
    res = [solve_mixed(m, bc, BasisSpec(n), check=False).residual for n in (8, 16, 24, 32, 40)]
    assert all(b < 0.9 * a for a, b in zip(res, res[1:]) if a > 1e-13)


def test_energy_matches_area_quadrature():
    _, sol = annulus_cos(0.4)
    assert dirichlet_energy(sol) == pytest.approx(area_energy(sol), rel=1e-6)


def test_boundary_values_and_json():
    _, sol = annulus_cos(0.3)
    tr = boundary_values(sol, 0)
    assert np.allclose(tr.samples(16)[0], np.cos(np.arange(16) * 2 * np.pi / 16), atol=1e-10)
    d = json.loads(sol.to_json())
    assert len(d["coefficients"]) == len(sol.coef) and d["residual"] == sol.residual


def test_trace_csv(tmp_path):
    _, sol = annulus_cos(0.3)
    boundary_values(sol, 0).to_csv(tmp_path / "t.csv", K=8)
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "circle,angle,value" and len(lines) == 9
