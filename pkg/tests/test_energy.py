import math

import numpy as np
import pytest

from nharm.energy import (
    EnergyReport,
    dirichlet_energy,
    energy_per_cell,
    entropy,
    euclidean_gradient,
    get_threads,
    local_energy,
    node_volumes,
    p_energy,
    set_threads,
    tangent_gradient,
    total_energy,
)
from nharm.inequalities import GrowthParams, ParamsError
from nharm.manifolds import (
    MapField,
    TargetManifold,
    build_icosphere_mesh,
    build_torus_mesh,
    identity_field,
)

from conftest import random_field


def test_constant_field_has_zero_energy(torus8, sphere2):
    field = MapField.constant(torus8, sphere2, [0.0, 1.0, 0.0])
    params = GrowthParams(2, 3, 2.2, 0.1, 1.0)
    assert total_energy(field, params).total == 0.0
    assert dirichlet_energy(field) == 0.0
    assert np.array_equal(euclidean_gradient(field, params).values, np.zeros((64, 3)))


@pytest.mark.parametrize("delta", [0.0, 0.1])
def test_entropy_of_constant_field(torus8, sphere2, delta):
    field = MapField.constant(torus8, sphere2, [0.0, 0.0, 1.0])
    params = GrowthParams(2, 3, 2.4, delta, 1.0)
    a = 1 + delta
    expected = a ** 1.2 * math.log(a)
    assert entropy(field, params) == pytest.approx(expected, rel=1e-12, abs=1e-15)


def test_identity_dirichlet_energy_is_the_mesh_area(ico3, sphere2):
    field = identity_field(ico3, sphere2)
    assert dirichlet_energy(field) == pytest.approx(ico3.total_volume, rel=1e-9)
    assert p_energy(field, 2.0) == pytest.approx(ico3.total_volume, rel=1e-9)
    assert abs(dirichlet_energy(field) - 4 * math.pi) < 0.02 * 4 * math.pi


def test_energy_at_p_equal_n_without_regularization_is_dirichlet(torus8, sphere2):
    field = random_field(torus8, sphere2, seed=2)
    params = GrowthParams(2, 3, 2.0, 0.0, 1.0)
    assert total_energy(field, params).total == pytest.approx(dirichlet_energy(field), rel=1e-12)


def test_energy_is_monotone_in_p(torus8, sphere2):
    field = random_field(torus8, sphere2, seed=4)
    energies = [total_energy(field, GrowthParams(2, 3, p, 0.05, 1.0)).total
                for p in (2.0, 2.1, 2.3, 2.6)]
    assert energies == sorted(energies)


def test_params_must_match_field(torus8, sphere2):
    field = random_field(torus8, sphere2)
    with pytest.raises(ParamsError):
        total_energy(field, GrowthParams(3, 3, 3.2))
    with pytest.raises(ParamsError):
        euclidean_gradient(field, GrowthParams(2, 2, 2.2))


def _directional_check(field, params, seed):
    rng = np.random.default_rng(seed)
    g = euclidean_gradient(field, params).values
    v = field.target.tangent_project(field.values, rng.standard_normal(field.values.shape))
    eps = 1e-6

    def energy(sign):
        moved = MapField.from_ambient(field.mesh, field.target, field.values + sign * eps * v)
        return total_energy(moved, params).total

    fd = (energy(1) - energy(-1)) / (2 * eps)
    exact = float(np.sum(g * v))
    assert abs(fd - exact) <= 1e-6 * (abs(exact) + np.linalg.norm(g) * np.linalg.norm(v))


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences_torus2(seed):
    mesh = build_torus_mesh(2, 8)
    target = TargetManifold.sphere(2)
    _directional_check(random_field(mesh, target, seed), GrowthParams(2, 3, 2.3, 0.1, 1.0), seed)


@pytest.mark.parametrize("seed", range(3))
def test_gradient_matches_finite_differences_torus3(seed):
    mesh = build_torus_mesh(3, 4)
    target = TargetManifold.sphere(3)
    _directional_check(random_field(mesh, target, seed), GrowthParams(3, 4, 3.4, 0.2, 0.5), seed)


@pytest.mark.parametrize("seed", range(3))
def test_gradient_matches_finite_differences_icosphere(ico2, seed):
    target = TargetManifold.sphere(2)
    _directional_check(random_field(ico2, target, seed), GrowthParams(2, 3, 2.05, 0.01, 1.0), seed)


def test_gradient_on_flat_torus_target():
    mesh = build_torus_mesh(2, 8)
    target = TargetManifold.flat_torus([1.0, 1.0])
    rng = np.random.default_rng(11)
    base = identity_field(mesh, target)
    field = MapField.from_ambient(mesh, target, base.values + 0.02 * rng.standard_normal((64, 2)))
    params = GrowthParams(2, 2, 2.5, 0.1, 1.0)
    g = euclidean_gradient(field, params).values
    node, comp, eps = 13, 1, 1e-6
    plus = field.values.copy()
    minus = field.values.copy()
    plus[node, comp] += eps
    minus[node, comp] -= eps
    fd = (total_energy(MapField.from_ambient(mesh, target, plus), params).total
          - total_energy(MapField.from_ambient(mesh, target, minus), params).total) / (2 * eps)
    assert fd == pytest.approx(g[node, comp], rel=1e-6, abs=1e-9)


def test_tangent_gradient_is_tangent(torus8, sphere2):
    field = random_field(torus8, sphere2, seed=6)
    g = tangent_gradient(field, GrowthParams(2, 3, 2.2, 0.1, 1.0))
    assert g.tangent
    radial = np.einsum("vN,vN->v", g.values, field.values)
    assert np.max(np.abs(radial)) <= 1e-12 * (1 + g.sup_norm())


def test_threads_do_not_change_results(sphere2):
    mesh = build_torus_mesh(2, 72)
    field = random_field(mesh, sphere2, seed=8, spread=0.3)
    params = GrowthParams(2, 3, 2.3, 0.1, 1.0)
    serial = energy_per_cell(field, params)
    grad_serial = euclidean_gradient(field, params).values
    set_threads(4)
    assert np.array_equal(energy_per_cell(field, params), serial)
    assert np.array_equal(euclidean_gradient(field, params).values, grad_serial)


def test_set_threads_reads_environment(monkeypatch):
    monkeypatch.setenv("NHARM_THREADS", "3")
    assert set_threads() == 3
    assert get_threads() == 3
    monkeypatch.setenv("NHARM_THREADS", "many")
    with pytest.raises(ParamsError):
        set_threads()
    monkeypatch.delenv("NHARM_THREADS")
    assert set_threads() == 1
    with pytest.raises(ParamsError):
        set_threads(0)


def test_node_volumes_partition_the_domain(torus8, ico2):
    assert node_volumes(torus8) == pytest.approx(np.full(64, 1 / 64))
    assert node_volumes(ico2).sum() == pytest.approx(ico2.total_volume, rel=1e-12)


def test_local_energy(torus8, sphere2):
    field = random_field(torus8, sphere2, seed=9)
    params = GrowthParams(2, 3, 2.2, 0.1, 1.0)
    total = total_energy(field, params).total
    assert local_energy(field, params, 0, 10.0) == pytest.approx(total, rel=1e-12)
    assert local_energy(field, params, 0, 0.0) == 0.0
    assert 0 < local_energy(field, params, 0, 0.2) < total


def test_energy_report_json(torus8, sphere2):
    report = total_energy(random_field(torus8, sphere2), GrowthParams(2, 3, 2.2))
    again = EnergyReport.from_json(report.to_json())
    assert again.total == report.total
    assert np.array_equal(again.per_cell, report.per_cell)


def test_icosphere_entropy_grows_with_energy(sphere2):
    mesh = build_icosphere_mesh(1)
    params = GrowthParams(2, 3, 2.2, 0.0, 1.0)
    flat = MapField.constant(mesh, sphere2, [0.0, 0.0, 1.0])
    assert entropy(flat, params) == 0.0
    assert entropy(identity_field(mesh, sphere2), params) > 0
