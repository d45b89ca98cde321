"""Desk-scale reproductions of the bundled benchmarks. Deselected by default; run with -m slow."""

import math
from pathlib import Path

import pytest

from nharm.bubbling import concentration_trace, energy_identity_report, entropy_trace, hopf_balance
from nharm.manifolds import ChartError, degree
from nharm.runconfig import RunConfig
from nharm.solver import DEGREE_JUMP, el_residual_norm, minimize, run_continuation

BENCHMARKS = Path(__file__).resolve().parent.parent / "benchmarks"
FOUR_PI = 4 * math.pi

pytestmark = pytest.mark.slow


def _run(name):
    cfg = RunConfig.load(BENCHMARKS / name)
    mesh = cfg.build_mesh()
    field0 = cfg.build_initial(mesh, cfg.build_target())
    return cfg, run_continuation(field0, cfg.schedule, cfg.solver, cfg.growth_params())


@pytest.fixture(scope="module")
def sphere_run():
    return _run("bench_s2s2_degree1.json")


@pytest.fixture(scope="module")
def torus_run():
    return _run("bench_t2s2_degree1.json")


def test_sphere_minimizer_energy(sphere_run):
    cfg, run = sphere_run
    assert run.completed
    final = run.final
    assert abs(run.trace[-1].D_n - FOUR_PI) <= 0.03 * FOUR_PI
    assert degree(final.field).value == 1
    assert el_residual_norm(final.field, final.params) <= cfg.solver.grad_tol


def test_torus_bubbling_energy_identity(torus_run):
    cfg, run = torus_run
    assert run.completed
    d = cfg.diagnostics
    rows = concentration_trace(run.results, d.threshold, d.chart_multiple, d.neck_outer)
    detected = [row for row in rows if row.radius is not None]
    assert detected and detected[0].k <= 3
    radii = [row.radius for row in rows[3:]]
    assert all(r is not None for r in radii)
    assert all(b <= a for a, b in zip(radii, radii[1:]))
    assert 0.8 <= rows[-1].exponent <= 1.25
    necks = [row.neck_dirichlet for row in rows[3:]]
    assert necks[-1] <= 0.1 * FOUR_PI
    assert all(b <= a for a, b in zip(necks, necks[1:]))

    report = energy_identity_report(run, d.threshold, d.chart_multiple, d.neck_outer,
                                    d.chart_resolution)
    assert report.bubble_count == 1
    assert abs(report.bubbles[0] - FOUR_PI) <= 0.05 * FOUR_PI
    assert report.base_energy <= 0.05 * FOUR_PI
    assert report.defect <= 0.05 * FOUR_PI
    assert report.defect_dirichlet <= 0.05 * FOUR_PI


def test_torus_entropy_and_hopf_balance(torus_run):
    cfg, run = torus_run
    values = entropy_trace(run.trace, 2)
    assert all(b < a for a, b in zip(values, values[1:]))
    assert values[-1] < 0.1 * values[0]

    rows = concentration_trace(run.results, cfg.diagnostics.threshold)
    for result, row in zip(run.results[-3:], rows[-3:]):
        r = row.radius
        while r < cfg.diagnostics.neck_outer:
            try:
                lhs, rhs = hopf_balance(result.field, result.params, row.node, r)
            except ChartError:
                pass
            else:
                assert lhs <= 1.1 * rhs
            r *= 2


def test_torus_warm_start_beats_a_cold_start(torus_run):
    cfg, run = torus_run
    field0 = cfg.build_initial(cfg.build_mesh(), cfg.build_target())
    last = run.results[-1]
    cold = minimize(field0, last.params, cfg.solver)
    assert cold.status == DEGREE_JUMP or last.energy <= cold.energy * (1 + 1e-6)
