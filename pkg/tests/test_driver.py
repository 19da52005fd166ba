import logging

import numpy as np
import pytest

from tfetiplast import assembly
from tfetiplast.driver import (
    ElastoplasticProblem,
    FieldState,
    NewtonRecord,
    SolverConfig,
    _check_tail,
    run_time_loop,
)
from tfetiplast.errors import LinearSolveFailure, NoConvergence
from tfetiplast.material import return_mapping
from tfetiplast.mesh import LoadProgram, generate_plate_with_hole

from conftest import cantilever


@pytest.mark.parametrize(
    "kwargs",
    [dict(eps_newton=0.0), dict(eps_pcgp=1.0), dict(max_newton=0), dict(preconditioner="jacobi"),
     dict(linear_solver="cg"), dict(subdomains=0)],
)
def test_solver_config_validation(kwargs):
    with pytest.raises(ValueError):
        SolverConfig(**kwargs)


def test_defaults():
    cfg = SolverConfig()
    assert (cfg.eps_newton, cfg.eps_pcgp) == (1e-4, 1e-7)


def test_elastic_step_takes_two_newton_iterations(steel):
    mesh = cantilever(2)
    prog = LoadProgram.linear(1.0, 0.0, 1.0, 1)
    _, report, _, state = run_time_loop(mesh, steel, prog, SolverConfig(subdomains=2))
    rows = report.rows
    assert len(rows) == 2
    assert rows[0].stopping_criterion == 1.0
    assert rows[1].stopping_criterion <= 1e-4
    assert not state.plastic.any() and rows[1].plastic_elements == 0


def test_zero_increment_converges_immediately(steel):
    problem = ElastoplasticProblem(cantilever(2), steel, SolverConfig(linear_solver="direct"))
    du, rows = problem.newton_solve(np.zeros(problem.decomp.n_torn_dofs), FieldState.zeros(problem.mesh.n_tets))
    assert len(rows) == 1 and rows[0].stopping_criterion == 0.0
    assert not du.any()


def test_first_small_step_of_eight_is_elastic(steel):
    """With N = 8 the first step of 400 sin(2 pi t) stays elastic and needs 2 iterations."""
    mesh = generate_plate_with_hole(refinement=1)
    prog = LoadProgram.sinusoidal(400.0, 0.0, 0.25, 8)
    _, report, _, _ = run_time_loop(mesh, steel, prog, SolverConfig(subdomains=2))
    first = report.steps[0]
    assert first.newton_iterations == 2 and first.plastic_elements == 0
    counts = [s.plastic_elements for s in report.steps]
    assert counts == sorted(counts) and counts[-1] > 0  # monotone growth of the plastic zone


@pytest.fixture(scope="module")
def plastic_runs():
    from tfetiplast.material import MaterialParams

    params = MaterialParams.from_engineering(206900.0, 0.29, 450.0, 10000.0)
    mesh = cantilever(3)
    prog = LoadProgram.sinusoidal(100.0, 0.0, 0.25, 2)
    out = {}
    for linear in ("tfeti", "direct"):
        cfg = SolverConfig(eps_newton=1e-9, eps_pcgp=1e-12, subdomains=3, linear_solver=linear)
        out[linear] = run_time_loop(mesh, params, prog, cfg)
    return params, mesh, prog, out


def test_tfeti_and_direct_drivers_agree(plastic_runs):
    _, mesh, _, runs = plastic_runs
    (pa, ra, ua, sa), (pb, rb, ub, sb) = runs["tfeti"], runs["direct"]
    assert sa.plastic.sum() > 0
    np.testing.assert_array_equal(sa.plastic, sb.plastic)
    np.testing.assert_allclose(ua, ub, rtol=0, atol=1e-8 * np.abs(ub).max())
    assert [s.newton_iterations for s in ra.steps] == [s.newton_iterations for s in rb.steps]


def test_state_is_return_mapping_of_converged_increment(plastic_runs):
    params, mesh, prog, runs = plastic_runs
    problem, report, u, state = runs["tfeti"]
    # replay: the final state comes from step 2 starting at the step-1 state
    first = ElastoplasticProblem(mesh, params, problem.cfg, problem.decomp)
    one = LoadProgram(prog.times[:2], prog.traction_scale)
    _, u1, s1 = first.run(one)
    deps = problem.element_strains(u - u1)
    for e in range(0, mesh.n_tets, 17):
        r = return_mapping((s1.sigma[e], s1.kappa[e]), deps[e], params)
        np.testing.assert_allclose(state.sigma[e], s1.sigma[e] + r.delta_sigma, rtol=1e-6, atol=1e-6)
        assert state.plastic[e] == r.plastic


def test_converged_state_is_in_equilibrium(plastic_runs):
    params, mesh, prog, runs = plastic_runs
    problem, _, u, state = runs["direct"]
    L = problem.decomp.gather_matrix(mesh.n_nodes)
    batch = assembly.element_batch(mesh.nodes, mesh.tets)
    f_int = assembly.internal_force(batch, state.sigma)
    f_ext = L.T @ problem.load(prog, prog.times[-1])
    free = ~mesh.dirichlet.ravel()
    assert np.linalg.norm((f_int - f_ext)[free]) <= 1e-6 * np.linalg.norm(f_ext)
    assert np.all(state.kappa >= 0.0)


def test_no_convergence_carries_history(steel):
    mesh = cantilever(2)
    prog = LoadProgram.sinusoidal(150.0, 0.0, 0.25, 1)
    with pytest.raises(NoConvergence) as info:
        run_time_loop(mesh, steel, prog, SolverConfig(max_newton=2))
    exc = info.value
    assert exc.step == 1 and len(exc.history) == 2 and len(exc.rows) == 2
    assert exc.history[0] == 1.0


def test_linear_solver_failure_reports_newton_index(steel):
    mesh = cantilever(2)
    prog = LoadProgram.sinusoidal(100.0, 0.0, 0.25, 1)
    with pytest.raises(LinearSolveFailure) as info:
        run_time_loop(mesh, steel, prog, SolverConfig(subdomains=2, max_pcgp=1))
    assert info.value.newton_index == 1


def test_criterion_growth_warns(caplog):
    rows = [NewtonRecord(1, i, c, 5, p, 0.0) for i, (c, p) in enumerate([(1.0, 0), (0.1, 4), (0.2, 4)], 1)]
    with caplog.at_level(logging.WARNING):
        _check_tail(rows)
    assert "did not decrease" in caplog.text


def test_newton_records_are_complete(plastic_runs):
    _, _, _, runs = plastic_runs
    _, report, _, _ = runs["tfeti"]
    for step in report.steps:
        assert [r.newton_iter for r in step.newton] == list(range(1, len(step.newton) + 1))
        assert all(r.step == step.step and r.pcgp_iters > 0 for r in step.newton)
    assert report.total_newton == len(report.rows)
