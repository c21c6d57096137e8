import numpy as np
import pytest
from hypothesis import example, given
from hypothesis import strategies as st

from gcflight.alloc import AllocProblem, solve_lexicographic
from gcflight.core import Ball, Box, DomainError
from gcflight.horizon import (GridMismatchError, HeightGrid, HorizonGrid, HorizonProblem,
                              HorizonSolution, cold_start, cost_terms, energy_cost,
                              impulse_cost, mpc_step, shift_solution, solve_horizon)

M = 1.0
G = np.array([0.0, 0.0, 9.8])


def const_schedule(N, f_g, f_d):
    return HorizonSolution(f_g=np.tile(np.asarray(f_g, float), (N, 1)),
                           f_d=np.tile(np.asarray(f_d, float), (N, 1)))


# --- costs ------------------------------------------------------------------

def test_impulse_cost_vanishes_on_targets_without_energy_term():
    a_d = np.array([1.0, 2.0, -0.5])
    prob = HorizonProblem(HorizonGrid(T=2.0, N=8), M, a_d, Ball(1e3), w_g=1e4, w_t=1e2, w_e=0.0)
    assert impulse_cost(const_schedule(8, M * G, M * a_d - M * G), prob) == 0.0


def test_impulse_energy_term_constant_integrand():
    # f_g = mg and f_t = m a_d with a_d = 0 leave f_d = -mg on every node
    prob = HorizonProblem(HorizonGrid(T=2.0, N=10), M, [0, 0, 0], Ball(1e3),
                          w_g=1e4, w_t=1e2, w_e=1.0)
    sol = const_schedule(10, M * G, -M * G)
    g_term, t_term, e_term = cost_terms(sol, prob)
    assert g_term == 0.0 and t_term == 0.0
    assert e_term == pytest.approx(2 * 9.8 ** 2, rel=1e-14)
    assert e_term == pytest.approx(192.08, rel=1e-14)


def _impulse_oracle(f_g, f_d, a_d, dt, w):
    # node-by-node held forces, summed in plain Python
    w_g, w_t, w_e = w
    rg = [0.0, 0.0, 0.0]
    rt = [0.0, 0.0, 0.0]
    e = 0.0
    for k in range(len(f_g)):
        for i in range(3):
            rg[i] += (f_g[k][i] - M * G[i]) * dt
            rt[i] += (f_g[k][i] + f_d[k][i] - M * a_d[k][i]) * dt
            e += f_d[k][i] ** 2 * dt
    return w_g * sum(v * v for v in rg) + w_t * sum(v * v for v in rt) + w_e * e


@pytest.mark.parametrize("seed", range(10))
def test_impulse_cost_matches_independent_sum(seed):
    rng = np.random.default_rng(seed)
    N, T = 4, rng.uniform(0.5, 3)
    a_d = rng.normal(size=(N, 3))
    f_g, f_d = rng.normal(scale=5, size=(2, N, 3))
    w = (1e4, 1e2, 1.0)
    prob = HorizonProblem(HorizonGrid(T=T, N=N), M, a_d, Ball(1e3), w_g=w[0], w_t=w[1], w_e=w[2])
    got = impulse_cost(HorizonSolution(f_g, f_d), prob)
    assert got == pytest.approx(_impulse_oracle(f_g.tolist(), f_d.tolist(), a_d.tolist(), T / N, w),
                                rel=1e-12)


def test_energy_first_term_ignores_horizontal_components():
    prob = HorizonProblem(HeightGrid(H=3.0, N=6), M, [0, 0, 0], Ball(1e3))
    sol = HorizonSolution(f_g=np.tile([7.0, -3.0, 9.8], (6, 1)), f_d=np.zeros((6, 3)))
    assert cost_terms(sol, prob)[0] == 0.0


def test_energy_constant_excess_work():
    w_g = 1e4
    prob = HorizonProblem(HeightGrid(H=3.0, N=6), M, [0, 0, 0], Ball(1e3), w_g=w_g)
    sol = HorizonSolution(f_g=np.tile([0.0, 0.0, 9.8 + 1.0], (6, 1)), f_d=np.zeros((6, 3)))
    assert cost_terms(sol, prob)[0] == pytest.approx(w_g * 3.0 ** 2, rel=1e-14)


def _energy_oracle(f_g, f_d, a_d, dh, w):
    w_g, w_t, w_e = w
    rg = rt = re = 0.0
    for k in range(len(f_g)):
        rg += (f_g[k][2] - M * G[2]) * dh[k]
        rt += (f_g[k][2] + f_d[k][2] - M * a_d[k][2]) * dh[k]
        re += f_d[k][2] * dh[k]
    return w_g * rg * rg + w_t * rt * rt + w_e * re * re


@pytest.mark.parametrize("seed", range(10))
def test_energy_cost_matches_independent_work_sum(seed):
    rng = np.random.default_rng(100 + seed)
    N = 5
    v_z = rng.uniform(0.5, 4, N)
    dt = 0.2
    grid = HeightGrid.from_trajectory(v_z=v_z, dt=dt)
    a_d = rng.normal(size=(N, 3))
    f_g, f_d = rng.normal(scale=5, size=(2, N, 3))
    w = (1e4, 1e2, 1.0)
    prob = HorizonProblem(grid, M, a_d, Ball(1e3), w_g=w[0], w_t=w[1], w_e=w[2])
    got = energy_cost(HorizonSolution(f_g, f_d), prob)
    want = _energy_oracle(f_g.tolist(), f_d.tolist(), a_d.tolist(), (v_z * dt).tolist(), w)
    assert got == pytest.approx(want, rel=1e-12)


def test_height_samples_from_positions():
    grid = HeightGrid.from_trajectory(h=[0.0, 0.5, 1.5, 1.5, 3.0])
    assert grid.N == 4 and grid.H == pytest.approx(3.0)
    np.testing.assert_allclose(grid.weights(), [0.5, 1.0, 0.0, 1.5])
    assert not grid.constant_rate


def test_climbing_inside_height_span_is_rejected():
    with pytest.raises(DomainError):
        HeightGrid.from_trajectory(h=[0.0, 1.0, 0.5])


def test_cost_views_are_not_interchangeable():
    prob = HorizonProblem(HorizonGrid(T=1.0, N=4), M, [0, 0, 0], Ball(10))
    sol = const_schedule(4, G, -G)
    with pytest.raises(GridMismatchError):
        energy_cost(sol, prob)
    with pytest.raises(GridMismatchError):
        impulse_cost(const_schedule(5, G, -G), prob)


def test_problem_validation():
    with pytest.raises(GridMismatchError):
        HorizonProblem(HorizonGrid(T=1.0, N=4), M, np.zeros((3, 3)), Ball(10))
    with pytest.raises(DomainError):
        HorizonProblem(HorizonGrid(T=1.0, N=4), M, [0, 0, 0], Ball(10), w_g=1.0, w_t=2.0)
    with pytest.raises(DomainError):
        HorizonGrid(T=0.0, N=4)


# --- solver -----------------------------------------------------------------

@pytest.mark.parametrize("viewpoint", ["impulse", "energy"])
def test_unconstrained_solution_hits_both_targets(viewpoint):
    N = 10
    grid = HorizonGrid(T=2.0, N=N) if viewpoint == "impulse" else HeightGrid(H=2.0, N=N)
    a_d = np.array([1.0, -0.5, 0.3])
    prob = HorizonProblem(grid, M, a_d, Ball(1e4), w_e=0.0)
    sol = solve_horizon(prob)
    assert sol.converged
    np.testing.assert_allclose(sol.f_g, np.tile(M * G, (N, 1)), atol=1e-9)
    np.testing.assert_allclose(sol.f_t, np.tile(M * a_d, (N, 1)), atol=1e-9)
    assert sol.objective <= 1e-12


def test_constant_saturated_ball_matches_static_allocation():
    prob = HorizonProblem(HorizonGrid(T=2.0, N=10), M, [20.0, 20.0, 0.0], Ball(15.0),
                          w_g=1e4, w_t=1.0, w_e=0.0)
    sol = solve_horizon(prob)
    static = solve_lexicographic(AllocProblem(M, [20.0, 20.0, 0.0], Ball(15.0), g=G))
    assert sol.converged
    for k in range(prob.N):
        assert np.linalg.norm(sol.f_d[k] - static.f_d) <= 1e-2


def _scalar_grid_optimum(prob, res):
    """Exhaustive grid over a constant per-node (f_g,z, f_d,z).

    The data are node-independent and the cost is convex and invariant under
    permuting nodes, so averaging an optimal schedule over all permutations
    gives a constant optimal schedule: a 2-D grid over (x, u) is exhaustive.
    """
    r = prob.F.radius
    vals = np.arange(-round(r / res), round(r / res) + 1) * res
    X, U = np.meshgrid(vals, vals, indexing="ij")
    a, b = M * G[2], M * prob.a_d[0, 2]
    c = max(0.0, b)
    T = prob.grid.T
    cost = (prob.w_g * ((X - a) * T) ** 2 + prob.w_t * ((X + U - b) * T) ** 2
            + prob.w_e * U ** 2 * T)
    cost = np.where(X + U <= c + 1e-12, cost, np.inf)
    i = np.unravel_index(np.argmin(cost), cost.shape)
    return float(cost[i]), X[i], U[i]


@pytest.mark.parametrize("a_z", [0.0, 3.0, -4.0])
def test_three_node_scalar_instance_matches_grid(a_z):
    prob = HorizonProblem(HorizonGrid(T=1.5, N=3), M, [0.0, 0.0, a_z], Ball(2.0),
                          w_g=1e4, w_t=1e2, w_e=1.0)
    sol = solve_horizon(prob)
    assert sol.converged
    best, x, u = _scalar_grid_optimum(prob, 1e-3)
    # the grid optimum is feasible for the solver, so it can never beat it
    assert sol.objective <= best + 1e-9
    assert best - sol.objective <= 1e-3 * prob.w_g
    assert abs(np.mean(sol.f_g[:, 2]) - x) <= 2e-3
    np.testing.assert_allclose(sol.f_d[:, 2], u, atol=2e-3)
    np.testing.assert_allclose(sol.f_g[:, :2], 0, atol=1e-9)


@pytest.mark.parametrize("seed", range(6))
def test_traces_never_increase_and_schedules_are_feasible(seed):
    rng = np.random.default_rng(seed)
    N = int(rng.integers(3, 12))
    grid = HorizonGrid(T=rng.uniform(0.5, 3), N=N) if seed % 2 else HeightGrid(H=rng.uniform(1, 5), N=N)
    lo = rng.uniform(-8, -1, 3)
    F = Box(lo, lo + rng.uniform(3, 15, 3)) if seed % 3 else Ball(rng.uniform(3, 12))
    prob = HorizonProblem(grid, M, rng.normal(scale=6, size=(N, 3)), F,
                          d=rng.normal(size=3) if seed % 2 else None)
    sol = solve_horizon(prob)
    trace = np.asarray(sol.trace)
    assert np.all(np.diff(trace) <= 0)
    assert F.contains(sol.f_g, 1e-9) and F.contains(sol.f_d, 1e-9)
    a, b = prob.targets()
    for k in range(N):
        n = a[k] / np.linalg.norm(a[k])
        bound = max(max(0.0, n @ b[k]), n @ F.project(a[k]) + F.support_min(n))
        assert n @ sol.f_t[k] <= bound + 1e-9 * (1 + F.scale)
    assert sol.objective == pytest.approx(sum(cost_terms(sol, prob)), rel=1e-9, abs=1e-9)


def test_warm_start_not_worse_than_cold():
    prob = HorizonProblem(HorizonGrid(T=2.0, N=6), M, [5.0, 0.0, -2.0], Ball(8.0))
    cold = solve_horizon(prob)
    warm = solve_horizon(prob, init=cold)
    assert warm.objective <= cold.objective + 1e-9
    assert warm.metadata["start"] in ("warm", "cold", "zero")


def test_cold_start_is_per_node_static_allocation():
    prob = HorizonProblem(HorizonGrid(T=2.0, N=3), M, [20.0, 20.0, 0.0], Ball(15.0))
    cold = cold_start(prob)
    static = solve_lexicographic(AllocProblem(M, [20.0, 20.0, 0.0], Ball(15.0), g=G))
    np.testing.assert_allclose(cold.f_d, np.tile(static.f_d, (3, 1)), atol=1e-12)


# --- receding horizon ------------------------------------------------------

def test_constant_problem_gives_the_same_command_every_step():
    prob = HorizonProblem(HorizonGrid(T=2.0, N=8), M, [20.0, 20.0, 0.0], Ball(15.0))
    cmd, sol = mpc_step(prob)
    for _ in range(3):
        nxt, sol = mpc_step(prob, sol)
        np.testing.assert_allclose(nxt, cmd, atol=1e-9)


def test_unconstrained_command_is_open_loop_law():
    a_d = np.array([0.4, -1.2, 2.0])
    prob = HorizonProblem(HorizonGrid(T=2.0, N=8), M, a_d, Ball(1e5), w_e=0.0)
    cmd, _ = mpc_step(prob)
    np.testing.assert_allclose(cmd, -M * G + M * a_d, atol=1e-9)


def test_node_zero_command_independent_of_node_count():
    def ramp(t):
        return np.stack([0.5 * t, -t, 0.2 + 0.1 * t], axis=-1)

    cmds = []
    for N in (10, 20):
        grid = HorizonGrid(T=2.0, N=N, t0=0.3)
        prob = HorizonProblem(grid, M, ramp(grid.times()), Ball(1e5), w_e=0.0)
        cmds.append(mpc_step(prob)[0])
    np.testing.assert_allclose(cmds[0], cmds[1], atol=1e-9)
    np.testing.assert_allclose(cmds[0], -M * G + M * ramp(np.array(0.3)), atol=1e-9)


def test_shift_drops_first_node_and_repeats_last():
    sol = HorizonSolution(f_g=np.arange(9.0).reshape(3, 3), f_d=-np.arange(9.0).reshape(3, 3))
    sh = shift_solution(sol)
    np.testing.assert_array_equal(sh.f_g, [[3, 4, 5], [6, 7, 8], [6, 7, 8]])


@given(st.floats(0.5, 20), st.floats(-10, 10))
@example(1.0, 6.103515625e-05)     # start at the pole of a tight ball, guard active
def test_solver_never_beaten_by_its_cold_start(r, az):
    prob = HorizonProblem(HorizonGrid(T=1.0, N=4), M, [az, 0.5 * az, 0.0], Ball(r))
    sol = solve_horizon(prob, max_iter=400)
    assert sol.objective <= sum(cost_terms(cold_start(prob), prob)) + 1e-9
