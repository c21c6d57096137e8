import json
import math
from dataclasses import fields
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gcflight.core import DomainError, quat_from_euler, quat_to_rotation, wind_to_body
from gcflight.fixedwing import (LEFT_WING, AeroCoeffTable, AffineCoeff, FwParams, SurfaceCommand,
                                WingLossFault, aero_wrench, airflow_state, downwash_speed,
                                fw_derivative, fw_derivative_array, fw_gcf_mpc, fw_mpc_problem,
                                fw_realized_force, line_reference, propeller_wrench,
                                trim_level_flight, wind_force_to_body)
from gcflight.quad import MpcGrid, hover_reference
from gcflight.shooting import ShootingOptions
from gcflight.state import RigidBodyState

TRIM = json.loads((Path(__file__).parent / "fixtures" / "fw_trim.json").read_text())["airspeeds"]


# --- independent model oracle -------------------------------------------------

def _Ry(a):
    return np.array([[math.cos(a), 0, -math.sin(a)], [0, 1, 0], [math.sin(a), 0, math.cos(a)]])


def _Rz(b):
    return np.array([[math.cos(b), -math.sin(b), 0], [math.sin(b), math.cos(b), 0], [0, 0, 1]])


def _affine(co, args, delta):
    total = co.base + co.delta_slope * delta
    for k, a in zip(co.slopes, args):
        total += k * a
    return total


def oracle_wrench(x, u, prm: FwParams, v_w=(0, 0, 0), wing_lost=False):
    """Body force and moment summed term by term from the raw table numbers."""
    tab = prm.table
    R = quat_to_rotation(x[6:10])
    va = R.T @ (np.asarray(x[3:6]) - np.asarray(v_w, float))
    V = math.sqrt(sum(c * c for c in va))
    alpha = math.atan2(va[2], va[0]) if V > 1e-6 else 0.0
    beta = math.asin(va[1] / V) if V > 1e-6 else 0.0
    Vn = max(V, 0.5)
    p_hat, q_hat, r_hat = x[10] * prm.b / (2 * Vn), x[11] * prm.c / (2 * Vn), x[12] * prm.b / (2 * Vn)
    d_t, d_al, d_ar, d_e, d_r = u
    if wing_lost:
        d_al = 0.0
    lon, lat = (alpha, q_hat), (beta, p_hat, r_hat)
    Ve = prm.k_m * d_t
    qa = 0.5 * prm.rho * V * V * prm.S
    qe = 0.5 * prm.rho * Ve * Ve * prm.S

    def wing(name, args):
        total = _affine(getattr(tab, f"{name}_f"), args, 0.0)
        if not wing_lost:
            total += _affine(getattr(tab, f"{name}_wl"), args, d_al)
        total += _affine(getattr(tab, f"{name}_wr"), args, d_ar)
        return total

    minus_drag = -qa * wing("drag", lon) - qe * _affine(tab.drag_e, (), d_e)
    side = qa * prm.b * wing("side", lat) + qe * prm.b * _affine(tab.side_r, (), d_r)
    lift = qa * wing("lift", lon) + qe * _affine(tab.lift_e, (), d_e)
    roll = qa * prm.b * wing("roll", lat) + qe * prm.b * _affine(tab.roll_r, (), d_r)
    pitch = qa * prm.c * wing("pitch", lon) + qe * prm.c * _affine(tab.pitch_e, (), d_e)
    yaw = qa * prm.b * wing("yaw", lat) + qe * prm.b * _affine(tab.yaw_r, (), d_r)
    Ra = _Ry(alpha) @ _Rz(beta)
    f_body = Ra @ np.array([minus_drag, side, -lift])          # lift points up, body z down
    f_body[0] += 0.5 * prm.rho * prm.S_p * prm.C_p * (Ve * Ve - V * V)
    m_body = np.array([roll - prm.k_Tp * (prm.k_Omega * d_t) ** 2, pitch, yaw])
    return R, f_body, m_body, (minus_drag, side, lift), (roll, pitch, yaw)


def oracle_derivative(x, u, prm, v_w=(0, 0, 0), wing_lost=False):
    R, fb, mb, _, _ = oracle_wrench(x, u, prm, v_w, wing_lost)
    w = x[10:13]
    dx = np.zeros(13)
    dx[0:3] = x[3:6]
    dx[3:6] = prm.g + R @ fb / prm.m
    qw, qx, qy, qz = x[6:10]
    dx[6:10] = 0.5 * np.array([-qx * w[0] - qy * w[1] - qz * w[2],
                               qw * w[0] + qy * w[2] - qz * w[1],
                               qw * w[1] - qx * w[2] + qz * w[0],
                               qw * w[2] + qx * w[1] - qy * w[0]])
    dx[10:13] = np.linalg.solve(prm.J, mb + prm.G - np.cross(w, prm.J @ w))
    return dx


def random_state(rng, speed=(5, 30)):
    q = quat_from_euler(*rng.uniform(-0.6, 0.6, 3))
    v = quat_to_rotation(q) @ (np.array([1.0, 0, 0]) * rng.uniform(*speed) + rng.normal(scale=2, size=3))
    return np.concatenate([rng.normal(scale=10, size=3), v, q, rng.normal(scale=0.5, size=3)])


def random_command(rng, prm):
    return rng.uniform(prm.lower, prm.upper)


# --- airflow, downwash, propeller -----------------------------------------------

def test_airflow_straight_ahead():
    a = airflow_state([10, 0, 0], [0, 0, 0], np.eye(3))
    assert (a.V_a, a.alpha, a.beta) == (10.0, 0.0, 0.0)


def test_airflow_equal_components_give_quarter_pi():
    assert airflow_state([10, 0, 10], [0, 0, 0], np.eye(3)).alpha == pytest.approx(math.pi / 4, abs=1e-15)


def test_sideslip_arcsine():
    beta = airflow_state([10, 5, 0], [0, 0, 0], np.eye(3)).beta
    assert beta == pytest.approx(math.asin(5 / math.sqrt(125)), abs=1e-15)
    assert beta == pytest.approx(0.46365, abs=1e-5)


def test_wind_is_subtracted_before_rotating():
    R = quat_to_rotation(quat_from_euler(0.0, 0.0, math.pi / 2))
    a = airflow_state([0, 12, 0], [0, 2, 0], R)
    np.testing.assert_allclose(a.v_a, [10, 0, 0], atol=1e-12)


def test_zero_airspeed_is_flagged_not_nan():
    a = airflow_state([1, 1, 1], [1, 1, 1], np.eye(3))
    assert a.degenerate and a.alpha == 0.0 and a.beta == 0.0


@pytest.mark.parametrize("delta_t, k_m, want", [(0.0, 20, 0.0), (1.0, 20, 20.0), (0.35, 20, 7.0)])
def test_downwash_is_linear(delta_t, k_m, want):
    assert float(downwash_speed(delta_t, k_m)) == pytest.approx(want, abs=1e-15)


def test_propeller_balance_point_gives_no_force():
    prm = FwParams(k_m=20.0)
    f, _ = propeller_wrench(0.5, 10.0, prm)
    np.testing.assert_allclose(f, 0, atol=1e-15)


def test_propeller_windmilling_drag():
    prm = FwParams(rho=1.225, S_p=0.05, C_p=1.0)
    f, m = propeller_wrench(0.0, 10.0, prm)
    np.testing.assert_allclose(f, [-3.0625, 0, 0], atol=1e-12)
    np.testing.assert_array_equal(m, 0)


def test_propeller_double_downwash_identity():
    prm = FwParams(k_m=20.0)
    V_a = 5.0
    f, _ = propeller_wrench(2 * V_a / 20.0, V_a, prm)
    assert f[0] == pytest.approx(0.5 * prm.rho * prm.S_p * prm.C_p * 3 * V_a ** 2, rel=1e-14)


# --- coefficient table --------------------------------------------------------

def test_zero_table_gives_zero_wrench(rng):
    prm = FwParams()
    zero = prm.table.zero()
    air = airflow_state([12, 1, 2], [0, 0, 0], np.eye(3))
    f, m = aero_wrench(air, [0.1, 0.2, 0.3], SurfaceCommand(0.4, 0.1, -0.2, 0.3, 0.1), prm, table=zero)
    np.testing.assert_array_equal(f, 0)
    np.testing.assert_array_equal(m, 0)


@pytest.mark.parametrize("alpha", [-0.1, 0.0, 0.05, 0.2])
def test_symmetric_flight_has_no_lateral_wrench(alpha):
    prm = FwParams()
    air = airflow_state([15 * math.cos(alpha), 0, 15 * math.sin(alpha)], [0, 0, 0], np.eye(3))
    for cmd in (SurfaceCommand(0.5, 0.0, 0.0, 0.1, 0.0), SurfaceCommand(0.5, 0.2, 0.2, -0.1, 0.0)):
        f, m = aero_wrench(air, [0.0, 0.3, 0.0], cmd, prm)
        assert f[1] == 0.0
        assert m[0] == 0.0 and m[2] == 0.0


@given(st.floats(-0.5, 0.5))
def test_wing_pair_deflections_cancel(delta):
    assert AeroCoeffTable.default().symmetry_defects([delta]) == 0.0


def test_table_dict_round_trip_and_strict_keys():
    tab = AeroCoeffTable.default()
    assert AeroCoeffTable.from_dict(tab.to_dict()) == tab
    with pytest.raises(DomainError):
        AeroCoeffTable.from_dict({"lift_wingleft": {"base": 1.0}})
    with pytest.raises(DomainError):
        AeroCoeffTable.from_dict({"lift_wl": {"bias": 1.0}})


def test_partial_table_overrides_only_named_entries():
    tab = AeroCoeffTable.from_dict({"lift_e": {"base": 0.0, "slopes": [], "delta_slope": 0.5}})
    assert tab.lift_e.delta_slope == 0.5
    assert tab.lift_f == AeroCoeffTable.default().lift_f


@pytest.mark.parametrize("seed", range(12))
def test_public_wrench_matches_term_by_term_oracle(seed):
    rng = np.random.default_rng(seed)
    prm = FwParams()
    x = random_state(rng)
    u = random_command(rng, prm)
    R = quat_to_rotation(x[6:10])
    air = airflow_state(x[3:6], [0, 0, 0], R)
    f_a, m_a = aero_wrench(air, x[10:13], SurfaceCommand.from_array(u), prm)
    _, _, _, f_want, m_want = oracle_wrench(x, u, prm)
    np.testing.assert_allclose(f_a, f_want, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(m_a, m_want, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("seed", range(12))
@pytest.mark.parametrize("lost", [False, True])
def test_compiled_dynamics_match_term_by_term_oracle(seed, lost):
    rng = np.random.default_rng(100 + seed)
    prm = FwParams()
    x = random_state(rng)
    u = random_command(rng, prm)
    v_w = rng.normal(size=3)
    got = fw_derivative_array(x, u, prm, v_w, wing_lost=lost)
    np.testing.assert_allclose(got, oracle_derivative(x, u, prm, v_w, lost), rtol=1e-11, atol=1e-11)


def test_batched_dynamics_match_single(rng):
    prm = FwParams()
    X = np.stack([random_state(rng) for _ in range(6)])
    U = np.stack([random_command(rng, prm) for _ in range(6)])
    batch = fw_derivative_array(X, U, prm)
    for i in range(6):
        np.testing.assert_allclose(batch[i], fw_derivative_array(X[i], U[i], prm), atol=1e-13)


def test_wind_force_frame_change():
    np.testing.assert_allclose(wind_force_to_body([-1.0, 2.0, 3.0], 0.0, 0.0), [-1.0, 2.0, -3.0])
    np.testing.assert_array_equal(wind_to_body(0.0, 0.0), np.eye(3))
    np.testing.assert_allclose(wind_to_body(0.3, -0.2), _Ry(0.3) @ _Rz(-0.2), atol=1e-15)


def test_wind_x_axis_is_the_airspeed_direction(rng):
    for _ in range(10):
        va = rng.normal(size=3) + [8, 0, 0]
        air = airflow_state(va, [0, 0, 0], np.eye(3))
        np.testing.assert_allclose(wind_to_body(air.alpha, air.beta)[:, 0], va / np.linalg.norm(va),
                                   atol=1e-12)


# --- dynamics -----------------------------------------------------------------

def test_zero_controls_and_coefficients_fall_ballistically():
    prm = FwParams(table=AeroCoeffTable.default().zero())
    dx = fw_derivative(RigidBodyState.at_rest(), SurfaceCommand(), prm)
    np.testing.assert_array_equal(dx.v_dot, [0, 0, 9.8])


def test_zero_airspeed_stays_finite():
    prm = FwParams()
    x = RigidBodyState.at_rest().to_array()
    x[10:13] = [0.3, -0.2, 0.1]
    dx = fw_derivative_array(x, [0.7, 0.1, -0.1, 0.2, 0.1], prm)
    assert np.all(np.isfinite(dx))


def test_yaw_rotation_equivariance(rng):
    prm = FwParams()
    for _ in range(5):
        x = random_state(rng)
        u = random_command(rng, prm)
        psi = rng.uniform(-math.pi, math.pi)
        Rz = quat_to_rotation(quat_from_euler(0, 0, psi))
        from gcflight.core import quat_multiply
        y = x.copy()
        y[0:3] = Rz @ x[0:3]
        y[3:6] = Rz @ x[3:6]
        y[6:10] = quat_multiply(quat_from_euler(0, 0, psi), x[6:10])
        dx, dy = fw_derivative_array(x, u, prm), fw_derivative_array(y, u, prm)
        np.testing.assert_allclose(dy[3:6], Rz @ dx[3:6], atol=1e-10)
        np.testing.assert_allclose(dy[10:13], dx[10:13], atol=1e-10)


def test_wing_loss_equals_healthy_model_without_left_wing(rng):
    prm = FwParams()
    stripped = FwParams(table=prm.table.without_left_wing())
    for _ in range(5):
        x = random_state(rng)
        u = random_command(rng, prm)
        u0 = u.copy()
        u0[1] = 0.0
        np.testing.assert_allclose(fw_derivative_array(x, u, prm, wing_lost=True),
                                   fw_derivative_array(x, u0, stripped), atol=1e-13)
    assert all(getattr(stripped.table, n) == AffineCoeff() for n in LEFT_WING)


def test_wing_loss_fault_onset():
    f = WingLossFault(1.0)
    assert not f.active(0.999) and f.active(1.0)
    st_ = RigidBodyState.at_rest(v=(15, 0, 0))
    cmd = SurfaceCommand(0.5, 0.3, 0.0, 0.0, 0.0)
    before = fw_derivative(st_, cmd, FwParams(), fault=f, t=0.5).to_array()
    after = fw_derivative(st_, cmd, FwParams(), fault=f, t=1.0).to_array()
    assert not np.allclose(before, after)


def test_realized_force_is_mass_times_non_gravity_acceleration(rng):
    prm = FwParams()
    x = random_state(rng)
    u = random_command(rng, prm)
    dx = fw_derivative_array(x, u, prm)
    np.testing.assert_allclose(fw_realized_force(x, u, prm), prm.m * (dx[3:6] - prm.g), atol=1e-12)


# --- trim -----------------------------------------------------------------------

@pytest.mark.parametrize("speed", ["15.0", "20.0"])
def test_trim_fixture_is_steady(speed):
    fix = TRIM[speed]
    st_ = RigidBodyState(np.zeros(3), np.array([float(speed), 0, 0]),
                         quat_from_euler(0, fix["alpha"], 0), np.zeros(3))
    dx = fw_derivative(st_, SurfaceCommand.from_array(fix["command"]), FwParams())
    assert np.linalg.norm(dx.v_dot) <= 1e-3
    assert np.linalg.norm(dx.omega_dot) <= 1e-3


@pytest.mark.parametrize("speed", ["15.0", "20.0"])
def test_trim_search_reproduces_fixture(speed):
    tr = trim_level_flight(FwParams(), float(speed))
    assert tr.alpha == pytest.approx(TRIM[speed]["alpha"], abs=1e-9)
    np.testing.assert_allclose(tr.command.to_array(), TRIM[speed]["command"], atol=1e-9)
    assert tr.residual <= 1e-9


def test_trim_rejects_speed_needing_reverse_thrust():
    with pytest.raises(DomainError):
        trim_level_flight(FwParams(), 60.0)


def test_command_bounds():
    prm = FwParams()
    SurfaceCommand(1.0, 0.5, -0.5, 0.5, -0.5).validate(prm)
    with pytest.raises(DomainError):
        SurfaceCommand(1.2).validate(prm)


# --- MPC ------------------------------------------------------------------------

GRID = MpcGrid(T=2.0, N=10, substeps=2)


def test_straight_line_at_trim_keeps_trim_command():
    prm = FwParams()
    tr = trim_level_flight(prm)
    res = fw_gcf_mpc(tr.state((0, 0, -100)), line_reference((0, 0, -100), (15, 0, 0)), prm,
                     trim=tr, grid=GRID, options=ShootingOptions(max_iter=10))
    np.testing.assert_allclose(res.schedule[0], tr.command.to_array(), atol=1e-3)
    assert np.all(np.diff(res.trace) <= 0)


def test_thrust_only_vehicle_pushes_throttle_when_nose_is_up():
    prm = FwParams(table=AeroCoeffTable.default().zero())
    st_ = RigidBodyState(np.zeros(3), np.zeros(3), quat_from_euler(0, 0.5, 0), np.zeros(3))
    res = fw_gcf_mpc(st_, hover_reference([0, 0, 0]), prm, grid=GRID,
                     options=ShootingOptions(max_iter=20))
    np.testing.assert_allclose(res.schedule[:, 0], 1.0, atol=1e-6)


def test_thrust_only_vehicle_level_returns_ballistic_cost():
    prm = FwParams(table=AeroCoeffTable.default().zero())
    st_ = RigidBodyState.at_rest()
    ref = hover_reference([0, 0, 0])
    res = fw_gcf_mpc(st_, ref, prm, grid=GRID, options=ShootingOptions(max_iter=20))
    ballistic = fw_mpc_problem(prm, GRID).evaluate(st_.to_array(), np.zeros((1, 10, 5)), 0.0, ref)[0][0]
    assert res.objective == pytest.approx(ballistic, rel=1e-9)


def test_wing_loss_pins_left_aileron():
    prm = FwParams()
    tr = trim_level_flight(prm)
    res = fw_gcf_mpc(tr.state((0, 0, -100)), line_reference((0, 0, -100), (15, 0, 0)), prm,
                     fault=WingLossFault(0.0), trim=tr, grid=GRID, options=ShootingOptions(max_iter=5))
    np.testing.assert_array_equal(res.schedule[:, 1], 0.0)
    assert np.all(res.schedule >= prm.lower) and np.all(res.schedule <= prm.upper)
