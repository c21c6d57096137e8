"""Fixed-wing UAV model: wind-frame aerodynamics split by surface, propeller
thrust with downwash, wing-loss fault and the vehicle-constrained MPC.

Force bookkeeping.  The aerodynamic stack ``f_a = (-D, Y, L)`` is expressed
in the wind frame with lift counted positive *upward*; since the frames are
z-down, it enters the body frame as ``R_a(α, β) diag(1, 1, -1) f_a``.  The
propeller force acts along the body x axis.  The realized earth-frame force is
``f = R(q) (f_p + R_a diag(1, 1, -1) f_a)`` and ``m v̇ = m g + f``.

Every aerodynamic coefficient is an affine function of its arguments:
``(α, q̂)`` for the longitudinal family, ``(β, p̂, r̂)`` for the lateral one,
plus the owning surface's deflection.  Rates are nondimensionalized with
``c/(2V_a)`` or ``b/(2V_a)`` using a floored airspeed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Callable

import numpy as np
from scipy.optimize import fsolve

from .alloc import PDGains
from .constants import DEFAULT_WEIGHTS, GRAVITY, TOL
from .core import DomainError, quat_from_euler
from .quad import MpcGrid, Reference, VehicleMpc
from .shooting import ShootingOptions, ShootingResult, Weights
from .state import P, Q, V, W, RigidBodyState, StateDerivative


# ---------------------------------------------------------------------------
# Coefficient table
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AffineCoeff:
    """``base + slopes · args (+ delta_slope · δ)``."""

    base: float = 0.0
    slopes: tuple = ()
    delta_slope: float = 0.0

    def __call__(self, args, delta=0.0):
        out = self.base + self.delta_slope * np.asarray(delta, dtype=float)
        for k, a in zip(self.slopes, args):
            out = out + k * a
        return out

    def deflection_part(self, delta):
        return self.delta_slope * np.asarray(delta, dtype=float)

    def scaled(self, factor: float) -> "AffineCoeff":
        return AffineCoeff(self.base * factor, tuple(k * factor for k in self.slopes),
                           self.delta_slope * factor)

    def to_dict(self) -> dict:
        return {"base": self.base, "slopes": list(self.slopes), "delta_slope": self.delta_slope}

    @classmethod
    def from_dict(cls, d: dict) -> "AffineCoeff":
        unknown = set(d) - {"base", "slopes", "delta_slope"}
        if unknown:
            raise DomainError(f"unknown coefficient keys: {sorted(unknown)}")
        return cls(float(d.get("base", 0.0)), tuple(float(v) for v in d.get("slopes", ())),
                   float(d.get("delta_slope", 0.0)))


def _pair(base, slopes, delta_slope, mirror_base: bool):
    """Left/right wing entries: deflection slopes opposite (the aileron symmetry);
    the constant part is mirrored for lateral quantities and shared otherwise."""
    left = AffineCoeff(base, tuple(slopes), delta_slope)
    right = AffineCoeff(-base if mirror_base else base, tuple(slopes), -delta_slope)
    return left, right


LEFT_WING = ("drag_wl", "side_wl", "lift_wl", "roll_wl", "pitch_wl", "yaw_wl")
WING_PAIRS = tuple((n, n[:-1] + "r") for n in LEFT_WING)


@dataclass(frozen=True)
class AeroCoeffTable:
    # forces: drag (α, q), side (β, p, r), lift (α, q)
    drag_f: AffineCoeff
    drag_wl: AffineCoeff
    drag_wr: AffineCoeff
    drag_e: AffineCoeff          # downwash, argument δ_e
    side_f: AffineCoeff
    side_wl: AffineCoeff
    side_wr: AffineCoeff
    side_r: AffineCoeff          # downwash, argument δ_r
    lift_f: AffineCoeff
    lift_wl: AffineCoeff
    lift_wr: AffineCoeff
    lift_e: AffineCoeff          # downwash, argument δ_e
    # moments: roll (β, p, r), pitch (α, q), yaw (β, p, r)
    roll_f: AffineCoeff
    roll_wl: AffineCoeff
    roll_wr: AffineCoeff
    roll_r: AffineCoeff
    pitch_f: AffineCoeff
    pitch_wl: AffineCoeff
    pitch_wr: AffineCoeff
    pitch_e: AffineCoeff
    yaw_f: AffineCoeff
    yaw_wl: AffineCoeff
    yaw_wr: AffineCoeff
    yaw_r: AffineCoeff

    @classmethod
    def default(cls) -> "AeroCoeffTable":
        """Desk-scale affine model (artifact values, chosen for a benign trim near 15 m/s)."""
        c = AffineCoeff
        dwl, dwr = _pair(0.008, (0.05, 0.0), 0.0, mirror_base=False)
        ywl, ywr = _pair(0.0, (-0.05, 0.0, 0.0), 0.0, mirror_base=True)
        lwl, lwr = _pair(0.12, (2.1, 2.5), 0.35, mirror_base=False)
        rwl, rwr = _pair(0.03, (-0.02, -0.15, 0.03), 0.15, mirror_base=True)
        mwl, mwr = _pair(0.0, (-0.3, -2.0), 0.0, mirror_base=False)
        nwl, nwr = _pair(0.0, (0.0, -0.02, -0.03), 0.0, mirror_base=True)
        return cls(
            drag_f=c(0.02, (0.08, 0.0)), drag_wl=dwl, drag_wr=dwr, drag_e=c(0.01, (), 0.0),
            side_f=c(0.0, (-0.25, 0.0, 0.0)), side_wl=ywl, side_wr=ywr, side_r=c(0.0, (), 0.12),
            lift_f=c(0.02, (0.3, 0.0)), lift_wl=lwl, lift_wr=lwr, lift_e=c(0.0, (), 0.3),
            roll_f=c(0.0, (-0.02, -0.05, 0.01)), roll_wl=rwl, roll_wr=rwr, roll_r=c(0.0, (), 0.005),
            pitch_f=c(0.0, (-0.8, -10.0)), pitch_wl=mwl, pitch_wr=mwr, pitch_e=c(0.0, (), -1.2),
            yaw_f=c(0.0, (0.08, 0.0, -0.1)), yaw_wl=nwl, yaw_wr=nwr, yaw_r=c(0.0, (), -0.06),
        )

    def zero(self) -> "AeroCoeffTable":
        return type(self)(**{f.name: AffineCoeff() for f in fields(self)})

    def without_left_wing(self) -> "AeroCoeffTable":
        return replace(self, **{n: AffineCoeff() for n in LEFT_WING})

    def symmetry_defects(self, deltas) -> float:
        """Largest |left(δ) + right(δ)| over the deflection parts of all wing pairs."""
        deltas = np.asarray(deltas, dtype=float)
        worst = 0.0
        for ln, rn in WING_PAIRS:
            l, r = getattr(self, ln), getattr(self, rn)
            worst = max(worst, float(np.max(np.abs(l.deflection_part(deltas) + r.deflection_part(deltas)))))
        return worst

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name).to_dict() for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "AeroCoeffTable":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise DomainError(f"unknown coefficient names: {sorted(unknown)}")
        base = cls.default()
        return replace(base, **{k: AffineCoeff.from_dict(v) for k, v in d.items()})


# ---------------------------------------------------------------------------
# Parameters, commands, faults
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FwParams:
    m: float = 1.5
    J: np.ndarray = field(default_factory=lambda: np.diag([0.1, 0.12, 0.2]))
    rho: float = 1.225
    S: float = 0.3
    S_p: float = 0.05
    b: float = 1.4
    c: float = 0.22
    C_p: float = 1.0
    k_m: float = 30.0
    k_Omega: float = 1000.0
    k_Tp: float = 1e-8
    delta_am: float = 0.5
    delta_em: float = 0.5
    delta_rm: float = 0.5
    G: np.ndarray = field(default_factory=lambda: np.zeros(3))
    g: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, GRAVITY]))
    table: AeroCoeffTable = field(default_factory=AeroCoeffTable.default)

    def __post_init__(self):
        J = np.asarray(self.J, dtype=float)
        if J.shape != (3, 3) or not np.allclose(J, J.T) or np.any(np.linalg.eigvalsh(J) <= 0):
            raise DomainError("J must be a symmetric positive-definite 3x3 matrix")
        for name in ("m", "rho", "S", "S_p", "b", "c", "C_p", "k_m", "k_Omega", "k_Tp",
                     "delta_am", "delta_em", "delta_rm"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")
        object.__setattr__(self, "J", J)
        object.__setattr__(self, "G", np.asarray(self.G, dtype=float))
        object.__setattr__(self, "g", np.asarray(self.g, dtype=float))

    @property
    def J_inv(self) -> np.ndarray:
        return np.linalg.inv(self.J)

    @property
    def lower(self) -> np.ndarray:
        return np.array([0.0, -self.delta_am, -self.delta_am, -self.delta_em, -self.delta_rm])

    @property
    def upper(self) -> np.ndarray:
        return np.array([1.0, self.delta_am, self.delta_am, self.delta_em, self.delta_rm])


@dataclass(frozen=True)
class SurfaceCommand:
    delta_t: float = 0.0
    delta_al: float = 0.0
    delta_ar: float = 0.0
    delta_e: float = 0.0
    delta_r: float = 0.0

    def to_array(self) -> np.ndarray:
        return np.array([self.delta_t, self.delta_al, self.delta_ar, self.delta_e, self.delta_r])

    @classmethod
    def from_array(cls, u) -> "SurfaceCommand":
        u = np.asarray(u, dtype=float)
        return cls(*(float(v) for v in u))

    def validate(self, params: FwParams, tol: float = 1e-12) -> None:
        u = self.to_array()
        if np.any(u < params.lower - tol) or np.any(u > params.upper + tol):
            raise DomainError(f"surface command out of bounds: {u}")


@dataclass(frozen=True)
class WingLossFault:
    onset: float = 0.0

    def __post_init__(self):
        if not self.onset >= 0:
            raise DomainError("wing-loss onset must be non-negative")

    def active(self, t: float) -> bool:
        return t >= self.onset


# ---------------------------------------------------------------------------
# Airflow and wrenches
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AirflowState:
    v_a: np.ndarray
    V_a: float
    alpha: float
    beta: float
    degenerate: bool = False


def airflow_state(v, v_w, R) -> AirflowState:
    """Body-frame airspeed, its magnitude, angle of attack and sideslip."""
    v_a = np.asarray(R, float).T @ (np.asarray(v, float) - np.asarray(v_w, float))
    V_a = float(np.linalg.norm(v_a))
    if V_a < TOL.airspeed_floor:
        return AirflowState(v_a, V_a, 0.0, 0.0, True)
    alpha = math.atan2(v_a[2], v_a[0])
    beta = math.asin(max(-1.0, min(1.0, v_a[1] / V_a)))
    return AirflowState(v_a, V_a, alpha, beta, False)


def downwash_speed(delta_t, k_m: float):
    return k_m * np.asarray(delta_t, dtype=float)


def propeller_wrench(delta_t, V_a, params: FwParams):
    """Propeller force and torque along the body x axis."""
    V_e = downwash_speed(delta_t, params.k_m)
    fx = 0.5 * params.rho * params.S_p * params.C_p * (V_e ** 2 - np.asarray(V_a, float) ** 2)
    mx = -params.k_Tp * (params.k_Omega * np.asarray(delta_t, float)) ** 2
    z = np.zeros_like(fx)
    return np.stack([fx, z, z], axis=-1), np.stack([mx, z, z], axis=-1)


def _aero(alpha, beta, p_hat, q_hat, r_hat, V_a, V_e, u, tab: AeroCoeffTable, params: FwParams):
    """Printed force/moment stacks (broadcast over arrays).  ``u`` is indexable
    as ``(δ_t, δ_al, δ_ar, δ_e, δ_r)``."""
    d_al, d_ar, d_e, d_r = u[1], u[2], u[3], u[4]
    lon = (alpha, q_hat)
    lat = (beta, p_hat, r_hat)
    qa = 0.5 * params.rho * V_a * V_a * params.S
    qe = 0.5 * params.rho * V_e * V_e * params.S
    b, c = params.b, params.c
    drag = -qa * (tab.drag_f(lon) + tab.drag_wl(lon, d_al) + tab.drag_wr(lon, d_ar)) - qe * tab.drag_e((), d_e)
    side = qa * b * (tab.side_f(lat) + tab.side_wl(lat, d_al) + tab.side_wr(lat, d_ar)) + qe * b * tab.side_r((), d_r)
    lift = qa * (tab.lift_f(lon) + tab.lift_wl(lon, d_al) + tab.lift_wr(lon, d_ar)) + qe * tab.lift_e((), d_e)
    roll = qa * b * (tab.roll_f(lat) + tab.roll_wl(lat, d_al) + tab.roll_wr(lat, d_ar)) + qe * b * tab.roll_r((), d_r)
    pitch = qa * c * (tab.pitch_f(lon) + tab.pitch_wl(lon, d_al) + tab.pitch_wr(lon, d_ar)) + qe * c * tab.pitch_e((), d_e)
    yaw = qa * b * (tab.yaw_f(lat) + tab.yaw_wl(lat, d_al) + tab.yaw_wr(lat, d_ar)) + qe * b * tab.yaw_r((), d_r)
    return (drag, side, lift), (roll, pitch, yaw)


def _nondim_rates(omega, V_a, params: FwParams):
    V = np.maximum(V_a, TOL.rate_nondim_floor)
    return (omega[0] * params.b / (2.0 * V), omega[1] * params.c / (2.0 * V),
            omega[2] * params.b / (2.0 * V))


def aero_wrench(airflow: AirflowState, rates, cmd: SurfaceCommand, params: FwParams,
                wing_lost: bool = False, table: AeroCoeffTable | None = None):
    """Aerodynamic force stack ``(-D, Y, L)`` (wind frame, lift up) and body moments.

    Degenerate airflow keeps only the downwash-driven terms (the airflow
    terms already vanish with ``V_a²``).
    """
    tab = params.table if table is None else table
    u = cmd.to_array()
    if wing_lost:
        tab = tab.without_left_wing()
        u[1] = 0.0
    rates = np.asarray(rates, dtype=float)
    p_hat, q_hat, r_hat = _nondim_rates(rates, airflow.V_a, params)
    V_e = float(downwash_speed(u[0], params.k_m))
    f, m = _aero(airflow.alpha, airflow.beta, p_hat, q_hat, r_hat, airflow.V_a, V_e, u, tab, params)
    return np.array([float(v) for v in f]), np.array([float(v) for v in m])


def wind_force_to_body(f_a, alpha, beta) -> np.ndarray:
    """``R_a(α, β) diag(1, 1, -1) f_a``, broadcast over leading axes."""
    from .core import wind_to_body
    Ra = wind_to_body(alpha, beta)
    f = np.asarray(f_a, dtype=float) * np.array([1.0, 1.0, -1.0])
    return np.einsum("...ij,...j->...i", Ra, f)


# ---------------------------------------------------------------------------
# Dynamics
# ---------------------------------------------------------------------------

_LON, _LAT = (1, 2), (3, 4, 5)          # feature rows of (α, q̂) and (β, p̂, r̂)
_ROWS = (("drag", _LON, "e", 8), ("side", _LAT, "r", 9), ("lift", _LON, "e", 8),
         ("roll", _LAT, "r", 9), ("pitch", _LON, "e", 8), ("yaw", _LAT, "r", 9))


def compile_table(tab: AeroCoeffTable) -> tuple[np.ndarray, np.ndarray]:
    """Stack the table into matrices acting on the feature vector
    ``(1, α, q̂, β, p̂, r̂, δ_al, δ_ar, δ_e, δ_r)``.

    Returns ``(A, E)``: rows (drag, side, lift, roll, pitch, yaw) of the summed
    airflow coefficients and of the downwash coefficients respectively.
    """
    A = np.zeros((6, 10))
    E = np.zeros((6, 10))
    for i, (name, args, tail, drow) in enumerate(_ROWS):
        for part, drow_w in (("f", None), ("wl", 6), ("wr", 7)):
            co = getattr(tab, f"{name}_{part}")
            A[i, 0] += co.base
            for j, k in zip(args, co.slopes):
                A[i, j] += k
            if drow_w is not None:
                A[i, drow_w] += co.delta_slope
        co = getattr(tab, f"{name}_{tail}")
        E[i, 0] += co.base
        E[i, drow] += co.delta_slope
    return A, E


class _FwKernel:
    """Component-first fixed-wing dynamics: states ``(13, B)``, controls ``(5, B)``."""

    def __init__(self, params: FwParams, v_w=(0.0, 0.0, 0.0), wing_lost: bool = False):
        self.params = params
        self.tab = params.table.without_left_wing() if wing_lost else params.table
        self.A, self.E = compile_table(self.tab)
        prm = params
        # per-row reference lengths and the drag sign
        self.scale = np.array([-1.0, prm.b, 1.0, prm.b, prm.c, prm.b])[:, None]
        self.wing_lost = wing_lost
        self.v_w = np.asarray(v_w, dtype=float)
        self.J = params.J
        self.J_inv = params.J_inv
        self.inv_m = 1.0 / params.m
        self.k_prop = 0.5 * prm.rho * prm.S_p * prm.C_p
        self.k_torque = prm.k_Tp * prm.k_Omega ** 2
        self.half_rho_S = 0.5 * prm.rho * prm.S

    def wrench(self, ut: np.ndarray) -> np.ndarray:
        if self.wing_lost:
            ut = ut.copy()
            ut[1] = 0.0
        return ut

    @staticmethod
    def _rot(xt):
        qw, qx, qy, qz = xt[6], xt[7], xt[8], xt[9]
        R = np.empty((3, 3) + qw.shape)
        R[0, 0] = 1 - 2 * (qy * qy + qz * qz)
        R[0, 1] = 2 * (qx * qy - qw * qz)
        R[0, 2] = 2 * (qx * qz + qw * qy)
        R[1, 0] = 2 * (qx * qy + qw * qz)
        R[1, 1] = 1 - 2 * (qx * qx + qz * qz)
        R[1, 2] = 2 * (qy * qz - qw * qx)
        R[2, 0] = 2 * (qx * qz - qw * qy)
        R[2, 1] = 2 * (qy * qz + qw * qx)
        R[2, 2] = 1 - 2 * (qx * qx + qy * qy)
        return R

    def _body_wrench(self, xt, ut):
        """Body force and total body moment (propeller + aerodynamic)."""
        prm = self.params
        R = self._rot(xt)
        rel = xt[3:6] - self.v_w[:, None]
        va = (R * rel[:, None]).sum(axis=0)                   # Rᵀ (v − v_w)
        V2 = (va * va).sum(axis=0)
        V_a = np.sqrt(V2)
        ok = V_a >= TOL.airspeed_floor
        alpha = np.where(ok, np.arctan2(va[2], va[0]), 0.0)
        beta = np.where(ok, np.arcsin(np.clip(va[1] / np.where(ok, V_a, 1.0), -1.0, 1.0)), 0.0)
        Vn = np.maximum(V_a, TOL.rate_nondim_floor)
        phi = np.empty((10,) + V_a.shape)
        phi[0] = 1.0
        phi[1] = alpha
        phi[2] = xt[11] * (prm.c / 2.0) / Vn
        phi[3] = beta
        phi[4] = xt[10] * (prm.b / 2.0) / Vn
        phi[5] = xt[12] * (prm.b / 2.0) / Vn
        phi[6:10] = ut[1:5]
        V_e = prm.k_m * ut[0]
        Ve2 = V_e * V_e
        gen = self.scale * self.half_rho_S * (V2 * (self.A @ phi) + Ve2 * (self.E @ phi))
        drag, side, L = gen[0], gen[1], -gen[2]
        ca, sa, cb, sb = np.cos(alpha), np.sin(alpha), np.cos(beta), np.sin(beta)
        # R_a · (drag, side, -lift)
        fb = np.empty((3,) + V_a.shape)
        fb[0] = ca * cb * drag - ca * sb * side - sa * L + self.k_prop * (Ve2 - V2)
        fb[1] = sb * drag + cb * side
        fb[2] = sa * cb * drag - sa * sb * side + ca * L
        mb = gen[3:6].copy()
        mb[0] -= self.k_torque * ut[0] * ut[0]
        return R, fb, mb

    def rhs(self, xt, ut):
        R, fb, mb = self._body_wrench(xt, ut)
        dx = np.empty_like(xt)
        dx[0:3] = xt[3:6]
        dx[3:6] = self.params.g[:, None] + self.inv_m * (R * fb[None]).sum(axis=1)
        qw, qx, qy, qz = xt[6], xt[7], xt[8], xt[9]
        wx, wy, wz = xt[10], xt[11], xt[12]
        dx[6] = -0.5 * (qx * wx + qy * wy + qz * wz)
        dx[7] = 0.5 * (qw * wx + qy * wz - qz * wy)
        dx[8] = 0.5 * (qw * wy - qx * wz + qz * wx)
        dx[9] = 0.5 * (qw * wz + qx * wy - qy * wx)
        J = self.J
        jx = J[0, 0] * wx + J[0, 1] * wy + J[0, 2] * wz
        jy = J[1, 0] * wx + J[1, 1] * wy + J[1, 2] * wz
        jz = J[2, 0] * wx + J[2, 1] * wy + J[2, 2] * wz
        G = self.params.G
        mx = G[0] + mb[0] - (wy * jz - wz * jy)
        my = G[1] + mb[1] - (wz * jx - wx * jz)
        mz = G[2] + mb[2] - (wx * jy - wy * jx)
        Ji = self.J_inv
        dx[10] = Ji[0, 0] * mx + Ji[0, 1] * my + Ji[0, 2] * mz
        dx[11] = Ji[1, 0] * mx + Ji[1, 1] * my + Ji[1, 2] * mz
        dx[12] = Ji[2, 0] * mx + Ji[2, 1] * my + Ji[2, 2] * mz
        return dx

    def force(self, xt, ut):
        R, fb, _ = self._body_wrench(xt, ut)
        return (R * fb[None]).sum(axis=1)


def fw_derivative_array(x, u, params: FwParams, v_w=(0.0, 0.0, 0.0), wing_lost: bool = False):
    """Batched flat-state derivative, ``x (..., 13)``, ``u (..., 5)``."""
    x = np.asarray(x, dtype=float)
    u = np.broadcast_to(np.asarray(u, dtype=float), x.shape[:-1] + (5,))
    kernel = _FwKernel(params, v_w, wing_lost)
    xt = np.moveaxis(x, -1, 0).reshape(13, -1)
    ut = kernel.wrench(np.moveaxis(u, -1, 0).reshape(5, -1))
    dx = kernel.rhs(xt, ut)
    return np.moveaxis(dx.reshape((13,) + x.shape[:-1]), 0, -1)


def fw_derivative(state: RigidBodyState, cmd: SurfaceCommand, params: FwParams,
                  v_w=(0.0, 0.0, 0.0), fault: WingLossFault | None = None,
                  t: float = 0.0) -> StateDerivative:
    lost = fault is not None and fault.active(t)
    dx = fw_derivative_array(state.to_array(), cmd.to_array(), params, v_w, lost)
    return StateDerivative.from_array(dx)


def fw_realized_force(x, u, params: FwParams, v_w=(0.0, 0.0, 0.0), wing_lost: bool = False):
    """Earth-frame aerodynamic plus propeller force (N), batched."""
    x = np.asarray(x, dtype=float)
    u = np.broadcast_to(np.asarray(u, dtype=float), x.shape[:-1] + (5,))
    kernel = _FwKernel(params, v_w, wing_lost)
    xt = np.moveaxis(x, -1, 0).reshape(13, -1)
    f = kernel.force(xt, kernel.wrench(np.moveaxis(u, -1, 0).reshape(5, -1)))
    return np.moveaxis(f.reshape((3,) + x.shape[:-1]), 0, -1)


# ---------------------------------------------------------------------------
# Trim
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrimPoint:
    airspeed: float
    alpha: float
    command: SurfaceCommand
    residual: float

    def state(self, p=(0.0, 0.0, -100.0)) -> RigidBodyState:
        q = quat_from_euler(0.0, self.alpha, 0.0)
        return RigidBodyState(p=np.asarray(p, float), v=np.array([self.airspeed, 0.0, 0.0]),
                              q=q, omega=np.zeros(3))


def trim_level_flight(params: FwParams, airspeed: float = 15.0) -> TrimPoint:
    """Wings-level straight flight: unknowns pitch (= α), throttle, elevator
    and an antisymmetric aileron pair cancelling the propeller torque."""

    def residual(z):
        alpha, dt, de, da = z
        st = TrimPoint(airspeed, alpha, SurfaceCommand(), 0.0).state((0.0, 0.0, 0.0))
        u = np.array([dt, da, -da, de, 0.0])
        dx = fw_derivative_array(st.to_array(), u, params)
        return [dx[3], dx[5], dx[11], dx[10]]

    sol, info, ier, msg = fsolve(residual, [0.05, 0.5, 0.0, 0.0], full_output=True, xtol=1e-13)
    worst = float(np.max(np.abs(residual(sol))))
    if not worst <= 1e-9:
        raise DomainError(f"trim search failed (residual {worst:.3g}): {msg}")
    alpha, dt, de, da = (float(v) for v in sol)
    cmd = SurfaceCommand(dt, da, -da, de, 0.0)
    cmd.validate(params)
    return TrimPoint(airspeed, alpha, cmd, worst)


# ---------------------------------------------------------------------------
# MPC
# ---------------------------------------------------------------------------

def line_reference(p0, velocity) -> Reference:
    """Straight-line reference ``p_d(t) = p0 + velocity·t``."""
    p0 = np.asarray(p0, dtype=float)
    vel = np.asarray(velocity, dtype=float)

    def ref(t):
        t = np.asarray(t, dtype=float)
        return p0 + t[..., None] * vel, np.broadcast_to(vel, t.shape + (3,)).copy()
    return ref


def fw_mpc_problem(params: FwParams, grid: MpcGrid = MpcGrid(),
                   weights: Weights = Weights(*DEFAULT_WEIGHTS),
                   gains: PDGains = PDGains(0.5, 1.0), viewpoint: str = "impulse",
                   v_w=(0.0, 0.0, 0.0), wing_lost: bool = False, d=None,
                   options: ShootingOptions = ShootingOptions()) -> VehicleMpc:
    return VehicleMpc(kernel=_FwKernel(params, v_w, wing_lost), m=params.m, g=params.g,
                      lower=params.lower, upper=params.upper, grid=grid, weights=weights,
                      gains=gains, viewpoint=viewpoint,
                      d=None if d is None else np.asarray(d, float), options=options)


def fw_gcf_mpc(state: RigidBodyState | np.ndarray, reference: Reference, params: FwParams,
               fault: WingLossFault | None = None, grid: MpcGrid = MpcGrid(),
               weights: Weights = Weights(*DEFAULT_WEIGHTS), t0: float = 0.0,
               warm: np.ndarray | None = None, trim: TrimPoint | None = None,
               gains: PDGains = PDGains(0.5, 1.0), viewpoint: str = "impulse",
               v_w=(0.0, 0.0, 0.0), d=None,
               options: ShootingOptions = ShootingOptions()) -> ShootingResult:
    """Optimize a per-node surface schedule ``(N, 5)`` by single shooting.

    A wing-loss fault active at ``t0`` removes the left-wing coefficients from
    the prediction model and pins ``δ_al`` to zero at every node.  Starts: warm
    (if given), the trim command, and full throttle with neutral surfaces.
    """
    x0 = state.to_array() if isinstance(state, RigidBodyState) else np.asarray(state, float)
    lost = fault is not None and fault.active(t0)
    mpc = fw_mpc_problem(params, grid, weights, gains, viewpoint, v_w, lost, d, options)
    N = grid.N
    pinned = None
    if fault is not None:
        mask = np.array([False, True, False, False, False])
        pinned = lambda t: mask if fault.active(t) else np.zeros(5, dtype=bool)
    trim_u = (trim.command.to_array() if trim is not None
              else np.array([0.5, 0.0, 0.0, 0.0, 0.0]))
    starts = []
    if warm is not None:
        starts.append(("warm", np.asarray(warm, float).reshape(N, 5)))
    starts.append(("trim", np.tile(trim_u, (N, 1))))
    starts.append(("max", np.tile([1.0, 0.0, 0.0, 0.0, 0.0], (N, 1))))
    return mpc.solve(x0, t0, reference, starts, pinned)
