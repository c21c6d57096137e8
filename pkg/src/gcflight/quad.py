"""Quadcopter model: thrust mixer, rigid-body dynamics, motor faults and the
vehicle-constrained gravity-compensation-first MPC.

Motor thrusts act along the body ``-z`` axis; with the earth z-axis pointing
down, the realized force on the vehicle is ``f = -(ΣT) R(q) e3``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import lsq_linear

from .alloc import PDGains
from .constants import DEFAULT_WEIGHTS, GRAVITY
from .core import (DomainError, quat_kinematics, rotation_matrices, rotation_to_quat)
from .shooting import ShootingOptions, ShootingResult, Weights, gcf_split, spg_minimize
from .state import P, Q, V, W, RigidBodyState, StateDerivative, rk4_step

MIXER_LAYOUTS = ("printed", "x")


@dataclass(frozen=True)
class QuadParams:
    m: float = 1.0
    J: np.ndarray = field(default_factory=lambda: np.diag([0.01, 0.01, 0.02]))
    d_arm: float = 0.2
    torque_ratio: float = 0.02
    T_m: float = 6.0
    G: np.ndarray = field(default_factory=lambda: np.zeros(3))
    g: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, GRAVITY]))
    mixer_layout: str = "printed"

    def __post_init__(self):
        J = np.asarray(self.J, dtype=float)
        if J.shape != (3, 3) or not np.allclose(J, J.T) or np.any(np.linalg.eigvalsh(J) <= 0):
            raise DomainError("J must be a symmetric positive-definite 3x3 matrix")
        for name in ("m", "d_arm", "torque_ratio", "T_m"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")
        if self.mixer_layout not in MIXER_LAYOUTS:
            raise DomainError(f"mixer_layout must be one of {MIXER_LAYOUTS}")
        object.__setattr__(self, "J", J)
        object.__setattr__(self, "G", np.asarray(self.G, dtype=float))
        object.__setattr__(self, "g", np.asarray(self.g, dtype=float))

    @property
    def J_inv(self) -> np.ndarray:
        return np.linalg.inv(self.J)


@dataclass(frozen=True)
class MotorFault:
    motor: int = 1
    onset: float = 0.0

    def __post_init__(self):
        if self.motor not in (1, 2, 3, 4):
            raise DomainError(f"motor index must be 1..4, got {self.motor}")
        if not self.onset >= 0:
            raise DomainError("fault onset must be non-negative")

    def active(self, t: float) -> bool:
        return t >= self.onset


def mixer_matrix(params: QuadParams) -> np.ndarray:
    """H mapping (T1..T4) to (f, τx, τy, τz).

    ``"printed"`` is the literal reference layout, whose roll and yaw rows
    are proportional (rank 3).  ``"x"`` is the conventional X layout with
    diagonal motors sharing a spin direction, which is invertible.
    """
    s = math.sqrt(2.0) / 2.0 * params.d_arm
    k = params.torque_ratio
    yaw = [k, -k, k, -k] if params.mixer_layout == "printed" else [k, -k, -k, k]
    return np.array([
        [1.0, 1.0, 1.0, 1.0],
        [s, -s, s, -s],
        [s, s, -s, -s],
        yaw,
    ])


def mixer_forward(T, params: QuadParams) -> tuple[float, np.ndarray]:
    w = mixer_matrix(params) @ np.asarray(T, dtype=float)
    return float(w[0]), w[1:].copy()


def mixer_inverse(f: float, tau, params: QuadParams) -> np.ndarray:
    """Thrusts reproducing (f, τ); least-squares (minimum-norm) when H is singular."""
    w = np.concatenate([[f], np.asarray(tau, dtype=float)])
    return np.linalg.pinv(mixer_matrix(params)) @ w if params.mixer_layout == "printed" \
        else np.linalg.solve(mixer_matrix(params), w)


def allocate_thrusts(f: float, tau, params: QuadParams, fault: MotorFault | None = None,
                     t: float = 0.0) -> np.ndarray:
    """Bounded thrusts closest (least squares) to the wrench (f, τ), honoring a fault."""
    H = mixer_matrix(params)
    target = np.concatenate([[f], np.asarray(tau, dtype=float)])
    lo = np.zeros(4)
    hi = np.full(4, params.T_m)
    if fault is not None and fault.active(t):
        hi[fault.motor - 1] = 0.0
    # force first: scale the torque rows down so thrust magnitude dominates the fit
    rows = np.array([10.0, 1.0, 1.0, 0.1])
    free = hi > 0
    res = lsq_linear(rows[:, None] * H[:, free], rows * target,
                     bounds=(lo[free], hi[free]), method="bvls")
    T = np.zeros(4)
    T[free] = np.clip(res.x, lo[free], hi[free])
    return T


def apply_motor_fault(T, fault: MotorFault | None, t: float) -> np.ndarray:
    T = np.array(T, dtype=float)
    if fault is not None and fault.active(t):
        T[..., fault.motor - 1] = 0.0
    return T


def quad_derivative_array(x: np.ndarray, T: np.ndarray, params: QuadParams) -> np.ndarray:
    """Batched flat-state derivative; ``x`` is ``(..., 13)``, ``T`` is ``(..., 4)``."""
    x = np.asarray(x, dtype=float)
    T = np.broadcast_to(np.asarray(T, dtype=float), x.shape[:-1] + (4,))
    kernel = _QuadKernel(params)
    xt = np.moveaxis(x, -1, 0)
    return np.moveaxis(kernel.rhs(xt, kernel.wrench(np.moveaxis(T, -1, 0))), 0, -1)


class _QuadKernel:
    """Component-first kernels: states are ``(13, B)`` and controls ``(4, B)``,
    so every row slice is contiguous."""

    def __init__(self, params: QuadParams):
        self.H = mixer_matrix(params)
        self.J = params.J
        self.J_inv = params.J_inv
        self.G = params.G
        self.g = params.g
        self.inv_m = 1.0 / params.m

    def wrench(self, ut: np.ndarray) -> np.ndarray:
        return np.tensordot(self.H, ut, axes=1)

    def rhs(self, xt: np.ndarray, wrench: np.ndarray) -> np.ndarray:
        qw, qx, qy, qz = xt[6], xt[7], xt[8], xt[9]
        wx, wy, wz = xt[10], xt[11], xt[12]
        dx = np.empty_like(xt)
        dx[0:3] = xt[3:6]
        s = wrench[0] * self.inv_m
        # third column of R(q)
        dx[3] = self.g[0] - s * 2.0 * (qx * qz + qw * qy)
        dx[4] = self.g[1] - s * 2.0 * (qy * qz - qw * qx)
        dx[5] = self.g[2] - s * (1.0 - 2.0 * (qx * qx + qy * qy))
        dx[6] = -0.5 * (qx * wx + qy * wy + qz * wz)
        dx[7] = 0.5 * (qw * wx + qy * wz - qz * wy)
        dx[8] = 0.5 * (qw * wy - qx * wz + qz * wx)
        dx[9] = 0.5 * (qw * wz + qx * wy - qy * wx)
        J = self.J
        jx = J[0, 0] * wx + J[0, 1] * wy + J[0, 2] * wz
        jy = J[1, 0] * wx + J[1, 1] * wy + J[1, 2] * wz
        jz = J[2, 0] * wx + J[2, 1] * wy + J[2, 2] * wz
        mx = self.G[0] + wrench[1] - (wy * jz - wz * jy)
        my = self.G[1] + wrench[2] - (wz * jx - wx * jz)
        mz = self.G[2] + wrench[3] - (wx * jy - wy * jx)
        Ji = self.J_inv
        dx[10] = Ji[0, 0] * mx + Ji[0, 1] * my + Ji[0, 2] * mz
        dx[11] = Ji[1, 0] * mx + Ji[1, 1] * my + Ji[1, 2] * mz
        dx[12] = Ji[2, 0] * mx + Ji[2, 1] * my + Ji[2, 2] * mz
        return dx

    def force(self, xt: np.ndarray, wrench: np.ndarray) -> np.ndarray:
        """Realized earth-frame force ``(3, B)``."""
        qw, qx, qy, qz = xt[6], xt[7], xt[8], xt[9]
        f = wrench[0]
        return -np.stack([f * 2.0 * (qx * qz + qw * qy), f * 2.0 * (qy * qz - qw * qx),
                          f * (1.0 - 2.0 * (qx * qx + qy * qy))])


def quad_derivative(state: RigidBodyState, T, params: QuadParams) -> StateDerivative:
    dx = quad_derivative_array(state.to_array(), np.asarray(T, dtype=float), params)
    return StateDerivative.from_array(dx)


def realized_force(x: np.ndarray, T: np.ndarray, params: QuadParams | None = None) -> np.ndarray:
    """f = -(ΣT) R(q) e3 in the earth frame (batched over leading axes)."""
    f = np.sum(T, axis=-1)
    qw, qx, qy, qz = x[..., 6], x[..., 7], x[..., 8], x[..., 9]
    col = np.stack([2.0 * (qx * qz + qw * qy), 2.0 * (qy * qz - qw * qx),
                    1.0 - 2.0 * (qx * qx + qy * qy)], axis=-1)
    return -f[..., None] * col


# ---------------------------------------------------------------------------
# Static cascade (used as the static-allocation controller and as MPC seed)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AttitudeGains:
    k_q: float = 60.0     # rad/s² per rad of attitude error (per unit inertia)
    k_w: float = 14.0     # per rad/s of rate error


def attitude_torque(x: np.ndarray, f_cmd: np.ndarray, params: QuadParams,
                    gains: AttitudeGains = AttitudeGains()) -> tuple[float, np.ndarray]:
    """Thrust magnitude and body torque that turn the body -z axis toward ``f_cmd``."""
    mag = float(np.linalg.norm(f_cmd))
    R = rotation_matrices(x[Q])
    if mag < 1e-9:
        z_des = R[:, 2]
    else:
        z_des = -f_cmd / mag
    # keep the current heading; build R_des with third column z_des
    x_c = R[:, 0]
    y_des = np.cross(z_des, x_c)
    ny = np.linalg.norm(y_des)
    y_des = R[:, 1] if ny < 1e-9 else y_des / ny
    x_des = np.cross(y_des, z_des)
    R_des = np.column_stack([x_des, y_des, z_des])
    E = 0.5 * (R_des.T @ R - R.T @ R_des)
    e_R = np.array([E[2, 1], E[0, 2], E[1, 0]])
    omega = x[W]
    alpha = -gains.k_q * e_R - gains.k_w * omega
    tau = params.J @ alpha + np.cross(omega, params.J @ omega) - params.G
    # thrust along the current body axis that best realizes f_cmd
    thrust = max(0.0, float(-f_cmd @ R[:, 2]))
    return thrust, tau


def static_alloc_command(x: np.ndarray, t: float, a_d: np.ndarray, params: QuadParams,
                         fault: MotorFault | None = None, d=None):
    """One cascade step: allocation, attitude PD, bounded mixer inversion.

    Returns ``(T, allocation)``.
    """
    from .alloc import AllocProblem, solve_lexicographic
    from .core import Ball
    usable = 4 if fault is None or not fault.active(t) else 3
    prob = AllocProblem(m=params.m, a_d=a_d, F=Ball(usable * params.T_m), g=params.g, d=d)
    alloc = solve_lexicographic(prob)
    thrust, tau = attitude_torque(x, alloc.f_d, params)
    T = allocate_thrusts(thrust, tau, params, fault, t)
    return T, alloc


def hover_thrusts(params: QuadParams, fault: MotorFault | None = None, t: float = 0.0) -> np.ndarray:
    return allocate_thrusts(params.m * float(np.linalg.norm(params.g)), np.zeros(3), params, fault, t)


# ---------------------------------------------------------------------------
# Vehicle-constrained MPC
# ---------------------------------------------------------------------------

Reference = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]


def hover_reference(p_d) -> Reference:
    p_d = np.asarray(p_d, dtype=float)

    def ref(t):
        t = np.asarray(t, dtype=float)
        shape = t.shape + (3,)
        return np.broadcast_to(p_d, shape).copy(), np.zeros(shape)
    return ref


@dataclass(frozen=True)
class MpcGrid:
    T: float = 2.0
    N: int = 20
    substeps: int = 2

    def __post_init__(self):
        if not (self.T > 0 and self.N >= 2 and self.substeps >= 1):
            raise DomainError("MPC grid needs T > 0, N >= 2, substeps >= 1")

    @property
    def dt(self) -> float:
        return self.T / self.N


def rollout_forces(x0: np.ndarray, U: np.ndarray, kernel, grid: MpcGrid):
    """Roll a batch of schedules ``U (B, N, K)`` from ``x0``.

    ``kernel`` supplies ``wrench(u_t)``, ``rhs(x_t, wrench)`` and
    ``force(x_t, wrench)`` on component-first arrays.  Returns node-start
    states ``(B, N, 13)`` and node-mean realized forces ``(B, N, 3)``
    (averaged over the sub-step start points, i.e. the impulse of the held
    command divided by the node length).
    """
    B, N, _ = U.shape
    h = grid.dt / grid.substeps
    xt = np.repeat(np.asarray(x0, float)[:, None], B, axis=1)
    states = np.empty((N, x0.size, B))
    forces = np.zeros((N, 3, B))
    for k in range(N):
        wr = kernel.wrench(np.ascontiguousarray(U[:, k, :].T))
        states[k] = xt
        for _ in range(grid.substeps):
            forces[k] += kernel.force(xt, wr)
            k1 = kernel.rhs(xt, wr)
            k2 = kernel.rhs(xt + 0.5 * h * k1, wr)
            k3 = kernel.rhs(xt + 0.5 * h * k2, wr)
            k4 = kernel.rhs(xt + h * k3, wr)
            xt = xt + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            xt[6:10] /= np.sqrt(np.sum(xt[6:10] ** 2, axis=0))
    forces /= grid.substeps
    return np.transpose(states, (2, 0, 1)), np.transpose(forces, (2, 0, 1))


def _targets(states, times, ref: Reference, gains: PDGains, m, g, d):
    p_d, v_d = ref(times)
    a_d = -gains.k_p * (states[..., P] - p_d) - gains.k_d * (states[..., V] - v_d)
    a = np.broadcast_to(m * g, a_d.shape).copy()
    b = m * a_d
    if d is not None:
        gg = float(g @ g)
        d_g = (float(g @ d) / gg) * g
        a = a + d_g
        b = b - (d - d_g)
    return a, b


@dataclass
class VehicleMpc:
    """Shared driver: schedule bounds, rollout, cost and restarts."""

    kernel: object
    m: float
    g: np.ndarray
    lower: np.ndarray          # (K,)
    upper: np.ndarray          # (K,)
    grid: MpcGrid
    weights: Weights
    gains: PDGains
    viewpoint: str = "impulse"
    d: np.ndarray | None = None
    options: ShootingOptions = ShootingOptions()

    def bounds(self, t0: float, pinned: Callable[[float], np.ndarray] | None):
        N, K = self.grid.N, self.lower.size
        lo = np.tile(self.lower, (N, 1))
        hi = np.tile(self.upper, (N, 1))
        free = np.ones((N, K), dtype=bool)
        if pinned is not None:
            for k in range(N):
                mask = pinned(t0 + k * self.grid.dt)
                lo[k, mask] = 0.0
                hi[k, mask] = 0.0
                free[k, mask] = False
        return lo, hi, free

    def evaluate(self, x0, U, t0, ref):
        with np.errstate(all="ignore"):
            return self._evaluate(x0, U, t0, ref)

    def _evaluate(self, x0, U, t0, ref):
        states, forces = rollout_forces(x0, U, self.kernel, self.grid)
        times = t0 + self.grid.dt * np.arange(self.grid.N)
        a, b = _targets(states, times, ref, self.gains, self.m, self.g, self.d)
        B = U.shape[0]
        if self.viewpoint == "energy":
            w = np.maximum(states[..., V][..., 2], 0.0) * self.grid.dt
        else:
            w = np.full((B, self.grid.N), self.grid.dt)
        cost, X, terms = gcf_split(forces, a, b, w, self.weights, self.viewpoint)
        # a diverged rollout is simply an unacceptable candidate
        cost = np.where(np.isfinite(cost), cost, np.inf)
        return cost, X, terms, forces, w

    def solve(self, x0, t0, ref, starts, pinned=None) -> ShootingResult:
        N, K = self.grid.N, self.lower.size
        lo, hi, free = self.bounds(t0, pinned)

        def cost(batch):
            return self.evaluate(x0, batch.reshape(-1, N, K), t0, ref)[0]

        # rank all starts in one batched rollout; refine only the best
        # (ties go to the earlier start)
        names = [name for name, _ in starts]
        U0 = np.clip(np.stack([np.asarray(u, float).reshape(N, K) for _, u in starts]), lo, hi)
        c0 = cost(U0.reshape(len(starts), -1))
        j = 0
        for i in range(1, len(starts)):
            if c0[i] < c0[j] - 1e-12 * (1.0 + abs(c0[j])):
                j = i
        u, fu, trace, iters, ok = spg_minimize(cost, U0[j].ravel(), lo.ravel(), hi.ravel(),
                                               free.ravel(), self.options)
        name = names[j]
        U = u.reshape(N, K)
        _, X, terms, forces, w = self.evaluate(x0, U[None], t0, ref)
        tot = float(np.sum(w[0]))
        f_g = np.tile(X[0] / tot, (N, 1)) if tot > 0 else np.zeros((N, 3))
        return ShootingResult(schedule=U, objective=float(fu), iterations=iters, converged=ok,
                              trace=list(trace), f=forces[0], f_g=f_g, f_t=f_g + forces[0],
                              terms=tuple(float(v) for v in terms[0]), start=name)


def quad_mpc_problem(params: QuadParams, grid: MpcGrid = MpcGrid(),
                     weights: Weights = Weights(*DEFAULT_WEIGHTS),
                     gains: PDGains = PDGains(2.0, 3.0), viewpoint: str = "impulse",
                     d=None, options: ShootingOptions = ShootingOptions()) -> VehicleMpc:
    return VehicleMpc(
        kernel=_QuadKernel(params),
        m=params.m, g=params.g, lower=np.zeros(4), upper=np.full(4, params.T_m),
        grid=grid, weights=weights, gains=gains, viewpoint=viewpoint,
        d=None if d is None else np.asarray(d, float), options=options)


def quad_gcf_mpc(state: RigidBodyState | np.ndarray, reference: Reference, params: QuadParams,
                 fault: MotorFault | None = None, grid: MpcGrid = MpcGrid(),
                 weights: Weights = Weights(*DEFAULT_WEIGHTS), t0: float = 0.0,
                 warm: np.ndarray | None = None, gains: PDGains = PDGains(2.0, 3.0),
                 viewpoint: str = "impulse", d=None,
                 options: ShootingOptions = ShootingOptions()) -> ShootingResult:
    """Optimize a per-node thrust schedule (N, 4) by single shooting.

    Starts: the warm schedule (if given), the bounded hover allocation, and
    all motors at maximum.  The faulted motor is pinned to zero at every node
    at or after onset.
    """
    x0 = state.to_array() if isinstance(state, RigidBodyState) else np.asarray(state, float)
    mpc = quad_mpc_problem(params, grid, weights, gains, viewpoint, d, options)
    N = grid.N
    pinned = None
    if fault is not None:
        mask = np.zeros(4, dtype=bool)
        mask[fault.motor - 1] = True
        pinned = lambda t: mask if fault.active(t) else np.zeros(4, dtype=bool)
    starts = []
    if warm is not None:
        starts.append(("warm", np.asarray(warm, float).reshape(N, 4)))
    hover = np.array([hover_thrusts(params, fault, t0 + k * grid.dt) for k in range(N)])
    starts.append(("hover", hover))
    starts.append(("max", np.full((N, 4), params.T_m)))
    return mpc.solve(x0, t0, reference, starts, pinned)


def level_attitude(yaw: float = 0.0) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return rotation_to_quat(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]))
