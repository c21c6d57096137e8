"""Closed-loop scenario runner.

The plant is stepped with fixed-step RK4; the controller runs every
``period_steps`` plant steps and its command is held in between.  Time is
always ``k * dt`` for an integer step index ``k``.  A run stops at the
configured duration, when the altitude crosses zero from above, or when the
integrator meets a non-finite state (the partial log is kept).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .alloc import PDGains, desired_acceleration
from .constants import DEFAULT_WEIGHTS
from .core import DomainError
from .fixedwing import (FwParams, TrimPoint, WingLossFault, _FwKernel, fw_gcf_mpc,
                        line_reference, trim_level_flight)
from .quad import (MotorFault, MpcGrid, QuadParams, Reference, _QuadKernel, apply_motor_fault,
                   hover_thrusts, quad_gcf_mpc, static_alloc_command)
from .shooting import ShootingOptions, Weights
from .state import IntegrationError, RigidBodyState, rk4_step

CONTROLLERS = ("none", "hold", "static-alloc", "impulse-mpc", "energy-mpc")
VEHICLES = ("quad", "fixed-wing")
REFERENCES = ("hover", "line", "table")


# ---------------------------------------------------------------------------
# Scenario description
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReferenceSpec:
    """Position reference: ``hover`` at ``p0``, a ``line`` from ``p0`` at
    ``velocity``, or a sampled ``table`` (linear interpolation, held at the ends)."""

    kind: str = "hover"
    p0: tuple = (0.0, 0.0, 0.0)
    velocity: tuple = (0.0, 0.0, 0.0)
    times: tuple = ()
    positions: tuple = ()

    def __post_init__(self):
        if self.kind not in REFERENCES:
            raise DomainError(f"reference kind must be one of {REFERENCES}")
        if self.kind == "table":
            t = np.asarray(self.times, float)
            pos = np.asarray(self.positions, float)
            if t.ndim != 1 or t.size < 2 or pos.shape != (t.size, 3) or np.any(np.diff(t) <= 0):
                raise DomainError("table reference needs >= 2 increasing times and (n, 3) positions")

    def build(self) -> Reference:
        if self.kind == "hover":
            return line_reference(self.p0, (0.0, 0.0, 0.0))
        if self.kind == "line":
            return line_reference(self.p0, self.velocity)
        ts = np.asarray(self.times, float)
        pos = np.asarray(self.positions, float)
        slopes = np.diff(pos, axis=0) / np.diff(ts)[:, None]

        def ref(t):
            t = np.asarray(t, dtype=float)
            p = np.stack([np.interp(t, ts, pos[:, i]) for i in range(3)], axis=-1)
            seg = np.clip(np.searchsorted(ts, t, side="right") - 1, 0, len(ts) - 2)
            inside = (t >= ts[0]) & (t < ts[-1])
            v = np.where(inside[..., None], slopes[seg], 0.0)
            return p, v
        return ref


@dataclass(frozen=True)
class ControllerSpec:
    kind: str = "impulse-mpc"
    weights: tuple = DEFAULT_WEIGHTS
    horizon: float = 2.0
    nodes: int = 20
    substeps: int = 2
    gains: tuple | None = None           # (k_p, k_d); vehicle default when None
    period_steps: int = 10
    max_iter: int = 40

    def __post_init__(self):
        if self.kind not in CONTROLLERS:
            raise DomainError(f"controller kind must be one of {CONTROLLERS}")
        w_g, w_t, w_e = self.weights
        if not (w_g > w_t > w_e > 0):
            raise DomainError("controller weights must satisfy w_g > w_t > w_e > 0")
        if self.period_steps < 1:
            raise DomainError("controller period must be at least one plant step")

    @property
    def grid(self) -> MpcGrid:
        return MpcGrid(T=self.horizon, N=self.nodes, substeps=self.substeps)


@dataclass(frozen=True)
class ScenarioConfig:
    vehicle: str = "quad"
    quad: QuadParams = field(default_factory=QuadParams)
    fw: FwParams = field(default_factory=FwParams)
    initial: RigidBodyState = field(default_factory=RigidBodyState.at_rest)
    reference: ReferenceSpec = field(default_factory=ReferenceSpec)
    controller: ControllerSpec = field(default_factory=ControllerSpec)
    fault: MotorFault | WingLossFault | None = None
    wind: tuple = (0.0, 0.0, 0.0)
    disturbance: tuple | None = None      # constant force (N), known to the controller
    duration: float = 5.0
    dt: float = 0.002
    seed: int = 0
    perturbation: float = 0.0             # std of a seeded initial position offset (m)
    ground_offset: float = 0.0
    name: str = "scenario"

    def __post_init__(self):
        if self.vehicle not in VEHICLES:
            raise DomainError(f"vehicle must be one of {VEHICLES}")
        if not self.dt > 0:
            raise DomainError("dt must be positive")
        if not self.duration >= self.dt:
            raise DomainError("duration must be at least one step")
        if self.perturbation < 0:
            raise DomainError("perturbation must be non-negative")
        if self.vehicle == "quad" and isinstance(self.fault, WingLossFault):
            raise DomainError("a quadcopter cannot lose a wing")
        if self.vehicle == "fixed-wing" and isinstance(self.fault, MotorFault):
            raise DomainError("fixed-wing faults are wing losses")
        if self.vehicle == "fixed-wing" and self.controller.kind == "static-alloc":
            raise DomainError("the static-allocation controller is quadcopter-only")

    @property
    def mass(self) -> float:
        return self.quad.m if self.vehicle == "quad" else self.fw.m

    @property
    def gravity(self) -> np.ndarray:
        return self.quad.g if self.vehicle == "quad" else self.fw.g

    @property
    def steps(self) -> int:
        return int(round(self.duration / self.dt))


# ---------------------------------------------------------------------------
# Log and metrics
# ---------------------------------------------------------------------------

@dataclass
class SimLog:
    t: np.ndarray          # (K,)
    x: np.ndarray          # (K, 13)
    u: np.ndarray          # (K, n_u) command applied over [t, t + dt)
    f_g: np.ndarray        # (K, 3)
    f_t: np.ndarray        # (K, 3)
    f_d: np.ndarray        # (K, 3)
    cost: np.ndarray       # (K, 3) weighted (gravity, tracking, energy) terms
    fault: np.ndarray      # (K,) bool
    status: str = "completed"          # completed | ground | integration-error
    touchdown_time: float | None = None
    touchdown_speed: float | None = None
    controller_calls: int = 0
    nonconverged: int = 0
    error: str = ""
    dt: float = 0.0

    def __len__(self) -> int:
        return int(self.t.size)

    @property
    def n_controls(self) -> int:
        return int(self.u.shape[1])


@dataclass(frozen=True)
class MetricsSummary:
    tracking_rmse: float
    max_descent_speed: float
    touchdown_speed: float | None
    gravity_impulse_residual: float
    ballistic_baseline: float
    final_position_error: float
    duration: float

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def ballistic_speed(v0_z: float, altitude: float, duration: float, g: float) -> float:
    """Vertical speed of an uncontrolled fall at ground contact, or at the end
    of the window if the ground is not reached."""
    if altitude > 0:
        t_hit = (-v0_z + math.sqrt(v0_z * v0_z + 2.0 * g * altitude)) / g
        if t_hit <= duration:
            return math.sqrt(v0_z * v0_z + 2.0 * g * altitude)
    return v0_z + g * duration


def compute_metrics(log: SimLog, cfg: ScenarioConfig) -> MetricsSummary:
    if len(log) == 0:
        raise DomainError("cannot summarize an empty log")
    ref = cfg.reference.build()
    p_d, _ = ref(log.t)
    err = np.linalg.norm(log.x[:, 0:3] - p_d, axis=1)
    rmse = float(np.sqrt(np.mean(err ** 2)))
    v_z = log.x[:, 5]
    if log.touchdown_speed is not None:
        # the last row lies past the ground; its speed is replaced by the interpolated one
        descent = max(float(np.max(v_z[:-1])), log.touchdown_speed)
    else:
        descent = float(np.max(v_z))
    mg = cfg.mass * cfg.gravity
    held = log.f_g[:-1] if len(log) > 1 else log.f_g
    residual = float(np.linalg.norm(np.sum(held - mg, axis=0) * cfg.dt))
    h0 = cfg.ground_offset - float(log.x[0, 2])
    g = float(np.linalg.norm(cfg.gravity))
    baseline = ballistic_speed(float(log.x[0, 5]), h0, cfg.duration, g)
    return MetricsSummary(tracking_rmse=rmse, max_descent_speed=descent,
                          touchdown_speed=log.touchdown_speed,
                          gravity_impulse_residual=residual, ballistic_baseline=baseline,
                          final_position_error=float(err[-1]), duration=float(log.t[-1]))


# ---------------------------------------------------------------------------
# Vehicles
# ---------------------------------------------------------------------------

@dataclass
class _Command:
    u: np.ndarray
    f_g: np.ndarray
    f_t: np.ndarray
    f_d: np.ndarray
    cost: np.ndarray
    converged: bool = True
    schedule: np.ndarray | None = None


class _Plant:
    """Vehicle-specific pieces the runner needs."""

    n_u: int

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        d = cfg.disturbance
        self.d = None if d is None else np.asarray(d, dtype=float)
        self.d_over_m = np.zeros(3) if d is None else self.d / cfg.mass

    def derivative(self, x, u, t):
        raise NotImplementedError

    def force(self, x, u, t):
        raise NotImplementedError

    def hold_command(self, x, t) -> np.ndarray:
        raise NotImplementedError

    def mpc(self, x, t, warm, spec: ControllerSpec, ref):
        raise NotImplementedError


class _QuadPlant(_Plant):
    n_u = 4

    def __init__(self, cfg):
        super().__init__(cfg)
        self.params = cfg.quad
        self.kernel = _QuadKernel(cfg.quad)

    def _effective(self, u, t):
        return apply_motor_fault(u, self.cfg.fault, t)

    def derivative(self, x, u, t):
        ut = self._effective(u, t)[:, None]
        dx = self.kernel.rhs(x[:, None], self.kernel.wrench(ut))[:, 0]
        dx[3:6] += self.d_over_m
        return dx

    def force(self, x, u, t):
        ut = self._effective(u, t)[:, None]
        return self.kernel.force(x[:, None], self.kernel.wrench(ut))[:, 0]

    def hold_command(self, x, t):
        return hover_thrusts(self.params, self.cfg.fault, t)

    def static(self, x, t, spec: ControllerSpec, ref):
        p_d, v_d = ref(np.asarray(t))
        gains = PDGains(*(spec.gains or (2.0, 3.0)))
        a_d = desired_acceleration(x[0:3], x[3:6], p_d, v_d, gains)
        T, alloc = static_alloc_command(x, t, a_d, self.params, self.cfg.fault, self.d)
        return T, alloc

    def mpc(self, x, t, warm, spec, ref, viewpoint):
        gains = PDGains(*(spec.gains or (2.0, 3.0)))
        return quad_gcf_mpc(x, ref, self.params, fault=self.cfg.fault, grid=spec.grid,
                            weights=Weights(*spec.weights), t0=t, warm=warm, gains=gains,
                            viewpoint=viewpoint, d=self.d,
                            options=ShootingOptions(max_iter=spec.max_iter))


class _FwPlant(_Plant):
    n_u = 5

    def __init__(self, cfg):
        super().__init__(cfg)
        self.params = cfg.fw
        self.healthy = _FwKernel(cfg.fw, cfg.wind, wing_lost=False)
        self.lost = _FwKernel(cfg.fw, cfg.wind, wing_lost=True)

    def _kernel(self, t):
        f = self.cfg.fault
        return self.lost if f is not None and f.active(t) else self.healthy

    def derivative(self, x, u, t):
        k = self._kernel(t)
        dx = k.rhs(x[:, None], k.wrench(np.asarray(u, float)[:, None]))[:, 0]
        dx[3:6] += self.d_over_m
        return dx

    def force(self, x, u, t):
        k = self._kernel(t)
        return k.force(x[:, None], k.wrench(np.asarray(u, float)[:, None]))[:, 0]

    @cached_property
    def trim(self) -> TrimPoint | None:
        speed = float(np.linalg.norm(self.cfg.reference.velocity)) or float(np.linalg.norm(self.cfg.initial.v))
        if speed <= 1.0:
            return None
        try:
            return trim_level_flight(self.params, speed)
        except DomainError:
            return None

    def hold_command(self, x, t):
        if self.trim is None:
            return np.zeros(5)
        u = self.trim.command.to_array()
        f = self.cfg.fault
        if f is not None and f.active(t):
            u[1] = 0.0
        return u

    def mpc(self, x, t, warm, spec, ref, viewpoint):
        gains = PDGains(*(spec.gains or (0.5, 1.0)))
        return fw_gcf_mpc(x, ref, self.params, fault=self.cfg.fault, grid=spec.grid,
                          weights=Weights(*spec.weights), t0=t, warm=warm, trim=self.trim,
                          gains=gains, viewpoint=viewpoint, v_w=self.cfg.wind, d=self.d,
                          options=ShootingOptions(max_iter=spec.max_iter))


def make_plant(cfg: ScenarioConfig) -> _Plant:
    return _QuadPlant(cfg) if cfg.vehicle == "quad" else _FwPlant(cfg)


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------

class _Controller:
    def __init__(self, cfg: ScenarioConfig, plant: _Plant):
        self.cfg = cfg
        self.plant = plant
        self.spec = cfg.controller
        self.ref = cfg.reference.build()
        self.warm = None
        self.last: _Command | None = None
        self.calls = 0
        self.failures = 0
        w = self.spec.weights
        self.weights = Weights(*w)

    def _passive(self, x, t, u) -> _Command:
        f = self.plant.force(x, u, t)
        z = np.zeros(3)
        return _Command(np.asarray(u, float), z, f.copy(), f, np.zeros(3))

    def __call__(self, x, t) -> _Command:
        self.calls += 1
        kind = self.spec.kind
        if kind == "none":
            return self._passive(x, t, np.zeros(self.plant.n_u))
        if kind == "hold":
            if self.last is None:
                self.last = self._passive(x, t, self.plant.hold_command(x, t))
            return self._passive(x, t, self.last.u)
        if kind == "static-alloc":
            T, alloc = self.plant.static(x, t, self.spec, self.ref)
            a, b = _static_targets(self.cfg, alloc)
            w_g, w_t, w_e = self.spec.weights
            cost = np.array([w_g * np.sum((alloc.f_g_star - a) ** 2),
                             w_t * np.sum((alloc.f_t_star - b) ** 2),
                             w_e * np.sum(alloc.f_d ** 2)])
            cmd = _Command(T, alloc.f_g_star, alloc.f_t_star, alloc.f_d, cost)
            self.last = cmd
            return cmd
        viewpoint = "impulse" if kind == "impulse-mpc" else "energy"
        res = self.plant.mpc(x, t, self.warm, self.spec, self.ref, viewpoint)
        if not res.converged:
            self.failures += 1
        if not np.isfinite(res.objective) and self.last is not None:
            # every candidate diverged: keep flying the previous command
            return self.last
        cmd = _Command(res.schedule[0].copy(), res.f_g[0].copy(), res.f_t[0].copy(),
                       res.f[0].copy(), np.asarray(res.terms, float), res.converged,
                       res.schedule)
        self.warm = self._shift(res.schedule)
        self.last = cmd
        return cmd

    def _shift(self, schedule):
        """Advance a node schedule by the controller period (whole nodes only)."""
        elapsed = self.spec.period_steps * self.cfg.dt
        node_dt = self.spec.grid.dt
        s = int(round(elapsed / node_dt))
        if s < 1 or abs(s * node_dt - elapsed) > 1e-9 * node_dt:
            return schedule.copy()
        s = min(s, schedule.shape[0] - 1)
        return np.vstack([schedule[s:], np.repeat(schedule[-1:], s, axis=0)])


def _static_targets(cfg: ScenarioConfig, alloc):
    # the allocation already folded any disturbance into its targets; recover them
    from .core import decompose_disturbance
    mg = cfg.mass * cfg.gravity
    if cfg.disturbance is None:
        return mg, alloc.f_t_star
    d_g, _ = decompose_disturbance(np.asarray(cfg.disturbance, float), cfg.gravity)
    return mg + d_g, alloc.f_t_star


def initial_state(cfg: ScenarioConfig) -> np.ndarray:
    x = cfg.initial.to_array()
    if cfg.perturbation > 0:
        rng = np.random.default_rng(cfg.seed)
        x[0:3] += rng.normal(scale=cfg.perturbation, size=3)
    return x


def run_scenario(cfg: ScenarioConfig) -> SimLog:
    plant = make_plant(cfg)
    ctrl = _Controller(cfg, plant)
    dt = cfg.dt
    period = cfg.controller.period_steps
    n = cfg.steps
    x = initial_state(cfg)
    rows_t, rows_x, rows_u, rows_g, rows_tt, rows_d, rows_c, rows_f = ([] for _ in range(8))
    status, err = "completed", ""
    td_time = td_speed = None
    cmd = None
    ground_armed = cfg.ground_offset - x[2] > 0

    def record(k, x, cmd, t):
        rows_t.append(k * dt)
        rows_x.append(x.copy())
        rows_u.append(cmd.u.copy())
        rows_g.append(cmd.f_g)
        rows_tt.append(cmd.f_t)
        rows_d.append(cmd.f_d)
        rows_c.append(cmd.cost)
        rows_f.append(cfg.fault is not None and cfg.fault.active(t))

    k = 0
    while True:
        t = k * dt
        if k % period == 0 or cmd is None:
            cmd = ctrl(x, t)
        record(k, x, cmd, t)
        if k >= n:
            break
        u = cmd.u
        try:
            x_new = rk4_step(x, lambda s: plant.derivative(s, u, t), dt)
        except IntegrationError as exc:
            status, err = "integration-error", f"{exc} at step {k}, t={t:.6g}"
            break
        alt_prev = cfg.ground_offset - x[2]
        alt_new = cfg.ground_offset - x_new[2]
        k += 1
        if ground_armed and alt_new <= 0 < alt_prev:
            frac = alt_prev / (alt_prev - alt_new)
            td_time = (k - 1 + frac) * dt
            td_speed = float(x[5] + frac * (x_new[5] - x[5]))
            x = x_new
            record(k, x, cmd, k * dt)
            status = "ground"
            break
        x = x_new

    return SimLog(t=np.asarray(rows_t), x=np.asarray(rows_x), u=np.asarray(rows_u),
                  f_g=np.asarray(rows_g), f_t=np.asarray(rows_tt), f_d=np.asarray(rows_d),
                  cost=np.asarray(rows_c), fault=np.asarray(rows_f, dtype=bool), status=status,
                  touchdown_time=td_time, touchdown_speed=td_speed,
                  controller_calls=ctrl.calls, nonconverged=ctrl.failures, error=err, dt=dt)


__all__ = ["CONTROLLERS", "ControllerSpec", "MetricsSummary", "ReferenceSpec", "ScenarioConfig",
           "SimLog", "ballistic_speed", "compute_metrics", "initial_state", "make_plant",
           "rk4_step", "run_scenario"]
