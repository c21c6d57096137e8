"""Receding-horizon gravity-compensation-first schedules.

Forces are zero-order-hold schedules on ``N`` nodes.  Per node the decision
variables are ``f_g`` and ``f_d`` (with ``f_t = f_g + f_d``), both confined to
the feasible set F, and the tracking term obeys the same no-erosion bound as
in the static allocator.  Two cost families share one quadratic structure:

impulse view
    w_g‖Σ(f_g - a)Δt‖² + w_t‖Σ(f_t - b)Δt‖² + w_e Σ‖f_d‖²Δt

energy view (z-components only, Δh per node)
    w_g(Σ(f_g,z - a_z)Δh)² + w_t(Σ(f_t,z - b_z)Δh)² + w_e(Σ f_d,z Δh)²

where ``a = m g + d_g`` and ``b = m a_d - d_perp``.  Both are minimized by a
monotone accelerated projected-gradient method.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .alloc import erosion_guard
from .constants import DEFAULT_WEIGHTS, GRAVITY, TOL
from .core import (DomainError, FeasibleSet, decompose_disturbance,
                   project_pair_with_halfspace)


class GridMismatchError(ValueError):
    """A schedule does not have the node count of the problem's grid."""


@dataclass(frozen=True)
class HorizonGrid:
    T: float
    N: int
    t0: float = 0.0

    def __post_init__(self):
        if not (self.T > 0 and self.N >= 2):
            raise DomainError(f"need T > 0 and N >= 2, got T={self.T}, N={self.N}")

    @property
    def dt(self) -> float:
        return self.T / self.N

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.N)

    def weights(self) -> np.ndarray:
        return np.full(self.N, self.dt)


@dataclass(frozen=True)
class HeightGrid:
    """Descent span [h0, h0 + H] split into N equal height steps.

    ``dh`` may override the per-node height increments, e.g. ``v_z·dt`` read
    off a trajectory.  Increments must be non-negative (a monotone descent).
    """

    H: float
    N: int
    h0: float = 0.0
    dh: np.ndarray | None = None

    def __post_init__(self):
        if not (self.H > 0 and self.N >= 2):
            raise DomainError(f"need H > 0 and N >= 2, got H={self.H}, N={self.N}")
        if self.dh is not None:
            dh = np.asarray(self.dh, dtype=float)
            if dh.shape != (self.N,):
                raise GridMismatchError(f"dh must have shape ({self.N},), got {dh.shape}")
            if np.any(dh < 0) or not np.all(np.isfinite(dh)):
                raise DomainError("height samples must be monotone (dh >= 0)")
            object.__setattr__(self, "dh", dh)

    @classmethod
    def from_trajectory(cls, h=None, v_z=None, dt: float | None = None) -> "HeightGrid":
        """Build from height samples ``h`` (N+1 values) or from ``v_z`` with step ``dt``."""
        if h is not None:
            h = np.asarray(h, dtype=float)
            dh = np.diff(h)
        elif v_z is not None and dt is not None:
            dh = np.asarray(v_z, dtype=float) * dt
            h = None
        else:
            raise DomainError("need h samples or v_z with dt")
        if np.any(dh < 0):
            raise DomainError("height samples must be monotone (no climbing inside the span)")
        span = float(np.sum(dh))
        if span <= 0:
            raise DomainError("trajectory covers no height")
        h0 = float(h[0]) if h is not None else 0.0
        return cls(H=span, N=len(dh), h0=h0, dh=dh)

    def weights(self) -> np.ndarray:
        return self.dh if self.dh is not None else np.full(self.N, self.H / self.N)

    @property
    def constant_rate(self) -> bool:
        return self.dh is None


@dataclass(frozen=True)
class HorizonProblem:
    grid: HorizonGrid | HeightGrid
    m: float
    a_d: np.ndarray                 # (N, 3) sampled desired acceleration
    F: FeasibleSet
    g: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, GRAVITY]))
    w_g: float = DEFAULT_WEIGHTS[0]
    w_t: float = DEFAULT_WEIGHTS[1]
    w_e: float = DEFAULT_WEIGHTS[2]
    d: np.ndarray | None = None     # (N, 3) sampled disturbance

    def __post_init__(self):
        N = self.grid.N
        a_d = np.asarray(self.a_d, dtype=float)
        if a_d.shape == (3,):
            a_d = np.tile(a_d, (N, 1))
        if a_d.shape != (N, 3):
            raise GridMismatchError(f"a_d must have shape ({N}, 3), got {a_d.shape}")
        object.__setattr__(self, "a_d", a_d)
        if self.d is not None:
            d = np.asarray(self.d, dtype=float)
            if d.shape == (3,):
                d = np.tile(d, (N, 1))
            if d.shape != (N, 3):
                raise GridMismatchError(f"d must have shape ({N}, 3), got {d.shape}")
            object.__setattr__(self, "d", d)
        object.__setattr__(self, "g", np.asarray(self.g, dtype=float))
        if not self.m > 0:
            raise DomainError("mass must be positive")
        # w_e = 0 is allowed: it is the limit the static comparison relies on
        if not (self.w_g > self.w_t > 0 and self.w_t > self.w_e >= 0):
            raise DomainError(
                f"weights must satisfy w_g > w_t > w_e >= 0, got {self.w_g}, {self.w_t}, {self.w_e}")

    @property
    def N(self) -> int:
        return self.grid.N

    @property
    def viewpoint(self) -> str:
        return "energy" if isinstance(self.grid, HeightGrid) else "impulse"

    def targets(self) -> tuple[np.ndarray, np.ndarray]:
        mg = np.tile(self.m * self.g, (self.N, 1))
        ma = self.m * self.a_d
        if self.d is None:
            return mg, ma
        split = [decompose_disturbance(dk, self.g) for dk in self.d]
        d_g = np.array([s[0] for s in split])
        d_perp = np.array([s[1] for s in split])
        return mg + d_g, ma - d_perp


@dataclass
class HorizonSolution:
    f_g: np.ndarray
    f_d: np.ndarray
    objective: float = float("nan")
    iterations: int = 0
    converged: bool = False
    trace: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def f_t(self) -> np.ndarray:
        return self.f_g + self.f_d

    @property
    def N(self) -> int:
        return self.f_g.shape[0]


# ---------------------------------------------------------------------------
# Costs
# ---------------------------------------------------------------------------

def _check(sol: HorizonSolution, prob: HorizonProblem):
    if sol.f_g.shape != (prob.N, 3) or sol.f_d.shape != (prob.N, 3):
        raise GridMismatchError(
            f"schedule has {sol.f_g.shape[0]} nodes, problem grid has {prob.N}")


def cost_terms(sol: HorizonSolution, prob: HorizonProblem) -> tuple[float, float, float]:
    """(gravity, tracking, energy) terms, already multiplied by their weights."""
    _check(sol, prob)
    a, b = prob.targets()
    w = prob.grid.weights()
    if prob.viewpoint == "impulse":
        rg = w @ (sol.f_g - a)
        rt = w @ (sol.f_t - b)
        e = float(w @ np.sum(sol.f_d ** 2, axis=1))
        return (prob.w_g * float(rg @ rg), prob.w_t * float(rt @ rt), prob.w_e * e)
    rg = float(w @ (sol.f_g[:, 2] - a[:, 2]))
    rt = float(w @ (sol.f_t[:, 2] - b[:, 2]))
    re = float(w @ sol.f_d[:, 2])
    return prob.w_g * rg * rg, prob.w_t * rt * rt, prob.w_e * re * re


def impulse_cost(sol: HorizonSolution, prob: HorizonProblem) -> float:
    if prob.viewpoint != "impulse":
        raise GridMismatchError("impulse cost needs a time grid")
    return float(sum(cost_terms(sol, prob)))


def energy_cost(sol: HorizonSolution, prob: HorizonProblem) -> float:
    if prob.viewpoint != "energy":
        raise GridMismatchError("energy cost needs a height grid")
    return float(sum(cost_terms(sol, prob)))


# ---------------------------------------------------------------------------
# Quadratic assembly
# ---------------------------------------------------------------------------

@dataclass
class _Quadratic:
    Q: np.ndarray   # Hessian of ½zᵀQz + qᵀz + r  over z = [x (3N), u (3N)]
    q: np.ndarray
    r: float
    L: float
    A: np.ndarray
    E: np.ndarray
    Aa: np.ndarray
    Ab: np.ndarray
    w: tuple

    def value(self, z):
        # residual form: exact and non-negative, unlike the expanded quadratic
        n = z.size // 2
        x, u = z[:n], z[n:]
        rg = self.A @ x - self.Aa
        rt = self.A @ (x + u) - self.Ab
        w_g, w_t, w_e = self.w
        return float(w_g * (rg @ rg) + w_t * (rt @ rt) + w_e * (u @ (self.E @ u)))

    def grad(self, z):
        return self.Q @ z + self.q


def _assemble(prob: HorizonProblem) -> _Quadratic:
    N = prob.N
    a, b = prob.targets()
    w = prob.grid.weights()
    if prob.viewpoint == "impulse":
        A = np.kron(w[None, :], np.eye(3))                     # 3 × 3N
        E = np.diag(np.repeat(w, 3))                           # Σ w‖u‖²
    else:
        A = np.kron(w[None, :], np.array([[0.0, 0.0, 1.0]]))   # 1 × 3N, work along z
        E = A.T @ A
    av, bv = a.ravel(), b.ravel()
    Aa, Ab = A @ av, A @ bv
    AtA = A.T @ A
    Q = np.zeros((6 * N, 6 * N))
    Q[:3 * N, :3 * N] = 2 * (prob.w_g + prob.w_t) * AtA
    Q[:3 * N, 3 * N:] = 2 * prob.w_t * AtA
    Q[3 * N:, :3 * N] = 2 * prob.w_t * AtA
    Q[3 * N:, 3 * N:] = 2 * prob.w_t * AtA + 2 * prob.w_e * E
    qx = -2 * prob.w_g * (A.T @ Aa) - 2 * prob.w_t * (A.T @ Ab)
    qu = -2 * prob.w_t * (A.T @ Ab)
    r = prob.w_g * float(Aa @ Aa) + prob.w_t * float(Ab @ Ab)
    L = float(np.linalg.eigvalsh(Q)[-1])
    return _Quadratic(Q=Q, q=np.concatenate([qx, qu]), r=r, L=max(L, 1e-300), A=A, E=E,
                      Aa=Aa, Ab=Ab, w=(prob.w_g, prob.w_t, prob.w_e))


class _Projector:
    """Per-node projection onto {x ∈ F, u ∈ F, nᵀ(x + u) <= c}."""

    def __init__(self, prob: HorizonProblem):
        a, b = prob.targets()
        F = prob.F
        self.F = F
        N = prob.N
        normals = np.zeros((N, 3))
        bounds = np.full(N, np.inf)
        for k in range(N):
            guard = erosion_guard(a[k], b[k])
            if guard is None:
                continue
            n, c = guard
            normals[k] = n
            bounds[k] = max(c, float(n @ F.project(a[k])) + F.support_min(n))
        self.normals = normals
        self.bounds = bounds
        self.guarded = np.isfinite(bounds)

    def __call__(self, z: np.ndarray) -> np.ndarray:
        N = z.size // 6
        x = z[:3 * N].reshape(N, 3)
        u = z[3 * N:].reshape(N, 3)
        px = self.F.project(x)
        pu = self.F.project(u)
        g = self.guarded
        if np.any(g):
            px[g], pu[g] = project_pair_with_halfspace(
                self.F, x[g], u[g], self.normals[g], self.bounds[g])
        return np.concatenate([px.ravel(), pu.ravel()])

    def feasible(self, z: np.ndarray) -> bool:
        N = z.size // 6
        x = z[:3 * N].reshape(N, 3)
        u = z[3 * N:].reshape(N, 3)
        if not (self.F.contains(x) and self.F.contains(u)):
            return False
        g = self.guarded
        slack = TOL.membership * (1.0 + self.F.scale)
        return bool(np.all(np.einsum("ij,ij->i", self.normals[g], x[g] + u[g]) <= self.bounds[g] + slack))


def _pack(f_g, f_d) -> np.ndarray:
    return np.concatenate([np.asarray(f_g, float).ravel(), np.asarray(f_d, float).ravel()])


def _unpack(z, N):
    return z[:3 * N].reshape(N, 3).copy(), z[3 * N:].reshape(N, 3).copy()


def _mfista(quad: _Quadratic, proj: _Projector, z0: np.ndarray, max_iter: int):
    """Monotone FISTA with gradient-mapping stopping; returns (z, trace, iters, converged)."""
    z = proj(z0)
    fz = quad.value(z)
    if proj.feasible(z0):
        # near curved faces the coupled projection can nudge a feasible start
        # onto a slightly worse point; keep the start itself in that case
        f0 = quad.value(z0)
        if f0 <= fz:
            z, fz = np.array(z0, dtype=float), f0
    trace = [fz]
    y = z.copy()
    t = 1.0
    step = 1.0 / quad.L
    for it in range(1, max_iter + 1):
        w = proj(y - step * quad.grad(y))
        fw = quad.value(w)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        z_prev = z
        accepted = fw <= fz
        if accepted:
            z, fz = w, fw
        trace.append(fz)
        # projected-gradient step at y barely moves: y and w are (near) stationary
        if np.linalg.norm(w - y) <= TOL.horizon_tol * (1.0 + np.linalg.norm(y)):
            return z, trace, it, True
        # objective flat to rounding over a long window also counts as converged
        if it >= TOL.horizon_stall and trace[-TOL.horizon_stall] - fz <= 1e-15 * (1.0 + abs(fz)):
            return z, trace, it, True
        if accepted:
            y = z + ((t - 1.0) / t_next) * (z - z_prev)
            t = t_next
        else:
            # restart the momentum from the last accepted point
            y, t = z.copy(), 1.0
    return z, trace, max_iter, False


def cold_start(prob: HorizonProblem) -> HorizonSolution:
    """Per-node static lexicographic allocation."""
    from .alloc import AllocProblem, solve_lexicographic
    a, b = prob.targets()
    f_g = np.zeros((prob.N, 3))
    f_d = np.zeros((prob.N, 3))
    for k in range(prob.N):
        # feed the already-folded targets so the disturbance is not applied twice
        sub = AllocProblem(m=1.0, a_d=b[k], F=prob.F, g=a[k])
        alloc = solve_lexicographic(sub)
        f_g[k], f_d[k] = alloc.f_g_star, alloc.f_d
    return HorizonSolution(f_g=f_g, f_d=f_d)


def shift_solution(sol: HorizonSolution) -> HorizonSolution:
    """Drop node 0 and repeat the last node (receding-horizon warm start)."""
    f_g = np.vstack([sol.f_g[1:], sol.f_g[-1:]])
    f_d = np.vstack([sol.f_d[1:], sol.f_d[-1:]])
    return HorizonSolution(f_g=f_g, f_d=f_d, metadata={"shifted": True})


def solve_horizon(prob: HorizonProblem, init: HorizonSolution | None = None,
                  max_iter: int | None = None) -> HorizonSolution:
    """Minimize the horizon cost from cold, zero and (if given) warm starts; keep the best."""
    max_iter = TOL.horizon_max_iter if max_iter is None else max_iter
    quad = _assemble(prob)
    proj = _Projector(prob)
    N = prob.N
    starts: list[tuple[str, np.ndarray]] = []
    if init is not None:
        _check(init, prob)
        starts.append(("warm", _pack(init.f_g, init.f_d)))
    cold = cold_start(prob)
    starts.append(("cold", _pack(cold.f_g, cold.f_d)))
    starts.append(("zero", np.zeros(6 * N)))

    best = None
    for name, z0 in starts:
        z, trace, iters, ok = _mfista(quad, proj, z0, max_iter)
        val = trace[-1]
        # later starts must win clearly; ties keep the earlier (warm, then cold) start
        if best is None or val < best[1] - 1e-12 * (1.0 + abs(best[1])):
            best = (z, val, trace, iters, ok, name)
    z, val, trace, iters, ok, name = best
    f_g, f_d = _unpack(z, N)
    meta = {"viewpoint": prob.viewpoint, "start": name, "step": 1.0 / quad.L}
    if prob.viewpoint == "energy" and prob.grid.constant_rate:
        meta["descent_profile"] = "constant rate (H/N per node)"
    return HorizonSolution(f_g=f_g, f_d=f_d, objective=val, iterations=iters,
                           converged=ok, trace=list(trace), metadata=meta)


def mpc_step(prob: HorizonProblem, previous: HorizonSolution | None = None):
    """One receding-horizon step: solve (warm-started from ``previous`` shifted), return node-0 f_d."""
    init = shift_solution(previous) if previous is not None and previous.N == prob.N else None
    sol = solve_horizon(prob, init=init)
    return sol.f_d[0].copy(), sol
