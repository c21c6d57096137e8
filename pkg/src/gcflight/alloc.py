"""Single-instant gravity-compensation-first force allocation.

Two tiers compete for one feasible force set F:

* the gravity tier wants ``f_g`` as close as possible to ``a = m g + d_g``;
* the tracking tier wants ``f_t`` as close as possible to ``b = m a_d - d_perp``;

and the commanded force is ``f_d = -f_g + f_t`` which must lie in F.  The
lexicographic solver settles the gravity tier first and then spends what is
left on tracking; the weighted solver approximates the same ordering with one
quadratic program whose gravity weight dominates.

The tracking tier is additionally barred from *eroding* the gravity tier:
along the unit direction ``n = a/‖a‖`` it may not ask for more than its own
target does, ``nᵀf_t <= max(0, nᵀb)``.  Without this guard the tracking tier
would simply undo the gravity compensation whenever F is tight (any authority
that Step 1 assigned to gravity could be reclaimed by tilting ``f_t`` toward
``+n``), and the priority ordering would be meaningless.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constants import DEFAULT_WEIGHTS, GRAVITY, TOL
from .core import (DomainError, FeasibleSet, InfeasibleSetError, Vec3, as_vec3,
                   decompose_disturbance, project_with_halfspace)


class NonConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap; ``best`` holds the best iterate."""

    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class PDGains:
    k_p: float
    k_d: float

    def __post_init__(self):
        if not (self.k_p > 0 and self.k_d > 0):
            raise DomainError(f"PD gains must be positive, got k_p={self.k_p}, k_d={self.k_d}")


def desired_acceleration(p, v, p_d, p_d_dot, gains: PDGains) -> Vec3:
    """PD law a_d = -k_p (p - p_d) - k_d (v - ṗ_d)."""
    p, v, p_d, p_d_dot = (np.asarray(x, dtype=float) for x in (p, v, p_d, p_d_dot))
    return -gains.k_p * (p - p_d) - gains.k_d * (v - p_d_dot)


@dataclass(frozen=True)
class AllocProblem:
    m: float
    a_d: Vec3
    F: FeasibleSet
    g: Vec3 = field(default_factory=lambda: np.array([0.0, 0.0, GRAVITY]))
    w_g: float = DEFAULT_WEIGHTS[0]
    w_t: float = DEFAULT_WEIGHTS[1]
    d: Vec3 | None = None

    def __post_init__(self):
        if not (np.isfinite(self.m) and self.m > 0):
            raise DomainError(f"mass must be positive, got {self.m}")
        object.__setattr__(self, "a_d", as_vec3(self.a_d, "a_d"))
        object.__setattr__(self, "g", as_vec3(self.g, "g"))
        if self.d is not None:
            object.__setattr__(self, "d", as_vec3(self.d, "d"))
        if not isinstance(self.F, FeasibleSet):
            raise DomainError("F must be a FeasibleSet")

    def targets(self) -> tuple[Vec3, Vec3]:
        """(gravity-tier target, tracking-tier target)."""
        mg = self.m * self.g
        ma = self.m * self.a_d
        if self.d is None:
            return mg, ma
        d_g, d_perp = decompose_disturbance(self.d, self.g)
        return mg + d_g, ma - d_perp


@dataclass(frozen=True)
class Allocation:
    f_g_star: Vec3
    f_t_star: Vec3
    f_d: Vec3
    iterations: int = 0
    objective: float = 0.0

    def residuals(self, prob: AllocProblem) -> dict:
        a, b = prob.targets()
        return {
            "gravity": float(np.linalg.norm(self.f_g_star - a)),
            "tracking": float(np.linalg.norm(self.f_t_star - b)),
        }


def erosion_guard(a: Vec3, b: Vec3):
    """Unit normal and bound of the no-erosion half-space, or ``None`` when a = 0."""
    na = float(np.linalg.norm(a))
    if na == 0.0:
        return None
    n = a / na
    return n, max(0.0, float(n @ b))


def solve_lexicographic(prob: AllocProblem) -> Allocation:
    """Gravity first, tracking over what remains, then f_d = -f_g* + f_t*."""
    a, b = prob.targets()
    F = prob.F
    f_g = F.project(a)
    guard = erosion_guard(a, b)
    if guard is None:
        u = F.project(b - f_g)
    else:
        n, c = guard
        # u = f_t - f_g must stay in F; nᵀf_t <= c  <=>  nᵀu <= c - nᵀf_g
        bound = max(c - float(n @ f_g), F.support_min(n))
        u = project_with_halfspace(F, b - f_g, n, bound)
    return Allocation(f_g_star=f_g, f_t_star=f_g + u, f_d=u)


def weighted_objective(prob: AllocProblem, f_g, f_t) -> float:
    a, b = prob.targets()
    return float(prob.w_g * np.sum((f_g - a) ** 2) + prob.w_t * np.sum((f_t - b) ** 2))


def solve_weighted(prob: AllocProblem) -> Allocation:
    """Single quadratic program  w_g‖f_g - a‖² + w_t‖f_t - b‖²  over the shared set.

    Variables are f_g ∈ F and u = f_d ∈ F with f_t = f_g + u, plus the
    no-erosion half-space on f_t.  Disturbance (if any) is ignored here.
    """
    if prob.d is not None:
        prob = AllocProblem(m=prob.m, a_d=prob.a_d, F=prob.F, g=prob.g,
                            w_g=prob.w_g, w_t=prob.w_t, d=None)
    return _solve_weighted(prob)


def solve_weighted_disturbed(prob: AllocProblem) -> Allocation:
    """Weighted form with the disturbance folded into both tiers.

    The component of d along g joins the gravity target, the orthogonal rest
    is subtracted from the tracking target.  With d absent or exactly zero
    the result is the plain weighted solution, bit for bit.
    """
    if prob.d is not None and not np.any(prob.d):
        prob = AllocProblem(m=prob.m, a_d=prob.a_d, F=prob.F, g=prob.g,
                            w_g=prob.w_g, w_t=prob.w_t, d=None)
    return _solve_weighted(prob)


def _bcd(F: FeasibleSet, a, b, w_g, w_t, u0):
    """Exact block-coordinate descent on (x = f_g, u = f_d); contraction w_t/(w_g+w_t)."""
    W = w_g + w_t
    u = u0
    x = F.project((w_g * a + w_t * (b - u)) / W)
    for it in range(1, TOL.bcd_max_iter + 1):
        u_new = F.project(b - x)
        x_new = F.project((w_g * a + w_t * (b - u_new)) / W)
        step = max(np.max(np.abs(u_new - u)), np.max(np.abs(x_new - x)))
        x, u = x_new, u_new
        if step <= TOL.bcd_tol * (1.0 + max(np.max(np.abs(a)), np.max(np.abs(b)))):
            return x, u, it, True
    return x, u, TOL.bcd_max_iter, False


def _solve_weighted(prob: AllocProblem) -> Allocation:
    if not (prob.w_g > prob.w_t > 0):
        raise DomainError(f"weighted form needs w_g > w_t > 0, got {prob.w_g}, {prob.w_t}")
    a, b = prob.targets()
    F = prob.F
    guard = erosion_guard(a, b)

    def objective(x, u):
        return float(prob.w_g * np.sum((x - a) ** 2) + prob.w_t * np.sum((x + u - b) ** 2))

    def solve_at(lam, u0):
        # the half-space multiplier shifts the tracking target along -n
        b_lam = b if guard is None else b - lam * guard[0]
        return _bcd(F, a, b_lam, prob.w_g, prob.w_t, u0)

    starts = [F.project(b - F.project(a)), F.project(np.zeros(3)), F.project(b)]
    lam = 0.0
    if guard is not None:
        n, c = guard
        smin = F.support_min(n)
        floor = 2.0 * smin
        tiny = 1e-12 * (1.0 + F.scale)
        # same relaxation as the lexicographic path when the guard cannot be met
        c = max(c, float(n @ F.project(a)) + smin)
        slack = tiny if c <= floor + tiny else 0.0
        x, u, _, _ = solve_at(0.0, starts[0])
        if float(n @ (x + u)) > c + slack:
            lo, hi = 0.0, max(1.0, F.scale) * prob.w_t
            u_warm = u
            while True:
                x, u, _, _ = solve_at(hi, u_warm)
                if float(n @ (x + u)) <= c + slack:
                    break
                lo, hi = hi, 2.0 * hi
                if hi > 1e300:
                    raise InfeasibleSetError("no-erosion bound cannot be met inside F")
            for _ in range(TOL.bisection_iter):
                mid = 0.5 * (lo + hi)
                if mid <= lo or mid >= hi:
                    break
                x, u, _, _ = solve_at(mid, u)
                if float(n @ (x + u)) <= c + slack:
                    hi = mid
                else:
                    lo = mid
            lam = hi

    best = None
    total_iters = 0
    for u0 in starts:
        x, u, iters, ok = solve_at(lam, u0)
        total_iters += iters
        val = objective(x, u)
        if best is None or val < best[2]:
            best = (x, u, val, ok)
    x, u, val, ok = best
    result = Allocation(f_g_star=x, f_t_star=x + u, f_d=u, iterations=total_iters, objective=val)
    if not ok:
        raise NonConvergenceError("weighted allocation did not converge", best=result)
    return result
