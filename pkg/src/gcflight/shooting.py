"""Single-shooting machinery shared by the vehicle MPC problems.

A candidate control schedule is rolled out through the plant; the realized
force trace ``f_k`` is then split into gravity and tracking terms in closed
form (only the aggregate of ``f_g`` enters the impulse and work costs), and
the resulting scalar cost is minimized over the box-bounded schedule by a
spectral projected-gradient method with central finite-difference gradients.
Rollouts are evaluated in batches so one gradient costs one vectorized pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .constants import TOL


@dataclass(frozen=True)
class Weights:
    w_g: float
    w_t: float
    w_e: float

    def __post_init__(self):
        from .core import DomainError
        if not (self.w_g > self.w_t > self.w_e >= 0):
            raise DomainError(
                f"weights must satisfy w_g > w_t > w_e >= 0, got {self.w_g}, {self.w_t}, {self.w_e}")


@dataclass(frozen=True)
class ShootingOptions:
    max_iter: int = 40
    fd_step: float = TOL.fd_step
    step_tol: float = 1e-7        # stop when the projected step is this small (relative to bounds)
    armijo: float = 1e-4
    backtracks: int = 12          # line-search candidates 1, 1/2, ..., evaluated in one batch
    alpha_max: float = 1e6
    alpha_min: float = 1e-12


@dataclass
class ShootingResult:
    schedule: np.ndarray            # (N, K) controls
    objective: float
    iterations: int
    converged: bool
    trace: list
    f: np.ndarray                   # (N, 3) realized force per node
    f_g: np.ndarray                 # (N, 3)
    f_t: np.ndarray                 # (N, 3)
    terms: tuple                    # weighted (gravity, tracking, energy)
    start: str = ""
    metadata: dict = field(default_factory=dict)


def gcf_split(f, a, b, w, weights: Weights, viewpoint: str = "impulse"):
    """Closed-form gravity/tracking split of realized forces.

    Shapes: ``f, a, b`` are ``(B, N, 3)``, ``w`` is ``(B, N)`` (Δt or Δh per
    node).  Given the realized forces the cost depends on ``f_g`` only through
    its aggregate ``X``; the optimal aggregate is the weighted average of the
    two targets, pushed back onto the no-erosion half-space when the tracking
    term would otherwise claim authority along the gravity direction.

    Returns ``(cost (B,), X (B, 3), terms (B, 3))``.
    """
    wg, wt, we = weights.w_g, weights.w_t, weights.w_e
    W = wg + wt
    if viewpoint == "energy":
        f = f * np.array([0.0, 0.0, 1.0])
        a = a * np.array([0.0, 0.0, 1.0])
        b = b * np.array([0.0, 0.0, 1.0])
    A = np.einsum("bn,bni->bi", w, a)
    Bt = np.einsum("bn,bni->bi", w, b)
    Phi = np.einsum("bn,bni->bi", w, f)
    X = (wg * A + wt * (Bt - Phi)) / W
    na = np.linalg.norm(A, axis=-1, keepdims=True)
    n = np.divide(A, na, out=np.zeros_like(A), where=na > 0)
    C = np.einsum("bn,bn->b", w, np.maximum(0.0, np.einsum("bi,bni->bn", n, b)))
    excess = np.einsum("bi,bi->b", n, X + Phi) - C
    X = X - np.maximum(excess, 0.0)[:, None] * n
    tg = wg * np.sum((X - A) ** 2, axis=-1)
    tt = wt * np.sum((X + Phi - Bt) ** 2, axis=-1)
    if viewpoint == "energy":
        te = we * Phi[:, 2] ** 2
    else:
        te = we * np.einsum("bn,bn->b", w, np.sum(f * f, axis=-1))
    terms = np.stack([tg, tt, te], axis=-1)
    return tg + tt + te, X, terms


def spg_minimize(cost: Callable[[np.ndarray], np.ndarray], x0: np.ndarray,
                 lower: np.ndarray, upper: np.ndarray, free: np.ndarray,
                 options: ShootingOptions = ShootingOptions()):
    """Monotone spectral projected gradient on a box with pinned entries.

    ``cost`` maps a batch ``(B, n)`` to ``(B,)``.  Entries where ``free`` is
    False are held at their (projected) starting value; their bounds should
    already encode the pin.  Returns ``(x, fx, trace, iterations, converged)``.
    """
    lower = np.asarray(lower, float)
    upper = np.asarray(upper, float)
    idx = np.flatnonzero(free)
    h = options.fd_step
    span = np.maximum(upper - lower, 1e-12)

    def project(x):
        return np.clip(x, lower, upper)

    def grad(x):
        if idx.size == 0:
            return np.zeros_like(x), float(cost(x[None, :])[0])
        pts = np.repeat(x[None, :], 2 * idx.size + 1, axis=0)
        r = np.arange(idx.size)
        pts[1 + r, idx] += h
        pts[1 + idx.size + r, idx] -= h
        vals = cost(pts)
        g = np.zeros_like(x)
        up, dn, c = vals[1:1 + idx.size], vals[1 + idx.size:], vals[0]
        with np.errstate(invalid="ignore"):
            central = (up - dn) / (2.0 * h)
            fwd = (up - c) / h
            bwd = (c - dn) / h
        # fall back to a one-sided difference where a perturbed rollout diverged
        g[idx] = np.where(np.isfinite(central), central,
                          np.where(np.isfinite(fwd), fwd, np.where(np.isfinite(bwd), bwd, 0.0)))
        return g, float(c)

    x = project(np.asarray(x0, float))
    g, fx = grad(x)
    trace = [fx]
    pg = project(x - g) - x
    alpha = 1.0 / max(np.max(np.abs(pg) / span), 1e-12)
    alpha = float(np.clip(alpha, options.alpha_min, options.alpha_max))
    lams = 0.5 ** np.arange(options.backtracks)
    for it in range(1, options.max_iter + 1):
        d = project(x - alpha * g) - x
        if np.max(np.abs(d) / span) <= options.step_tol:
            return x, fx, trace, it - 1, True
        cands = project(x[None, :] + lams[:, None] * d[None, :])
        vals = cost(cands)
        slope = float(g @ d)
        ok = vals <= fx + options.armijo * lams * slope
        if not np.any(ok):
            # no sufficient decrease along the spectral direction: retry with a short step
            d = project(x - g / max(np.max(np.abs(g) / span), 1e-300) * 1e-3) - x
            cands = project(x[None, :] + lams[:, None] * d[None, :])
            vals = cost(cands)
            ok = vals <= fx + options.armijo * lams * float(g @ d)
            if not np.any(ok):
                trace.append(fx)
                return x, fx, trace, it, bool(np.max(np.abs(d) / span) <= 1e3 * options.step_tol)
        j = int(np.argmax(ok))
        x_new = cands[j]
        g_new, f_new = grad(x_new)
        f_new = min(f_new, float(vals[j]))
        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        alpha = float(np.clip((s @ s) / sy, options.alpha_min, options.alpha_max)) if sy > 0 else options.alpha_max
        x, g = x_new, g_new
        fx = min(f_new, fx)
        trace.append(fx)
    return x, fx, trace, options.max_iter, False
