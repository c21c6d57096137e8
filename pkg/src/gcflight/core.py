"""Math kernel: 3-vectors, attitude quaternions, frames and convex force sets.

Vectors are plain ``float64`` numpy arrays of shape ``(3,)``; every function
here is pure and returns fresh arrays.  Quaternions are scalar-first
``[w, x, y, z]`` and ``R(q)`` maps body-frame vectors into the earth frame.

Frames: the earth z-axis points *down*, toward the ground, so gravity is
``(0, 0, +g)`` and altitude above ground is ``ground_offset - p_z``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .constants import TOL

Vec3 = np.ndarray


class InfeasibleSetError(ValueError):
    """A feasible set (or its intersection with a constraint) is empty."""


class DomainError(ValueError):
    """An input lies outside the domain of an operation."""


class QuaternionNormWarning(UserWarning):
    """A quaternion handed to a rotation routine was not unit-norm."""


def as_vec3(x, name: str = "vector") -> Vec3:
    v = np.asarray(x, dtype=float)
    if v.shape != (3,):
        raise DomainError(f"{name} must have shape (3,), got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise DomainError(f"{name} must be finite, got {v}")
    return v.copy()


def skew(w: Vec3) -> np.ndarray:
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


# ---------------------------------------------------------------------------
# Quaternions
# ---------------------------------------------------------------------------

def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n == 0.0):
        raise DomainError("zero quaternion cannot be normalized")
    return q / n


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    h = 0.5 * angle
    return np.concatenate(([math.cos(h)], math.sin(h) * axis))


def quat_from_euler(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """ZYX (yaw-pitch-roll) Euler angles to a body-to-earth quaternion."""
    cr, sr = math.cos(roll / 2), math.sin(roll / 2)
    cp, sp = math.cos(pitch / 2), math.sin(pitch / 2)
    cy, sy = math.cos(yaw / 2), math.sin(yaw / 2)
    return np.array([
        cr * cp * cy + sr * sp * sy,
        sr * cp * cy - cr * sp * sy,
        cr * sp * cy + sr * cp * sy,
        cr * cp * sy - sr * sp * cy,
    ])


def quat_multiply(a, b) -> np.ndarray:
    aw, ax, ay, az = np.moveaxis(np.asarray(a, dtype=float), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, dtype=float), -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def quat_conjugate(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def rotation_matrices(q) -> np.ndarray:
    """Batched ``R(q)`` for an array of (already normalized) quaternions ``(..., 4)``."""
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=float), -1, 0)
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    rows = [
        [1 - 2 * (yy + zz), 2 * (xy - wz), 2 * (xz + wy)],
        [2 * (xy + wz), 1 - 2 * (xx + zz), 2 * (yz - wx)],
        [2 * (xz - wy), 2 * (yz + wx), 1 - 2 * (xx + yy)],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def quat_to_rotation(q) -> np.ndarray:
    """Rotation matrix mapping body-frame vectors to the earth frame.

    A quaternion whose norm is off by more than ``TOL.quat_norm`` is
    normalized first and a :class:`QuaternionNormWarning` is emitted.
    """
    q = np.asarray(q, dtype=float)
    if q.shape != (4,) or not np.all(np.isfinite(q)):
        raise DomainError(f"quaternion must be 4 finite numbers, got {q}")
    n = float(np.linalg.norm(q))
    if abs(n - 1.0) > TOL.quat_norm:
        warnings.warn(f"quaternion norm {n!r} differs from 1; normalizing",
                      QuaternionNormWarning, stacklevel=2)
        q = quat_normalize(q)
    return rotation_matrices(q)


def quat_kinematics(q, omega) -> np.ndarray:
    """q̇ = ½ [[0, -ωᵀ], [ω, -[ω]×]] q for body rates ω (batched over leading axes)."""
    q = np.asarray(q, dtype=float)
    omega = np.asarray(omega, dtype=float)
    zero = np.zeros(omega.shape[:-1] + (1,))
    return 0.5 * quat_multiply(q, np.concatenate([zero, omega], axis=-1))


def rotation_to_quat(R: np.ndarray) -> np.ndarray:
    """Shepperd's method; returns the quaternion with non-negative scalar part."""
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = quat_normalize(np.array(q))
    return q if q[0] >= 0 else -q


# ---------------------------------------------------------------------------
# Frames
# ---------------------------------------------------------------------------

def wind_to_body(alpha, beta) -> np.ndarray:
    """R_a(α, β): maps wind-frame vectors to the body frame (batched)."""
    ca, sa = np.cos(alpha), np.sin(alpha)
    cb, sb = np.cos(beta), np.sin(beta)
    zero = np.zeros_like(ca * cb)
    rows = [
        [ca * cb, -ca * sb, -sa],
        [sb, cb, zero],
        [sa * cb, -sa * sb, ca],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


@dataclass(frozen=True)
class FrameConvention:
    """Flat-earth frame set.

    Earth axes: origin at the initial position, x horizontal, z toward the
    ground, y completing a right-handed triad.  Body axes: x toward the nose,
    z downward in the symmetry plane.  The wind frame is described by the
    angle pair (alpha, beta) relative to the body frame.
    """

    earth_axes: str = "origin at initial position; x horizontal; z toward ground; right-handed"
    body_axes: str = "origin at CG; x nose; z down in symmetry plane; right-handed"
    alpha: float = 0.0
    beta: float = 0.0
    ground_offset: float = 0.0

    def wind_to_body(self) -> np.ndarray:
        return wind_to_body(self.alpha, self.beta)

    def altitude(self, p) -> float:
        return self.ground_offset - float(np.asarray(p)[2])


# ---------------------------------------------------------------------------
# Feasible force sets
# ---------------------------------------------------------------------------

class FeasibleSet:
    """Convex, closed, nonempty subset of R³ with an exact Euclidean projection.

    ``project`` accepts a single point ``(3,)`` or a stack ``(..., 3)``.
    """

    def project(self, x) -> np.ndarray:
        raise NotImplementedError

    def contains(self, x, tol: float | None = None) -> bool:
        raise NotImplementedError

    @property
    def scale(self) -> float:
        raise NotImplementedError

    def support_min(self, n) -> float:
        """min over the set of nᵀx."""
        raise NotImplementedError


@dataclass(frozen=True)
class Ball(FeasibleSet):
    radius: float

    def __post_init__(self):
        if not (np.isfinite(self.radius) and self.radius > 0):
            raise DomainError(f"ball radius must be positive, got {self.radius}")

    def project(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        n = np.linalg.norm(x, axis=-1, keepdims=True)
        inside = n <= self.radius
        safe = np.where(inside, 1.0, n)
        return np.where(inside, x, x * (self.radius / safe))

    def contains(self, x, tol=None) -> bool:
        tol = TOL.membership if tol is None else tol
        n = np.linalg.norm(np.asarray(x, dtype=float), axis=-1)
        return bool(np.all(n <= self.radius + tol * max(1.0, self.radius)))

    @property
    def scale(self) -> float:
        return float(self.radius)

    def support_min(self, n) -> float:
        return -self.radius * float(np.linalg.norm(n))


@dataclass(frozen=True)
class Box(FeasibleSet):
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = as_vec3(self.lo, "box lo")
        hi = as_vec3(self.hi, "box hi")
        if np.any(lo > hi):
            raise DomainError(f"box requires lo <= hi componentwise, got {lo} > {hi}")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def project(self, x) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=float), self.lo, self.hi)

    def contains(self, x, tol=None) -> bool:
        tol = TOL.membership if tol is None else tol
        x = np.asarray(x, dtype=float)
        slack = tol * max(1.0, self.scale)
        return bool(np.all(x >= self.lo - slack) and np.all(x <= self.hi + slack))

    @property
    def scale(self) -> float:
        return float(max(np.max(np.abs(self.lo)), np.max(np.abs(self.hi))))

    def support_min(self, n) -> float:
        n = np.asarray(n, dtype=float)
        return float(np.sum(np.minimum(n * self.lo, n * self.hi)))

    def __eq__(self, other):
        return (isinstance(other, Box) and np.array_equal(self.lo, other.lo)
                and np.array_equal(self.hi, other.hi))

    def __hash__(self):
        return hash((tuple(self.lo), tuple(self.hi)))


@dataclass(frozen=True)
class Intersection(FeasibleSet):
    """Intersection of member sets.

    A single ball with a single box is projected exactly through a scalar
    multiplier search; any other combination uses Dykstra's alternating
    projections (which, unlike plain alternation, converges to the nearest
    point rather than just some common point).
    """

    sets: tuple = field(default_factory=tuple)

    def __post_init__(self):
        flat: list[FeasibleSet] = []
        for s in self.sets:
            if isinstance(s, Intersection):
                flat.extend(s.sets)
            elif isinstance(s, FeasibleSet):
                flat.append(s)
            else:
                raise DomainError(f"not a feasible set: {s!r}")
        if not flat:
            raise DomainError("intersection needs at least one member set")
        object.__setattr__(self, "sets", tuple(flat))

    def project(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if len(self.sets) == 1:
            return self.sets[0].project(x)
        balls = [s for s in self.sets if isinstance(s, Ball)]
        boxes = [s for s in self.sets if isinstance(s, Box)]
        if len(self.sets) == 2 and len(balls) == 1 and len(boxes) == 1:
            return _project_ball_box(balls[0], boxes[0], x)
        return _dykstra(self.sets, x)

    def contains(self, x, tol=None) -> bool:
        return all(s.contains(x, tol) for s in self.sets)

    @property
    def scale(self) -> float:
        return min(s.scale for s in self.sets)

    def support_min(self, n) -> float:
        # the projection of a far-away point along -n lands on the minimizing face
        n = np.asarray(n, dtype=float)
        far = -1e9 * (1.0 + self.scale) * n / max(float(np.linalg.norm(n)), 1e-300)
        return float(n @ self.project(far))


def project(feasible_set: FeasibleSet, x) -> np.ndarray:
    """Nearest point of ``feasible_set`` to ``x``."""
    return feasible_set.project(x)


def _project_ball_box(ball: Ball, box: Box, y: np.ndarray) -> np.ndarray:
    # min ‖x-y‖² + λ(‖x‖² - r²) over the box  =>  x(λ) = clip(y/(1+λ), lo, hi);
    # ‖x(λ)‖ is non-increasing in λ, so bisect on λ.
    r2 = ball.radius ** 2
    if np.sum(box.project(np.zeros(3)) ** 2) > r2 * (1 + 1e-12):
        raise InfeasibleSetError("ball and box do not intersect")

    def evaluate(lam):
        pts = box.project(y / (1.0 + lam[..., None]))
        return pts, np.sum(pts * pts, axis=-1)

    return _smallest_multiplier(evaluate, np.full(y.shape[:-1], r2), slack=1e-14 * r2)


def _dykstra(sets: Sequence[FeasibleSet], y: np.ndarray) -> np.ndarray:
    x = y.copy()
    incs = [np.zeros_like(y) for _ in sets]
    for _ in range(TOL.intersection_max_iter):
        x_prev = x
        for i, s in enumerate(sets):
            z = x + incs[i]
            x = s.project(z)
            incs[i] = z - x
        step = np.max(np.abs(x - x_prev))
        if step <= TOL.intersection_tol * (1.0 + np.max(np.abs(x))):
            if all(s.contains(x) for s in sets):
                return x
    if all(s.contains(x) for s in sets):
        return x
    raise InfeasibleSetError(
        f"intersection projection did not reach a common point in "
        f"{TOL.intersection_max_iter} sweeps; the set is likely empty")


def _smallest_multiplier(evaluate: Callable, bound: np.ndarray, slack: float = 0.0):
    """Row-wise smallest μ ≥ 0 with ``s(μ) <= bound`` where ``(pts, s) = evaluate(μ)``.

    ``s`` must be non-increasing in μ.  Returns the points at that μ (taken
    from the feasible side of the bracket, so the bound holds exactly).
    """
    # ``slack`` lets a bound sitting exactly on the set's boundary (reachable
    # only as μ → ∞ for curved sets) be met at a finite μ
    bound = np.asarray(bound, dtype=float) + slack
    mu = np.zeros(bound.shape)
    pts, s = evaluate(mu)
    active = s > bound
    if not np.any(active):
        return pts
    # bracket: lo infeasible (s > bound), hi feasible
    lo = np.zeros(bound.shape)
    f_lo = s - bound
    # the first trial μ is the violation itself, then doubled until feasible
    hi = np.where(active, np.maximum(f_lo, 1e-12 * (1.0 + np.abs(bound))), 0.0)
    for _ in range(2100):
        _, s_hi = evaluate(hi)
        bad = active & (s_hi > bound)
        if not np.any(bad):
            break
        lo = np.where(bad, hi, lo)
        f_lo = np.where(bad, s_hi - bound, f_lo)
        hi = np.where(bad, hi * 2.0, hi)
        if np.any(hi > 1e300):
            raise InfeasibleSetError("constraint cannot be met by any point of the set")
    f_hi = np.where(active, s_hi - bound, 0.0)
    true_hi = f_hi.copy()
    # Illinois-modified regula falsi: superlinear on the smooth pieces, and
    # the bracket (with the feasible end kept) never loses the root
    tight = 1e-14 * (1.0 + np.abs(bound))
    side = np.zeros(bound.shape, dtype=int)
    for _ in range(TOL.bisection_iter):
        done = ~active | (true_hi >= -tight) | (hi - lo <= 4e-16 * hi)
        if np.all(done):
            break
        denom = f_lo - f_hi
        safe = np.where(denom > 0, denom, 1.0)
        mid = np.where(denom > 0, hi + f_hi * (hi - lo) / safe, 0.5 * (lo + hi))
        bad_mid = ~((mid > lo) & (mid < hi))
        mid = np.where(bad_mid, 0.5 * (lo + hi), mid)
        mid = np.where(done, hi, mid)
        _, s_mid = evaluate(mid)
        f_mid = s_mid - bound
        feas = (f_mid <= 0) & ~done
        infeas = (f_mid > 0) & ~done
        # Illinois: halve the stale endpoint's value when the same side moves twice
        f_lo = np.where(feas & (side == 1), 0.5 * f_lo, f_lo)
        f_hi = np.where(infeas & (side == -1), 0.5 * f_hi, f_hi)
        hi = np.where(feas, mid, hi)
        f_hi = np.where(feas, f_mid, f_hi)
        true_hi = np.where(feas, f_mid, true_hi)
        lo = np.where(infeas, mid, lo)
        f_lo = np.where(infeas, f_mid, f_lo)
        side = np.where(feas, 1, np.where(infeas, -1, side))
    pts_hi, _ = evaluate(hi)
    return np.where(active[..., None], pts_hi, pts)


def _face_slack(feasible_set, n, bound, copies: int = 1):
    """Tiny slack where the bound coincides with the set's lowest face along n."""
    n = np.asarray(n, dtype=float)
    bound = np.asarray(bound, dtype=float)
    if n.ndim == 1:
        smin = copies * feasible_set.support_min(n)
    else:
        flat = n.reshape(-1, 3)
        if np.all(flat == flat[0]):
            smin = copies * feasible_set.support_min(flat[0])
        else:
            smin = copies * np.array([feasible_set.support_min(r) for r in flat]
                                     ).reshape(n.shape[:-1])
    tiny = 1e-12 * (1.0 + feasible_set.scale)
    return np.where(bound <= smin + tiny, tiny, 0.0)


def project_with_halfspace(feasible_set: FeasibleSet, y, normal, bound) -> np.ndarray:
    """Project ``y`` onto ``feasible_set ∩ {x : normalᵀx <= bound}``.

    Exact up to floating point: the half-space multiplier μ enters as
    ``x(μ) = P_F(y - μ·normal)`` and is found by bisection.
    """
    y = np.asarray(y, dtype=float)
    n = np.asarray(normal, dtype=float)
    b = np.asarray(bound, dtype=float)

    def evaluate(mu):
        pts = feasible_set.project(y - mu[..., None] * n)
        return pts, np.sum(pts * n, axis=-1)

    return _smallest_multiplier(evaluate, b, slack=_face_slack(feasible_set, n, b))


def project_pair_with_halfspace(feasible_set: FeasibleSet, x0, u0, normal, bound):
    """Project pairs ``(x, u)`` onto ``{x ∈ F, u ∈ F, normalᵀ(x + u) <= bound}`` row-wise."""
    x0 = np.asarray(x0, dtype=float)
    u0 = np.asarray(u0, dtype=float)
    n = np.asarray(normal, dtype=float)

    def evaluate(mu):
        shift = mu[..., None] * n
        px = feasible_set.project(x0 - shift)
        pu = feasible_set.project(u0 - shift)
        both = np.concatenate([px, pu], axis=-1)
        return both, np.sum((px + pu) * n, axis=-1)

    bound = np.asarray(bound, dtype=float)
    both = _smallest_multiplier(evaluate, bound,
                                slack=_face_slack(feasible_set, n, bound, copies=2))
    return both[..., :3], both[..., 3:]


# ---------------------------------------------------------------------------
# Disturbance split
# ---------------------------------------------------------------------------

def decompose_disturbance(d, g) -> tuple[Vec3, Vec3]:
    """Split ``d`` into its component along ``g`` and the orthogonal remainder."""
    d = as_vec3(d, "disturbance")
    g = as_vec3(g, "gravity")
    ng = float(np.linalg.norm(g))
    if ng == 0.0:
        raise DomainError("gravity vector must be nonzero")
    n = g / ng          # exact for axis-aligned gravity
    d_g = float(n @ d) * n
    return d_g, d - d_g
