"""Rigid-body state container and the fixed-step RK4 integrator.

The flat layout used everywhere numeric work happens is
``[p (3), v (3), q (4), omega (3)]`` (13 numbers); leading batch axes are
allowed, which is what the shooting optimizers rely on.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import DomainError, quat_normalize

P, V, Q, W = slice(0, 3), slice(3, 6), slice(6, 10), slice(10, 13)
STATE_DIM = 13


class IntegrationError(RuntimeError):
    """The integrator met a non-finite derivative or state."""

    def __init__(self, message: str, step: int | None = None, t: float | None = None):
        super().__init__(message)
        self.step = step
        self.t = t


@dataclass(frozen=True)
class RigidBodyState:
    p: np.ndarray
    v: np.ndarray
    q: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        for name, size in (("p", 3), ("v", 3), ("q", 4), ("omega", 3)):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (size,) or not np.all(np.isfinite(arr)):
                raise DomainError(f"state field {name} must be {size} finite numbers")
            object.__setattr__(self, name, arr)
        n = float(np.linalg.norm(self.q))
        if abs(n - 1.0) > 1e-6:
            raise DomainError(f"attitude quaternion must be unit-norm, got norm {n}")

    @classmethod
    def at_rest(cls, p=(0.0, 0.0, 0.0), q=(1.0, 0.0, 0.0, 0.0), v=(0.0, 0.0, 0.0)):
        return cls(p=np.asarray(p, float), v=np.asarray(v, float),
                   q=quat_normalize(np.asarray(q, float)), omega=np.zeros(3))

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.p, self.v, self.q, self.omega])

    @classmethod
    def from_array(cls, x) -> "RigidBodyState":
        x = np.asarray(x, dtype=float)
        return cls(p=x[P].copy(), v=x[V].copy(), q=x[Q].copy(), omega=x[W].copy())


@dataclass(frozen=True)
class StateDerivative:
    p_dot: np.ndarray
    v_dot: np.ndarray
    q_dot: np.ndarray
    omega_dot: np.ndarray

    @classmethod
    def from_array(cls, dx) -> "StateDerivative":
        dx = np.asarray(dx, dtype=float)
        return cls(dx[P].copy(), dx[V].copy(), dx[Q].copy(), dx[W].copy())

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.p_dot, self.v_dot, self.q_dot, self.omega_dot])


def rk4_step(x: np.ndarray, f: Callable[[np.ndarray], np.ndarray], dt: float,
             renormalize: bool = True) -> np.ndarray:
    """Classical four-stage Runge–Kutta step on flat states (batched over leading axes).

    ``f`` maps a state array to its derivative.  The quaternion block is
    renormalized after the step when the state has the rigid-body layout.
    """
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise IntegrationError("non-finite state after RK4 step")
    if renormalize and out.shape[-1] == STATE_DIM:
        out[..., Q] = out[..., Q] / np.linalg.norm(out[..., Q], axis=-1, keepdims=True)
    return out
