"""Intelligent Driver Model car-following law."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class IdmParams:
    """IDM parameters for a single driver.

    v0: desired speed [m/s], T: time headway [s], s0: jam spacing [m],
    a_max: maximum acceleration [m/s^2], b: comfortable deceleration [m/s^2],
    delta: free-flow exponent.
    """

    v0: float = 30.0
    T: float = 1.5
    s0: float = 2.0
    a_max: float = 1.0
    b: float = 1.5
    delta: float = 4.0

    def __post_init__(self):
        for name in ("v0", "T", "s0", "a_max", "b", "delta"):
            if getattr(self, name) <= 0:
                raise ValueError(f"IdmParams.{name} must be strictly positive")
        if self.delta < 1:
            raise ValueError("IdmParams.delta must be >= 1")


def desired_gap(v: float, dv: float, p: IdmParams) -> float:
    """Dynamic desired gap s*(v, dv), floored at the jam spacing s0.

    dv is the approach rate v_follower - v_leader (positive when closing).
    """
    s_star = p.s0 + v * p.T + v * dv / (2.0 * math.sqrt(p.a_max * p.b))
    return max(s_star, p.s0)


def idm_accel(s: float, v: float, dv: float, p: IdmParams) -> float:
    """IDM acceleration a = a_max * (1 - (v/v0)^delta - (s*/s)^2)."""
    if s <= 0:
        raise ValueError(f"spacing must be positive, got {s}")
    s_star = desired_gap(v, dv, p)
    return p.a_max * (1.0 - (v / p.v0) ** p.delta - (s_star / s) ** 2)


def equilibrium_spacing(v: float, p: IdmParams) -> float:
    """Spacing at which idm_accel(s, v, 0) == 0 for a given steady speed v < v0."""
    if not 0 <= v < p.v0:
        raise ValueError("equilibrium requires 0 <= v < v0")
    free = 1.0 - (v / p.v0) ** p.delta
    return desired_gap(v, 0.0, p) / math.sqrt(free)


def sample_heterogeneous_params(
    n: int,
    rng: np.random.Generator,
    nominal: IdmParams | None = None,
    spread: float = 0.2,
) -> list[IdmParams]:
    """Draw n parameter sets uniformly within +/-spread of the nominal values."""
    nom = nominal if nominal is not None else IdmParams()
    out = []
    for _ in range(n):
        factors = rng.uniform(1.0 - spread, 1.0 + spread, size=6)
        out.append(
            IdmParams(
                v0=nom.v0 * factors[0],
                T=nom.T * factors[1],
                s0=nom.s0 * factors[2],
                a_max=nom.a_max * factors[3],
                b=nom.b * factors[4],
                delta=max(nom.delta * factors[5], 1.0),
            )
        )
    return out
