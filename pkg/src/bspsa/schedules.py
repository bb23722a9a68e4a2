"""Gain sequences c_k and a_k.

Both sequences are anchored at the final iteration N:

    c_k = c_end * (N / k) ** gamma
    a_k = R * c_end**2 * ((A + N) / (A + k)) ** alpha

so that ``c_N == c_end`` and ``a_N / c_N**2 == R``.  The "constant" kind
keeps ``c_k = c_end`` for every k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

DEFAULT_ALPHA: float = 0.602
DEFAULT_GAMMA: float = 0.101
DEFAULT_STABILITY_FRACTION: float = 0.1

SCHEDULE_KINDS = ("power", "constant")


def default_stability(n_iterations: int) -> float:
    """Stability constant A = 0.1 N, rounded to the nearest integer."""
    return float(round(DEFAULT_STABILITY_FRACTION * n_iterations))


@njit(cache=True, nogil=True)
def _c_k(c_end, n_iterations, gamma, constant, k):
    if constant:
        return c_end.copy()
    return c_end * (n_iterations / k) ** gamma


@njit(cache=True, nogil=True)
def _a_k(c_end, r_end, n_iterations, alpha, stability, k):
    return r_end * c_end * c_end * ((stability + n_iterations) / (stability + k)) ** alpha


@dataclass(frozen=True)
class GainSchedule:
    """Per-parameter perturbation and step schedules over ``n_iterations``.

    ``c_end`` and ``r_end`` hold one value per parameter; ``r_end`` is only
    needed for SPSA steps.
    """

    c_end: np.ndarray
    n_iterations: int
    r_end: np.ndarray | None = None
    alpha: float = DEFAULT_ALPHA
    gamma: float = DEFAULT_GAMMA
    stability: float | None = None
    kind: str = "power"
    _resolved_stability: float = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        c_end = np.atleast_1d(np.asarray(self.c_end, dtype=np.float64)).copy()
        if c_end.ndim != 1 or not np.isfinite(c_end).all() or (c_end <= 0.0).any():
            msg = "c_end must be a vector of positive finite values"
            raise ValueError(msg)
        c_end.flags.writeable = False
        object.__setattr__(self, "c_end", c_end)

        if self.r_end is not None:
            r_end = np.atleast_1d(np.asarray(self.r_end, dtype=np.float64)).copy()
            if r_end.shape != c_end.shape:
                msg = f"r_end has shape {r_end.shape}, expected {c_end.shape}"
                raise ValueError(msg)
            if not np.isfinite(r_end).all() or (r_end <= 0.0).any():
                msg = "r_end must be positive and finite"
                raise ValueError(msg)
            r_end.flags.writeable = False
            object.__setattr__(self, "r_end", r_end)

        if isinstance(self.n_iterations, bool) or int(self.n_iterations) != self.n_iterations:
            msg = f"n_iterations must be an integer, got {self.n_iterations!r}"
            raise ValueError(msg)
        if self.n_iterations < 1:
            msg = f"n_iterations must be >= 1, got {self.n_iterations}"
            raise ValueError(msg)
        object.__setattr__(self, "n_iterations", int(self.n_iterations))

        for name in ("alpha", "gamma"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0.0):
                msg = f"{name} must be finite and >= 0, got {value!r}"
                raise ValueError(msg)
        if self.kind not in SCHEDULE_KINDS:
            msg = f"schedule kind must be one of {SCHEDULE_KINDS}, got {self.kind!r}"
            raise ValueError(msg)

        stability = (
            default_stability(self.n_iterations) if self.stability is None else float(self.stability)
        )
        if not (math.isfinite(stability) and stability >= 0.0):
            msg = f"stability must be finite and >= 0, got {stability!r}"
            raise ValueError(msg)
        object.__setattr__(self, "_resolved_stability", stability)

    @property
    def n_params(self) -> int:
        return int(self.c_end.size)

    @property
    def resolved_stability(self) -> float:
        return self._resolved_stability

    @property
    def constant(self) -> bool:
        return self.kind == "constant"

    def _check_k(self, k: int) -> None:
        if isinstance(k, bool) or int(k) != k or not 1 <= k <= self.n_iterations:
            msg = f"iteration k must be an integer in [1, {self.n_iterations}], got {k!r}"
            raise ValueError(msg)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "alpha": self.alpha,
            "gamma": self.gamma,
            "stability": self.resolved_stability,
            "n_iterations": self.n_iterations,
        }


def c_k(schedule: GainSchedule, k: int) -> np.ndarray:
    """Perturbation magnitudes at iteration ``k`` (1-based)."""
    schedule._check_k(k)
    return _c_k(
        schedule.c_end, float(schedule.n_iterations), float(schedule.gamma), schedule.constant, float(k)
    )


def a_k(schedule: GainSchedule, k: int) -> np.ndarray:
    """SPSA step gains at iteration ``k`` (1-based)."""
    schedule._check_k(k)
    if schedule.r_end is None:
        msg = "a_k needs r_end; the schedule was built without SPSA step ratios"
        raise ValueError(msg)
    return _a_k(
        schedule.c_end,
        schedule.r_end,
        float(schedule.n_iterations),
        float(schedule.alpha),
        schedule.resolved_stability,
        float(k),
    )
