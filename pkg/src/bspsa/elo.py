"""Elo/score conversions and closed-form tuner hyperparameters."""

from __future__ import annotations

import math
from dataclasses import dataclass

# Fitted constants of the SPSA R-variable rule.
SPSA_R_SCALE: float = 19362.0
SPSA_R_ELO_REF: float = 11405.0
SPSA_R_N_EXPONENT: float = 0.6
SPSA_R_C_EXPONENT: float = 1.6


def wp_from_elo(x: float) -> float:
    """Expected score of a player who is ``x`` Elo points stronger.

    Evaluated in a form that cannot overflow for large ``|x|``.
    """
    x = float(x)
    if not math.isfinite(x):
        msg = f"Elo difference must be finite, got {x!r}"
        raise ValueError(msg)
    if x >= 0.0:
        return 1.0 / (1.0 + 10.0 ** (-x / 400.0))
    t = 10.0 ** (x / 400.0)
    return t / (1.0 + t)


def tau_from_draw_rate(d: float) -> float:
    """Standard deviation of a two-game match score between equal engines.

    Each game is drawn with probability ``d`` and otherwise won or lost with
    equal probability, so one game has variance ``1 - d`` and the pair has
    ``2 * (1 - d)``.
    """
    d = float(d)
    if not 0.0 <= d <= 1.0:
        msg = f"draw rate must lie in [0, 1], got {d!r}"
        raise ValueError(msg)
    return math.sqrt(2.0 * (1.0 - d))


def resolve_tau(tau: float | None = None, draw_rate: float | None = None) -> float:
    """Pick the match-noise scale; an explicit ``tau`` takes precedence."""
    if tau is not None:
        if not (math.isfinite(tau) and tau > 0.0):
            msg = f"tau must be positive and finite, got {tau!r}"
            raise ValueError(msg)
        return float(tau)
    if draw_rate is None:
        msg = "either tau or draw_rate is required"
        raise ValueError(msg)
    tau = tau_from_draw_rate(draw_rate)
    if tau <= 0.0:
        msg = "draw_rate of 1 gives tau = 0, which the Bayesian updates cannot use"
        raise ValueError(msg)
    return tau


@dataclass(frozen=True)
class HyperInputs:
    """Per-parameter inputs of the hyperparameter rules.

    ``elo100`` is the parameter-space distance that costs 100 Elo,
    ``c_end`` the final perturbation size and ``delta_theta`` an estimate of
    how far the start value sits from the optimum.
    """

    elo100: float
    n_iterations: int
    c_end: float
    delta_theta: float | None = None

    def __post_init__(self) -> None:
        for name in ("elo100", "c_end", "delta_theta"):
            value = getattr(self, name)
            if value is None and name == "delta_theta":
                continue
            if not (math.isfinite(value) and value > 0.0):
                msg = f"{name} must be positive and finite, got {value!r}"
                raise ValueError(msg)
        if isinstance(self.n_iterations, bool) or int(self.n_iterations) != self.n_iterations:
            msg = f"n_iterations must be an integer, got {self.n_iterations!r}"
            raise ValueError(msg)
        if self.n_iterations < 1:
            msg = f"n_iterations must be >= 1, got {self.n_iterations}"
            raise ValueError(msg)


def spsa_r(h: HyperInputs) -> float:
    """Final SPSA step ratio ``R = a_N / c_N**2`` for a parameter."""
    numerator = SPSA_R_SCALE * math.log1p(h.elo100 / SPSA_R_ELO_REF)
    denominator = h.n_iterations**SPSA_R_N_EXPONENT * h.c_end**SPSA_R_C_EXPONENT
    return numerator / denominator


def bspsa_hyperparams(h: HyperInputs) -> tuple[float, float]:
    """Prior spread and strength scale ``(s1, sigma)`` for BSPSA(S).

    The prior spread is the distance to the optimum and the strength scale
    is the 100-Elo distance; neither depends on the iteration budget.
    """
    if h.delta_theta is None:
        msg = "delta_theta (distance from the optimum) is required for s1"
        raise ValueError(msg)
    return float(h.delta_theta), float(h.elo100)
