"""Synthetic match source on a quadratic Elo landscape.

Every parameter has its optimum at 0 and costs ``a_i * theta_i**2`` Elo
when displaced, additively across parameters.  A single game between two
parameter vectors is drawn with a fixed probability ``d`` and the remaining
mass is split according to the logistic Elo expectation, so for equal
engines the two-game score has standard deviation ``sqrt(2 (1 - d))``.
The two games of a match are independent; colours are not modelled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numba import njit

from bspsa.elo import wp_from_elo

DEFAULT_CURVATURE: float = 0.01
DEFAULT_DRAW_RATE: float = 0.82


@dataclass(frozen=True)
class QuadraticLandscape:
    """Per-parameter curvatures (Elo per squared unit) and the draw rate."""

    curvatures: np.ndarray
    draw_rate: float = DEFAULT_DRAW_RATE

    def __post_init__(self) -> None:
        a = np.atleast_1d(np.asarray(self.curvatures, dtype=np.float64)).copy()
        if a.ndim != 1 or a.size == 0:
            msg = "curvatures must be a non-empty vector"
            raise ValueError(msg)
        if not np.all(np.isfinite(a)) or np.any(a <= 0.0):
            msg = "every curvature must be positive and finite"
            raise ValueError(msg)
        a.flags.writeable = False
        object.__setattr__(self, "curvatures", a)
        if not 0.0 <= self.draw_rate < 1.0:
            msg = f"draw_rate must lie in [0, 1), got {self.draw_rate!r}"
            raise ValueError(msg)

    @classmethod
    def uniform(cls, n: int, curvature: float = DEFAULT_CURVATURE, draw_rate: float = DEFAULT_DRAW_RATE):
        return cls(np.full(n, float(curvature)), draw_rate)

    @property
    def n_params(self) -> int:
        return int(self.curvatures.size)

    def elo100(self) -> np.ndarray:
        """Per-parameter distance from the optimum that costs 100 Elo."""
        return np.sqrt(100.0 / self.curvatures)


class GameProbabilities(NamedTuple):
    win: float
    draw: float
    loss: float
    clamped: bool


def elo_loss(landscape: QuadraticLandscape, theta) -> float:
    """Elo deficit of ``theta`` relative to the optimum."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != landscape.curvatures.shape:
        msg = f"theta has shape {theta.shape}, expected {landscape.curvatures.shape}"
        raise ValueError(msg)
    return float(_elo_loss(landscape.curvatures, theta))


def game_probabilities(elo_diff: float, d: float) -> GameProbabilities:
    """Win/draw/loss probabilities of one game for the side ``elo_diff`` stronger.

    ``clamped`` is set when the symmetric draw split would have produced a
    negative win or loss probability and the triple had to be renormalised.
    """
    if not 0.0 <= d < 1.0:
        msg = f"draw rate must lie in [0, 1), got {d!r}"
        raise ValueError(msg)
    wp = wp_from_elo(elo_diff)
    win = wp - d / 2.0
    loss = 1.0 - wp - d / 2.0
    draw = float(d)
    clamped = win < 0.0 or loss < 0.0
    if clamped:
        win, loss = max(win, 0.0), max(loss, 0.0)
        total = win + draw + loss
        win, draw, loss = win / total, draw / total, loss / total
    return GameProbabilities(win, draw, loss, clamped)


@njit(cache=True, nogil=True)
def _elo_loss(curvatures, theta):
    total = 0.0
    for i in range(theta.shape[0]):
        total += curvatures[i] * theta[i] * theta[i]
    return total


@njit(cache=True, nogil=True)
def _wp(x):
    if x >= 0.0:
        return 1.0 / (1.0 + 10.0 ** (-x / 400.0))
    t = 10.0 ** (x / 400.0)
    return t / (1.0 + t)


@njit(cache=True, nogil=True)
def _score_game(p_win, p_draw, u):
    if u < p_win:
        return 1
    if u < p_win + p_draw:
        return 0
    return -1


@njit(cache=True, nogil=True)
def _play_match(curvatures, d, plus, minus, u1, u2):
    x = _elo_loss(curvatures, minus) - _elo_loss(curvatures, plus)
    wp = _wp(x)
    p_win = wp - d / 2.0
    p_loss = 1.0 - wp - d / 2.0
    p_draw = d
    if p_win < 0.0 or p_loss < 0.0:
        p_win = max(p_win, 0.0)
        p_loss = max(p_loss, 0.0)
        total = p_win + p_draw + p_loss
        p_win /= total
        p_draw /= total
    return _score_game(p_win, p_draw, u1) + _score_game(p_win, p_draw, u2)


def play_match(landscape: QuadraticLandscape, theta_plus, theta_minus, rng: np.random.Generator) -> int:
    """Two independent games between ``theta_plus`` and ``theta_minus``.

    Returns the score in ``{-2, ..., 2}`` from the ``theta_plus`` side.
    """
    plus = np.asarray(theta_plus, dtype=np.float64)
    minus = np.asarray(theta_minus, dtype=np.float64)
    if plus.shape != landscape.curvatures.shape or minus.shape != plus.shape:
        msg = "match vectors must match the landscape dimension"
        raise ValueError(msg)
    u = rng.random(2)
    return int(_play_match(landscape.curvatures, float(landscape.draw_rate), plus, minus, u[0], u[1]))


@njit(cache=True, nogil=True)
def _play_matches(curvatures, d, plus, minus, uniforms, out):
    for i in range(out.shape[0]):
        out[i] = _play_match(curvatures, d, plus, minus, uniforms[i, 0], uniforms[i, 1])


def sample_matches(landscape: QuadraticLandscape, theta_plus, theta_minus, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` independent matches between the same pair; consumes ``rng`` like ``n`` calls of :func:`play_match`."""
    plus = np.asarray(theta_plus, dtype=np.float64)
    minus = np.asarray(theta_minus, dtype=np.float64)
    if plus.shape != landscape.curvatures.shape or minus.shape != plus.shape:
        msg = "match vectors must match the landscape dimension"
        raise ValueError(msg)
    out = np.empty(int(n), dtype=np.int8)
    _play_matches(landscape.curvatures, float(landscape.draw_rate), plus, minus, rng.random((int(n), 2)), out)
    return out


def expected_w(theta, theta_k, c_k, delta, sigmas) -> float:
    """Model expectation of the match score under the normal strength model.

    Diagnostic only; no update rule calls it.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
    theta_k = np.atleast_1d(np.asarray(theta_k, dtype=np.float64))
    exponent = float(np.sum(2.0 * np.asarray(delta) * np.asarray(c_k) * (theta - theta_k) / np.asarray(sigmas) ** 2))
    # 2 (WR - 1) / (WR + 1) == 2 tanh(exponent / 2), without overflow.
    return 2.0 * math.tanh(exponent / 2.0)
