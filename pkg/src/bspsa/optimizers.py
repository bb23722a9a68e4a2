"""SPSA, BSPSAS and BSPSA update rules.

All three tuners share one cycle: draw a ±1 perturbation, emit the two
perturbed parameter vectors ``theta ± delta * c_k``, observe the two-game
match score ``w`` (from the point of view of the ``+`` side) and update.

* SPSA moves each component by ``a_k / (delta * c_k) * w``.
* BSPSAS keeps an independent normal posterior per component.
* BSPSA keeps a full precision matrix and solves a linear system per step.

The numeric work lives in small numba kernels that operate in place on
arrays.  The public functions below wrap them with validation and return
fresh :class:`TunerState` objects; the simulator harness calls the same
kernels from its compiled loop, so both paths produce identical numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from numba import njit

from bspsa.linalg import _gauss_jordan_inplace, _rank1_update_inplace, diag_precision
from bspsa.schedules import GainSchedule, _a_k, _c_k, a_k, c_k

OUTCOMES = (-2, -1, 0, 1, 2)


class Method(str, Enum):
    SPSA = "spsa"
    BSPSAS = "bspsas"
    BSPSA = "bspsa"

    @property
    def code(self) -> int:
        return _METHOD_CODES[self]


_METHOD_CODES = {Method.SPSA: 0, Method.BSPSAS: 1, Method.BSPSA: 2}
SPSA_CODE, BSPSAS_CODE, BSPSA_CODE = 0, 1, 2


def check_outcome(w) -> int:
    """Validate a two-game match score and return it as an int."""
    if isinstance(w, bool) or not isinstance(w, (int, np.integer)):
        msg = f"match result must be an integer, got {w!r}"
        raise ValueError(msg)
    if int(w) not in OUTCOMES:
        msg = f"match result must be one of {OUTCOMES}, got {w}"
        raise ValueError(msg)
    return int(w)


def _positive(name: str, value) -> None:
    if value is None:
        return
    if not (math.isfinite(value) and value > 0.0):
        msg = f"{name} must be positive and finite, got {value!r}"
        raise ValueError(msg)


@dataclass(frozen=True)
class ParamSpec:
    """Static description of one tunable parameter.

    ``s1``/``sigma`` are only read by the Bayesian tuners and ``r_end`` only
    by SPSA, so each may be left unset when the other family is used.
    """

    name: str
    theta_start: float
    c_end: float
    s1: float | None = None
    sigma: float | None = None
    r_end: float | None = None
    lower: float | None = None
    upper: float | None = None
    integer_valued: bool = False

    def __post_init__(self) -> None:
        if not self.name or not isinstance(self.name, str):
            msg = f"parameter name must be a non-empty string, got {self.name!r}"
            raise ValueError(msg)
        if not math.isfinite(self.theta_start):
            msg = f"{self.name}: theta_start must be finite"
            raise ValueError(msg)
        _positive(f"{self.name}: c_end", self.c_end)
        _positive(f"{self.name}: s1", self.s1)
        _positive(f"{self.name}: sigma", self.sigma)
        _positive(f"{self.name}: r_end", self.r_end)
        if self.lower is not None and self.upper is not None and not self.lower < self.upper:
            msg = f"{self.name}: lower ({self.lower}) must be below upper ({self.upper})"
            raise ValueError(msg)


@dataclass(frozen=True)
class PerturbationDraw:
    """Signs ``delta`` of one simultaneous perturbation, each exactly ±1."""

    delta: np.ndarray

    def __post_init__(self) -> None:
        delta = np.atleast_1d(np.asarray(self.delta, dtype=np.float64))
        if delta.ndim != 1 or not np.all(np.abs(delta) == 1.0):
            msg = "perturbation components must all be +1 or -1"
            raise ValueError(msg)
        object.__setattr__(self, "delta", delta)

    def flipped(self) -> PerturbationDraw:
        return PerturbationDraw(-self.delta)


def draw_perturbation(rng: np.random.Generator, n: int) -> PerturbationDraw:
    """Fair Bernoulli ±1 signs.

    One uniform double per component, so drawing k rows at once consumes the
    generator exactly like k single draws.
    """
    return PerturbationDraw(np.where(rng.random(n) < 0.5, 1.0, -1.0))


@dataclass(frozen=True)
class TunerState:
    """Mutable-by-replacement tuner state after ``k - 1`` observed matches."""

    method: Method
    k: int
    theta: np.ndarray
    tau: float
    spreads: np.ndarray | None = None
    precision: np.ndarray | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.method, Method):
            object.__setattr__(self, "method", Method(self.method))
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=np.float64))
        if self.k < 1:
            msg = f"iteration index must be >= 1, got {self.k}"
            raise ValueError(msg)
        if self.method is Method.BSPSAS and self.spreads is None:
            msg = "BSPSAS state needs per-parameter spreads"
            raise ValueError(msg)
        if self.method is Method.BSPSA and self.precision is None:
            msg = "BSPSA state needs a precision matrix"
            raise ValueError(msg)

    @property
    def n_params(self) -> int:
        return int(self.theta.size)


def marginal_spreads(state: TunerState) -> np.ndarray | None:
    """Posterior standard deviation of each component (None for SPSA)."""
    if state.method is Method.BSPSAS:
        return state.spreads.copy()
    if state.method is Method.BSPSA:
        return np.sqrt(np.diag(np.linalg.inv(state.precision)))
    return None


# --------------------------------------------------------------------------
# compiled kernels (in place)


@njit(cache=True, nogil=True)
def _spsa_step(theta, delta, c, a, w):
    for i in range(theta.shape[0]):
        theta[i] += a[i] / (delta[i] * c[i]) * w


@njit(cache=True, nogil=True)
def _bspsas_step(theta, spreads, delta, c, sigma, tau, w):
    n = theta.shape[0]
    tau2 = tau * tau
    # Cross terms read the frozen pre-update theta.
    total = 0.0
    for j in range(n):
        total += delta[j] * c[j] * theta[j] / (sigma[j] * sigma[j])
    step = np.empty(n)
    for i in range(n):
        own = delta[i] * c[i] * theta[i] / (sigma[i] * sigma[i])
        cross = total - own if n > 1 else 0.0
        s2 = spreads[i] * spreads[i]
        sg2 = sigma[i] * sigma[i]
        den = 4.0 * c[i] * c[i] * s2 + tau2 * sg2 * sg2
        gain = 2.0 * c[i] * s2 * sg2 / den
        step[i] = delta[i] * gain * (w + cross)
        spreads[i] = math.sqrt(s2 * tau2 * sg2 * sg2 / den)
    for i in range(n):
        theta[i] += step[i]


@njit(cache=True, nogil=True)
def _bspsa_step(theta, precision, delta, c, sigma, tau, w):
    n = theta.shape[0]
    tau2 = tau * tau
    g = np.empty(n)
    for i in range(n):
        g[i] = 2.0 * delta[i] * c[i] / (sigma[i] * sigma[i])
    _rank1_update_inplace(precision, g, tau2)
    a = precision.copy()
    b = np.empty(n)
    scale = w / tau2
    for i in range(n):
        b[i] = scale * g[i]
    _gauss_jordan_inplace(a, b)
    for i in range(n):
        theta[i] += b[i]


@njit(cache=True, nogil=True)
def _clamp_inplace(theta, lower, upper):
    for i in range(theta.shape[0]):
        if theta[i] < lower[i]:
            theta[i] = lower[i]
        elif theta[i] > upper[i]:
            theta[i] = upper[i]


@njit(cache=True, nogil=True)
def _emit_inplace(x, lower, upper, integer):
    _clamp_inplace(x, lower, upper)
    for i in range(x.shape[0]):
        if integer[i]:
            x[i] = np.rint(x[i])


@njit(cache=True, nogil=True)
def _tuner_step(
    method, theta, spreads, precision, delta, k,
    c_end, r_end, n_iterations, alpha, gamma, stability, constant,
    sigma, tau, w, lower, upper,
):
    c = _c_k(c_end, n_iterations, gamma, constant, k)
    if method == SPSA_CODE:
        a = _a_k(c_end, r_end, n_iterations, alpha, stability, k)
        _spsa_step(theta, delta, c, a, w)
    elif method == BSPSAS_CODE:
        _bspsas_step(theta, spreads, delta, c, sigma, tau, w)
    else:
        _bspsa_step(theta, precision, delta, c, sigma, tau, w)
    _clamp_inplace(theta, lower, upper)


# --------------------------------------------------------------------------
# public operations


def _check_draw(state: TunerState, draw: PerturbationDraw) -> None:
    if draw.delta.shape != state.theta.shape:
        msg = f"perturbation has {draw.delta.size} components, state has {state.n_params}"
        raise ValueError(msg)


def _as_vector(value, n: int, name: str) -> np.ndarray:
    out = np.asarray(value, dtype=np.float64)
    if out.ndim == 0:
        out = np.full(n, float(out))
    if out.shape != (n,):
        msg = f"{name} has shape {out.shape}, expected ({n},)"
        raise ValueError(msg)
    return out


def propose(state: TunerState, schedule: GainSchedule, rng: np.random.Generator, specs=None):
    """Draw a perturbation and return ``(theta_plus, theta_minus, draw)``.

    With ``specs`` the emitted vectors are clamped into the parameter bounds
    and integer-valued components are rounded; ``state.theta`` itself is
    never rounded.
    """
    draw = draw_perturbation(rng, state.n_params)
    step = draw.delta * c_k(schedule, state.k)
    plus = state.theta + step
    minus = state.theta - step
    if specs is not None:
        lower, upper, integer = constraint_arrays(specs)
        _emit_inplace(plus, lower, upper, integer)
        _emit_inplace(minus, lower, upper, integer)
    return plus, minus, draw


def spsa_update(state: TunerState, draw: PerturbationDraw, w: int, schedule: GainSchedule) -> TunerState:
    """SPSA step ``theta += a_k / (delta * c_k) * w``."""
    if state.method is not Method.SPSA:
        msg = f"spsa_update called on a {state.method.value} state"
        raise ValueError(msg)
    _check_draw(state, draw)
    w = check_outcome(w)
    theta = state.theta.copy()
    _spsa_step(theta, draw.delta, c_k(schedule, state.k), a_k(schedule, state.k), float(w))
    return TunerState(state.method, state.k + 1, theta, state.tau)


def bspsa1_update(theta_k, s_k, c_k, sigma, tau, w):
    """Single-parameter conjugate normal update.

    Returns the posterior mean and spread ``(theta_next, s_next)`` after a
    match between ``theta_k + c_k`` and ``theta_k - c_k`` scored ``w``.
    Works elementwise on numpy arrays.
    """
    s2 = s_k * s_k
    sg2 = sigma * sigma
    tau2 = tau * tau
    den = 4.0 * c_k * c_k * s2 + tau2 * sg2 * sg2
    theta_next = theta_k + 2.0 * c_k * s2 * sg2 / den * w
    s_next = np.sqrt(s2 * tau2 * sg2 * sg2 / den)
    return theta_next, s_next


def bspsas_update(state: TunerState, draw: PerturbationDraw, w: int, schedule: GainSchedule, sigma) -> TunerState:
    """Bayesian update under the independent-posterior approximation."""
    if state.method is not Method.BSPSAS:
        msg = f"bspsas_update called on a {state.method.value} state"
        raise ValueError(msg)
    _check_draw(state, draw)
    w = check_outcome(w)
    theta = state.theta.copy()
    spreads = np.array(state.spreads, dtype=np.float64, copy=True)
    sigma = _as_vector(sigma, state.n_params, "sigma")
    _bspsas_step(theta, spreads, draw.delta, c_k(schedule, state.k), sigma, float(state.tau), float(w))
    return TunerState(state.method, state.k + 1, theta, state.tau, spreads=spreads)


def bspsa_update(state: TunerState, draw: PerturbationDraw, w: int, schedule: GainSchedule, sigma) -> TunerState:
    """Bayesian update with a full precision matrix.

    The precision gains ``g g^T / tau**2`` with ``g = 2 delta c_k / sigma**2``,
    then the mean shift solves ``P_new @ b = (w / tau**2) g``.  Raises
    :class:`~bspsa.linalg.SingularMatrixError` if elimination meets a zero
    pivot.
    """
    if state.method is not Method.BSPSA:
        msg = f"bspsa_update called on a {state.method.value} state"
        raise ValueError(msg)
    _check_draw(state, draw)
    w = check_outcome(w)
    theta = state.theta.copy()
    precision = np.array(state.precision, dtype=np.float64, order="C", copy=True)
    sigma = _as_vector(sigma, state.n_params, "sigma")
    _bspsa_step(theta, precision, draw.delta, c_k(schedule, state.k), sigma, float(state.tau), float(w))
    return TunerState(state.method, state.k + 1, theta, state.tau, precision=precision)


def constraint_arrays(specs) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    lower = np.array([-np.inf if p.lower is None else p.lower for p in specs], dtype=np.float64)
    upper = np.array([np.inf if p.upper is None else p.upper for p in specs], dtype=np.float64)
    integer = np.array([p.integer_valued for p in specs], dtype=np.bool_)
    return lower, upper, integer


def apply_constraints(theta, specs) -> np.ndarray:
    """Clamp each component into its bounds; unbounded components pass through."""
    out = np.array(theta, dtype=np.float64, copy=True)
    if out.shape != (len(specs),):
        msg = f"theta has shape {out.shape}, expected ({len(specs)},)"
        raise ValueError(msg)
    lower, upper, _ = constraint_arrays(specs)
    _clamp_inplace(out, lower, upper)
    return out


# --------------------------------------------------------------------------
# tuner bundle


@dataclass(frozen=True)
class Tuner:
    """A configured tuner: method, parameters, schedule and match noise."""

    method: Method
    params: tuple[ParamSpec, ...]
    schedule: GainSchedule
    tau: float
    sigma: np.ndarray = field(init=False, repr=False, compare=False)
    lower: np.ndarray = field(init=False, repr=False, compare=False)
    upper: np.ndarray = field(init=False, repr=False, compare=False)
    integer: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "method", Method(self.method))
        object.__setattr__(self, "params", tuple(self.params))
        if not self.params:
            msg = "at least one parameter is required"
            raise ValueError(msg)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            msg = "parameter names must be unique"
            raise ValueError(msg)
        _positive("tau", self.tau)
        if self.schedule.n_params != len(self.params):
            msg = "schedule and parameter list disagree on the parameter count"
            raise ValueError(msg)
        if self.method is Method.SPSA:
            if self.schedule.r_end is None:
                msg = "SPSA needs r_end for every parameter"
                raise ValueError(msg)
            sigma = np.ones(len(self.params))
        else:
            missing = [p.name for p in self.params if p.s1 is None or p.sigma is None]
            if missing:
                msg = f"{self.method.value} needs s1 and sigma; missing for {missing}"
                raise ValueError(msg)
            sigma = np.array([p.sigma for p in self.params], dtype=np.float64)
        lower, upper, integer = constraint_arrays(self.params)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "integer", integer)

    @classmethod
    def build(
        cls,
        method: Method | str,
        params,
        n_iterations: int,
        tau: float,
        *,
        alpha: float | None = None,
        gamma: float | None = None,
        stability: float | None = None,
        kind: str = "power",
    ) -> Tuner:
        params = tuple(params)
        method = Method(method)
        r_end = None
        if method is Method.SPSA:
            if any(p.r_end is None for p in params):
                msg = "SPSA needs r_end for every parameter"
                raise ValueError(msg)
            r_end = [p.r_end for p in params]
        kwargs = {}
        if alpha is not None:
            kwargs["alpha"] = alpha
        if gamma is not None:
            kwargs["gamma"] = gamma
        schedule = GainSchedule(
            c_end=[p.c_end for p in params],
            r_end=r_end,
            n_iterations=n_iterations,
            stability=stability,
            kind=kind,
            **kwargs,
        )
        return cls(method=method, params=params, schedule=schedule, tau=float(tau))

    @property
    def n_params(self) -> int:
        return len(self.params)

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.params]

    def initial_state(self, theta=None) -> TunerState:
        if theta is None:
            theta = [p.theta_start for p in self.params]
        theta = _as_vector(theta, self.n_params, "theta").copy()
        spreads = precision = None
        s1 = [p.s1 for p in self.params]
        if self.method is Method.BSPSAS:
            spreads = np.array(s1, dtype=np.float64)
        elif self.method is Method.BSPSA:
            precision = diag_precision(s1)
        return TunerState(self.method, 1, theta, self.tau, spreads, precision)

    def propose(self, state: TunerState, rng: np.random.Generator):
        return propose(state, self.schedule, rng, self.params)

    def update(self, state: TunerState, draw: PerturbationDraw, w: int) -> TunerState:
        """Apply the configured update rule, then clamp into bounds."""
        if self.method is Method.SPSA:
            new = spsa_update(state, draw, w, self.schedule)
        elif self.method is Method.BSPSAS:
            new = bspsas_update(state, draw, w, self.schedule, self.sigma)
        else:
            new = bspsa_update(state, draw, w, self.schedule, self.sigma)
        _clamp_inplace(new.theta, self.lower, self.upper)
        return new

    def emit(self, values) -> dict[str, int | float]:
        """Name-to-value map for the match source; integers where flagged."""
        return {
            p.name: int(v) if p.integer_valued else float(v)
            for p, v in zip(self.params, values)
        }

    def to_dict(self) -> dict:
        return {
            "method": self.method.value,
            "tau": self.tau,
            "schedule": self.schedule.to_dict(),
            "params": [
                {
                    "name": p.name,
                    "theta_start": p.theta_start,
                    "c_end": p.c_end,
                    "s1": p.s1,
                    "sigma": p.sigma,
                    "r_end": p.r_end,
                    "lower": p.lower,
                    "upper": p.upper,
                    "integer_valued": p.integer_valued,
                }
                for p in self.params
            ],
        }
