"""Simulator experiments: repeated tuning runs on the quadratic landscape.

A run starts every parameter at a random-sign offset that together costs
``initial_total_elo`` Elo, tunes for ``n_iterations`` two-game matches and
reports the Elo gain (initial minus final loss).  An experiment repeats the
run with per-run seeds derived from a master seed and aggregates the gains.

Randomness per run comes from three independent streams spawned from the
run seed: start-offset signs, perturbation signs and game outcomes.  The
perturbation stream is consumed exactly as :func:`bspsa.optimizers.propose`
consumes it, which is what lets an external-oracle session replay a
simulator run.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from bspsa.elo import HyperInputs, resolve_tau, spsa_r
from bspsa.optimizers import Method, ParamSpec, Tuner, _emit_inplace, _tuner_step
from bspsa.schedules import _c_k
from bspsa.simulator import QuadraticLandscape, _elo_loss, _play_match

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
CHUNK_ITERATIONS = 4096
TRAJECTORY_POINTS = 1000

_MASK64 = (1 << 64) - 1


class RunError(RuntimeError):
    """A single tuning run failed; the message carries the run context."""


class ExperimentError(RuntimeError):
    """One or more runs of an experiment failed."""


def splitmix64(x: int) -> int:
    """SplitMix64 finaliser, a bijection on 64-bit integers."""
    z = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def run_seed(master_seed: int, index: int) -> int:
    """Seed of run ``index``: ``splitmix64(master XOR index)``; injective in index."""
    return splitmix64((master_seed ^ index) & _MASK64)


def run_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    """``(offsets, perturbations, games)`` generators for one run seed."""
    children = np.random.SeedSequence(seed).spawn(3)
    return tuple(np.random.Generator(np.random.PCG64(c)) for c in children)


def perturbation_rng(seed: int) -> np.random.Generator:
    return run_streams(seed)[1]


@dataclass(frozen=True)
class ParamTemplate:
    """Hyperparameters shared by every simulated parameter.

    Unset ``s1``/``sigma``/``r_end`` are derived per parameter: the 100-Elo
    distance and the start offset come from the landscape unless
    ``elo100``/``delta_theta`` are given explicitly.  The final perturbation
    is either an absolute ``c_end`` or ``c_end_ratio`` times the start offset.
    """

    c_end: float | None = None
    c_end_ratio: float | None = None
    s1: float | None = None
    sigma: float | None = None
    r_end: float | None = None
    elo100: float | None = None
    delta_theta: float | None = None
    lower: float | None = None
    upper: float | None = None
    integer_valued: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    method: Method
    n_params: int
    n_iterations: int
    template: ParamTemplate
    landscape: QuadraticLandscape
    repeats: int = 1
    seed: int = 0
    initial_total_elo: float = 2.0
    tau: float | None = None
    draw_rate: float | None = None
    alpha: float | None = None
    gamma: float | None = None
    stability: float | None = None
    schedule_kind: str = "power"
    workers: int | None = None
    record_trajectory: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "method", Method(self.method))
        for name in ("n_params", "n_iterations", "repeats"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value or value < 1:
                msg = f"{name} must be an integer >= 1, got {value!r}"
                raise ValueError(msg)
        if self.landscape.n_params != self.n_params:
            msg = f"landscape has {self.landscape.n_params} curvatures for {self.n_params} parameters"
            raise ValueError(msg)
        if not (math.isfinite(self.initial_total_elo) and self.initial_total_elo > 0.0):
            msg = f"initial_total_elo must be positive, got {self.initial_total_elo!r}"
            raise ValueError(msg)
        if (self.template.c_end is None) == (self.template.c_end_ratio is None):
            msg = "exactly one of c_end and c_end_ratio must be set"
            raise ValueError(msg)
        if not 0 <= self.seed <= _MASK64:
            msg = "seed must be a non-negative 64-bit integer"
            raise ValueError(msg)

    @property
    def resolved_tau(self) -> float:
        draw_rate = self.landscape.draw_rate if self.draw_rate is None else self.draw_rate
        return resolve_tau(self.tau, draw_rate)

    def param_specs(self, theta_start=None) -> list[ParamSpec]:
        t = self.template
        n = self.n_params
        if theta_start is None:
            theta_start = np.zeros(n)
        elo100 = self.landscape.elo100() if t.elo100 is None else np.full(n, t.elo100)
        offsets = np.sqrt(self.initial_total_elo / n / self.landscape.curvatures)
        delta_theta = offsets if t.delta_theta is None else np.full(n, t.delta_theta)
        if t.c_end_ratio is not None:
            c_end = t.c_end_ratio * delta_theta
        else:
            c_end = np.full(n, t.c_end)
        specs = []
        for i in range(n):
            hyper = HyperInputs(float(elo100[i]), self.n_iterations, float(c_end[i]), float(delta_theta[i]))
            specs.append(
                ParamSpec(
                    name=f"p{i}",
                    theta_start=float(theta_start[i]),
                    c_end=float(c_end[i]),
                    s1=float(hyper.delta_theta) if t.s1 is None else t.s1,
                    sigma=float(hyper.elo100) if t.sigma is None else t.sigma,
                    r_end=spsa_r(hyper) if t.r_end is None else t.r_end,
                    lower=t.lower,
                    upper=t.upper,
                    integer_valued=t.integer_valued,
                )
            )
        return specs

    def tuner(self, theta_start=None) -> Tuner:
        return Tuner.build(
            self.method,
            self.param_specs(theta_start),
            self.n_iterations,
            self.resolved_tau,
            alpha=self.alpha,
            gamma=self.gamma,
            stability=self.stability,
            kind=self.schedule_kind,
        )

    def hyperparameters(self) -> dict:
        """Resolved tuner inputs, echoed into every report."""
        tuner = self.tuner()
        params = tuner.to_dict()["params"]
        for p in params:
            del p["theta_start"]
        return {
            "tau": tuner.tau,
            "schedule": tuner.schedule.to_dict(),
            "params": params,
        }


@dataclass
class RunResult:
    index: int
    seed: int
    initial_theta: np.ndarray
    final_theta: np.ndarray
    initial_loss: float
    final_loss: float
    elo_gain: float
    trajectory: list[tuple[int, float]] | None = None
    outcomes: np.ndarray | None = None

    def to_dict(self) -> dict:
        out = {
            "index": self.index,
            "seed": self.seed,
            "elo_gain": self.elo_gain,
            "initial_loss": self.initial_loss,
            "final_loss": self.final_loss,
            "initial_theta": [float(v) for v in self.initial_theta],
            "final_theta": [float(v) for v in self.final_theta],
        }
        if self.trajectory is not None:
            out["trajectory"] = [[k, loss] for k, loss in self.trajectory]
        return out


def initial_offsets(n: int, total_elo: float, curvatures, rng: np.random.Generator) -> np.ndarray:
    """Random-sign start vector whose quadratic Elo loss is ``total_elo``.

    The loss is split evenly, so ``|theta_i| = sqrt(total_elo / n / a_i)``.
    """
    a = np.asarray(curvatures, dtype=np.float64)
    if n < 1 or a.shape != (n,):
        msg = f"need n >= 1 and {n} curvatures, got shape {a.shape}"
        raise ValueError(msg)
    if not total_elo > 0.0:
        msg = f"total_elo must be positive, got {total_elo!r}"
        raise ValueError(msg)
    signs = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    return signs * np.sqrt(total_elo / n / a)


@njit(cache=True, nogil=True)
def _run_chunk(
    method, theta, spreads, precision, k0, deltas, uniforms,
    c_end, r_end, n_iterations, alpha, gamma, stability, constant,
    sigma, tau, lower, upper, integer, curvatures, draw_rate,
    outcomes, stride, traj_k, traj_loss, traj_count,
):
    m = deltas.shape[0]
    n = theta.shape[0]
    plus = np.empty(n)
    minus = np.empty(n)
    for r in range(m):
        k = k0 + r
        delta = deltas[r]
        c = _c_k(c_end, n_iterations, gamma, constant, float(k))
        for i in range(n):
            step = delta[i] * c[i]
            plus[i] = theta[i] + step
            minus[i] = theta[i] - step
        _emit_inplace(plus, lower, upper, integer)
        _emit_inplace(minus, lower, upper, integer)
        w = _play_match(curvatures, draw_rate, plus, minus, uniforms[r, 0], uniforms[r, 1])
        outcomes[r] = w
        _tuner_step(
            method, theta, spreads, precision, delta, float(k),
            c_end, r_end, n_iterations, alpha, gamma, stability, constant,
            sigma, tau, float(w), lower, upper,
        )
        if stride > 0 and (k % stride == 0 or k == n_iterations):
            traj_k[traj_count] = k
            traj_loss[traj_count] = _elo_loss(curvatures, theta)
            traj_count += 1
    return traj_count


def _trajectory_stride(n_iterations: int) -> int:
    return max(1, n_iterations // TRAJECTORY_POINTS)


def run_single(config: ExperimentConfig, seed: int, *, index: int = 0, record_outcomes: bool = False) -> RunResult:
    """One tuning run of ``config.n_iterations`` matches; deterministic in ``seed``."""
    try:
        return _run_single(config, seed, index, record_outcomes)
    except Exception as exc:
        msg = f"{config.method.value} run {index} (seed {seed}, n={config.n_params}) failed: {exc}"
        raise RunError(msg) from exc


def _run_single(config: ExperimentConfig, seed: int, index: int, record_outcomes: bool) -> RunResult:
    offsets_rng, perturb_rng, games_rng = run_streams(seed)
    landscape = config.landscape
    n, big_n = config.n_params, config.n_iterations
    theta0 = initial_offsets(n, config.initial_total_elo, landscape.curvatures, offsets_rng)
    tuner = config.tuner(theta0)
    state = tuner.initial_state()
    sched = tuner.schedule

    theta = state.theta.copy()
    spreads = state.spreads.copy() if state.spreads is not None else np.ones(n)
    precision = state.precision.copy() if state.precision is not None else np.zeros((1, 1))
    c_end = np.array(sched.c_end)
    r_end = np.array(sched.r_end) if sched.r_end is not None else np.ones(n)

    stride = _trajectory_stride(big_n) if config.record_trajectory else 0
    n_points = big_n // stride + 1 if stride else 1
    traj_k = np.zeros(n_points, dtype=np.int64)
    traj_loss = np.zeros(n_points)
    traj_count = 0
    all_outcomes = np.empty(big_n, dtype=np.int8) if record_outcomes else None

    k = 1
    while k <= big_n:
        m = min(CHUNK_ITERATIONS, big_n - k + 1)
        deltas = np.where(perturb_rng.random((m, n)) < 0.5, 1.0, -1.0)
        uniforms = games_rng.random((m, 2))
        outcomes = np.empty(m, dtype=np.int8)
        traj_count = _run_chunk(
            tuner.method.code, theta, spreads, precision, k, deltas, uniforms,
            c_end, r_end, float(big_n), float(sched.alpha), float(sched.gamma),
            sched.resolved_stability, sched.constant,
            tuner.sigma, float(tuner.tau), tuner.lower, tuner.upper, tuner.integer,
            np.array(landscape.curvatures), float(landscape.draw_rate),
            outcomes, stride, traj_k, traj_loss, traj_count,
        )
        if all_outcomes is not None:
            all_outcomes[k - 1 : k - 1 + m] = outcomes
        k += m

    initial_loss = float(_elo_loss(landscape.curvatures, theta0))
    final_loss = float(_elo_loss(landscape.curvatures, theta))
    trajectory = None
    if stride:
        trajectory = [(0, initial_loss)] + [
            (int(traj_k[i]), float(traj_loss[i])) for i in range(traj_count)
        ]
    return RunResult(
        index=index,
        seed=seed,
        initial_theta=theta0,
        final_theta=theta,
        initial_loss=initial_loss,
        final_loss=final_loss,
        elo_gain=initial_loss - final_loss,
        trajectory=trajectory,
        outcomes=all_outcomes,
    )


@dataclass
class CellReport:
    """Aggregated Elo gain of one (method, parameter count) cell."""

    method: str
    n_params: int
    n_iterations: int
    repeats: int
    mean: float
    std: float
    min: float
    max: float
    hyperparameters: dict
    runs: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


@dataclass
class ExperimentReport:
    config: dict
    cells: list[CellReport]
    wall_time: float = 0.0

    def cell(self, method: str, n_params: int) -> CellReport:
        for c in self.cells:
            if c.method == method and c.n_params == n_params:
                return c
        raise KeyError((method, n_params))

    def to_dict(self) -> dict:
        """JSON form; wall time is excluded so identical runs serialise identically."""
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "config": self.config,
            "cells": [asdict(c) for c in self.cells],
        }

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentReport:
        version = data.get("schema_version")
        if version != REPORT_SCHEMA_VERSION:
            msg = f"unsupported report schema version {version!r}"
            raise ValueError(msg)
        return cls(config=data["config"], cells=[CellReport(**c) for c in data["cells"]])


def _aggregate(config: ExperimentConfig, results: list[RunResult]) -> CellReport:
    gains = np.array([r.elo_gain for r in results])
    warnings = []
    if config.repeats == 1:
        std = 0.0
        warnings.append("repeats=1: standard deviation is undefined and reported as 0")
        logger.warning("%s n=%d: %s", config.method.value, config.n_params, warnings[-1])
    else:
        std = float(np.std(gains, ddof=1))
    return CellReport(
        method=config.method.value,
        n_params=config.n_params,
        n_iterations=config.n_iterations,
        repeats=config.repeats,
        mean=float(np.mean(gains)),
        std=std,
        min=float(np.min(gains)),
        max=float(np.max(gains)),
        hyperparameters=config.hyperparameters(),
        runs=[r.to_dict() for r in results],
        warnings=warnings,
    )


def run_cell(config: ExperimentConfig) -> CellReport:
    """Run all repeats of one configuration and aggregate them.

    Runs may execute on worker threads (the compiled loop releases the GIL);
    results are gathered by index, so the aggregate does not depend on
    scheduling.
    """
    seeds = [run_seed(config.seed, i) for i in range(config.repeats)]
    workers = config.workers or os.cpu_count() or 1
    workers = max(1, min(workers, config.repeats))

    def job(i: int) -> RunResult | Exception:
        try:
            return run_single(config, seeds[i], index=i)
        except RunError as exc:
            return exc

    if workers == 1:
        outcomes = [job(i) for i in range(config.repeats)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(job, range(config.repeats)))
    failures = [o for o in outcomes if isinstance(o, Exception)]
    if failures:
        lines = "\n".join(f"  {f}" for f in failures)
        msg = f"{len(failures)} of {config.repeats} runs failed:\n{lines}"
        raise ExperimentError(msg)
    return _aggregate(config, outcomes)


def run_experiment(config: ExperimentConfig, config_echo: dict | None = None) -> ExperimentReport:
    """Single-cell experiment report."""
    return run_grid([config], config_echo)


def run_grid(configs: list[ExperimentConfig], config_echo: dict | None = None) -> ExperimentReport:
    start = time.perf_counter()
    cells = []
    for cfg in configs:
        logger.info("running %s n=%d (%d x %d iterations)", cfg.method.value, cfg.n_params, cfg.repeats, cfg.n_iterations)
        cells.append(run_cell(cfg))
    return ExperimentReport(config=config_echo or {}, cells=cells, wall_time=time.perf_counter() - start)


# --------------------------------------------------------------------------
# report output


def format_table(report: ExperimentReport) -> str:
    """Methods as rows, parameter counts as columns, ``mean / std`` cells."""
    methods = []
    counts = []
    for c in report.cells:
        if c.method not in methods:
            methods.append(c.method)
        if c.n_params not in counts:
            counts.append(c.n_params)
    counts.sort()
    values = {(c.method, c.n_params): f"{c.mean:.5f} / {c.std:.5f}" for c in report.cells}
    headers = ["Method"] + [f"{n} parameter" + ("" if n == 1 else "s") for n in counts]
    rows = [[m.upper()] + [values.get((m, n), "-") for n in counts] for m in methods]
    widths = [max(len(r[i]) for r in [headers, *rows]) for i in range(len(headers))]

    def line(cells: list[str]) -> str:
        return " | ".join(c.ljust(w) for c, w in zip(cells, widths))

    out = ["Elo gain mean / standard deviation", line(headers), "-+-".join("-" * w for w in widths)]
    out.extend(line(r) for r in rows)
    return "\n".join(out)


def write_json(report: ExperimentReport, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_json(path: str | Path) -> ExperimentReport:
    return ExperimentReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


CSV_FIELDS = ("method", "n_params", "run", "seed", "elo_gain", "initial_loss", "final_loss")


def write_csv(report: ExperimentReport, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_FIELDS)
        for c in report.cells:
            for r in c.runs:
                writer.writerow(
                    [c.method, c.n_params, r["index"], r["seed"], repr(r["elo_gain"]),
                     repr(r["initial_loss"]), repr(r["final_loss"])]
                )
