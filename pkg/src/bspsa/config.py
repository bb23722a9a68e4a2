"""Config file schema shared by the ``simulate`` and ``tune`` commands.

Configs are YAML (JSON is accepted too).  Unknown keys are rejected and
every error names the offending field path.  Tuner hyperparameters may be
given raw (``r_end``, ``s1``, ``sigma``) or derived from the 100-Elo
distance ``elo100`` and the distance-to-optimum estimate ``delta_theta``.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Annotated, Literal, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from bspsa.elo import HyperInputs, bspsa_hyperparams, resolve_tau, spsa_r
from bspsa.harness import ExperimentConfig, ParamTemplate
from bspsa.optimizers import Method, ParamSpec, Tuner
from bspsa.schedules import DEFAULT_ALPHA, DEFAULT_GAMMA
from bspsa.simulator import DEFAULT_CURVATURE, DEFAULT_DRAW_RATE, QuadraticLandscape

logger = logging.getLogger(__name__)

Positive = Annotated[float, Field(gt=0, allow_inf_nan=False)]
NonNegative = Annotated[float, Field(ge=0, allow_inf_nan=False)]
Probability = Annotated[float, Field(ge=0, le=1)]
PerMethod = Union[Positive, dict[Method, Positive]]


class ConfigError(Exception):
    """The config file cannot be parsed or fails validation."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ParamModel(_Strict):
    name: str = "p"
    theta_start: float | None = None
    c_end: PerMethod | None = None
    c_end_ratio: PerMethod | None = None
    s1: Positive | None = None
    sigma: Positive | None = None
    r_end: Positive | None = None
    elo100: Positive | None = None
    delta_theta: Positive | None = None
    lower: float | None = None
    upper: float | None = None
    integer_valued: bool = False

    @model_validator(mode="after")
    def _check(self) -> ParamModel:
        if (self.c_end is None) == (self.c_end_ratio is None):
            msg = "exactly one of c_end and c_end_ratio is required"
            raise ValueError(msg)
        if self.lower is not None and self.upper is not None and not self.lower < self.upper:
            msg = f"lower ({self.lower}) must be below upper ({self.upper})"
            raise ValueError(msg)
        return self


class ScheduleModel(_Strict):
    kind: Literal["power", "constant"] = "power"
    alpha: NonNegative = DEFAULT_ALPHA
    gamma: NonNegative = DEFAULT_GAMMA
    stability: NonNegative | None = None


class SimulatorModel(_Strict):
    n_params: Annotated[int, Field(ge=1)] | list[Annotated[int, Field(ge=1)]] = 1
    curvature: Positive | list[Positive] = DEFAULT_CURVATURE
    draw_rate: Annotated[float, Field(ge=0, lt=1)] = DEFAULT_DRAW_RATE
    initial_total_elo: Positive = 2.0


class ExperimentModel(_Strict):
    methods: list[Method] | None = None
    repeats: Annotated[int, Field(ge=1)] = 1
    seed: Annotated[int, Field(ge=0, lt=2**64)] = 0
    parallelism: Annotated[int, Field(ge=1)] | None = None


class OracleModel(_Strict):
    command: str | list[str] | None = None
    checkpoint_path: str = "tune.checkpoint.json"
    checkpoint_every: Annotated[int, Field(ge=1)] = 100
    timeout: Positive | None = None


class OutputModel(_Strict):
    dir: str | None = "results"
    formats: list[Literal["json", "csv"]] = ["json", "csv"]
    trajectories: bool = True


class ConfigModel(_Strict):
    method: Method | None = None
    iterations: Annotated[int, Field(ge=1)]
    tau: Positive | None = None
    draw_rate: Probability | None = None
    schedule: ScheduleModel = ScheduleModel()
    params: Annotated[list[ParamModel], Field(min_length=1)]
    simulator: SimulatorModel | None = None
    experiment: ExperimentModel = ExperimentModel()
    oracle: OracleModel | None = None
    output: OutputModel = OutputModel()


def _format_loc(loc: tuple) -> str:
    out = ""
    for part in loc:
        if isinstance(part, int):
            out += f"[{part}]"
        else:
            out += ("." if out else "") + str(part)
    return out or "<root>"


def parse_config(data, source: str = "<config>") -> ConfigModel:
    try:
        return ConfigModel.model_validate(data)
    except ValidationError as exc:
        lines = [f"{_format_loc(e['loc'])}: {e['msg']}" for e in exc.errors()]
        msg = f"{source}: invalid config\n  " + "\n  ".join(lines)
        raise ConfigError(msg) from None


def load_config(path: str | Path) -> ConfigModel:
    """Parse a YAML config, or the config embedded in a stored report."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        msg = f"cannot read config {path}: {exc}"
        raise ConfigError(msg) from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark is not None else ""
        msg = f"{path}: parse error{where}: {getattr(exc, 'problem', None) or exc}"
        raise ConfigError(msg) from None
    if isinstance(data, dict) and "cells" in data and isinstance(data.get("config"), dict):
        # a stored report: re-run its embedded config
        data = data["config"]
    if not isinstance(data, dict):
        msg = f"{path}: top level must be a mapping"
        raise ConfigError(msg)
    return parse_config(data, str(path))


def _tau_inputs(cfg: ConfigModel) -> tuple[float | None, float | None]:
    if cfg.tau is not None and cfg.draw_rate is not None:
        logger.warning("both tau and draw_rate are set; using tau=%g", cfg.tau)
        return cfg.tau, None
    return cfg.tau, cfg.draw_rate


def _per_method(value, method: Method, field: str):
    if isinstance(value, dict):
        if method not in value:
            msg = f"{field}: no value for method {method.value!r}"
            raise ConfigError(msg)
        return value[method]
    return value


def methods_for(cfg: ConfigModel) -> list[Method]:
    methods = cfg.experiment.methods or ([cfg.method] if cfg.method is not None else [])
    if not methods:
        msg = "method: required (or experiment.methods)"
        raise ConfigError(msg)
    return methods


def experiment_configs(cfg: ConfigModel) -> list[ExperimentConfig]:
    """One experiment per (method, parameter count) cell."""
    if len(cfg.params) != 1:
        msg = "params: simulate takes a single parameter template"
        raise ConfigError(msg)
    p = cfg.params[0]
    if p.theta_start is not None:
        logger.warning("params[0].theta_start is ignored in simulate mode; start offsets are drawn")
    sim = cfg.simulator or SimulatorModel()
    counts = sim.n_params if isinstance(sim.n_params, list) else [sim.n_params]
    tau, draw_rate = _tau_inputs(cfg)
    out = []
    for method in methods_for(cfg):
        for n in counts:
            if isinstance(sim.curvature, list):
                if len(sim.curvature) != n:
                    msg = f"simulator.curvature: {len(sim.curvature)} values for n_params={n}"
                    raise ConfigError(msg)
                landscape = QuadraticLandscape(sim.curvature, sim.draw_rate)
            else:
                landscape = QuadraticLandscape.uniform(n, sim.curvature, sim.draw_rate)
            c_end = None if p.c_end is None else _per_method(p.c_end, method, "params[0].c_end")
            ratio = None if p.c_end_ratio is None else _per_method(p.c_end_ratio, method, "params[0].c_end_ratio")
            template = ParamTemplate(
                c_end=c_end,
                c_end_ratio=ratio,
                s1=p.s1,
                sigma=p.sigma,
                r_end=p.r_end,
                elo100=p.elo100,
                delta_theta=p.delta_theta,
                lower=p.lower,
                upper=p.upper,
                integer_valued=p.integer_valued,
            )
            try:
                out.append(
                    ExperimentConfig(
                        method=method,
                        n_params=n,
                        n_iterations=cfg.iterations,
                        template=template,
                        landscape=landscape,
                        repeats=cfg.experiment.repeats,
                        seed=cfg.experiment.seed,
                        initial_total_elo=sim.initial_total_elo,
                        tau=tau,
                        draw_rate=draw_rate,
                        alpha=cfg.schedule.alpha,
                        gamma=cfg.schedule.gamma,
                        stability=cfg.schedule.stability,
                        schedule_kind=cfg.schedule.kind,
                        workers=cfg.experiment.parallelism,
                        record_trajectory=cfg.output.trajectories,
                    )
                )
            except ValueError as exc:
                msg = f"{method.value} n={n}: {exc}"
                raise ConfigError(msg) from exc
    return out


def _param_spec(p: ParamModel, index: int, method: Method, n_iterations: int) -> ParamSpec:
    where = f"params[{index}]"
    if p.theta_start is None:
        msg = f"{where}.theta_start: required in tune mode"
        raise ConfigError(msg)
    if p.c_end_ratio is not None:
        msg = f"{where}.c_end_ratio: only valid in simulate mode; give c_end"
        raise ConfigError(msg)
    c_end = _per_method(p.c_end, method, f"{where}.c_end")
    s1, sigma, r_end = p.s1, p.sigma, p.r_end
    if method is Method.SPSA and r_end is None:
        if p.elo100 is None:
            msg = f"{where}: SPSA needs r_end or elo100"
            raise ConfigError(msg)
        r_end = spsa_r(HyperInputs(p.elo100, n_iterations, c_end, p.delta_theta))
    if method is not Method.SPSA and (s1 is None or sigma is None):
        if (s1 is None and p.delta_theta is None) or (sigma is None and p.elo100 is None):
            msg = f"{where}: {method.value} needs s1 (or delta_theta) and sigma (or elo100)"
            raise ConfigError(msg)
        if s1 is None or sigma is None:
            derived_s1, derived_sigma = bspsa_hyperparams(
                HyperInputs(p.elo100 or sigma, n_iterations, c_end, p.delta_theta or s1)
            )
            s1 = s1 if s1 is not None else derived_s1
            sigma = sigma if sigma is not None else derived_sigma
    return ParamSpec(
        name=p.name,
        theta_start=p.theta_start,
        c_end=c_end,
        s1=s1,
        sigma=sigma,
        r_end=r_end,
        lower=p.lower,
        upper=p.upper,
        integer_valued=p.integer_valued,
    )


def tuner_from_config(cfg: ConfigModel) -> Tuner:
    """Build the tuner for an external-oracle session."""
    methods = methods_for(cfg)
    if len(methods) != 1:
        msg = "method: tune mode runs exactly one method"
        raise ConfigError(msg)
    method = methods[0]
    if cfg.simulator is not None:
        logger.warning("simulator section is ignored in tune mode")
    tau, draw_rate = _tau_inputs(cfg)
    if tau is None and draw_rate is None:
        msg = "tau: tune mode needs tau or draw_rate"
        raise ConfigError(msg)
    specs = [_param_spec(p, i, method, cfg.iterations) for i, p in enumerate(cfg.params)]
    try:
        return Tuner.build(
            method,
            specs,
            cfg.iterations,
            resolve_tau(tau, draw_rate),
            alpha=cfg.schedule.alpha,
            gamma=cfg.schedule.gamma,
            stability=cfg.schedule.stability,
            kind=cfg.schedule.kind,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def resolved_dict(cfg: ConfigModel) -> dict:
    """The config with every default filled in; loadable as a config again."""
    data = cfg.model_dump(mode="json")
    if cfg.simulator is None:
        data["simulator"] = None
    return data
