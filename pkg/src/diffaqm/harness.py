"""Experiment configuration, orchestration and output files.

Config files are TOML.  Top-level keys: ``preset``, ``model``,
``replications``, ``workers``, ``output``; tables ``[queue]``,
``[source]``, ``[controller]`` and ``[run]``.  See the README for the full
schema.  Every run writes ``timeseries_<model>.csv`` (ensemble averages on
the common time grid) and ``summary.json`` (statistics plus a config echo
sufficient to repeat the run).
"""
from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .controllers import ConstantDrop, PiAlphaConfig, RedConfig
from .des_oracle import run_des_trajectory
from .feedback_loop import EnsembleResult, MixedModelConfig, run_ensemble, run_replication
from .trajectory import COLUMNS

__all__ = [
    "ConfigError",
    "PRESETS",
    "ExperimentSpec",
    "ModelSummary",
    "SummaryReport",
    "load_config",
    "parse_config",
    "run_experiment",
    "run_sweep",
    "summarize",
    "write_timeseries",
]

MODELS = ("diffusion", "des")
RUNNERS = {"diffusion": run_replication, "des": run_des_trajectory}


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key when known."""

    def __init__(self, reason: str, field: str | None = None):
        super().__init__(f"{field}: {reason}" if field else reason)
        self.field = field
        self.reason = reason

    def record(self) -> dict:
        return {"error": "config", "field": self.field, "reason": self.reason}


PRESETS: dict[str, dict] = {
    "red-sec5": {
        "queue": {"capacity": 30, "mu": 1.0},
        "controller": {"type": "red", "min_th": 10.0, "max_th": 20.0},
    },
    "pia-1": {
        "queue": {"capacity": 30, "mu": 1.0},
        "controller": {"type": "pi-alpha", "k_p": 0.0001, "k_i": 0.0004, "order": -1.2, "setpoint": 10.0},
    },
    "pia-2": {
        "queue": {"capacity": 30, "mu": 1.0},
        "controller": {"type": "pi-alpha", "k_p": 0.0001, "k_i": 0.0014, "order": -0.8, "setpoint": 10.0},
    },
    "pia-3": {
        "queue": {"capacity": 30, "mu": 1.0},
        "controller": {"type": "pi-alpha", "k_p": 0.0001, "k_i": 0.0040, "order": -0.4, "setpoint": 10.0},
    },
}

TOP_KEYS = {"preset", "model", "replications", "workers", "output"}
SECTION_KEYS = {
    "queue": {"capacity", "mu", "c2_a", "c2_b"},
    "source": {"zeta", "lambda0", "lambda_min", "lambda_max", "feedback_delay", "adaptive"},
    "controller": {"type", "min_th", "max_th", "p_max", "ewma_weight", "des_ewma_weight",
                   "k_p", "k_i", "order", "setpoint", "window", "literal_sign", "p"},
    "run": {"horizon", "seed", "warmup_fraction", "grid_dt", "points_per_unit", "lambda_resolution"},
}
CONTROLLER_KEYS = {
    "red": {"min_th", "max_th", "p_max", "ewma_weight", "des_ewma_weight"},
    "pi-alpha": {"k_p", "k_i", "order", "setpoint", "window", "literal_sign"},
    "constant": {"p"},
    "none": set(),
}
CONFIG_FIELDS = {  # (section, key) -> MixedModelConfig field
    ("queue", "capacity"): "capacity", ("queue", "mu"): "mu",
    ("queue", "c2_a"): "c2_a", ("queue", "c2_b"): "c2_b",
    ("source", "zeta"): "zeta", ("source", "lambda0"): "lambda0",
    ("source", "lambda_min"): "lambda_min", ("source", "lambda_max"): "lambda_max",
    ("source", "feedback_delay"): "feedback_delay", ("source", "adaptive"): "adaptive_source",
    ("run", "horizon"): "horizon", ("run", "seed"): "seed",
    ("run", "warmup_fraction"): "warmup_fraction", ("run", "grid_dt"): "grid_dt",
    ("run", "points_per_unit"): "points_per_unit", ("run", "lambda_resolution"): "lambda_resolution",
}


@dataclass(frozen=True)
class ExperimentSpec:
    config: MixedModelConfig
    model: str = "both"
    replications: int = 100
    workers: int | None = None
    output: Path = Path("results")
    preset: str | None = None
    tables: dict = field(default_factory=dict, compare=False)  # resolved config tables

    def __post_init__(self):
        if self.model not in MODELS + ("both",):
            raise ConfigError(f"unknown model {self.model!r}", "model")
        if not isinstance(self.replications, int) or self.replications < 1:
            raise ConfigError("replications must be ≥ 1", "replications")
        if self.workers is not None and self.workers < 1:
            raise ConfigError("workers must be ≥ 1", "workers")

    @property
    def models(self) -> tuple[str, ...]:
        return MODELS if self.model == "both" else (self.model,)

    def with_overrides(self, **kw) -> "ExperimentSpec":
        """Return a copy with top-level or dotted ``section.key`` overrides."""
        top = {k: v for k, v in kw.items() if "." not in k and v is not None}
        dotted = {k: v for k, v in kw.items() if "." in k}
        tables = {s: dict(t) for s, t in self.tables.items()}
        for key, value in dotted.items():
            section, name = key.split(".", 1)
            tables.setdefault(section, {})[name] = value
        if "seed" in top:
            tables.setdefault("run", {})["seed"] = top.pop("seed")
        raw = {"model": self.model, "replications": self.replications,
               "workers": self.workers, "output": str(self.output), **tables}
        raw.update(top)
        if "output" in top:
            raw["output"] = str(top["output"])
        return _build(raw, preset_name=self.preset)


def _check_keys(raw: dict, allowed: set, where: str | None) -> None:
    for key in raw:
        if key not in allowed:
            raise ConfigError("unknown key", f"{where}.{key}" if where else key)


def _number(value, name, kind=float):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", name)
    if kind is int:
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError("expected an integer", name)
        return int(value)
    if not math.isfinite(value) and name != "source.lambda_max":
        raise ConfigError("must be finite", name)
    return float(value)


def _controller(table: dict):
    kind = table.get("type", "none")
    if kind not in CONTROLLER_KEYS:
        raise ConfigError(f"unknown controller type {kind!r}", "controller.type")
    for key in table:
        if key != "type" and key not in CONTROLLER_KEYS[kind]:
            raise ConfigError(f"not a {kind} parameter", f"controller.{key}")
    kw = {k: v for k, v in table.items() if k not in ("type", "des_ewma_weight")}
    for k, v in kw.items():
        if k == "literal_sign":
            if not isinstance(v, bool):
                raise ConfigError("expected true or false", "controller.literal_sign")
        else:
            kw[k] = _number(v, f"controller.{k}", int if k == "window" else float)
    try:
        if kind == "red":
            return RedConfig(**kw)
        if kind == "pi-alpha":
            missing = {"k_p", "k_i", "order", "setpoint"} - kw.keys()
            if missing:
                raise ConfigError("missing parameter", f"controller.{sorted(missing)[0]}")
            return PiAlphaConfig(**kw)
        if kind == "constant":
            return ConstantDrop(**kw)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc), "controller") from exc
    return None


def _build(raw: dict, preset_name=None) -> ExperimentSpec:
    _check_keys(raw, TOP_KEYS | SECTION_KEYS.keys(), None)
    name = raw.get("preset", preset_name)
    tables = {s: {} for s in SECTION_KEYS}
    if name is not None:
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}", "preset")
        for section, values in PRESETS[name].items():
            tables[section].update(values)
    for section, allowed in SECTION_KEYS.items():
        table = raw.get(section, {})
        if not isinstance(table, dict):
            raise ConfigError("expected a table", section)
        _check_keys(table, allowed, section)
        if name is not None and section == "controller" and table and preset_name is None:
            fixed = set(table) & set(PRESETS[name].get(section, {}))
            if fixed:
                raise ConfigError(f"fixed by preset {name!r}", f"{section}.{sorted(fixed)[0]}")
        if name is not None and section == "queue" and preset_name is None:
            fixed = set(table) & set(PRESETS[name]["queue"])
            if fixed:
                raise ConfigError(f"fixed by preset {name!r}", f"queue.{sorted(fixed)[0]}")
        tables[section].update(table)

    kw = {}
    for (section, key), attr in CONFIG_FIELDS.items():
        if key in tables[section]:
            value = tables[section][key]
            if key == "adaptive":
                if not isinstance(value, bool):
                    raise ConfigError("expected true or false", "source.adaptive")
                kw[attr] = value
            else:
                kind = int if key in ("capacity", "seed", "points_per_unit") else float
                kw[attr] = _number(value, f"{section}.{key}", kind)
    if "des_ewma_weight" in tables["controller"]:
        kw["des_ewma_weight"] = _number(tables["controller"]["des_ewma_weight"],
                                        "controller.des_ewma_weight")
    kw["controller"] = _controller(tables["controller"])
    try:
        config = MixedModelConfig(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    replications = raw.get("replications", 100)
    if isinstance(replications, bool) or not isinstance(replications, int):
        raise ConfigError("expected an integer", "replications")
    workers = raw.get("workers")
    if workers is not None and (isinstance(workers, bool) or not isinstance(workers, int)):
        raise ConfigError("expected an integer", "workers")
    model = raw.get("model", "both")
    if not isinstance(model, str):
        raise ConfigError("expected a string", "model")
    return ExperimentSpec(config=config, model=model, replications=replications,
                          workers=workers, output=Path(raw.get("output", "results")),
                          preset=name, tables=tables)


def parse_config(text: str) -> ExperimentSpec:
    """Parse and validate TOML config text; an empty document is a parse error."""
    if not text.strip():
        raise ConfigError("parse error: empty configuration")
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"parse error: {exc}") from exc
    return _build(raw)


def load_config(path) -> ExperimentSpec:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from exc
    return parse_config(text)


def config_echo(config: MixedModelConfig) -> dict:
    """JSON-ready description of a config, enough to repeat the run."""
    echo = dataclasses.asdict(dataclasses.replace(config, controller=None))
    ctrl = config.controller
    if ctrl is None:
        echo["controller"] = {"type": "none"}
    else:
        kind = {RedConfig: "red", PiAlphaConfig: "pi-alpha", ConstantDrop: "constant"}[type(ctrl)]
        echo["controller"] = {"type": kind, **dataclasses.asdict(ctrl)}
    if math.isinf(echo["lambda_max"]):
        echo["lambda_max"] = "inf"
    return echo


@dataclass(frozen=True)
class ModelSummary:
    mean_queue: float
    stderr: float
    total_losses: int
    replications: int
    final_lambda: dict

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class SummaryReport:
    models: dict[str, ModelSummary]
    config: dict
    seed: int
    preset: str | None = None
    replications: int = 1

    def as_dict(self) -> dict:
        return {
            "preset": self.preset,
            "seed": self.seed,
            "replications": self.replications,
            "config": self.config,
            "models": {k: v.as_dict() for k, v in self.models.items()},
        }


def _lambda_stats(final):
    final = np.asarray(final, dtype=float)
    q = np.quantile(final, [0.1, 0.5, 0.9])
    return {"mean": float(final.mean()), "std": float(final.std()),
            "p10": float(q[0]), "p50": float(q[1]), "p90": float(q[2])}


def _from_stats(rep_means, rep_losses, final_lambdas) -> ModelSummary:
    rep_means = np.asarray(rep_means, dtype=float)
    r = len(rep_means)
    stderr = float(rep_means.std(ddof=1) / math.sqrt(r)) if r > 1 else 0.0
    return ModelSummary(float(rep_means.mean()), stderr, int(np.sum(rep_losses)), r,
                        _lambda_stats(final_lambdas))


def summarize(trajectories, warmup_fraction: float = 0.2) -> ModelSummary:
    """Statistics over replications: long-run means exclude the warm-up."""
    trajectories = list(trajectories)
    if not trajectories:
        raise ValueError("no trajectories")
    return _from_stats([tr.long_run_mean(warmup_fraction) for tr in trajectories],
                       [tr.total_losses for tr in trajectories],
                       [tr.lam[-1] for tr in trajectories])


def summarize_ensemble(result: EnsembleResult) -> ModelSummary:
    return _from_stats(result.rep_means, result.rep_losses, result.final_lambdas)


class NumericalOutputError(ArithmeticError):
    pass


def write_timeseries(path, result: EnsembleResult) -> int:
    """Write ensemble averages as CSV; returns the number of data rows."""
    cols = [result.grid] + [result.averages[c if c != "lambda" else "lam"] for c in COLUMNS[1:]]
    table = np.column_stack(cols)
    if not np.all(np.isfinite(table)):
        raise NumericalOutputError(f"non-finite value in time series for {path}")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COLUMNS)
        for row in table:
            writer.writerow([f"{v:.6g}" for v in row])
    return len(table)


def _dump_json(path, obj) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def run_experiment(spec: ExperimentSpec, out_dir=None) -> SummaryReport:
    """Run every requested model and write its CSV plus ``summary.json``."""
    out = Path(spec.output if out_dir is None else out_dir)
    out.mkdir(parents=True, exist_ok=True)
    workers = spec.workers or os.cpu_count() or 1
    summaries = {}
    for model in spec.models:
        result = run_ensemble(spec.config, spec.replications, workers=workers,
                              runner=RUNNERS[model])
        write_timeseries(out / f"timeseries_{model}.csv", result)
        summaries[model] = summarize_ensemble(result)
    report = SummaryReport(summaries, config_echo(spec.config), spec.config.seed,
                           spec.preset, spec.replications)
    try:
        _dump_json(out / "summary.json", report.as_dict())
    except ValueError as exc:
        raise NumericalOutputError(f"non-finite value in summary: {exc}") from exc
    return report


def _coerce(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    return text


def resolve_param(name: str) -> str:
    """Map a bare key such as ``c2_a`` to its dotted ``section.key`` form."""
    if "." in name:
        section, key = name.split(".", 1)
        if key not in SECTION_KEYS.get(section, ()):
            raise ConfigError("unknown parameter", name)
        return name
    hits = [s for s, keys in SECTION_KEYS.items() if name in keys]
    if len(hits) != 1:
        raise ConfigError("unknown parameter", name)
    return f"{hits[0]}.{name}"


def run_sweep(spec: ExperimentSpec, param: str, values, out_dir=None) -> dict:
    """One experiment per value, each in its own subdirectory, plus ``sweep.json``."""
    dotted = resolve_param(param)
    if not values:
        raise ConfigError("no sweep values", "values")
    out = Path(spec.output if out_dir is None else out_dir)
    rows = []
    for raw in values:
        value = _coerce(raw) if isinstance(raw, str) else raw
        sub = spec.with_overrides(**{dotted: value})
        report = run_experiment(sub, out / f"{dotted}={raw}")
        rows.append({"value": value, **{m: s.as_dict() for m, s in report.models.items()}})
    sweep = {"param": dotted, "preset": spec.preset, "config": config_echo(spec.config),
             "results": rows}
    out.mkdir(parents=True, exist_ok=True)
    _dump_json(out / "sweep.json", sweep)
    return sweep
