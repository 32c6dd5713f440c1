"""Flat INI-style configuration for the experiment CLI.

Sections map onto the dataclasses they configure::

    [experiment]    n_trials, base_seed, true_Q, true_R, eval_length, P0_scale,
                    methods, eps_values, N_values
    [model]         F, Gw, H   (rows separated by ';', entries by ',' or spaces)
    [contamination] epsilon, omega
    [estimator]     N, tau, warmup_length, n_avg, Q0, R0, gamma_thr,
                    outer_tolerance
    [huber]         c, mad_factor, max_iterations, tol, delta_override
    [baseline]      fixed_Q, fixed_R, mckf_bandwidth, mckf_max_fixed_point,
                    student_dof, student_vb_iterations

Overrides use ``section.key=value``. Full-line comments start with ``#`` or
``;``; inline comments start with `` #`` (``;`` separates matrix rows).
"""
from __future__ import annotations

import configparser
import io
from dataclasses import fields, replace

import numpy as np

from .baselines import BaselineConfig
from .estimator import EstimatorConfig
from .experiments import ExperimentConfig
from .robust import HuberConfig
from .ssm import ContaminationSpec, StateSpaceModel


class ConfigError(ValueError):
    pass


_SCALARS = {
    "experiment": {
        "n_trials": int,
        "base_seed": int,
        "true_Q": float,
        "true_R": float,
        "eval_length": int,
        "P0_scale": float,
        "methods": "strs",
        "eps_values": "floats",
        "N_values": "ints",
    },
    "model": {"F": "matrix", "Gw": "matrix", "H": "matrix"},
    "contamination": {"epsilon": float, "omega": float},
    "estimator": {
        "N": int,
        "tau": int,
        "warmup_length": int,
        "n_avg": int,
        "Q0": "matrix",
        "R0": "matrix",
        "gamma_thr": float,
        "outer_tolerance": float,
    },
    "huber": {"c": float, "mad_factor": float, "max_iterations": int, "tol": float, "delta_override": "optfloat"},
    "baseline": {
        "fixed_Q": "matrix",
        "fixed_R": "matrix",
        "mckf_bandwidth": float,
        "mckf_max_fixed_point": int,
        "student_dof": float,
        "student_vb_iterations": int,
    },
}


def _parse_matrix(text: str):
    rows = [r.replace(",", " ").split() for r in text.split(";") if r.strip()]
    arr = np.array([[float(v) for v in r] for r in rows])
    return float(arr[0, 0]) if arr.size == 1 else arr


def _format_matrix(value) -> str:
    arr = np.atleast_2d(np.asarray(value, dtype=float))
    return "; ".join(" ".join(repr(float(v)) for v in row) for row in arr)


def _parse(kind, text: str):
    text = text.strip()
    if kind in (int, float):
        return kind(text)
    if kind == "optfloat":
        return None if text.lower() in ("", "none") else float(text)
    if kind == "strs":
        return tuple(s for s in text.replace(",", " ").split())
    if kind == "floats":
        return tuple(float(s) for s in text.replace(",", " ").split())
    if kind == "ints":
        return tuple(int(s) for s in text.replace(",", " ").split())
    if kind == "matrix":
        return _parse_matrix(text)
    raise AssertionError(kind)


def _format(kind, value) -> str:
    if kind in ("strs", "floats", "ints"):
        return ", ".join(repr(v) if not isinstance(v, str) else v for v in value)
    if kind == "matrix":
        return _format_matrix(value)
    if kind == "optfloat":
        return "none" if value is None else repr(float(value))
    return repr(value) if kind is float else str(value)


def _sections(cfg: ExperimentConfig) -> dict[str, object]:
    return {
        "experiment": cfg,
        "model": cfg.model,
        "contamination": cfg.contamination,
        "estimator": cfg.estimator,
        "huber": cfg.estimator.huber,
        "baseline": cfg.baseline,
    }


def parse_config(text: str = "", overrides=()) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from INI text plus ``section.key=value`` overrides."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value: {item!r}")
        key, value = item.split("=", 1)
        section, name = key.strip().split(".", 1)
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, name, value)

    values: dict[str, dict[str, object]] = {s: {} for s in _SCALARS}
    for section in parser.sections():
        if section not in _SCALARS:
            raise ConfigError(f"unknown section [{section}]")
        for name, raw in parser.items(section):
            kind = _SCALARS[section].get(name)
            if kind is None:
                raise ConfigError(f"unknown key {section}.{name}")
            try:
                values[section][name] = _parse(kind, raw)
            except (ValueError, IndexError) as exc:
                raise ConfigError(f"bad value for {section}.{name}: {raw!r}") from exc

    try:
        base = ExperimentConfig(n_trials=1)
        model = base.model
        if values["model"]:
            kw = {k: np.atleast_2d(v) for k, v in values["model"].items()}
            model = StateSpaceModel(**{**{"F": model.F, "Gw": model.Gw, "H": model.H}, **kw})
        huber = replace(HuberConfig(), **values["huber"])
        est = EstimatorConfig(huber=huber, **values["estimator"])
        cont = ContaminationSpec(**values["contamination"])
        baseline = BaselineConfig(**values["baseline"])
        return ExperimentConfig(
            model=model, estimator=est, contamination=cont, baseline=baseline, **values["experiment"]
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def dump_config(cfg: ExperimentConfig) -> str:
    """Serialize every field, so that ``parse_config(dump_config(c)) == c`` up to array identity."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for section, obj in _sections(cfg).items():
        parser.add_section(section)
        names = {f.name for f in fields(obj)}
        for name, kind in _SCALARS[section].items():
            if name in names:
                parser.set(section, name, _format(kind, getattr(obj, name)))
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
