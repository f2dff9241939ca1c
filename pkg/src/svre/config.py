"""JSON run configuration: parsing, validation and problem construction.

A config file looks like::

    {
      "problem": {"id": "linear", "params": {"d": 100, "beta": 4}},
      "svre": {"n": 1000, "n_grad": 20, "seed": 0},
      "smoother": {"P": 0.9, "sigma": 0.001},
      "kernel": {"strategy": "fixed", "length": 10.0},
      "transport": {"normalization": "l2", "base_rate": 1.0},
      "bench": {"runs": 100}
    }

Only ``problem`` is required.  Unknown keys are errors, and every error
message carries the line of the offending key.
"""

from __future__ import annotations

import dataclasses
import json
import math
import re
from dataclasses import dataclass
from typing import Any, Callable

from .darcy import DarcyConfig, darcy_lsf
from .estimator import SvreConfig
from .kernel import KernelConfig
from .problems import LimitStateProblem, fourbranch_lsf, linear_lsf, quadratic_lsf
from .smoothing import SmootherParams
from .transport import TransportConfig

__all__ = ["ConfigError", "RunConfig", "PROBLEMS", "make_problem", "load_config", "parse_config"]


class ConfigError(ValueError):
    """Invalid configuration; the message names the file line and key."""


@dataclass(frozen=True)
class ProblemSpec:
    factory: Callable[..., LimitStateProblem]
    defaults: dict


def _darcy(**params) -> LimitStateProblem:
    return darcy_lsf(DarcyConfig(**params))


_DARCY_DEFAULTS = {f.name: f.default for f in dataclasses.fields(DarcyConfig)}

PROBLEMS: dict[str, ProblemSpec] = {
    "linear": ProblemSpec(lambda d, beta: linear_lsf(beta, d), {"d": 100, "beta": 4.0}),
    "quadratic": ProblemSpec(
        lambda d, beta, kappa: quadratic_lsf(beta, kappa, d), {"d": 2, "beta": 4.0, "kappa": 10.0}
    ),
    "fourbranch": ProblemSpec(lambda gamma: fourbranch_lsf(gamma), {"gamma": 0.0}),
    "darcy": ProblemSpec(_darcy, _DARCY_DEFAULTS),
}

_INT_KEYS = {"d", "grid_m", "n", "n_grad", "t_max", "seed", "runs"}


def make_problem(problem_id: str, params: dict | None = None) -> LimitStateProblem:
    """Build a registered problem; missing parameters take their defaults."""
    if problem_id not in PROBLEMS:
        raise KeyError(f"unknown problem {problem_id!r}; known: {', '.join(PROBLEMS)}")
    spec = PROBLEMS[problem_id]
    merged = {**spec.defaults, **(params or {})}
    return spec.factory(**merged)


@dataclass(frozen=True)
class RunConfig:
    problem_id: str
    problem_params: dict
    svre: SvreConfig
    runs: int = 100
    source: str = "<config>"

    def make_problem(self) -> LimitStateProblem:
        return make_problem(self.problem_id, self.problem_params)

    def with_seed(self, seed: int) -> "RunConfig":
        return dataclasses.replace(self, svre=dataclasses.replace(self.svre, seed=seed))


class _Locator:
    """Maps key paths to line numbers in the raw JSON text."""

    def __init__(self, text: str, source: str):
        self.text = text
        self.source = source

    def line(self, path: tuple[str, ...]) -> int:
        pos = 0
        for key in path:
            idx = self.text.find(json.dumps(key), pos)
            if idx < 0:
                break
            pos = idx
        return self.text.count("\n", 0, pos) + 1

    def error(self, path: tuple[str, ...], message: str) -> ConfigError:
        where = ".".join(path) if path else "<root>"
        return ConfigError(f"{self.source}:{self.line(path)}: {where}: {message}")


def _check_type(loc: _Locator, path: tuple[str, ...], value: Any, default: Any) -> Any:
    key = path[-1]
    if key in _INT_KEYS:
        if isinstance(value, bool) or not isinstance(value, int):
            raise loc.error(path, f"expected an integer, got {value!r}")
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise loc.error(path, f"expected true or false, got {value!r}")
        return value
    if isinstance(default, float) or default is None and key == "base_rate":
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise loc.error(path, f"expected a finite number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise loc.error(path, f"expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not (isinstance(value, list) and len(value) == len(default)):
            raise loc.error(path, f"expected a list of {len(default)} numbers")
        return tuple(_check_type(loc, path + (str(i),), v, 0.0) for i, v in enumerate(value))
    return value


def _culprit(message: str, names) -> str | None:
    """The longest of ``names`` that appears as a whole word in ``message``."""
    hits = [k for k in names if re.search(rf"\b{re.escape(k)}\b", message)]
    return max(hits, key=len) if hits else None


# config key -> dataclass field, where the two differ
_ALIASES = {"kernel": {"length": "fixed_length"}}


def _section(loc, raw: dict, name: str, cls, skip=()) -> Any:
    body = raw.get(name, {})
    path = (name,)
    if not isinstance(body, dict):
        raise loc.error(path, "expected an object")
    aliases = _ALIASES.get(name, {})
    renamed = {v: k for k, v in aliases.items()}
    fields = {
        renamed.get(f.name, f.name): f
        for f in dataclasses.fields(cls) if f.init and f.name not in skip
    }
    kwargs = {}
    keys = {}
    for key, value in body.items():
        if key not in fields:
            raise loc.error(path + (key,), f"unknown key; allowed: {', '.join(sorted(fields))}")
        f = fields[key]
        default = f.default if f.default is not dataclasses.MISSING else None
        kwargs[f.name] = _check_type(loc, path + (key,), value, default)
        keys[f.name] = key
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        culprit = _culprit(str(exc), kwargs)
        raise loc.error(path + ((keys[culprit],) if culprit else ()), str(exc)) from None


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Validate a JSON config string and build a :class:`RunConfig`."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    loc = _Locator(text, source)
    if not isinstance(raw, dict):
        raise loc.error((), "top level must be an object")
    allowed = {"problem", "svre", "smoother", "kernel", "transport", "bench"}
    for key in raw:
        if key not in allowed:
            raise loc.error((key,), f"unknown section; allowed: {', '.join(sorted(allowed))}")

    prob = raw.get("problem")
    if not isinstance(prob, dict):
        raise loc.error(("problem",), "required object with an 'id'")
    for key in prob:
        if key not in ("id", "params"):
            raise loc.error(("problem", key), "unknown key; allowed: id, params")
    pid = prob.get("id")
    if pid not in PROBLEMS:
        raise loc.error(("problem", "id"), f"unknown problem {pid!r}; known: {', '.join(PROBLEMS)}")
    params = prob.get("params", {})
    if not isinstance(params, dict):
        raise loc.error(("problem", "params"), "expected an object")
    defaults = PROBLEMS[pid].defaults
    checked = {}
    for key, value in params.items():
        if key not in defaults:
            raise loc.error(("problem", "params", key), f"unknown parameter; allowed: {', '.join(defaults)}")
        checked[key] = _check_type(loc, ("problem", "params", key), value, defaults[key])
    try:
        make_problem(pid, checked)
    except (ValueError, TypeError) as exc:
        culprit = _culprit(str(exc), checked)
        raise loc.error(("problem", "params") + ((culprit,) if culprit else ()), str(exc)) from None

    smoother = _section(loc, raw, "smoother", SmootherParams)
    kernel = _section(loc, raw, "kernel", KernelConfig)
    transport = _section(loc, raw, "transport", TransportConfig)
    svre_body = raw.get("svre", {})
    if not isinstance(svre_body, dict):
        raise loc.error(("svre",), "expected an object")
    nested = {"smoother", "kernel", "transport"}
    for key in nested & set(svre_body):
        raise loc.error(("svre", key), f"give '{key}' as a top-level section")
    svre = _section(loc, raw, "svre", SvreConfig, skip=nested)
    svre = dataclasses.replace(svre, smoother=smoother, kernel=kernel, transport=transport)

    bench = raw.get("bench", {})
    if not isinstance(bench, dict):
        raise loc.error(("bench",), "expected an object")
    runs = 100
    for key, value in bench.items():
        if key != "runs":
            raise loc.error(("bench", key), "unknown key; allowed: runs")
        runs = _check_type(loc, ("bench", "runs"), value, 0)
        if runs < 2:
            raise loc.error(("bench", "runs"), "must be >= 2")
    return RunConfig(pid, {**defaults, **checked}, svre, runs, source)


def load_config(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from None
    return parse_config(text, path)
