"""Scenario files (TOML or JSON) and report serialisation."""

from __future__ import annotations

import copy
import csv
import io
import json
import math
import os
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .expr import ExpressionError
from .model import KernelSpec, RateField, ScenarioConfig, ScenarioError, Tolerances, parse_rate_table

DEFAULTS = {
    "domain": {"lower": -1.0, "upper": 1.0, "n_x": 200},
    "age": {"a_hat": "inf", "n_a": 200},
    "kernel": {"profile": "epanechnikov", "radius": 1.0, "gamma": 1.0, "m": 0.0},
    "rates": {"diffusion_rate": 1.0},
    "solver": {"root_tol": 1e-8, "power_iter_tol": 1e-12, "max_iters": 10000, "seed": 0},
}

_KNOWN = {
    "domain": {"lower", "upper", "n_x"},
    "age": {"a_hat", "n_a"},
    "kernel": {"profile", "radius", "gamma", "m", "table"},
    "rates": {"beta", "mu", "table", "beta_cutoff_age", "mu_lower_bound", "diffusion_rate"},
    "solver": {"root_tol", "power_iter_tol", "max_iters", "seed"},
}


def parse_text(text: str) -> dict:
    """Parse a scenario document, trying JSON first and then TOML."""
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"invalid JSON scenario: {exc}") from None
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"invalid TOML scenario: {exc}") from None


def read_raw(source) -> dict:
    """Raw scenario mapping from a path, a document string or a dict."""
    if isinstance(source, dict):
        return copy.deepcopy(source)
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and os.path.exists(source)):
        return parse_text(Path(source).read_text())
    if isinstance(source, str):
        return parse_text(source)
    raise ScenarioError(f"cannot read scenario from {type(source).__name__}")


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings; values are parsed as JSON when possible."""
    out = copy.deepcopy(raw)
    for item in overrides or ():
        if "=" not in item:
            raise ScenarioError(f"override {item!r} is not of the form section.key=value")
        path, value = item.split("=", 1)
        keys = path.strip().split(".")
        if len(keys) < 2:
            raise ScenarioError(f"override {item!r} needs a dotted section.key path")
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError:
            parsed = value
        node = out
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ScenarioError(f"override {item!r} descends into a non-section")
        node[keys[-1]] = parsed
    return out


def _float(value, key):
    if isinstance(value, str) and value.strip().lower() in ("inf", "infinity", "+inf"):
        return math.inf
    if isinstance(value, bool):
        raise ScenarioError(f"{key} must be a number")
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ScenarioError(f"{key} must be a number, got {value!r}") from None


def _int(value, key):
    if isinstance(value, bool) or not float(_float(value, key)).is_integer():
        raise ScenarioError(f"{key} must be an integer, got {value!r}")
    return int(_float(value, key))


def scenario_from_dict(raw: dict, *, seed_override: int | None = None) -> ScenarioConfig:
    """Build a :class:`ScenarioConfig` from a raw mapping, filling documented defaults."""
    warnings = []
    for section, body in raw.items():
        if section not in _KNOWN:
            warnings.append(f"unknown section [{section}] ignored")
            continue
        if not isinstance(body, dict):
            raise ScenarioError(f"[{section}] must be a table")
        for key in body:
            if key not in _KNOWN[section]:
                warnings.append(f"unknown key {section}.{key} ignored")
    merged = {s: {**DEFAULTS[s], **raw.get(s, {})} for s in DEFAULTS}

    rates = merged["rates"]
    if "table" in rates:
        beta, mu = parse_rate_table(rates["table"])
        table_text = rates["table"]
    else:
        for key in ("beta", "mu"):
            if key not in rates:
                raise ScenarioError(f"missing required key rates.{key}")
        beta, mu, table_text = rates["beta"], rates["mu"], None
    cutoff = rates.get("beta_cutoff_age")
    floor = rates.get("mu_lower_bound")
    try:
        rate_field = RateField(
            beta,
            mu,
            beta_cutoff_age=None if cutoff is None else _float(cutoff, "rates.beta_cutoff_age"),
            mu_lower_bound=None if floor is None else _float(floor, "rates.mu_lower_bound"),
            table_text=table_text,
        )
    except ExpressionError as exc:
        raise ScenarioError(str(exc)) from None

    k = merged["kernel"]
    if k["profile"] == "table":
        if "table" not in k:
            raise ScenarioError("missing required key kernel.table")
        rows = list(csv.reader(io.StringIO(k["table"].strip())))
        if [c.strip() for c in rows[0]] != ["z", "J"]:
            raise ScenarioError("kernel table header must be 'z,J'")
        data = np.array([[float(c) for c in r] for r in rows[1:] if r])
        kernel = KernelSpec("table", gamma=_float(k["gamma"], "kernel.gamma"), m=_float(k["m"], "kernel.m"),
                            table_z=data[:, 0], table_values=data[:, 1])
    else:
        kernel = KernelSpec(
            str(k["profile"]),
            radius=_float(k["radius"], "kernel.radius"),
            gamma=_float(k["gamma"], "kernel.gamma"),
            m=_float(k["m"], "kernel.m"),
        )

    s = merged["solver"]
    tol = Tolerances(
        _float(s["root_tol"], "solver.root_tol"),
        _float(s["power_iter_tol"], "solver.power_iter_tol"),
        _int(s["max_iters"], "solver.max_iters"),
    )
    seed = _int(s["seed"], "solver.seed")
    env_seed = os.environ.get("SPECTRA_SEED")
    if env_seed is not None and env_seed.strip():
        seed = _int(env_seed, "SPECTRA_SEED")
    if seed_override is not None:
        seed = int(seed_override)

    d = merged["domain"]
    config = ScenarioConfig.build(
        domain=(_float(d["lower"], "domain.lower"), _float(d["upper"], "domain.upper")),
        n_x=_int(d["n_x"], "domain.n_x"),
        age_horizon=_float(merged["age"]["a_hat"], "age.a_hat"),
        n_a=_int(merged["age"]["n_a"], "age.n_a"),
        kernel=kernel,
        rates=rate_field,
        diffusion_rate=_float(rates["diffusion_rate"], "rates.diffusion_rate"),
        tolerances=tol,
        seed=seed,
    )
    config.load_warnings = warnings
    return config


def load_scenario(source, *, overrides=None, seed_override=None) -> ScenarioConfig:
    """Load a scenario from a path, a TOML/JSON document or a mapping."""
    raw = apply_overrides(read_raw(source), overrides)
    return scenario_from_dict(raw, seed_override=seed_override)


def save_scenario(config: ScenarioConfig, path) -> None:
    """Write the scenario as JSON (floats round-trip exactly)."""
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- reports


def to_jsonable(obj):
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        val = float(obj)
        if math.isnan(val):
            return "nan"
        if math.isinf(val):
            return "inf" if val > 0 else "-inf"
        return val
    return obj


def dumps_report(report) -> str:
    """Deterministic JSON text for a report object or mapping."""
    return json.dumps(to_jsonable(report), indent=2, sort_keys=True) + "\n"


def rows_to_csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue()


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def save_report(report, path) -> None:
    """Write a report as JSON, or as flat CSV when the path ends in ``.csv``."""
    path = Path(path)
    if path.suffix == ".csv":
        if not hasattr(report, "csv_rows"):
            raise ValueError(f"{type(report).__name__} has no flat CSV form")
        header, rows = report.csv_rows()
        path.write_text(rows_to_csv(header, rows))
    else:
        path.write_text(dumps_report(report))
