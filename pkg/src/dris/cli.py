"""Experiment harness: scenario configs, seeded Monte-Carlo sweeps, CSV output.

A scenario is an INI file::

    [scenario]
    name = ee_vs_pmax
    trials = 50
    root_seed = 0

    [sweep]
    variable = p_max_dbm
    values = 5, 10, 15, 20

    [schemes]
    list = DRIS, CRIS, AFR

    [params]
    elements_n = 4

Every omitted key falls back to the simulation-table defaults. Powers are
given in dBm and converted once, when the params are built.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .baselines import BaselineConfig, Scheme, run_scheme
from .model import (
    check_feasibility,
    derive_seed,
    generate_channels,
    generate_topology,
    table_one_params,
)
from .numerics import InfeasibleStartError, dbm_to_watts
from .single_user import InfeasibleError

COLUMNS = (
    "scenario", "preset", "seed", "scheme", "sweep_variable", "sweep_value", "K", "M", "L", "N_total",
    "p_max_dbm", "min_rate_bps", "ee_bits_per_joule", "sum_rate_bps", "total_power_w", "active_ris_count",
    "outer_iterations", "feasible", "runtime_ms",
)

SWEEP_VARIABLES = ("p_max_dbm", "min_rate_bps", "elements_n", "ris_count_l", "antennas_m", "users_k")
_INTEGER_SWEEPS = {"elements_n", "ris_count_l", "antennas_m", "users_k"}

# [params] keys and their defaults; dBm keys stay in dBm until scenario_params
PARAM_DEFAULTS = {
    "users_k": 1,
    "antennas_m": 8,
    "ris_count_l": 8,
    "elements_n": 4,
    "p_max_dbm": 50.0,
    "min_rate_bps": 1e6,
    "bandwidth_hz": 1e6,
    "noise_dbm": -104.0,
    "amplifier_efficiency": 0.8,
    "p_bs_dbm": 39.0,
    "p_user_dbm": 10.0,
    "p_ris_element_dbm": 10.0,
    "relay_power_dbm": 30.0,
    "relay_antenna_dbm": 10.0,
    "penalty_c": 1e3,
    "region_side_m": 300.0,
    "ris_radius_m": 100.0,
}

_SECTIONS = {
    "scenario": {"name", "trials", "root_seed"},
    "sweep": {"variable", "values"},
    "schemes": {"list", "exh_starts", "afr_prelog", "cris_x_m", "cris_y_m"},
    "params": set(PARAM_DEFAULTS),
}


class ConfigError(ValueError):
    """Malformed or invalid scenario config."""


@dataclass(frozen=True)
class Scenario:
    name: str
    sweep_variable: str
    sweep_values: tuple
    schemes: tuple = (Scheme.DRIS,)
    trials: int = 50
    base_params: dict = field(default_factory=dict)
    root_seed: int = 0
    exh_starts: int = 100
    afr_prelog: float = 1.0
    cris_position: tuple = (100.0, 0.0)
    preset: str = ""

    def __post_init__(self):
        problems = []
        if self.sweep_variable not in SWEEP_VARIABLES:
            problems.append(f"sweep variable {self.sweep_variable!r} is not one of {', '.join(SWEEP_VARIABLES)}")
        vals = np.asarray(self.sweep_values, dtype=float)
        if vals.size == 0:
            problems.append("sweep values must be non-empty")
        elif vals.size > 1:
            d = np.diff(vals)
            if not (np.all(d > 0) or np.all(d < 0)):
                problems.append("sweep values must be strictly monotone")
        if self.sweep_variable in _INTEGER_SWEEPS and np.any(vals != np.round(vals)):
            problems.append(f"sweep values of {self.sweep_variable} must be integers")
        if self.trials < 1:
            problems.append("trials must be >= 1")
        if not self.schemes:
            problems.append("at least one scheme is required")
        if self.exh_starts < 1:
            problems.append("exh_starts must be >= 1")
        if self.afr_prelog not in (0.5, 1.0):
            problems.append("afr_prelog must be 0.5 or 1.0")
        unknown = set(self.base_params) - set(PARAM_DEFAULTS)
        if unknown:
            problems.append(f"unknown params: {', '.join(sorted(unknown))}")
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def row_count(self) -> int:
        return len(self.sweep_values) * len(self.schemes) * self.trials


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

_ALL = "DRIS, CRIS, AFR"
PRESETS = {
    "fig2": f"""
[scenario]
name = ee_vs_pmax
[sweep]
variable = p_max_dbm
values = 5, 10, 15, 20, 25, 30, 35, 40, 45, 50
[schemes]
list = {_ALL}, EXH_DRIS
""",
    "fig3": f"""
[scenario]
name = sum_rate_vs_pmax
[sweep]
variable = p_max_dbm
values = 5, 10, 15, 20, 25, 30, 35, 40, 45, 50
[schemes]
list = {_ALL}
[params]
min_rate_bps = 0
""",
    "fig4": f"""
[scenario]
name = ee_vs_rate
[sweep]
variable = min_rate_bps
values = 1e6, 2e6, 4e6, 6e6, 8e6, 10e6
[schemes]
list = {_ALL}
""",
    "fig5": f"""
[scenario]
name = ee_vs_elements
[sweep]
variable = elements_n
values = 2, 4, 8, 12
[schemes]
list = {_ALL}
[params]
ris_count_l = 4
""",
    "fig6": f"""
[scenario]
name = ee_vs_ris_count
[sweep]
variable = ris_count_l
values = 2, 4, 8, 12
[schemes]
list = {_ALL}
[params]
elements_n = 4
""",
    "fig7": f"""
[scenario]
name = ee_vs_antennas
[sweep]
variable = antennas_m
values = 2, 4, 6, 8, 10, 12, 14, 16
[schemes]
list = {_ALL}
""",
    "fig8": f"""
[scenario]
name = ee_vs_users
[sweep]
variable = users_k
values = 1, 2, 3, 4
[schemes]
list = {_ALL}
""",
    # second power level of the antenna sweep
    "fig9": """
[scenario]
name = ee_vs_antennas_30dbm
[sweep]
variable = antennas_m
values = 2, 4, 6, 8, 10, 12, 14, 16
[schemes]
list = DRIS
[params]
p_max_dbm = 30
""",
}


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def _number(section: str, key: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected a number, got {raw!r}") from None


def _integer(section: str, key: str, raw: str) -> int:
    x = _number(section, key, raw)
    if x != math.floor(x):
        raise ConfigError(f"[{section}] {key}: expected an integer, got {raw!r}")
    return int(x)


def _read(text: str, source: str) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(strict=True, interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case-sensitive
    try:
        cp.read_string(text, source=source)
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"{source}, line {exc.lineno}: duplicate key {exc.option!r} in [{exc.section}]") from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"{source}, line {exc.lineno}: duplicate section [{exc.section}]") from None
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    for section in cp.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"{source}: unknown section [{section}]")
        unknown = set(cp[section]) - _SECTIONS[section]
        if unknown:
            raise ConfigError(f"{source}: unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    return cp


def _merged(texts) -> dict:
    out = {s: {} for s in _SECTIONS}
    for text, source in texts:
        cp = _read(text, source)
        for section in cp.sections():
            out[section].update(cp[section])
    return out


def parse_config(text: str, preset: Optional[str] = None, source: str = "<config>") -> Scenario:
    """Parse an INI scenario, optionally layered over a named preset.

    Raises
    ------
    ConfigError
        on syntax errors, duplicate or unknown keys, or invalid values.
    """
    texts = []
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(sorted(PRESETS))}")
        texts.append((PRESETS[preset], f"<preset {preset}>"))
    texts.append((text, source))
    cfg = _merged(texts)

    sc, sw, sch, prm = cfg["scenario"], cfg["sweep"], cfg["schemes"], cfg["params"]
    missing = ["[scenario] name"] if "name" not in sc else []
    missing += [f"[sweep] {k}" for k in ("variable", "values") if k not in sw]
    if missing:
        raise ConfigError(f"missing required key(s): {', '.join(missing)}")

    variable = sw["variable"].strip()
    values = tuple(_number("sweep", "values", v) for v in sw["values"].split(",") if v.strip())
    try:
        schemes = tuple(Scheme(s.strip().upper()) for s in sch.get("list", "DRIS").split(",") if s.strip())
    except ValueError as exc:
        raise ConfigError(f"[schemes] list: {exc}") from None
    if len(set(schemes)) != len(schemes):
        raise ConfigError("[schemes] list: duplicate scheme")

    base = {}
    for key, raw in prm.items():
        kind = type(PARAM_DEFAULTS[key])
        base[key] = _integer("params", key, raw) if kind is int else _number("params", key, raw)

    return Scenario(
        name=sc["name"].strip(),
        sweep_variable=variable,
        sweep_values=values,
        schemes=schemes,
        trials=_integer("scenario", "trials", sc.get("trials", "50")),
        base_params=base,
        root_seed=_integer("scenario", "root_seed", sc.get("root_seed", "0")),
        exh_starts=_integer("schemes", "exh_starts", sch.get("exh_starts", "100")),
        afr_prelog=_number("schemes", "afr_prelog", sch.get("afr_prelog", "1.0")),
        cris_position=(
            _number("schemes", "cris_x_m", sch.get("cris_x_m", "100")),
            _number("schemes", "cris_y_m", sch.get("cris_y_m", "0")),
        ),
        preset=preset or "",
    )


def scenario_params(scenario: Scenario, sweep_value) -> tuple:
    """(SystemParams, settings) for one sweep point; settings keep the geometry keys."""
    s = dict(PARAM_DEFAULTS)
    s.update(scenario.base_params)
    v = float(sweep_value)
    s[scenario.sweep_variable] = int(round(v)) if scenario.sweep_variable in _INTEGER_SWEEPS else v
    params = table_one_params(
        num_users=s["users_k"], num_antennas=s["antennas_m"], num_ris=s["ris_count_l"],
        elements=s["elements_n"], p_max_dbm=s["p_max_dbm"], min_rate_bps=s["min_rate_bps"],
    )
    k = s["users_k"]
    params = replace(
        params,
        bandwidth_hz=s["bandwidth_hz"],
        noise_w=float(dbm_to_watts(s["noise_dbm"])),
        amplifier_inefficiency=1.0 / s["amplifier_efficiency"] if s["amplifier_efficiency"] > 0 else math.inf,
        p_bs_w=float(dbm_to_watts(s["p_bs_dbm"])),
        p_user_w=(float(dbm_to_watts(s["p_user_dbm"])),) * k,
        p_ris_element_w=float(dbm_to_watts(s["p_ris_element_dbm"])),
        relay_power_w=float(dbm_to_watts(s["relay_power_dbm"])),
        relay_antenna_circuit_w=float(dbm_to_watts(s["relay_antenna_dbm"])),
        penalty_c=s["penalty_c"],
    )
    return params, s


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Task:
    scenario: Scenario
    sweep_index: int
    scheme_index: int
    trial: int


def _run_task(task: _Task) -> dict:
    sc = task.scenario
    value = sc.sweep_values[task.sweep_index]
    scheme = sc.schemes[task.scheme_index]
    params, s = scenario_params(sc, value)
    seed = derive_seed(sc.root_seed, task.trial)
    row = {
        "scenario": sc.name, "preset": sc.preset, "seed": seed, "scheme": scheme.value,
        "sweep_variable": sc.sweep_variable, "sweep_value": value, "K": params.num_users,
        "M": params.num_antennas, "L": params.num_ris, "N_total": params.total_elements,
        "p_max_dbm": s["p_max_dbm"], "min_rate_bps": s["min_rate_bps"],
    }
    topo = generate_topology(params, s["region_side_m"], s["ris_radius_m"], seed)
    channels = generate_channels(topo, params, seed)
    config = BaselineConfig(scheme, sc.cris_position, sc.exh_starts, sc.afr_prelog)
    t0 = time.perf_counter()
    try:
        point = run_scheme(scheme, topo, channels, params, seed, config)
    except (InfeasibleError, InfeasibleStartError):
        point = None
    row["runtime_ms"] = 1e3 * (time.perf_counter() - t0)
    if point is None:
        row.update(ee_bits_per_joule=math.nan, sum_rate_bps=math.nan, total_power_w=math.nan,
                   active_ris_count=0, outer_iterations=0, feasible=0)
        return row
    # AFR uses a different rate model, so only the power budget is checked there
    if scheme is Scheme.AFR:
        feasible = point.beams.transmit_power <= params.p_max_w * (1 + 1e-9)
    else:
        p_cfg = params if scheme is not Scheme.CRIS else params.with_updates(
            num_ris=1, elements_per_ris=(params.total_elements,))
        feasible = not check_feasibility(p_cfg, point)
    row.update(
        ee_bits_per_joule=point.energy_efficiency, sum_rate_bps=point.sum_rate_bps,
        total_power_w=point.total_power_w, active_ris_count=point.onoff.active_count,
        outer_iterations=point.outer_iterations, feasible=int(feasible),
    )
    return row


def run_scenario(scenario: Scenario, jobs: int = 1) -> list:
    """All rows of a scenario in canonical (sweep value, scheme, trial) order.

    Rows depend only on the scenario, so ``jobs`` changes wall time and
    nothing else.
    """
    tasks = [
        _Task(scenario, i, j, t)
        for i in range(len(scenario.sweep_values))
        for j in range(len(scenario.schemes))
        for t in range(scenario.trials)
    ]
    if jobs <= 1:
        return [_run_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        # map preserves input order whatever the completion order
        return list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (8 * jobs))))


def _format(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "nan" if math.isnan(value) else f"{float(value):.9g}"
    return str(value)


def format_csv(rows, timing: bool = False) -> str:
    """CSV text; ``runtime_ms`` is left blank unless ``timing`` is set."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for row in rows:
        writer.writerow(
            "" if (col == "runtime_ms" and not timing) else _format(row[col]) for col in COLUMNS
        )
    return buf.getvalue()


def emit_csv(rows, path, timing: bool = False) -> None:
    text = format_csv(rows, timing)
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def read_csv(path) -> list:
    """Rows of an emitted CSV as dicts of strings."""
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def summarize(rows, scheme, metric: str = "ee_bits_per_joule"):
    """(sweep values, mean, standard error) of a metric over feasible rows."""
    values = sorted({r["sweep_value"] for r in rows}, key=float)
    mean, se = [], []
    for v in values:
        x = np.array([float(r[metric]) for r in rows
                      if r["sweep_value"] == v and str(r["scheme"]) == str(scheme) and int(r["feasible"])])
        mean.append(x.mean() if x.size else math.nan)
        se.append(x.std(ddof=1) / math.sqrt(x.size) if x.size > 1 else math.nan)
    return np.array(values, dtype=float), np.array(mean), np.array(se)


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def verify_checks(seed: int = 0) -> list:
    """Quick solver-vs-oracle checks as (name, passed, detail) triples."""
    from . import oracles
    from .model import PhaseConfig, rayleigh_channels, stream
    from .numerics import SolverOptions, lambert_w0
    from .single_user import (
        PowerProblem, build_onoff_quadratic, channel_gain, dinkelbach_onoff, onoff_objective, optimal_power,
        optimize_phases,
    )

    out = []
    rng = stream(seed, "verify")

    x = np.concatenate([np.geomspace(1e-300, 1e300, 2000), -np.linspace(0, 1 / math.e, 1000)])
    w = lambert_w0(x)
    res = float(np.max(np.abs(w * np.exp(w) - x) / np.maximum(1.0, np.abs(x))))
    out.append(("lambert_w residual", res <= 1e-12, f"max relative residual {res:.2e}"))

    worst = 0.0
    for _ in range(20):
        prob = PowerProblem(10 ** rng.uniform(-2, 4), rng.uniform(0.5, 10), rng.uniform(1, 3), 0.0,
                            10 ** rng.uniform(-1, 2))
        p = optimal_power(prob)
        _, ee_grid = oracles.grid_power(prob.efficiency, prob.p_min, prob.p_max, 100001)
        worst = max(worst, ee_grid - float(prob.efficiency(p)))
    out.append(("closed-form power vs grid", worst <= 1e-9, f"max grid excess {worst:.2e}"))

    params = table_one_params(num_antennas=4, num_ris=4, elements=2)
    mismatches = 0
    for s in range(10):
        ch = rayleigh_channels(params, seed + s, direct_gain=1e-13, bs_ris_gain=1e-7, ris_user_gain=1e-7)
        phases = PhaseConfig(rng.uniform(0, 2 * np.pi, params.total_elements))
        quad = build_onoff_quadratic(ch, phases)
        p1 = params.p_max_w * rng.uniform(0.01, 1.0)

        def ev(xx, quad=quad, p1=p1):
            r = onoff_objective(quad, xx, 0.0, p1, params)
            return None if r is None else r[1] / r[2]

        _, ee = oracles.exhaustive_onoff(ev, params.num_ris)
        try:
            res = dinkelbach_onoff(quad, p1, params, SolverOptions())
        except InfeasibleError:
            mismatches += np.isfinite(ee)
            continue
        mismatches += abs(res.lam - ee) > 1e-6 * ee
    out.append(("on-off dual vs exhaustive", mismatches == 0, f"{mismatches} of 10 mismatched"))

    misses = 0
    for s in range(10):
        g = (rng.normal(size=4) + 1j * rng.normal(size=4))
        U = rng.normal(size=(8, 4)) + 1j * rng.normal(size=(8, 4))
        v0 = np.ones(8, dtype=complex)
        gain = optimize_phases(g, U, v0, SolverOptions()).gains[-1]
        _, best = oracles.random_phase_search(lambda v: channel_gain(g, U, v), 8, 2000, seed + s)
        misses += gain < best * (1 - 1e-9)
    out.append(("phase SCA vs random search", misses == 0, f"{misses} of 10 below the oracle"))
    return out


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dris", description="Distributed-RIS energy-efficiency experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario and write a CSV")
    run.add_argument("--config", help="scenario INI file")
    run.add_argument("--out", required=True, help="output CSV path")
    run.add_argument("--preset", choices=sorted(PRESETS), help="built-in figure scenario")
    run.add_argument("--seed", type=int, help="override the root seed")
    run.add_argument("--trials", type=int, help="override the trial count")
    run.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    run.add_argument("--timing", action="store_true", help="fill the runtime_ms column (output no longer reproducible)")
    ver = sub.add_parser("verify", help="run quick solver-vs-oracle checks")
    ver.add_argument("--seed", type=int, default=0)
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "verify":
        try:
            checks = verify_checks(args.seed)
        except Exception as exc:  # noqa: BLE001
            print(f"verify failed: {exc}", file=sys.stderr)
            return 2
        for name, ok, detail in checks:
            print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        return 0 if all(ok for _, ok, _ in checks) else 2

    try:
        if args.config is None and args.preset is None:
            raise ConfigError("run needs --config, --preset, or both")
        text, source = "", "<empty>"
        if args.config is not None:
            try:
                with open(args.config, encoding="utf-8") as fh:
                    text, source = fh.read(), args.config
            except OSError as exc:
                raise ConfigError(f"cannot read {args.config}: {exc.strerror or exc}") from None
        scenario = parse_config(text, args.preset, source)
        if args.seed is not None:
            scenario = replace(scenario, root_seed=args.seed)
        if args.trials is not None:
            scenario = replace(scenario, trials=args.trials)
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    try:
        rows = run_scenario(scenario, jobs=args.jobs)
        emit_csv(rows, args.out, timing=args.timing)
    except Exception as exc:  # noqa: BLE001
        print(f"run failed: {exc}", file=sys.stderr)
        return 2
    n_bad = sum(1 for r in rows if not r["feasible"])
    print(f"wrote {len(rows)} rows to {os.fspath(args.out)} ({n_bad} infeasible)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
