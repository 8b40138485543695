"""Configuration files, seeded Monte Carlo sweeps, result files and the CLI.

Config files are TOML with two tables::

    [system]                 # keys mirror SystemConfig; powers in dBm,
    P_max = 30.0             # rho0 in dB, angles in rad, distances in m
    sigma2 = -100.0
    [experiment]
    mode = "active"          # active | passive | nonrobust | validate
    trials = 20
    base_seed = 0
    de_ratio = 0.5
    sweep = { name = "de_ratio", values = [0.2, 0.5, 0.8] }
    # or sweep = { name = "M", start = 16, stop = 64, step = 16 }

Trial seeds are ``base_seed XOR mix64(mix64(bits(sweep_value)) XOR trial)``
with the splitmix64 finalizer as ``mix64``; streams therefore do not depend
on the order in which trials run.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import struct
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np
import tomli
import tomli_w

from .channel import (ChannelSet, ConfigError, CsiErrorModel, SystemConfig,
                      estimated_channels, sample_channels, sample_csi_errors, sample_topology,
                      upa_shape)
from .rates import ergodic_eve_correlation

log = logging.getLogger(__name__)

MODES = ("active", "passive", "nonrobust", "validate")
SWEEP_NAMES = ("de_ratio", "M", "K", "delta_K", "delta_E", "N")
METRICS = ("secrecy_rate", "avg_secrecy_rate", "feasible", "empirical_outage",
           "solve_time_s", "iterations")
CSV_FIELDS = ("mode", "sweep_name", "sweep_value", "trial", "seed", "metric_name",
              "metric_value", "status")
MASK64 = (1 << 64) - 1

# config keys stored in log units in the file
_DBM_KEYS = ("P_max",)
_DB_KEYS = ("rho0",)


# ---------------------------------------------------------------------------
# configuration

def _w_to_dbm(p):
    return 10.0 * math.log10(p) + 30.0


def _dbm_to_w(p):
    return 10.0 ** ((p - 30.0) / 10.0)


@dataclass
class ExperimentSpec:
    mode: str = "active"
    sweep_name: str = "de_ratio"
    sweep_values: tuple = (0.5,)
    trials: int = 1
    base_seed: int = 0
    de_ratio: float = 0.5
    n_mc: int = 10_000
    record_timing: bool = False
    overrides: dict = field(default_factory=dict)
    output_path: str = ""

    def validate(self) -> "ExperimentSpec":
        if self.mode not in MODES:
            raise ConfigError("mode", f"must be one of {MODES}, got {self.mode!r}")
        if self.sweep_name not in SWEEP_NAMES:
            raise ConfigError("sweep", f"unknown parameter {self.sweep_name!r}")
        if int(self.trials) < 1:
            raise ConfigError("trials", f"must be >= 1, got {self.trials}")
        if not 0 <= int(self.base_seed) <= MASK64:
            raise ConfigError("base_seed", "must be an unsigned 64-bit integer")
        if not 0 < self.de_ratio < 1:
            raise ConfigError("de_ratio", f"must lie in (0, 1), got {self.de_ratio}")
        if self.n_mc < 1000:
            raise ConfigError("n_mc", "use at least 1000 Monte Carlo samples")
        if not self.sweep_values:
            raise ConfigError("sweep", "no sweep values")
        return self


def sweep_values_from(table) -> tuple:
    """Values from ``{values=[...]}`` or an inclusive ``{start, stop, step}`` range."""
    if "values" in table:
        return tuple(table["values"])
    try:
        start, stop, step = table["start"], table["stop"], table["step"]
    except KeyError as exc:
        raise ConfigError("sweep", f"missing {exc.args[0]!r}") from None
    if step <= 0 or stop < start:
        raise ConfigError("sweep", "need step > 0 and stop >= start")
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    vals = [start + i * step for i in range(n)]
    if all(isinstance(x, int) for x in (start, stop, step)):
        return tuple(int(v) for v in vals)
    return tuple(round(v, 12) for v in vals)


def parse_sweep_arg(text: str):
    """``name=start:stop:step`` or ``name=v1,v2,...``."""
    if "=" not in text:
        raise ConfigError("sweep", f"expected name=start:stop:step, got {text!r}")
    name, rhs = text.split("=", 1)
    num = lambda s: int(s) if s.strip().lstrip("-").isdigit() else float(s)  # noqa: E731
    try:
        if ":" in rhs:
            parts = [num(p) for p in rhs.split(":")]
            if len(parts) != 3:
                raise ValueError
            return name.strip(), sweep_values_from(dict(zip(("start", "stop", "step"), parts)))
        return name.strip(), tuple(num(p) for p in rhs.split(","))
    except ValueError:
        raise ConfigError("sweep", f"cannot parse sweep {text!r}") from None


def config_from_table(table: dict) -> SystemConfig:
    known = {f.name for f in fields(SystemConfig)}
    kw = {}
    for key, val in table.items():
        if key == "M":
            kw["Mx"], kw["My"] = upa_shape(int(val))
            continue
        if key not in known:
            raise ConfigError(key, "unknown system key")
        if key in _DBM_KEYS:
            val = _dbm_to_w(float(val))
        elif key in _DB_KEYS:
            val = 10.0 ** (float(val) / 10.0)
        elif key == "sigma2":
            val = ({str(k): _dbm_to_w(float(v)) for k, v in val.items()}
                   if isinstance(val, dict) else _dbm_to_w(float(val)))
        elif key == "irs_polar":
            val = tuple(float(v) for v in val)
        kw[key] = val
    cfg = SystemConfig(**kw)
    if isinstance(cfg.sigma2, dict):
        # node keys: user indices as integers, the eavesdropper as "E"
        cfg = replace(cfg, sigma2={(int(k) if k.isdigit() else k): v for k, v in cfg.sigma2.items()})
    return cfg.validate()


def config_to_table(cfg: SystemConfig) -> dict:
    out = {}
    for f in fields(SystemConfig):
        val = getattr(cfg, f.name)
        if f.name in _DBM_KEYS:
            val = _w_to_dbm(val)
        elif f.name in _DB_KEYS:
            val = 10.0 * math.log10(val)
        elif f.name == "sigma2":
            val = ({str(k): _w_to_dbm(v) for k, v in val.items()}
                   if isinstance(val, dict) else _w_to_dbm(val))
        elif f.name == "irs_polar":
            val = [float(v) for v in val]
        elif isinstance(val, (np.floating, np.integer)):
            val = val.item()
        out[f.name] = val
    return out


def spec_from_table(table: dict) -> ExperimentSpec:
    table = dict(table)
    kw = {}
    if "sweep" in table:
        sw = table.pop("sweep")
        if "name" not in sw:
            raise ConfigError("sweep", "missing 'name'")
        kw["sweep_name"], kw["sweep_values"] = sw["name"], sweep_values_from(sw)
    known = {f.name for f in fields(ExperimentSpec)} - {"sweep_name", "sweep_values", "overrides"}
    for key, val in table.items():
        if key not in known:
            raise ConfigError(key, "unknown experiment key")
        kw[key] = val
    return ExperimentSpec(**kw).validate()


def spec_to_table(spec: ExperimentSpec) -> dict:
    out = {f.name: getattr(spec, f.name) for f in fields(ExperimentSpec)
           if f.name not in ("sweep_name", "sweep_values", "overrides")}
    out["sweep"] = {"name": spec.sweep_name, "values": list(spec.sweep_values)}
    return out


def loads_config(text: str) -> tuple[SystemConfig, ExperimentSpec]:
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError("<file>", f"parse error: {exc}") from None
    unknown = set(doc) - {"system", "experiment"}
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown table")
    system = doc.get("system", {})
    cfg = config_from_table(system)
    spec = spec_from_table(doc.get("experiment", {}))
    spec.overrides = dict(system)
    return cfg, spec


def load_config(path) -> tuple[SystemConfig, ExperimentSpec]:
    """Read a TOML config file; unspecified keys take the simulation defaults."""
    try:
        with open(path, "rb") as fh:
            text = fh.read().decode("utf-8")
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from None
    return loads_config(text)


def dumps_config(cfg: SystemConfig, spec: ExperimentSpec | None = None) -> str:
    doc = {"system": config_to_table(cfg)}
    if spec is not None:
        doc["experiment"] = spec_to_table(spec)
    return tomli_w.dumps(doc)


# ---------------------------------------------------------------------------
# seeds

def mix64(x: int) -> int:
    """splitmix64 finalizer."""
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def trial_seed(base_seed: int, sweep_value, trial: int) -> int:
    bits = struct.unpack("<Q", struct.pack("<d", float(sweep_value)))[0]
    return (int(base_seed) ^ mix64(mix64(bits) ^ int(trial))) & MASK64


# ---------------------------------------------------------------------------
# trials

@dataclass
class ResultRow:
    mode: str
    sweep_name: str
    sweep_value: float
    trial: int
    seed: int
    metric_name: str
    metric_value: float
    status: str


def apply_sweep(cfg: SystemConfig, spec: ExperimentSpec, name: str, value):
    """(config, de_ratio) with the swept parameter set and validated."""
    de_ratio = spec.de_ratio
    if name == "de_ratio":
        de_ratio = float(value)
        if not 0 < de_ratio < 1:
            raise ConfigError("de_ratio", f"must lie in (0, 1), got {value}")
    elif name == "M":
        if int(value) != value or value < 1:
            raise ConfigError("M", f"must be a positive integer, got {value}")
        cfg = cfg.with_M(int(value))
    elif name in ("K", "N"):
        if int(value) != value:
            raise ConfigError(name, f"must be an integer, got {value}")
        cfg = replace(cfg, **{name: int(value)})
    else:
        cfg = replace(cfg, **{name: float(value)})
    return cfg.validate(), de_ratio


def _sample_estimate(ch: ChannelSet, cfg: SystemConfig, rng):
    """Error model from the true channels, plus the estimated channel set."""
    errors = CsiErrorModel.relative(ch, cfg.delta_K, cfg.delta_E)
    dK, dE = sample_csi_errors(errors, rng)
    est = ch.with_cascaded(estimated_channels(ch.H_K, dK), estimated_channels(ch.H_E, dE))
    return errors, est


def run_trial(cfg: SystemConfig, spec: ExperimentSpec, value, trial: int) -> list[ResultRow]:
    """One seeded trial; failures become status rows, never exceptions."""
    from .passive import ao_passive, nonrobust_baseline
    from .robust_active import ao_active, secrecy_samples, validate_outage

    seed = trial_seed(spec.base_seed, value, trial)
    metrics, status = {}, "ok"
    try:
        cfg, de_ratio = apply_sweep(cfg, spec, spec.sweep_name, value)
        rng = np.random.default_rng(seed)
        topo = sample_topology(cfg, de_ratio, rng)
        ch = sample_channels(cfg, topo, rng)
        start = time.perf_counter()
        if spec.mode in ("active", "validate"):
            errors, est = _sample_estimate(ch, cfg, rng)
            sol = ao_active(est, errors, cfg, rng=rng)
            elapsed = time.perf_counter() - start
            metrics = {"secrecy_rate": sol.R_sec, "feasible": float(sol.feasible),
                       "iterations": sol.iterations}
            status = sol.status
            if spec.mode == "validate":
                metrics["empirical_outage"] = validate_outage(sol, est, errors, cfg, spec.n_mc, rng)
        elif spec.mode == "passive":
            R = ergodic_eve_correlation(cfg, topo).R_E_mat
            sol = ao_passive(ch, R, cfg, rng=rng)
            elapsed = time.perf_counter() - start
            metrics = {"avg_secrecy_rate": sol.achieved_rate,
                       "feasible": float(sol.status == "ok" and sol.achieved_rate > 0),
                       "iterations": sol.iterations}
            status = sol.status
        else:
            errors, est = _sample_estimate(ch, cfg, rng)
            sol = nonrobust_baseline(est, cfg, rng=rng)
            elapsed = time.perf_counter() - start
            sec = secrecy_samples(sol, est, errors, cfg, spec.n_mc, rng)
            metrics = {"secrecy_rate": sol.achieved_rate,
                       "empirical_outage": float(np.mean(sec < sol.achieved_rate)),
                       "iterations": sol.iterations}
            status = sol.status
        if spec.record_timing:
            metrics["solve_time_s"] = elapsed
    except Exception as exc:  # noqa: BLE001 -- a failed trial never aborts the sweep
        status = f"error:{type(exc).__name__}"
        log.warning("trial %s=%s #%d failed: %s", spec.sweep_name, value, trial, exc)
        metrics = {"feasible": 0.0}
    rows = []
    for name in METRICS:
        if name in metrics:
            v = float(metrics[name])
            rows.append(ResultRow(spec.mode, spec.sweep_name, float(value), trial, seed, name,
                                  v if math.isfinite(v) else 0.0, status))
    return rows


def _run_task(args):
    return run_trial(*args)


def run_sweep(cfg: SystemConfig, spec: ExperimentSpec, threads: int = 1) -> list[ResultRow]:
    """Every (sweep value, trial) pair, reduced in (value, trial) order."""
    spec.validate()
    tasks = [(cfg, spec, v, t) for v in spec.sweep_values for t in range(spec.trials)]
    if threads <= 1 or len(tasks) == 1:
        results = [_run_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_task, tasks, chunksize=1))
    return [row for rows in results for row in rows]


# ---------------------------------------------------------------------------
# output

def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_csv(rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(CSV_FIELDS)
    for r in rows:
        wr.writerow([_fmt(getattr(r, f)) for f in CSV_FIELDS])
    return buf.getvalue()


def format_json(rows) -> str:
    return json.dumps([{f: getattr(r, f) for f in CSV_FIELDS} for r in rows], indent=2) + "\n"


def emit_results(rows, path, fmt: str = "csv") -> None:
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown format {fmt!r}")
    text = format_csv(rows) if fmt == "csv" else format_json(rows)
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write results to {path}: {exc.strerror}") from None


def summarize(rows) -> dict:
    """Mean of every metric per sweep value."""
    acc = {}
    for r in rows:
        acc.setdefault((r.sweep_value, r.metric_name), []).append(r.metric_value)
    return {k: float(np.mean(v)) for k, v in sorted(acc.items())}


# ---------------------------------------------------------------------------
# command line

def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file")
    common.add_argument("--out", help="result file (default: stdout)")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--trials", type=int)
    common.add_argument("--seed", type=int, help="base seed (unsigned 64-bit)")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--sweep", help="name=start:stop:step or name=v1,v2,...")
    common.add_argument("--timing", action="store_true",
                        help="record wall-clock solve times (results no longer byte-stable)")
    p = argparse.ArgumentParser(prog="irsswipt", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("active", "passive", "nonrobust"):
        sub.add_parser(name, parents=[common], help=f"{name} design sweep")
    sub.add_parser("sweep", parents=[common], help="experiment from a config file")
    v = sub.add_parser("validate-lemmas", help="bound, BTI and surrogate property suites")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--full", action="store_true", help="full-size Monte Carlo audit")
    return p


def _spec_from_args(args) -> tuple[SystemConfig, ExperimentSpec]:
    if args.command == "sweep" and not args.config:
        raise ConfigError("--config", "the sweep command needs a config file")
    if args.config:
        cfg, spec = load_config(args.config)
    else:
        cfg, spec = SystemConfig(), ExperimentSpec()
    if args.command != "sweep":
        spec.mode = args.command
    if args.trials is not None:
        spec.trials = args.trials
    if args.seed is not None:
        spec.base_seed = args.seed
    if args.sweep:
        spec.sweep_name, spec.sweep_values = parse_sweep_arg(args.sweep)
    if args.timing:
        spec.record_timing = True
    if args.out:
        spec.output_path = args.out
    return cfg, spec.validate()


def cli_main(argv=None) -> int:
    """Exit codes: 0 success, 1 configuration error, 2 execution failure."""
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "validate-lemmas":
        from .checks import validate_lemmas
        try:
            results = validate_lemmas(args.seed, quick=not args.full)
        except Exception as exc:  # noqa: BLE001 -- report, do not trace
            print(f"error: {exc}", file=sys.stderr)
            return 2
        for r in results:
            print(r.line())
        n_ok = sum(r.passed for r in results)
        print(f"{n_ok}/{len(results)} suites passed")
        return 0 if n_ok == len(results) else 2
    try:
        cfg, spec = _spec_from_args(args)
        for v in spec.sweep_values:
            apply_sweep(cfg, spec, spec.sweep_name, v)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        rows = run_sweep(cfg, spec, threads=max(1, args.threads))
        if spec.output_path:
            emit_results(rows, spec.output_path, args.format)
        else:
            sys.stdout.write(format_csv(rows) if args.format == "csv" else format_json(rows))
    except Exception as exc:  # noqa: BLE001
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0
