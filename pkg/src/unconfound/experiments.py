"""Experiment configurations, runners and result tables behind the CLI.

Every runner is a pure function of its :class:`ExperimentConfig`: replicate
``i`` draws from ``substream(seed, i)`` whatever the worker count, and rows
are emitted in a fixed order, so equal configs give byte-identical output.
The replicate stream is shared across sweep grid points (common random
numbers), which isolates the effect of the swept parameter.
"""

from __future__ import annotations

import copy
import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import multiprocessing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import yaml

from .data import Dataset, Source
from .errors import ConfigError, DomainError, EstimationError, IngestionError, TestExecutionError
from .hypotest import (
    analytic_power,
    bootstrap_decision,
    fit_propensity,
    bootstrap_p_value,
    bootstrap_replicates,
    z_from_estimates,
    z_test,
)
from .scenarios import (
    LinearScenario,
    SelectionRule,
    add_squared_terms,
    encode,
    generate,
    induce_confounding,
    read_csv,
    require_groups_present,
    scenario_from_dict,
    scenario_to_dict,
    split_rct,
)
from .statcore import normal_quantile, substream

log = logging.getLogger(__name__)

KINDS = ("type1", "power-sweep", "analytic-power", "test-pair", "semisynth")
COLUMNS = ("command", "seed", "config_hash", "label", "parameter", "grid_value", "alpha", "index", "metric", "value", "se")

# Reduced and full-scale settings.  Power curves are drawn with 200
# replicates and B = 500 at both scales; the Type I error tables and the
# single-pair tests use B = 1000 at full scale.
PRESETS = {
    "ci": {"replicates": 200, "b": 500},
    "paper": {"replicates": 1000, "b": 1000, "sweep_replicates": 200, "sweep_b": 500},
}

_SIM_KEYS = {"kind", "label", "model", "scenario", "replicates", "b", "alpha_levels", "seed", "propensity_features"}
_ALLOWED = {
    "type1": _SIM_KEYS,
    "power-sweep": _SIM_KEYS | {"sweep"},
    "analytic-power": _SIM_KEYS | {"sweep", "empirical"},
    "test-pair": {"kind", "label", "rct_csv", "obs_csv", "treatment", "outcome", "covariates", "na_policy",
                  "b", "alpha_levels", "seed"},
    "semisynth": {"kind", "label", "csv", "treatment", "outcome", "covariates", "na_policy", "rule", "n_rct",
                  "b", "alpha_levels", "seed"},
}
_SWEEP_KEYS = {"parameter", "values", "hold_c_eta"}
_RULE_KEYS = {"confounder_column", "group_a", "group_b"}


@dataclass
class ExperimentConfig:
    """Resolved experiment settings; ``to_dict`` is the echo written with results."""

    kind: str
    seed: int = 0
    label: str = ""
    model: str = "linear"
    scenario: dict = field(default_factory=dict)
    replicates: int = 200
    b: int = 500
    alpha_levels: list = field(default_factory=lambda: [0.05])
    sweep: Optional[dict] = None
    propensity_features: str = "linear"
    empirical: bool = False
    # file-based experiments
    rct_csv: Optional[str] = None
    obs_csv: Optional[str] = None
    csv: Optional[str] = None
    treatment: str = "A"
    outcome: str = "Y"
    covariates: list = field(default_factory=list)
    na_policy: str = "drop"
    rule: Optional[dict] = None
    n_rct: int = 200

    def to_dict(self) -> dict:
        keep = _ALLOWED[self.kind] | {"seed", "label"}
        d = {k: v for k, v in dataclasses.asdict(self).items() if k in keep}
        if "scenario" in d:
            d["scenario"] = scenario_to_dict(self.build_scenario())
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def build_scenario(self):
        return scenario_from_dict(self.model, self.scenario)


def _check_prob_list(levels):
    if not isinstance(levels, list) or not levels:
        raise ConfigError("alpha_levels must be a nonempty list")
    for a in levels:
        if isinstance(a, bool) or not isinstance(a, (int, float)) or not (0.0 < a < 1.0):
            raise ConfigError(f"alpha level {a!r} is not in (0, 1)")
    return [float(a) for a in levels]


def _resolve_path(value, base: Path):
    if value is None:
        return None
    p = Path(value)
    return str(p if p.is_absolute() else (base / p))


def config_from_dict(doc: dict, kind: Optional[str] = None, base_dir=".", seed=None, preset=None) -> ExperimentConfig:
    """Validate a configuration mapping; unknown keys are errors."""
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a mapping")
    doc = copy.deepcopy(doc)
    if "config" in doc and "rows" in doc:
        # a JSON result payload: re-run from its echoed config
        doc = doc["config"]
    file_kind = doc.get("kind")
    if kind is not None and file_kind is not None and file_kind != kind:
        raise ConfigError(f"config is for {file_kind!r}, not {kind!r}")
    kind = kind or file_kind
    if kind not in KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}; expected one of {', '.join(KINDS)}")
    unknown = sorted(set(doc) - _ALLOWED[kind])
    if unknown:
        raise ConfigError(f"unknown keys for {kind}: {', '.join(unknown)}")
    doc["kind"] = kind
    base = Path(base_dir)

    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}")
        scale = PRESETS[preset]
        if kind == "type1":
            doc["replicates"] = scale["replicates"]
        elif kind in ("power-sweep", "analytic-power"):
            doc["replicates"] = scale.get("sweep_replicates", scale["replicates"])
        sweep = kind in ("power-sweep", "analytic-power")
        doc["b"] = scale.get("sweep_b", scale["b"]) if sweep else scale["b"]
    if seed is not None:
        doc["seed"] = seed

    cfg = ExperimentConfig(kind=kind)
    s = doc.get("seed", 0)
    if isinstance(s, bool) or not isinstance(s, int) or not (0 <= s < 2**64):
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {s!r}")
    cfg.seed = s
    cfg.label = str(doc.get("label", ""))
    for key in ("replicates", "b", "n_rct"):
        if key in doc:
            v = doc[key]
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise ConfigError(f"{key} must be a positive integer, got {v!r}")
            setattr(cfg, key, v)
    if "alpha_levels" in doc:
        cfg.alpha_levels = _check_prob_list(doc["alpha_levels"])

    if kind in ("type1", "power-sweep", "analytic-power"):
        cfg.model = doc.get("model", "linear")
        sc = doc.get("scenario", {})
        if not isinstance(sc, dict):
            raise ConfigError("scenario must be a mapping")
        cfg.scenario = dict(sc)
        cfg.build_scenario()
        feats = doc.get("propensity_features", "linear")
        if feats not in ("linear", "quadratic"):
            raise ConfigError("propensity_features must be 'linear' or 'quadratic'")
        cfg.propensity_features = feats
        if kind != "analytic-power" and cfg.b < 100:
            raise ConfigError("b must be at least 100")
    if kind in ("power-sweep", "analytic-power"):
        sw = doc.get("sweep")
        if not isinstance(sw, dict):
            raise ConfigError(f"{kind} requires a sweep mapping")
        bad = sorted(set(sw) - _SWEEP_KEYS)
        if bad:
            raise ConfigError(f"unknown sweep keys: {', '.join(bad)}")
        param = sw.get("parameter")
        fields = {f.name for f in dataclasses.fields(type(cfg.build_scenario()))}
        if param not in fields:
            raise ConfigError(f"sweep parameter {param!r} is not a scenario field")
        values = sw.get("values")
        if not isinstance(values, list) or not values:
            raise ConfigError("sweep values must be a nonempty list")
        if any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in values):
            raise ConfigError("sweep values must be numeric")
        hold = bool(sw.get("hold_c_eta", False))
        if hold and (param != "beta_u" or cfg.model != "linear"):
            raise ConfigError("hold_c_eta only applies to a beta_u sweep of the linear model")
        if hold and cfg.build_scenario().beta_u == 0:
            raise ConfigError("hold_c_eta needs a nonzero base beta_u")
        cfg.sweep = {"parameter": param, "values": [float(v) for v in values], "hold_c_eta": hold}
        for v in cfg.sweep["values"]:
            _grid_scenario(cfg, v)
    if kind == "analytic-power":
        if cfg.model != "linear":
            raise ConfigError("analytic power is defined for the linear model only")
        cfg.empirical = bool(doc.get("empirical", False))
        for v in cfg.sweep["values"]:
            if _grid_scenario(cfg, v).beta_u == 0:
                raise ConfigError("analytic power is undefined when beta_u = 0")

    if kind in ("test-pair", "semisynth"):
        for key in ("treatment", "outcome", "na_policy"):
            if key in doc:
                setattr(cfg, key, str(doc[key]))
        cov = doc.get("covariates", [])
        if not isinstance(cov, list):
            raise ConfigError("covariates must be a list of column names")
        cfg.covariates = [str(c) for c in cov]
        if cfg.b < 100:
            raise ConfigError("b must be at least 100")
    if kind == "test-pair":
        for key in ("rct_csv", "obs_csv"):
            if key not in doc:
                raise ConfigError(f"test-pair requires {key}")
            setattr(cfg, key, _resolve_path(doc[key], base))
    if kind == "semisynth":
        if "csv" not in doc:
            raise ConfigError("semisynth requires csv")
        cfg.csv = _resolve_path(doc["csv"], base)
        rule = doc.get("rule")
        if not isinstance(rule, dict) or set(rule) != _RULE_KEYS:
            raise ConfigError(f"rule must be a mapping with keys {sorted(_RULE_KEYS)}")
        cfg.rule = {
            "confounder_column": str(rule["confounder_column"]),
            "group_a": sorted(str(g) for g in rule["group_a"]),
            "group_b": sorted(str(g) for g in rule["group_b"]),
        }
        if cfg.rule["confounder_column"] not in cfg.covariates:
            raise ConfigError("the rule's confounder column must be listed in covariates")
    return cfg


def load_config(path, kind=None, seed=None, preset=None) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(doc or {}, kind=kind, base_dir=path.parent, seed=seed, preset=preset)


# ------------------------------------------------------------------ result table


@dataclass
class ResultTable:
    command: str
    seed: int
    config_hash: str
    config: dict
    rows: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    def add(self, metric, value, se=None, label="", parameter="", grid_value=None, alpha=None, index=None):
        self.rows.append(
            {
                "command": self.command,
                "seed": self.seed,
                "config_hash": self.config_hash,
                "label": label,
                "parameter": parameter,
                "grid_value": grid_value,
                "alpha": alpha,
                "index": index,
                "metric": metric,
                "value": value,
                "se": se,
            }
        )

    def select(self, metric, **match) -> list:
        return [r for r in self.rows if r["metric"] == metric and all(r[k] == v for k, v in match.items())]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(r[c]) for c in COLUMNS])
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {
            "command": self.command,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "config": self.config,
            "columns": list(COLUMNS),
            "rows": self.rows,
            "extras": self.extras,
        }
        return json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n"


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _new_table(cfg: ExperimentConfig) -> ResultTable:
    return ResultTable(cfg.kind, cfg.seed, cfg.config_hash(), cfg.to_dict())


def _binomial_se(p: float, r: int) -> float:
    return math.sqrt(p * (1.0 - p) / r)


# ------------------------------------------------------------------ replicate map


def _map(fn: Callable, items, jobs: int) -> list:
    """Ordered map over ``items``; results never depend on ``jobs``."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    ctx = multiprocessing.get_context("fork")
    with ctx.Pool(jobs) as pool:
        return pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs)))


def _grid_scenario(cfg: ExperimentConfig, value):
    base = cfg.build_scenario()
    param = cfg.sweep["parameter"]
    if param in ("n", "m"):
        if value != int(value):
            raise ConfigError(f"sweep over {param} needs integer values")
        value = int(value)
    changes = {param: value}
    if cfg.sweep.get("hold_c_eta"):
        c = base.beta_x / base.beta_u
        eta = base.sigma_eps**2 / base.beta_u**2
        changes["beta_x"] = c * value
        changes["sigma_eps"] = math.sqrt(eta) * abs(value)
    try:
        return dataclasses.replace(base, **changes)
    except DomainError as exc:
        raise ConfigError(f"sweep value {param}={value}: {exc}") from exc


def _prepare(cfg, rct, obs):
    if cfg.propensity_features == "quadratic":
        return add_squared_terms(rct.strip_latent()), add_squared_terms(obs.strip_latent())
    return rct.strip_latent(), obs.strip_latent()


class _BootstrapJob:
    """Picklable per-replicate worker: generate a pair and bootstrap it."""

    def __init__(self, cfg: ExperimentConfig, scenario):
        self.cfg, self.scenario = cfg, scenario

    def __call__(self, i):
        rng = substream(self.cfg.seed, i)
        rct, obs = _prepare(self.cfg, *generate(self.scenario, rng))
        try:
            _, reps, _ = bootstrap_replicates(rct, obs, self.cfg.b, rng)
        except (TestExecutionError, EstimationError) as exc:
            raise TestExecutionError(f"replicate {i}: {exc}") from exc
        return [bootstrap_decision(reps, a)[2] for a in self.cfg.alpha_levels]


class _ZJob:
    def __init__(self, cfg: ExperimentConfig, scenario):
        self.cfg, self.scenario = cfg, scenario

    def __call__(self, i):
        rng = substream(self.cfg.seed, i)
        rct, obs = _prepare(self.cfg, *generate(self.scenario, rng))
        try:
            res = z_test(rct, obs, self.cfg.alpha_levels[0])
        except (TestExecutionError, EstimationError) as exc:
            raise TestExecutionError(f"replicate {i}: {exc}") from exc
        return [abs(res.z) > _zcrit(a) for a in self.cfg.alpha_levels]


def _zcrit(alpha):
    return normal_quantile(1 - alpha / 2)


def _rejection_rows(decisions, cfg):
    dec = np.asarray(decisions, dtype=float).reshape(len(decisions), len(cfg.alpha_levels))
    r = dec.shape[0]
    for j, alpha in enumerate(cfg.alpha_levels):
        p = float(dec[:, j].mean())
        yield alpha, p, _binomial_se(p, r)


# ------------------------------------------------------------------ runners


def run_type1(cfg: ExperimentConfig, jobs: int = 1) -> ResultTable:
    """Empirical rejection rate of the bootstrap test under a null scenario."""
    sc = cfg.build_scenario()
    if not sc.null_holds:
        log.warning("scenario does not satisfy H0; the reported rates are power, not Type I error")
    table = _new_table(cfg)
    decisions = _map(_BootstrapJob(cfg, sc), range(cfg.replicates), jobs)
    label = cfg.label or cfg.model
    for alpha, p, se in _rejection_rows(decisions, cfg):
        table.add("rejection_rate", p, se, label=label, alpha=alpha)
    table.extras["null_holds"] = sc.null_holds
    return table


def run_power_sweep(cfg: ExperimentConfig, jobs: int = 1) -> ResultTable:
    """Empirical bootstrap power over a grid of one scenario parameter."""
    table = _new_table(cfg)
    param = cfg.sweep["parameter"]
    label = cfg.label or cfg.model
    for v in cfg.sweep["values"]:
        sc = _grid_scenario(cfg, v)
        decisions = _map(_BootstrapJob(cfg, sc), range(cfg.replicates), jobs)
        for alpha, p, se in _rejection_rows(decisions, cfg):
            table.add("power", p, se, label=label, parameter=param, grid_value=v, alpha=alpha)
            if isinstance(sc, LinearScenario) and sc.beta_u != 0:
                table.add("analytic_power", analytic_power(sc, alpha).power, label=label,
                          parameter=param, grid_value=v, alpha=alpha)
    return table


def run_analytic_power(cfg: ExperimentConfig, jobs: int = 1) -> ResultTable:
    """Large-sample z-test power over a grid, optionally beside simulated z-test power."""
    table = _new_table(cfg)
    param = cfg.sweep["parameter"]
    label = cfg.label or cfg.model
    for v in cfg.sweep["values"]:
        sc = _grid_scenario(cfg, v)
        for alpha in cfg.alpha_levels:
            rep = analytic_power(sc, alpha)
            table.add("analytic_power", rep.power, label=label, parameter=param, grid_value=v, alpha=alpha)
            table.add("h", rep.h, label=label, parameter=param, grid_value=v, alpha=alpha)
        if cfg.empirical:
            decisions = _map(_ZJob(cfg, sc), range(cfg.replicates), jobs)
            for alpha, p, se in _rejection_rows(decisions, cfg):
                table.add("empirical_z_power", p, se, label=label, parameter=param, grid_value=v, alpha=alpha)
    return table


def _pair_rows(table, label, rct: Dataset, obs: Dataset, cfg: ExperimentConfig, rng):
    try:
        t_obs, reps, redraws = bootstrap_replicates(rct, obs, cfg.b, rng)
        zres = z_test(rct, obs, cfg.alpha_levels[0])
    except EstimationError as exc:
        raise TestExecutionError(str(exc)) from exc
    table.add("n", len(rct), label=label + ":rct")
    table.add("n", len(obs), label=label + ":obs")
    table.add("omega_hat", zres.omega_r.omega_hat, zres.omega_r.se, label=label + ":rct")
    table.add("omega_hat", zres.omega_o.omega_hat, zres.omega_o.se, label=label + ":obs")
    table.add("t_observed", t_obs, label=label)
    table.add("z", zres.z, label=label)
    table.add("bootstrap_p_value_derived", bootstrap_p_value(reps), label=label)
    table.add("bootstrap_redraws", redraws, label=label)
    for alpha in cfg.alpha_levels:
        q_lo, q_hi, reject = bootstrap_decision(reps, alpha)
        table.add("q_lo", q_lo, label=label, alpha=alpha)
        table.add("q_hi", q_hi, label=label, alpha=alpha)
        table.add("bootstrap_reject", reject, label=label, alpha=alpha)
        zr = z_from_estimates(zres.omega_r, zres.omega_o, alpha)
        table.add("z_p_value", zr.p_value, label=label, alpha=alpha)
        table.add("z_reject", zr.reject, label=label, alpha=alpha)
    for k, t in enumerate(reps):
        table.add("t_star", float(t), label=label, index=k)
    table.extras[label] = {
        "rct_model": fit_propensity(rct).to_dict(),
        "obs_model": fit_propensity(obs).to_dict(),
        "obs_covariates": list(obs.covariate_names),
    }


def _read_pair(cfg: ExperimentConfig):
    cr = read_csv(cfg.rct_csv, cfg.treatment, cfg.outcome, cfg.covariates, cfg.na_policy)
    co = read_csv(cfg.obs_csv, cfg.treatment, cfg.outcome, cfg.covariates, cfg.na_policy)
    if set(cr.categorical) != set(co.categorical):
        raise IngestionError(
            "covariate schema mismatch: categorical columns differ "
            f"({sorted(cr.categorical)} vs {sorted(co.categorical)})"
        )
    levels = {c: sorted(set(cr.categorical[c]) | set(co.categorical[c])) for c in cr.categorical}
    return cr, co, encode(cr, Source.RCT, levels), encode(co, Source.OBS, levels)


def run_test_pair(cfg: ExperimentConfig, jobs: int = 1) -> ResultTable:
    """Bootstrap and z tests on an RCT file and an observational file."""
    cr, co, rct, obs = _read_pair(cfg)
    table = _new_table(cfg)
    table.extras["ingestion"] = {
        "rct": {"rows_read": cr.rows_read, "rows_dropped": cr.rows_dropped},
        "obs": {"rows_read": co.rows_read, "rows_dropped": co.rows_dropped},
    }
    _pair_rows(table, cfg.label or "pair", rct, obs, cfg, substream(cfg.seed, 0))
    return table


def run_semisynth(cfg: ExperimentConfig, jobs: int = 1) -> ResultTable:
    """Split off an RCT, induce confounding in the rest, and test with the confounder observed and hidden."""
    cf = read_csv(cfg.csv, cfg.treatment, cfg.outcome, cfg.covariates, cfg.na_policy)
    full = encode(cf, Source.OBS)
    rule = SelectionRule(cfg.rule["confounder_column"], cfg.rule["group_a"], cfg.rule["group_b"],
                         cfg.outcome, cfg.treatment)
    require_groups_present(full, rule)
    rct, rest = split_rct(full, cfg.n_rct, substream(cfg.seed, 0))
    table = _new_table(cfg)
    table.extras["ingestion"] = {"rows_read": cf.rows_read, "rows_dropped": cf.rows_dropped}
    for k, hide in enumerate((False, True)):
        label = "confounder_hidden" if hide else "confounder_observed"
        obs = induce_confounding(rest, rule, hide_confounder=hide)
        r = rct.drop_covariate(rule.confounder_column) if hide else rct
        _pair_rows(table, label, r, obs, cfg, substream(cfg.seed, 1 + k))
    return table


RUNNERS = {
    "type1": run_type1,
    "power-sweep": run_power_sweep,
    "analytic-power": run_analytic_power,
    "test-pair": run_test_pair,
    "semisynth": run_semisynth,
}


def run(cfg: ExperimentConfig, jobs: int = 1) -> ResultTable:
    return RUNNERS[cfg.kind](cfg, jobs)
