"""Synthetic RCT/observational pairs, CSV ingestion and outcome-based selection.

Linear model (observational sample of size ``m``)::

    X ~ N(mu_x, sigma_x^2),  A ~ Bernoulli(p_o)
    U = delta0 + delta_a*A + delta_x*X + nu,        nu ~ N(0, sigma_u^2)
    Y = beta0 + beta_a*A + beta_x*X + beta_u*U + eps, eps ~ N(0, sigma_eps^2)

Non-linear model::

    U = delta0 + delta_x*X^2 + delta_a*A + delta_xa*X*A + nu
    Y = gamma0 + gamma_x*X^2 + gamma_a*A + gamma_xa*X^2*A + beta_u*U^2 + eps

The RCT sample (size ``n``) draws X, A and U exactly as above, then replaces
A by an independent Bernoulli(p_r) draw before Y is computed.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
import yaml

from .data import Dataset, Source
from .errors import ConfigError, DomainError, IngestionError, RuleError
from .statcore import Rng, draw_bernoulli, draw_normal

log = logging.getLogger(__name__)


def _validate_common(sc):
    for name in ("sigma_eps", "sigma_u", "sigma_x"):
        if getattr(sc, name) < 0:
            raise DomainError(f"{name} must be nonnegative")
    for name in ("p_o", "p_r"):
        p = getattr(sc, name)
        if not (0.0 < p < 1.0):
            raise DomainError(f"{name} must lie in (0, 1), got {p}")
    for name in ("n", "m"):
        v = getattr(sc, name)
        if int(v) != v or v < 2:
            raise DomainError(f"{name} must be an integer >= 2, got {v}")
    for f in fields(sc):
        v = getattr(sc, f.name)
        if not math.isfinite(v):
            raise DomainError(f"{f.name} must be finite")


@dataclass(frozen=True)
class LinearScenario:
    beta0: float = 0.0
    beta_a: float = 2.0
    beta_x: float = 1.0
    beta_u: float = 1.0
    delta0: float = 0.0
    delta_a: float = 1.0
    delta_x: float = 1.0
    sigma_eps: float = 1.0
    sigma_u: float = 1.0
    mu_x: float = 0.0
    sigma_x: float = 1.0
    p_o: float = 0.3
    p_r: float = 0.5
    n: int = 100
    m: int = 2000

    def __post_init__(self):
        _validate_common(self)

    @property
    def tau(self) -> float:
        return self.beta_a

    @property
    def omega_obs(self) -> float:
        return self.beta_a + self.beta_u * self.delta_a

    @property
    def omega_rct(self) -> float:
        return self.beta_a

    @property
    def null_holds(self) -> bool:
        return self.beta_u * self.delta_a == 0


@dataclass(frozen=True)
class NonlinearScenario:
    gamma0: float = 0.0
    gamma_x: float = 1.0
    gamma_a: float = 2.0
    gamma_xa: float = 1.0
    delta0: float = 0.0
    delta_x: float = 0.5
    delta_a: float = 0.0
    delta_xa: float = 0.0
    beta_u: float = 0.0
    sigma_eps: float = 1.0
    sigma_u: float = 1.0
    mu_x: float = 0.0
    sigma_x: float = 1.0
    p_o: float = 0.3
    p_r: float = 0.5
    n: int = 100
    m: int = 2000

    def __post_init__(self):
        _validate_common(self)

    @property
    def null_holds(self) -> bool:
        return self.beta_u == 0 or (self.delta_a == 0 and self.delta_xa == 0)


SCENARIO_TYPES = {"linear": LinearScenario, "nonlinear": NonlinearScenario}


def scenario_from_dict(model: str, params: dict):
    """Build a scenario, rejecting unknown keys."""
    try:
        cls = SCENARIO_TYPES[model]
    except KeyError:
        raise ConfigError(f"unknown model {model!r}; expected one of {sorted(SCENARIO_TYPES)}") from None
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(params) - known)
    if unknown:
        raise ConfigError(f"unknown {model} scenario keys: {', '.join(unknown)}")
    kwargs = {}
    for k, v in params.items():
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise ConfigError(f"scenario key {k!r} must be numeric, got {v!r}")
        kwargs[k] = int(v) if k in ("n", "m") else float(v)
    try:
        return cls(**kwargs)
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc


def scenario_to_dict(scenario) -> dict:
    return dataclasses.asdict(scenario)


def load_scenario(path) -> object:
    """Read a scenario file: ``model: linear|nonlinear`` plus scenario fields."""
    with open(path, encoding="utf-8") as fh:
        doc = yaml.safe_load(fh) or {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a mapping")
    doc = dict(doc)
    model = doc.pop("model", "linear")
    return scenario_from_dict(model, doc)


def _pair(x, a_obs, a_rct, u_obs, u_rct, y_obs, y_rct, n):
    rct = Dataset(a=a_rct, x=x[:n], y=y_rct, source=Source.RCT, covariate_names=("x",), u=u_rct)
    obs = Dataset(a=a_obs, x=x[n:], y=y_obs, source=Source.OBS, covariate_names=("x",), u=u_obs)
    return rct, obs


def generate_linear(scenario: LinearScenario, rng: Rng):
    """Draw an (RCT, OBS) pair of sizes ``(n, m)`` from the linear model."""
    sc = scenario
    total = sc.n + sc.m
    x = draw_normal(rng, sc.mu_x, sc.sigma_x, total)
    a = draw_bernoulli(rng, sc.p_o, total)
    u = sc.delta0 + sc.delta_a * a + sc.delta_x * x + draw_normal(rng, 0.0, sc.sigma_u, total)
    a_rct = draw_bernoulli(rng, sc.p_r, sc.n)
    a_all = np.concatenate([a_rct, a[sc.n:]])
    eps = draw_normal(rng, 0.0, sc.sigma_eps, total)
    y = sc.beta0 + sc.beta_a * a_all + sc.beta_x * x + sc.beta_u * u + eps
    n = sc.n
    return _pair(x, a[n:], a_rct, u[n:], u[:n], y[n:], y[:n], n)


def generate_nonlinear(scenario: NonlinearScenario, rng: Rng):
    """Draw an (RCT, OBS) pair of sizes ``(n, m)`` from the non-linear model."""
    sc = scenario
    total = sc.n + sc.m
    x = draw_normal(rng, sc.mu_x, sc.sigma_x, total)
    a = draw_bernoulli(rng, sc.p_o, total)
    u = (
        sc.delta0 + sc.delta_x * x**2 + sc.delta_a * a + sc.delta_xa * x * a
        + draw_normal(rng, 0.0, sc.sigma_u, total)
    )
    a_rct = draw_bernoulli(rng, sc.p_r, sc.n)
    a_all = np.concatenate([a_rct, a[sc.n:]])
    eps = draw_normal(rng, 0.0, sc.sigma_eps, total)
    f = sc.gamma0 + sc.gamma_x * x**2 + sc.gamma_a * a_all + sc.gamma_xa * x**2 * a_all
    y = f + sc.beta_u * u**2 + eps
    n = sc.n
    return _pair(x, a[n:], a_rct, u[n:], u[:n], y[n:], y[:n], n)


def generate(scenario, rng: Rng):
    if isinstance(scenario, LinearScenario):
        return generate_linear(scenario, rng)
    if isinstance(scenario, NonlinearScenario):
        return generate_nonlinear(scenario, rng)
    raise DomainError(f"unsupported scenario type {type(scenario).__name__}")


# --------------------------------------------------------------------------- CSV


@dataclass
class CsvFrame:
    """Cleaned CSV contents before numeric encoding."""

    frame: pd.DataFrame
    treatment: str
    outcome: str
    covariates: tuple
    categorical: dict  # column -> sorted levels
    rows_read: int
    rows_dropped: int


def read_csv(path, treatment_column, outcome_column, covariate_columns, na_policy="drop") -> CsvFrame:
    """Parse and clean a CSV; non-numeric covariates are kept as categorical labels."""
    if na_policy not in ("drop", "error"):
        raise IngestionError(f"unknown na_policy {na_policy!r}; expected 'drop' or 'error'")
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"{path}: no such file")
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except (pd.errors.ParserError, UnicodeDecodeError, pd.errors.EmptyDataError) as exc:
        raise IngestionError(f"{path}: {exc}") from exc
    covariate_columns = tuple(covariate_columns)
    wanted = (treatment_column, outcome_column) + covariate_columns
    missing = [c for c in wanted if c not in raw.columns]
    if missing:
        raise IngestionError(f"{path}: missing columns {missing}; header has {list(raw.columns)}")
    df = raw.loc[:, list(dict.fromkeys(wanted))].apply(lambda s: s.str.strip())
    na = df.isin(["", "NA", "NaN", "nan", "null"])
    bad_rows = na.any(axis=1)
    if bad_rows.any() and na_policy == "error":
        row = int(np.flatnonzero(bad_rows.to_numpy())[0])
        col = na.columns[na.iloc[row].to_numpy()][0]
        raise IngestionError(f"{path}: missing value at data row {row + 1}, column {col!r}")
    rows_read = len(df)
    df = df.loc[~bad_rows].reset_index(drop=True)
    if len(df) == 0:
        raise IngestionError(f"{path}: no rows left after dropping missing values")

    for col in (treatment_column, outcome_column):
        num = pd.to_numeric(df[col], errors="coerce")
        if num.isna().any():
            row = int(np.flatnonzero(num.isna().to_numpy())[0])
            raise IngestionError(f"{path}: unparseable number {df[col].iloc[row]!r} in column {col!r}")
        df[col] = num.astype(float)
    if not df[treatment_column].isin([0.0, 1.0]).all():
        raise IngestionError(f"{path}: treatment column {treatment_column!r} must contain only 0/1")

    categorical = {}
    for col in covariate_columns:
        num = pd.to_numeric(df[col], errors="coerce")
        if num.notna().all():
            df[col] = num.astype(float)
        else:
            categorical[col] = sorted(df[col].unique())
    return CsvFrame(
        frame=df,
        treatment=treatment_column,
        outcome=outcome_column,
        covariates=covariate_columns,
        categorical=categorical,
        rows_read=rows_read,
        rows_dropped=rows_read - len(df),
    )


def encode(cf: CsvFrame, source=Source.OBS, levels: Optional[dict] = None) -> Dataset:
    """Numeric dataset from a cleaned frame; categoricals one-hot with the first sorted level dropped.

    ``levels`` overrides the level sets (used to align two files on one schema).
    """
    levels = dict(cf.categorical if levels is None else levels)
    cols, names, origin = [], [], []
    labels = {}
    for col in cf.covariates:
        if col in levels:
            values = cf.frame[col].to_numpy(dtype=str)
            labels[col] = values
            lv = list(levels[col])
            unknown = sorted(set(values) - set(lv))
            if unknown:
                raise IngestionError(f"column {col!r} has levels {unknown} outside the schema {lv}")
            for level in lv[1:]:
                cols.append((values == level).astype(float))
                names.append(f"{col}={level}")
                origin.append(col)
        else:
            cols.append(cf.frame[col].to_numpy(dtype=float))
            names.append(col)
            origin.append(col)
    n = len(cf.frame)
    x = np.column_stack(cols) if cols else np.empty((n, 0))
    return Dataset(
        a=cf.frame[cf.treatment].to_numpy().astype(np.int64),
        x=x,
        y=cf.frame[cf.outcome].to_numpy(dtype=float),
        source=source,
        covariate_names=tuple(names),
        covariate_origin=tuple(origin),
        labels=labels,
    )


def load_csv(path, treatment_column, outcome_column, covariate_columns, na_policy="drop", source=Source.OBS) -> Dataset:
    """Read a CSV straight into a :class:`Dataset` (see :func:`read_csv`, :func:`encode`)."""
    cf = read_csv(path, treatment_column, outcome_column, covariate_columns, na_policy)
    log.info("%s: %d rows read, %d dropped for missing values", path, cf.rows_read, cf.rows_dropped)
    return encode(cf, source)


# ------------------------------------------------------------------ semi-synthetic


def split_rct(dataset: Dataset, n_rct: int, rng: Rng):
    """Simple random sample of ``n_rct`` rows tagged RCT, plus the disjoint remainder."""
    size = len(dataset)
    if not (0 < n_rct < size):
        raise DomainError(f"n_rct must satisfy 0 < n_rct < {size}, got {n_rct}")
    perm = rng.permutation(size)
    pick = np.sort(perm[:n_rct])
    rest = np.sort(perm[n_rct:])
    return dataset.subset(pick, source=Source.RCT), dataset.subset(rest, source=Source.OBS)


@dataclass(frozen=True)
class SelectionRule:
    """Outcome-based selection that turns a randomized sample into a confounded one.

    In ``group_a`` all controls are kept but only treated units with outcome at
    or above the group's treated median; in ``group_b`` all treated units are
    kept but only controls at or below the group's control median.
    """

    confounder_column: str
    group_a: frozenset
    group_b: frozenset
    outcome_column: str = "score"
    treatment_column: str = "small"

    def __post_init__(self):
        object.__setattr__(self, "group_a", frozenset(self.group_a))
        object.__setattr__(self, "group_b", frozenset(self.group_b))
        if not self.group_a or not self.group_b:
            raise RuleError("both location groups must be nonempty")
        if self.group_a & self.group_b:
            raise RuleError(f"groups overlap on {sorted(self.group_a & self.group_b)}")


def induce_confounding(dataset: Dataset, rule: SelectionRule, hide_confounder: bool = False) -> Dataset:
    """Apply ``rule`` and return the selected rows as an observational dataset.

    Medians are taken within each group before selection; ties at the median
    are kept.  Rows whose label is in neither group are kept unchanged.  With
    ``hide_confounder`` the confounder's covariate columns are removed.
    """
    if rule.confounder_column not in dataset.labels:
        raise RuleError(f"confounder column {rule.confounder_column!r} not among the categorical labels")
    loc = dataset.labels[rule.confounder_column]
    in_a = np.isin(loc, sorted(rule.group_a))
    in_b = np.isin(loc, sorted(rule.group_b))
    if not (in_a.any() or in_b.any()):
        raise RuleError("no rows fall in either group")
    treated = dataset.a == 1
    y = dataset.y
    keep = np.ones(len(dataset), dtype=bool)
    if in_a.any():
        cell = in_a & treated
        if not cell.any() or not (in_a & ~treated).any():
            raise RuleError(f"group_a {sorted(rule.group_a)} lacks treated or control rows")
        med = np.median(y[cell])
        keep &= ~(cell & (y < med))
    if in_b.any():
        cell = in_b & ~treated
        if not cell.any() or not (in_b & treated).any():
            raise RuleError(f"group_b {sorted(rule.group_b)} lacks treated or control rows")
        med = np.median(y[cell])
        keep &= ~(cell & (y > med))
    if in_a.any():
        kept = keep & in_a & treated
        assert np.all(y[kept] >= np.median(y[in_a & treated])), "group_a selection violated"
    if in_b.any():
        kept = keep & in_b & ~treated
        assert np.all(y[kept] <= np.median(y[in_b & ~treated])), "group_b selection violated"
    out = dataset.subset(keep, source=Source.OBS)
    if hide_confounder and rule.confounder_column in out.covariate_origin:
        out = out.drop_covariate(rule.confounder_column)
    return out


def require_groups_present(dataset: Dataset, rule: SelectionRule) -> None:
    """Raise :class:`RuleError` naming any rule group with no rows in ``dataset``."""
    if rule.confounder_column not in dataset.labels:
        raise RuleError(f"confounder column {rule.confounder_column!r} not among the categorical labels")
    loc = dataset.labels[rule.confounder_column]
    for name, group in (("group_a", rule.group_a), ("group_b", rule.group_b)):
        if not np.isin(loc, sorted(group)).any():
            raise RuleError(f"{name} {sorted(group)} has no rows in column {rule.confounder_column!r}")


def add_squared_terms(dataset: Dataset) -> Dataset:
    return dataset.with_squared_covariates()
