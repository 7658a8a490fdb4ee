"""Tests of H0: omega_obs == omega_rct, and the analytic power of the z-test.

Both tests refit the propensity model appropriate to each dataset's source:
a constant treated share for RCT data and a logistic regression on the
covariates for observational data.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, Source
from .errors import DomainError, EstimationError, TestExecutionError
from .estimators import IpwEstimate, hajek_contrast, ipw_estimate
from .propensity import (
    CLIP,
    CONVERGED,
    expit,
    fit_constant,
    fit_logistic,
    irls_batch,
    standardize,
)
from .statcore import Rng, empirical_quantile, normal_cdf, normal_quantile

REDRAW_FACTOR = 10
# float64 entries per bootstrap chunk
_CHUNK_BUDGET = 250_000


def fit_propensity(dataset: Dataset):
    """Constant model for RCT data, logistic model for observational data."""
    if dataset.source is Source.RCT:
        return fit_constant(dataset)
    return fit_logistic(dataset)


def _check_alpha(alpha):
    if not (0.0 < alpha < 1.0):
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")


def _warn_sizes(d_rct, d_obs):
    if len(d_obs) <= len(d_rct):
        warnings.warn(
            f"observational sample (m={len(d_obs)}) is not larger than the RCT sample (n={len(d_rct)})",
            stacklevel=3,
        )


@dataclass(frozen=True)
class BootstrapTestResult:
    t_observed: float
    replicates: np.ndarray = field(repr=False)
    q_lo: float
    q_hi: float
    alpha: float
    reject: bool
    b: int
    redraws: int = 0

    @property
    def p_value(self) -> float:
        """Two-sided bootstrap p-value 2*min(F(0), 1 - F(0)), clamped to [1/B, 1].

        Derived convenience output; the decision uses the quantile interval.
        """
        return bootstrap_p_value(self.replicates)

    def to_dict(self) -> dict:
        return {
            "t_observed": self.t_observed,
            "q_lo": self.q_lo,
            "q_hi": self.q_hi,
            "alpha": self.alpha,
            "reject": self.reject,
            "b": self.b,
            "redraws": self.redraws,
            "p_value_derived": self.p_value,
        }


@dataclass(frozen=True)
class ZTestResult:
    z: float
    p_value: float
    alpha: float
    reject: bool
    omega_r: IpwEstimate
    omega_o: IpwEstimate

    def to_dict(self) -> dict:
        return {
            "z": self.z,
            "p_value": self.p_value,
            "alpha": self.alpha,
            "reject": self.reject,
            "omega_r": self.omega_r.to_dict(),
            "omega_o": self.omega_o.to_dict(),
        }


@dataclass(frozen=True)
class PowerReport:
    h: float
    power: float
    c: float
    eta: float
    kappa: float
    inputs: dict

    def to_dict(self) -> dict:
        return {"h": self.h, "power": self.power, "c": self.c, "eta": self.eta, "kappa": self.kappa, **self.inputs}


def bootstrap_p_value(replicates) -> float:
    t = np.asarray(replicates, dtype=float)
    f0 = float(np.mean(t < 0.0))
    return float(min(1.0, max(1.0 / t.size, 2.0 * min(f0, 1.0 - f0))))


def bootstrap_decision(replicates, alpha: float):
    """Quantile interval ``(q_lo, q_hi)`` and whether 0 falls outside it."""
    _check_alpha(alpha)
    q_lo = empirical_quantile(replicates, alpha / 2)
    q_hi = empirical_quantile(replicates, 1 - alpha / 2)
    return q_lo, q_hi, not (q_lo <= 0.0 <= q_hi)


def _multiplicities(rng: Rng, k: int, n: int) -> np.ndarray:
    idx = rng.integers(0, n, size=(k, n))
    idx += (np.arange(k) * n)[:, None]
    return np.bincount(idx.ravel(), minlength=k * n).reshape(k, n).astype(float)


class _Resampler:
    """Bootstrap omega estimates for one dataset, refitting the propensity each time."""

    def __init__(self, dataset: Dataset, max_iter=100, tol=1e-8):
        self.ds = dataset
        self.a = dataset.a.astype(float)
        self.max_iter, self.tol = max_iter, tol
        self.logistic = dataset.source is Source.OBS
        if self.logistic:
            model = fit_logistic(dataset, max_iter=max_iter, tol=tol)
            self.design, mu, sd = standardize(dataset.x)
            slopes = np.asarray(model.slopes)
            # warm start at the full-data MLE, expressed on the standardized design
            self.start = np.concatenate([[model.intercept + slopes @ mu], slopes * sd])
        else:
            model = fit_constant(dataset)
        self.estimate = ipw_estimate(dataset, model)
        self.model = model

    @property
    def width(self) -> int:
        return len(self.ds) * (self.design.shape[1] + 2 if self.logistic else 2)

    def omegas(self, freq):
        """Per-row omega estimates and a mask of usable resamples."""
        n1 = freq @ self.a
        ok = (n1 > 0) & (n1 < freq.sum(axis=1))
        omega = np.full(freq.shape[0], np.nan)
        if not ok.any():
            return omega, ok
        f = freq[ok]
        if self.logistic:
            coef, _, status = irls_batch(self.design, self.a, f, self.start, self.max_iter, self.tol)
            good = status == CONVERGED
            sub = np.flatnonzero(ok)
            ok[sub[~good]] = False
            f, coef = f[good], coef[good]
            if f.shape[0] == 0:
                return omega, ok
            e = np.clip(expit(coef @ self.design.T), CLIP, 1 - CLIP)
        else:
            rate = n1[ok] / f.sum(axis=1)
            e = np.clip(rate, CLIP, 1 - CLIP)[:, None]
        mu1, mu0, _ = hajek_contrast(self.a, self.ds.y, e, f, variance=False)
        omega[ok] = mu1 - mu0
        return omega, ok


def bootstrap_replicates(d_rct: Dataset, d_obs: Dataset, b: int, rng: Rng, max_iter=100, tol=1e-8):
    """Run the resampling loop; return ``(t_observed, replicates, redraws)``.

    Each iteration resamples both datasets with replacement to their own size,
    refits both propensity models and records omega_obs* - omega_rct*.  A
    resample with an empty arm or a failed logistic fit is redrawn, up to
    ``10 * b`` redraws in total.
    """
    if b < 1:
        raise DomainError("b must be positive")
    try:
        rct = _Resampler(d_rct, max_iter, tol)
        obs = _Resampler(d_obs, max_iter, tol)
    except EstimationError as exc:
        raise TestExecutionError(f"cannot estimate on the original data: {exc}") from exc
    t_obs = obs.estimate.omega_hat - rct.estimate.omega_hat

    # one stream per dataset, so the draws do not depend on the chunk size
    rng_r, rng_o = rng.spawn(2)
    chunk = max(1, min(b, _CHUNK_BUDGET // max(rct.width, obs.width)))
    out = np.empty(b)
    pending = list(range(b))
    redraws = 0
    budget = REDRAW_FACTOR * b
    while pending:
        slots = np.asarray(pending[:chunk])
        del pending[:chunk]
        f_r = _multiplicities(rng_r, slots.size, len(d_rct))
        f_o = _multiplicities(rng_o, slots.size, len(d_obs))
        w_r, ok_r = rct.omegas(f_r)
        w_o, ok_o = obs.omegas(f_o)
        ok = ok_r & ok_o
        out[slots[ok]] = w_o[ok] - w_r[ok]
        failed = slots[~ok].tolist()
        if failed:
            redraws += len(failed)
            if redraws > budget:
                raise TestExecutionError(
                    f"bootstrap redraw budget exhausted ({budget} degenerate resamples)"
                )
            pending = failed + pending
    return t_obs, out, redraws


def bootstrap_test(
    d_rct: Dataset, d_obs: Dataset, b: int = 1000, alpha: float = 0.05, rng: Rng = None, max_iter=100, tol=1e-8
) -> BootstrapTestResult:
    """Bootstrap test of H0: omega_obs == omega_rct (two-sided).

    Rejects when 0 lies outside the empirical ``[alpha/2, 1 - alpha/2]``
    quantile interval of the bootstrap statistics.
    """
    if b < 100:
        raise DomainError(f"b must be at least 100, got {b}")
    _check_alpha(alpha)
    if rng is None:
        raise DomainError("bootstrap_test needs an explicit random generator")
    _warn_sizes(d_rct, d_obs)
    t_obs, reps, redraws = bootstrap_replicates(d_rct, d_obs, b, rng, max_iter, tol)
    q_lo, q_hi, reject = bootstrap_decision(reps, alpha)
    return BootstrapTestResult(t_obs, reps, q_lo, q_hi, alpha, reject, b, redraws)


def z_from_estimates(est_r: IpwEstimate, est_o: IpwEstimate, alpha: float) -> ZTestResult:
    var = est_o.var_hat + est_r.var_hat
    diff = est_o.omega_hat - est_r.omega_hat
    if not var > 0:
        raise TestExecutionError("combined variance estimate is zero; the z statistic is undefined")
    z = diff / math.sqrt(var)
    p = 2.0 * (1.0 - normal_cdf(abs(z)))
    reject = abs(z) > normal_quantile(1 - alpha / 2)
    return ZTestResult(z, p, alpha, reject, est_r, est_o)


def z_test(d_rct: Dataset, d_obs: Dataset, alpha: float = 0.05) -> ZTestResult:
    """Asymptotic z-test of H0: omega_obs == omega_rct."""
    _check_alpha(alpha)
    _warn_sizes(d_rct, d_obs)
    try:
        est_r = ipw_estimate(d_rct, fit_propensity(d_rct))
        est_o = ipw_estimate(d_obs, fit_propensity(d_obs))
    except EstimationError as exc:
        raise TestExecutionError(str(exc)) from exc
    return z_from_estimates(est_r, est_o, alpha)


def h_function(delta_a, delta_x, sigma_u, sigma_x, c, eta, p_o, p_r, n, kappa) -> float:
    """Standardised spread of the z statistic under the linear model.

    ``c`` is beta_x / beta_u and ``eta`` is sigma_eps**2 / beta_u**2; ``kappa``
    is m / n.  The first term is the RCT contribution, the second the
    observational one, which vanishes as ``kappa`` grows.
    """
    for name, p in (("p_o", p_o), ("p_r", p_r)):
        if not (0.0 < p < 1.0):
            raise DomainError(f"{name} must lie in (0, 1), got {p}")
    if n < 1:
        raise DomainError("n must be at least 1")
    if not kappa > 0:
        raise DomainError("kappa must be positive")
    if min(sigma_u, sigma_x) < 0 or eta < 0:
        raise DomainError("standard deviations and eta must be nonnegative")
    rct = ((c + delta_x) ** 2 * sigma_x**2 + delta_a**2 * p_o * (1 - p_o) + sigma_u**2 + eta) / (
        n * p_r * (1 - p_r)
    )
    obs = (sigma_u**2 + eta) / (kappa * n * p_o * (1 - p_o))
    return math.sqrt(rct + obs)


def power_from_h(delta_a: float, h: float, alpha: float) -> float:
    z = normal_quantile(1 - alpha / 2)
    return normal_cdf(-z - delta_a / h) + normal_cdf(delta_a / h - z)


def analytic_power(scenario, alpha: float = 0.05) -> PowerReport:
    """Large-sample power of the z-test for a linear scenario (O(n^-1/2) term dropped)."""
    _check_alpha(alpha)
    if scenario.beta_u == 0:
        raise DomainError("analytic power is undefined for beta_u = 0 (c and eta divide by beta_u)")
    c = scenario.beta_x / scenario.beta_u
    eta = scenario.sigma_eps**2 / scenario.beta_u**2
    kappa = scenario.m / scenario.n
    h = h_function(
        scenario.delta_a, scenario.delta_x, scenario.sigma_u, scenario.sigma_x, c, eta,
        scenario.p_o, scenario.p_r, scenario.n, kappa,
    )
    power = power_from_h(scenario.delta_a, h, alpha)
    inputs = {
        "delta_a": scenario.delta_a, "delta_x": scenario.delta_x, "sigma_u": scenario.sigma_u,
        "sigma_x": scenario.sigma_x, "p_o": scenario.p_o, "p_r": scenario.p_r, "n": scenario.n,
        "alpha": alpha,
    }
    return PowerReport(h=h, power=min(1.0, max(0.0, power)), c=c, eta=eta, kappa=kappa, inputs=inputs)
