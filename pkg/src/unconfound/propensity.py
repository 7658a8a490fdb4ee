"""Propensity score models: a constant rate (RCT) or logistic regression (OBS).

Logistic fits use iteratively reweighted least squares (Newton-Raphson on the
log-likelihood) with step halving, so the log-likelihood never decreases from
one iteration to the next.  The core routine :func:`irls_batch` fits many
frequency-weighted copies of one design at once; the bootstrap test uses it
with resampling multiplicities as weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import (
    ConvergenceError,
    DomainError,
    EstimationError,
    RankDeficientError,
    SeparationError,
)

CLIP = 1e-6
SEPARATION_BOUND = 30.0
MAX_HALVINGS = 40

# status codes returned by irls_batch
CONVERGED, NOT_CONVERGED, SEPARATED, SINGULAR = 0, 1, 2, 3


def expit(t):
    """Logistic function ``1 / (1 + exp(-t))`` without overflow for large ``|t|``.

    Computed as ``exp(min(t, 0)) / (1 + exp(-|t|))``: both exponents are
    nonpositive, and the expression equals ``1 / (1 + exp(-t))`` for
    ``t >= 0`` and ``exp(t) / (1 + exp(t))`` for ``t < 0``.
    """
    t = np.asarray(t, dtype=float)
    out = np.exp(np.minimum(t, 0.0)) / (1.0 + np.exp(-np.abs(t)))
    return out if out.ndim else float(out)


def _expit_inner(t):
    # 1 / (1 + exp(-t)); exp overflows to inf only where the result is exactly 0
    with np.errstate(over="ignore"):
        out = np.exp(np.negative(t))
    out += 1.0
    return np.reciprocal(out, out=out)


@dataclass(frozen=True)
class ConstantPropensity:
    rate: float

    def __post_init__(self):
        if not (0.0 < self.rate < 1.0):
            raise DomainError(f"constant propensity must lie in (0, 1), got {self.rate}")

    @property
    def dim(self):
        return None

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        n = 1 if x.ndim <= 1 else x.shape[0]
        return np.full(n, float(np.clip(self.rate, CLIP, 1 - CLIP)))

    def to_dict(self) -> dict:
        return {"kind": "constant", "rate": self.rate}


@dataclass(frozen=True)
class LogisticPropensity:
    """Fitted logistic propensity ``expit(intercept + x @ slopes)``.

    ``loglik_trace`` holds the log-likelihood at the start and after every
    accepted IRLS step.
    """

    intercept: float
    slopes: tuple
    iterations: int = 0
    converged: bool = True
    feature_names: tuple = ()
    loglik_trace: tuple = field(default=(), repr=False)

    @property
    def dim(self):
        return len(self.slopes)

    def linear_predictor(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim <= 1:
            x = x.reshape(1, -1)
        if x.shape[1] != len(self.slopes):
            raise DomainError(
                f"covariate dimension {x.shape[1]} does not match model dimension {len(self.slopes)}"
            )
        return self.intercept + x @ np.asarray(self.slopes, dtype=float)

    def predict(self, x) -> np.ndarray:
        return np.clip(expit(self.linear_predictor(x)), CLIP, 1 - CLIP)

    def to_dict(self) -> dict:
        return {
            "kind": "logistic",
            "intercept": self.intercept,
            "slopes": list(self.slopes),
            "feature_names": list(self.feature_names),
            "iterations": self.iterations,
            "converged": self.converged,
        }


PropensityModel = Union[ConstantPropensity, LogisticPropensity]


def predict(model: PropensityModel, x) -> np.ndarray:
    """Clipped propensity scores in ``[1e-6, 1 - 1e-6]`` for the rows of ``x``."""
    return model.predict(x)


def fit_constant(dataset) -> ConstantPropensity:
    """Treated share of ``dataset`` as a constant propensity."""
    dataset.require_both_arms()
    return ConstantPropensity(dataset.n_treated / len(dataset))


def _loglik(eta, a, freq):
    # sum f * (a * eta - log(1 + exp(eta)))
    softplus = np.maximum(eta, 0.0) + np.log1p(np.exp(-np.abs(eta)))
    return np.sum(freq * (a * eta - softplus), axis=-1)


def standardize(x):
    """Design matrix ``[1, (x - mean) / sd]`` plus the scaling used.

    Raises :class:`RankDeficientError` for a constant covariate column.
    """
    x = np.asarray(x, dtype=float)
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    if np.any(sd == 0):
        raise RankDeficientError("a covariate column is constant; the design is rank deficient")
    design = np.hstack([np.ones((x.shape[0], 1)), (x - mu) / sd])
    return design, mu, sd


def unstandardize(coef, mu, sd):
    """Map coefficients on the standardized design back to the raw covariates."""
    slopes = coef[..., 1:] / sd
    intercept = coef[..., 0] - np.sum(slopes * mu, axis=-1)
    return intercept, slopes


def _solve(H, g):
    try:
        return np.linalg.solve(H, g[..., None])[..., 0], np.zeros(len(g), dtype=bool)
    except np.linalg.LinAlgError:
        step = np.zeros_like(g)
        bad = np.zeros(len(g), dtype=bool)
        for i in range(len(g)):
            try:
                step[i] = np.linalg.solve(H[i], g[i])
            except np.linalg.LinAlgError:
                bad[i] = True
        return step, bad


def _take(arr, idx, full):
    return arr if full else arr[idx]


def irls_batch(design, a, freq, coef0=None, max_iter=100, tol=1e-8, trace=False):
    """Fit ``B`` frequency-weighted logistic regressions sharing one design.

    Parameters
    ----------
    design : (m, k) array whose first column is the intercept.
    a : (m,) 0/1 responses.
    freq : (B, m) nonnegative frequency weights (bootstrap multiplicities).
    coef0 : (B, k) or (k,) starting coefficients; zeros by default.
    max_iter, tol : iteration cap and sup-norm tolerance on the coefficient step.
    trace : also return the per-iteration log-likelihood history.  Traced
        fits check every step against the exact log-likelihood with no
        rounding slack, so the recorded history is nondecreasing as computed.

    Returns
    -------
    coef : (B, k) final coefficients.
    iterations : (B,) Newton steps taken per fit.
    status : (B,) one of CONVERGED, NOT_CONVERGED, SEPARATED, SINGULAR.
    history : list of (B,) log-likelihood arrays (only when ``trace``);
        entries of already-stopped fits repeat their final value.

    Notes
    -----
    Because the log-likelihood ``l`` is concave, ``l(new) - l(old) >=
    grad(new) . (new - old)``.  A nonnegative right-hand side therefore
    certifies an ascent step using only the gradient that the next iteration
    needs anyway; the exact log-likelihood (and step halving) is evaluated
    only when that certificate fails.
    """
    design = np.asarray(design, dtype=float)
    a = np.asarray(a, dtype=float)
    freq = np.atleast_2d(np.asarray(freq, dtype=float))
    nb, k = freq.shape[0], design.shape[1]
    coef = np.zeros((nb, k)) if coef0 is None else np.broadcast_to(np.asarray(coef0, float), (nb, k)).copy()
    iterations = np.zeros(nb, dtype=np.int64)
    status = np.full(nb, NOT_CONVERGED)
    active = np.ones(nb, dtype=bool)
    xt = design.T
    # column products x_i * x_j, so every Hessian is one matrix product
    cross = (design[:, :, None] * design[:, None, :]).reshape(design.shape[0], k * k)

    eta = coef @ xt
    p = _expit_inner(eta)
    history = [_loglik(eta, a, freq)] if trace else None

    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        full = idx.size == nb
        f = _take(freq, idx, full)
        pi = _take(p, idx, full)
        grad = (f * (a - pi)) @ design
        hess = ((f * pi * (1.0 - pi)) @ cross).reshape(-1, k, k)
        step, singular = _solve(hess, grad)
        if singular.any():
            status[idx[singular]] = SINGULAR
            active[idx[singular]] = False
            keep = ~singular
            idx, f, step = idx[keep], f[keep], step[keep]
            full = False
            if idx.size == 0:
                break

        old = _take(coef, idx, full)
        new_coef = old + step
        new_eta = new_coef @ xt
        new_p = _expit_inner(new_eta)
        if trace:
            certified = np.zeros(idx.size, dtype=bool)
        else:
            certified = np.einsum("bk,bk->b", (f * (a - new_p)) @ design, step) >= 0
        if not certified.all():
            sub = np.flatnonzero(~certified)
            fs = f[sub]
            old_ll = _loglik(_take(eta, idx, full)[sub], a, fs)
            slack = 0.0 if trace else 1e-12 * (1.0 + np.abs(old_ll))
            scale = np.ones(sub.size)
            cand = new_coef[sub]
            cand_eta = new_eta[sub]
            cand_ll = _loglik(cand_eta, a, fs)
            worse = cand_ll < old_ll - slack
            for _h in range(MAX_HALVINGS):
                if not worse.any():
                    break
                scale[worse] *= 0.5
                w = np.flatnonzero(worse)
                cand[w] = old[sub[w]] + scale[w, None] * step[sub[w]]
                cand_eta[w] = cand[w] @ xt
                cand_ll[w] = _loglik(cand_eta[w], a, fs[w])
                worse = cand_ll < old_ll - slack
            # no ascent left at working precision: the fit is stationary
            cand[worse] = old[sub[worse]]
            cand_eta[worse] = _take(eta, idx, full)[sub[worse]]
            new_coef[sub] = cand
            new_eta[sub] = cand_eta
            new_p[sub] = _expit_inner(cand_eta)

        delta = np.max(np.abs(new_coef - old), axis=1)
        if full:
            coef, eta, p = new_coef, new_eta, new_p
        else:
            coef[idx], eta[idx], p[idx] = new_coef, new_eta, new_p
        iterations[idx] += 1
        if history is not None:
            history.append(_loglik(eta, a, freq))

        separated = np.max(np.abs(new_coef), axis=1) > SEPARATION_BOUND
        done = delta < tol
        status[idx[done]] = CONVERGED
        status[idx[separated]] = SEPARATED
        active[idx[done | separated]] = False

    if trace:
        return coef, iterations, status, history
    return coef, iterations, status


def fit_logistic(dataset, max_iter: int = 100, tol: float = 1e-8) -> LogisticPropensity:
    """Maximum-likelihood logistic propensity model with an intercept.

    Covariates are centred and scaled internally (the tolerance and the
    separation bound of 30 apply on that scale); the returned coefficients
    are on the raw covariate scale.

    Raises
    ------
    EstimationError
        if a treatment arm is empty.
    RankDeficientError
        if the design (with intercept) lacks full column rank.
    SeparationError
        if a coefficient diverges past the separation bound.
    ConvergenceError
        if ``max_iter`` iterations pass without convergence; carries the last iterate.
    """
    dataset.require_both_arms()
    design, mu, sd = standardize(dataset.x)
    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise RankDeficientError("covariate design matrix (with intercept) is rank deficient")
    coef, iters, status, history = irls_batch(
        design, dataset.a, np.ones((1, len(dataset))), max_iter=max_iter, tol=tol, trace=True
    )
    intercept, slopes = unstandardize(coef[0], mu, sd)
    trace = tuple(float(h[0]) for h in history)
    if status[0] == SEPARATED:
        raise SeparationError(
            "perfect or quasi-perfect separation: logistic coefficients diverge "
            f"(|coef| > {SEPARATION_BOUND} on the standardized scale)"
        )
    if status[0] == SINGULAR:
        raise RankDeficientError("singular Hessian during IRLS")
    if status[0] == NOT_CONVERGED:
        raise ConvergenceError(
            f"IRLS did not converge in {max_iter} iterations",
            coef=(float(intercept), tuple(float(s) for s in slopes)),
            iterations=int(iters[0]),
        )
    for before, after in zip(trace, trace[1:]):
        if after < before:
            raise EstimationError("internal error: IRLS log-likelihood decreased")
    return LogisticPropensity(
        intercept=float(intercept),
        slopes=tuple(float(s) for s in slopes),
        iterations=int(iters[0]),
        converged=True,
        feature_names=tuple(dataset.covariate_names),
        loglik_trace=trace,
    )
