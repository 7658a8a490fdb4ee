"""Hajek (ratio-form) inverse probability weighted contrast and its variance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, Sample, Source  # noqa: F401  (re-exported)
from .errors import DomainError, EstimationError
from .propensity import PropensityModel


@dataclass(frozen=True)
class IpwEstimate:
    """Weighted arm means, their difference and its estimated variance.

    ``var_hat`` estimates Var(omega_hat) itself, i.e. the asymptotic variance
    already divided by the sample size.
    """

    omega_hat: float
    var_hat: float
    n_treated: int
    n_control: int
    mu1_hat: float
    mu0_hat: float

    @property
    def se(self) -> float:
        return float(np.sqrt(self.var_hat))

    def to_dict(self) -> dict:
        return {
            "omega_hat": self.omega_hat,
            "var_hat": self.var_hat,
            "n_treated": self.n_treated,
            "n_control": self.n_control,
            "mu1_hat": self.mu1_hat,
            "mu0_hat": self.mu0_hat,
        }


def hajek_contrast(a, y, e, freq=None, variance=True):
    """Vectorised Hajek contrast.

    ``e`` may be (m,) or (B, m); ``freq`` optional (B, m) multiplicities.
    Returns ``(mu1, mu0, var)`` arrays of shape ``(B,)`` (or scalars when
    neither ``e`` nor ``freq`` is batched).  ``var`` (None unless
    ``variance``) is the plug-in
    influence-function variance with the propensity treated as known:
    sum over each arm of (normalised weight)^2 * (y - arm mean)^2.
    """
    a = np.asarray(a, dtype=float)
    y = np.asarray(y, dtype=float)
    e = np.asarray(e, dtype=float)
    f = np.ones_like(a) if freq is None else np.asarray(freq, dtype=float)
    w1 = f * a / e
    w0 = f * (1.0 - a) / (1.0 - e)
    s1 = w1.sum(axis=-1)
    s0 = w0.sum(axis=-1)
    if np.any(s1 <= 0) or np.any(s0 <= 0):
        raise EstimationError("an arm has zero total weight")
    mu1 = (w1 * y).sum(axis=-1) / s1
    mu0 = (w0 * y).sum(axis=-1) / s0
    if not variance:
        return mu1, mu0, None
    mu1_ = np.expand_dims(mu1, -1)
    mu0_ = np.expand_dims(mu0, -1)
    # multiplicity f contributes f copies of the squared normalised weight
    var = (f * (a / e) ** 2 * (y - mu1_) ** 2).sum(axis=-1) / s1**2 + (
        f * ((1.0 - a) / (1.0 - e)) ** 2 * (y - mu0_) ** 2
    ).sum(axis=-1) / s0**2
    return mu1, mu0, var


def _weights_for(dataset: Dataset, model: PropensityModel) -> np.ndarray:
    dataset.require_both_arms()
    if model.dim is not None and model.dim != dataset.dim:
        raise DomainError(
            f"propensity model expects {model.dim} covariates, dataset has {dataset.dim}"
        )
    e = model.predict(dataset.x)
    if e.shape[0] != len(dataset):
        e = np.broadcast_to(e, (len(dataset),))
    return e


def ipw_variance(dataset: Dataset, model: PropensityModel, mu1_hat: float, mu0_hat: float) -> float:
    """Influence-function (sandwich) variance of the Hajek contrast, propensity known."""
    e = _weights_for(dataset, model)
    a, y = dataset.a.astype(float), dataset.y
    w1 = a / e
    w0 = (1.0 - a) / (1.0 - e)
    s1, s0 = w1.sum(), w0.sum()
    if s1 <= 0 or s0 <= 0:
        raise EstimationError("internal invariant failure: an arm has zero total weight")
    v = np.sum((w1 / s1) ** 2 * (y - mu1_hat) ** 2) + np.sum((w0 / s0) ** 2 * (y - mu0_hat) ** 2)
    return float(v)


def ipw_estimate(dataset: Dataset, model: PropensityModel) -> IpwEstimate:
    """Hajek IPW estimate of E[Y | A=1] - E[Y | A=0] and its variance."""
    e = _weights_for(dataset, model)
    mu1, mu0, _ = hajek_contrast(dataset.a, dataset.y, e)
    mu1, mu0 = float(mu1), float(mu0)
    return IpwEstimate(
        omega_hat=mu1 - mu0,
        var_hat=ipw_variance(dataset, model, mu1, mu0),
        n_treated=dataset.n_treated,
        n_control=dataset.n_control,
        mu1_hat=mu1,
        mu0_hat=mu0,
    )
