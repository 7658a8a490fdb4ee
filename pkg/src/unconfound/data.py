"""Record and dataset containers.

A :class:`Dataset` stores its samples column-wise (numpy arrays) because every
consumer is vectorised; :meth:`Dataset.samples` and :meth:`Dataset.from_samples`
convert to and from the row-wise :class:`Sample` view.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterator, Mapping, Optional, Sequence

import numpy as np

from .errors import DomainError, EstimationError


class Source(str, Enum):
    RCT = "RCT"
    OBS = "OBS"


@dataclass(frozen=True)
class Sample:
    """One (A, X, Y) record; ``u`` is a generator diagnostic that no estimator reads."""

    a: int
    x: tuple
    y: float
    u: Optional[float] = None

    def __post_init__(self):
        if self.a not in (0, 1):
            raise DomainError(f"treatment must be 0 or 1, got {self.a!r}")
        if not np.isfinite(self.y) or not np.all(np.isfinite(self.x)):
            raise DomainError("outcome and covariates must be finite")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-wise collection of samples from one source.

    Attributes
    ----------
    a : (n,) int array of 0/1 treatment indicators.
    x : (n, p) float array of covariates (already numerically encoded).
    y : (n,) float array of outcomes.
    source : :class:`Source`.
    covariate_names : names of the ``p`` columns of ``x``.
    covariate_origin : for each column of ``x``, the input column it was
        derived from (one-hot columns share their categorical origin).
    u : optional (n,) latent confounder values, diagnostics only.
    labels : raw categorical columns keyed by name, kept so that row-level
        rules (e.g. a location-based selection) can run after encoding.
    """

    a: np.ndarray
    x: np.ndarray
    y: np.ndarray
    source: Source
    covariate_names: tuple = ()
    covariate_origin: tuple = ()
    u: Optional[np.ndarray] = None
    labels: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        a = np.asarray(self.a)
        y = np.asarray(self.y, dtype=float)
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        n = y.shape[0]
        if n == 0:
            raise DomainError("a dataset needs at least one sample")
        if a.shape != (n,) or x.shape[0] != n:
            raise DomainError("a, x and y must have the same number of rows")
        if not np.all((a == 0) | (a == 1)):
            raise DomainError("treatment indicators must be 0 or 1")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
            raise DomainError("outcomes and covariates must be finite")
        names = tuple(self.covariate_names) or tuple(f"x{j + 1}" for j in range(x.shape[1]))
        if len(names) != x.shape[1]:
            raise DomainError("covariate_names does not match the covariate dimension")
        origin = tuple(self.covariate_origin) or names
        if len(origin) != len(names):
            raise DomainError("covariate_origin does not match the covariate dimension")
        object.__setattr__(self, "a", a.astype(np.int64))
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "source", Source(self.source))
        object.__setattr__(self, "covariate_names", names)
        object.__setattr__(self, "covariate_origin", origin)
        if self.u is not None:
            object.__setattr__(self, "u", np.asarray(self.u, dtype=float))
        object.__setattr__(self, "labels", {k: np.asarray(v) for k, v in self.labels.items()})

    def __len__(self) -> int:
        return self.y.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def n_treated(self) -> int:
        return int(self.a.sum())

    @property
    def n_control(self) -> int:
        return len(self) - self.n_treated

    def require_both_arms(self) -> None:
        if self.n_treated == 0 or self.n_control == 0:
            raise EstimationError(
                f"{self.source.value} dataset has {self.n_treated} treated and "
                f"{self.n_control} control samples; both arms are required"
            )

    def samples(self) -> Iterator[Sample]:
        u = self.u if self.u is not None else [None] * len(self)
        for ai, xi, yi, ui in zip(self.a, self.x, self.y, u):
            yield Sample(int(ai), tuple(float(v) for v in xi), float(yi), None if ui is None else float(ui))

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], source, covariate_names=()) -> "Dataset":
        samples = list(samples)
        if not samples:
            raise DomainError("a dataset needs at least one sample")
        dims = {len(s.x) for s in samples}
        if len(dims) != 1:
            raise DomainError("samples have inconsistent covariate dimensions")
        u = None
        if all(s.u is not None for s in samples):
            u = np.array([s.u for s in samples])
        return cls(
            a=np.array([s.a for s in samples]),
            x=np.array([s.x for s in samples], dtype=float).reshape(len(samples), dims.pop()),
            y=np.array([s.y for s in samples]),
            source=source,
            covariate_names=tuple(covariate_names),
            u=u,
        )

    def subset(self, index, source=None) -> "Dataset":
        """Rows ``index`` (integer or boolean array) as a new dataset."""
        index = np.asarray(index)
        return replace(
            self,
            a=self.a[index],
            x=self.x[index],
            y=self.y[index],
            u=None if self.u is None else self.u[index],
            labels={k: v[index] for k, v in self.labels.items()},
            source=self.source if source is None else source,
        )

    def strip_latent(self) -> "Dataset":
        """Copy without the latent confounder column."""
        return replace(self, u=None)

    def drop_covariate(self, origin: str) -> "Dataset":
        """Remove every covariate column derived from input column ``origin``."""
        keep = [j for j, o in enumerate(self.covariate_origin) if o != origin]
        if len(keep) == self.dim:
            raise DomainError(f"no covariate derived from {origin!r}")
        return replace(
            self,
            x=self.x[:, keep],
            covariate_names=tuple(self.covariate_names[j] for j in keep),
            covariate_origin=tuple(self.covariate_origin[j] for j in keep),
        )

    def with_squared_covariates(self) -> "Dataset":
        """Append the square of every covariate column (named ``<name>^2``)."""
        return replace(
            self,
            x=np.hstack([self.x, self.x**2]),
            covariate_names=self.covariate_names + tuple(f"{c}^2" for c in self.covariate_names),
            covariate_origin=self.covariate_origin + self.covariate_origin,
        )
