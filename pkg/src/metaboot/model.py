"""Fixed-, random- and mixed-effects meta-analysis models.

The random-effects model is ``x_j ~ N(mu + Z_j beta, sigma_j^2 + tau^2)``.
``tau^2`` is estimated by ML or REML with the fixed effects profiled out and
``tau^2`` constrained to ``[lower_bound, inf)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np

from . import _engine
from .effect_sizes import EffectKind, StudyEffect
from .errors import InvalidDataset, NonConvergence, SingularDesign


class Method(str, Enum):
    ML = "ML"
    REML = "REML"

    @classmethod
    def parse(cls, value: Union[str, "Method"]) -> "Method":
        return value if isinstance(value, cls) else cls(str(value).upper())


@dataclass(frozen=True, eq=False)
class MetaDataset:
    """K study effects plus an optional K x P moderator matrix."""

    studies: tuple[StudyEffect, ...]
    covariates: Optional[np.ndarray] = None
    moderator_names: tuple[str, ...] = ()
    labels: tuple[str, ...] = ()
    _x: np.ndarray = field(init=False, repr=False)
    _v: np.ndarray = field(init=False, repr=False)
    _design: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        studies = tuple(self.studies)
        object.__setattr__(self, "studies", studies)
        k = len(studies)
        if k < 2:
            raise InvalidDataset(f"a meta-analysis needs at least 2 studies, got {k}")
        kinds = {s.kind for s in studies}
        if len(kinds) != 1:
            raise InvalidDataset(f"studies mix effect kinds: {sorted(k.value for k in kinds)}")
        z = self.covariates
        if z is not None:
            z = np.asarray(z, dtype=float)
            if z.ndim == 1:
                z = z[:, None]
            if z.shape[1] == 0:
                z = None
        if z is not None:
            if z.shape[0] != k:
                raise InvalidDataset(f"covariate matrix has {z.shape[0]} rows for {k} studies")
            if not np.all(np.isfinite(z)):
                raise InvalidDataset("covariates must be finite")
            if k <= z.shape[1] + 1:
                raise InvalidDataset(f"need K > P + 1 (K={k}, P={z.shape[1]})")
            z = z.copy()
            z.setflags(write=False)
        object.__setattr__(self, "covariates", z)
        names = tuple(self.moderator_names)
        if z is not None and not names:
            names = tuple(f"z{i + 1}" for i in range(z.shape[1]))
        object.__setattr__(self, "moderator_names", names if z is not None else ())
        object.__setattr__(self, "labels", tuple(self.labels))
        x = np.array([s.estimate for s in studies], dtype=float)
        v = np.array([s.variance for s in studies], dtype=float)
        design = np.ones((k, 1)) if z is None else np.column_stack([np.ones(k), z])
        if np.linalg.matrix_rank(design) < design.shape[1]:
            raise SingularDesign("design matrix [1 | Z] is not of full column rank")
        for arr in (x, v, design):
            arr.setflags(write=False)
        object.__setattr__(self, "_x", x)
        object.__setattr__(self, "_v", v)
        object.__setattr__(self, "_design", design)

    @classmethod
    def from_arrays(cls, estimates, variances, kind=EffectKind.SMD, covariates=None,
                    moderator_names=()) -> "MetaDataset":
        kind = EffectKind.parse(kind)
        studies = [StudyEffect(kind, float(x), float(v)) for x, v in zip(estimates, variances)]
        return cls(tuple(studies), covariates, tuple(moderator_names))

    def with_effects(self, estimates, variances=None, raws=None) -> "MetaDataset":
        """Copy with replaced estimates (and optionally variances / raw data)."""
        variances = self._v if variances is None else variances
        raws = [s.raw for s in self.studies] if raws is None else raws
        studies = tuple(StudyEffect(self.kind, float(x), float(v), r)
                        for x, v, r in zip(estimates, variances, raws))
        return MetaDataset(studies, self.covariates, self.moderator_names, self.labels)

    def __eq__(self, other):
        if not isinstance(other, MetaDataset):
            return NotImplemented
        if (self.covariates is None) != (other.covariates is None):
            return False
        same_z = self.covariates is None or np.array_equal(self.covariates, other.covariates)
        return (self.studies == other.studies and same_z
                and self.moderator_names == other.moderator_names and self.labels == other.labels)

    __hash__ = None

    @property
    def k(self) -> int:
        return len(self.studies)

    @property
    def p(self) -> int:
        return 0 if self.covariates is None else self.covariates.shape[1]

    @property
    def kind(self) -> EffectKind:
        return self.studies[0].kind

    @property
    def estimates(self) -> np.ndarray:
        return self._x

    @property
    def variances(self) -> np.ndarray:
        return self._v

    @property
    def design(self) -> np.ndarray:
        return self._design


@dataclass(frozen=True)
class ModelFit:
    method: Method
    mu_delta: float
    beta: tuple[float, ...]
    tau2: float
    lower_bound: float
    loglik_ml: float
    loglik_reml: float
    converged: bool
    iterations: int

    @property
    def coefficients(self) -> np.ndarray:
        return np.array((self.mu_delta,) + tuple(self.beta))


@dataclass(frozen=True)
class QResult:
    q: float
    df: int


def wls_fixed_effects(dataset: MetaDataset, tau2: float) -> tuple[float, np.ndarray, float]:
    """Fixed-effect coefficients at a given ``tau2``.

    Returns ``(mu_delta, beta, weighted_residual_ss)``.
    """
    coef, rss, _ = _engine.wls(dataset.estimates[None, :], dataset.variances[None, :],
                               dataset.design, np.array([tau2], dtype=float))
    return float(coef[0, 0]), coef[0, 1:].copy(), float(rss[0])


def log_likelihood(dataset: MetaDataset, mu_delta: float, beta: Sequence[float], tau2: float) -> float:
    """Regular log-likelihood of the marginal model at the given parameters."""
    beta = np.asarray(beta, dtype=float).reshape(-1)
    fitted = mu_delta + (dataset.covariates @ beta if dataset.p else 0.0)
    total = dataset.variances + tau2
    resid = dataset.estimates - fitted
    return float(-0.5 * np.sum(np.log(2 * np.pi * total) + resid * resid / total))


def restricted_log_likelihood(dataset: MetaDataset, tau2: float) -> float:
    return float(_engine.reml_loglik(dataset.estimates[None, :], dataset.variances[None, :],
                                     dataset.design, np.array([tau2], dtype=float))[0])


def profile_log_likelihood(dataset: MetaDataset, tau2: float) -> float:
    """Regular log-likelihood with the fixed effects profiled at ``tau2``."""
    return float(_engine.ml_loglik(dataset.estimates[None, :], dataset.variances[None, :],
                                   dataset.design, np.array([tau2], dtype=float))[0])


def objective(dataset: MetaDataset, method: Union[str, Method], tau2: float) -> float:
    """The profiled objective maximized by :func:`fit`."""
    if Method.parse(method) is Method.ML:
        return profile_log_likelihood(dataset, tau2)
    return restricted_log_likelihood(dataset, tau2)


def fit(dataset: MetaDataset, method: Union[str, Method] = Method.REML,
        lower_bound: float = 0.0) -> ModelFit:
    """Estimate tau^2 by ML or REML over ``[lower_bound, U]``.

    Raises
    ------
    NonConvergence
        If the optimum still sits at the search ceiling after the restarts.
    """
    method = Method.parse(method)
    if lower_bound < 0:
        raise ValueError("lower_bound must be >= 0")
    tau2, converged, iterations = _engine.fit_tau2(
        dataset.estimates[None, :], dataset.variances[None, :], dataset.design,
        method.value, lower_bound)
    if not converged[0]:
        raise NonConvergence(f"{method.value} estimation of tau^2 did not converge")
    return _make_fit(dataset, method, float(tau2[0]), lower_bound, int(iterations[0]))


def _make_fit(dataset, method, tau2, lower_bound, iterations, converged=True) -> ModelFit:
    mu, beta, _ = wls_fixed_effects(dataset, tau2)
    return ModelFit(
        method=method,
        mu_delta=mu,
        beta=tuple(float(b) for b in beta),
        tau2=tau2,
        lower_bound=float(lower_bound),
        loglik_ml=profile_log_likelihood(dataset, tau2),
        loglik_reml=restricted_log_likelihood(dataset, tau2),
        converged=converged,
        iterations=iterations,
    )


def q_statistic(dataset: MetaDataset) -> QResult:
    """Cochran's Q: weighted residual SS of the fixed-effects (meta-)regression."""
    _, _, rss = wls_fixed_effects(dataset, 0.0)
    return QResult(q=max(rss, 0.0), df=dataset.k - dataset.p - 1)


def indexes_from_q(q: float, df: int) -> tuple[float, float]:
    h = q / df
    i2 = max(0.0, (q - df) / q) if q > 0 else 0.0
    return i2, h


def heterogeneity_indexes(dataset: MetaDataset) -> tuple[float, float]:
    """Descriptive ``(I^2, H)`` for a plain (moderator-free) meta-analysis, ``H = Q / (K - 1)``."""
    if dataset.p:
        raise InvalidDataset("I^2 and H are defined for meta-analyses without moderators")
    qr = q_statistic(dataset)
    return indexes_from_q(qr.q, qr.df)
