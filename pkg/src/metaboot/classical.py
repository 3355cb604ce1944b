"""Classical heterogeneity tests: the Q test and the ML/REML likelihood-ratio tests.

The LR tests use the boundary reference ``0.5 chi2_0 + 0.5 chi2_1``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Union

import numpy as np
from scipy import special

from .model import MetaDataset, Method, fit, profile_log_likelihood, q_statistic, restricted_log_likelihood


@dataclass(frozen=True)
class TestResult:
    test_name: str
    statistic: float
    p_value: float
    alpha: float
    critical_value: float
    reject: bool
    df: Optional[int] = None
    lam: float = 0.0
    n_bootstrap: Optional[int] = None
    seed: Optional[int] = None

    __test__ = False  # keep pytest from collecting this

    def to_dict(self) -> dict:
        out = asdict(self)
        out["lambda"] = out.pop("lam")
        return out


def chi2_sf(x, df):
    """Upper tail of chi-square via the regularized upper incomplete gamma function."""
    x = np.asarray(x, dtype=float)
    return np.where(x <= 0, 1.0, special.gammaincc(0.5 * df, 0.5 * np.maximum(x, 0.0)))


def chi2_isf(alpha, df):
    """Upper ``alpha`` quantile of chi-square."""
    if alpha >= 1:
        return 0.0
    return float(2.0 * special.gammainccinv(0.5 * df, alpha))


def mixture_sf(statistic):
    """p-value under ``0.5 chi2_0 + 0.5 chi2_1``; 0.5 at a zero statistic by convention."""
    t = np.asarray(statistic, dtype=float)
    return np.where(t > 0, 0.5 * chi2_sf(t, 1), 0.5)


def mixture_critical_value(alpha: float) -> float:
    return chi2_isf(2.0 * alpha, 1) if alpha < 0.5 else 0.0


def q_test(dataset: MetaDataset, alpha: float = 0.05) -> TestResult:
    qr = q_statistic(dataset)
    crit = chi2_isf(alpha, qr.df)
    return TestResult(
        test_name="Q",
        statistic=qr.q,
        p_value=float(chi2_sf(qr.q, qr.df)),
        alpha=alpha,
        critical_value=crit,
        reject=bool(qr.q > crit),
        df=qr.df,
    )


def lr_statistic(dataset: MetaDataset, method: Union[str, Method], tau2_hat: float,
                 lam: float = 0.0) -> float:
    """``-2 (L(tau2 = lam) - L(tau2_hat))`` with the likelihood matching ``method``."""
    loglik = profile_log_likelihood if Method.parse(method) is Method.ML else restricted_log_likelihood
    if tau2_hat <= lam:
        return 0.0
    return max(0.0, -2.0 * (loglik(dataset, lam) - loglik(dataset, tau2_hat)))


def lr_test(dataset: MetaDataset, method: Union[str, Method] = Method.REML,
            alpha: float = 0.05) -> TestResult:
    method = Method.parse(method)
    model = fit(dataset, method)
    stat = lr_statistic(dataset, method, model.tau2)
    crit = mixture_critical_value(alpha)
    return TestResult(
        test_name=f"{method.value}-LRT",
        statistic=stat,
        p_value=float(mixture_sf(stat)),
        alpha=alpha,
        critical_value=crit,
        reject=bool(stat > crit),
    )
