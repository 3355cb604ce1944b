"""Run a named set of heterogeneity tests on one dataset."""

from __future__ import annotations

from typing import Iterable, Optional

from .bootstrap import BootstrapOutcome, StatKind, bootstrap_tests
from .classical import TestResult, lr_test, q_test

CLASSICAL = ("q", "ml_lrt", "reml_lrt")
BOOTSTRAP = ("b_q", "b_ml_lrt", "b_reml_lrt")
STAT_CHOICES = CLASSICAL + BOOTSTRAP


def parse_stats(stats: Iterable[str] | str) -> tuple[str, ...]:
    if isinstance(stats, str):
        stats = stats.split(",")
    out = tuple(dict.fromkeys(s.strip().lower() for s in stats if s.strip()))
    unknown = [s for s in out if s not in STAT_CHOICES]
    if unknown:
        raise ValueError(f"unknown statistic(s) {unknown}; choose from {list(STAT_CHOICES)}")
    if not out:
        raise ValueError("no statistics requested")
    return out


def run_tests(dataset, stats: Iterable[str], lam: float = 0.0, alpha: float = 0.05,
              n_bootstrap: int = 10_000, seed: int = 0, workers: Optional[int] = None,
              ) -> dict[str, TestResult | BootstrapOutcome]:
    """Results keyed by statistic name, in request order.

    Classical tests give a :class:`TestResult`; bootstrap tests a
    :class:`BootstrapOutcome`. All bootstrap statistics share one replicate set.
    """
    stats = parse_stats(stats)
    if lam > 0 and any(s in CLASSICAL for s in stats):
        raise ValueError("classical tests only test tau^2 = 0; use the b_* tests for lambda > 0")
    boot_kinds = [StatKind(s[2:]) for s in stats if s in BOOTSTRAP]
    boot = (bootstrap_tests(dataset, boot_kinds, lam, n_bootstrap, alpha, seed, workers)
            if boot_kinds else {})
    out = {}
    for s in stats:
        if s == "q":
            out[s] = q_test(dataset, alpha)
        elif s == "ml_lrt":
            out[s] = lr_test(dataset, "ML", alpha)
        elif s == "reml_lrt":
            out[s] = lr_test(dataset, "REML", alpha)
        else:
            out[s] = boot[StatKind(s[2:])]
    return out


def decision(result: TestResult | BootstrapOutcome) -> TestResult:
    return result.result if isinstance(result, BootstrapOutcome) else result
