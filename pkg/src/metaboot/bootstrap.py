"""Parametric bootstrap tests of between-study heterogeneity.

Tests ``H0: tau^2 = lambda`` against ``tau^2 > lambda`` (``lambda = 0`` is the
usual homogeneity test) with one of three statistics: the ML likelihood ratio,
the REML likelihood ratio, or Cochran's Q. The null distribution is simulated
from the effect sizes' asymptotic sampling distributions:

1. fit the random/mixed-effects model to the observed data by REML and keep the
   fixed-effect estimates as the true location parameters;
2. draw ``x_j ~ N(X_j b, lambda + sigma_j^2)`` keeping the observed sampling
   variances (for log odds ratios one of the four cells is recomputed from the
   draw and the variance updated);
3. compute the statistic on each replicate, with likelihood differences counted
   as 0 whenever the replicate's tau^2 estimate falls below ``lambda``;
4. compare the observed statistic with the empirical ``1 - alpha`` quantile.

Each replicate owns an RNG stream derived from ``(seed, replicate index)``, so
results do not depend on chunking or on the number of worker processes.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Union

import numpy as np

from . import _engine
from .classical import TestResult, lr_statistic
from .effect_sizes import EffectKind, OrRaw
from .errors import EmptyInput, MissingRaw
from .model import MetaDataset, Method, ModelFit, fit, q_statistic

CHUNK_SIZE = 1000
MAX_REDRAWS = 3
WORKERS_ENV = "METABOOT_WORKERS"


class StatKind(str, Enum):
    ML_LRT = "ml_lrt"
    REML_LRT = "reml_lrt"
    Q = "q"

    @property
    def test_name(self) -> str:
        return {"ml_lrt": "B-ML-LRT", "reml_lrt": "B-REML-LRT", "q": "B-Q"}[self.value]

    @property
    def method(self) -> Optional[Method]:
        return {"ml_lrt": Method.ML, "reml_lrt": Method.REML}.get(self.value)


@dataclass(frozen=True)
class BootstrapConfig:
    stat_kind: StatKind = StatKind.REML_LRT
    lam: float = 0.0
    n_rep: int = 10_000
    alpha: float = 0.05
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "stat_kind", StatKind(self.stat_kind))
        if self.n_rep < 1:
            raise ValueError("n_rep must be >= 1")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.seed < 0:
            raise ValueError("seed must be a non-negative integer")


@dataclass(frozen=True)
class NullSummary:
    count: int
    mean: float
    median: float
    q90: float
    q95: float
    q99: float
    max: float


@dataclass(frozen=True)
class BootstrapOutcome:
    result: TestResult
    empirical_p: float
    critical_value_boot: float
    null_statistics: NullSummary
    clamped_count: int
    dropped_count: int
    tau2_hat: float


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for replicate ``index`` under root ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def empirical_quantile(values: Iterable[float], q: float) -> float:
    """Order statistic at position ``ceil(q * B)`` (1-based) of the sorted values."""
    arr = np.sort(np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=float))
    if arr.size == 0:
        raise EmptyInput("cannot take a quantile of an empty sample")
    if not 0 < q < 1:
        raise ValueError("q must lie in (0, 1)")
    m = max(1, math.ceil(round(q * arr.size, 9)))
    return float(arr[m - 1])


def _cells_of(dataset: MetaDataset) -> Optional[np.ndarray]:
    if dataset.kind is not EffectKind.LOG_OR:
        return None
    raws = [s.raw for s in dataset.studies]
    if any(not isinstance(r, OrRaw) for r in raws):
        raise MissingRaw("log odds ratio bootstrap needs the 2x2 cell counts of every study")
    return np.array([r.corrected() for r in raws], dtype=float)


def recompute_cells(cells: np.ndarray, x: np.ndarray, choice: np.ndarray) -> np.ndarray:
    """Replace one cell per study so the table's log odds ratio equals ``x``.

    ``cells`` columns are ``(n00, n01, n10, n11)``; ``choice`` picks the column.
    """
    cells = np.array(cells, dtype=float)
    odds = np.exp(x)
    n00, n01, n10, n11 = cells.T
    solved = np.stack([
        odds * n01 * n10 / n11,
        n00 * n11 / (n10 * odds),
        n00 * n11 / (n01 * odds),
        odds * n01 * n10 / n00,
    ], axis=-1)
    rows = np.arange(cells.shape[0])
    cells[rows, choice] = solved[rows, choice]
    return cells


def _draw(rng, mean, v, lam, cells, per_study_cells=False):
    """One null replicate: ``(x, v)`` plus the updated cells for log odds ratios.

    The recomputed cell is drawn once per replicate and applied to every study,
    or independently per study with ``per_study_cells``.
    """
    k = mean.shape[0]
    x = mean + np.sqrt(lam + v) * rng.standard_normal(k)
    if cells is None:
        return x, v, None
    if per_study_cells:
        choice = rng.integers(0, 4, size=k)
    else:
        choice = np.full(k, rng.integers(0, 4))
    new_cells = recompute_cells(cells, x, choice)
    return x, (1.0 / new_cells).sum(axis=1), new_cells


def simulate_null_effects(fit_: ModelFit, dataset: MetaDataset, lam: float,
                          rng: np.random.Generator, per_study_cells: bool = False) -> MetaDataset:
    """Draw one synthetic dataset under ``tau^2 = lam``.

    ``fit_`` supplies the location parameters (the REML fit of ``dataset``).
    Sampling variances are the observed ones, except for log odds ratios where
    they are recomputed from the updated tables.
    """
    cells = _cells_of(dataset)
    mean = dataset.design @ fit_.coefficients
    x, v, new_cells = _draw(rng, mean, dataset.variances, lam, cells, per_study_cells)
    raws = None if new_cells is None else [OrRaw(*map(float, c)) for c in new_cells]
    return dataset.with_effects(x, v, raws)


@dataclass(frozen=True)
class _Task:
    seed: int
    start: int
    stop: int
    mean: np.ndarray
    v: np.ndarray
    design: np.ndarray
    cells: Optional[np.ndarray]
    lam: float
    kinds: tuple[StatKind, ...]
    per_study_cells: bool = False


def _replicate_statistics(x, v, design, lam, kinds):
    """Statistics for a stack of replicates; returns (stats, clamped, failed)."""
    n = x.shape[0]
    stats, clamped = {}, {}
    failed = np.zeros(n, dtype=bool)
    for kind in kinds:
        if kind is StatKind.Q:
            _, rss, _ = _engine.wls(x, v, design, np.zeros(n))
            stats[kind] = np.maximum(rss, 0.0)
            clamped[kind] = np.zeros(n, dtype=bool)
            continue
        method = kind.method.value
        tau2, ok, _ = _engine.fit_tau2(x, v, design, method, 0.0)
        failed |= ~ok
        objective = _engine.OBJECTIVES[method]
        at_hat = objective(x, v, design, np.where(ok, tau2, 0.0))
        at_null = objective(x, v, design, np.full(n, lam))
        clamp = ~(tau2 > lam)
        stats[kind] = np.where(clamp, 0.0, np.maximum(0.0, -2.0 * (at_null - at_hat)))
        clamped[kind] = clamp
    return stats, clamped, failed


def _run_chunk(task: _Task):
    n = task.stop - task.start
    k = task.mean.shape[0]
    gens = [replicate_rng(task.seed, i) for i in range(task.start, task.stop)]
    x = np.empty((n, k))
    v = np.empty((n, k))
    for r, g in enumerate(gens):
        x[r], v[r], _ = _draw(g, task.mean, task.v, task.lam, task.cells, task.per_study_cells)
    stats, clamped, failed = _replicate_statistics(x, v, task.design, task.lam, task.kinds)
    for _ in range(MAX_REDRAWS):
        bad = np.flatnonzero(failed)
        if bad.size == 0:
            break
        for r in bad:
            x[r], v[r], _ = _draw(gens[r], task.mean, task.v, task.lam, task.cells,
                                      task.per_study_cells)
        s2, c2, f2 = _replicate_statistics(x[bad], v[bad], task.design, task.lam, task.kinds)
        for kind in task.kinds:
            stats[kind][bad] = s2[kind]
            clamped[kind][bad] = c2[kind]
        failed[bad] = f2
    return stats, clamped, failed


def _observed(dataset: MetaDataset, kind: StatKind, lam: float, reml_fit: ModelFit):
    """Observed statistic and the tau^2 estimate that gates magnitude-test rejection."""
    if kind is StatKind.Q:
        return q_statistic(dataset).q, reml_fit.tau2
    model = reml_fit if kind is StatKind.REML_LRT else fit(dataset, Method.ML)
    return lr_statistic(dataset, kind.method, model.tau2, lam), model.tau2


def bootstrap_tests(dataset: MetaDataset, stat_kinds: Iterable[Union[str, StatKind]],
                    lam: float = 0.0, n_rep: int = 10_000, alpha: float = 0.05,
                    seed: int = 0, workers: Optional[int] = None,
                    per_study_cells: bool = False) -> dict[StatKind, BootstrapOutcome]:
    """Run several bootstrap tests on one shared set of null replicates.

    A replicate whose ML or REML fit fails after restarts is redrawn from its own
    stream up to three times, then dropped for every requested statistic.
    Each outcome equals what :func:`bootstrap_test` gives for that statistic
    alone when no replicate is dropped.
    """
    kinds = tuple(dict.fromkeys(StatKind(s) for s in stat_kinds))
    if not kinds:
        raise ValueError("no statistics requested")
    for kind in kinds:
        BootstrapConfig(kind, lam, n_rep, alpha, seed)
    workers = default_workers() if workers is None else max(1, int(workers))

    cells = _cells_of(dataset)
    reml_fit = fit(dataset, Method.REML, 0.0)
    mean = dataset.design @ reml_fit.coefficients
    tasks = [_Task(seed, start, min(start + CHUNK_SIZE, n_rep), mean, dataset.variances,
                   dataset.design, cells, float(lam), kinds, per_study_cells)
             for start in range(0, n_rep, CHUNK_SIZE)]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
            parts = list(pool.map(_run_chunk, tasks))
    else:
        parts = [_run_chunk(t) for t in tasks]
    failed = np.concatenate([p[2] for p in parts])

    outcomes = {}
    for kind in kinds:
        stats = np.concatenate([p[0][kind] for p in parts])[~failed]
        clamped = np.concatenate([p[1][kind] for p in parts])[~failed]
        observed, tau2_hat = _observed(dataset, kind, lam, reml_fit)
        outcomes[kind] = _decide(kind, observed, tau2_hat, stats, clamped, int(failed.sum()),
                                 lam, alpha, seed)
    return outcomes


def _decide(kind, observed, tau2_hat, stats, clamped, dropped, lam, alpha, seed) -> BootstrapOutcome:
    if stats.size == 0:
        raise EmptyInput("every bootstrap replicate failed to converge")
    crit = empirical_quantile(stats, 1.0 - alpha)
    p = float(np.count_nonzero(stats >= observed)) / stats.size
    reject = observed > crit and (lam == 0 or tau2_hat > lam)
    result = TestResult(
        test_name=kind.test_name,
        statistic=float(observed),
        p_value=p,
        alpha=alpha,
        critical_value=crit,
        reject=bool(reject),
        df=None,
        lam=float(lam),
        n_bootstrap=int(stats.size),
        seed=seed,
    )
    summary = NullSummary(
        count=int(stats.size),
        mean=float(stats.mean()),
        median=empirical_quantile(stats, 0.5),
        q90=empirical_quantile(stats, 0.9),
        q95=empirical_quantile(stats, 0.95),
        q99=empirical_quantile(stats, 0.99),
        max=float(stats.max()),
    )
    return BootstrapOutcome(result, p, crit, summary, int(clamped.sum()), dropped, float(tau2_hat))


def bootstrap_test(dataset: MetaDataset, config: BootstrapConfig = BootstrapConfig(),
                   workers: Optional[int] = None) -> BootstrapOutcome:
    """Bootstrap heterogeneity (``lam = 0``) or heterogeneity-magnitude test."""
    return bootstrap_tests(dataset, [config.stat_kind], config.lam, config.n_rep,
                           config.alpha, config.seed, workers)[config.stat_kind]
