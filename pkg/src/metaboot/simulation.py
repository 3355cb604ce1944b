"""Monte Carlo rejection-rate studies (Type I error and power).

Each replication draws a meta-analysis from the random/mixed-effects model,
simulates raw study data for the chosen effect family, and runs the configured
tests. Replication ``r`` uses its own RNG stream derived from ``(seed, r)``.
"""

from __future__ import annotations

import configparser
import itertools
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .analysis import CLASSICAL, decision, parse_stats, run_tests
from .bootstrap import default_workers, replicate_rng
from .effect_sizes import EffectKind, fisher_z, log_odds_ratio, smd_from_summary
from .errors import DegenerateSample, InvalidConfig, MetaBootError, NonConvergence
from .model import MetaDataset

MAX_STUDY_RETRIES = 20
BRADLEY_BAND = (0.025, 0.075)

# small / medium / large tau^2 by effect family and median per-group size
TAU2_LEVELS = {
    (EffectKind.SMD, 24): (0.03, 0.1, 0.3),
    (EffectKind.SMD, 91): (0.006, 0.02, 0.05),
    (EffectKind.FISHER_Z, 24): (0.01, 0.03, 0.1),
    (EffectKind.FISHER_Z, 91): (0.006, 0.02, 0.05),
    (EffectKind.LOG_OR, 24): (0.1, 0.3, 0.9),
    (EffectKind.LOG_OR, 91): (0.03, 0.1, 0.3),
}
LEVEL_NAMES = ("small", "medium", "large")


def tau2_level(kind, size: int, level: str) -> float:
    try:
        return TAU2_LEVELS[(EffectKind.parse(kind), int(size))][LEVEL_NAMES.index(level)]
    except (KeyError, ValueError):
        raise InvalidConfig(f"no tabulated tau^2 level {level!r} for {kind} with size {size}") from None


@dataclass(frozen=True)
class SimulationConfig:
    kind: EffectKind
    k_studies: int
    size_pool: tuple[int, ...]
    mu_delta: float = 0.0
    tau2_true: float = 0.0
    n_covariates: int = 0
    beta_value: float = 0.5
    lambda_null: float = 0.0
    stat_kinds: tuple[str, ...] = ("b_ml_lrt", "b_reml_lrt", "b_q", "ml_lrt", "reml_lrt", "q")
    n_replications: int = 1000
    n_bootstrap: int = 10_000
    alpha: float = 0.05
    seed: int = 0
    size_label: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", EffectKind.parse(self.kind))
        pool = (self.size_pool,) if isinstance(self.size_pool, (int, np.integer)) else self.size_pool
        object.__setattr__(self, "size_pool", tuple(int(s) for s in pool))
        try:
            object.__setattr__(self, "stat_kinds", parse_stats(self.stat_kinds))
        except ValueError as exc:
            raise InvalidConfig(str(exc)) from None
        if not self.size_pool or min(self.size_pool) < 4:
            raise InvalidConfig("size_pool must be non-empty with every size >= 4")
        if self.tau2_true < 0 or self.lambda_null < 0:
            raise InvalidConfig("tau2_true and lambda_null must be >= 0")
        if self.n_replications < 1 or self.n_bootstrap < 1:
            raise InvalidConfig("n_replications and n_bootstrap must be >= 1")
        if self.k_studies <= self.n_covariates + 1:
            raise InvalidConfig("k_studies must exceed n_covariates + 1")
        if self.lambda_null > 0 and any(s in CLASSICAL for s in self.stat_kinds):
            raise InvalidConfig("classical tests are not defined for lambda_null > 0")
        if not 0 < self.alpha < 1:
            raise InvalidConfig("alpha must lie in (0, 1)")

    @property
    def label(self) -> str:
        if self.size_label:
            return self.size_label
        if len(set(self.size_pool)) == 1:
            return str(self.size_pool[0])
        return f"median {np.median(self.size_pool):g}"


@dataclass(frozen=True)
class TestRate:
    rejection_rate: float
    mc_se: float
    n_valid: int
    nonconvergence_rate: float

    __test__ = False


@dataclass(frozen=True)
class SimulationResult:
    config: SimulationConfig
    rates: dict[str, TestRate]
    elapsed: float = field(default=0.0, compare=False)

    def to_records(self) -> list[dict]:
        c = self.config
        base = {
            "effect": c.kind.value, "size": c.label, "k": c.k_studies, "tau2": c.tau2_true,
            "lambda": c.lambda_null, "covariates": c.n_covariates, "replications": c.n_replications,
            "bootstrap": c.n_bootstrap, "alpha": c.alpha, "seed": c.seed,
        }
        return [dict(base, test=name, rejection_rate=r.rejection_rate, mc_se=r.mc_se,
                     n_valid=r.n_valid, nonconvergence_rate=r.nonconvergence_rate)
                for name, r in self.rates.items()]


def mc_se(rate: float, n: int) -> float:
    return math.sqrt(rate * (1.0 - rate) / n) if n > 0 else float("nan")


def _smd_study(rng, delta, n):
    treated = rng.normal(delta, 1.0, n)
    control = rng.standard_normal(n)
    return smd_from_summary(n, n, treated.mean(), control.mean(),
                            treated.std(ddof=1), control.std(ddof=1))


def _fisher_z_study(rng, delta, n):
    rho = math.tanh(delta)
    a = rng.standard_normal(n)
    b = rho * a + math.sqrt(1.0 - rho * rho) * rng.standard_normal(n)
    r = float(np.corrcoef(a, b)[0, 1])
    return fisher_z(r, n)


def true_cells(rng, delta, n):
    """Cells without sampling error for per-group size ``n`` and log odds ratio ``delta``.

    ``n00`` is uniform on [0.2 n, 0.8 n]; both groups have ``n`` members.
    """
    for _ in range(MAX_STUDY_RETRIES):
        n00 = rng.uniform(0.2 * n, 0.8 * n)
        n01 = n - n00
        odds1 = math.exp(delta) * n01 / n00
        n11 = n * odds1 / (1.0 + odds1)
        n10 = n - n11
        if min(n00, n01, n10, n11) >= 1:
            return n00, n01, n10, n11
    raise DegenerateSample(f"could not build a 2x2 table with all cells >= 1 (delta={delta:.3g})")


def _log_or_study(rng, delta, n):
    n00, n01, n10, n11 = true_cells(rng, delta, n)
    n01_up = float(rng.binomial(n, n01 / n))
    n11_up = float(rng.binomial(n, n11 / n))
    return log_odds_ratio(n - n01_up, n01_up, n - n11_up, n11_up)


_STUDY = {EffectKind.SMD: _smd_study, EffectKind.FISHER_Z: _fisher_z_study,
          EffectKind.LOG_OR: _log_or_study}


def draw_true_effects(config: SimulationConfig, rng: np.random.Generator):
    """Per-study sizes, moderators and true effects ``delta_j``.

    Returns ``(sizes, z, delta)``; ``z`` is None without moderators.
    """
    k, p = config.k_studies, config.n_covariates
    sizes = rng.choice(np.asarray(config.size_pool), size=k)
    z = rng.standard_normal((k, p)) if p else None
    mean = config.mu_delta + (z @ np.full(p, config.beta_value) if p else 0.0)
    delta = mean + math.sqrt(config.tau2_true) * rng.standard_normal(k)
    return sizes, z, delta


def generate_dataset(config: SimulationConfig, rng: np.random.Generator) -> MetaDataset:
    """Draw one meta-analysis (study effects from simulated raw data)."""
    sizes, z, delta = draw_true_effects(config, rng)
    make = _STUDY[config.kind]
    studies = []
    for d, n in zip(delta, sizes):
        for _ in range(MAX_STUDY_RETRIES):
            try:
                studies.append(make(rng, float(d), int(n)))
                break
            except DegenerateSample:
                raise
            except MetaBootError:
                continue  # e.g. zero sample SD: redraw this study
        else:
            raise DegenerateSample("study could not be generated within the retry budget")
    return MetaDataset(tuple(studies), z)


def _replication(args):
    config, r = args
    rng = replicate_rng(config.seed, r)
    try:
        dataset = generate_dataset(config, rng)
        boot_seed = int(rng.integers(0, 2 ** 63))
        results = run_tests(dataset, config.stat_kinds, config.lambda_null, config.alpha,
                            config.n_bootstrap, boot_seed, workers=1)
    except (NonConvergence, DegenerateSample):
        return None
    return {name: decision(res).reject for name, res in results.items()}


def run_rejection_study(config: SimulationConfig, workers: Optional[int] = None,
                        progress: Optional[Callable[[int, int], None]] = None) -> SimulationResult:
    """Rejection rate of every configured test over ``n_replications`` datasets.

    Replications whose model fit fails (or whose data cannot be generated) are
    counted in ``nonconvergence_rate`` and excluded from the rate.
    """
    start = time.perf_counter()
    workers = default_workers() if workers is None else max(1, int(workers))
    jobs = [(config, r) for r in range(config.n_replications)]
    outcomes = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, out in enumerate(pool.map(_replication, jobs, chunksize=4)):
                outcomes.append(out)
                if progress:
                    progress(i + 1, len(jobs))
    else:
        for i, job in enumerate(jobs):
            outcomes.append(_replication(job))
            if progress:
                progress(i + 1, len(jobs))
    valid = [o for o in outcomes if o is not None]
    n_fail = len(outcomes) - len(valid)
    rates = {}
    for name in config.stat_kinds:
        hits = sum(o[name] for o in valid)
        rate = hits / len(valid) if valid else float("nan")
        rates[name] = TestRate(rate, mc_se(rate, len(valid)), len(valid), n_fail / len(outcomes))
    return SimulationResult(config, rates, time.perf_counter() - start)


def _fmt(value: float) -> str:
    text = f"{value:.3f}".rstrip("0").rstrip(".")
    return text if text not in ("", "-0") else "0"


def format_rate(rate: float, se: float) -> str:
    """``"0.04 (0.006)"`` style cell; standard errors below 0.0005 print as ``<0.001``."""
    se_text = "<0.001" if se < 0.0005 else _fmt(se)
    return f"{_fmt(rate)} ({se_text})"


TEST_LABELS = {"b_ml_lrt": "B-ML-LRT", "b_reml_lrt": "B-REML-LRT", "b_q": "B-Q",
               "ml_lrt": "ML-LRT", "reml_lrt": "REML-LRT", "q": "Q"}


def render_results_table(results: Sequence[SimulationResult], layout: str = "wide") -> str:
    """Plain-text table of rejection rates.

    ``layout="wide"`` puts one column per test; ``"long"`` one row per test.
    """
    if not results:
        return ""
    keys = ("effect", "SZ", "K", "tau2", "lambda", "P")

    def cell_keys(res):
        c = res.config
        return (c.kind.value, c.label, str(c.k_studies), f"{c.tau2_true:g}",
                f"{c.lambda_null:g}", str(c.n_covariates))

    if layout == "wide":
        tests = list(dict.fromkeys(t for res in results for t in res.rates))
        header = list(keys) + [TEST_LABELS.get(t, t) for t in tests]
        rows = [list(cell_keys(res)) + [format_rate(res.rates[t].rejection_rate, res.rates[t].mc_se)
                                        if t in res.rates else "-" for t in tests]
                for res in results]
    elif layout == "long":
        header = list(keys) + ["test", "rate (se)"]
        rows = [list(cell_keys(res)) + [TEST_LABELS.get(t, t), format_rate(r.rejection_rate, r.mc_se)]
                for res in results for t, r in res.rates.items()]
    else:
        raise ValueError(f"unknown layout {layout!r}")
    widths = [max(len(str(row[i])) for row in [header] + rows) for i in range(len(header))]
    line = lambda row: "  ".join(str(v).rjust(w) for v, w in zip(row, widths))
    rule = "-" * len(line(header))
    return "\n".join([line(header), rule] + [line(r) for r in rows])


def _split(value: str) -> list[str]:
    return [v.strip() for v in value.replace(";", ",").split(",") if v.strip()]


def read_size_pool(path) -> tuple[int, ...]:
    """One per-group sample size per line (blank lines and ``#`` comments ignored)."""
    sizes = []
    for raw in Path(path).read_text().splitlines():
        text = raw.split("#", 1)[0].strip()
        if text:
            sizes.append(int(round(float(text))))
    if not sizes:
        raise InvalidConfig(f"size pool file {path} is empty")
    return tuple(sizes)


def load_grid(path) -> list[SimulationConfig]:
    """Expand an INI experiment grid into one config per factor combination.

    The ``[grid]`` section takes comma-separated levels for ``effect``, ``size``,
    ``k``, ``tau2`` (numbers or small/medium/large), ``lambda`` and ``covariates``,
    plus scalars ``stats``, ``replications``, ``bootstrap``, ``alpha``, ``seed``,
    ``mu``, ``beta`` and an optional ``pool_file`` replacing ``size``.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if not parser.read(path):
        raise InvalidConfig(f"cannot read grid file {path}")
    if "grid" not in parser:
        raise InvalidConfig("grid file needs a [grid] section")
    g = parser["grid"]
    try:
        effects = [EffectKind.parse(e) for e in _split(g.get("effect", "smd"))]
        if "pool_file" in g:
            pool_path = Path(path).parent / g["pool_file"]
            pools = [(read_size_pool(pool_path), g.get("pool_label"), None)]
        else:
            pools = [((int(s),), None, int(s)) for s in _split(g.get("size", "91"))]
        ks = [int(k) for k in _split(g.get("k", "20"))]
        tau2s = _split(g.get("tau2", "0"))
        lambdas = _split(g.get("lambda", "0"))
        covs = [int(c) for c in _split(g.get("covariates", "0"))]
        common = dict(
            stat_kinds=tuple(_split(g.get("stats", "b_ml_lrt,b_reml_lrt,b_q,ml_lrt,reml_lrt,q"))),
            n_replications=g.getint("replications", 1000),
            n_bootstrap=g.getint("bootstrap", 10_000),
            alpha=g.getfloat("alpha", 0.05),
            seed=g.getint("seed", 0),
            mu_delta=g.getfloat("mu", 0.0),
            beta_value=g.getfloat("beta", 0.5),
        )
    except ValueError as exc:
        raise InvalidConfig(f"bad grid value: {exc}") from None

    def level(text, kind, size):
        if text.lower() in LEVEL_NAMES:
            if size is None:
                raise InvalidConfig("named tau^2 levels need a fixed size, not a pool file")
            return tau2_level(kind, size, text.lower())
        return float(text)

    configs = []
    for kind, (pool, label, size), k, t, lam, p in itertools.product(effects, pools, ks, tau2s, lambdas, covs):
        stats = common["stat_kinds"]
        lam_value = level(lam, kind, size)
        if lam_value > 0:
            stats = tuple(s for s in stats if s not in CLASSICAL)
        configs.append(SimulationConfig(kind=kind, k_studies=k, size_pool=pool, size_label=label,
                                        tau2_true=level(t, kind, size), lambda_null=lam_value,
                                        n_covariates=p, **dict(common, stat_kinds=stats)))
    return configs
