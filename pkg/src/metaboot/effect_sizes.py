"""Study-level effect sizes and their sampling variances.

Three effect families are supported:

* standardized mean differences, bias-corrected (``EffectKind.SMD``);
* Fisher-transformed Pearson correlations (``EffectKind.FISHER_Z``);
* log odds ratios from 2x2 tables (``EffectKind.LOG_OR``).

Counts are accepted as reals; some published meta-analyses only report
averaged per-group sizes such as 13.5.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

from .errors import AllZero, BoundaryCorrelation, DegenerateSpread, InvalidCount

HALDANE_INCREMENT = 0.5


class EffectKind(str, Enum):
    SMD = "smd"
    FISHER_Z = "fcor"
    LOG_OR = "lnor"

    @classmethod
    def parse(cls, value: Union[str, "EffectKind"]) -> "EffectKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        aliases = {"d": "smd", "g": "smd", "z": "fcor", "cor": "fcor", "fisherz": "fcor",
                   "or": "lnor", "logor": "lnor", "log_or": "lnor"}
        return cls(aliases.get(key, key))


@dataclass(frozen=True)
class SmdRaw:
    n1: float
    n2: float


@dataclass(frozen=True)
class CorRaw:
    n: float
    r: float


@dataclass(frozen=True)
class OrRaw:
    """Observed 2x2 cells. ``n11``/``n10`` are group 1 with Y=1/Y=0, ``n01``/``n00`` group 2."""

    n00: float
    n01: float
    n10: float
    n11: float

    @property
    def needs_correction(self) -> bool:
        return min(self.n00, self.n01, self.n10, self.n11) == 0

    def corrected(self) -> tuple[float, float, float, float]:
        """Cells as used for estimation: +0.5 on every cell when any cell is zero."""
        cells = (self.n00, self.n01, self.n10, self.n11)
        if self.needs_correction:
            return tuple(c + HALDANE_INCREMENT for c in cells)
        return cells


Raw = Union[SmdRaw, CorRaw, OrRaw, None]


@dataclass(frozen=True)
class StudyEffect:
    kind: EffectKind
    estimate: float
    variance: float
    raw: Raw = None

    def __post_init__(self):
        if not (math.isfinite(self.variance) and self.variance > 0):
            raise InvalidCount(f"sampling variance must be positive and finite, got {self.variance!r}")
        if not math.isfinite(self.estimate):
            raise InvalidCount(f"effect estimate must be finite, got {self.estimate!r}")


def hedges_correction(n1: float, n2: float) -> float:
    """Small-sample correction factor ``1 - 3 / (4 (n1 + n2) - 9)``."""
    return 1.0 - 3.0 / (4.0 * (n1 + n2) - 9.0)


def smd_variance(d: float, n1: float, n2: float) -> float:
    n = n1 + n2
    return n / (n1 * n2) + d * d / (2.0 * n)


def _check_group_sizes(n1: float, n2: float) -> None:
    if not (n1 >= 2 and n2 >= 2):
        raise InvalidCount(f"group sizes must be >= 2, got n1={n1!r}, n2={n2!r}")


def smd_from_estimate(n1: float, n2: float, est: float, adjust: bool = False) -> StudyEffect:
    """Wrap a reported standardized mean difference.

    With ``adjust=True`` the reported value is taken to be the biased ``g`` and the
    small-sample correction is applied first.
    """
    _check_group_sizes(n1, n2)
    d = hedges_correction(n1, n2) * est if adjust else float(est)
    return StudyEffect(EffectKind.SMD, d, smd_variance(d, n1, n2), SmdRaw(n1, n2))


def smd_from_summary(n1: float, n2: float, mean1: float, mean2: float,
                     sd1: float, sd2: float) -> StudyEffect:
    """Bias-corrected standardized mean difference from group summaries.

    Parameters
    ----------
    n1, n2 : float
        Group sizes (each at least 2).
    mean1, mean2 : float
        Group means; the effect is ``mean1 - mean2`` in pooled-SD units.
    sd1, sd2 : float
        Group standard deviations.

    Returns
    -------
    StudyEffect
        ``estimate`` is the corrected ``d``; ``variance`` uses ``d`` in place of
        the unknown true effect.
    """
    _check_group_sizes(n1, n2)
    pooled_var = ((n1 - 1) * sd1 ** 2 + (n2 - 1) * sd2 ** 2) / (n1 + n2 - 2)
    if not pooled_var > 0:
        raise DegenerateSpread("pooled standard deviation is zero")
    g = (mean1 - mean2) / math.sqrt(pooled_var)
    d = hedges_correction(n1, n2) * g
    return StudyEffect(EffectKind.SMD, d, smd_variance(d, n1, n2), SmdRaw(n1, n2))


def fisher_z(r: float, n: float) -> StudyEffect:
    if not abs(r) < 1:
        raise BoundaryCorrelation(f"|r| must be < 1, got {r!r}")
    if not n > 3:
        raise InvalidCount(f"correlation sample size must exceed 3, got {n!r}")
    z = 0.5 * math.log((1 + r) / (1 - r))
    return StudyEffect(EffectKind.FISHER_Z, z, 1.0 / (n - 3), CorRaw(n, r))


def log_or_from_cells(n00: float, n01: float, n10: float, n11: float) -> tuple[float, float]:
    """Log odds ratio and its variance for strictly positive cells (no correction)."""
    return (math.log(n00 * n11 / (n01 * n10)),
            1.0 / n00 + 1.0 / n01 + 1.0 / n10 + 1.0 / n11)


def log_odds_ratio(n00: float, n01: float, n10: float, n11: float) -> StudyEffect:
    """Log odds ratio ``ln(n00 n11 / (n01 n10))`` with Haldane-Anscombe correction.

    If any cell is zero, 0.5 is added to all four cells before computing the
    estimate and the variance ``sum(1 / cell)``.
    """
    cells = (n00, n01, n10, n11)
    if any(c < 0 or not math.isfinite(c) for c in cells):
        raise InvalidCount(f"cell counts must be finite and non-negative, got {cells!r}")
    if sum(cells) == 0:
        raise AllZero("all four cells are zero")
    raw = OrRaw(float(n00), float(n01), float(n10), float(n11))
    est, var = log_or_from_cells(*raw.corrected())
    return StudyEffect(EffectKind.LOG_OR, est, var, raw)


def from_estimate(kind: EffectKind, estimate: float, variance: float,
                  raw: Optional[Raw] = None) -> StudyEffect:
    return StudyEffect(EffectKind.parse(kind), float(estimate), float(variance), raw)
