"""Independent reference computations used by the unit and acceptance tests.

These avoid the package's batched engine: likelihoods are evaluated from the
explicit covariance matrix, tau^2 is maximized by brute-force grid search and
chi-square tails come from numerical integration of the density.
"""

import math

import numpy as np
from scipy import integrate

GRID_STEP = 1e-3


def random_dataset(rng, mixed=None):
    """Small random (mixed-)effects dataset: ``(x, v, design)`` with K in [3, 10]."""
    k = int(rng.integers(3, 11))
    p = 0
    if mixed or (mixed is None and rng.random() < 0.5):
        p = int(rng.integers(1, min(2, k - 2) + 1))
    z = rng.standard_normal((k, p))
    design = np.column_stack([np.ones(k), z])
    v = rng.uniform(0.05, 1.0, k)
    tau2 = rng.choice([0.0, rng.uniform(0.0, 1.0)])
    beta = rng.normal(0.0, 0.5, p + 1)
    x = design @ beta + rng.normal(0.0, np.sqrt(v + tau2))
    return x, v, design


def loglik_grid(x, v, design, tau2s, method):
    """ML or REML objective at each ``tau2`` via explicit GLS, vectorized over the grid."""
    tau2s = np.asarray(tau2s, dtype=float)
    w = 1.0 / (v[None, :] + tau2s[:, None])  # (G, K)
    xtwx = np.einsum("gk,ki,kj->gij", w, design, design)
    xtwy = np.einsum("gk,ki,k->gi", w, design, x)
    beta = np.linalg.solve(xtwx, xtwy[..., None])[..., 0]
    resid = x[None, :] - beta @ design.T
    rss = np.sum(w * resid ** 2, axis=1)
    logdet_v = np.sum(np.log(v[None, :] + tau2s[:, None]), axis=1)
    k, p = design.shape
    ml = -0.5 * (k * math.log(2 * math.pi) + logdet_v + rss)
    if method == "ML":
        return ml
    _, logdet_xtwx = np.linalg.slogdet(xtwx)
    return ml + 0.5 * p * math.log(2 * math.pi) - 0.5 * logdet_xtwx


def grid_argmax(x, v, design, method, upper=5.0, step=GRID_STEP):
    grid = np.arange(0.0, upper + step / 2, step)
    values = loglik_grid(x, v, design, grid, method)
    i = int(np.argmax(values))
    return grid[i], values[i]


def equal_variance_tau2(x, sigma2, method):
    """Closed-form ML/REML tau^2 for an intercept-only model with equal variances."""
    s = float(np.sum((x - np.mean(x)) ** 2))
    denom = len(x) if method == "ML" else len(x) - 1
    return max(0.0, s / denom - sigma2)


def chi2_sf_quad(t, df):
    """Upper chi-square tail by integrating the density over [0, t] (or [t, inf))."""
    half = df / 2.0
    log_norm = half * math.log(2.0) + math.lgamma(half)

    def density(u):
        if u <= 0:
            return 0.0 if df > 2 else (0.5 if df == 2 else math.inf)
        return math.exp((half - 1) * math.log(u) - u / 2 - log_norm)

    if df == 1:
        # substitute u = s^2 to remove the integrable singularity at 0
        def g(s):
            return 2 * s * density(s * s) if s > 0 else 2 * math.exp(-log_norm)
        tail, _ = integrate.quad(g, math.sqrt(t), math.inf, epsabs=1e-13, epsrel=1e-12)
        return tail
    if t < df:
        body, _ = integrate.quad(density, 0.0, t, epsabs=1e-13, epsrel=1e-12, limit=200)
        return 1.0 - body
    tail, _ = integrate.quad(density, t, math.inf, epsabs=1e-13, epsrel=1e-12, limit=200)
    return tail


def mixture_sf_quad(t):
    return 0.5 if t <= 0 else 0.5 * chi2_sf_quad(t, 1)
