"""Batched profile likelihoods and the bounded tau^2 maximizer.

Everything here works on a stack of B datasets that share a design matrix:
``x`` is (B, K), ``v`` is (B, K) or broadcastable (1, K), ``design`` is (K, p).
Rows never interact; a row's result does not depend on which other rows are in
the batch, which is what makes chunked and parallel bootstraps reproducible.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import SingularDesign

LOG_2PI = math.log(2.0 * math.pi)
INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0

TAU2_TOL = 1e-10
N_GRID = 25
MAX_GOLDEN_ITER = 200
N_RESTARTS = 3


def wls(x, v, design, tau2):
    """Weighted least squares of ``x`` on ``design`` with weights ``1 / (v + tau2)``.

    Returns ``(coef, rss, logdet)`` where ``coef`` is (B, p), ``rss`` the weighted
    residual sum of squares and ``logdet`` the log-determinant of X'WX.
    """
    x = np.asarray(x, dtype=float)
    tau2 = np.asarray(tau2, dtype=float).reshape(-1, 1)
    w = 1.0 / (v + tau2)
    if design.shape[1] == 1:
        # intercept-only fast path
        sw = w.sum(axis=-1)
        mu = (w * x).sum(axis=-1) / sw
        resid = x - mu[:, None]
        rss = (w * resid * resid).sum(axis=-1)
        return mu[:, None], rss, np.log(sw)
    xtwx = np.einsum("bk,ki,kj->bij", w, design, design)
    xtwy = np.einsum("bk,ki,bk->bi", w, design, x)
    sign, logdet = np.linalg.slogdet(xtwx)
    if np.any(sign <= 0):
        raise SingularDesign("weighted normal equations are rank-deficient")
    coef = np.linalg.solve(xtwx, xtwy[..., None])[..., 0]
    resid = x - np.einsum("bi,ki->bk", coef, design)
    rss = (w * resid * resid).sum(axis=-1)
    return coef, rss, logdet


def ml_loglik(x, v, design, tau2):
    """Profiled regular log-likelihood (fixed effects at their WLS values)."""
    tau2 = np.asarray(tau2, dtype=float)
    _, rss, _ = wls(x, v, design, tau2)
    k = x.shape[-1]
    slv = np.log(v + tau2.reshape(-1, 1)).sum(axis=-1)
    return -0.5 * (k * LOG_2PI + slv + rss)


def reml_loglik(x, v, design, tau2):
    """Restricted log-likelihood."""
    tau2 = np.asarray(tau2, dtype=float)
    _, rss, logdet = wls(x, v, design, tau2)
    k, p = x.shape[-1], design.shape[1]
    slv = np.log(v + tau2.reshape(-1, 1)).sum(axis=-1)
    return -0.5 * (slv + logdet + rss + (k - p) * LOG_2PI)


OBJECTIVES = {"ML": ml_loglik, "REML": reml_loglik}


def upper_limit(x, v, lower):
    """Initial search ceiling: max(10 var(x), 10 max(v), lower + 1) per row."""
    spread = 10.0 * np.var(x, axis=-1, ddof=1)
    vmax = 10.0 * np.broadcast_to(v, x.shape).max(axis=-1)
    return np.maximum(np.maximum(spread, vmax), lower + 1.0)


def _take(arr, rows):
    return arr if arr.shape[0] == 1 else arr[rows]


def maximize(objective, lower, upper, tol=TAU2_TOL, n_grid=N_GRID):
    """Maximize ``objective(t, rows)`` over ``[lower, upper]`` independently per row.

    A quadratic-spaced grid locates the best basin, then golden-section search
    refines inside the neighbouring grid cells. The lower end is returned
    exactly when it is at least as good as the interior candidate.

    Returns ``(argmax, value, at_upper, iterations)``.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    n = lower.shape[0]
    rows = np.arange(n)
    s = np.linspace(0.0, 1.0, n_grid) ** 2
    grid = lower[:, None] + (upper - lower)[:, None] * s[None, :]
    fgrid = np.empty_like(grid)
    for j in range(n_grid):
        fgrid[:, j] = objective(grid[:, j], rows)
    fgrid = np.where(np.isfinite(fgrid), fgrid, -np.inf)
    best = np.argmax(fgrid, axis=1)
    a = grid[rows, np.maximum(best - 1, 0)]
    b = grid[rows, np.minimum(best + 1, n_grid - 1)]

    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc = objective(c, rows)
    fd = objective(d, rows)
    iters = np.full(n, n_grid + 2)
    active = (b - a) > tol
    for _ in range(MAX_GOLDEN_ITER):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        go_left = fc[idx] >= fd[idx]
        ai, bi, ci, di = a[idx], b[idx], c[idx], d[idx]
        fci, fdi = fc[idx], fd[idx]
        new_b = np.where(go_left, di, bi)
        new_a = np.where(go_left, ai, ci)
        new_c = np.where(go_left, new_b - INV_PHI * (new_b - new_a), di)
        new_d = np.where(go_left, ci, new_a + INV_PHI * (new_b - new_a))
        probe = np.where(go_left, new_c, new_d)
        fprobe = objective(probe, idx)
        fc[idx] = np.where(go_left, fprobe, fdi)
        fd[idx] = np.where(go_left, fci, fprobe)
        a[idx], b[idx], c[idx], d[idx] = new_a, new_b, new_c, new_d
        iters[idx] += 1
        active[idx] = (new_b - new_a) > tol

    mid = 0.5 * (a + b)
    fmid = objective(mid, rows)
    fmid = np.where(np.isfinite(fmid), fmid, -np.inf)
    gbest = grid[rows, best]
    fgbest = fgrid[rows, best]
    t = np.where(fmid >= fgbest, mid, gbest)
    ft = np.maximum(fmid, fgbest)
    take_lower = fgrid[:, 0] >= ft
    t = np.where(take_lower, lower, t)
    ft = np.where(take_lower, fgrid[:, 0], ft)
    at_upper = (t >= upper - 2 * tol) & ~take_lower
    return t, ft, at_upper | ~np.isfinite(ft), iters + 1


def fit_tau2(x, v, design, method, lower=0.0):
    """Bounded maximization of the ML or REML objective in tau^2 for each row.

    Rows whose optimum sits at the search ceiling are re-run with the ceiling
    doubled, up to ``N_RESTARTS`` times.

    Returns ``(tau2, converged, iterations)``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    objective_fn = OBJECTIVES[method]
    n = x.shape[0]
    lower_arr = np.full(n, float(lower))
    upper = upper_limit(x, v, lower_arr)
    tau2 = np.full(n, np.nan)
    converged = np.zeros(n, dtype=bool)
    iterations = np.zeros(n, dtype=int)
    pending = np.arange(n)
    for attempt in range(N_RESTARTS + 1):
        if pending.size == 0:
            break
        xs, vs = x[pending], _take(v, pending)

        def objective(t, rows, xs=xs, vs=vs):
            return objective_fn(xs[rows], _take(vs, rows), design, t)

        t, _, failed, its = maximize(objective, lower_arr[pending], upper[pending] * 2.0 ** attempt)
        tau2[pending] = t
        iterations[pending] += its
        converged[pending] = ~failed
        pending = pending[failed]
    return tau2, converged, iterations
