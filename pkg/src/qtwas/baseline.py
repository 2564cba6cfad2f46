"""Elastic-net linear expression model used by the mean-based TWAS baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .types import GenotypePanel, QtwasError

N_LAMBDA = 100
LAMBDA_RATIO = 1e-3
N_FOLDS = 5


@dataclass(frozen=True, eq=False)
class ElasticNetFit:
    weights: np.ndarray
    intercept: float
    lam: float
    alpha_mix: float = 0.5

    @property
    def active(self) -> np.ndarray:
        return np.flatnonzero(self.weights)

    @property
    def empty(self) -> bool:
        return not np.any(self.weights)


@njit(cache=True)
def _sweep(gram, grad, xsq, l1, l2, w, coords):
    max_change = 0.0
    for j in coords:
        zj = grad[j] + xsq[j] * w[j]
        if zj > l1:
            new = (zj - l1) / (xsq[j] + l2)
        elif zj < -l1:
            new = (zj + l1) / (xsq[j] + l2)
        else:
            new = 0.0
        delta = new - w[j]
        if delta != 0.0:
            for k in range(w.size):
                grad[k] -= gram[k, j] * delta
            w[j] = new
            change = abs(delta) * np.sqrt(xsq[j])
            if change > max_change:
                max_change = change
    return max_change


@njit(cache=True)
def _face_solve(gram, xty, l1, l2, w, grad):
    """Exact minimiser on the current sign pattern, accepted only if signs hold."""
    active = np.flatnonzero(w)
    if active.size == 0:
        return
    sign = np.sign(w[active])
    sub = gram[active][:, active] + l2 * np.eye(active.size)
    cand = np.linalg.solve(sub, xty[active] - l1 * sign)
    if np.all(np.sign(cand) == sign):
        w[active] = cand
        grad[:] = xty - gram @ w


@njit(cache=True)
def _cd(gram, xty, xsq, lam, alpha, w, max_sweeps, tol):
    """Covariance-update coordinate descent for one penalty value.

    Minimises (1/2n)||y - Xw||^2 + lam * (alpha ||w||_1 + (1 - alpha)/2 ||w||^2)
    for centred X, y, given gram = X'X/n and xty = X'y/n.  Updates ``w`` in
    place and returns the number of full sweeps.  Between sweeps the active
    coordinates jump to their exact minimiser when the sign pattern allows.
    """
    grad = xty - gram @ w
    l1 = lam * alpha
    l2 = lam * (1.0 - alpha)
    every = np.arange(w.size)
    sweeps = 0
    while sweeps < max_sweeps:
        sweeps += 1
        if _sweep(gram, grad, xsq, l1, l2, w, every) < tol:
            break
        if sweeps >= 2:
            _face_solve(gram, xty, l1, l2, w, grad)
    return sweeps


def enet_objective(X, y, w, intercept, lam, alpha_mix):
    r = y - intercept - X @ w
    return 0.5 * np.mean(r**2) + lam * (
        alpha_mix * np.abs(w).sum() + 0.5 * (1.0 - alpha_mix) * np.sum(w**2)
    )


def _moments(X, y):
    xm = X.mean(axis=0)
    ym = y.mean()
    Xc = X - xm
    yc = y - ym
    n = y.size
    gram = Xc.T @ Xc / n
    return xm, ym, gram, Xc.T @ yc / n, np.ascontiguousarray(np.diag(gram).copy())


def coordinate_descent(X, y, lam, alpha_mix=0.5, w0=None, max_sweeps=10_000, tol=1e-12):
    """Solve one elastic-net problem; returns (weights, intercept, sweeps)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    xm, ym, gram, xty, xsq = _moments(X, y)
    w = np.zeros(X.shape[1]) if w0 is None else np.array(w0, dtype=float)
    sweeps = _cd(gram, xty, xsq, float(lam), float(alpha_mix), w, int(max_sweeps), float(tol))
    return w, float(ym - xm @ w), sweeps


def lambda_max(X, y, alpha_mix=0.5) -> float:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    xc = X - X.mean(axis=0)
    yc = y - y.mean()
    top = float(np.max(np.abs(xc.T @ yc))) / y.size
    # rounding noise from an exactly orthogonal response counts as zero
    if top <= 1e-12 * np.sqrt(np.mean(xc**2) * np.mean(yc**2)):
        return 0.0
    return top / max(alpha_mix, 1e-3)


def make_lambda_path(X, y, alpha_mix=0.5, n_lambda=N_LAMBDA, ratio=LAMBDA_RATIO) -> np.ndarray:
    lmax = lambda_max(X, y, alpha_mix)
    if lmax <= 0:
        return np.zeros(0)
    return np.geomspace(lmax, lmax * ratio, n_lambda)


def _path(X, y, lambdas, alpha_mix, tol=1e-12):
    xm, ym, gram, xty, xsq = _moments(X, y)
    w = np.zeros(X.shape[1])
    W = np.empty((len(lambdas), X.shape[1]))
    b = np.empty(len(lambdas))
    for i, lam in enumerate(lambdas):
        _cd(gram, xty, xsq, float(lam), float(alpha_mix), w, 10_000, tol)
        W[i] = w
        b[i] = ym - xm @ w
    return W, b


def fit_elastic_net(
    y,
    X,
    alpha_mix: float = 0.5,
    lambda_path: np.ndarray | None = None,
    n_folds: int = N_FOLDS,
    rng: np.random.Generator | None = None,
) -> ElasticNetFit:
    """Elastic net along a lambda path, choosing lambda by K-fold CV error.

    ``X`` should be column-standardised.  With a single-value path no
    cross-validation is done.  Fold assignment is a permutation drawn from
    ``rng`` (seed 0 if omitted).
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    X = np.asarray(X, dtype=float)
    n = y.size
    if n < 3:
        raise QtwasError("elastic net needs at least 3 observations")
    if X.shape[0] != n:
        raise QtwasError(f"X has {X.shape[0]} rows, y has {n}")
    if not (0.0 < alpha_mix <= 1.0):
        raise QtwasError("alpha_mix must lie in (0, 1]")
    if lambda_path is None:
        lambdas = make_lambda_path(X, y, alpha_mix)
    else:
        lambdas = np.atleast_1d(np.asarray(lambda_path, dtype=float))
    if lambdas.size == 0:
        return ElasticNetFit(np.zeros(X.shape[1]), float(y.mean()), 0.0, alpha_mix)
    W, b = _path(X, y, lambdas, alpha_mix)
    if lambdas.size == 1:
        return ElasticNetFit(W[0], float(b[0]), float(lambdas[0]), alpha_mix)

    rng = rng if rng is not None else np.random.default_rng(0)
    folds = np.arange(n) % n_folds
    folds = folds[rng.permutation(n)]
    sse = np.zeros(lambdas.size)
    for f in range(n_folds):
        test = folds == f
        Wf, bf = _path(X[~test], y[~test], lambdas, alpha_mix, tol=1e-8)
        pred = X[test] @ Wf.T + bf
        sse += np.sum((y[test, None] - pred) ** 2, axis=0)
    best = int(np.argmin(sse))
    return ElasticNetFit(W[best], float(b[best]), float(lambdas[best]), alpha_mix)


def standardize(G) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Column-standardise; returns (standardised, means, sds)."""
    G = np.asarray(G, dtype=float)
    mean = G.mean(axis=0)
    sd = G.std(axis=0)
    if np.any(sd == 0):
        raise QtwasError("cannot standardise a constant column")
    return (G - mean) / sd, mean, sd


@dataclass(frozen=True, eq=False)
class LinearGeneModel:
    """Raw-dosage-scale weights for the SNPs kept by the elastic net."""

    gene_id: str
    snp_ids: tuple[str, ...]
    weights: np.ndarray
    snp_sd: np.ndarray
    ld: np.ndarray

    @property
    def empty(self) -> bool:
        return len(self.snp_ids) == 0


def train_linear(panel: GenotypePanel, y_expression, gene_id: str = "gene",
                 alpha_mix: float = 0.5, rng: np.random.Generator | None = None) -> LinearGeneModel:
    """Fit the baseline on covariate-adjusted expression and keep the active SNPs."""
    from .expression import estimate_ld

    y = np.asarray(y_expression, dtype=float).reshape(-1)
    H = np.column_stack([np.ones(y.size), panel.covariates])
    y_adj = y - H @ np.linalg.lstsq(H, y, rcond=None)[0]
    Xs, _, sd = standardize(panel.dosages)
    fit = fit_elastic_net(y_adj, Xs, alpha_mix, rng=rng)
    active = fit.active
    if active.size == 0:
        return LinearGeneModel(gene_id, (), np.zeros(0), np.zeros(0), np.zeros((0, 0)))
    ids = [panel.snp_ids[j] for j in active]
    raw = fit.weights[active] / sd[active]
    snp_sd = panel.columns(ids).std(axis=0)
    return LinearGeneModel(gene_id, tuple(ids), raw, snp_sd, estimate_ld(panel, ids))
