"""Linear quantile regression, the regression rank-score test and R^Q."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy import stats
from numba import njit
from scipy.optimize import linprog

from .types import QtwasError, QuantileGrid

SIMPLEX_MAX_N = 200
GAP_TOL = 1e-9


def check_loss(u, tau: float) -> float:
    """Sum of the pinball loss rho_tau(u) = u * (tau - I(u < 0))."""
    u = np.asarray(u, dtype=float)
    return float(np.sum(np.where(u < 0, (tau - 1.0) * u, tau * u)))


@dataclass(frozen=True, eq=False)
class QrFit:
    tau: float
    coef: np.ndarray
    n_covariates: int
    objective: float

    @property
    def intercept(self) -> float:
        return float(self.coef[0])

    @property
    def covariate_coefs(self) -> np.ndarray:
        return self.coef[1 : 1 + self.n_covariates]

    @property
    def snp_coefs(self) -> np.ndarray:
        return self.coef[1 + self.n_covariates :]


@dataclass(frozen=True, eq=False)
class QuantileProcessFit:
    grid: QuantileGrid
    fits: tuple[QrFit, ...]

    @property
    def taus(self) -> np.ndarray:
        return np.asarray(self.grid.taus)

    @property
    def snp_coefs(self) -> np.ndarray:
        """Array of shape (len(grid), n_snps): beta-hat(tau) on the grid."""
        return np.vstack([f.snp_coefs for f in self.fits])


def _validate(y, design, tau):
    y = np.asarray(y, dtype=float).reshape(-1)
    X = np.asarray(design, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != y.size:
        raise QtwasError(f"response has {y.size} rows, design has {X.shape[0]}")
    if not (0.0 < tau < 1.0):
        raise QtwasError(f"quantile level {tau} outside (0, 1)")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
        raise QtwasError("non-finite value in response or design")
    n, d = X.shape
    if n < d + 1:
        raise QtwasError(f"need n >= d + 1 observations, got n={n}, d={d}")
    return y, X


def check_rank(X: np.ndarray) -> None:
    """Raise naming the dependent columns if ``X`` is rank deficient."""
    _, r, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag.max() * max(X.shape) * np.finfo(float).eps if diag.size else 0.0
    rank = int(np.sum(diag > tol))
    if rank < X.shape[1]:
        dependent = sorted(int(j) for j in piv[rank:])
        raise QtwasError(f"rank-deficient design: columns {dependent} are linearly dependent")


@njit(cache=True)
def _step(v, dv):
    step = 1e20
    for i in range(v.size):
        if dv[i] < 0.0:
            cand = -v[i] / dv[i]
            if cand < step:
                step = cand
    return step


@njit(cache=True)
def _frisch_newton(X, y, tau, beta=0.99995, tol=GAP_TOL, max_it=100):
    """Primal-dual log-barrier interior point on the bounded QR dual LP.

    Solves max{y'a : X'a = (1 - tau) X'1, 0 <= a <= 1}; the Newton multipliers
    of the equality constraint are minus the regression coefficients.
    Returns (coef, converged).
    """
    n = X.shape[0]
    A = X.T.copy()
    c = -y
    b = (1.0 - tau) * A.sum(axis=1)
    x = np.full(n, 1.0 - tau)
    s = 1.0 - x
    yd = np.linalg.solve(A @ X, A @ c)
    r = c - X @ yd
    for i in range(n):
        if r[i] == 0.0:
            r[i] = 0.001
    z = np.maximum(r, 0.0)
    w = z - r
    scale = 1.0 + np.abs(y).sum()
    gap = c @ x - yd @ b + w.sum()
    it = 0
    while gap > tol * scale and it < max_it:
        it += 1
        q = 1.0 / (z / x + w / s)
        r = z - w
        M = (A * q) @ X
        rhs = q * r
        dy = np.linalg.solve(M, A @ rhs)
        dx = q * (X @ dy - r)
        ds = -dx
        dz = -z * (dx / x + 1.0)
        dw = -w * (ds / s + 1.0)
        fp = min(beta * min(_step(x, dx), _step(s, ds)), 1.0)
        fd = min(beta * min(_step(w, dw), _step(z, dz)), 1.0)
        if min(fp, fd) < 1.0:
            mu = z @ x + w @ s
            g = (z + fd * dz) @ (x + fp * dx) + (w + fd * dw) @ (s + fp * ds)
            mu = mu * (g / mu) ** 3 / (2.0 * n)
            dxdz = dx * dz
            dsdw = ds * dw
            xinv = 1.0 / x
            sinv = 1.0 / s
            xi = mu * (xinv - sinv)
            rhs = rhs + q * (dxdz - dsdw - xi)
            dy = np.linalg.solve(M, A @ rhs)
            dx = q * (X @ dy + xi - r - dxdz + dsdw)
            ds = -dx
            dz = mu * xinv - z - xinv * z * dx - dxdz
            dw = mu * sinv - w - sinv * w * ds - dsdw
            fp = min(beta * min(_step(x, dx), _step(s, ds)), 1.0)
            fd = min(beta * min(_step(w, dw), _step(z, dz)), 1.0)
        x = x + fp * dx
        s = s + fp * ds
        yd = yd + fd * dy
        w = w + fd * dw
        z = z + fd * dz
        gap = c @ x - yd @ b + w.sum()
    return -yd, gap <= tol * scale


def _simplex(X, y, tau):
    """Exact vertex solution of the primal LP via the HiGHS dual simplex."""
    n, d = X.shape
    # variables: coef+ , coef-, u (positive residual), v (negative residual)
    cost = np.concatenate([np.zeros(2 * d), np.full(n, tau), np.full(n, 1.0 - tau)])
    eye = np.eye(n)
    A_eq = np.hstack([X, -X, eye, -eye])
    res = linprog(cost, A_eq=A_eq, b_eq=y, bounds=(0, None), method="highs-ds")
    if res.status != 0:
        raise QtwasError(f"quantile regression LP failed: {res.message}")
    return res.x[:d] - res.x[d : 2 * d]


def fit_qr(y, design, tau: float, n_covariates: int = 0, check: bool = True) -> QrFit:
    """Minimise sum rho_tau(y - design @ coef).

    ``design`` must contain the intercept as its first column, followed by
    ``n_covariates`` covariate columns and then the SNP columns.  Problems with
    fewer than 200 rows are solved exactly by simplex; larger ones by the
    Frisch-Newton interior point, falling back to simplex if it stalls.
    """
    y, X = _validate(y, design, tau)
    if check:
        check_rank(X)
    if not np.any(y):
        coef = np.zeros(X.shape[1])
    elif X.shape[0] < SIMPLEX_MAX_N:
        coef = _simplex(X, y, tau)
    else:
        try:
            coef, ok = _frisch_newton(np.ascontiguousarray(X), y, float(tau))
        except np.linalg.LinAlgError:
            ok = False
        if not ok:
            coef = _simplex(X, y, tau)
    return QrFit(float(tau), coef, int(n_covariates), check_loss(y - X @ coef, tau))


def fit_process(y, design, grid: QuantileGrid, n_covariates: int = 0) -> QuantileProcessFit:
    y, X = _validate(y, design, grid.taus[0])
    check_rank(X)
    fits = tuple(fit_qr(y, X, t, n_covariates, check=False) for t in grid.taus)
    return QuantileProcessFit(grid, fits)


def _null_design(covariates, n):
    cov = np.zeros((n, 0)) if covariates is None else np.asarray(covariates, dtype=float)
    if cov.ndim == 1:
        cov = cov[:, None]
    return np.column_stack([np.ones(n), cov])


def rank_scores(y, null_design, tau: float) -> np.ndarray:
    """a_i = tau - I(y_i < fitted_i) from the covariate-only quantile fit."""
    y = np.asarray(y, dtype=float)
    fit = fit_qr(y, null_design, tau)
    resid = y - null_design @ fit.coef
    tol = 1e-9 * (1.0 + np.abs(y).max())
    return tau - (resid < -tol).astype(float)


def residualize(Z, null_design) -> np.ndarray:
    """Least-squares residuals of the columns of Z on the null design."""
    q, _ = np.linalg.qr(null_design)
    Z = np.asarray(Z, dtype=float)
    return Z - q @ (q.T @ Z)


def rank_score_pvalues(scores, z_resid, tau: float) -> np.ndarray:
    """Vectorised rank-score chi-square(1) p-values for residualized SNP columns."""
    z_resid = np.asarray(z_resid, dtype=float)
    if z_resid.ndim == 1:
        z_resid = z_resid[:, None]
    ss = np.sum(z_resid**2, axis=0)
    if np.any(ss <= 1e-12 * len(scores)):
        raise QtwasError("SNP collinear with covariates")
    S = z_resid.T @ scores
    T = S**2 / (tau * (1.0 - tau) * ss)
    return stats.chi2.sf(T, df=1)


def rank_score_test(y, z, covariates, tau: float) -> float:
    """Gutenbrunner-Jureckova rank-score test of one SNP at quantile ``tau``."""
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.size != y.size:
        raise QtwasError(f"SNP vector has {z.size} entries, response has {y.size}")
    if np.ptp(z) == 0:
        raise QtwasError("SNP vector is constant")
    H = _null_design(covariates, y.size)
    a = rank_scores(y, H, tau)
    return float(rank_score_pvalues(a, residualize(z, H), tau)[0])


def screening_taus(region: tuple[float, float]) -> tuple[float, float, float]:
    lo, hi = region
    return (lo, round((lo + hi) / 2.0, 10), hi)


def screen_pvalue(y, z, covariates, region: tuple[float, float]) -> float:
    """Cauchy combination of rank-score p-values at the ends and midpoint of ``region``."""
    from .association import cauchy_combine

    return cauchy_combine([rank_score_test(y, z, covariates, t) for t in screening_taus(region)])


def explained_deviance(v_full: float, v_null: float) -> float:
    if v_null <= 0.0:
        return 0.0
    rq = 1.0 - v_full / v_null
    if rq < -1e-8:
        raise QtwasError(f"full-model check loss exceeds nested null model (R^Q={rq:.3g})")
    return min(max(rq, 0.0), 1.0)


def r_q(y, design_full, design_null, tau: float) -> float:
    """Explained deviance 1 - V_full(tau) / V_null(tau) of nested quantile fits."""
    v_full = fit_qr(y, design_full, tau).objective
    v_null = fit_qr(y, design_null, tau).objective
    return explained_deviance(v_full, v_null)
