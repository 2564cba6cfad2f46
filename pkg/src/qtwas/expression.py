"""Per-gene quantile expression model training."""

from __future__ import annotations

from typing import Iterable

import numpy as np
from scipy.integrate import trapezoid

from .quantreg import QrFit, QuantileProcessFit, check_rank, explained_deviance, fit_qr
from .screening import (
    CUT_HEIGHT,
    FDR_LEVEL,
    MAX_SNPS_PER_REGION,
    ScreeningContext,
    screen_region,
)
from .types import (
    GeneModel,
    GenotypePanel,
    QtwasError,
    QuantileGrid,
    RegionPartition,
    partition as builtin_partition,
)

LD_SHRINKAGE = 0.01
SIGMA_METHODS = ("pooled", "integrated")


def _region_curve(process: QuantileProcessFit, region: tuple[float, float]):
    """Grid points within ``region`` plus interpolated endpoints, and beta there."""
    lo, hi = region
    taus = process.taus
    tol = 1e-9
    if lo < taus[0] - tol or hi > taus[-1] + tol:
        raise QtwasError(f"region ({lo}, {hi}) extends beyond the fitted grid")
    spacing = np.min(np.diff(taus)) if taus.size > 1 else np.inf
    if hi - lo < spacing - tol:
        raise QtwasError(f"region ({lo}, {hi}) is narrower than the grid spacing")
    B = process.snp_coefs
    inner = (taus > lo + tol) & (taus < hi - tol)
    pts = np.concatenate([[lo], taus[inner], [hi]])
    vals = np.column_stack([np.interp(pts, taus, B[:, j]) for j in range(B.shape[1])])
    return pts, vals.reshape(pts.size, B.shape[1])


def integrate_beta(process: QuantileProcessFit, region: tuple[float, float]) -> np.ndarray:
    """Trapezoidal integral of beta-hat(tau) over ``region``."""
    pts, vals = _region_curve(process, region)
    return trapezoid(vals, pts, axis=0)


def sigma_region(dosages, process: QuantileProcessFit, region: tuple[float, float],
                 method: str = "pooled") -> float:
    """Standard deviation of genotype-driven expression within a quantile region.

    ``pooled`` pools z_i' beta-hat(tau_g) over every individual i and every grid
    point tau_g in the region; ``integrated`` is the sd of z_i' beta_region
    divided by the region width.
    """
    Z = dosages.dosages if isinstance(dosages, GenotypePanel) else np.asarray(dosages, float)
    if Z.ndim == 1:
        Z = Z[:, None]
    if method == "pooled":
        lo, hi = region
        taus = process.taus
        mask = (taus >= lo - 1e-9) & (taus <= hi + 1e-9)
        if not np.any(mask):
            raise QtwasError(f"no grid points inside region ({lo}, {hi})")
        values = Z @ process.snp_coefs[mask].T
    elif method == "integrated":
        values = Z @ integrate_beta(process, region) / (region[1] - region[0])
    else:
        raise QtwasError(f"unknown sigma method {method!r}; expected one of {SIGMA_METHODS}")
    if np.ptp(values) <= 1e-12 * (1.0 + np.abs(values).max()):
        raise QtwasError("degenerate imputed expression")
    return float(np.std(values))


def estimate_ld(panel: GenotypePanel, ids, shrinkage: float = LD_SHRINKAGE) -> np.ndarray:
    """Pearson correlation of dosage columns, shrunk towards the identity."""
    ids = list(ids)
    if not ids:
        raise QtwasError("estimate_ld needs at least one SNP")
    G = panel.columns(ids)
    const = np.ptp(G, axis=0) == 0
    if np.any(const):
        raise QtwasError(f"SNP {ids[int(np.argmax(const))]} is constant; correlation undefined")
    if len(ids) == 1:
        return np.ones((1, 1))
    R = np.corrcoef(G, rowvar=False)
    R = (R + R.T) / 2.0
    np.fill_diagonal(R, 1.0)
    return (1.0 - shrinkage) * R + shrinkage * np.eye(len(ids))


class _FitCache:
    """Quantile fits shared across regions and partitions of one gene."""

    def __init__(self, panel: GenotypePanel, y: np.ndarray):
        self.panel = panel
        self.y = y
        self.q = panel.covariates.shape[1]
        self.null_design = np.column_stack([np.ones(y.size), panel.covariates])
        self._null: dict[float, float] = {}
        self._full: dict[tuple, QrFit] = {}
        self._checked: set[tuple] = set()

    def null_loss(self, tau: float) -> float:
        key = round(tau, 10)
        if key not in self._null:
            self._null[key] = fit_qr(self.y, self.null_design, key, check=False).objective
        return self._null[key]

    def full_fit(self, ids: tuple[str, ...], tau: float) -> QrFit:
        key = (ids, round(tau, 10))
        if key not in self._full:
            X = np.column_stack([self.null_design, self.panel.columns(ids)])
            if ids not in self._checked:
                check_rank(X)
                self._checked.add(ids)
            self._full[key] = fit_qr(self.y, X, key[1], self.q, check=False)
        return self._full[key]


def _region_taus(grid: QuantileGrid, region: tuple[float, float]) -> QuantileGrid:
    lo, hi = region
    taus = set(np.round(grid.within(lo, hi), 10).tolist()) | {round(lo, 10), round(hi, 10)}
    return QuantileGrid(tuple(sorted(taus)))


def train_gene(
    panel: GenotypePanel,
    y_expression,
    partition: RegionPartition | int,
    gene_id: str = "gene",
    grid: QuantileGrid | None = None,
    sigma_method: str = "pooled",
    fdr_level: float = FDR_LEVEL,
    cut_height: float = CUT_HEIGHT,
    max_snps: int = MAX_SNPS_PER_REGION,
    _context: ScreeningContext | None = None,
    _cache: _FitCache | None = None,
) -> GeneModel:
    """Screen, fit the quantile process and summarise each region of ``partition``.

    Regions where screening selects nothing, or whose imputed expression is
    degenerate, are stored as invalid (no SNPs, ``sigma_region`` of ``None``).
    """
    if isinstance(partition, int):
        partition = builtin_partition(partition)
    grid = grid or QuantileGrid()
    y = np.asarray(y_expression, dtype=float).reshape(-1)
    ctx = _context or ScreeningContext(panel, y)
    cache = _cache or _FitCache(panel, y)

    selected, betas, sigmas, rqs = [], [], [], []
    for region in partition.regions:
        screen = screen_region(ctx, region, fdr_level, cut_height, max_snps)
        ids = screen.pruned_selected
        if not ids:
            selected.append(())
            betas.append(np.zeros(0))
            sigmas.append(None)
            rqs.append(None)
            continue
        rgrid = _region_taus(grid, region)
        fits = tuple(cache.full_fit(ids, t) for t in rgrid.taus)
        process = QuantileProcessFit(rgrid, fits)
        Z = panel.columns(ids)
        on_grid = grid.within(*region)
        try:
            sigma = sigma_region(Z, _restrict(process, on_grid), region, sigma_method)
        except QtwasError:
            selected.append(())
            betas.append(np.zeros(0))
            sigmas.append(None)
            rqs.append(None)
            continue
        rq = [explained_deviance(cache.full_fit(ids, t).objective, cache.null_loss(t)) for t in on_grid]
        selected.append(ids)
        betas.append(integrate_beta(process, region))
        sigmas.append(sigma)
        rqs.append(float(np.mean(rq)) if rq else None)

    union = [s for s in panel.snp_ids if any(s in ids for ids in selected)]
    if union:
        snp_sd = panel.columns(union).std(axis=0)
        ld = estimate_ld(panel, union)
    else:
        snp_sd = np.zeros(0)
        ld = np.zeros((0, 0))
    return GeneModel(
        gene_id=gene_id,
        partition=partition,
        selected_snps=tuple(selected),
        beta_region=tuple(betas),
        sigma_region=tuple(sigmas),
        rq_region=tuple(rqs),
        snp_ids=tuple(union),
        snp_sd=snp_sd,
        ld=ld,
    )


def _restrict(process: QuantileProcessFit, taus) -> QuantileProcessFit:
    keep = set(np.round(taus, 10).tolist())
    fits = tuple(f for f in process.fits if round(f.tau, 10) in keep)
    return QuantileProcessFit(QuantileGrid(tuple(f.tau for f in fits)), fits)


def train_gene_partitions(
    panel: GenotypePanel,
    y_expression,
    ks: Iterable[int] = (3, 4, 5, 9),
    gene_id: str = "gene",
    **kwargs,
) -> dict[int, GeneModel]:
    """Train one model per built-in partition, sharing screening and fit caches."""
    y = np.asarray(y_expression, dtype=float).reshape(-1)
    ctx = ScreeningContext(panel, y)
    cache = _FitCache(panel, y)
    return {
        k: train_gene(panel, y, builtin_partition(k), gene_id, _context=ctx, _cache=cache, **kwargs)
        for k in ks
    }
