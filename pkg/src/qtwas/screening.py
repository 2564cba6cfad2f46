"""Region-specific SNP screening: rank-score tests, BH FDR and LD pruning."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import squareform

from .quantreg import (
    rank_score_pvalues,
    rank_scores,
    residualize,
    screening_taus,
)
from .types import GenotypePanel, QtwasError, RegionPartition

FDR_LEVEL = 0.05
CUT_HEIGHT = 0.2
MAX_SNPS_PER_REGION = 50


@dataclass(frozen=True)
class ScreenResult:
    region: tuple[float, float]
    candidate_p: dict[str, float]
    fdr_selected: tuple[str, ...]
    pruned_selected: tuple[str, ...]

    @property
    def empty(self) -> bool:
        return not self.pruned_selected


def bh_fdr(pvalues: Mapping[str, float], q: float = FDR_LEVEL) -> set[str]:
    """Benjamini-Hochberg step-up selection at level ``q``."""
    if not pvalues:
        return set()
    order = sorted(pvalues, key=lambda i: (pvalues[i], i))
    m = len(order)
    ps = np.array([pvalues[i] for i in order])
    passed = np.nonzero(ps <= q * np.arange(1, m + 1) / m)[0]
    if passed.size == 0:
        return set()
    return set(order[: passed[-1] + 1])


def prune_correlated(
    panel: GenotypePanel,
    ids: Sequence[str],
    cut_height: float = CUT_HEIGHT,
    pvalues: Mapping[str, float] | None = None,
) -> set[str]:
    """Keep one SNP per average-linkage cluster of 1 - |cor| cut at ``cut_height``.

    The representative is the member with the smallest screening p-value, ties
    broken by id.
    """
    ids = sorted(ids)
    if not ids:
        raise QtwasError("prune_correlated needs at least one SNP")
    G = panel.columns(ids)
    const = np.ptp(G, axis=0) == 0
    if np.any(const):
        raise QtwasError(f"SNP {ids[int(np.argmax(const))]} is constant; correlation undefined")
    if len(ids) == 1:
        return set(ids)
    dist = 1.0 - np.abs(np.corrcoef(G, rowvar=False))
    np.fill_diagonal(dist, 0.0)
    dist = np.clip((dist + dist.T) / 2.0, 0.0, None)
    tree = linkage(squareform(dist, checks=False), method="average")
    labels = fcluster(tree, t=cut_height, criterion="distance")
    pvalues = pvalues or {}
    keep = set()
    for lab in np.unique(labels):
        members = [ids[j] for j in np.nonzero(labels == lab)[0]]
        keep.add(min(members, key=lambda i: (pvalues.get(i, 1.0), i)))
    return keep


class ScreeningContext:
    """Caches the covariate-only quantile fits shared by every SNP and region."""

    def __init__(self, panel: GenotypePanel, y):
        y = np.asarray(y, dtype=float).reshape(-1)
        if y.size != panel.n_individuals:
            raise QtwasError(
                f"expression vector has {y.size} entries for {panel.n_individuals} individuals"
            )
        self.panel = panel
        self.y = y
        self.null_design = np.column_stack([np.ones(y.size), panel.covariates])
        self.z_resid = residualize(panel.dosages.astype(float), self.null_design)
        self._scores: dict[float, np.ndarray] = {}

    def scores(self, tau: float) -> np.ndarray:
        key = round(float(tau), 10)
        if key not in self._scores:
            self._scores[key] = rank_scores(self.y, self.null_design, key)
        return self._scores[key]

    def region_pvalues(self, region: tuple[float, float]) -> dict[str, float]:
        from .association import cauchy_combine_columns

        taus = screening_taus(region)
        pmat = np.vstack([rank_score_pvalues(self.scores(t), self.z_resid, t) for t in taus])
        combined = cauchy_combine_columns(pmat)
        return {sid: float(combined[j]) for j, sid in enumerate(self.panel.snp_ids)}


def screen_region(
    ctx: ScreeningContext,
    region: tuple[float, float],
    q: float = FDR_LEVEL,
    cut_height: float = CUT_HEIGHT,
    max_snps: int = MAX_SNPS_PER_REGION,
) -> ScreenResult:
    pv = ctx.region_pvalues(region)
    fdr = bh_fdr(pv, q)
    pruned = prune_correlated(ctx.panel, sorted(fdr), cut_height, pv) if fdr else set()
    pruned = sorted(pruned, key=lambda i: (pv[i], i))[:max_snps]
    return ScreenResult(
        tuple(region),
        pv,
        tuple(sorted(fdr, key=lambda i: (pv[i], i))),
        tuple(sorted(pruned, key=ctx.panel.snp_ids.index)),
    )


def screen_gene(
    panel: GenotypePanel,
    y_expression,
    partition: RegionPartition,
    q: float = FDR_LEVEL,
    cut_height: float = CUT_HEIGHT,
    max_snps: int = MAX_SNPS_PER_REGION,
    context: ScreeningContext | None = None,
) -> list[ScreenResult]:
    """Screen every region of ``partition``; regions may come back empty."""
    ctx = context or ScreeningContext(panel, y_expression)
    return [screen_region(ctx, reg, q, cut_height, max_snps) for reg in partition.regions]
