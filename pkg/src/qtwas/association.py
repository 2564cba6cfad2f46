"""Region-stratified gene-trait z-scores and Cauchy p-value aggregation."""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .types import AssociationResult, GeneModel, GwasSummary, PartitionResult, QtwasError

P_LO = 1e-15
P_HI = 1.0 - 1e-15


def clamp_p(p):
    return np.clip(p, P_LO, P_HI)


def cauchy_combine(pvalues: Sequence[float]) -> float:
    """Combine p-values with equal weights through the Cauchy transform.

    T = mean(tan((0.5 - p) * pi)) is standard Cauchy under the null for any
    dependence between the inputs.  Inputs below 1e-15 use the tangent tail
    approximation 1 / (p * pi); inputs above 1 - 1e-15 are clamped.
    """
    p = np.asarray(pvalues, dtype=float).reshape(-1)
    if p.size == 0:
        raise QtwasError("cannot combine an empty list of p-values")
    return float(cauchy_combine_columns(p[:, None])[0])


def cauchy_combine_columns(pmat) -> np.ndarray:
    """Column-wise :func:`cauchy_combine` of a (n_pvalues, n_sets) array."""
    p = np.asarray(pmat, dtype=float)
    if p.ndim != 2 or p.shape[0] == 0:
        raise QtwasError("expected a non-empty two-dimensional p-value array")
    if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise QtwasError("p-values must lie in [0, 1]")
    p = np.clip(p, np.finfo(float).tiny, P_HI)
    small = p < P_LO
    terms = np.tan((0.5 - np.where(small, 0.25, p)) * np.pi)
    terms = np.where(small, 1.0 / (p * np.pi), terms)
    t = terms.mean(axis=0)
    with np.errstate(divide="ignore"):
        # atan(1/t)/pi avoids the cancellation in 0.5 - atan(t)/pi for large t
        out = np.where(t > 0, np.arctan(1.0 / np.where(t > 0, t, 1.0)) / np.pi, 0.5 - np.arctan(t) / np.pi)
    return np.clip(out, np.finfo(float).tiny, P_HI)


def _align(model: GeneModel, region: int, gwas: GwasSummary):
    ids = model.selected_snps[region]
    lookup = gwas.lookup()
    keep = [j for j, i in enumerate(ids) if i in lookup]
    if not keep:
        return None
    union = {s: j for j, s in enumerate(model.snp_ids)}
    idx = np.array([union[ids[j]] for j in keep])
    gidx = np.array([lookup[ids[j]] for j in keep])
    beta = model.beta_region[region][keep]
    return beta, model.snp_sd[idx], model.ld[np.ix_(idx, idx)], gidx


def _region_weights(model: GeneModel, region: int, gwas: GwasSummary):
    """Return (weights, delta, gwas index) with z = weights @ gwas_z."""
    aligned = _align(model, region, gwas)
    if aligned is None:
        return None
    beta, sd, ld, gidx = aligned
    sigma = model.sigma_region[region]
    w = beta * sd / sigma
    delta = float(w @ ld @ w)
    if not delta > 0:
        raise QtwasError(f"non-positive null variance in region {region} of {model.gene_id}")
    return w, delta, gidx


def region_z(model: GeneModel, region_index: int, gwas: GwasSummary):
    """Quantile-stratified z-score, its null variance and two-sided p-value.

    Returns ``None`` when the region is invalid (no selected SNPs, or none of
    them present in ``gwas``).
    """
    if not model.selected_snps[region_index]:
        return None
    out = _region_weights(model, region_index, gwas)
    if out is None:
        return None
    w, delta, gidx = out
    z = float(w @ gwas.zscore[gidx])
    p = float(clamp_p(2.0 * stats.norm.sf(abs(z) / np.sqrt(delta))))
    return z, delta, p


def region_pvalues_batch(model: GeneModel, gwas_ids: Sequence[str], zmat: np.ndarray):
    """Region p-values for many GWAS z-score replicates sharing one SNP list.

    ``zmat`` has shape (n_snps, n_replicates).  Returns a list with one array of
    p-values per region, or ``None`` for invalid regions.
    """
    proxy = GwasSummary(tuple(gwas_ids), np.zeros(len(gwas_ids)), np.ones(len(gwas_ids)), 1)
    out = []
    for r in range(model.partition.k):
        if not model.selected_snps[r]:
            out.append(None)
            continue
        wd = _region_weights(model, r, proxy)
        if wd is None:
            out.append(None)
            continue
        w, delta, gidx = wd
        z = w @ zmat[gidx]
        out.append(clamp_p(2.0 * stats.norm.sf(np.abs(z) / np.sqrt(delta))))
    return out


def test_gene(model_per_k: Mapping[int, GeneModel], gwas: GwasSummary, rng) -> AssociationResult:
    """Per-partition and unified p-values for one gene.

    A partition without any valid region draws its p-value from Unif(0, 1)
    using ``rng`` and is flagged as a fallback.
    """
    if not model_per_k:
        raise QtwasError("test_gene needs at least one partition model")
    gene_ids = {m.gene_id for m in model_per_k.values()}
    result = AssociationResult(gene_id=sorted(gene_ids)[0])
    for k in sorted(model_per_k):
        model = model_per_k[k]
        zs, ps = [], []
        for r in range(model.partition.k):
            out = region_z(model, r, gwas)
            zs.append(None if out is None else out[0])
            ps.append(None if out is None else out[2])
        valid = [p for p in ps if p is not None]
        if valid:
            result.partitions[k] = PartitionResult(k, zs, ps, cauchy_combine(valid), False)
        else:
            result.partitions[k] = PartitionResult(k, zs, ps, float(rng.uniform()), True)
    result.unified_p = cauchy_combine([r.partition_p for r in result.partitions.values()])
    return result


test_gene.__test__ = False  # not a pytest test


def linear_weights_z(weights, snp_sd, ld, gwas_z):
    """Mean-model TWAS z-score, vectorised over columns of ``gwas_z``."""
    w = np.asarray(weights, dtype=float) * np.asarray(snp_sd, dtype=float)
    if not np.any(w):
        raise QtwasError("zero weight vector: gene untestable")
    denom = np.sqrt(w @ np.asarray(ld) @ w)
    return (w @ np.asarray(gwas_z)) / denom


def linear_test_gene(weights, snp_sd, ld, gwas: GwasSummary, ids: Sequence[str] | None = None) -> float:
    """S-PrediXcan-style p-value for a linear expression model.

    ``weights`` are on the raw dosage scale; ``ids`` names their SNPs (defaults
    to the first ``len(weights)`` GWAS rows).
    """
    if ids is None:
        gz = gwas.zscore[: len(weights)]
    else:
        lookup = gwas.lookup()
        missing = [i for i in ids if i not in lookup]
        if missing:
            raise QtwasError(f"SNPs missing from GWAS summary: {', '.join(missing)}")
        gz = gwas.zscore[[lookup[i] for i in ids]]
    z = linear_weights_z(weights, snp_sd, ld, gz)
    return float(clamp_p(2.0 * stats.norm.sf(abs(z))))
