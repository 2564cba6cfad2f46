"""Quantile-based transcriptome-wide association testing.

Expression is modelled with quantile regression over a grid of quantile
levels, summarised per quantile region, and tested against GWAS summary
statistics; region and partition p-values are merged by Cauchy combination.
"""

from .association import cauchy_combine, linear_test_gene, region_z, test_gene
from .baseline import fit_elastic_net, train_linear
from .expression import integrate_beta, sigma_region, train_gene, train_gene_partitions
from .quantreg import check_loss, fit_qr, rank_score_test
from .screening import bh_fdr, prune_correlated, screen_gene
from .types import (
    AssociationResult,
    GeneModel,
    GenotypePanel,
    GwasSummary,
    QtwasError,
    QuantileGrid,
    RegionPartition,
    partition,
    rng_from_seed,
)

__version__ = "0.1.0"

__all__ = [
    "AssociationResult",
    "GeneModel",
    "GenotypePanel",
    "GwasSummary",
    "QtwasError",
    "QuantileGrid",
    "RegionPartition",
    "bh_fdr",
    "cauchy_combine",
    "check_loss",
    "fit_elastic_net",
    "fit_qr",
    "integrate_beta",
    "linear_test_gene",
    "partition",
    "prune_correlated",
    "rank_score_test",
    "region_z",
    "rng_from_seed",
    "screen_gene",
    "sigma_region",
    "test_gene",
    "train_gene",
    "train_gene_partitions",
    "train_linear",
]
