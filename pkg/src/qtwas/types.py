"""Shared domain types, the region-partition catalogue and the RNG contract."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

MIN_MAF = 0.01


class QtwasError(ValueError):
    """Raised for malformed input data or violated preconditions."""


def rng_from_seed(seed: int, *key: int | str) -> np.random.Generator:
    """Return a deterministic Philox stream for ``seed`` and an optional key path.

    String key components (e.g. gene ids) are hashed to integers with SHA-256 so
    the stream does not depend on Python's per-process hash randomisation.
    Philox is counter based and gives bit-identical draws on every platform.
    """
    if seed < 0 or seed >= 2**64:
        raise QtwasError(f"seed must be a 64-bit unsigned integer, got {seed}")
    spawn_key = tuple(_key_to_int(k) for k in key)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=spawn_key)
    return np.random.Generator(np.random.Philox(ss))


def _key_to_int(k: int | str) -> int:
    if isinstance(k, (int, np.integer)):
        return int(k)
    digest = hashlib.sha256(str(k).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class SnpMeta:
    id: str
    position: int
    maf: float


@dataclass(frozen=True, eq=False)
class GenotypePanel:
    """Individuals x SNPs dosage matrix with SNP metadata and optional covariates.

    Use :meth:`from_dosages` to build a panel from a raw matrix; the MAF stored
    in the metadata is always the empirical minor allele frequency.
    """

    snps: tuple[SnpMeta, ...]
    dosages: np.ndarray
    covariates: np.ndarray
    iids: tuple[str, ...] = ()

    def __post_init__(self):
        dos = np.asarray(self.dosages)
        if dos.ndim != 2:
            raise QtwasError("dosage matrix must be two-dimensional")
        n, p = dos.shape
        if len(self.snps) != p:
            raise QtwasError(f"{len(self.snps)} SNP records for {p} dosage columns")
        if not np.all((dos == 0) | (dos == 1) | (dos == 2)):
            bad = np.argwhere(~((dos == 0) | (dos == 1) | (dos == 2)))[0]
            raise QtwasError(
                f"dosage at row {bad[0]}, SNP {self.snps[bad[1]].id} is not in {{0,1,2}}"
            )
        ids = [s.id for s in self.snps]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise QtwasError(f"duplicate SNP ids: {', '.join(dup)}")
        maf = _maf(dos)
        for s, m in zip(self.snps, maf):
            if m < MIN_MAF:
                raise QtwasError(f"SNP {s.id} has minor allele frequency {m:.4g} < {MIN_MAF}")
        cov = np.asarray(self.covariates, dtype=float)
        if cov.size == 0:
            cov = np.zeros((n, 0))
        if cov.ndim != 2 or cov.shape[0] != n:
            raise QtwasError(f"covariate matrix has shape {cov.shape}, expected ({n}, q)")
        if not np.all(np.isfinite(cov)):
            raise QtwasError("covariates contain non-finite values")
        iids = tuple(self.iids) or tuple(f"ind{i}" for i in range(n))
        if len(iids) != n:
            raise QtwasError(f"{len(iids)} individual ids for {n} dosage rows")
        dos = dos.astype(np.int8)
        dos.setflags(write=False)
        cov = cov.copy()
        cov.setflags(write=False)
        object.__setattr__(self, "dosages", dos)
        object.__setattr__(self, "covariates", cov)
        object.__setattr__(self, "iids", iids)

    @classmethod
    def from_dosages(cls, dosages, covariates=None, snp_ids=None, positions=None, iids=()):
        dos = np.asarray(dosages)
        p = dos.shape[1]
        snp_ids = list(snp_ids) if snp_ids is not None else [f"snp{j}" for j in range(p)]
        positions = list(positions) if positions is not None else list(range(p))
        maf = _maf(dos)
        snps = tuple(SnpMeta(str(i), int(pos), float(m)) for i, pos, m in zip(snp_ids, positions, maf))
        if covariates is None:
            covariates = np.zeros((dos.shape[0], 0))
        return cls(snps, dos, covariates, tuple(iids))

    @property
    def n_individuals(self) -> int:
        return self.dosages.shape[0]

    @property
    def snp_ids(self) -> list[str]:
        return [s.id for s in self.snps]

    def index_of(self, ids: Sequence[str]) -> np.ndarray:
        lookup = {s.id: j for j, s in enumerate(self.snps)}
        try:
            return np.array([lookup[i] for i in ids], dtype=int)
        except KeyError as exc:
            raise QtwasError(f"SNP {exc.args[0]} not in panel") from None

    def columns(self, ids: Sequence[str]) -> np.ndarray:
        return self.dosages[:, self.index_of(ids)].astype(float)

    def drop(self, ids: Sequence[str]) -> GenotypePanel:
        keep = [j for j, s in enumerate(self.snps) if s.id not in set(ids)]
        return GenotypePanel(
            tuple(self.snps[j] for j in keep), self.dosages[:, keep], self.covariates, self.iids
        )


def _maf(dosages: np.ndarray) -> np.ndarray:
    freq = np.asarray(dosages, dtype=float).mean(axis=0) / 2.0
    return np.minimum(freq, 1.0 - freq)


@dataclass(frozen=True)
class QuantileGrid:
    taus: tuple[float, ...] = tuple(round(0.01 * i, 10) for i in range(1, 100))

    def __post_init__(self):
        t = np.asarray(self.taus, dtype=float)
        if t.ndim != 1 or t.size == 0:
            raise QtwasError("quantile grid must be a non-empty list")
        if np.any(t <= 0) or np.any(t >= 1):
            raise QtwasError("quantile levels must lie in (0, 1)")
        if np.any(np.diff(t) <= 0):
            raise QtwasError("quantile levels must be strictly increasing")
        object.__setattr__(self, "taus", tuple(float(x) for x in t))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.taus, dtype=dtype)

    def __len__(self):
        return len(self.taus)

    def within(self, lo: float, hi: float, tol: float = 1e-9) -> np.ndarray:
        t = np.asarray(self.taus)
        return t[(t >= lo - tol) & (t <= hi + tol)]


@dataclass(frozen=True)
class RegionPartition:
    k: int
    regions: tuple[tuple[float, float], ...]

    def __post_init__(self):
        regions = tuple((float(lo), float(hi)) for lo, hi in self.regions)
        if len(regions) != self.k:
            raise QtwasError(f"partition K={self.k} has {len(regions)} regions")
        for lo, hi in regions:
            if not (0.05 - 1e-12 <= lo < hi <= 0.95 + 1e-12):
                raise QtwasError(f"region ({lo}, {hi}) outside 0.05 <= lo < hi <= 0.95")
        object.__setattr__(self, "regions", regions)

    def to_dict(self) -> dict:
        return {"k": self.k, "regions": [list(r) for r in self.regions]}

    @classmethod
    def from_dict(cls, d: Mapping) -> RegionPartition:
        return cls(int(d["k"]), tuple(tuple(r) for r in d["regions"]))


PARTITIONS: dict[int, RegionPartition] = {
    3: RegionPartition(3, ((0.05, 0.4), (0.3, 0.7), (0.6, 0.95))),
    4: RegionPartition(4, ((0.05, 0.35), (0.25, 0.55), (0.45, 0.75), (0.65, 0.95))),
    5: RegionPartition(
        5, ((0.05, 0.25), (0.15, 0.45), (0.35, 0.65), (0.55, 0.85), (0.75, 0.95))
    ),
    9: RegionPartition(
        9,
        (
            (0.05, 0.15), (0.1, 0.25), (0.2, 0.35), (0.3, 0.45), (0.4, 0.55),
            (0.5, 0.65), (0.6, 0.75), (0.7, 0.85), (0.8, 0.95),
        ),
    ),
}
DEFAULT_KS = (3, 4, 5, 9)


def partition(k: int) -> RegionPartition:
    try:
        return PARTITIONS[k]
    except KeyError:
        raise QtwasError(f"no built-in partition for K={k}; choose from {sorted(PARTITIONS)}") from None


@dataclass(frozen=True, eq=False)
class GwasSummary:
    """Per-SNP marginal GWAS effects; ``zscore`` is derived as beta / se."""

    ids: tuple[str, ...]
    beta: np.ndarray
    se: np.ndarray
    n_gwas: int

    def __post_init__(self):
        ids = tuple(str(i) for i in self.ids)
        beta = np.asarray(self.beta, dtype=float).copy()
        se = np.asarray(self.se, dtype=float).copy()
        if beta.shape != (len(ids),) or se.shape != (len(ids),):
            raise QtwasError("beta/se length does not match the number of SNP ids")
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise QtwasError(f"duplicate SNP ids in GWAS summary: {', '.join(dup)}")
        if not (np.all(np.isfinite(beta)) and np.all(np.isfinite(se))):
            raise QtwasError("GWAS beta/se must be finite")
        if np.any(se <= 0):
            raise QtwasError(f"non-positive standard error for SNP {ids[int(np.argmax(se <= 0))]}")
        if int(self.n_gwas) <= 0:
            raise QtwasError("GWAS sample size must be positive")
        for a in (beta, se):
            a.setflags(write=False)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "se", se)
        object.__setattr__(self, "n_gwas", int(self.n_gwas))

    @property
    def zscore(self) -> np.ndarray:
        return self.beta / self.se

    def lookup(self) -> dict[str, int]:
        return {i: j for j, i in enumerate(self.ids)}


@dataclass(frozen=True, eq=False)
class GeneModel:
    """Trained per-gene quantile expression model for one region partition.

    Per-region fields are tuples aligned with ``partition.regions``.  A region
    with no selected SNPs has an empty ``selected_snps`` entry, an empty beta
    vector and ``sigma_region`` of ``None``; it is invalid for testing.
    ``snp_ids`` is the union of selected SNPs and indexes ``snp_sd`` and ``ld``.
    """

    gene_id: str
    partition: RegionPartition
    selected_snps: tuple[tuple[str, ...], ...]
    beta_region: tuple[np.ndarray, ...]
    sigma_region: tuple[float | None, ...]
    rq_region: tuple[float | None, ...]
    snp_ids: tuple[str, ...]
    snp_sd: np.ndarray
    ld: np.ndarray

    def __post_init__(self):
        k = self.partition.k
        for name in ("selected_snps", "beta_region", "sigma_region", "rq_region"):
            if len(getattr(self, name)) != k:
                raise QtwasError(f"{name} has {len(getattr(self, name))} entries for K={k}")
        union = set(self.snp_ids)
        betas = []
        for r, (ids, beta, sigma) in enumerate(
            zip(self.selected_snps, self.beta_region, self.sigma_region)
        ):
            beta = np.asarray(beta, dtype=float).reshape(-1)
            if beta.size != len(ids):
                raise QtwasError(f"region {r}: {beta.size} coefficients for {len(ids)} SNPs")
            if not set(ids) <= union:
                raise QtwasError(f"region {r}: selected SNPs missing from snp_ids")
            if ids and (sigma is None or not sigma > 0):
                raise QtwasError(f"region {r}: sigma_region must be positive")
            beta.setflags(write=False)
            betas.append(beta)
        sd = np.asarray(self.snp_sd, dtype=float).reshape(-1)
        ld = np.asarray(self.ld, dtype=float).reshape(len(self.snp_ids), len(self.snp_ids))
        if sd.size != len(self.snp_ids) or np.any(sd <= 0):
            raise QtwasError("snp_sd must hold one positive value per SNP")
        if ld.size:
            if not np.allclose(ld, ld.T, atol=1e-12, rtol=0):
                raise QtwasError("LD matrix is not symmetric")
            if not np.allclose(np.diag(ld), 1.0, atol=1e-12, rtol=0):
                raise QtwasError("LD matrix must have unit diagonal")
            if np.linalg.eigvalsh(ld).min() < -1e-8:
                raise QtwasError("LD matrix is not positive semi-definite")
        for rq in self.rq_region:
            if rq is not None and not (0.0 <= rq <= 1.0):
                raise QtwasError(f"rq_region value {rq} outside [0, 1]")
        sd.setflags(write=False)
        ld.setflags(write=False)
        object.__setattr__(self, "beta_region", tuple(betas))
        object.__setattr__(self, "snp_sd", sd)
        object.__setattr__(self, "ld", ld)
        object.__setattr__(self, "selected_snps", tuple(tuple(s) for s in self.selected_snps))
        object.__setattr__(self, "snp_ids", tuple(self.snp_ids))

    @property
    def valid_regions(self) -> list[bool]:
        return [bool(ids) for ids in self.selected_snps]

    @property
    def untestable(self) -> bool:
        return not any(self.valid_regions)

    @property
    def explained_deviance(self) -> float | None:
        vals = [v for v in self.rq_region if v is not None]
        return max(vals) if vals else None


@dataclass
class PartitionResult:
    k: int
    region_z: list[float | None]
    region_p: list[float | None]
    partition_p: float
    fallback: bool


@dataclass
class AssociationResult:
    gene_id: str
    partitions: dict[int, PartitionResult] = field(default_factory=dict)
    unified_p: float = 1.0

    @property
    def fallback_ks(self) -> list[int]:
        return [k for k, r in self.partitions.items() if r.fallback]
