"""Synthetic genotype/expression/trait generators and the Monte-Carlo harness."""

from __future__ import annotations

import dataclasses
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .association import cauchy_combine_columns, linear_weights_z, region_pvalues_batch, clamp_p
from .baseline import train_linear
from .expression import train_gene_partitions
from .types import DEFAULT_KS, GenotypePanel, GwasSummary, QtwasError, rng_from_seed

MODELS = (
    "null",
    "location_shift",
    "location_scale",
    "local_signal",
    "sqrt_tau",
    "sin_tau",
    "gei1",
    "gei2",
    "gei3",
)
ERRORS = ("normal", "cauchy")
CAUCHY_CLIP = 1e6
LOCAL_CUTOFF = 0.7

# (expression effect, GWAS effect) per causal SNP; see README for the desk-scale calibration
DEFAULT_EFFECTS = {
    "null": (0.5, 0.0),
    "location_shift": (0.5, 0.25),
    "location_scale": (0.5, 0.25),
    "local_signal": (0.3, 0.2),
    "sqrt_tau": (0.7, 0.15),
    "sin_tau": (0.2, 0.15),
    "gei1": (0.5, 0.25),
    "gei2": (0.5, 0.25),
    "gei3": (0.5, 0.14),
}


@dataclass(frozen=True)
class SimConfig:
    name: str = "experiment"
    model: str = "null"
    error: str = "normal"
    n_train: int = 670
    n_gwas: int = 1000
    p_snps: int = 200
    causal_fraction: float = 0.01
    ld_rho: float = 0.5
    ld_block: int = 10
    n_covariates: int = 5
    beta_expr: float | None = None
    beta_gwas: float | None = None
    replicates: int = 300
    gwas_replicates: int = 1
    alphas: tuple[float, ...] = (0.05, 0.01, 1e-3)
    ks: tuple[int, ...] = DEFAULT_KS
    seed: int = 0

    def __post_init__(self):
        if self.model not in MODELS:
            raise QtwasError(f"unknown model {self.model!r}; expected one of {MODELS}")
        if self.error not in ERRORS:
            raise QtwasError(f"unknown error distribution {self.error!r}")
        if self.causal_fraction * self.p_snps < 1 - 1e-9:
            raise QtwasError("causal_fraction * p_snps must be at least 1")
        if not (0 <= self.ld_rho < 1) or self.ld_block < 1:
            raise QtwasError("LD block needs 0 <= rho < 1 and size >= 1")
        if self.replicates < 1 or self.gwas_replicates < 1:
            raise QtwasError("replicate counts must be positive")
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(self, "ks", tuple(int(k) for k in self.ks))

    @property
    def n_causal(self) -> int:
        return int(round(self.causal_fraction * self.p_snps))

    @property
    def effects(self) -> tuple[float, float]:
        be, bg = DEFAULT_EFFECTS[self.model]
        be = be if self.beta_expr is None else self.beta_expr
        bg = bg if self.beta_gwas is None else self.beta_gwas
        return be, (0.0 if self.model == "null" else bg)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["alphas"] = list(self.alphas)
        d["ks"] = list(self.ks)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SimConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise QtwasError(f"unknown simulation config keys: {sorted(unknown)}")
        d = dict(d)
        for key in ("alphas", "ks"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class SimGene:
    """Per-gene generator parameters shared by the training and GWAS samples."""

    maf: np.ndarray
    causal: np.ndarray
    alpha_x: np.ndarray
    eta: np.ndarray


def draw_gene(config: SimConfig, rng: np.random.Generator) -> SimGene:
    maf = rng.uniform(0.05, 0.5, size=config.p_snps)
    causal = np.sort(rng.choice(config.p_snps, size=config.n_causal, replace=False))
    alpha_x = rng.uniform(0.0, 1.0, size=config.n_covariates)
    eta = rng.uniform(0.0, 1.0, size=config.n_covariates)
    return SimGene(maf, causal, alpha_x, eta)


def gen_genotypes(config: SimConfig, rng: np.random.Generator, gene: SimGene | None = None,
                  n: int | None = None) -> GenotypePanel:
    """Dosages from a thresholded latent AR(rho) Gaussian copula within LD blocks."""
    gene = gene or draw_gene(config, rng)
    n = config.n_train if n is None else n
    p = config.p_snps
    rho = config.ld_rho
    latent = rng.standard_normal((n, p))
    for j in range(1, p):
        if j % config.ld_block:
            latent[:, j] = rho * latent[:, j - 1] + np.sqrt(1.0 - rho**2) * latent[:, j]
    u = stats.norm.cdf(latent)
    m = gene.maf
    dosages = (u > (1.0 - m) ** 2).astype(np.int8) + (u > 1.0 - m**2).astype(np.int8)
    cov = rng.standard_normal((n, config.n_covariates))
    return GenotypePanel.from_dosages(dosages, cov, positions=np.arange(p) * 1000)


def _errors(config: SimConfig, rng, n):
    if config.error == "normal":
        return rng.standard_normal(n)
    return np.clip(rng.standard_cauchy(n), -CAUCHY_CLIP, CAUCHY_CLIP)


def _error_quantile(config: SimConfig, u):
    if config.error == "normal":
        return stats.norm.ppf(u)
    return np.clip(np.tan(np.pi * (u - 0.5)), -CAUCHY_CLIP, CAUCHY_CLIP)


def genetic_score(panel: GenotypePanel, gene: SimGene, effect: float) -> np.ndarray:
    return panel.dosages[:, gene.causal].astype(float).sum(axis=1) * effect


def gen_expression(panel: GenotypePanel, config: SimConfig, gene: SimGene,
                   rng: np.random.Generator) -> np.ndarray:
    n = panel.n_individuals
    g = genetic_score(panel, gene, config.effects[0])
    cov = panel.covariates @ gene.alpha_x
    model = config.model
    if model in ("null", "location_shift"):
        return g + cov + _errors(config, rng, n)
    if model == "location_scale":
        return g + cov + (1.0 + 0.5 * g) * _errors(config, rng, n)
    if model in ("local_signal", "sqrt_tau", "sin_tau"):
        u = rng.uniform(size=n)
        if model == "local_signal":
            mult = np.where(u > LOCAL_CUTOFF, 5.0 * (u - LOCAL_CUTOFF) / (1.0 - LOCAL_CUTOFF), 0.0)
        elif model == "sqrt_tau":
            mult = np.sqrt(u)
        else:
            mult = np.sin(2.0 * np.pi * u)
        return cov + _error_quantile(config, u) + mult * g
    w = rng.normal(3.0, 1.0, size=n)
    if model == "gei1":
        inter = -w * g
    elif model == "gei2":
        inter = w * g
    else:
        inter = w * rng.normal(1.0, 1.0, size=n) * g
    return g + cov + inter + _errors(config, rng, n)


def marginal_gwas(panel: GenotypePanel, Y) -> tuple[np.ndarray, np.ndarray]:
    """Per-SNP OLS of each trait column on [1, C, z_j]; returns (beta, se)."""
    Y = np.asarray(Y, dtype=float)
    one = Y.ndim == 1
    Y = Y[:, None] if one else Y
    H = np.column_stack([np.ones(panel.n_individuals), panel.covariates])
    q, _ = np.linalg.qr(H)
    Zr = panel.dosages.astype(float)
    Zr = Zr - q @ (q.T @ Zr)
    Yr = Y - q @ (q.T @ Y)
    zz = np.sum(Zr**2, axis=0)
    beta = (Zr.T @ Yr) / zz[:, None]
    dof = panel.n_individuals - H.shape[1] - 1
    rss = np.sum(Yr**2, axis=0)[None, :] - beta**2 * zz[:, None]
    se = np.sqrt(np.maximum(rss, 0.0) / dof / zz[:, None])
    if one:
        return beta[:, 0], se[:, 0]
    return beta, se


def gen_trait(panel: GenotypePanel, config: SimConfig, gene: SimGene, rng, n_rep: int = 1):
    n = panel.n_individuals
    base = genetic_score(panel, gene, config.effects[1]) + panel.covariates @ gene.eta
    return base[:, None] + rng.standard_normal((n, n_rep))


def gen_gwas_summary(panel_gwas: GenotypePanel, config: SimConfig, gene: SimGene,
                     rng: np.random.Generator) -> GwasSummary:
    beta, se = marginal_gwas(panel_gwas, gen_trait(panel_gwas, config, gene, rng)[:, 0])
    return GwasSummary(tuple(panel_gwas.snp_ids), beta, se, panel_gwas.n_individuals)


def canonical_correlation(A, B) -> float:
    """Largest canonical correlation between the column spans of A and B."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.size == 0 or B.size == 0 or A.shape[1] == 0 or B.shape[1] == 0:
        return 0.0
    qa = _orth(A - A.mean(axis=0))
    qb = _orth(B - B.mean(axis=0))
    if qa.shape[1] == 0 or qb.shape[1] == 0:
        return 0.0
    return float(min(np.linalg.svd(qa.T @ qb, compute_uv=False)[0], 1.0))


def _orth(M):
    u, s, _ = np.linalg.svd(M, full_matrices=False)
    keep = s > s.max() * max(M.shape) * np.finfo(float).eps if s.size else s
    return u[:, keep]


METHODS = ("linear", "unified")


def _method_names(ks):
    return list(METHODS) + [f"K{k}" for k in ks]


def run_replicate(config: SimConfig, index: int) -> dict:
    """Train both pipelines on one simulated gene and test it against GWAS replicates."""
    rng = rng_from_seed(config.seed, config.name, index)
    gene = draw_gene(config, rng)
    train = gen_genotypes(config, rng, gene, config.n_train)
    x = gen_expression(train, config, gene, rng)
    models = train_gene_partitions(train, x, config.ks, gene_id=f"gene{index}")
    lin = train_linear(train, x, gene_id=f"gene{index}", rng=rng)
    gwas_panel = gen_genotypes(config, rng, gene, config.n_gwas)
    Y = gen_trait(gwas_panel, config, gene, rng, config.gwas_replicates)
    beta, se = marginal_gwas(gwas_panel, Y)
    zmat = beta / se
    ids = gwas_panel.snp_ids
    fallback = rng_from_seed(config.seed, config.name, index, "fallback")
    n_rep = config.gwas_replicates

    part_p = {}
    region_p = {}
    for k in config.ks:
        regs = region_pvalues_batch(models[k], ids, zmat)
        region_p[k] = np.vstack(
            [r if r is not None else np.full(n_rep, np.nan) for r in regs]
        )
        valid = [r for r in regs if r is not None]
        if valid:
            part_p[k] = cauchy_combine_columns(np.vstack(valid))
        else:
            part_p[k] = fallback.uniform(size=n_rep)
    unified = cauchy_combine_columns(np.vstack([part_p[k] for k in config.ks]))
    if lin.empty:
        linear = fallback.uniform(size=n_rep)
    else:
        idx = [ids.index(s) for s in lin.snp_ids]
        z = linear_weights_z(lin.weights, lin.snp_sd, lin.ld, zmat[idx])
        linear = clamp_p(2.0 * stats.norm.sf(np.abs(z)))

    causal = train.dosages[:, gene.causal].astype(float)
    cancor = {}
    for k in config.ks:
        cancor[k] = [
            canonical_correlation(train.columns(s), causal) if s else 0.0
            for s in models[k].selected_snps
        ]
    cancor_linear = canonical_correlation(train.columns(lin.snp_ids), causal) if not lin.empty else 0.0
    return {
        "pvalues": {"linear": linear, "unified": unified, **{f"K{k}": part_p[k] for k in config.ks}},
        "region_p": region_p,
        "cancor": cancor,
        "cancor_linear": cancor_linear,
        "rq": {k: models[k].explained_deviance for k in config.ks},
        "untestable": {k: models[k].untestable for k in config.ks},
        "linear_empty": lin.empty,
    }


@dataclass
class ExperimentReport:
    config: SimConfig
    pvalues: dict[str, np.ndarray]
    region_p: dict[int, np.ndarray]
    cancor: dict[int, np.ndarray]
    cancor_linear: np.ndarray
    untestable_rate: dict[int, float]
    linear_empty_rate: float
    explained_deviance: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n_tests(self) -> int:
        return int(self.pvalues["unified"].size)

    def rejection(self, method: str, alpha: float) -> float:
        return float(np.mean(self.pvalues[method] < alpha))

    def rejections(self, method: str, alpha: float) -> int:
        return int(np.sum(self.pvalues[method] < alpha))

    def rejection_table(self) -> list[dict]:
        return [
            {"alpha": a, **{m: self.rejection(m, a) for m in _method_names(self.config.ks)}}
            for a in self.config.alphas
        ]

    def region_power(self, k: int, alpha: float) -> list[float]:
        rp = self.region_p[k]
        return [float(np.mean(np.nan_to_num(row, nan=1.0) < alpha)) for row in rp]

    def confirmed_fraction(self, alpha: float) -> float:
        """Share of unified hits where at least two partitions are significant."""
        hits = self.pvalues["unified"] < alpha
        if not np.any(hits):
            return float("nan")
        n_sig = sum((self.pvalues[f"K{k}"] < alpha).astype(int) for k in self.config.ks)
        return float(np.mean(n_sig[hits] >= 2))

    def screening_rates(self, k: int = 4, threshold: float = 0.95) -> dict[str, float]:
        rates = {f"A{r + 1}": float(np.mean(self.cancor[k][:, r] > threshold))
                 for r in range(self.cancor[k].shape[1])}
        rates["linear"] = float(np.mean(self.cancor_linear > threshold))
        return rates


def _collect(config: SimConfig, results: list[dict]) -> ExperimentReport:
    methods = _method_names(config.ks)
    pvalues = {m: np.concatenate([r["pvalues"][m] for r in results]) for m in methods}
    region_p = {k: np.hstack([r["region_p"][k] for r in results]) for k in config.ks}
    cancor = {k: np.array([r["cancor"][k] for r in results]) for k in config.ks}
    rq = np.array([max((v for v in r["rq"].values() if v is not None), default=np.nan)
                   for r in results])
    return ExperimentReport(
        config=config,
        pvalues=pvalues,
        region_p=region_p,
        cancor=cancor,
        cancor_linear=np.array([r["cancor_linear"] for r in results]),
        untestable_rate={k: float(np.mean([r["untestable"][k] for r in results])) for k in config.ks},
        linear_empty_rate=float(np.mean([r["linear_empty"] for r in results])),
        explained_deviance=rq,
    )


def _worker(args):
    config, index = args
    return run_replicate(config, index)


def _init_worker():
    os.environ.setdefault("OMP_NUM_THREADS", "1")


def run_experiment(config: SimConfig, threads: int = 1) -> ExperimentReport:
    """Run every replicate (serially or over a process pool) and tabulate.

    Each replicate draws from its own stream keyed by (seed, name, index), so
    the report does not depend on ``threads``.
    """
    jobs = [(config, i) for i in range(config.replicates)]
    if threads <= 1:
        results = [_worker(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=threads, initializer=_init_worker) as pool:
            results = list(pool.map(_worker, jobs, chunksize=max(1, len(jobs) // (4 * threads))))
    return _collect(config, results)


@dataclass(frozen=True, eq=False)
class SimDataset:
    """A shared SNP panel with several simulated genes and one GWAS of the trait."""

    train: GenotypePanel
    expression: dict[str, np.ndarray]
    gwas: GwasSummary
    genes: dict[str, SimGene]


def simulate_dataset(config: SimConfig, n_genes: int) -> SimDataset:
    """Toy multi-gene dataset for the file-based pipeline.

    All genes share one genotype panel (the MAFs of the first gene) but draw
    their own causal SNPs and covariate effects.  The trait sums every gene's
    GWAS-scale genetic score.
    """
    if n_genes < 1:
        raise QtwasError("dataset needs at least one gene")
    rng = rng_from_seed(config.seed, config.name, "dataset")
    first = draw_gene(config, rng)
    genes = {}
    for g in range(n_genes):
        d = first if g == 0 else draw_gene(config, rng)
        genes[f"gene{g + 1}"] = SimGene(first.maf, d.causal, d.alpha_x, d.eta)
    train = gen_genotypes(config, rng, first, config.n_train)
    expression = {name: gen_expression(train, config, gene, rng) for name, gene in genes.items()}
    gwas_panel = gen_genotypes(config, rng, first, config.n_gwas)
    y = sum(genetic_score(gwas_panel, gene, config.effects[1]) for gene in genes.values())
    y = y + gwas_panel.covariates @ first.eta + rng.standard_normal(config.n_gwas)
    beta, se = marginal_gwas(gwas_panel, y)
    return SimDataset(train, expression, GwasSummary(tuple(gwas_panel.snp_ids), beta, se,
                                                     config.n_gwas), genes)
