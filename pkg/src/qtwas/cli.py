"""Command-line interface: ``qtwas train | screen | test | simulate | combine``.

Exit status is 0 on success, 1 for usage errors and 2 for data errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io as qio
from .association import cauchy_combine, linear_test_gene, test_gene
from .baseline import train_linear
from .expression import train_gene_partitions
from .screening import ScreeningContext, screen_gene
from .simulation import SimConfig, run_experiment, simulate_dataset
from .types import DEFAULT_KS, QtwasError, partition, rng_from_seed

log = logging.getLogger("qtwas")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _ks(text: str) -> tuple[int, ...]:
    try:
        ks = tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not ks:
        raise argparse.ArgumentTypeError("no partitions given")
    return ks


def _seed(text: str) -> int:
    try:
        s = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}")
    if not 0 <= s < 2**64:
        raise argparse.ArgumentTypeError("seed must be in [0, 2^64)")
    return s


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError("expected a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qtwas", description="Quantile TWAS: train, screen, test and simulate.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    threads = {"type": _positive, "default": os.cpu_count() or 1,
               "help": "worker processes (default: available CPUs)"}

    t = sub.add_parser("train", help="fit per-gene quantile expression models")
    t.add_argument("--genotypes", required=True, type=Path)
    t.add_argument("--expression", required=True, type=Path)
    t.add_argument("--partitions", type=_ks, default=DEFAULT_KS)
    t.add_argument("--out", required=True, type=Path)
    t.add_argument("--seed", required=True, type=_seed, help="seeds the baseline CV folds")
    t.add_argument("--threads", **threads)
    t.add_argument("--no-linear", action="store_true", help="skip the elastic-net baseline")

    s = sub.add_parser("screen", help="region-specific SNP screening report")
    s.add_argument("--genotypes", required=True, type=Path)
    s.add_argument("--expression", required=True, type=Path)
    s.add_argument("--partition", required=True, type=int)
    s.add_argument("--out", required=True, type=Path)

    a = sub.add_parser("test", help="gene-trait association from GWAS summary statistics")
    a.add_argument("--models", required=True, type=Path)
    a.add_argument("--gwas", required=True, type=Path)
    a.add_argument("--out", required=True, type=Path)
    a.add_argument("--seed", required=True, type=_seed, help="seeds fallback p-value draws")
    a.add_argument("--plot", type=Path, help="also write a per-gene -log10 p figure (PNG)")

    m = sub.add_parser("simulate", help="Monte-Carlo experiments from a JSON config")
    m.add_argument("--config", required=True, type=Path)
    m.add_argument("--out", required=True, type=Path)
    m.add_argument("--seed", required=True, type=_seed)
    m.add_argument("--threads", **threads)
    m.add_argument("--no-figures", action="store_true")

    c = sub.add_parser("combine", help="Cauchy-combine a list of p-values")
    c.add_argument("--pvalues", required=True, help="file of p-values, or - for stdin")
    return p


def _train_one(job):
    gene_id, panel, y, ks, seed, linear = job
    models = train_gene_partitions(panel, y, ks, gene_id=gene_id)
    lin = train_linear(panel, y, gene_id, rng=rng_from_seed(seed, gene_id, "cv")) if linear else None
    return gene_id, models, lin


def _map(fn, jobs, threads):
    if threads <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
        return list(pool.map(fn, jobs))


def cmd_train(args) -> int:
    for k in args.partitions:
        partition(k)
    panel = qio.read_genotype_tsv(args.genotypes)
    expr = qio.read_expression_tsv(args.expression, panel.iids)
    jobs = [(g, panel, y, args.partitions, args.seed, not args.no_linear) for g, y in expr.items()]
    args.out.mkdir(parents=True, exist_ok=True)
    for gene_id, models, lin in _map(_train_one, jobs, args.threads):
        for k, model in models.items():
            qio.write_gene_model(args.out / qio.model_filename(gene_id, k), model)
        if lin is not None:
            qio.write_linear_model(args.out / qio.linear_filename(gene_id), lin)
        log.info("trained %s: %d valid regions over %d partitions", gene_id,
                 sum(sum(m.valid_regions) for m in models.values()), len(models))
    return EXIT_OK


def cmd_screen(args) -> int:
    part = partition(args.partition)
    panel = qio.read_genotype_tsv(args.genotypes)
    expr = qio.read_expression_tsv(args.expression, panel.iids)
    records = []
    for gene_id, y in expr.items():
        results = screen_gene(panel, y, part, context=ScreeningContext(panel, y))
        for r, res in enumerate(results, start=1):
            fdr = set(res.fdr_selected)
            kept = set(res.pruned_selected)
            for sid in panel.snp_ids:
                records.append({
                    "gene_id": gene_id, "region": f"A{r}", "tau_lo": res.region[0],
                    "tau_hi": res.region[1], "snp_id": sid, "p": res.candidate_p[sid],
                    "fdr_selected": sid in fdr, "pruned_selected": sid in kept,
                })
    cols = ["gene_id", "region", "tau_lo", "tau_hi", "snp_id", "p", "fdr_selected", "pruned_selected"]
    qio.write_records_tsv(args.out, cols, records)
    return EXIT_OK


def cmd_test(args) -> int:
    models = qio.read_model_dir(args.models)
    gwas = qio.read_gwas_tsv(args.gwas)
    ks = sorted({k for per_gene in models.values() for k in per_gene})
    records = []
    for gene_id in sorted(models):
        rng = rng_from_seed(args.seed, gene_id)
        res = test_gene(models[gene_id], gwas, rng)
        row = {"gene_id": gene_id, "unified_p": res.unified_p}
        for k in ks:
            part = res.partitions.get(k)
            row[f"p_K{k}"] = None if part is None else part.partition_p
            row[f"fallback_K{k}"] = None if part is None else part.fallback
        lin_path = args.models / qio.linear_filename(gene_id)
        if lin_path.exists():
            lin = qio.read_linear_model(lin_path)
            lookup = gwas.lookup()
            present = [j for j, s in enumerate(lin.snp_ids) if s in lookup]
            if lin.empty or not present:
                row["p_linear"], row["fallback_linear"] = float(rng.uniform()), True
            else:
                sub = np.ix_(present, present)
                row["p_linear"] = linear_test_gene(
                    lin.weights[present], lin.snp_sd[present], lin.ld[sub], gwas,
                    [lin.snp_ids[j] for j in present],
                )
                row["fallback_linear"] = False
        records.append(row)
    cols = (["gene_id"] + [f"p_K{k}" for k in ks] + ["unified_p"] + [f"fallback_K{k}" for k in ks]
            + ["p_linear", "fallback_linear"])
    qio.write_records_tsv(args.out, cols, records)
    if args.plot:
        from .plotting import manhattan

        manhattan([r["gene_id"] for r in records], [r["unified_p"] for r in records], args.plot,
                  alpha=0.05 / max(len(records), 1), title="unified p-value per gene")
    return EXIT_OK


def _load_sim_config(path: Path, seed: int):
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise QtwasError(f"{path}: file not found") from None
    except json.JSONDecodeError as exc:
        raise QtwasError(f"{path}: line {exc.lineno}, column {exc.colno}: invalid JSON") from None
    if not isinstance(doc, dict) or not set(doc) <= {"experiments", "dataset"}:
        raise QtwasError(f"{path}: expected an object with 'experiments' and/or 'dataset'")
    experiments = []
    names = set()
    for i, exp in enumerate(doc.get("experiments", [])):
        if not isinstance(exp, dict):
            raise QtwasError(f"{path}: experiment {i} is not an object")
        if "seed" in exp:
            raise QtwasError(f"{path}: experiment {i}: seed comes from --seed, not the config")
        cfg = SimConfig.from_dict({**exp, "seed": seed})
        if cfg.name in names:
            raise QtwasError(f"{path}: duplicate experiment name {cfg.name!r}")
        names.add(cfg.name)
        experiments.append(cfg)
    dataset = None
    if "dataset" in doc:
        d = dict(doc["dataset"])
        if "seed" in d:
            raise QtwasError(f"{path}: dataset: seed comes from --seed, not the config")
        n_genes = int(d.pop("genes", 3))
        dataset = (SimConfig.from_dict({"name": "dataset", **d, "seed": seed}), n_genes)
    if not experiments and dataset is None:
        raise QtwasError(f"{path}: nothing to simulate")
    return experiments, dataset


def _experiment_outputs(report, out: Path, figures: bool) -> dict:
    cfg = report.config
    methods = ["linear", "unified"] + [f"K{k}" for k in cfg.ks]
    table = report.rejection_table()
    qio.write_records_tsv(out / "rejection.tsv", ["alpha"] + methods, table)

    power_rows = []
    for k in cfg.ks:
        for a in cfg.alphas:
            for r, (region, pw) in enumerate(zip(partition(k).regions, report.region_power(k, a))):
                power_rows.append({"k": k, "region": f"A{r + 1}", "tau_lo": region[0],
                                   "tau_hi": region[1], "alpha": a, "rejection": pw})
    qio.write_records_tsv(out / "region_power.tsv",
                          ["k", "region", "tau_lo", "tau_hi", "alpha", "rejection"], power_rows)

    screen_rows = []
    for k in cfg.ks:
        rates = report.screening_rates(k)
        for r, region in enumerate(partition(k).regions):
            screen_rows.append({"k": k, "set": f"A{r + 1}", "tau_lo": region[0], "tau_hi": region[1],
                                "cancor_gt_0.95": rates[f"A{r + 1}"],
                                "mean_cancor": float(np.mean(report.cancor[k][:, r]))})
    screen_rows.append({"k": None, "set": "linear", "tau_lo": None, "tau_hi": None,
                        "cancor_gt_0.95": report.screening_rates(cfg.ks[0])["linear"],
                        "mean_cancor": float(np.mean(report.cancor_linear))})
    qio.write_records_tsv(out / "screening.tsv",
                          ["k", "set", "tau_lo", "tau_hi", "cancor_gt_0.95", "mean_cancor"],
                          screen_rows)

    summary = {
        "config": cfg.to_dict(),
        "n_tests": report.n_tests,
        "rejection": table,
        "confirmed_by_two_partitions": {str(a): _nan_to_none(report.confirmed_fraction(a))
                                        for a in cfg.alphas},
        "untestable_rate": {str(k): v for k, v in report.untestable_rate.items()},
        "linear_empty_rate": report.linear_empty_rate,
        "median_explained_deviance": _nan_to_none(float(np.nanmedian(report.explained_deviance))
                                                  if np.any(np.isfinite(report.explained_deviance))
                                                  else float("nan")),
    }
    (out / "report.json").write_text(qio.dumps_json(summary), encoding="utf-8")
    qio.write_records_tsv(out / "pvalues.tsv", methods,
                          [{m: report.pvalues[m][i] for m in methods} for i in range(report.n_tests)])

    if figures:
        from . import plotting

        plotting.rejection_bars(table, methods, out / "rejection.png", title=cfg.name,
                                reference=cfg.alphas[0] if cfg.model == "null" else None)
        plotting.qq_plot({m: report.pvalues[m] for m in ("linear", "unified")}, out / "qq.png",
                         title=cfg.name)
        k = 4 if 4 in cfg.ks else cfg.ks[0]
        plotting.region_power_bars(partition(k).regions, report.region_power(k, min(cfg.alphas)),
                                   out / f"region_power_K{k}.png",
                                   title=f"{cfg.name}, K={k}, alpha={min(cfg.alphas):g}")
    return summary


def _nan_to_none(x):
    return None if x is None or not np.isfinite(x) else float(x)


def cmd_simulate(args) -> int:
    experiments, dataset = _load_sim_config(args.config, args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    summary_rows = []
    for cfg in experiments:
        log.info("simulating %s (%d replicates)", cfg.name, cfg.replicates)
        report = run_experiment(cfg, threads=args.threads)
        _experiment_outputs(report, args.out / cfg.name, not args.no_figures)
        for a in cfg.alphas:
            summary_rows.append({"experiment": cfg.name, "model": cfg.model, "error": cfg.error,
                                 "n_tests": report.n_tests, "alpha": a,
                                 "linear": report.rejection("linear", a),
                                 "unified": report.rejection("unified", a)})
    if summary_rows:
        qio.write_records_tsv(args.out / "summary.tsv",
                              ["experiment", "model", "error", "n_tests", "alpha", "linear", "unified"],
                              summary_rows)
    if dataset is not None:
        cfg, n_genes = dataset
        data = simulate_dataset(cfg, n_genes)
        d = args.out / "dataset"
        qio.write_genotype_tsv(d / "genotypes.tsv", data.train)
        qio.write_expression_tsv(d / "expression.tsv", data.train.iids, data.expression)
        qio.write_gwas_tsv(d / "gwas.tsv", data.gwas)
        truth = [{"gene_id": g, "causal_snps": ",".join(data.train.snp_ids[j] for j in gene.causal)}
                 for g, gene in data.genes.items()]
        qio.write_records_tsv(d / "truth.tsv", ["gene_id", "causal_snps"], truth)
    return EXIT_OK


def cmd_combine(args) -> int:
    print(qio.fmt_float(cauchy_combine(qio.read_pvalues(args.pvalues))))
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "screen": cmd_screen,
    "test": cmd_test,
    "simulate": cmd_simulate,
    "combine": cmd_combine,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"{exc}\n{parser.format_usage().rstrip()}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(format="%(levelname)s %(message)s", stream=sys.stderr)
    log.setLevel(logging.INFO if args.verbose else logging.WARNING)
    try:
        return COMMANDS[args.command](args)
    except QtwasError as exc:
        print(f"qtwas {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"qtwas {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA


def entry() -> None:
    sys.exit(main())
