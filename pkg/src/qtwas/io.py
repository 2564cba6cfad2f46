"""Readers and writers for genotype, expression, GWAS, model and report files.

Every parser is strict: a malformed cell raises :class:`QtwasError` naming the
file, line and column rather than being coerced.
"""

from __future__ import annotations

import json
import math
import sys
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .baseline import LinearGeneModel
from .types import GeneModel, GenotypePanel, GwasSummary, QtwasError, RegionPartition

MODEL_SCHEMA = "qtwas_model_v1"
LINEAR_SCHEMA = "qtwas_linear_v1"
GWAS_COLUMNS = ("snp_id", "beta", "se", "n")


def fmt_float(x) -> str:
    """17 significant digits, enough to round-trip any double."""
    if x is None:
        return "NA"
    x = float(x)
    if math.isnan(x):
        return "NA"
    return format(x, ".17g")


def _read_rows(path) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise QtwasError(f"{path}: file not found") from None
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise QtwasError(f"{path}: empty file or missing header")
    header = lines[0].split("\t")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            raise QtwasError(f"{path}: line {lineno}: blank line")
        cells = line.split("\t")
        if len(cells) != len(header):
            raise QtwasError(
                f"{path}: line {lineno}: {len(cells)} fields, header has {len(header)}"
            )
        rows.append(cells)
    return header, rows


def _parse_float(path, lineno, col, cell) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise QtwasError(f"{path}: line {lineno}, column {col}: not a number: {cell!r}") from None
    if not math.isfinite(value):
        raise QtwasError(f"{path}: line {lineno}, column {col}: non-finite value {cell!r}")
    return value


def _check_unique(path, what, names):
    seen = set()
    for j, name in enumerate(names, start=1):
        if name in seen:
            raise QtwasError(f"{path}: duplicate {what} {name!r} (column/line {j})")
        seen.add(name)


def _write_table(path, header: Sequence[str], rows: Iterable[Sequence[str]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["\t".join(header)] + ["\t".join(r) for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def covariate_path(path) -> Path:
    return Path(f"{path}.cov.tsv")


def read_genotype_tsv(path) -> GenotypePanel:
    """Dosage table ``iid<TAB>snp...`` plus the optional ``<path>.cov.tsv`` sidecar."""
    header, rows = _read_rows(path)
    if header[0] != "iid":
        raise QtwasError(f"{path}: line 1, column 1: expected 'iid', found {header[0]!r}")
    snp_ids = header[1:]
    if not snp_ids:
        raise QtwasError(f"{path}: no SNP columns")
    _check_unique(path, "SNP id", snp_ids)
    if not rows:
        raise QtwasError(f"{path}: no individuals")
    dos = np.empty((len(rows), len(snp_ids)), dtype=np.int8)
    iids = []
    codes = {"0": 0, "1": 1, "2": 2}
    for i, cells in enumerate(rows):
        iids.append(cells[0])
        for j, cell in enumerate(cells[1:]):
            if cell not in codes:
                raise QtwasError(
                    f"{path}: line {i + 2}, column {j + 2} (SNP {snp_ids[j]}): "
                    f"dosage {cell!r} is not 0, 1 or 2"
                )
            dos[i, j] = codes[cell]
    _check_unique(path, "individual id", iids)

    cov = None
    cpath = covariate_path(path)
    if cpath.exists():
        cheader, crows = _read_rows(cpath)
        if cheader[0] != "iid":
            raise QtwasError(f"{cpath}: line 1, column 1: expected 'iid'")
        if [r[0] for r in crows] != iids:
            raise QtwasError(f"{cpath}: individual ids differ from {path}")
        cov = np.array(
            [[_parse_float(cpath, i + 2, j + 2, c) for j, c in enumerate(r[1:])]
             for i, r in enumerate(crows)],
            dtype=float,
        ).reshape(len(iids), len(cheader) - 1)
    try:
        return GenotypePanel.from_dosages(dos, cov, snp_ids=snp_ids, iids=iids)
    except QtwasError as exc:
        raise QtwasError(f"{path}: {exc}") from None


def write_genotype_tsv(path, panel: GenotypePanel) -> None:
    _write_table(
        path,
        ["iid", *panel.snp_ids],
        ([iid, *map(str, row)] for iid, row in zip(panel.iids, panel.dosages.tolist())),
    )
    cpath = covariate_path(path)
    q = panel.covariates.shape[1]
    if q:
        _write_table(
            cpath,
            ["iid", *[f"cov{j + 1}" for j in range(q)]],
            ([iid, *map(fmt_float, row)] for iid, row in zip(panel.iids, panel.covariates)),
        )
    elif cpath.exists():
        cpath.unlink()


def read_expression_tsv(path, iids: Sequence[str] | None = None) -> dict[str, np.ndarray]:
    """Expression table ``iid<TAB>gene...``; rows reordered to ``iids`` if given."""
    header, rows = _read_rows(path)
    if header[0] != "iid":
        raise QtwasError(f"{path}: line 1, column 1: expected 'iid', found {header[0]!r}")
    genes = header[1:]
    if not genes:
        raise QtwasError(f"{path}: no gene columns")
    _check_unique(path, "gene id", genes)
    row_ids = [r[0] for r in rows]
    _check_unique(path, "individual id", row_ids)
    values = np.array(
        [[_parse_float(path, i + 2, j + 2, c) for j, c in enumerate(r[1:])]
         for i, r in enumerate(rows)],
        dtype=float,
    ).reshape(len(rows), len(genes))
    if iids is not None:
        where = {iid: i for i, iid in enumerate(row_ids)}
        missing = [i for i in iids if i not in where]
        if missing or len(row_ids) != len(iids):
            raise QtwasError(
                f"{path}: individuals do not match the genotype file"
                + (f" (missing {missing[0]})" if missing else "")
            )
        values = values[[where[i] for i in iids]]
    return {g: values[:, j].copy() for j, g in enumerate(genes)}


def write_expression_tsv(path, iids: Sequence[str], expression: Mapping[str, np.ndarray]) -> None:
    genes = list(expression)
    cols = [np.asarray(expression[g], dtype=float) for g in genes]
    _write_table(
        path,
        ["iid", *genes],
        ([iid, *(fmt_float(c[i]) for c in cols)] for i, iid in enumerate(iids)),
    )


def read_gwas_tsv(path) -> GwasSummary:
    header, rows = _read_rows(path)
    if tuple(header) != GWAS_COLUMNS:
        raise QtwasError(f"{path}: header must be {' '.join(GWAS_COLUMNS)} (tab separated)")
    if not rows:
        raise QtwasError(f"{path}: no SNP rows")
    ids, beta, se, ns = [], [], [], set()
    for i, (sid, b, s, n) in enumerate(rows, start=2):
        ids.append(sid)
        beta.append(_parse_float(path, i, 2, b))
        se_val = _parse_float(path, i, 3, s)
        if se_val <= 0:
            raise QtwasError(f"{path}: line {i}, column 3: standard error must be positive")
        se.append(se_val)
        try:
            ns.add(int(n))
        except ValueError:
            raise QtwasError(f"{path}: line {i}, column 4: not an integer: {n!r}") from None
    _check_unique(path, "SNP id", ids)
    try:
        return GwasSummary(tuple(ids), np.array(beta), np.array(se), max(ns))
    except QtwasError as exc:
        raise QtwasError(f"{path}: {exc}") from None


def write_gwas_tsv(path, gwas: GwasSummary) -> None:
    _write_table(
        path,
        GWAS_COLUMNS,
        ([i, fmt_float(b), fmt_float(s), str(gwas.n_gwas)]
         for i, b, s in zip(gwas.ids, gwas.beta, gwas.se)),
    )


def gene_model_to_dict(model: GeneModel) -> dict:
    return {
        "schema": MODEL_SCHEMA,
        "gene_id": model.gene_id,
        "partition": model.partition.to_dict(),
        "snp_ids": list(model.snp_ids),
        "snp_sd": [float(x) for x in model.snp_sd],
        "ld": [[float(x) for x in row] for row in model.ld],
        "regions": [
            {
                "range": list(region),
                "selected_snps": list(ids),
                "beta": [float(b) for b in beta],
                "sigma": None if sigma is None else float(sigma),
                "rq": None if rq is None else float(rq),
            }
            for region, ids, beta, sigma, rq in zip(
                model.partition.regions,
                model.selected_snps,
                model.beta_region,
                model.sigma_region,
                model.rq_region,
            )
        ],
    }


def gene_model_from_dict(d: Mapping, source: str = "model") -> GeneModel:
    schema = d.get("schema") if isinstance(d, Mapping) else None
    if schema != MODEL_SCHEMA:
        raise QtwasError(f"{source}: unsupported model schema {schema!r}; expected {MODEL_SCHEMA}")
    try:
        part = RegionPartition.from_dict(d["partition"])
        regions = d["regions"]
        if [tuple(r["range"]) for r in regions] != list(part.regions):
            raise QtwasError("region ranges disagree with the partition")
        return GeneModel(
            gene_id=str(d["gene_id"]),
            partition=part,
            selected_snps=tuple(tuple(r["selected_snps"]) for r in regions),
            beta_region=tuple(np.array(r["beta"], dtype=float) for r in regions),
            sigma_region=tuple(r["sigma"] for r in regions),
            rq_region=tuple(r["rq"] for r in regions),
            snp_ids=tuple(d["snp_ids"]),
            snp_sd=np.array(d["snp_sd"], dtype=float),
            ld=np.array(d["ld"], dtype=float).reshape(len(d["snp_ids"]), len(d["snp_ids"])),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise QtwasError(f"{source}: malformed model: {exc}") from None


def dumps_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n"


def write_gene_model(path, model: GeneModel) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_json(gene_model_to_dict(model)), encoding="utf-8")


def read_gene_model(path) -> GeneModel:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise QtwasError(f"{path}: file not found") from None
    except json.JSONDecodeError as exc:
        raise QtwasError(f"{path}: line {exc.lineno}, column {exc.colno}: invalid JSON") from None
    return gene_model_from_dict(d, str(path))


def write_linear_model(path, model: LinearGeneModel) -> None:
    d = {
        "schema": LINEAR_SCHEMA,
        "gene_id": model.gene_id,
        "snp_ids": list(model.snp_ids),
        "weights": [float(w) for w in model.weights],
        "snp_sd": [float(x) for x in model.snp_sd],
        "ld": [[float(x) for x in row] for row in model.ld],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_json(d), encoding="utf-8")


def read_linear_model(path) -> LinearGeneModel:
    try:
        d = json.loads(_read_text(path))
    except json.JSONDecodeError as exc:
        raise QtwasError(f"{path}: line {exc.lineno}, column {exc.colno}: invalid JSON") from None
    if not isinstance(d, dict) or d.get("schema") != LINEAR_SCHEMA:
        raise QtwasError(f"{path}: unsupported linear model schema; expected {LINEAR_SCHEMA}")
    try:
        m = len(d["snp_ids"])
        model = LinearGeneModel(
            str(d["gene_id"]),
            tuple(d["snp_ids"]),
            np.array(d["weights"], dtype=float).reshape(m),
            np.array(d["snp_sd"], dtype=float).reshape(m),
            np.array(d["ld"], dtype=float).reshape(m, m),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise QtwasError(f"{path}: malformed linear model: {exc}") from None
    if m and not np.allclose(model.ld, model.ld.T, atol=1e-12, rtol=0):
        raise QtwasError(f"{path}: LD matrix is not symmetric")
    return model


def linear_filename(gene_id: str) -> str:
    return f"{gene_id}.linear.json"


def model_filename(gene_id: str, k: int) -> str:
    return f"{gene_id}.K{k}.json"


def read_model_dir(directory) -> dict[str, dict[int, GeneModel]]:
    """All ``*.K<k>.json`` models in ``directory`` grouped by gene."""
    directory = Path(directory)
    if not directory.is_dir():
        raise QtwasError(f"{directory}: not a directory")
    out: dict[str, dict[int, GeneModel]] = {}
    for path in sorted(directory.glob("*.K*.json")):
        model = read_gene_model(path)
        if model.partition.k in out.get(model.gene_id, {}):
            raise QtwasError(f"{path}: second K={model.partition.k} model for {model.gene_id}")
        out.setdefault(model.gene_id, {})[model.partition.k] = model
    if not out:
        raise QtwasError(f"{directory}: no model files (*.K<k>.json)")
    return out


def read_pvalues(path) -> list[float]:
    """Whitespace- or newline-separated p-values; ``-`` reads stdin."""
    text = sys.stdin.read() if str(path) == "-" else _read_text(path)
    values = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        for col, tok in enumerate(line.replace(",", " ").split(), start=1):
            try:
                p = float(tok)
            except ValueError:
                raise QtwasError(f"{path}: line {lineno}, field {col}: not a number: {tok!r}") from None
            if not (0.0 <= p <= 1.0):
                raise QtwasError(f"{path}: line {lineno}, field {col}: p-value {tok} outside [0, 1]")
            values.append(p)
    if not values:
        raise QtwasError(f"{path}: no p-values")
    return values


def _read_text(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise QtwasError(f"{path}: file not found") from None


def write_records_tsv(path, columns: Sequence[str], records: Iterable[Mapping]) -> None:
    """Write dict records; floats get 17 significant digits, None/NaN become NA."""

    def cell(v):
        if isinstance(v, (bool, np.bool_)):
            return str(int(v))
        if isinstance(v, (int, np.integer)):
            return str(int(v))
        if isinstance(v, (float, np.floating)) or v is None:
            return fmt_float(v)
        return str(v)

    _write_table(path, columns, ([cell(r.get(c)) for c in columns] for r in records))
