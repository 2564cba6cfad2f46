"""Report figures.  Rendered with the Agg backend and no timestamp metadata so
identical inputs give byte-identical PNG files."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.dpi": 100,
}
PNG_METADATA = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="png", metadata=PNG_METADATA)
    plt.close(fig)
    return path


def rejection_bars(table: Sequence[Mapping], methods: Sequence[str], path, title: str = "",
                   reference: float | None = None) -> Path:
    """Grouped bars: one group per alpha level, one bar per method."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6.0, 3.2))
        width = 0.8 / max(len(methods), 1)
        x = np.arange(len(table))
        for j, m in enumerate(methods):
            ax.bar(x + j * width, [row[m] for row in table], width, label=m)
        ax.set_xticks(x + 0.4 - width / 2)
        ax.set_xticklabels([f"{row['alpha']:g}" for row in table])
        ax.set_xlabel("significance level")
        ax.set_ylabel("rejection rate")
        if reference is not None:
            ax.axhline(reference, color="0.3", lw=0.8, ls="--")
        ax.set_title(title)
        ax.legend(ncol=3, frameon=False, fontsize=7)
        fig.tight_layout()
        return _save(fig, path)


def qq_plot(pvalues: Mapping[str, np.ndarray], path, title: str = "") -> Path:
    """-log10 observed against expected p-values under the uniform null."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.6, 3.6))
        top = 0.0
        for name, p in pvalues.items():
            p = np.sort(np.asarray(p, dtype=float))
            if p.size == 0:
                continue
            exp = -np.log10((np.arange(1, p.size + 1) - 0.5) / p.size)
            obs = -np.log10(np.clip(p, 1e-300, 1.0))
            ax.plot(exp, obs, ".", ms=2, label=name)
            top = max(top, exp.max(), obs.max())
        ax.plot([0, top], [0, top], color="0.3", lw=0.8)
        ax.set_xlabel("expected -log10 p")
        ax.set_ylabel("observed -log10 p")
        ax.set_title(title)
        ax.legend(frameon=False, fontsize=7)
        fig.tight_layout()
        return _save(fig, path)


def region_power_bars(regions: Sequence[tuple[float, float]], power: Sequence[float], path,
                      title: str = "") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 3.0))
        labels = [f"{lo:g}-{hi:g}" for lo, hi in regions]
        ax.bar(labels, power, color="tab:blue")
        ax.set_ylim(0, 1)
        ax.set_xlabel("quantile region")
        ax.set_ylabel("rejection rate")
        ax.set_title(title)
        fig.tight_layout()
        return _save(fig, path)


def manhattan(gene_ids: Sequence[str], pvalues: Sequence[float], path, alpha: float | None = None,
              title: str = "") -> Path:
    """Per-gene -log10 p in input order; the gene-level analogue of a Manhattan plot."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6.0, 3.0))
        y = -np.log10(np.clip(np.asarray(pvalues, dtype=float), 1e-300, 1.0))
        ax.scatter(np.arange(len(y)), y, s=8)
        if alpha is not None:
            ax.axhline(-np.log10(alpha), color="tab:red", lw=0.8, ls="--")
        if len(gene_ids) <= 30:
            ax.set_xticks(np.arange(len(y)))
            ax.set_xticklabels(gene_ids, rotation=90, fontsize=6)
        ax.set_xlabel("gene")
        ax.set_ylabel("-log10 p")
        ax.set_title(title)
        fig.tight_layout()
        return _save(fig, path)
