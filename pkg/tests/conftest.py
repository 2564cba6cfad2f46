import itertools
import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from qtwas.types import GenotypePanel

settings.register_profile(
    "default",
    max_examples=60,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def lp_vertex_objectives(y, X, taus):
    """Minimum check loss over every basic solution, for each tau.

    A linear quantile regression always has an optimal solution interpolating
    d observations, so the minimum over all nonsingular d-subsets is the
    global optimum of the LP.
    """
    n, d = X.shape
    best = np.full(len(taus), np.inf)
    subsets = np.array(list(itertools.combinations(range(n), d)))
    for chunk in np.array_split(subsets, max(1, len(subsets) // 20000)):
        Xh = X[chunk]
        yh = y[chunk]
        ok = np.abs(np.linalg.det(Xh)) > 1e-10
        if not np.any(ok):
            continue
        coef = np.linalg.solve(Xh[ok], yh[ok][..., None])[..., 0]
        resid = y[None, :] - coef @ X.T
        pos = np.maximum(resid, 0.0).sum(axis=1)
        neg = np.maximum(-resid, 0.0).sum(axis=1)
        for t, tau in enumerate(taus):
            best[t] = min(best[t], float(np.min(tau * pos + (1 - tau) * neg)))
    return best


def random_qr_instance(rng, n_max=50, d_max=4):
    n = int(rng.integers(8, n_max + 1))
    d = int(rng.integers(1, d_max + 1))
    X = np.column_stack([np.ones(n), rng.standard_normal((n, d - 1))])
    y = X @ rng.normal(size=d) + rng.standard_t(3, size=n)
    return y, X


def block_panel(rng, n=400, blocks=((0.3, 3), (0.2, 4), (0.4, 3)), flip=0.01):
    """Panel whose SNPs come in near-duplicate blocks.

    Each block copies one base SNP and flips a small share of dosages, so
    within-block |cor| is close to 1 and across-block |cor| is near 0.
    """
    cols, ids = [], []
    for b, (maf, size) in enumerate(blocks):
        base = rng.binomial(2, maf, size=n)
        for j in range(size):
            col = base.copy()
            if j:
                idx = rng.choice(n, size=int(flip * n), replace=False)
                col[idx] = rng.binomial(2, maf, size=idx.size)
            cols.append(col)
            ids.append(f"b{b}s{j}")
    return GenotypePanel.from_dosages(np.column_stack(cols), snp_ids=ids)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def record():
    """Store the one-line verdict for an acceptance criterion."""

    def _record(number: int, ok: bool, detail: str) -> bool:
        ACCEPTANCE_LINES[number] = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(ACCEPTANCE_LINES[number])
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
