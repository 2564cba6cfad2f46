import numpy as np
import pytest
from hypothesis import given, strategies as st

from qtwas.expression import estimate_ld, integrate_beta, sigma_region, train_gene, train_gene_partitions
from qtwas.quantreg import QrFit, QuantileProcessFit, fit_process
from qtwas.simulation import SimConfig, draw_gene, gen_expression, gen_genotypes
from qtwas.types import GenotypePanel, QtwasError, QuantileGrid, partition, rng_from_seed


def _process(curves, taus=None):
    """Synthetic process whose SNP coefficients are given functions of tau."""
    grid = QuantileGrid() if taus is None else QuantileGrid(tuple(taus))
    fits = tuple(
        QrFit(t, np.array([0.0, *[f(t) for f in curves]]), 0, 0.0) for t in grid.taus
    )
    return QuantileProcessFit(grid, fits)


class TestIntegrateBeta:
    def test_constant(self):
        assert integrate_beta(_process([lambda t: 2.5]), (0.25, 0.55))[0] == pytest.approx(0.75, abs=1e-12)

    def test_linear(self):
        got = integrate_beta(_process([lambda t: t]), (0.01, 0.99))[0]
        assert got == pytest.approx((0.99**2 - 0.01**2) / 2, abs=1e-6)

    def test_sin(self):
        got = integrate_beta(_process([lambda t: np.sin(2 * np.pi * t)]), (0.05, 0.95))[0]
        exact = -(np.cos(1.9 * np.pi) - np.cos(0.1 * np.pi)) / (2 * np.pi)
        assert got == pytest.approx(exact, abs=1e-3)

    def test_several_snps(self):
        got = integrate_beta(_process([lambda t: 1.0, lambda t: t]), (0.2, 0.4))
        assert got == pytest.approx([0.2, (0.16 - 0.04) / 2], abs=1e-12)

    def test_interpolated_endpoints(self):
        # linear integrand on a coarse grid: interpolation keeps it exact
        proc = _process([lambda t: 3 * t - 1], taus=np.arange(1, 10) / 10)
        got = integrate_beta(proc, (0.15, 0.63))[0]
        exact = 1.5 * (0.63**2 - 0.15**2) - (0.63 - 0.15)
        assert got == pytest.approx(exact, abs=1e-12)

    @given(st.integers(5, 40), st.integers(45, 60), st.integers(65, 95))
    def test_additive(self, a, b, c):
        proc = _process([lambda t: np.sin(7 * t), lambda t: t**3])
        a, b, c = a / 100, b / 100, c / 100
        whole = integrate_beta(proc, (a, c))
        parts = integrate_beta(proc, (a, b)) + integrate_beta(proc, (b, c))
        assert np.max(np.abs(whole - parts)) <= 1e-10

    def test_narrow_region(self):
        with pytest.raises(QtwasError, match="narrower"):
            integrate_beta(_process([lambda t: 1.0], taus=np.arange(1, 10) / 10), (0.42, 0.45))

    def test_outside_grid(self):
        with pytest.raises(QtwasError, match="beyond"):
            integrate_beta(_process([lambda t: 1.0], taus=np.arange(1, 10) / 10), (0.05, 0.5))


class TestSigma:
    def test_degenerate(self):
        Z = np.array([[0.0], [1.0], [2.0]])
        with pytest.raises(QtwasError, match="degenerate"):
            sigma_region(Z, _process([lambda t: 0.0]), (0.25, 0.55))

    def test_single_snp_identity(self):
        z = np.array([0, 1, 2, 2, 1, 0, 1], float)
        assert sigma_region(z, _process([lambda t: 1.0]), (0.25, 0.55)) == pytest.approx(np.std(z), rel=1e-12)

    def test_two_snp_hand(self):
        Z = np.array([[0, 1], [1, 1], [2, 0], [1, 2]], float)
        taus = (0.2, 0.3, 0.4, 0.5)
        proc = _process([lambda t: t, lambda t: 1 - 2 * t], taus=taus)
        pooled = []
        for t in (0.3, 0.4):
            for i in range(4):
                pooled.append(Z[i, 0] * t + Z[i, 1] * (1 - 2 * t))
        m = sum(pooled) / len(pooled)
        hand = (sum((v - m) ** 2 for v in pooled) / len(pooled)) ** 0.5
        assert sigma_region(Z, proc, (0.3, 0.4)) == pytest.approx(hand, abs=1e-10)

    def test_integrated_method(self):
        z = np.array([0, 1, 2, 1], float)
        proc = _process([lambda t: 2 * t])
        got = sigma_region(z, proc, (0.2, 0.6), method="integrated")
        assert got == pytest.approx(np.std(z) * 0.8, rel=1e-10)

    def test_unknown_method(self):
        with pytest.raises(QtwasError):
            sigma_region(np.ones(3), _process([lambda t: 1.0]), (0.2, 0.6), method="other")


def _markov_haplotypes(rng, n, p, rho):
    # symmetric binary chain: corr(h_j, h_k) = rho^|j-k| with maf 0.5
    h = np.empty((n, p), dtype=int)
    h[:, 0] = rng.integers(0, 2, n)
    for j in range(1, p):
        flip = rng.uniform(size=n) < (1 - rho) / 2
        h[:, j] = np.where(flip, 1 - h[:, j - 1], h[:, j - 1])
    return h


class TestLd:
    def test_single(self):
        panel = GenotypePanel.from_dosages([[0], [1], [2]], snp_ids=["a"])
        assert np.array_equal(estimate_ld(panel, ["a"]), [[1.0]])

    def test_duplicated(self):
        col = [0, 1, 2, 1, 0]
        panel = GenotypePanel.from_dosages(np.column_stack([col, col]), snp_ids=["a", "b"])
        assert estimate_ld(panel, ["a", "b"]) == pytest.approx(np.array([[1, 0.99], [0.99, 1]]), abs=1e-12)

    def test_ar_block(self):
        rng = np.random.default_rng(7)
        n, p = 5000, 6
        G = _markov_haplotypes(rng, n, p, 0.7) + _markov_haplotypes(rng, n, p, 0.7)
        panel = GenotypePanel.from_dosages(G)
        D = estimate_ld(panel, panel.snp_ids)
        target = 0.7 ** np.abs(np.subtract.outer(np.arange(p), np.arange(p)))
        assert np.max(np.abs(D - target)) < 0.05
        assert np.min(np.linalg.eigvalsh(D)) > 0

    def test_constant(self):
        panel = GenotypePanel.from_dosages([[0, 1], [1, 1], [2, 1]], snp_ids=["a", "k"])
        with pytest.raises(QtwasError, match="k"):
            estimate_ld(panel, ["a", "k"])


def _gene(model, seed, n=400, **kw):
    cfg = SimConfig(model=model, n_train=n, p_snps=100, seed=seed, **kw)
    rng = rng_from_seed(seed, "expr-test")
    gene = draw_gene(cfg, rng)
    panel = gen_genotypes(cfg, rng, gene)
    return panel, gen_expression(panel, cfg, gene, rng), gene


class TestTrainGene:
    def test_location_shift_flat(self):
        panel, y, gene = _gene("location_shift", 11, beta_expr=1.5)
        causal = panel.snp_ids[gene.causal[0]]
        model = train_gene(panel, y, partition(3), "g")
        assert all(model.valid_regions)
        per_width = []
        for k, (lo, hi) in enumerate(model.partition.regions):
            j = model.selected_snps[k].index(causal)
            per_width.append(model.beta_region[k][j] / (hi - lo))
        assert np.allclose(per_width, 1.5, atol=0.3)
        assert np.ptp(per_width) < 0.3

    def test_local_signal_top_region(self):
        panel, y, _ = _gene("local_signal", 12, beta_expr=1.0)
        model = train_gene(panel, y, partition(4), "g")
        norms = [np.linalg.norm(b) for b in model.beta_region]
        assert model.valid_regions[3]
        assert norms[3] > 3 * max(norms[:2])

    def test_null_mostly_invalid(self):
        invalid = total = 0
        for seed in range(30):
            panel, y, _ = _gene("null", 300 + seed, beta_expr=0.0)
            model = train_gene(panel, y, partition(4), "g")
            invalid += sum(not v for v in model.valid_regions)
            total += 4
        assert invalid / total > 0.8

    def test_all_invalid_untestable(self):
        # seed picked so no region survives screening
        panel, y, _ = _gene("null", 14, beta_expr=0.0)
        model = train_gene(panel, y, partition(3), "g")
        assert not any(model.valid_regions)
        assert model.untestable and model.snp_ids == () and model.ld.shape == (0, 0)
        assert model.sigma_region == (None, None, None)

    def test_rq_range_and_ld(self):
        panel, y, _ = _gene("location_scale", 14, beta_expr=1.0)
        for model in train_gene_partitions(panel, y, gene_id="g").values():
            for rq in model.rq_region:
                assert rq is None or 0.0 <= rq <= 1.0
            assert np.allclose(model.ld, model.ld.T)
            assert np.all(np.diag(model.ld) == 1.0)

    def test_partitions_share_screening(self):
        panel, y, _ = _gene("location_shift", 15, beta_expr=1.0)
        shared = train_gene_partitions(panel, y, ks=(4,), gene_id="g")[4]
        alone = train_gene(panel, y, 4, "g")
        assert shared.selected_snps == alone.selected_snps
        for a, b in zip(shared.beta_region, alone.beta_region):
            assert np.array_equal(a, b)


class TestRecoding:
    def test_double_dosage(self):
        rng = np.random.default_rng(3)
        n = 300
        Z = rng.binomial(2, 0.3, size=(n, 2)).astype(float)
        y = Z @ [0.8, -0.4] + rng.standard_normal(n)
        grid = QuantileGrid(tuple(np.round(np.arange(20, 61) / 100, 2)))
        X1 = np.column_stack([np.ones(n), Z])
        X2 = np.column_stack([np.ones(n), 2 * Z])
        p1, p2 = fit_process(y, X1, grid), fit_process(y, X2, grid)
        b1 = integrate_beta(p1, (0.25, 0.55))
        b2 = integrate_beta(p2, (0.25, 0.55))
        assert b2 == pytest.approx(b1 / 2, abs=1e-8)
        assert np.allclose(Z @ b1, (2 * Z) @ b2, atol=1e-8)
        s1 = sigma_region(Z, p1, (0.25, 0.55))
        s2 = sigma_region(2 * Z, p2, (0.25, 0.55))
        assert s1 == pytest.approx(s2, rel=1e-8)
