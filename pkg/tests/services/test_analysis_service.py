"""Tests for AnalysisService."""
import numpy as np
import pytest

from src.core.errors import CapacityError, ContractError, UndefinedMetricError
from src.schemas.analysis import EdgePolicy, HomophilyConfig
from src.schemas.interactions import InteractionMatrix
from src.schemas.models import SolverConfig
from src.schemas.normalization import NormKind, NormRecipe
from src.services.analysis_service import AnalysisService
from src.services.model_service import ModelService


class TestGini:
    """Test the item Gini index."""

    def test_uniform_is_zero(self):
        """Test equal degrees give zero."""
        X = InteractionMatrix.from_dense(np.eye(4))
        assert AnalysisService.gini_item(X) == 0.0

    def test_two_items(self):
        """Test degrees 1 and 3: sum |di - dj| / (2 n sum d) = 4 / 16."""
        X = InteractionMatrix.from_dense(np.array([[1, 1], [0, 1], [0, 1]]))
        assert AnalysisService.gini_item(X) == pytest.approx(0.25)

    def test_skewed_higher(self, skewed_matrix, random_matrix):
        """Test a power-law catalogue is more unequal than a uniform one."""
        assert AnalysisService.gini_item(skewed_matrix) > AnalysisService.gini_item(random_matrix)


class TestHomophily:
    """Test the weighted homophily ratio."""

    def test_identical_items(self):
        """Test items with the same users have ratio 1."""
        X = InteractionMatrix.from_dense(np.ones((2, 2)))
        assert AnalysisService.homophily_weighted(X) == pytest.approx(1.0)

    def test_range(self, skewed_matrix):
        """Test the ratio lies in [0, 1]."""
        value = AnalysisService.homophily_weighted(skewed_matrix, HomophilyConfig(delta=1.5))
        assert 0.0 < value <= 1.0

    def test_undefined_without_pairs(self):
        """Test a catalogue without co-engagement has no ratio."""
        with pytest.raises(UndefinedMetricError):
            AnalysisService.homophily_weighted(InteractionMatrix.from_dense(np.eye(3)))

    def test_sampled_is_seeded(self, skewed_matrix):
        """Test the sampled policy depends only on the seed."""
        cfg = HomophilyConfig(edge_policy=EdgePolicy.SAMPLED, sample_count=200, seed=4)
        first = AnalysisService.homophily_weighted(skewed_matrix, cfg)
        assert AnalysisService.homophily_weighted(skewed_matrix, cfg) == first
        assert 0.0 < first <= 1.0


class TestDatasetStats:
    """Test dataset statistics."""

    def test_stats(self, tiny_matrix):
        """Test sizes and density."""
        stats = AnalysisService.dataset_stats(tiny_matrix)
        assert (stats.m, stats.n, stats.nnz) == (4, 5, 12)
        assert stats.density == pytest.approx(0.6)
        assert stats.homophily_w is not None

    def test_undefined_homophily_is_a_warning(self, caplog):
        """Test an undefined ratio leaves the field empty."""
        stats = AnalysisService.dataset_stats(InteractionMatrix.from_dense(np.eye(3)))
        assert stats.homophily_w is None
        assert "undefined" in caplog.text


class TestSpectra:
    """Test spectral diagnostics."""

    def test_gram_spectrum_needs_symmetry(self, random_matrix):
        """Test asymmetric recipes are rejected."""
        with pytest.raises(ContractError):
            AnalysisService.gram_spectrum(random_matrix, NormRecipe(kind=NormKind.RW))

    def test_sym_gram_top_eigenvalue(self, random_matrix):
        """Test the symmetric normalized gram has leading eigenvalue 1."""
        report = AnalysisService.gram_spectrum(random_matrix, NormRecipe(kind=NormKind.SYM))
        assert report.eigenvalues[0] == pytest.approx(1.0)
        assert report.size == random_matrix.cols

    def test_weight_spectrum_needs_symmetry(self, random_matrix):
        """Test asymmetric weight matrices are rejected."""
        model = ModelService.fit(random_matrix, SolverConfig.from_spec("lae/rw/lambda=1"))
        with pytest.raises(ContractError):
            AnalysisService.weight_spectrum(model)

    @pytest.mark.parametrize("spec", ["ease/none/lambda=10", "ease/sym/lambda=0.5", "dlae/none/p=0.5"])
    def test_weight_spectrum_of_asymmetric_weights(self, random_matrix, spec):
        """Test EASE and DLAE report the eigenvalues of B itself, not of its symmetric part."""
        model = ModelService.fit(random_matrix, SolverConfig.from_spec(spec))
        B = model.weights
        expected = np.sort(np.linalg.eigvals(B).real)[::-1]
        report = AnalysisService.weight_spectrum(model)
        np.testing.assert_allclose(report.eigenvalues, expected, atol=1e-8)
        symmetric_part = np.sort(np.linalg.eigvalsh(0.5 * (B + B.T)))[::-1]
        assert not np.allclose(report.eigenvalues, symmetric_part, atol=1e-6)

    def test_spectrum_vs_beta(self, random_matrix):
        """Test one report per beta within (0, 1)."""
        reports = AnalysisService.spectrum_vs_beta(random_matrix, [0.0, 1.0], lam=1.0)
        assert len(reports) == 2
        assert all(r.eigenvalues.max() < 1.0 and r.eigenvalues.min() > -1e-12 for r in reports)
        assert "beta=1" in reports[1].source

    def test_spectrum_vs_beta_checks(self, random_matrix):
        """Test the eigensolver cap and lambda."""
        with pytest.raises(CapacityError):
            AnalysisService.spectrum_vs_beta(random_matrix, [0.5], lam=1.0, cap=10)
        with pytest.raises(ContractError):
            AnalysisService.spectrum_vs_beta(random_matrix, [0.5], lam=0.0)


class TestWeightDistribution:
    """Test head/tail weight summaries."""

    def test_groups_cover_items(self, skewed_matrix):
        """Test head and tail partition the items and histograms count them all."""
        model = ModelService.fit(skewed_matrix, SolverConfig.from_spec("lae/none/lambda=100"))
        dist = AnalysisService.weight_distribution(model, head_fraction=0.2, bins=10)
        assert dist.head.items == 12
        assert dist.head.items + dist.tail.items == 60
        assert sum(dist.head.histogram) == 12
        assert sum(dist.tail.histogram) == 48
        assert len(dist.bin_edges) == 11
        assert dist.gap == pytest.approx(abs(dist.head.mean - dist.tail.mean))

    def test_raw_model_favors_head(self, skewed_matrix):
        """Test an unnormalized model puts more weight on popular items."""
        model = ModelService.fit(skewed_matrix, SolverConfig.from_spec("lae/none/lambda=100"))
        dist = AnalysisService.weight_distribution(model)
        assert dist.head.mean > dist.tail.mean
