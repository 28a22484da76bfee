"""Tests for NormalizationService."""
import numpy as np
import pytest

from src.core.errors import ContractError
from src.schemas.interactions import InteractionMatrix
from src.schemas.models import ModelKind
from src.schemas.normalization import NormKind, NormRecipe
from src.services.normalization_service import (
    ALPHA_GRID,
    DROPOUT_GRID,
    NORMALIZED_LAMBDA_GRID,
    RAW_LAMBDA_GRID,
    NormalizationService,
    grid_from_range,
)
from tests.utils.factories import random_interactions


def _instance(seed: int) -> InteractionMatrix:
    rng = np.random.default_rng(1000 + seed)
    m, n = int(rng.integers(20, 200)), int(rng.integers(5, 100))
    return random_interactions(m, n, density=float(rng.uniform(0.05, 0.4)), seed=seed)


class TestDegreePower:
    """Test degree powers."""

    def test_power(self):
        """Test d ** -e."""
        np.testing.assert_allclose(NormalizationService.degree_power(np.array([1, 4, 9]), 0.5), [1.0, 0.5, 1 / 3])

    def test_zero_exponent(self):
        """Test a zero exponent gives ones."""
        assert NormalizationService.degree_power(np.array([3, 7]), 0.0).tolist() == [1.0, 1.0]

    def test_zero_degree(self):
        """Test zero degrees fail unless isolated nodes are allowed."""
        with pytest.raises(ContractError, match="zero degrees"):
            NormalizationService.degree_power(np.array([2, 0]), 1.0)
        np.testing.assert_allclose(
            NormalizationService.degree_power(np.array([2, 0]), 1.0, allow_isolated=True), [0.5, 1.0]
        )


class TestBuildGram:
    """Test normalized grams."""

    @pytest.mark.parametrize("seed", range(50))
    def test_dan_endpoints_match_random_walk_and_symmetric(self, seed):
        """Test DAN(0, 1) and DAN(0.5, 1) equal the random-walk and symmetric grams."""
        X = _instance(seed)
        rw = NormalizationService.rw_gram(X)
        sym = NormalizationService.sym_gram(X)
        dan_rw = NormalizationService.build_gram(X, NormRecipe(kind=NormKind.DAN, alpha=0.0, beta=1.0))
        dan_sym = NormalizationService.build_gram(X, NormRecipe(kind=NormKind.DAN, alpha=0.5, beta=1.0))
        np.testing.assert_allclose(dan_rw.matrix, rw, rtol=0, atol=1e-12)
        np.testing.assert_allclose(dan_sym.matrix, sym, rtol=0, atol=1e-12)

    @pytest.mark.parametrize("seed", range(50))
    def test_rw_and_sym_recipes(self, seed):
        """Test RW and Sym recipes match their closed forms."""
        X = _instance(seed)
        rw = NormalizationService.build_gram(X, NormRecipe(kind=NormKind.RW))
        sym = NormalizationService.build_gram(X, NormRecipe(kind=NormKind.SYM))
        np.testing.assert_allclose(rw.matrix, NormalizationService.rw_gram(X), rtol=0, atol=1e-12)
        np.testing.assert_allclose(sym.matrix, NormalizationService.sym_gram(X), rtol=0, atol=1e-12)

    def test_dan_two_by_two(self):
        """Test DAN(0.5, 1) on X = [[1, 1], [0, 1]] gives 0.5, 1 / (2 sqrt 2) and 0.75."""
        X = InteractionMatrix.from_dense(np.array([[1, 1], [0, 1]]))
        gram = NormalizationService.build_gram(X, NormRecipe(kind=NormKind.DAN, alpha=0.5, beta=1.0))
        off = 0.5 / np.sqrt(2.0)
        np.testing.assert_allclose(gram.matrix, [[0.5, off], [off, 0.75]], rtol=0, atol=1e-12)
        assert gram.matrix[0, 1] == pytest.approx(0.35355, abs=1e-5)

    @pytest.mark.parametrize("alpha", [0.0, 0.2, 0.5, 0.9])
    @pytest.mark.parametrize("beta", [0.0, 0.5, 1.0])
    def test_dan_diagonal(self, random_matrix, alpha, beta):
        """Test the DAN diagonal is (sum_u X_ui d_u^-beta) / d_i for every alpha."""
        dense = random_matrix.toarray().astype(float)
        user_w = random_matrix.user_degrees.astype(float) ** -beta
        expected = (user_w @ dense) / random_matrix.item_degrees
        recipe = NormRecipe(kind=NormKind.DAN, alpha=alpha, beta=beta, allow_wide=True)
        gram = NormalizationService.build_gram(random_matrix, recipe)
        np.testing.assert_allclose(np.diag(gram.matrix), expected, rtol=1e-12)

    @pytest.mark.parametrize("alpha", [0.0, 0.2, 0.35])
    def test_transpose_swaps_item_exponents(self, random_matrix, alpha):
        """Test the DAN gram at alpha transposes to the gram at 1 - alpha and is not symmetric."""
        first = NormalizationService.build_gram(random_matrix, NormRecipe(kind=NormKind.DAN, alpha=alpha, beta=0.5))
        mirror = NormalizationService.build_gram(
            random_matrix, NormRecipe(kind=NormKind.DAN, alpha=1.0 - alpha, beta=0.5, allow_wide=True)
        )
        np.testing.assert_allclose(first.matrix.T, mirror.matrix, rtol=0, atol=1e-12)
        assert not np.allclose(first.matrix, first.matrix.T, rtol=0, atol=1e-12)
        assert not first.recipe.is_symmetric

    @pytest.mark.parametrize("beta", [0.0, 0.5, 1.0])
    def test_symmetric_at_half(self, random_matrix, beta):
        """Test alpha = 0.5 gives a symmetric gram."""
        gram = NormalizationService.build_gram(random_matrix, NormRecipe(kind=NormKind.DAN, alpha=0.5, beta=beta))
        np.testing.assert_allclose(gram.matrix, gram.matrix.T, rtol=0, atol=1e-12)
        assert gram.recipe.is_symmetric

    def test_rw_normalize_two_by_two(self):
        """Test D_U^-1 X on X = [[1, 1], [0, 1]]."""
        X = InteractionMatrix.from_dense(np.array([[1, 1], [0, 1]]))
        user_side, _ = NormalizationService.rw_normalize_matrix(X)
        np.testing.assert_allclose(user_side.toarray(), [[0.5, 0.5], [0.0, 1.0]])

    def test_rw_rows_sum_to_one(self, random_matrix):
        """Test random-walk normalized matrices are row-stochastic."""
        user_side, item_side = NormalizationService.rw_normalize_matrix(random_matrix)
        np.testing.assert_allclose(np.asarray(user_side.sum(axis=1)).ravel(), 1.0)
        np.testing.assert_allclose(np.asarray(item_side.sum(axis=1)).ravel(), 1.0)
        np.testing.assert_allclose(NormalizationService.rw_gram(random_matrix).sum(axis=1), 1.0)

    @pytest.mark.parametrize("kind", [NormKind.NONE, NormKind.COLUMNWISE])
    def test_raw_kinds(self, random_matrix, kind):
        """Test raw kinds leave the gram untouched."""
        dense = random_matrix.toarray().astype(float)
        gram = NormalizationService.build_gram(random_matrix, NormRecipe(kind=kind, gamma_col=0.3))
        np.testing.assert_allclose(gram.matrix, dense.T @ dense)

    def test_user_recipe(self, random_matrix):
        """Test user-only weighting."""
        dense = random_matrix.toarray().astype(float)
        w = random_matrix.user_degrees.astype(float) ** -0.4
        gram = NormalizationService.build_gram(random_matrix, NormRecipe(kind=NormKind.USER, beta=0.4))
        np.testing.assert_allclose(gram.matrix, dense.T @ (w[:, None] * dense))

    def test_isolated_item(self):
        """Test an empty item column breaks the degree contract."""
        X = InteractionMatrix.from_dense(np.array([[1, 0], [1, 0]]))
        with pytest.raises(ContractError):
            NormalizationService.build_gram(X, NormRecipe(kind=NormKind.NONE))
        gram = NormalizationService.build_gram(X, NormRecipe(kind=NormKind.SYM), allow_isolated=True)
        assert gram.n == 2


class TestGrids:
    """Test default hyperparameter grids."""

    def test_grid_from_range(self):
        """Test inclusive ranges print cleanly."""
        assert grid_from_range(0.0, 0.5, 0.1) == [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
        assert ALPHA_GRID[-1] == 0.5
        assert DROPOUT_GRID == [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]

    def test_lambda_grid_by_scale(self):
        """Test raw grams get a larger lambda range."""
        assert NormalizationService.default_lambda_grid(ModelKind.LAE, NormKind.NONE) == RAW_LAMBDA_GRID
        assert NormalizationService.default_lambda_grid(ModelKind.LAE, NormKind.DAN) == NORMALIZED_LAMBDA_GRID
        assert NormalizationService.default_lambda_grid(ModelKind.DLAE, NormKind.NONE) == []
        user = NormalizationService.default_lambda_grid(ModelKind.EASE, NormKind.USER)
        assert user == sorted(user)
        assert set(RAW_LAMBDA_GRID) <= set(user)
