"""Tests for interaction schemas."""
import numpy as np
import pytest
import scipy.sparse as sp
from pydantic import ValidationError

from src.schemas.interactions import EvalSplit, InteractionMatrix, NoiseConfig


class TestInteractionMatrix:
    """Test InteractionMatrix construction and invariants."""

    def test_from_pairs_collapses_duplicates(self):
        """Test duplicate pairs become one binary entry."""
        X = InteractionMatrix.from_pairs([0, 0, 1, 0], [1, 1, 0, 2], ["a", "b"], ["x", "y", "z"])
        assert X.nnz == 3
        assert X.toarray().tolist() == [[0, 1, 1], [1, 0, 0]]
        assert set(X.matrix.data.tolist()) == {1.0}

    def test_degrees_and_density(self, tiny_matrix):
        """Test degree vectors and density."""
        assert tiny_matrix.user_degrees.tolist() == [3, 2, 3, 4]
        assert tiny_matrix.item_degrees.tolist() == [3, 3, 2, 2, 2]
        assert tiny_matrix.density == pytest.approx(12 / 20)

    def test_user_items_sorted(self, tiny_matrix):
        """Test a user's items come back sorted."""
        assert tiny_matrix.user_items(3).tolist() == [0, 1, 3, 4]

    def test_shape_mismatch_rejected(self):
        """Test ids must match the matrix shape."""
        with pytest.raises(ValidationError):
            InteractionMatrix(matrix=sp.csr_matrix((2, 2)), user_ids=["a"], item_ids=["x", "y"])

    def test_non_binary_rejected(self):
        """Test stored values must be 1."""
        matrix = sp.csr_matrix(np.array([[2.0, 0.0], [0.0, 1.0]]))
        with pytest.raises(ValidationError, match="binary"):
            InteractionMatrix(matrix=matrix, user_ids=["a", "b"], item_ids=["x", "y"])


class TestEvalSplit:
    """Test fold-in / held-out consistency."""

    def test_overlap_rejected(self):
        """Test fold-in and held-out must be disjoint."""
        foldin = InteractionMatrix.from_pairs([0], [1], ["u"], ["x", "y"])
        heldout = InteractionMatrix.from_pairs([0], [1], ["u"], ["x", "y"])
        with pytest.raises(ValidationError, match="disjoint"):
            EvalSplit(foldin=foldin, heldout=heldout)

    def test_users_must_align(self):
        """Test both sides cover the same users."""
        foldin = InteractionMatrix.from_pairs([0], [0], ["u"], ["x", "y"])
        heldout = InteractionMatrix.from_pairs([0], [1], ["v"], ["x", "y"])
        with pytest.raises(ValidationError):
            EvalSplit(foldin=foldin, heldout=heldout)


class TestNoiseConfig:
    """Test noise ratio bounds."""

    @pytest.mark.parametrize("ratio", [-1.0, 100.5])
    def test_ratio_bounds(self, ratio):
        """Test the ratio must be a percentage."""
        with pytest.raises(ValidationError):
            NoiseConfig(ratio_percent=ratio)
