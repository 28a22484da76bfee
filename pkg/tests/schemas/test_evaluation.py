"""Tests for evaluation and experiment schemas."""
import numpy as np
import pytest
from pydantic import ValidationError

from src.schemas.analysis import SpectrumReport, WeightDistribution, WeightGroupSummary
from src.schemas.evaluation import EvalConfig, EvalReport, EvalSlice, Metric, MetricRow
from src.schemas.experiments import Leaderboard, LeaderboardRow, SelectionMetric, SweepSpec


class TestEvalConfig:
    """Test evaluation settings."""

    def test_defaults(self):
        """Test default cut-offs and group fractions."""
        config = EvalConfig()
        assert config.k_list == [20]
        assert config.head_fraction == 0.2
        assert config.unbiased_gamma == 2.0
        assert config.mask_seen is True

    def test_k_list_sorted_and_deduplicated(self):
        """Test cut-offs are normalized."""
        assert EvalConfig(k_list=[50, 20, 20, 10]).k_list == [10, 20, 50]

    @pytest.mark.parametrize("k_list", [[], [0], [20, -1]])
    def test_k_list_invalid(self, k_list):
        """Test empty or non-positive cut-offs are rejected."""
        with pytest.raises(ValidationError):
            EvalConfig(k_list=k_list)

    @pytest.mark.parametrize("field", ["head_fraction", "active_fraction"])
    def test_fraction_bounds(self, field):
        """Test fractions must lie strictly inside (0, 1)."""
        with pytest.raises(ValidationError):
            EvalConfig(**{field: 1.0})


class TestEvalReport:
    """Test report lookups."""

    def test_value_lookup(self):
        """Test a row is found by slice, metric and K."""
        report = EvalReport(rows=[
            MetricRow(slice=EvalSlice.AOA, metric=Metric.NDCG, k=20, value=0.3, n_users=10),
            MetricRow(slice=EvalSlice.TAIL, metric=Metric.RECALL, k=20, value=0.1, n_users=8),
        ])
        assert report.value(EvalSlice.TAIL, Metric.RECALL, 20) == 0.1

    def test_missing_value_raises(self):
        """Test a missing row raises KeyError."""
        with pytest.raises(KeyError, match="Head NDCG@10"):
            EvalReport(rows=[]).value(EvalSlice.HEAD, Metric.NDCG, 10)

    def test_metric_range(self):
        """Test metric values lie in [0, 1]."""
        with pytest.raises(ValidationError):
            MetricRow(slice=EvalSlice.AOA, metric=Metric.NDCG, k=20, value=1.5, n_users=1)


class TestSweepSpec:
    """Test sweep grids."""

    def test_selection_k_added_to_eval(self):
        """Test the selection cut-off is always evaluated."""
        spec = SweepSpec(selection=SelectionMetric(k=10), eval=EvalConfig(k_list=[20, 50]))
        assert spec.eval.k_list == [10, 20, 50]

    def test_empty_grid_rejected(self):
        """Test grids cannot be empty."""
        with pytest.raises(ValidationError):
            SweepSpec(lambda_grid=[])

    def test_selection_label(self):
        """Test the selection metric label."""
        assert SelectionMetric().label == "AOA NDCG@20"


class TestLeaderboard:
    """Test winner lookups."""

    def test_winners(self):
        """Test only selected rows are winners."""
        rows = [
            LeaderboardRow(label="LAE", spec="lae/none/lambda=1.0", params={}, validation_value=0.1),
            LeaderboardRow(label="LAE", spec="lae/none/lambda=10.0", params={}, validation_value=0.2, selected=True),
        ]
        board = Leaderboard(selection=SelectionMetric(), rows=rows)
        assert [row.spec for row in board.winners()] == ["lae/none/lambda=10.0"]
        assert board.winner("LAE").validation_value == 0.2
        assert board.winner("EASE") is None


class TestAnalysisSchemas:
    """Test spectra and weight summaries."""

    def test_spectrum_must_be_sorted(self):
        """Test eigenvalues must be descending."""
        SpectrumReport(eigenvalues=np.array([3.0, 2.0, 2.0, -1.0]), source="P")
        with pytest.raises(ValidationError):
            SpectrumReport(eigenvalues=np.array([1.0, 2.0]), source="P")

    def test_weight_gap(self):
        """Test the head/tail gap is an absolute difference."""
        head = WeightGroupSummary(group="head", items=2, mean=0.1, std=0.0, histogram=[2])
        tail = WeightGroupSummary(group="tail", items=8, mean=0.4, std=0.1, histogram=[8])
        assert WeightDistribution(head=head, tail=tail, bin_edges=[0.0, 1.0]).gap == pytest.approx(0.3)
