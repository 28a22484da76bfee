from enum import Enum
from typing import Dict, List

from pydantic import BaseModel, Field, field_validator


class EvalSlice(str, Enum):
    """Evaluation slice: which ground truth and users a metric is averaged over"""
    AOA = "AOA"
    HEAD = "Head"
    TAIL = "Tail"
    UNBIASED = "Unbiased"
    ACTIVE = "Active"
    INACTIVE = "Inactive"


class Metric(str, Enum):
    RECALL = "Recall"
    NDCG = "NDCG"


class EvalConfig(BaseModel):
    """Cut-offs, group boundaries and propensity exponent for evaluation"""
    k_list: List[int] = Field(default_factory=lambda: [20])
    head_fraction: float = Field(0.2, gt=0, lt=1, description="Share of items counted as head")
    unbiased_gamma: float = Field(2.0, ge=0, description="Propensity exponent")
    active_fraction: float = Field(0.2, gt=0, lt=1, description="Share of users counted as active")
    mask_seen: bool = True

    @field_validator("k_list")
    @classmethod
    def _check_k(cls, value: List[int]) -> List[int]:
        if not value or any(k < 1 for k in value):
            raise ValueError("k_list must contain positive cut-offs")
        return sorted(set(value))


class MetricRow(BaseModel):
    """One (slice, metric, K) average"""
    slice: EvalSlice
    metric: Metric
    k: int
    value: float = Field(..., ge=0, le=1)
    n_users: int


class EvalReport(BaseModel):
    """All slice metrics of one evaluation, plus per-slice skipped-user counts"""
    rows: List[MetricRow]
    skipped: Dict[str, int] = Field(default_factory=dict)

    def value(self, slice_: EvalSlice, metric: Metric, k: int) -> float:
        """
        Raises:
            KeyError: If the report has no such row
        """
        for row in self.rows:
            if row.slice == slice_ and row.metric == metric and row.k == k:
                return row.value
        raise KeyError(f"{slice_.value} {metric.value}@{k}")
