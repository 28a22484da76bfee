from enum import Enum
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator


class DatasetStats(BaseModel):
    """Size, sparsity and skew statistics of an interaction matrix"""
    m: int
    n: int
    nnz: int
    density: float = Field(..., ge=0, le=1)
    gini_item: float = Field(..., ge=0, le=1)
    homophily_w: Optional[float] = Field(None, ge=0, le=1)


class EdgePolicy(str, Enum):
    """Which co-engaged item pairs enter the weighted homophily ratio"""
    ALL = "all"
    SAMPLED = "sampled"


class HomophilyConfig(BaseModel):
    """Weighted homophily settings"""
    delta: float = Field(1.5, ge=0, description="Exponent on the co-engagement count")
    edge_policy: EdgePolicy = EdgePolicy.ALL
    sample_count: int = Field(100_000, gt=0, description="Pairs drawn under the sampled policy")
    seed: int = 0


class SpectrumReport(BaseModel):
    """Eigenvalues of one matrix, sorted descending, with a provenance tag"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    eigenvalues: np.ndarray
    source: str

    @model_validator(mode="after")
    def _check_sorted(self) -> "SpectrumReport":
        if self.eigenvalues.ndim != 1:
            raise ValueError("eigenvalues must be a vector")
        if self.eigenvalues.size > 1 and np.any(np.diff(self.eigenvalues) > 0):
            raise ValueError("eigenvalues must be sorted descending")
        return self

    @property
    def size(self) -> int:
        return int(self.eigenvalues.size)


class WeightGroupSummary(BaseModel):
    """Column-mean weight statistics for one item group"""
    group: str
    items: int
    mean: float
    std: float
    histogram: List[int]


class WeightDistribution(BaseModel):
    """Head/tail split of the column-mean weights of a model"""
    head: WeightGroupSummary
    tail: WeightGroupSummary
    bin_edges: List[float]

    @property
    def gap(self) -> float:
        """Absolute difference between head and tail mean weights"""
        return abs(self.head.mean - self.tail.mean)
