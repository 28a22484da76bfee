from datetime import datetime
from typing import Dict, List, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from src.schemas.evaluation import EvalConfig, EvalReport, EvalSlice, Metric
from src.schemas.models import ModelKind
from src.schemas.normalization import NormKind


class SelectionMetric(BaseModel):
    """Validation metric used to pick the winning grid point"""
    slice: EvalSlice = EvalSlice.AOA
    metric: Metric = Metric.NDCG
    k: int = Field(20, ge=1)

    @property
    def label(self) -> str:
        return f"{self.slice.value} {self.metric.value}@{self.k}"


class SweepSpec(BaseModel):
    """
    Hyperparameter grid over model families and normalization kinds.

    Grids left as None fall back to the defaults for the recipe (see
    NormalizationService.default_lambda_grid and friends).
    """
    models: List[ModelKind] = Field(default_factory=lambda: [ModelKind.LAE])
    recipes: List[NormKind] = Field(default_factory=lambda: [NormKind.NONE])
    lambda_grid: Optional[List[float]] = None
    p_grid: Optional[List[float]] = None
    alpha_grid: Optional[List[float]] = None
    beta_grid: Optional[List[float]] = None
    gamma_grid: Optional[List[float]] = None
    selection: SelectionMetric = Field(default_factory=SelectionMetric)
    eval: EvalConfig = Field(default_factory=EvalConfig)

    @field_validator("models", "recipes", "lambda_grid", "p_grid", "alpha_grid", "beta_grid", "gamma_grid")
    @classmethod
    def _non_empty(cls, value):
        if value is not None and len(value) == 0:
            raise ValueError("grids must be non-empty")
        return value

    @model_validator(mode="after")
    def _selection_k_evaluated(self) -> "SweepSpec":
        if self.selection.k not in self.eval.k_list:
            self.eval = self.eval.model_copy(update={"k_list": sorted({*self.eval.k_list, self.selection.k})})
        return self


class LeaderboardRow(BaseModel):
    """One evaluated grid point"""
    label: str
    spec: str
    params: Dict[str, Optional[float | str]]
    status: str = "ok"
    validation_value: Optional[float] = None
    validation: Optional[EvalReport] = None
    test: Optional[EvalReport] = None
    fit_seconds: Optional[float] = None
    error: Optional[str] = None
    selected: bool = False


class Leaderboard(BaseModel):
    """Full sweep grid in grid order; `selected` marks each label's winner"""
    selection: SelectionMetric
    rows: List[LeaderboardRow]

    def winners(self) -> List[LeaderboardRow]:
        return [row for row in self.rows if row.selected]

    def winner(self, label: str) -> Optional[LeaderboardRow]:
        for row in self.rows:
            if row.selected and row.label == label:
                return row
        return None


class AblationRow(BaseModel):
    """Test metrics of one normalization method with its tuned hyperparameters"""
    method: str
    spec: Optional[str] = None
    k: int
    aoa: float
    head: float
    tail: float
    aoa_recall: float
    head_recall: float
    tail_recall: float


class NoiseRow(BaseModel):
    """Mean test metric and relative drop for one model at one noise ratio"""
    model: str
    spec: str
    ratio_percent: float
    slice: EvalSlice
    metric: Metric
    k: int
    value: float
    relative_drop: Optional[float] = None
    seeds: int


class TimingRow(BaseModel):
    """Fit and batched inference wall time (min over repeats)"""
    model: str
    spec: str
    fit_seconds: float = Field(..., gt=0)
    infer_seconds: float = Field(..., gt=0)
    users: int
    items: int


class RunManifest(BaseModel):
    """Provenance of one output directory"""
    command: str
    config_hash: str
    dataset_hash: Optional[str] = None
    seed: int
    version: str
    wall_seconds: float
    created_at: datetime
    arguments: Dict[str, object] = Field(default_factory=dict)


class CurveRow(BaseModel):
    """Best metric of one label at one value of a swept parameter"""
    label: str
    param: str
    param_value: float
    split: str
    slice: EvalSlice
    metric: Metric
    k: int
    value: float
    spec: str
