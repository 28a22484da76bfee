from enum import Enum
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.core.errors import ConfigurationError
from src.schemas.normalization import NormKind, NormRecipe


class ModelKind(str, Enum):
    """Closed-form model family"""
    LAE = "lae"
    EASE = "ease"
    DLAE = "dlae"


# Recipes DLAE can be combined with: none of them rescales the gram by item degree
DLAE_RECIPES = (NormKind.NONE, NormKind.USER, NormKind.COLUMNWISE)
DLAE_RECIPE_NAMES = ", ".join(kind.value for kind in DLAE_RECIPES)

_SPEC_KEYS = {"lambda", "p", "alpha", "beta", "gamma", "wide"}

_LABEL_SUFFIX = {
    NormKind.NONE: "",
    NormKind.RW: "RW",
    NormKind.SYM: "Sym",
    NormKind.DAN: "DAN",
    NormKind.USER: "User",
    NormKind.ITEM: "Item",
    NormKind.COLUMNWISE: "ColNorm",
}


def _fmt(value: float) -> str:
    return repr(float(value))


class SolverConfig(BaseModel):
    """
    Model family, regularization and normalization recipe of one fit.

    DLAE takes either `lam` or `dropout_p` (p = lam / (1 + lam)); the other is derived.
    LAE and EASE require `lam`.
    """
    model_config = ConfigDict(frozen=True)

    model: ModelKind = ModelKind.LAE
    lam: Optional[float] = Field(None, gt=0, description="L2 regularization weight")
    dropout_p: Optional[float] = Field(None, gt=0, lt=1, description="DLAE dropout probability")
    recipe: NormRecipe = Field(default_factory=NormRecipe)

    @model_validator(mode="after")
    def _check_regularization(self) -> "SolverConfig":
        if self.model == ModelKind.DLAE:
            if (self.lam is None) == (self.dropout_p is None):
                raise ValueError("DLAE needs exactly one of lambda or dropout_p")
        else:
            if self.lam is None:
                raise ValueError(f"{self.model.value} needs lambda")
            if self.dropout_p is not None:
                raise ValueError("dropout_p only applies to DLAE")
        return self

    @property
    def lam_value(self) -> float:
        """Effective lambda (derived from dropout_p for DLAE when needed)"""
        if self.lam is not None:
            return float(self.lam)
        p = float(self.dropout_p)  # type: ignore[arg-type]
        return p / (1.0 - p)

    @property
    def p_value(self) -> Optional[float]:
        """Dropout probability; only meaningful for DLAE"""
        if self.model != ModelKind.DLAE:
            return None
        if self.dropout_p is not None:
            return float(self.dropout_p)
        return self.lam_value / (1.0 + self.lam_value)

    def check_compatible(self) -> None:
        """
        Raises:
            ConfigurationError: DLAE combined with a recipe that normalizes items
        """
        if self.model == ModelKind.DLAE and self.recipe.kind not in DLAE_RECIPES:
            raise ConfigurationError(
                f"DLAE accepts only {DLAE_RECIPE_NAMES} normalization; {self.recipe.kind.value} "
                "normalizes items, which already embeds the denoising weight"
            )

    @property
    def spec(self) -> str:
        """Canonical spec string, parseable by `from_spec`"""
        params = []
        if self.dropout_p is not None:
            params.append(f"p={_fmt(self.dropout_p)}")
        else:
            params.append(f"lambda={_fmt(self.lam_value)}")
        kind = self.recipe.kind
        if kind in (NormKind.DAN, NormKind.ITEM):
            params.append(f"alpha={_fmt(self.recipe.alpha)}")
        if kind in (NormKind.DAN, NormKind.USER):
            params.append(f"beta={_fmt(self.recipe.beta)}")
        if kind == NormKind.COLUMNWISE:
            params.append(f"gamma={_fmt(self.recipe.gamma_col)}")
        if self.recipe.allow_wide:
            params.append("wide=1")
        return f"{self.model.value}/{kind.value}/{','.join(params)}"

    @property
    def label(self) -> str:
        """Human-readable name, e.g. `LAE_DAN`"""
        suffix = _LABEL_SUFFIX[self.recipe.kind]
        base = self.model.value.upper()
        return f"{base}_{suffix}" if suffix else base

    def to_params(self) -> Dict[str, Any]:
        """Flat parameter dict for tables and the run store"""
        return {
            "model": self.model.value,
            "norm": self.recipe.kind.value,
            "lambda": self.lam_value,
            "p": self.p_value,
            "alpha": self.recipe.alpha,
            "beta": self.recipe.beta,
            "gamma_col": self.recipe.gamma_col,
        }

    @classmethod
    def from_spec(cls, text: str) -> "SolverConfig":
        """
        Parse `model[/norm[/key=value,...]]`, e.g. `lae/dan/lambda=1,alpha=0.2,beta=0.4`.

        Raises:
            ConfigurationError: Unknown model, normalization or key, or a bad value
        """
        parts = [p.strip() for p in text.strip().split("/")]
        if not parts or not parts[0] or len(parts) > 3:
            raise ConfigurationError(f"Invalid model spec '{text}'")
        try:
            model = ModelKind(parts[0].lower())
            kind = NormKind(parts[1].lower()) if len(parts) > 1 and parts[1] else NormKind.NONE
        except ValueError as e:
            raise ConfigurationError(f"Invalid model spec '{text}': {e}") from e

        values: Dict[str, float] = {}
        if len(parts) == 3 and parts[2]:
            for item in parts[2].split(","):
                key, sep, raw = item.partition("=")
                key = key.strip().lower()
                if not sep or key not in _SPEC_KEYS:
                    raise ConfigurationError(f"Invalid parameter '{item}' in model spec '{text}'")
                try:
                    values[key] = float(raw)
                except ValueError as e:
                    raise ConfigurationError(f"Parameter {key} in '{text}' is not a number") from e

        recipe = NormRecipe(
            kind=kind,
            alpha=values.get("alpha", 0.0),
            beta=values.get("beta", 0.0),
            gamma_col=values.get("gamma", 0.0),
            allow_wide=bool(values.get("wide", 0.0)),
        )
        config = cls(model=model, lam=values.get("lambda"), dropout_p=values.get("p"), recipe=recipe)
        config.check_compatible()
        return config


class FitStats(BaseModel):
    """Timing and quality of one fit"""
    fit_seconds: float = Field(..., ge=0)
    residual: Optional[float] = Field(None, description="Relative normal-equation residual")
    users: int
    interactions: int


class ItemModel(BaseModel):
    """Fitted n x n item weight matrix with the configuration that produced it"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    weights: np.ndarray
    config: SolverConfig
    item_ids: List[str]
    item_degrees: np.ndarray
    fit_stats: FitStats
    dataset_hash: Optional[str] = None

    @model_validator(mode="after")
    def _check_weights(self) -> "ItemModel":
        n = len(self.item_ids)
        if self.weights.shape != (n, n):
            raise ValueError(f"weights shape {self.weights.shape} does not match {n} items")
        if self.item_degrees.shape != (n,):
            raise ValueError("item_degrees must have one entry per item")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("weights contain non-finite entries")
        return self

    @property
    def n(self) -> int:
        return len(self.item_ids)
