from enum import Enum
from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator


class NormKind(str, Enum):
    """Normalization strategy applied to the item gram"""
    NONE = "none"
    RW = "rw"
    SYM = "sym"
    DAN = "dan"
    USER = "user"              # user side only: X^T D_U^-beta X
    ITEM = "item"              # item side only: D_I^-(1-alpha) X^T X D_I^-alpha
    COLUMNWISE = "columnwise"  # raw gram, solution right-scaled by D_I^-gamma


ALPHA_RANGE = (0.0, 0.5)
BETA_RANGE = (0.0, 1.0)


class NormRecipe(BaseModel):
    """
    Normalization recipe: kind plus the exponents the kind uses.

    alpha applies to DAN and ITEM, beta to DAN and USER, gamma_col to COLUMNWISE.
    Exponents a kind does not use are ignored. alpha and beta are limited to
    the default search ranges unless allow_wide is set.
    """
    model_config = ConfigDict(frozen=True)

    kind: NormKind = NormKind.NONE
    alpha: float = Field(0.0, description="Item exponent (target side)")
    beta: float = Field(0.0, description="User exponent")
    gamma_col: float = Field(0.0, ge=0, description="Column-wise item exponent")
    allow_wide: bool = False

    @model_validator(mode="after")
    def _check_ranges(self) -> "NormRecipe":
        if not self.allow_wide:
            if not ALPHA_RANGE[0] <= self.alpha <= ALPHA_RANGE[1]:
                raise ValueError(f"alpha={self.alpha} outside {list(ALPHA_RANGE)} (set allow_wide to override)")
            if not BETA_RANGE[0] <= self.beta <= BETA_RANGE[1]:
                raise ValueError(f"beta={self.beta} outside {list(BETA_RANGE)} (set allow_wide to override)")
        return self

    def item_exponents(self) -> Tuple[float, float]:
        """(left, right) exponents: gram = D_I^-left . S . D_I^-right"""
        if self.kind == NormKind.RW:
            return 1.0, 0.0
        if self.kind == NormKind.SYM:
            return 0.5, 0.5
        if self.kind in (NormKind.DAN, NormKind.ITEM):
            return 1.0 - self.alpha, self.alpha
        return 0.0, 0.0

    def user_exponent(self) -> float:
        """beta in S = X^T D_U^-beta X"""
        if self.kind in (NormKind.RW, NormKind.SYM):
            return 1.0
        if self.kind in (NormKind.DAN, NormKind.USER):
            return self.beta
        return 0.0

    @property
    def is_symmetric(self) -> bool:
        """Whether the normalized gram is symmetric"""
        left, right = self.item_exponents()
        return left == right

    @property
    def label(self) -> str:
        """Short, canonical description, e.g. `dan(alpha=0.2,beta=0.4)`"""
        if self.kind == NormKind.DAN:
            return f"dan(alpha={self.alpha:g},beta={self.beta:g})"
        if self.kind == NormKind.USER:
            return f"user(beta={self.beta:g})"
        if self.kind == NormKind.ITEM:
            return f"item(alpha={self.alpha:g})"
        if self.kind == NormKind.COLUMNWISE:
            return f"columnwise(gamma={self.gamma_col:g})"
        return self.kind.value


class NormalizedGram(BaseModel):
    """
    Normalized item gram in factored form diag(left) . core . diag(right).

    `core` is the symmetric user-weighted gram X^T D_U^-beta X; `left` and
    `right` are the item degree powers of the recipe.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    core: np.ndarray
    left: np.ndarray
    right: np.ndarray
    recipe: NormRecipe

    @property
    def n(self) -> int:
        return self.core.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        """Materialized P~ (n x n)"""
        return self.left[:, None] * self.core * self.right[None, :]
