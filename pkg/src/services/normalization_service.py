from typing import List, Tuple

import numpy as np
import scipy.sparse as sp

from src.core.errors import ContractError
from src.schemas.interactions import InteractionMatrix
from src.schemas.models import ModelKind
from src.schemas.normalization import NormalizedGram, NormKind, NormRecipe
from src.services.linalg_service import LinalgService


def _one_two_five(lo_exp: int, hi_exp: int) -> List[float]:
    """1-2-5 series from 10**lo_exp up to 5 * 10**hi_exp"""
    return [float(f"{m}e{e}") for e in range(lo_exp, hi_exp + 1) for m in (1, 2, 5)]


def grid_from_range(start: float, stop: float, step: float) -> List[float]:
    """Inclusive grid start..stop, rounded so 0.1-steps print as 0.1, 0.2, ..."""
    count = int(round((stop - start) / step)) + 1
    return [round(start + k * step, 10) for k in range(count)]


# Grids for item-normalized grams (entries O(1)) and raw grams (entries O(degree))
NORMALIZED_LAMBDA_GRID = _one_two_five(-3, 1)
RAW_LAMBDA_GRID = _one_two_five(1, 2) + [1000.0]
DROPOUT_GRID = grid_from_range(0.1, 0.9, 0.1)
ALPHA_GRID = grid_from_range(0.0, 0.5, 0.1)
BETA_GRID = grid_from_range(0.0, 1.0, 0.1)
GAMMA_GRID = grid_from_range(0.0, 1.0, 0.1)

RAW_KINDS = (NormKind.NONE, NormKind.COLUMNWISE)


class NormalizationService:
    """Degree-power weighting and normalized gram construction"""

    @staticmethod
    def degree_power(degrees: np.ndarray, exponent: float, allow_isolated: bool = False) -> np.ndarray:
        """
        d ** -exponent as floats.

        Args:
            degrees: Integer degree vector
            exponent: Power applied as d ** -exponent
            allow_isolated: Treat zero degrees as 1 instead of failing

        Raises:
            ContractError: If a degree is zero and allow_isolated is False
        """
        d = np.asarray(degrees, dtype=np.float64)
        if np.any(d <= 0):
            if not allow_isolated:
                raise ContractError(
                    f"{int(np.sum(d <= 0))} zero degrees; normalization needs every degree >= 1"
                )
            d = np.where(d <= 0, 1.0, d)
        if exponent == 0:
            return np.ones_like(d)
        return np.power(d, -float(exponent))

    @staticmethod
    def build_gram(
        X: InteractionMatrix,
        recipe: NormRecipe,
        threads: int = 1,
        allow_isolated: bool = False,
    ) -> NormalizedGram:
        """
        Normalized gram D_I^-(left) X^T D_U^-beta X D_I^-(right) in factored form.

        NONE and COLUMNWISE give the raw gram (column-wise scaling is applied to
        the solution, not the gram).

        Raises:
            ContractError: Zero user or item degree (unless allow_isolated)
            CapacityError: Too many items for a dense gram
        """
        user_deg = X.user_degrees
        item_deg = X.item_degrees
        # Degree contract holds for every recipe, also those that do not use the powers
        user_w = NormalizationService.degree_power(user_deg, recipe.user_exponent(), allow_isolated)
        left_exp, right_exp = recipe.item_exponents()
        left = NormalizationService.degree_power(item_deg, left_exp, allow_isolated)
        right = NormalizationService.degree_power(item_deg, right_exp, allow_isolated)

        core = LinalgService.gram(X, None if recipe.user_exponent() == 0 else user_w, threads=threads)
        return NormalizedGram(core=core, left=left, right=right, recipe=recipe)

    @staticmethod
    def rw_normalize_matrix(X: InteractionMatrix) -> Tuple[sp.csr_matrix, sp.csr_matrix]:
        """
        Random-walk normalized interaction matrices.

        Returns:
            (D_U^-1 X, D_I^-1 X^T): each row of either matrix sums to 1

        Raises:
            ContractError: Zero user or item degree
        """
        inv_users = NormalizationService.degree_power(X.user_degrees, 1.0)
        inv_items = NormalizationService.degree_power(X.item_degrees, 1.0)
        csr = X.matrix.astype(np.float64)
        user_side = (sp.diags(inv_users) @ csr).tocsr()
        item_side = (sp.diags(inv_items) @ csr.T).tocsr()
        return user_side, item_side

    @staticmethod
    def rw_gram(X: InteractionMatrix) -> np.ndarray:
        """D_I^-1 X^T D_U^-1 X from the random-walk normalized matrices"""
        user_side, item_side = NormalizationService.rw_normalize_matrix(X)
        return (item_side @ user_side).toarray()

    @staticmethod
    def sym_gram(X: InteractionMatrix) -> np.ndarray:
        """X~^T X~ with X~ = D_U^-1/2 X D_I^-1/2"""
        du = NormalizationService.degree_power(X.user_degrees, 0.5)
        di = NormalizationService.degree_power(X.item_degrees, 0.5)
        normalized = (sp.diags(du) @ X.matrix.astype(np.float64) @ sp.diags(di)).tocsr()
        return (normalized.T @ normalized).toarray()

    @staticmethod
    def default_lambda_grid(model: ModelKind, kind: NormKind) -> List[float]:
        """Lambda grid by recipe scale; DLAE is swept over dropout_p instead"""
        if model == ModelKind.DLAE:
            return []
        if kind in RAW_KINDS:
            return list(RAW_LAMBDA_GRID)
        if kind == NormKind.USER:
            # beta = 0 is the raw gram, beta = 1 a user-normalized one
            return sorted(set(NORMALIZED_LAMBDA_GRID) | set(RAW_LAMBDA_GRID))
        return list(NORMALIZED_LAMBDA_GRID)
