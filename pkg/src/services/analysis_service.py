from typing import List, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from src.core.config import settings
from src.core.errors import CapacityError, ContractError, UndefinedMetricError
from src.core.logging import logger
from src.schemas.analysis import (
    DatasetStats,
    EdgePolicy,
    HomophilyConfig,
    SpectrumReport,
    WeightDistribution,
    WeightGroupSummary,
)
from src.schemas.interactions import InteractionMatrix
from src.schemas.models import ItemModel, ModelKind
from src.schemas.normalization import NormKind, NormRecipe
from src.services.evaluation_service import EvaluationService
from src.services.linalg_service import LinalgService
from src.services.normalization_service import NormalizationService


class AnalysisService:
    """Dataset skew, item-graph homophily and spectral diagnostics"""

    @staticmethod
    def gini_item(X: InteractionMatrix) -> float:
        """
        Gini index of the item degrees: sum_i sum_j |d_i - d_j| / (2 n sum d).

        Computed from the sorted degrees in integer arithmetic.

        Raises:
            ContractError: If some item has no interactions
        """
        degrees = np.sort(X.item_degrees)
        n = degrees.size
        if n == 0 or degrees[0] < 1:
            raise ContractError("gini_item needs every item degree >= 1")
        ranks = 2 * np.arange(n, dtype=np.int64) - n + 1
        # sum_i sum_j |d_i - d_j| == 2 * sum_i (2i - n + 1) d_(i)
        numerator = 2 * int(np.dot(ranks, degrees))
        denominator = 2 * n * int(degrees.sum())
        return numerator / denominator

    @staticmethod
    def homophily_weighted(X: InteractionMatrix, cfg: Optional[HomophilyConfig] = None) -> float:
        """
        Weighted homophily ratio of the item co-engagement graph.

        For every pair of items sharing at least one user: s = Jaccard of the
        user sets, w = |Vi & Vj| ** delta * |Vi & Vj| / min(|Vi|, |Vj|);
        the result is sum(w s) / sum(w).

        Raises:
            UndefinedMetricError: No co-engaged item pairs
        """
        cfg = cfg or HomophilyConfig()
        degrees = X.item_degrees.astype(np.float64)
        if np.any(degrees < 1):
            raise ContractError("homophily needs every item degree >= 1")
        csr = X.matrix.astype(np.float64)
        pairs = sp.triu(csr.T @ csr, k=1).tocoo()
        if pairs.nnz == 0:
            raise UndefinedMetricError("no co-engaged item pairs; homophily ratio is undefined")

        i, j, common = pairs.row, pairs.col, pairs.data
        if cfg.edge_policy == EdgePolicy.SAMPLED and pairs.nnz > cfg.sample_count:
            # Canonical (row, col) order so the sample depends only on the seed
            order = np.lexsort((j, i))
            rng = np.random.default_rng(cfg.seed)
            picked = np.sort(rng.choice(pairs.nnz, size=cfg.sample_count, replace=False))
            i, j, common = i[order][picked], j[order][picked], common[order][picked]

        d_i, d_j = degrees[i], degrees[j]
        similarity = common / (d_i + d_j - common)
        weight = np.power(common, cfg.delta) * common / np.minimum(d_i, d_j)
        ratio = float(np.sum(weight * similarity) / np.sum(weight))
        return min(max(ratio, 0.0), 1.0)

    @staticmethod
    def dataset_stats(
        X: InteractionMatrix,
        homophily: Optional[HomophilyConfig] = None,
        with_homophily: bool = True,
    ) -> DatasetStats:
        """Size, density, Gini index and (optionally) weighted homophily of X"""
        h_w = None
        if with_homophily:
            try:
                h_w = AnalysisService.homophily_weighted(X, homophily)
            except UndefinedMetricError as e:
                logger.warning("Weighted homophily undefined: %s", str(e))
        return DatasetStats(
            m=X.rows,
            n=X.cols,
            nnz=X.nnz,
            density=X.density,
            gini_item=AnalysisService.gini_item(X),
            homophily_w=h_w,
        )

    @staticmethod
    def gram_spectrum(X: InteractionMatrix, recipe: NormRecipe) -> SpectrumReport:
        """
        Spectrum of a symmetric normalized gram.

        Raises:
            ContractError: If the recipe yields an asymmetric gram
        """
        if not recipe.is_symmetric:
            raise ContractError(f"{recipe.label} gram is not symmetric; use the alpha=0.5 representative")
        gram = NormalizationService.build_gram(X, recipe)
        matrix = LinalgService.symmetrize_upper(gram.matrix)
        return LinalgService.eig_sym(matrix, source=f"gram {recipe.label}")

    @staticmethod
    def weight_spectrum(model: ItemModel) -> SpectrumReport:
        """
        Spectrum of a fitted weight matrix with a symmetric gram.

        LAE weights are symmetric and go through the symmetric solver. EASE and DLAE
        weights are not, but are similar to a symmetric matrix, so their real spectrum
        comes from the general solver.

        Raises:
            ContractError: If the model's recipe is asymmetric or column-scaled
            CapacityError: If a non-symmetric model exceeds settings.GENERAL_EIGEN_CAP
        """
        recipe = model.config.recipe
        if not recipe.is_symmetric or (recipe.kind == NormKind.COLUMNWISE and recipe.gamma_col):
            raise ContractError(f"{model.config.label} weights are not symmetric")
        B = model.weights
        source = f"weight-matrix {model.config.spec}"
        if model.config.model == ModelKind.LAE:
            return LinalgService.eig_sym(0.5 * (B + B.T), source=source)
        return LinalgService.eig_general(B, source=source)

    @staticmethod
    def spectrum_vs_beta(
        X: InteractionMatrix,
        betas: Sequence[float],
        lam: float,
        cap: Optional[int] = None,
    ) -> List[SpectrumReport]:
        """
        Spectrum of B = (P~ + lam I)^-1 P~ for the symmetric DAN gram (alpha = 0.5) at each beta.

        Raises:
            CapacityError: If n exceeds the eigensolver cap
        """
        cap = settings.EIGEN_ITEM_CAP if cap is None else cap
        if X.cols > cap:
            raise CapacityError("spectrum_vs_beta", X.cols, cap)
        if lam <= 0:
            raise ContractError("lambda must be positive")

        reports = []
        for beta in betas:
            recipe = NormRecipe(kind=NormKind.DAN, alpha=0.5, beta=beta, allow_wide=True)
            gram = NormalizationService.build_gram(X, recipe)
            P = LinalgService.symmetrize_upper(gram.matrix)
            B = LinalgService.solve_spd(P + lam * np.eye(X.cols), P)
            reports.append(LinalgService.eig_sym(
                0.5 * (B + B.T), source=f"weight-matrix lae/{recipe.label}/lambda={lam!r}", cap=cap
            ))
        return reports

    @staticmethod
    def weight_distribution(model: ItemModel, head_fraction: float = 0.2, bins: int = 20) -> WeightDistribution:
        """
        Column-mean weights of B split into head (top popularity) and tail items.

        Returns:
            Per-group mean, std and histogram over shared bin edges
        """
        column_means = model.weights.mean(axis=0)
        head = EvaluationService.top_fraction_mask(model.item_degrees, head_fraction)
        edges = np.histogram_bin_edges(column_means, bins=bins)

        def summarize(name: str, values: np.ndarray) -> WeightGroupSummary:
            counts, _ = np.histogram(values, bins=edges)
            return WeightGroupSummary(
                group=name,
                items=int(values.size),
                mean=float(values.mean()) if values.size else float("nan"),
                std=float(values.std()) if values.size else float("nan"),
                histogram=[int(c) for c in counts],
            )

        return WeightDistribution(
            head=summarize("head", column_means[head]),
            tail=summarize("tail", column_means[~head]),
            bin_edges=[float(e) for e in edges],
        )
