import time
from pathlib import Path
from typing import Dict, Iterator, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.linalg as sla
import scipy.sparse as sp

from src.core.config import settings
from src.core.errors import ConfigurationError, ContractError, ModelFormatError, NumericalError
from src.core.logging import logger
from src.schemas.interactions import InteractionMatrix
from src.schemas.models import FitStats, ItemModel, ModelKind, SolverConfig
from src.schemas.normalization import NormalizedGram, NormKind, NormRecipe
from src.services.linalg_service import LinalgService
from src.services.normalization_service import NormalizationService

# Lowest finite float; keeps the ranking sort total
MASK_SENTINEL = float(np.finfo(np.float64).min)

MODEL_FORMAT_VERSION = "1"


class ModelService:
    """Closed-form fitting, scoring and persistence of item-item models"""

    @staticmethod
    def fit(
        X: InteractionMatrix,
        config: SolverConfig,
        threads: int = 1,
        allow_isolated: bool = False,
        dataset_hash: Optional[str] = None,
    ) -> ItemModel:
        """
        Fit the model family named by `config.model`.

        Args:
            X: Training interactions
            config: Model family, regularization and recipe
            threads: Worker count for the gram accumulation
            allow_isolated: Treat zero degrees as 1 (noisy training data)
            dataset_hash: Hash of X recorded in the model metadata

        Returns:
            Fitted ItemModel

        Raises:
            ConfigurationError: Invalid model/recipe combination
            NumericalError: Solver failure
        """
        handlers = {
            ModelKind.LAE: ModelService.fit_lae,
            ModelKind.EASE: ModelService.fit_ease,
            ModelKind.DLAE: ModelService.fit_dlae,
        }
        return handlers[config.model](
            X, config, threads=threads, allow_isolated=allow_isolated, dataset_hash=dataset_hash
        )

    @staticmethod
    def fit_lae(X: InteractionMatrix, config: SolverConfig, threads: int = 1,
                allow_isolated: bool = False, dataset_hash: Optional[str] = None) -> ItemModel:
        """
        LAE over any recipe: B = (P~ + lam I)^-1 P~, then B D_I^-gamma for column-wise.

        P~ = diag(l) S diag(r) is solved through the SPD system
        (S + lam diag(1/(l r))) Y = S with B = diag(1/r) Y diag(r).
        """
        if config.model != ModelKind.LAE:
            raise ConfigurationError(f"fit_lae called with model {config.model.value}")
        start = time.perf_counter()
        gram = NormalizationService.build_gram(X, config.recipe, threads, allow_isolated)
        lam = config.lam_value
        B = ModelService._lae_kernel(gram, lam)
        residual = None
        if settings.COMPUTE_RESIDUAL:
            P = gram.matrix
            residual = LinalgService.relative_residual(P + lam * np.eye(gram.n), B, P)
        B = ModelService._column_scale(B, X, config.recipe, allow_isolated)
        return ModelService._finish(B, X, config, start, residual, dataset_hash)

    @staticmethod
    def fit_ease(X: InteractionMatrix, config: SolverConfig, threads: int = 1,
                 allow_isolated: bool = False, dataset_hash: Optional[str] = None) -> ItemModel:
        """
        EASE over any recipe: B = I - C diagMat(1 / diag C) with C = (P~ + lam I)^-1.

        diag(B) is set to exactly 0; (P~ + lam I) B - P~ is diagonal.

        Raises:
            NumericalError: If a diagonal entry of C is not positive
        """
        if config.model != ModelKind.EASE:
            raise ConfigurationError(f"fit_ease called with model {config.model.value}")
        start = time.perf_counter()
        gram = NormalizationService.build_gram(X, config.recipe, threads, allow_isolated)
        lam = config.lam_value
        l, r = gram.left, gram.right

        # C = diag(1/r) M^-1 diag(1/l) with M = S + lam diag(1/(l r))
        M = gram.core + np.diag(lam / (l * r))
        C = LinalgService.inverse_spd(M) / r[:, None] / l[None, :]
        diag_c = np.diag(C).copy()
        if np.any(diag_c <= 0):
            raise NumericalError(
                "EASE inverse has a non-positive diagonal", pivot=int(np.flatnonzero(diag_c <= 0)[0])
            )
        B = -C / diag_c[None, :]
        np.fill_diagonal(B, 0.0)

        residual = None
        if settings.COMPUTE_RESIDUAL:
            P = gram.matrix
            stationarity = (P + lam * np.eye(gram.n)) @ B - P
            np.fill_diagonal(stationarity, 0.0)
            residual = float(np.linalg.norm(stationarity) / max(np.linalg.norm(P), 1e-300))
        B = ModelService._column_scale(B, X, config.recipe, allow_isolated)
        return ModelService._finish(B, X, config, start, residual, dataset_hash)

    @staticmethod
    def fit_dlae(X: InteractionMatrix, config: SolverConfig, threads: int = 1,
                 allow_isolated: bool = False, dataset_hash: Optional[str] = None) -> ItemModel:
        """
        DLAE: B = (P + lam diagMat(diag P))^-1 P with lam = p / (1 - p).

        P is the raw gram, or X^T D_U^-beta X under the user recipe. The column-wise
        recipe scales the solution. Recipes that normalize items are rejected.

        Raises:
            ConfigurationError: Recipe outside DLAE_RECIPES requested
        """
        if config.model != ModelKind.DLAE:
            raise ConfigurationError(f"fit_dlae called with model {config.model.value}")
        config.check_compatible()
        start = time.perf_counter()
        gram = NormalizationService.build_gram(X, config.recipe, threads, allow_isolated)
        lam = config.lam_value
        P = gram.core
        penalty = np.diag(P).copy()
        if allow_isolated:
            penalty[penalty <= 0] = 1.0
        A = P + np.diag(lam * penalty)
        B = LinalgService.solve_spd(A, P)
        residual = LinalgService.relative_residual(A, B, P) if settings.COMPUTE_RESIDUAL else None
        B = ModelService._column_scale(B, X, config.recipe, allow_isolated)
        return ModelService._finish(B, X, config, start, residual, dataset_hash)

    @staticmethod
    def _lae_kernel(gram: NormalizedGram, lam: float) -> np.ndarray:
        l, r = gram.left, gram.right
        A = gram.core + np.diag(lam / (l * r))
        Y = LinalgService.solve_spd(A, gram.core)
        return Y / r[:, None] * r[None, :]

    @staticmethod
    def _column_scale(B: np.ndarray, X: InteractionMatrix, recipe: NormRecipe, allow_isolated: bool) -> np.ndarray:
        if recipe.kind != NormKind.COLUMNWISE or recipe.gamma_col == 0:
            return B
        scale = NormalizationService.degree_power(X.item_degrees, recipe.gamma_col, allow_isolated)
        return B * scale[None, :]

    @staticmethod
    def _finish(B, X, config, start, residual, dataset_hash) -> ItemModel:
        elapsed = time.perf_counter() - start
        model = ItemModel(
            weights=B,
            config=config,
            item_ids=list(X.item_ids),
            item_degrees=X.item_degrees,
            fit_stats=FitStats(fit_seconds=elapsed, residual=residual, users=X.rows, interactions=X.nnz),
            dataset_hash=dataset_hash,
        )
        logger.info(
            "Fitted %s (%s) on %d users x %d items in %.3fs (residual %s)",
            config.label, config.spec, X.rows, X.cols, elapsed,
            f"{residual:.2e}" if residual is not None else "n/a"
        )
        return model

    @staticmethod
    def theorem1_transform(X: InteractionMatrix, alpha: float, lam: float) -> Tuple[np.ndarray, np.ndarray]:
        """
        Both sides of the item-normalization / DLAE similarity identity.

        left:  (P~ + lam I)^-1 P~ with P~ = D_I^-(1-alpha) P D_I^-alpha, via a dense LU solve
               of the materialized (asymmetric) gram
        right: D_I^alpha B_DLAE D_I^-alpha with B_DLAE = (P + lam D_I)^-1 P, via Cholesky

        Raises:
            ConfigurationError: alpha outside [0, 0.5] or lam <= 0
        """
        if not 0.0 <= alpha <= 0.5:
            raise ConfigurationError(f"alpha={alpha} outside [0, 0.5]")
        if lam <= 0:
            raise ConfigurationError("lambda must be positive")
        recipe = NormRecipe(kind=NormKind.ITEM, alpha=alpha)
        P_tilde = NormalizationService.build_gram(X, recipe).matrix
        left = sla.solve(P_tilde + lam * np.eye(X.cols), P_tilde)

        dlae = ModelService.fit_dlae(X, SolverConfig(model=ModelKind.DLAE, lam=lam))
        d = X.item_degrees.astype(np.float64)
        right = (d ** alpha)[:, None] * dlae.weights * (d ** -alpha)[None, :]
        return left, right

    # ---------- Scoring ----------

    @staticmethod
    def score(model: ItemModel, foldin: Sequence[int], mask_seen: bool = True) -> np.ndarray:
        """
        Scores of one user: sum of the weight rows of the fold-in items.

        Raises:
            ContractError: Item index out of range
        """
        items = np.asarray(foldin, dtype=np.int64)
        if items.size and (items.min() < 0 or items.max() >= model.n):
            raise ContractError(f"fold-in item index out of range for {model.n} items")
        scores = model.weights[items].sum(axis=0) if items.size else np.zeros(model.n)
        if mask_seen and items.size:
            scores[items] = MASK_SENTINEL
        return scores

    @staticmethod
    def score_matrix(weights: np.ndarray, foldin: sp.csr_matrix, mask_seen: bool = True) -> np.ndarray:
        """Dense scores foldin @ weights for a block of users"""
        if foldin.shape[1] != weights.shape[0]:
            raise ContractError(f"fold-in has {foldin.shape[1]} items, model has {weights.shape[0]}")
        scores = np.asarray(foldin @ weights)
        if mask_seen and foldin.nnz:
            coo = foldin.tocoo()
            scores[coo.row, coo.col] = MASK_SENTINEL
        return scores

    @staticmethod
    def iter_score_batches(
        weights: np.ndarray,
        foldin: sp.csr_matrix,
        mask_seen: bool = True,
        batch_size: Optional[int] = None,
    ) -> Iterator[Tuple[int, np.ndarray]]:
        """Yield (first user row, score block) over user chunks"""
        batch_size = batch_size or settings.SCORE_BATCH_SIZE
        for start in range(0, foldin.shape[0], batch_size):
            block = foldin[start:start + batch_size]
            yield start, ModelService.score_matrix(weights, block, mask_seen)

    @staticmethod
    def popularity_scores(train: InteractionMatrix, foldin: sp.csr_matrix, mask_seen: bool = True) -> np.ndarray:
        """Most-popular scores for each fold-in user (training popularity, seen items masked)"""
        scores = np.tile(train.item_degrees.astype(np.float64), (foldin.shape[0], 1))
        if mask_seen and foldin.nnz:
            coo = foldin.tocoo()
            scores[coo.row, coo.col] = MASK_SENTINEL
        return scores

    # ---------- Persistence ----------

    @staticmethod
    def sidecar_paths(path: Path) -> Tuple[Path, Path]:
        """(metadata, items) sidecars of a model file"""
        path = Path(path)
        return path.with_suffix(".meta.tsv"), path.with_suffix(".items.tsv")

    @staticmethod
    def save(model: ItemModel, path: Path) -> None:
        """Write weights (LARE binary) plus metadata and item sidecars"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        LinalgService.write_dense(model.weights, path)
        meta_path, items_path = ModelService.sidecar_paths(path)
        config = model.config
        meta: Dict[str, str] = {
            "format_version": MODEL_FORMAT_VERSION,
            "model": config.model.value,
            "spec": config.spec,
            "lambda": repr(float(config.lam)) if config.lam is not None else "",
            "dropout_p": repr(float(config.dropout_p)) if config.dropout_p is not None else "",
            "norm": config.recipe.kind.value,
            "alpha": repr(float(config.recipe.alpha)),
            "beta": repr(float(config.recipe.beta)),
            "gamma_col": repr(float(config.recipe.gamma_col)),
            "allow_wide": str(config.recipe.allow_wide).lower(),
            "m": str(model.fit_stats.users),
            "n": str(model.n),
            "nnz": str(model.fit_stats.interactions),
            "dataset_hash": model.dataset_hash or "",
            "fit_seconds": repr(float(model.fit_stats.fit_seconds)),
            "residual": repr(float(model.fit_stats.residual)) if model.fit_stats.residual is not None else "",
        }
        pd.DataFrame({"key": list(meta), "value": list(meta.values())}).to_csv(
            meta_path, sep="\t", header=False, index=False, lineterminator="\n"
        )
        pd.DataFrame({"id": model.item_ids, "index": np.arange(model.n), "degree": model.item_degrees}).to_csv(
            items_path, sep="\t", header=False, index=False, lineterminator="\n"
        )
        logger.info("Saved %s model to %s", config.label, path)

    @staticmethod
    def load(path: Path) -> ItemModel:
        """
        Load a model written by `save`.

        Raises:
            FileNotFoundError: Missing model or sidecar
            ModelFormatError: Corrupt, truncated or inconsistent files
        """
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"Model file {path} not found")
        weights = LinalgService.read_dense(path)
        meta_path, items_path = ModelService.sidecar_paths(path)
        if not meta_path.is_file() or not items_path.is_file():
            raise FileNotFoundError(f"Model sidecars for {path} not found")

        raw = pd.read_csv(meta_path, sep="\t", header=None, names=["key", "value"], dtype=str,
                          keep_default_na=False, na_values=[])
        meta = dict(zip(raw["key"], raw["value"]))
        try:
            if meta["format_version"] != MODEL_FORMAT_VERSION:
                raise ModelFormatError(f"{meta_path}: unsupported model format {meta['format_version']}")
            recipe = NormRecipe(
                kind=NormKind(meta["norm"]),
                alpha=float(meta["alpha"]),
                beta=float(meta["beta"]),
                gamma_col=float(meta["gamma_col"]),
                allow_wide=meta["allow_wide"] == "true",
            )
            config = SolverConfig(
                model=ModelKind(meta["model"]),
                lam=float(meta["lambda"]) if meta["lambda"] else None,
                dropout_p=float(meta["dropout_p"]) if meta["dropout_p"] else None,
                recipe=recipe,
            )
            fit_stats = FitStats(
                fit_seconds=float(meta["fit_seconds"]),
                residual=float(meta["residual"]) if meta["residual"] else None,
                users=int(meta["m"]),
                interactions=int(meta["nnz"]),
            )
            n = int(meta["n"])
        except ModelFormatError:
            raise
        except (KeyError, ValueError) as e:
            raise ModelFormatError(f"{meta_path}: invalid model metadata ({e})") from e

        items = pd.read_csv(items_path, sep="\t", header=None, names=["id", "index", "degree"],
                            dtype={"id": str}, keep_default_na=False, na_values=[])
        if weights.shape != (n, n) or len(items) != n:
            raise ModelFormatError(f"{path}: weights {weights.shape} and {len(items)} items do not match n={n}")
        if config.model == ModelKind.EASE and n and float(np.abs(np.diag(weights)).max()) > 1e-12:
            raise ModelFormatError(f"{path}: EASE weights have a non-zero diagonal")
        return ItemModel(
            weights=weights,
            config=config,
            item_ids=items["id"].astype(str).tolist(),
            item_degrees=items["degree"].to_numpy(dtype=np.int64),
            fit_stats=fit_stats,
            dataset_hash=meta["dataset_hash"] or None,
        )
