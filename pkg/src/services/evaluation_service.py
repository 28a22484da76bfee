import math
from collections import defaultdict
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from src.core.errors import ContractError
from src.core.logging import logger
from src.schemas.evaluation import EvalConfig, EvalReport, EvalSlice, Metric, MetricRow
from src.schemas.interactions import EvalSplit, SplitBundle
from src.schemas.models import ItemModel
from src.services.model_service import MASK_SENTINEL, ModelService

ScoreBatches = Iterable[Tuple[int, np.ndarray]]


class EvaluationService:
    """Top-K ranking metrics over AOA, head/tail, unbiased and user-activity slices"""

    @staticmethod
    def top_fraction_mask(values: np.ndarray, fraction: float) -> np.ndarray:
        """
        Boolean mask of the top `fraction` entries by value (at least one when non-empty).

        Ties are broken by ascending index.
        """
        values = np.asarray(values, dtype=np.float64)
        n = values.size
        mask = np.zeros(n, dtype=bool)
        if n == 0:
            return mask
        n_top = min(n, max(1, int(math.floor(fraction * n + 0.5))))
        order = np.lexsort((np.arange(n), -values))
        mask[order[:n_top]] = True
        return mask

    @staticmethod
    def propensities(item_degrees: np.ndarray, gamma: float) -> np.ndarray:
        """
        Power-law propensity (d_i / max d) ** ((gamma + 1) / 2).

        Raises:
            ContractError: If an item has zero popularity
        """
        d = np.asarray(item_degrees, dtype=np.float64)
        if d.size == 0 or np.any(d <= 0):
            raise ContractError("propensities need every item popularity >= 1")
        return np.power(d / d.max(), (gamma + 1.0) / 2.0)

    @staticmethod
    def rank_topk(scores: np.ndarray, k: int) -> np.ndarray:
        """
        Indices of the k largest scores, ties by ascending index; masked items are dropped.

        Raises:
            ContractError: If k is not in [1, n]
        """
        scores = np.asarray(scores, dtype=np.float64)
        if k < 1 or k > scores.size:
            raise ContractError(f"K={k} must be in [1, {scores.size}]")
        order = np.argsort(-scores, kind="stable")[:k]
        return order[scores[order] > MASK_SENTINEL]

    @staticmethod
    def recall_ndcg(
        topk: Sequence[int],
        ground_truth: Sequence[int],
        k: int,
        gains: Optional[np.ndarray] = None,
    ) -> Tuple[float, float]:
        """
        Recall@K (truncated: denominator min(K, |G|)) and NDCG@K.

        Args:
            topk: Ranked item indices (only the first k are used)
            ground_truth: Relevant item indices
            k: Cut-off
            gains: Optional per-item gain vector (indexed by item); binary gains when None

        Raises:
            ContractError: Empty ground truth
        """
        truth = np.unique(np.asarray(ground_truth, dtype=np.int64))
        if truth.size == 0:
            raise ContractError("ground truth is empty; exclude the user before scoring")
        ranked = np.asarray(topk, dtype=np.int64)[:k]
        truth_gain = np.ones(truth.size) if gains is None else np.asarray(gains, dtype=np.float64)[truth]

        hit = np.isin(ranked, truth)
        hit_gain = np.ones(int(hit.sum())) if gains is None else np.asarray(gains, dtype=np.float64)[ranked[hit]]
        discounts = 1.0 / np.log2(np.arange(2, k + 2))

        cut = min(k, truth.size)
        ideal = np.sort(truth_gain)[::-1][:cut]
        recall = float(hit_gain.sum() / ideal.sum())
        dcg = float(np.sum(hit_gain * discounts[:ranked.size][hit]))
        idcg = float(np.sum(ideal * discounts[:cut]))
        return min(recall, 1.0), min(dcg / idcg, 1.0)

    @staticmethod
    def evaluate(
        model: ItemModel,
        bundle: SplitBundle,
        cfg: Optional[EvalConfig] = None,
        split: str = "test",
        popularity: Optional[np.ndarray] = None,
    ) -> EvalReport:
        """
        Evaluate a fitted model on the validation or test split of a bundle.

        Args:
            model: Fitted model over the bundle's item vocabulary
            bundle: Split bundle
            cfg: Evaluation settings
            split: "test" or "validation"
            popularity: Item popularity for slicing; defaults to the bundle's training degrees

        Raises:
            ContractError: Item spaces differ, or the split is missing or has no evaluable users
        """
        if model.item_ids != bundle.train.item_ids:
            raise ContractError("model item vocabulary does not match the bundle")
        cfg = cfg or EvalConfig()
        target = EvaluationService.pick_split(bundle, split)
        batches = ModelService.iter_score_batches(model.weights, target.foldin.matrix, cfg.mask_seen)
        pop = bundle.train.item_degrees if popularity is None else popularity
        return EvaluationService.evaluate_scores(batches, target, pop, cfg)

    @staticmethod
    def evaluate_popularity(
        bundle: SplitBundle,
        cfg: Optional[EvalConfig] = None,
        split: str = "test",
    ) -> EvalReport:
        """Evaluate the most-popular baseline (training popularity)"""
        cfg = cfg or EvalConfig()
        target = EvaluationService.pick_split(bundle, split)
        scores = ModelService.popularity_scores(bundle.train, target.foldin.matrix, cfg.mask_seen)
        return EvaluationService.evaluate_scores([(0, scores)], target, bundle.train.item_degrees, cfg)

    @staticmethod
    def pick_split(bundle: SplitBundle, split: str) -> EvalSplit:
        if split == "test":
            return bundle.test
        if split == "validation":
            if bundle.validation is None:
                raise ContractError("bundle has no validation split")
            return bundle.validation
        raise ContractError(f"unknown split '{split}'")

    @staticmethod
    def evaluate_scores(
        batches: ScoreBatches,
        target: EvalSplit,
        popularity: np.ndarray,
        cfg: EvalConfig,
    ) -> EvalReport:
        """
        Reduce score blocks into slice averages.

        Args:
            batches: (first user row, score block) pairs covering the split's users in order
            target: Fold-in / held-out split the scores belong to
            popularity: Training popularity per item
            cfg: Evaluation settings

        Returns:
            EvalReport with one row per (slice, metric, K) that has at least one user
        """
        n = target.heldout.cols
        if target.users == 0:
            raise ContractError("evaluation split has no users")
        popularity = np.asarray(popularity)
        head = EvaluationService.top_fraction_mask(popularity, cfg.head_fraction)
        gains = 1.0 / EvaluationService.propensities(popularity, cfg.unbiased_gamma)
        active = EvaluationService.top_fraction_mask(target.foldin.user_degrees, cfg.active_fraction)
        k_list = sorted({min(k, n) for k in cfg.k_list})
        k_max = max(k_list)

        sums: Dict[Tuple[EvalSlice, Metric, int], float] = defaultdict(float)
        counts: Dict[EvalSlice, int] = defaultdict(int)
        skipped: Dict[str, int] = defaultdict(int)

        for start, block in batches:
            for offset in range(block.shape[0]):
                u = start + offset
                truth = target.heldout.user_items(u)
                if truth.size == 0:
                    skipped[EvalSlice.AOA.value] += 1
                    continue
                ranked = EvaluationService.rank_topk(block[offset], k_max)
                slices = EvaluationService._user_slices(truth, head, active[u], gains)
                for slice_, (slice_truth, slice_gains) in slices.items():
                    if slice_truth.size == 0:
                        skipped[slice_.value] += 1
                        continue
                    counts[slice_] += 1
                    for k in k_list:
                        recall, ndcg = EvaluationService.recall_ndcg(ranked, slice_truth, k, slice_gains)
                        sums[(slice_, Metric.RECALL, k)] += recall
                        sums[(slice_, Metric.NDCG, k)] += ndcg

        if counts[EvalSlice.AOA] == 0:
            raise ContractError("no evaluable users (every held-out set is empty)")

        rows: List[MetricRow] = []
        for slice_ in EvalSlice:
            if counts[slice_] == 0:
                continue
            for metric in Metric:
                for k in k_list:
                    rows.append(MetricRow(
                        slice=slice_,
                        metric=metric,
                        k=k,
                        value=min(1.0, sums[(slice_, metric, k)] / counts[slice_]),
                        n_users=counts[slice_],
                    ))
        if skipped:
            logger.debug("Skipped users per slice: %s", dict(skipped))
        return EvalReport(rows=rows, skipped=dict(skipped))

    @staticmethod
    def _user_slices(truth, head, is_active, gains):
        slices = {
            EvalSlice.AOA: (truth, None),
            EvalSlice.HEAD: (truth[head[truth]], None),
            EvalSlice.TAIL: (truth[~head[truth]], None),
            EvalSlice.UNBIASED: (truth, gains),
        }
        if is_active:
            slices[EvalSlice.ACTIVE] = (truth, None)
        else:
            slices[EvalSlice.INACTIVE] = (truth, None)
        return slices

    @staticmethod
    def format_summary(report: EvalReport, title: str = "") -> str:
        """Fixed-width summary table (one line per slice, one column per metric@K)"""
        columns = sorted({(row.metric, row.k) for row in report.rows}, key=lambda c: (c[1], c[0].value))
        header = ["slice", "users"] + [f"{metric.value}@{k}" for metric, k in columns]
        lines = [title] if title else []
        lines.append("  ".join(f"{h:>10}" for h in header))
        for slice_ in EvalSlice:
            slice_rows = [row for row in report.rows if row.slice == slice_]
            if not slice_rows:
                continue
            values = {(row.metric, row.k): row.value for row in slice_rows}
            cells = [slice_.value, str(slice_rows[0].n_users)] + [f"{values[c]:.4f}" for c in columns]
            lines.append("  ".join(f"{c:>10}" for c in cells))
        return "\n".join(lines)
